"""Dense float64 tensors with finiteness enforcement."""

import numpy as np


class NumericError(ValueError):
    """A public operation produced NaN/Inf."""


class ShapeError(ValueError):
    """Operands have incompatible shapes."""


class Tensor:
    """Immutable row-major float64 array; all values finite by construction."""

    __slots__ = ("data",)

    def __init__(self, data):
        arr = np.ascontiguousarray(data, dtype=np.float64)
        if not np.isfinite(arr).all():
            raise NumericError("tensor contains non-finite values")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def copy(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self):
        return f"Tensor(shape={self.shape})"

    def __eq__(self, other):
        return isinstance(other, Tensor) and np.array_equal(self.data, other.data)

    def __hash__(self):
        return hash((self.shape, self.data.tobytes()))


def as_array(x) -> np.ndarray:
    """Coerce Tensor / ndarray / nested lists to a float64 ndarray."""
    if isinstance(x, Tensor):
        return x.data
    return np.asarray(x, dtype=np.float64)
