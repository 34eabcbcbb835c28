"""Named deterministic RNG streams.

Every source of randomness in the simulator is a stream addressed by
(root seed, *string tokens).  Streams are independent of each other and of
execution order, so parallel and sequential runs draw identical values.
"""

import hashlib

import numpy as np


def derive(seed: int, *tokens) -> np.random.Generator:
    """Return a Generator for the stream named by `tokens` under `seed`."""
    label = "/".join(str(t) for t in tokens)
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    words = [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, *words])
    return np.random.Generator(np.random.PCG64(ss))


def sub_seed(seed: int, *tokens) -> int:
    """A derived integer seed, for components that take a seed rather than a stream."""
    label = "/".join(str(t) for t in tokens)
    digest = hashlib.sha256(f"{int(seed)}::{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") % (2**63)
