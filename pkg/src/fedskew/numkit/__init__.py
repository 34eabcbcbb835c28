from .autograd import (
    ContractError,
    GradNode,
    add,
    backward,
    concat_last,
    const,
    conv1d_valid,
    dropout,
    embedding_lookup,
    gelu,
    layernorm,
    leaf,
    masked_mean_pool,
    matmul,
    max_over_time,
    mul,
    relu,
    reshape,
    scale,
    scaled_dot_attention,
    softmax,
    softmax_cross_entropy,
    ssum,
    sub,
    transpose,
    transpose_last2,
)
from .optim import OptimizerState, adamw_step, sgd_step, step
from .rng import derive, sub_seed
from .tensor import NumericError, ShapeError, Tensor, as_array
