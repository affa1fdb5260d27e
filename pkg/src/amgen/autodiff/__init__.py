from .tensor import (
    ContractError,
    DimensionError,
    NumericError,
    Tensor,
    add,
    as_tensor,
    backward,
    concat,
    conv2d,
    conv3d,
    default_dtype,
    embedding,
    expand,
    group_norm,
    matmul,
    mean,
    mse_loss,
    mul,
    neg,
    permute,
    precision,
    reshape,
    silu,
    softmax,
    sub,
    sum_,
    take,
)
from .optim import Adam, adam_step
from .io import load_archive, load_tensor, save_archive, save_tensor
