"""Minimal tensor engine: reverse-mode differentiation, layers, Adam, checkpoints."""

from .checkpoint import CheckpointError
from .nn import BatchNorm, Embedding, Identity, Linear, MLP, Module, uniform_init
from .optim import AdamState, adam_step
from .tensor import (
    ContractError,
    ShapeError,
    Tape,
    Tensor,
    activation,
    add,
    backward,
    batch_norm,
    concat,
    cross_entropy,
    getitem,
    leaky_relu,
    linear,
    log_softmax_np,
    masked_row_softmax,
    matmul,
    mul,
    relu,
    reshape,
    sigmoid,
    softmax_np,
    stack,
    sub,
    swapaxes,
    take,
    tanh,
    tmean,
    tsum,
)
