from .tensor import (
    DimensionError,
    NumericError,
    Tensor,
    UsageError,
    add,
    as_tensor,
    concat,
    custom_op,
    leaky_relu,
    linear,
    matmul,
    mse,
    mul,
    no_grad,
    reshape,
    sigmoid,
    slice_last,
    softmax,
    sub,
    swap_last_axes,
    take_nodes,
    take_nodes_regular,
    take_pairs,
    tanh,
    tmean,
    tsum,
)
from .modules import GruCell, Linear, Mlp, ParamSet, gru_cell_step, mlp_forward, xavier_init
from .optim import adamw_step, clip_grad_norm
from .checkpoint import load_checkpoint, save_checkpoint
