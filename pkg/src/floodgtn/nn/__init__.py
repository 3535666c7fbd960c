"""Differentiable numerical core: tensors, layers, optimizer, gradient checks."""

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .gradcheck import GradientCheckError, gradient_check
from .layers import (
    LSTM,
    Conv1d,
    GCNLayer,
    LayerNorm,
    Linear,
    LSTMCell,
    RNN,
    Module,
    ModelParams,
    MultiHeadAttention,
    TransformerEncoder,
    TransformerEncoderBlock,
    gcn_layer,
    lstm_cell,
    positional_encoding,
)
from .optim import Adam, clip_grad_norm
from .tensor import (
    ShapeError,
    Tensor,
    concat,
    dropout,
    layer_norm,
    matmul,
    max_over,
    mse,
    no_grad,
    relu,
    sigmoid,
    softmax,
    stack,
    tanh,
)
