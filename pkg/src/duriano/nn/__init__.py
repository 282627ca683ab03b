from .tensor import Tensor, no_grad, ShapeError
from .layers import (
    BatchNorm,
    BiGRU,
    CBHG,
    Conv1d,
    Conv1dBank,
    Embedding,
    GRU,
    Highway,
    Linear,
    Module,
    Prenet,
    embedding_lookup,
    fully_connected,
    gru_cell,
)
from .gradcheck import gradient_check, numerical_gradient
