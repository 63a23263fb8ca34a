from .nn import MLP, BatchNorm, LayerNorm, Linear, Module, ModuleList
from .optim import Adam
from .tensor import NumericError, Tape, Tensor

__all__ = ["Adam", "BatchNorm", "LayerNorm", "Linear", "MLP", "Module", "ModuleList", "NumericError", "Tape", "Tensor"]
