"""Small reverse-mode differentiation engine over numpy arrays."""

from .tensor import Tensor, concat, complex_mul, log2_1p, no_grad, stack_last
from .nn import Dense, Parameter, uniform_init
from .optim import SGD, Adam

__all__ = ["Tensor", "concat", "complex_mul", "log2_1p", "no_grad", "stack_last", "Dense",
           "Parameter", "uniform_init", "SGD", "Adam"]
