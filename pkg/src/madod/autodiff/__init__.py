from .gradcheck import max_abs_error, max_relative_error, numerical_grad
from .optim import Optimizer, adam, sgd
from .tensor import *  # noqa: F401,F403
from .tensor import __all__ as _tensor_all

__all__ = list(_tensor_all) + [
    "Optimizer",
    "adam",
    "sgd",
    "numerical_grad",
    "max_relative_error",
    "max_abs_error",
]
