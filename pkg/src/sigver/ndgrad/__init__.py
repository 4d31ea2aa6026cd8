"""Reverse-mode automatic differentiation on numpy arrays.

The engine is define-by-run: every operation on :class:`Tensor` records its
inputs and a backward closure, and ``Tensor.backward()`` walks the recorded
graph in reverse topological order.  Only the primitives needed by the
signature network are implemented, each with an analytic backward rule.
"""

from .tensor import Tensor, no_grad, concat
from .nnops import (
    conv2d,
    maxpool2d,
    batchnorm2d,
    gap,
    linear,
    elementwise_mul,
    l2_normalize,
    sq_euclidean,
    log1p_sum_exp,
    DegenerateVectorError,
)
from .optim import ParameterStore, AdamConfig, adam_update, learning_rate
from .gradcheck import grad_check, numerical_gradient, GradCheckResult
from .container import save_tensors, load_tensors

__all__ = [
    "Tensor",
    "no_grad",
    "concat",
    "conv2d",
    "maxpool2d",
    "batchnorm2d",
    "gap",
    "linear",
    "elementwise_mul",
    "l2_normalize",
    "sq_euclidean",
    "log1p_sum_exp",
    "DegenerateVectorError",
    "ParameterStore",
    "AdamConfig",
    "adam_update",
    "learning_rate",
    "grad_check",
    "numerical_gradient",
    "GradCheckResult",
    "save_tensors",
    "load_tensors",
]
