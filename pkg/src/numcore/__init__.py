"""
Minimal dense-tensor numeric core with reverse-mode automatic differentiation.

- Tensor / Parameter: float64 arrays with gradient buffers and freeze flags
- Graph / backward: topological replay of recorded primitives
- functional: matmul, layer_norm, relu, softmax, embedding lookup, losses, dropout
- Adam: bias-corrected optimizer that never touches frozen parameters
- grad_check: central-difference oracle used by the test-suite
"""

from .tensor import ContractError, Graph, Parameter, ShapeError, Tensor, backward
from .functional import EmptyBatchError
from .optim import Adam, AdamState, adam_step
from .gradcheck import grad_check
from . import functional

__all__ = [
    'Tensor',
    'Parameter',
    'Graph',
    'backward',
    'functional',
    'Adam',
    'AdamState',
    'adam_step',
    'grad_check',
    'ShapeError',
    'ContractError',
    'EmptyBatchError',
]
