"""
Dense float64 tensors with reverse-mode automatic differentiation.

A Tensor wraps a numpy array and remembers the primitive that produced it.
Calling backward() on a scalar loss walks the recorded Graph in reverse
topological order and accumulates gradients into every tensor that
requires them.
"""

from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible for a primitive."""

    def __init__(self, op: str, *shapes: Tuple[int, ...]):
        self.op = op
        self.shapes = shapes
        rendered = " vs ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {rendered}")


class ContractError(RuntimeError):
    """Raised when a caller violates an autodiff contract (e.g. non-scalar loss)."""
    pass


BackwardFn = Callable[[np.ndarray], None]


class Tensor:
    """Row-major float64 array with an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op", "__weakref__")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        parents: Sequence["Tensor"] = (),
        backward: Optional[BackwardFn] = None,
        op: str = "",
    ):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents = tuple(parents)
        self._backward = backward
        self.op = op

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate(self, contribution: np.ndarray) -> None:
        """Add a gradient contribution, allocating the buffer on first use."""
        if contribution.shape != self.data.shape:
            raise ShapeError("accumulate", contribution.shape, self.data.shape)
        if self.grad is None:
            self.grad = np.array(contribution, dtype=np.float64, copy=True)
        else:
            self.grad += contribution

    def backward(self) -> None:
        backward(self)

    # Operator sugar; the primitives live in numcore.functional.
    def __add__(self, other):
        from . import functional as F
        return F.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import functional as F
        return F.sub(self, other)

    def __rsub__(self, other):
        from . import functional as F
        return F.sub(other, self)

    def __mul__(self, other):
        from . import functional as F
        return F.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import functional as F
        return F.mul(self, -1.0)

    def __matmul__(self, other):
        from . import functional as F
        return F.matmul(self, other)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}, op={self.op or 'leaf'})"


class Parameter(Tensor):
    """A named trainable leaf. Frozen parameters never receive gradients or updates."""

    __slots__ = ("name", "_frozen", "update_mask")

    def __init__(self, data, name: str, frozen: bool = False):
        super().__init__(np.array(data, dtype=np.float64, copy=True), requires_grad=not frozen)
        self.name = name
        self._frozen = frozen
        # Optional boolean row mask; when set only those rows are ever updated.
        self.update_mask: Optional[np.ndarray] = None

    @property
    def frozen(self) -> bool:
        return self._frozen

    @frozen.setter
    def frozen(self, value: bool) -> None:
        self._frozen = bool(value)
        self.requires_grad = not self._frozen
        if self._frozen:
            self.grad = None

    def __repr__(self) -> str:
        return f"Parameter({self.name}, shape={self.shape}, frozen={self.frozen})"


class Graph:
    """Topologically ordered record of the primitives that produced a loss.

    Only tensors that require gradients are recorded; frozen parameters and
    constants are never part of the graph.
    """

    def __init__(self, nodes: List[Tensor]):
        self.nodes = nodes

    @classmethod
    def from_loss(cls, loss: Tensor) -> "Graph":
        order: List[Tensor] = []
        visited = set()
        # Iterative post-order DFS; deep models overflow the recursion limit.
        stack = [(loss, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited or not node.requires_grad:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
        return cls(order)

    def __len__(self) -> int:
        return len(self.nodes)

    def __iter__(self):
        return iter(self.nodes)


def backward(loss: Tensor, graph: Optional[Graph] = None) -> None:
    """Populate .grad of every requires_grad tensor reachable from a scalar loss.

    Leaf gradients accumulate across calls; intermediate buffers are reset so a
    second pass over the same graph contributes exactly one more copy.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    if graph is None:
        graph = Graph.from_loss(loss)

    for node in graph.nodes:
        if node._parents:
            node.grad = None
    loss.accumulate(np.ones_like(loss.data))

    for node in reversed(graph.nodes):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
