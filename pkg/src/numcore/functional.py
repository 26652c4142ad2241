"""
Differentiable primitives over numcore Tensors.

Each primitive computes its forward value with numpy and, when any input
requires gradients, records a closure that maps the output gradient to
input-gradient contributions.
"""

from typing import Optional, Sequence, Tuple, Union

import numpy as np

from .tensor import ContractError, ShapeError, Tensor

ArrayLike = Union[Tensor, np.ndarray, float, int]


class EmptyBatchError(ValueError):
    """Raised when every target position of a loss is padding."""
    pass


def as_tensor(x: ArrayLike) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to an operand's shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _result(data: np.ndarray, parents: Sequence[Tensor], backward, op: str) -> Tensor:
    if any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, parents=parents, backward=backward, op=op)
    return Tensor(data, op=op)


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


# ---------------------------------------------------------------------------
# Elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)

    def _backward(g: np.ndarray) -> None:
        if a.requires_grad:
            a.accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g, b.shape))

    return _result(a.data + b.data, (a, b), _backward, "add")


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)

    def _backward(g: np.ndarray) -> None:
        if a.requires_grad:
            a.accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(-g, b.shape))

    return _result(a.data - b.data, (a, b), _backward, "sub")


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)

    def _backward(g: np.ndarray) -> None:
        if a.requires_grad:
            a.accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g * a.data, b.shape))

    return _result(a.data * b.data, (a, b), _backward, "mul")


# ---------------------------------------------------------------------------
# Linear algebra and shape manipulation
# ---------------------------------------------------------------------------

def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    """Matrix product over the last two axes; leading axes are batch axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", a.shape, b.shape)
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError("matmul", a.shape, b.shape) from None

    def _backward(g: np.ndarray) -> None:
        if a.requires_grad:
            a.accumulate(_unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    return _result(a.data @ b.data, (a, b), _backward, "matmul")


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def _backward(g: np.ndarray) -> None:
        x.accumulate(np.transpose(g, inverse))

    return _result(np.transpose(x.data, axes), (x,), _backward, "transpose")


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    original = x.shape

    def _backward(g: np.ndarray) -> None:
        x.accumulate(g.reshape(original))

    return _result(x.data.reshape(tuple(shape)), (x,), _backward, "reshape")


def sum(x: Tensor, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    def _backward(g: np.ndarray) -> None:
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        x.accumulate(np.broadcast_to(g, x.shape).copy())

    return _result(np.sum(x.data, axis=axis, keepdims=keepdims), (x,), _backward, "sum")


def mean(x: Tensor, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    count = x.size if axis is None else x.shape[axis]
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / max(count, 1))


# ---------------------------------------------------------------------------
# Nonlinearities and normalization
# ---------------------------------------------------------------------------

def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def _backward(g: np.ndarray) -> None:
        x.accumulate(g * mask)

    return _result(np.where(mask, x.data, 0.0), (x,), _backward, "relu")


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis with max subtraction."""
    shifted = x.data - np.max(x.data, axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / np.sum(e, axis=-1, keepdims=True)

    def _backward(g: np.ndarray) -> None:
        x.accumulate(y * (g - np.sum(g * y, axis=-1, keepdims=True)))

    return _result(y, (x,), _backward, "softmax")


def log_softmax(x: Tensor) -> Tensor:
    shifted = x.data - np.max(x.data, axis=-1, keepdims=True)
    logz = np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))
    y = shifted - logz

    def _backward(g: np.ndarray) -> None:
        x.accumulate(g - np.exp(y) * np.sum(g, axis=-1, keepdims=True))

    return _result(y, (x,), _backward, "log_softmax")


LAYER_NORM_EPS = 1e-5


def layer_norm(x: Tensor, scale: Tensor, offset: Tensor, eps: float = LAYER_NORM_EPS) -> Tensor:
    h = x.shape[-1]
    if scale.shape != (h,) or offset.shape != (h,):
        raise ShapeError("layer_norm", x.shape, scale.shape, offset.shape)

    mu = np.mean(x.data, axis=-1, keepdims=True)
    centered = x.data - mu
    var = np.mean(centered * centered, axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    out = xhat * scale.data + offset.data

    def _backward(g: np.ndarray) -> None:
        lead = tuple(range(g.ndim - 1))
        if scale.requires_grad:
            scale.accumulate(np.sum(g * xhat, axis=lead))
        if offset.requires_grad:
            offset.accumulate(np.sum(g, axis=lead))
        if x.requires_grad:
            gxhat = g * scale.data
            x.accumulate(
                inv_std
                * (
                    gxhat
                    - np.mean(gxhat, axis=-1, keepdims=True)
                    - xhat * np.mean(gxhat * xhat, axis=-1, keepdims=True)
                )
            )

    return _result(out, (x, scale, offset), _backward, "layer_norm")


def dropout(x: Tensor, rate: float, rng: Optional[np.random.Generator], train: bool) -> Tensor:
    """Inverted dropout. Identity when not training or rate is zero."""
    if not train or rate <= 0.0:
        return x
    if rng is None:
        raise ContractError("dropout in training mode needs a seeded generator")
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)

    def _backward(g: np.ndarray) -> None:
        x.accumulate(g * keep)

    return _result(x.data * keep, (x,), _backward, "dropout")


# ---------------------------------------------------------------------------
# Embeddings and losses
# ---------------------------------------------------------------------------

def embedding_lookup(table: Tensor, ids) -> Tensor:
    """Gather rows of `table`; output shape is ids.shape + (h,)."""
    ids = np.asarray(ids, dtype=np.int64)
    vocab, h = table.shape
    if ids.size:
        bad = ids[(ids < 0) | (ids >= vocab)]
        if bad.size:
            raise IndexError(f"embedding id {int(bad[0])} out of range [0, {vocab})")
    out = table.data[ids] if ids.size else np.zeros(ids.shape + (h,))

    def _backward(g: np.ndarray) -> None:
        contribution = np.zeros_like(table.data)
        np.add.at(contribution, ids.reshape(-1), g.reshape(-1, h))
        table.accumulate(contribution)

    return _result(out, (table,), _backward, "embedding")


def _check_targets(logits: Tensor, targets) -> np.ndarray:
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    if logits.ndim != 2 or logits.shape[0] != targets.shape[0]:
        raise ShapeError("nll", logits.shape, targets.shape)
    vocab = logits.shape[1]
    bad = targets[(targets < 0) | (targets >= vocab)]
    if bad.size:
        raise IndexError(f"target id {int(bad[0])} out of range [0, {vocab})")
    return targets


def label_smoothed_nll(
    logits: Tensor,
    targets,
    epsilon: float,
    pad_id: int,
    reduction: str = "mean",
) -> Tensor:
    """Label-smoothed negative log-likelihood over non-pad rows.

    q(target) = 1 - epsilon + epsilon/V and q(other) = epsilon/V. With
    reduction="sum" the caller normalizes (used for gradient accumulation).
    """
    if reduction not in ("mean", "sum"):
        raise ValueError(f"unknown reduction {reduction!r}")
    if not 0.0 <= epsilon < 1.0:
        raise ValueError(f"label smoothing epsilon must be in [0, 1), got {epsilon}")
    targets = _check_targets(logits, targets)
    n, vocab = logits.shape
    mask = targets != pad_id
    count = int(mask.sum())
    if count == 0:
        raise EmptyBatchError("every target position is padding")

    shifted = logits.data - np.max(logits.data, axis=-1, keepdims=True)
    logz = np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))
    logp = shifted - logz

    q = np.full((n, vocab), epsilon / vocab)
    q[np.arange(n), targets] += 1.0 - epsilon
    per_row = -np.sum(q * logp, axis=-1) * mask
    total = float(np.sum(per_row))
    weight = 1.0 / count if reduction == "mean" else 1.0

    def _backward(g: np.ndarray) -> None:
        p = np.exp(logp)
        logits.accumulate(float(g) * weight * (p - q) * mask[:, None])

    return _result(np.array(total * weight), (logits,), _backward, "label_smoothed_nll")


def nll_sum(logits: Tensor, targets, pad_id: int) -> Tuple[float, int]:
    """Unsmoothed summed cross-entropy and non-pad token count (no graph)."""
    targets = _check_targets(logits, targets)
    mask = targets != pad_id
    shifted = logits.data - np.max(logits.data, axis=-1, keepdims=True)
    logp = shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))
    picked = logp[np.arange(targets.shape[0]), targets]
    return float(-np.sum(picked[mask])), int(mask.sum())
