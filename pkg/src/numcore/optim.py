"""Adam with bias correction and decoupled weight decay."""

from dataclasses import dataclass, field
from typing import Dict, Iterable

import numpy as np

from .tensor import Parameter


@dataclass
class AdamState:
    """Per-parameter first/second moments keyed by parameter name."""

    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: Iterable[Parameter],
    lr: float,
    state: AdamState,
    beta1: float = 0.9,
    beta2: float = 0.98,
    eps: float = 1e-8,
    weight_decay: float = 0.0,
) -> None:
    """Apply one Adam update to every non-frozen parameter holding a gradient.

    Frozen parameters are skipped without touching their data, so they stay
    bit-identical however many steps run.
    """
    state.step += 1
    t = state.step
    correction1 = 1.0 - beta1 ** t
    correction2 = 1.0 - beta2 ** t

    for p in params:
        if p.frozen or p.grad is None:
            continue
        g = p.grad
        m = state.m.get(p.name)
        if m is None:
            m = state.m[p.name] = np.zeros_like(p.data)
            state.v[p.name] = np.zeros_like(p.data)
        v = state.v[p.name]

        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g

        update = (m / correction1) / (np.sqrt(v / correction2) + eps)
        if weight_decay:
            update = update + weight_decay * p.data
        if p.update_mask is not None:
            update = update * p.update_mask.reshape((-1,) + (1,) * (p.ndim - 1))
        p.data -= lr * update


class Adam:
    """Stateful wrapper around adam_step bound to a fixed parameter list."""

    def __init__(
        self,
        params: Iterable[Parameter],
        beta1: float = 0.9,
        beta2: float = 0.98,
        eps: float = 1e-8,
        weight_decay: float = 0.0,
    ):
        self.params = list(params)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.state = AdamState()

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self, lr: float) -> None:
        adam_step(
            self.params,
            lr,
            self.state,
            beta1=self.beta1,
            beta2=self.beta2,
            eps=self.eps,
            weight_decay=self.weight_decay,
        )
