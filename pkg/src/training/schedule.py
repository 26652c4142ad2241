"""Learning-rate schedule and early stopping."""

import math
from dataclasses import dataclass, replace


def lr_at_step(cfg, step: int) -> float:
    """Linear warmup to cfg.max_lr, then max_lr * sqrt(warmup / step).

    With zero warmup updates the rate is max_lr from the first update on.
    """
    if step < 0:
        raise ValueError(f"step must be >= 0 (got {step})")
    if step == 0:
        return 0.0
    warmup = cfg.warmup_updates
    if warmup == 0:
        return cfg.max_lr
    if step <= warmup:
        return cfg.max_lr * step / warmup
    return cfg.max_lr * math.sqrt(warmup / step)


@dataclass(frozen=True)
class EarlyStopState:
    """Lower metric is better. Ties do not count as improvements."""

    patience: int
    best: float = math.inf
    since_improvement: int = 0
    stopped: bool = False

    def to_dict(self):
        return {"patience": self.patience, "best": self.best,
                "since_improvement": self.since_improvement, "stopped": self.stopped}


def early_stop_update(state: EarlyStopState, metric: float) -> EarlyStopState:
    if metric < state.best:
        return replace(state, best=metric, since_improvement=0, stopped=False)
    since = state.since_improvement + 1
    return replace(state, since_improvement=since, stopped=state.stopped or since > state.patience)
