"""
Bottleneck adapters: LN -> down-projection -> ReLU -> up-projection -> residual.

A freshly initialized adapter has a zero up-projection and zero biases, so it
is exactly the identity map until trained.
"""

import logging
from dataclasses import asdict, dataclass
from typing import Dict, List

import numpy as np

from numcore import Parameter, Tensor
from numcore import functional as F

from .errors import ConfigError

logger = logging.getLogger(__name__)

PLACEMENTS = ("after_ff", "before_ff", "embedding")


@dataclass(frozen=True)
class AdapterConfig:
    model_dim: int
    bottleneck: int
    init_scale: float = 1e-2
    placement: str = "after_ff"

    def validate(self) -> None:
        violations = []
        if self.model_dim < 1:
            violations.append(f"model_dim must be >= 1 (got {self.model_dim})")
        if self.bottleneck < 1:
            violations.append(f"bottleneck must be >= 1 (got {self.bottleneck})")
        if self.init_scale < 0:
            violations.append(f"init_scale must be >= 0 (got {self.init_scale})")
        if self.placement not in PLACEMENTS:
            violations.append(f"placement must be one of {PLACEMENTS} (got {self.placement!r})")
        if violations:
            raise ConfigError(violations)

    def to_dict(self) -> Dict:
        return asdict(self)


class AdapterLayer:
    """Six trainable parameters of one bottleneck adapter."""

    def __init__(
        self,
        name: str,
        ln_scale: np.ndarray,
        ln_offset: np.ndarray,
        down: np.ndarray,
        down_bias: np.ndarray,
        up: np.ndarray,
        up_bias: np.ndarray,
    ):
        self.name = name
        self.ln_scale = Parameter(ln_scale, f"{name}.ln_scale")
        self.ln_offset = Parameter(ln_offset, f"{name}.ln_offset")
        self.down = Parameter(down, f"{name}.down")
        self.down_bias = Parameter(down_bias, f"{name}.down_bias")
        self.up = Parameter(up, f"{name}.up")
        self.up_bias = Parameter(up_bias, f"{name}.up_bias")

    @property
    def model_dim(self) -> int:
        return self.down.shape[0]

    @property
    def bottleneck(self) -> int:
        return self.down.shape[1]

    def parameters(self) -> List[Parameter]:
        return [self.ln_scale, self.ln_offset, self.down, self.down_bias, self.up, self.up_bias]

    def __call__(self, z: Tensor) -> Tensor:
        return adapter_forward(self, z)


def adapter_forward(layer: AdapterLayer, z: Tensor) -> Tensor:
    """U . ReLU(D . LN(z) + b_d) + b_u + z, applied per position."""
    normed = F.layer_norm(z, layer.ln_scale, layer.ln_offset)
    hidden = F.relu(F.add(F.matmul(normed, layer.down), layer.down_bias))
    return F.add(F.add(F.matmul(hidden, layer.up), layer.up_bias), z)


def adapter_init(cfg: AdapterConfig, rng: np.random.Generator, name: str = "adapter") -> AdapterLayer:
    cfg.validate()
    h, d = cfg.model_dim, cfg.bottleneck
    down = rng.uniform(-cfg.init_scale, cfg.init_scale, size=(h, d)) if cfg.init_scale > 0 else np.zeros((h, d))
    return AdapterLayer(
        name=name,
        ln_scale=np.ones(h),
        ln_offset=np.zeros(h),
        down=down,
        down_bias=np.zeros(d),
        up=np.zeros((d, h)),
        up_bias=np.zeros(h),
    )


def adapter_param_count(cfg: AdapterConfig) -> int:
    cfg.validate()
    h, d = cfg.model_dim, cfg.bottleneck
    return 2 * h + 2 * h * d + d + h
