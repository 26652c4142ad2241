"""Trainable-parameter accounting for an adapter grouping."""

from dataclasses import asdict, dataclass
from typing import Dict

from seq2seq import AdapterConfig, ModelConfig, adapter_param_count

from .registry import GroupingScheme


@dataclass(frozen=True)
class BudgetReport:
    regime: str
    groups: int
    per_set: int
    total: int
    backbone_total: int

    @property
    def trainable_fraction(self) -> float:
        return self.total / self.backbone_total if self.backbone_total else 0.0

    def to_dict(self) -> Dict:
        row = asdict(self)
        row["trainable_fraction"] = self.trainable_fraction
        return row


def backbone_param_count(cfg: ModelConfig) -> int:
    """Closed-form size of the transformer backbone (tied output embedding)."""
    h, ff = cfg.model_dim, cfg.ff_dim
    attention = 4 * (h * h + h)
    layer_norm = 2 * h
    feed_forward = h * ff + ff + ff * h + h
    encoder_layer = attention + feed_forward + 2 * layer_norm
    decoder_layer = 2 * attention + feed_forward + 3 * layer_norm
    return (
        cfg.vocab_size * h
        + cfg.enc_layers * encoder_layer
        + cfg.dec_layers * decoder_layer
        + 2 * layer_norm
    )


def adapter_set_param_count(model_cfg: ModelConfig, adapter_cfg: AdapterConfig) -> int:
    per_adapter = adapter_param_count(adapter_cfg)
    count = (model_cfg.enc_layers + model_cfg.dec_layers) * per_adapter
    if model_cfg.use_embedding_adapters:
        count += 2 * per_adapter
    return count


def budget_report(
    model_cfg: ModelConfig,
    adapter_cfg: AdapterConfig,
    scheme: GroupingScheme,
    full_finetune: bool = False,
) -> BudgetReport:
    """Trainable parameters of a regime.

    Adapter regimes train one adapter set per group. Full fine-tuning trains
    the whole backbone once and has no adapters.
    """
    backbone = backbone_param_count(model_cfg)
    if full_finetune:
        return BudgetReport("full_ft", 1, backbone, backbone, backbone)
    per_set = adapter_set_param_count(model_cfg, adapter_cfg)
    return BudgetReport(scheme.kind, len(scheme), per_set, per_set * len(scheme), backbone)
