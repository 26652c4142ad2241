"""
Sequence-to-sequence transformer with bottleneck adapters.

- AdapterConfig / AdapterLayer: LN -> down -> ReLU -> up -> residual units
- ModelConfig / Seq2SeqModel: pre-norm encoder-decoder with adapter slots
- AdapterSet: one adapter per slot, swapped in per language group
- greedy_decode / beam_search: inference over an attached adapter set
"""

from .errors import ConfigError, CoverageError, SequenceLengthError
from .adapter import AdapterConfig, AdapterLayer, adapter_forward, adapter_init, adapter_param_count
from .model import (
    AdapterSet,
    ModelConfig,
    Seq2SeqModel,
    adapter_slots,
    attach_adapter_set,
    build_model,
    detach_adapters,
    freeze_backbone,
    unfreeze_backbone,
)
from .decoding import Hypothesis, beam_search, greedy_decode, sequence_logprob

__all__ = [
    'AdapterConfig',
    'AdapterLayer',
    'AdapterSet',
    'ModelConfig',
    'Seq2SeqModel',
    'Hypothesis',
    'adapter_forward',
    'adapter_init',
    'adapter_param_count',
    'adapter_slots',
    'attach_adapter_set',
    'detach_adapters',
    'build_model',
    'freeze_backbone',
    'unfreeze_backbone',
    'greedy_decode',
    'beam_search',
    'sequence_logprob',
    'ConfigError',
    'CoverageError',
    'SequenceLengthError',
]
