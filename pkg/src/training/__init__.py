"""
Training loop for adapter regimes.

- TrainConfig / GroupTrainer / train_regime: per-group adapter training
- lr_at_step / EarlyStopState: schedule and patience
- Checkpoint: versioned binary container with integrity checks
- TrainingLog: append-only TSV log per group
- denoise_warmup: backbone warm-up before freezing
"""

from .schedule import EarlyStopState, early_stop_update, lr_at_step
from .checkpoint import (
    Checkpoint,
    CheckpointIntegrityError,
    FingerprintMismatchError,
    checkpoint_load,
    checkpoint_save,
    parameter_hash,
)
from .tracker import TrainingLog
from .trainer import (
    GroupTrainer,
    TrainConfig,
    TrainingCoverageError,
    accumulate_gradients,
    group_languages,
    model_for_checkpoint,
    train_regime,
    validate_perplexity,
)
from .warmup import add_noise, denoise_warmup

__all__ = [
    'TrainConfig',
    'GroupTrainer',
    'Checkpoint',
    'EarlyStopState',
    'TrainingLog',
    'lr_at_step',
    'early_stop_update',
    'checkpoint_save',
    'checkpoint_load',
    'parameter_hash',
    'train_regime',
    'validate_perplexity',
    'accumulate_gradients',
    'model_for_checkpoint',
    'group_languages',
    'denoise_warmup',
    'add_noise',
    'CheckpointIntegrityError',
    'FingerprintMismatchError',
    'TrainingCoverageError',
]
