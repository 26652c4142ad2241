"""
Per-group adapter training.

Every group of a GroupingScheme gets a fresh AdapterSet trained only on
that group's language pairs. The backbone is shared read-only between
groups, so groups can train in parallel threads. Full fine-tuning trains
the backbone itself and runs as a single group.
"""

import copy
import hashlib
import json
import logging
import zlib
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from multilingual import (
    Batch,
    BatchSampler,
    BitextCorpus,
    GroupingScheme,
    SamplingSchedule,
    Vocab,
    iterate_examples,
)
from numcore import Adam, EmptyBatchError, backward
from numcore import functional as F
from seq2seq import (
    AdapterConfig,
    AdapterSet,
    ConfigError,
    Seq2SeqModel,
    attach_adapter_set,
    detach_adapters,
    freeze_backbone,
    unfreeze_backbone,
)
from seq2seq.decoding import active_adapters
from seq2seq.model import PAD_ID, pad_sequences

from .checkpoint import Checkpoint, FingerprintMismatchError, checkpoint_load, checkpoint_save
from .schedule import EarlyStopState, early_stop_update, lr_at_step
from .tracker import TrainingLog

logger = logging.getLogger(__name__)


class TrainingCoverageError(ValueError):
    """Raised when a grouping and the available corpora disagree."""

    def __init__(self, message: str, languages: Sequence[str] = ()):
        self.languages = sorted(languages)
        super().__init__(f"{message}: {self.languages}" if self.languages else message)


@dataclass(frozen=True)
class TrainConfig:
    max_updates: int = 2000
    warmup_updates: int = 100
    max_lr: float = 1e-3
    label_smoothing: float = 0.2
    update_frequency: int = 2
    eval_interval_updates: int = 100
    patience: int = 5
    seed: int = 0
    dropout: float = 0.1
    batch_tokens: int = 256
    temperature: float = 1.5
    valid_batch_size: int = 32
    adam_beta1: float = 0.9
    adam_beta2: float = 0.98
    adam_eps: float = 1e-8
    weight_decay: float = 0.0

    def validate(self) -> None:
        violations = []
        if self.max_updates < 1:
            violations.append(f"max_updates must be >= 1 (got {self.max_updates})")
        if not 0 <= self.warmup_updates <= self.max_updates:
            violations.append(f"warmup_updates must be in [0, max_updates] (got {self.warmup_updates})")
        if self.max_lr <= 0:
            violations.append(f"max_lr must be > 0 (got {self.max_lr})")
        if not 0.0 <= self.label_smoothing < 1.0:
            violations.append(f"label_smoothing must be in [0, 1) (got {self.label_smoothing})")
        for name in ("update_frequency", "eval_interval_updates", "patience", "batch_tokens", "valid_batch_size"):
            if getattr(self, name) < 1:
                violations.append(f"{name} must be >= 1 (got {getattr(self, name)})")
        if not 0.0 <= self.dropout < 1.0:
            violations.append(f"dropout must be in [0, 1) (got {self.dropout})")
        if not self.temperature > 0:
            violations.append(f"temperature must be > 0 (got {self.temperature})")
        if violations:
            raise ConfigError(violations)

    def to_dict(self) -> Dict:
        return asdict(self)

    def fingerprint(self) -> str:
        # max_updates is left out so a finished run can be extended.
        fields = {k: v for k, v in self.to_dict().items() if k != "max_updates"}
        return hashlib.sha256(json.dumps(fields, sort_keys=True).encode("utf-8")).hexdigest()[:16]


def group_seed_sequence(seed: int, group_id: str) -> np.random.SeedSequence:
    return np.random.SeedSequence([seed, zlib.crc32(group_id.encode("utf-8"))])


def group_fingerprint(
    model: Seq2SeqModel,
    adapter_cfg: AdapterConfig,
    cfg: TrainConfig,
    group_id: str,
    pairs: Sequence[str],
    full_finetune: bool,
) -> str:
    payload = {
        "model": model.cfg.fingerprint(),
        "adapter": adapter_cfg.to_dict(),
        "train": cfg.fingerprint(),
        "group": group_id,
        "pairs": sorted(pairs),
        "full_finetune": full_finetune,
    }
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode("utf-8")).hexdigest()[:16]


# ---------------------------------------------------------------------------
# Loss, gradients and validation
# ---------------------------------------------------------------------------

def _flat_logits_and_targets(model: Seq2SeqModel, batch: Batch, train_mode: bool, rng):
    logits = model.forward_batch(batch.src, batch.tgt, batch.tags, train_mode=train_mode, rng=rng)
    b, t, v = logits.shape
    targets, _ = pad_sequences(batch.tgt, PAD_ID)
    return F.reshape(logits, (b * t, v)), targets.reshape(-1)


def accumulate_gradients(
    model: Seq2SeqModel,
    batches: Sequence[Batch],
    label_smoothing: float,
    rng: Optional[np.random.Generator] = None,
    train_mode: bool = True,
) -> float:
    """Backpropagate the token-mean loss of several micro-batches as one update.

    Each micro-batch's summed loss is divided by the token count of all
    micro-batches together, so the accumulated gradient equals that of one
    batch holding every example. Returns the loss per target token.
    """
    total_tokens = sum(b.num_target_tokens for b in batches)
    if total_tokens == 0:
        raise EmptyBatchError("update has no target tokens")
    loss_sum = 0.0
    for batch in batches:
        logits, targets = _flat_logits_and_targets(model, batch, train_mode, rng)
        loss = F.label_smoothed_nll(logits, targets, label_smoothing, PAD_ID, reduction="sum")
        backward(F.mul(loss, 1.0 / total_tokens))
        loss_sum += loss.item()
    return loss_sum / total_tokens


def validate_perplexity(
    model: Seq2SeqModel,
    adapter_set: Optional[AdapterSet],
    valid_corpora: Mapping[str, BitextCorpus],
    vocab: Vocab,
    batch_size: int = 32,
) -> float:
    """Pooled perplexity: exp(total unsmoothed cross-entropy / total target tokens)."""
    total, count = 0.0, 0
    with active_adapters(model, adapter_set):
        for pair in sorted(valid_corpora):
            corpus = valid_corpora[pair]
            tag = vocab.tag_id(corpus.tgt_lang)
            for batch in iterate_examples(corpus, batch_size, vocab.eos_id, tag):
                logits, targets = _flat_logits_and_targets(model, batch, False, None)
                nll, n = F.nll_sum(logits, targets, PAD_ID)
                total += nll
                count += n
    if count == 0:
        raise EmptyBatchError("validation set has no target tokens")
    return float(np.exp(total / count))


# ---------------------------------------------------------------------------
# One group
# ---------------------------------------------------------------------------

class GroupTrainer:
    """Trains one adapter set (or the whole backbone) on one group's pairs."""

    def __init__(
        self,
        model: Seq2SeqModel,
        group_id: str,
        train_corpora: Mapping[str, BitextCorpus],
        valid_corpora: Mapping[str, BitextCorpus],
        vocab: Vocab,
        cfg: TrainConfig,
        adapter_cfg: AdapterConfig,
        full_finetune: bool = False,
        new_rows: Sequence[int] = (),
        out_dir: Optional[Union[str, Path]] = None,
    ):
        cfg.validate()
        if cfg.dropout != model.cfg.dropout:
            raise ConfigError([f"train dropout {cfg.dropout} != model dropout {model.cfg.dropout}"])
        self.group_id = group_id
        self.cfg = cfg
        self.vocab = vocab
        self.adapter_cfg = adapter_cfg
        self.full_finetune = full_finetune
        self.train_corpora = dict(train_corpora)
        self.valid_corpora = dict(valid_corpora)
        self.pairs = sorted(self.train_corpora)
        self.new_rows = sorted(int(r) for r in new_rows)

        init_seq, sample_seq, dropout_seq = group_seed_sequence(cfg.seed, group_id).spawn(3)
        self.sample_rng = np.random.default_rng(sample_seq)
        self.dropout_rng = np.random.default_rng(dropout_seq)

        if full_finetune:
            self.model = model
            self.adapter_set = None
            detach_adapters(model)
            unfreeze_backbone(model)
        else:
            private = bool(self.new_rows) and model.cfg.train_new_embedding_rows
            self.model = model.view(private_embedding=private)
            self.adapter_set = AdapterSet.create(group_id, model.cfg, adapter_cfg, np.random.default_rng(init_seq))
            attach_adapter_set(self.model, self.adapter_set)
            freeze_backbone(self.model, self.new_rows)

        self.params = self.model.trainable_parameters()
        self.optimizer = Adam(
            self.params,
            beta1=cfg.adam_beta1,
            beta2=cfg.adam_beta2,
            eps=cfg.adam_eps,
            weight_decay=cfg.weight_decay,
        )
        schedule = SamplingSchedule.from_corpora(self.train_corpora, cfg.temperature)
        self.sampler = BatchSampler(self.train_corpora, schedule, cfg.batch_tokens, self.sample_rng, vocab)
        self.fingerprint = group_fingerprint(model, adapter_cfg, cfg, group_id, self.pairs, full_finetune)

        self.update = 0
        self.early_stop = EarlyStopState(cfg.patience)
        self.best: Optional[Checkpoint] = None
        self.last_perplexity: Optional[float] = None
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.log = TrainingLog(self.out_dir / "train_log.tsv") if self.out_dir is not None else None

    # -- state -----------------------------------------------------------------

    def snapshot(self, kind: str) -> Checkpoint:
        tensors = {p.name: p.data.copy() for p in self.params}
        for name, m in self.optimizer.state.m.items():
            tensors[f"optim.m.{name}"] = m.copy()
            tensors[f"optim.v.{name}"] = self.optimizer.state.v[name].copy()
        metadata = {
            "kind": kind,
            "group_id": self.group_id,
            "pairs": self.pairs,
            "update": self.update,
            "optimizer_step": self.optimizer.state.step,
            "perplexity": self.last_perplexity,
            "early_stop": self.early_stop.to_dict(),
            "full_finetune": self.full_finetune,
            "new_rows": self.new_rows,
            "model": self.model.cfg.to_dict(),
            "adapter": self.adapter_cfg.to_dict(),
            "train": self.cfg.to_dict(),
        }
        rng_states = {
            "sampler": self.sample_rng.bit_generator.state,
            "dropout": self.dropout_rng.bit_generator.state,
        }
        return Checkpoint(tensors, metadata, rng_states, self.fingerprint)

    def restore(self, ckpt: Checkpoint) -> None:
        """Resume from a snapshot taken by a trainer with the same fingerprint."""
        if ckpt.fingerprint != self.fingerprint:
            raise FingerprintMismatchError(self.fingerprint, ckpt.fingerprint)
        for p in self.params:
            p.data[...] = ckpt.tensors[p.name]
        state = self.optimizer.state
        state.step = int(ckpt.metadata["optimizer_step"])
        state.m = {n: v.copy() for n, v in ckpt.tensors_with_prefix("optim.m.").items()}
        state.v = {n: v.copy() for n, v in ckpt.tensors_with_prefix("optim.v.").items()}
        self.sample_rng.bit_generator.state = ckpt.rng_states["sampler"]
        self.dropout_rng.bit_generator.state = ckpt.rng_states["dropout"]
        self.update = int(ckpt.metadata["update"])
        self.last_perplexity = ckpt.metadata["perplexity"]
        # A longer run may resume a group that early-stopped on a shorter budget.
        stop = ckpt.metadata["early_stop"]
        since = int(stop["since_improvement"])
        self.early_stop = EarlyStopState(self.cfg.patience, float(stop["best"]), since, since > self.cfg.patience)

    def try_resume(self) -> bool:
        if self.out_dir is None:
            return False
        last_path = self.out_dir / "last.ckpt"
        if not last_path.exists():
            return False
        self.restore(checkpoint_load(last_path, expected_fingerprint=self.fingerprint))
        best_path = self.out_dir / "best.ckpt"
        if best_path.exists():
            self.best = checkpoint_load(best_path, expected_fingerprint=self.fingerprint)
        if self.log is not None:
            self.log.truncate_after(self.update)
        logger.info(f"[{self.group_id}] resumed at update {self.update}")
        return True

    # -- loop ------------------------------------------------------------------

    def train_update(self) -> Tuple[float, float]:
        self.update += 1
        lr = lr_at_step(self.cfg, self.update)
        batches = [self.sampler.next_batch() for _ in range(self.cfg.update_frequency)]
        self.optimizer.zero_grad()
        loss = accumulate_gradients(self.model, batches, self.cfg.label_smoothing, self.dropout_rng)
        self.optimizer.step(lr)
        return lr, loss

    def evaluate(self) -> float:
        ppl = validate_perplexity(self.model, None, self.valid_corpora, self.vocab, self.cfg.valid_batch_size)
        improved = ppl < self.early_stop.best
        self.early_stop = early_stop_update(self.early_stop, ppl)
        self.last_perplexity = ppl
        if improved:
            self.best = self.snapshot("best")
            if self.out_dir is not None:
                checkpoint_save(self.best, self.out_dir / "best.ckpt")
        if self.out_dir is not None:
            checkpoint_save(self.snapshot("last"), self.out_dir / "last.ckpt")
        logger.info(
            f"[{self.group_id}] update {self.update}: valid ppl {ppl:.3f}"
            f"{' (best)' if improved else ''}, patience {self.early_stop.since_improvement}/{self.cfg.patience}"
        )
        return ppl

    def run(self) -> Checkpoint:
        cfg = self.cfg
        logger.info(f"[{self.group_id}] training {len(self.pairs)} pairs, "
                    f"{sum(p.size for p in self.params):,} trainable parameters")
        while self.update < cfg.max_updates and not self.early_stop.stopped:
            lr, loss = self.train_update()
            ppl = None
            if self.update % cfg.eval_interval_updates == 0 or self.update == cfg.max_updates:
                ppl = self.evaluate()
            if self.log is not None:
                self.log.append(self.update, lr, loss, ppl)
            if self.update % max(1, cfg.eval_interval_updates // 4) == 0:
                logger.debug(f"[{self.group_id}] update {self.update}: lr {lr:.2e}, loss {loss:.4f}")
        if self.best is None:
            self.evaluate()
        if self.best is None:
            logger.warning(f"[{self.group_id}] no finite validation perplexity; keeping the last parameters as best")
            self.best = self.snapshot("best")
            if self.out_dir is not None:
                checkpoint_save(self.best, self.out_dir / "best.ckpt")
        if self.early_stop.stopped:
            logger.info(f"[{self.group_id}] early stop at update {self.update}")
        return self.best


# ---------------------------------------------------------------------------
# A whole regime
# ---------------------------------------------------------------------------

def _group_corpora(
    grouping: GroupingScheme,
    corpora: Mapping[str, BitextCorpus],
) -> Dict[str, Dict[str, BitextCorpus]]:
    by_lang = {corpus.tgt_lang: pair for pair, corpus in corpora.items()}
    grouped = {code for _, codes in grouping.groups for code in codes}
    missing = grouped - set(by_lang)
    if missing:
        raise TrainingCoverageError("grouped languages without a corpus", missing)
    extra = set(by_lang) - grouped
    if extra:
        raise TrainingCoverageError("corpora for languages outside the grouping", extra)
    return {
        gid: {by_lang[code]: corpora[by_lang[code]] for code in codes}
        for gid, codes in grouping.groups
    }


def train_regime(
    model: Seq2SeqModel,
    grouping: GroupingScheme,
    corpora: Mapping[str, BitextCorpus],
    cfg: TrainConfig,
    schedule: Optional[SamplingSchedule] = None,
    *,
    valid_corpora: Mapping[str, BitextCorpus],
    vocab: Vocab,
    adapter_cfg: AdapterConfig,
    full_finetune: bool = False,
    new_languages: Sequence[str] = (),
    out_dir: Optional[Union[str, Path]] = None,
    workers: int = 1,
    resume: bool = False,
) -> Dict[str, Checkpoint]:
    """Train one adapter set per group and return each group's best checkpoint.

    Args:
        model: Backbone; left untouched unless full_finetune.
        grouping: Partition of the target languages.
        corpora: Training bitext keyed by pair id.
        cfg: Training hyperparameters.
        schedule: Optional sampling schedule; only its temperature is used,
            restricted to each group's pairs.
        valid_corpora: Validation bitext keyed by pair id.
        vocab: Vocabulary carrying the language tags.
        adapter_cfg: Adapter shape for the fresh sets.
        full_finetune: Train the backbone itself (single group only).
        new_languages: Languages whose tag rows stay trainable when the model
            allows new embedding rows.
        out_dir: Where `<group>/best.ckpt`, `last.ckpt` and `train_log.tsv` go.
        workers: Groups trained concurrently.
        resume: Continue groups from `last.ckpt` when present.

    Raises:
        TrainingCoverageError: The grouping and corpora disagree.
    """
    cfg.validate()
    train_groups = _group_corpora(grouping, corpora)
    valid_groups = _group_corpora(grouping, valid_corpora)
    if full_finetune and len(grouping) != 1:
        raise ConfigError([f"full fine-tuning trains a single group (got {len(grouping)})"])
    if schedule is not None:
        if set(schedule.pairs) != set(corpora):
            raise TrainingCoverageError("schedule pairs differ from corpora", set(schedule.pairs) ^ set(corpora))
        cfg = replace(cfg, temperature=schedule.temperature)

    def build(group_id: str) -> GroupTrainer:
        codes = grouping.members(group_id)
        rows = [vocab.tag_id(c) for c in new_languages if c in codes]
        group_dir = Path(out_dir) / group_id if out_dir is not None else None
        trainer = GroupTrainer(
            model, group_id, train_groups[group_id], valid_groups[group_id], vocab, cfg, adapter_cfg,
            full_finetune=full_finetune, new_rows=rows, out_dir=group_dir,
        )
        if resume:
            trainer.try_resume()
        return trainer

    logger.info("=" * 80)
    logger.info(f"Training regime '{'full_ft' if full_finetune else grouping.kind}': "
                f"{len(grouping)} groups, max {cfg.max_updates} updates")
    logger.info("=" * 80)

    results: Dict[str, Checkpoint] = {}
    if workers <= 1 or len(grouping) == 1:
        for group_id in grouping.group_ids:
            results[group_id] = build(group_id).run()
    else:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            futures = {executor.submit(lambda g=gid: build(g).run()): gid for gid in grouping.group_ids}
            for future in as_completed(futures):
                group_id = futures[future]
                try:
                    results[group_id] = future.result()
                except Exception as e:
                    logger.error(f"[{group_id}] training failed: {e}")
                    raise
    return {gid: results[gid] for gid in grouping.group_ids}


def model_for_checkpoint(model: Seq2SeqModel, ckpt: Checkpoint) -> Seq2SeqModel:
    """A model ready for inference with a group checkpoint's parameters active."""
    if ckpt.metadata.get("full_finetune"):
        clone = copy.deepcopy(model)
        clone.active_adapters = None
        for p in clone.backbone_parameters():
            p.data[...] = ckpt.tensors[p.name]
        return clone
    view = model.view(private_embedding="embed.weight" in ckpt.tensors)
    if "embed.weight" in ckpt.tensors:
        view.embed.data[...] = ckpt.tensors["embed.weight"]
    adapter_cfg = AdapterConfig(**ckpt.metadata["adapter"])
    adapter_set = AdapterSet.create(ckpt.metadata["group_id"], model.cfg, adapter_cfg, np.random.default_rng(0))
    adapter_set.load_state_dict(ckpt.tensors)
    attach_adapter_set(view, adapter_set)
    return view


def group_languages(ckpt: Checkpoint) -> List[str]:
    return [pair.split("-", 1)[1] for pair in ckpt.metadata["pairs"]]
