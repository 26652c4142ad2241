"""Denoising warm-up of the backbone on target-side text of seen languages."""

import logging
import zlib
from dataclasses import replace
from typing import List, Mapping, Sequence

import numpy as np

from multilingual import BatchSampler, BitextCorpus, SamplingSchedule, Vocab
from numcore import Adam
from seq2seq import Seq2SeqModel, detach_adapters, freeze_backbone, unfreeze_backbone

from .schedule import lr_at_step
from .trainer import TrainConfig, accumulate_gradients

logger = logging.getLogger(__name__)


def add_noise(
    tokens: Sequence[int],
    rng: np.random.Generator,
    mask_id: int,
    mask_prob: float = 0.15,
    swap_prob: float = 0.1,
) -> List[int]:
    """Mask tokens and swap neighbours; the sequence length is preserved."""
    noisy = [mask_id if rng.random() < mask_prob else int(t) for t in tokens]
    for i in range(len(noisy) - 1):
        if rng.random() < swap_prob:
            noisy[i], noisy[i + 1] = noisy[i + 1], noisy[i]
    return noisy


def denoise_warmup(
    model: Seq2SeqModel,
    corpora: Mapping[str, BitextCorpus],
    vocab: Vocab,
    languages: Sequence[str],
    updates: int,
    cfg: TrainConfig,
    mask_prob: float = 0.15,
    swap_prob: float = 0.1,
) -> List[float]:
    """Train the whole backbone to reconstruct noised target sentences.

    Only `languages` (the seen ones) contribute text, so unseen languages
    meet the frozen backbone for the first time during adapter training.
    The backbone is frozen again afterwards. Returns the per-update losses.
    """
    mono = {
        pair: BitextCorpus(pair, corpus.split, tuple((tgt, tgt) for _, tgt in corpus.examples))
        for pair, corpus in corpora.items()
        if corpus.tgt_lang in set(languages)
    }
    if not mono or updates < 1:
        logger.info("Skipping denoising warm-up (no seen-language text or no updates)")
        return []

    sample_seq, noise_seq, dropout_seq = np.random.SeedSequence([cfg.seed, zlib.crc32(b"warmup")]).spawn(3)
    noise_rng = np.random.default_rng(noise_seq)
    dropout_rng = np.random.default_rng(dropout_seq)
    schedule = SamplingSchedule.from_corpora(mono, cfg.temperature)
    sampler = BatchSampler(mono, schedule, cfg.batch_tokens, np.random.default_rng(sample_seq), vocab)
    warm_cfg = replace(cfg, max_updates=updates, warmup_updates=min(cfg.warmup_updates, updates))

    detach_adapters(model)
    unfreeze_backbone(model)
    optimizer = Adam(model.backbone_parameters(), beta1=cfg.adam_beta1, beta2=cfg.adam_beta2, eps=cfg.adam_eps)
    logger.info("=" * 80)
    logger.info(f"Denoising warm-up: {updates} updates over {len(mono)} seen languages")
    logger.info("=" * 80)

    losses = []
    for update in range(1, updates + 1):
        batch = sampler.next_batch()
        batch.src = [add_noise(s, noise_rng, vocab.unk_id, mask_prob, swap_prob) for s in batch.src]
        optimizer.zero_grad()
        losses.append(accumulate_gradients(model, [batch], cfg.label_smoothing, dropout_rng))
        optimizer.step(lr_at_step(warm_cfg, update))
        if update % max(1, updates // 10) == 0:
            logger.info(f"warm-up update {update}/{updates}: loss {losses[-1]:.4f}")

    freeze_backbone(model)
    return losses
