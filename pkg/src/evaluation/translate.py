"""
Corpus-level translation and BLEU evaluation.

Sentences decode independently, so they are spread over a thread pool the
same way the optimizer fans out evaluation requests; per-sentence BLEU
statistics are merged by addition in input order.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence

from multilingual import BitextCorpus, Vocab
from seq2seq import Seq2SeqModel, beam_search, greedy_decode

from .bleu import BleuStats, to_tokens

logger = logging.getLogger(__name__)

DEFAULT_BEAM = 5


@dataclass
class PairEvaluation:
    pair: str
    hypotheses: List[str]
    references: List[str]
    stats: BleuStats

    @property
    def bleu(self) -> float:
        return self.stats.score()


def decode_ids(
    model: Seq2SeqModel,
    src: Sequence[int],
    tag: int,
    beam: int = DEFAULT_BEAM,
    length_penalty: float = 1.0,
    max_len: Optional[int] = None,
) -> List[int]:
    """Decode one source with the model's active adapters.

    Sources longer than the model allows are truncated, since the tag takes
    one position.
    """
    limit = model.cfg.max_len - 1
    if len(src) > limit:
        logger.warning(f"Source of {len(src)} tokens truncated to {limit}")
        src = list(src)[:limit]
    max_len = limit if max_len is None else min(max_len, limit)
    if beam == 1:
        return greedy_decode(model, None, src, tag, max_len, eos_id=Vocab.eos_id)
    return beam_search(model, None, src, tag, beam=beam, max_len=max_len,
                       length_penalty=length_penalty, eos_id=Vocab.eos_id)


def _map_ordered(fn, items: Sequence, workers: int) -> List:
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(fn, items))


def translate_lines(
    model: Seq2SeqModel,
    vocab: Vocab,
    lines: Sequence[str],
    target_lang: str,
    beam: int = DEFAULT_BEAM,
    length_penalty: float = 1.0,
    workers: int = 1,
) -> List[str]:
    """Translate raw source lines into `target_lang`; output is line-aligned and detokenized.

    Raises:
        KeyError: The vocabulary has no tag for `target_lang`.
    """
    tag = vocab.tag_id(target_lang)

    def translate_one(line: str) -> str:
        ids = vocab.encode(line)
        if not ids:
            return ""
        return vocab.decode(decode_ids(model, ids, tag, beam, length_penalty))

    return _map_ordered(translate_one, list(lines), workers)


def evaluate_corpus(
    model: Seq2SeqModel,
    vocab: Vocab,
    corpus: BitextCorpus,
    beam: int = DEFAULT_BEAM,
    length_penalty: float = 1.0,
    workers: int = 1,
    tokenize: str = "none",
) -> PairEvaluation:
    """Decode every source of `corpus` and score it against its targets."""
    tag = vocab.tag_id(corpus.tgt_lang)

    def score_one(example) -> tuple:
        src, tgt = example
        hyp = vocab.decode(decode_ids(model, src, tag, beam, length_penalty))
        ref = vocab.decode(tgt)
        stats = BleuStats.from_sentence(to_tokens(hyp, tokenize), to_tokens(ref, tokenize))
        return hyp, ref, stats

    scored = _map_ordered(score_one, list(corpus.examples), workers)
    stats = BleuStats()
    for _, _, s in scored:
        stats = stats + s
    result = PairEvaluation(corpus.pair, [h for h, _, _ in scored], [r for _, r, _ in scored], stats)
    logger.info(f"{corpus.pair}: BLEU {result.bleu:.2f} on {len(corpus)} sentences (beam {beam})")
    return result


def evaluate_pairs(
    models: Mapping[str, Seq2SeqModel],
    vocab: Vocab,
    corpora: Mapping[str, BitextCorpus],
    beam: int = DEFAULT_BEAM,
    length_penalty: float = 1.0,
    workers: int = 1,
    tokenize: str = "none",
) -> Dict[str, PairEvaluation]:
    """Evaluate each pair with the model that serves it (keyed by pair id)."""
    missing = sorted(set(corpora) - set(models))
    if missing:
        raise KeyError(f"no model for pairs {missing}")
    return {
        pair: evaluate_corpus(models[pair], vocab, corpora[pair], beam, length_penalty, workers, tokenize)
        for pair in sorted(corpora)
    }
