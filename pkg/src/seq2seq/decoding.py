"""
Greedy and beam-search decoding over a Seq2SeqModel.

Both decoders return the generated token ids, including the final eos when
one was produced. The model runs in evaluation mode (no dropout).
"""

import logging
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Iterator, List, Optional, Sequence

import numpy as np

from .model import AdapterSet, Seq2SeqModel, attach_adapter_set

logger = logging.getLogger(__name__)

EOS_ID = 2


@dataclass
class Hypothesis:
    tokens: List[int] = field(default_factory=list)
    logprob: float = 0.0
    finished: bool = False

    def score(self, length_penalty: float) -> float:
        length = max(len(self.tokens), 1)
        return self.logprob / (length ** length_penalty)


@contextmanager
def active_adapters(model: Seq2SeqModel, adapter_set: Optional[AdapterSet]) -> Iterator[None]:
    """Temporarily activate `adapter_set` unless it is already the active one."""
    if adapter_set is None or model.active_adapters is adapter_set:
        yield
        return
    previous = attach_adapter_set(model, adapter_set)
    try:
        yield
    finally:
        model.active_adapters = previous


def greedy_decode(
    model: Seq2SeqModel,
    adapter_set: Optional[AdapterSet],
    src: Sequence[int],
    lang_tag: int,
    max_len: int,
    eos_id: int = EOS_ID,
) -> List[int]:
    """Append the argmax token (ties -> lowest id) until eos or max_len."""
    with active_adapters(model, adapter_set):
        memory, memory_pad = model.encode_batch([src], [lang_tag])
        tokens: List[int] = []
        for _ in range(max_len):
            logprobs = model.next_token_logprobs(memory, memory_pad, [[lang_tag] + tokens])
            token = int(np.argmax(logprobs[0]))
            tokens.append(token)
            if token == eos_id:
                break
    return tokens


def _rank_key(score: float, tokens: List[int]):
    return (-score, tokens)


def beam_search(
    model: Seq2SeqModel,
    adapter_set: Optional[AdapterSet],
    src: Sequence[int],
    lang_tag: int,
    beam: int = 5,
    max_len: int = 64,
    length_penalty: float = 1.0,
    eos_id: int = EOS_ID,
) -> List[int]:
    """Best hypothesis by logprob / len**length_penalty.

    Each step expands every live hypothesis over the vocabulary and keeps the
    top `beam` candidates by cumulative log-probability; candidates ending in
    eos are retired. Ties at every ranking resolve to the lexicographically
    smallest token sequence.
    """
    if beam < 1:
        raise ValueError(f"beam must be >= 1 (got {beam})")

    with active_adapters(model, adapter_set):
        memory, memory_pad = model.encode_batch([src], [lang_tag])
        live = [Hypothesis()]
        finished: List[Hypothesis] = []

        for _ in range(max_len):
            if not live:
                break
            logprobs = model.next_token_logprobs(memory, memory_pad, [[lang_tag] + h.tokens for h in live])
            candidates = []
            for i, hyp in enumerate(live):
                totals = hyp.logprob + logprobs[i]
                for token, total in enumerate(totals):
                    candidates.append((float(total), hyp.tokens + [token]))
            candidates.sort(key=lambda c: _rank_key(c[0], c[1]))

            live = []
            for total, tokens in candidates[:beam]:
                hyp = Hypothesis(tokens=tokens, logprob=total, finished=tokens[-1] == eos_id)
                (finished if hyp.finished else live).append(hyp)

        pool = finished + live
    best = min(pool, key=lambda h: _rank_key(h.score(length_penalty), h.tokens))
    logger.debug(f"beam={beam}: best score {best.score(length_penalty):.4f} over {len(pool)} hypotheses")
    return best.tokens


def sequence_logprob(
    model: Seq2SeqModel,
    adapter_set: Optional[AdapterSet],
    src: Sequence[int],
    lang_tag: int,
    tokens: Sequence[int],
) -> float:
    """Cumulative log-probability of an explicit output sequence."""
    with active_adapters(model, adapter_set):
        memory, memory_pad = model.encode_batch([src], [lang_tag])
        prefixes = [[lang_tag] + list(tokens[:i]) for i in range(len(tokens))]
        total = 0.0
        for prefix, token in zip(prefixes, tokens):
            total += float(model.next_token_logprobs(memory, memory_pad, [prefix])[0, token])
    return total
