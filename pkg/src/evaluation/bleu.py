"""
Corpus BLEU-4 with exponential smoothing.

Sentences contribute additive n-gram statistics; the corpus score is
computed once from the summed counts. Hypotheses and references are token
sequences or strings; strings are split on whitespace, after 13a
normalization when `tokenize="13a"`.
"""

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple, Union

from sacrebleu.tokenizers.tokenizer_13a import Tokenizer13a

MAX_ORDER = 4
TOKENIZERS = ("none", "13a")

Text = Union[str, Sequence[str], Sequence[int]]


class BleuInputError(ValueError):
    """Raised when hypotheses and references cannot be paired."""

    def __init__(self, hypotheses: int, references: int):
        self.hypotheses = hypotheses
        self.references = references
        super().__init__(f"{hypotheses} hypotheses vs {references} references")


@dataclass
class BleuStats:
    matches: List[int] = field(default_factory=lambda: [0] * MAX_ORDER)
    totals: List[int] = field(default_factory=lambda: [0] * MAX_ORDER)
    hyp_len: int = 0
    ref_len: int = 0

    def __add__(self, other: "BleuStats") -> "BleuStats":
        return BleuStats(
            [a + b for a, b in zip(self.matches, other.matches)],
            [a + b for a, b in zip(self.totals, other.totals)],
            self.hyp_len + other.hyp_len,
            self.ref_len + other.ref_len,
        )

    @classmethod
    def from_sentence(cls, hyp: Sequence, ref: Sequence) -> "BleuStats":
        stats = cls(hyp_len=len(hyp), ref_len=len(ref))
        for n in range(1, MAX_ORDER + 1):
            hyp_ngrams = _ngrams(hyp, n)
            ref_ngrams = _ngrams(ref, n)
            stats.matches[n - 1] = sum(min(c, ref_ngrams[g]) for g, c in hyp_ngrams.items())
            stats.totals[n - 1] = max(len(hyp) - n + 1, 0)
        return stats

    def precisions(self) -> List[float]:
        """Smoothed n-gram precisions in percent; orders with no hypothesis n-grams are skipped."""
        out = []
        smooth = 1.0
        for correct, total in zip(self.matches, self.totals):
            if total == 0:
                break
            if correct == 0:
                smooth *= 2.0
                out.append(100.0 / (smooth * total))
            else:
                out.append(100.0 * correct / total)
        return out

    def brevity_penalty(self) -> float:
        if self.hyp_len == 0:
            return 0.0
        if self.hyp_len >= self.ref_len:
            return 1.0
        return math.exp(1.0 - self.ref_len / self.hyp_len)

    def score(self) -> float:
        if self.hyp_len == 0 or self.matches[0] == 0:
            return 0.0
        precisions = self.precisions()
        log_mean = sum(math.log(p / 100.0) for p in precisions) / len(precisions)
        return 100.0 * self.brevity_penalty() * math.exp(log_mean)


def _ngrams(tokens: Sequence, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


_tokenizer_13a = Tokenizer13a()


def to_tokens(text: Text, tokenize: str = "none") -> Tuple:
    if tokenize not in TOKENIZERS:
        raise ValueError(f"unknown tokenizer '{tokenize}' (expected one of {TOKENIZERS})")
    if isinstance(text, str):
        if tokenize == "13a":
            text = _tokenizer_13a(text)
        return tuple(text.split())
    return tuple(text)


def corpus_stats(hypotheses: Sequence[Text], references: Sequence[Text], tokenize: str = "none") -> BleuStats:
    if len(hypotheses) != len(references):
        raise BleuInputError(len(hypotheses), len(references))
    stats = BleuStats()
    for hyp, ref in zip(hypotheses, references):
        stats = stats + BleuStats.from_sentence(to_tokens(hyp, tokenize), to_tokens(ref, tokenize))
    return stats


def bleu_corpus(hypotheses: Sequence[Text], references: Sequence[Text], tokenize: str = "none") -> float:
    """Corpus BLEU in [0, 100] with one reference per hypothesis.

    Raises:
        BleuInputError: The two lists differ in length.
    """
    return corpus_stats(hypotheses, references, tokenize).score()
