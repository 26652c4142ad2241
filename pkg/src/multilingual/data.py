"""
Bitext loading, temperature-weighted sampling and mixed mini-batches.

Bitext lives in two line-aligned files per language pair named
`<split>.<pair>.<side>`, e.g. `train.en-bg.en` and `train.en-bg.bg`.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Mapping, Sequence, Tuple, Union

import numpy as np

from .vocab import Vocab

logger = logging.getLogger(__name__)

SPLITS = ("train", "valid", "test")
DEFAULT_TEMPERATURE = 1.5

Example = Tuple[Tuple[int, ...], Tuple[int, ...]]


class AlignmentError(ValueError):
    """Raised when source and target files have different line counts."""

    def __init__(self, src_lines: int, tgt_lines: int, pair: str = ""):
        self.src_lines = src_lines
        self.tgt_lines = tgt_lines
        self.pair = pair
        super().__init__(f"{pair or 'bitext'}: source has {src_lines} lines, target has {tgt_lines}")


class SamplingDomainError(ValueError):
    """Raised for nonpositive sizes or temperature."""
    pass


class CorpusError(ValueError):
    """Raised for empty corpora, empty sides, out-of-range ids or impossible splits."""
    pass


def parse_pair(pair: str) -> Tuple[str, str]:
    src, sep, tgt = pair.partition("-")
    if not sep or not src or not tgt:
        raise ValueError(f"language pair must look like 'en-xx' (got '{pair}')")
    return src, tgt


@dataclass(frozen=True)
class BitextCorpus:
    pair: str
    split: str
    examples: Tuple[Example, ...]

    @property
    def src_lang(self) -> str:
        return parse_pair(self.pair)[0]

    @property
    def tgt_lang(self) -> str:
        return parse_pair(self.pair)[1]

    def __len__(self) -> int:
        return len(self.examples)

    def validate(self, vocab_size: int) -> None:
        for i, (src, tgt) in enumerate(self.examples):
            if not src or not tgt:
                raise CorpusError(f"{self.split}.{self.pair}: example {i} has an empty side")
            top = max(max(src), max(tgt))
            if top >= vocab_size or min(min(src), min(tgt)) < 0:
                raise CorpusError(f"{self.split}.{self.pair}: example {i} has id {top} outside [0, {vocab_size})")


def bitext_paths(data_dir: Union[str, Path], split: str, pair: str) -> Tuple[Path, Path]:
    src, tgt = parse_pair(pair)
    base = Path(data_dir)
    return base / f"{split}.{pair}.{src}", base / f"{split}.{pair}.{tgt}"


def _read_lines(path: Path) -> List[str]:
    text = path.read_text(encoding="utf-8")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return lines


def load_bitext(
    src_path: Union[str, Path],
    tgt_path: Union[str, Path],
    vocab: Vocab,
    pair: str,
    split: str = "train",
) -> BitextCorpus:
    """Tokenize two line-aligned files; unknown tokens map to unk.

    Raises:
        AlignmentError: Line counts differ.
        CorpusError: A line tokenizes to nothing.
    """
    if split not in SPLITS:
        raise ValueError(f"unknown split '{split}' (expected one of {SPLITS})")
    src_lines = _read_lines(Path(src_path))
    tgt_lines = _read_lines(Path(tgt_path))
    if len(src_lines) != len(tgt_lines):
        raise AlignmentError(len(src_lines), len(tgt_lines), pair)

    examples = []
    for line_no, (s, t) in enumerate(zip(src_lines, tgt_lines), start=1):
        src_ids, tgt_ids = vocab.encode(s), vocab.encode(t)
        if not src_ids or not tgt_ids:
            raise CorpusError(f"{src_path}/{tgt_path} line {line_no}: empty side")
        examples.append((tuple(src_ids), tuple(tgt_ids)))
    corpus = BitextCorpus(pair, split, tuple(examples))
    logger.debug(f"Loaded {split}.{pair}: {len(corpus)} examples")
    return corpus


def load_split(
    data_dir: Union[str, Path],
    split: str,
    pairs: Sequence[str],
    vocab: Vocab,
) -> Dict[str, BitextCorpus]:
    corpora = {}
    for pair in pairs:
        src_path, tgt_path = bitext_paths(data_dir, split, pair)
        corpora[pair] = load_bitext(src_path, tgt_path, vocab, pair, split)
    return corpora


# ---------------------------------------------------------------------------
# Temperature sampling
# ---------------------------------------------------------------------------

def temperature_weights(sizes: Sequence[float], temperature: float) -> np.ndarray:
    """p_i proportional to n_i ** (1/T); T=inf gives the uniform distribution."""
    sizes = np.asarray(sizes, dtype=np.float64)
    if sizes.size == 0:
        raise SamplingDomainError("no sizes to weight")
    if np.any(sizes <= 0):
        raise SamplingDomainError(f"sizes must be positive (got {sizes.tolist()})")
    if not temperature > 0:
        raise SamplingDomainError(f"temperature must be positive (got {temperature})")
    logits = np.log(sizes) / temperature
    weights = np.exp(logits - logits.max())
    return weights / weights.sum()


@dataclass(frozen=True)
class SamplingSchedule:
    temperature: float
    pairs: Tuple[str, ...]
    sizes: Tuple[int, ...]
    probabilities: Tuple[float, ...] = field(default=())

    def __post_init__(self):
        if len(self.pairs) != len(self.sizes):
            raise ValueError("pairs and sizes differ in length")
        probs = temperature_weights(self.sizes, self.temperature)
        object.__setattr__(self, "probabilities", tuple(float(p) for p in probs))

    @classmethod
    def from_corpora(cls, corpora: Mapping[str, BitextCorpus], temperature: float = DEFAULT_TEMPERATURE) -> "SamplingSchedule":
        pairs = tuple(corpora)
        return cls(temperature, pairs, tuple(len(corpora[p]) for p in pairs))


@dataclass
class Batch:
    """Mixed mini-batch; targets carry a trailing eos."""

    pairs: List[str]
    src: List[List[int]]
    tgt: List[List[int]]
    tags: List[int]

    def __len__(self) -> int:
        return len(self.src)

    @property
    def num_target_tokens(self) -> int:
        return sum(len(t) for t in self.tgt)


class BatchSampler:
    """Infinite, seeded stream of mixed mini-batches.

    Every example first draws a pair from the schedule, then an example
    uniformly within that pair. A batch closes once the summed
    max(len(src), len(tgt)) reaches `batch_tokens`. The sampler holds no
    buffered state beyond its generator, so saving `rng` is enough to resume.
    """

    def __init__(
        self,
        corpora: Mapping[str, BitextCorpus],
        schedule: SamplingSchedule,
        batch_tokens: int,
        rng: np.random.Generator,
        vocab: Vocab,
    ):
        if set(schedule.pairs) != set(corpora):
            raise CorpusError(
                f"schedule pairs {sorted(schedule.pairs)} do not match corpora {sorted(corpora)}"
            )
        for pair in schedule.pairs:
            if len(corpora[pair]) == 0:
                raise CorpusError(f"corpus for scheduled pair '{pair}' is empty")
        if batch_tokens < 1:
            raise ValueError(f"batch_tokens must be >= 1 (got {batch_tokens})")
        self.corpora = corpora
        self.schedule = schedule
        self.batch_tokens = batch_tokens
        self.rng = rng
        self.eos_id = vocab.eos_id
        self._tags = {pair: vocab.tag_id(corpora[pair].tgt_lang) for pair in schedule.pairs}
        self._cumulative = np.cumsum(schedule.probabilities)

    def draw_pair(self) -> str:
        index = int(np.searchsorted(self._cumulative, self.rng.random(), side="right"))
        return self.schedule.pairs[min(index, len(self.schedule.pairs) - 1)]

    def next_batch(self) -> Batch:
        batch = Batch([], [], [], [])
        tokens = 0
        while tokens < self.batch_tokens:
            pair = self.draw_pair()
            corpus = self.corpora[pair]
            src, tgt = corpus.examples[int(self.rng.integers(len(corpus)))]
            batch.pairs.append(pair)
            batch.src.append(list(src))
            batch.tgt.append(list(tgt) + [self.eos_id])
            batch.tags.append(self._tags[pair])
            tokens += max(len(src), len(tgt))
        return batch

    def __iter__(self) -> Iterator[Batch]:
        while True:
            yield self.next_batch()


def sample_batches(
    corpora: Mapping[str, BitextCorpus],
    schedule: SamplingSchedule,
    batch_tokens: int,
    rng: np.random.Generator,
    vocab: Vocab,
) -> Iterator[Batch]:
    return iter(BatchSampler(corpora, schedule, batch_tokens, rng, vocab))


def iterate_examples(corpus: BitextCorpus, batch_size: int, eos_id: int, tag_id: int) -> Iterator[Batch]:
    """Sequential, non-shuffled batches over one corpus (validation and test)."""
    for start in range(0, len(corpus), batch_size):
        chunk = corpus.examples[start:start + batch_size]
        yield Batch(
            pairs=[corpus.pair] * len(chunk),
            src=[list(s) for s, _ in chunk],
            tgt=[list(t) + [eos_id] for _, t in chunk],
            tags=[tag_id] * len(chunk),
        )


def split_corpus(
    corpus: BitextCorpus,
    valid_n: int,
    test_n: int,
    rng: np.random.Generator,
) -> Tuple[BitextCorpus, BitextCorpus, BitextCorpus]:
    """Seeded disjoint train/valid/test split preserving original order within each."""
    n = len(corpus)
    if valid_n < 0 or test_n < 0:
        raise CorpusError("split sizes must be non-negative")
    if valid_n + test_n >= n:
        raise CorpusError(f"cannot hold out {valid_n}+{test_n} of {n} examples and keep training data")
    order = rng.permutation(n)
    valid_idx = np.sort(order[:valid_n])
    test_idx = np.sort(order[valid_n:valid_n + test_n])
    train_idx = np.sort(order[valid_n + test_n:])

    def take(indices: np.ndarray, split: str) -> BitextCorpus:
        return BitextCorpus(corpus.pair, split, tuple(corpus.examples[i] for i in indices))

    return take(train_idx, "train"), take(valid_idx, "valid"), take(test_idx, "test")
