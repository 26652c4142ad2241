"""
Synthetic English-to-many toy corpus.

Every language translates the same English-like source vocabulary
(`e0`, `e1`, ...) into a shared target vocabulary (`w0`, `w1`, ...).
Languages of one family share a word mapping and a word-order rule; the
families' mappings conflict with each other, so a single shared adapter
has to reconcile incompatible behaviour while family adapters do not.
Each language then swaps a couple of word translations of its own.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from .registry import LanguageRegistry

logger = logging.getLogger(__name__)

ORDER_RULES = ("keep", "reverse", "swap_pairs")


@dataclass(frozen=True)
class ToyLanguage:
    code: str
    family: str
    mapping: Tuple[int, ...]
    order: str

    def translate(self, source: List[int]) -> List[int]:
        words = [self.mapping[i] for i in source]
        if self.order == "reverse":
            words.reverse()
        elif self.order == "swap_pairs":
            for i in range(0, len(words) - 1, 2):
                words[i], words[i + 1] = words[i + 1], words[i]
        return words


def toy_languages(
    registry: LanguageRegistry,
    seed: int = 0,
    vocab_words: int = 24,
    language_swaps: int = 2,
) -> Dict[str, ToyLanguage]:
    languages = {}
    for f, family in enumerate(registry.families()):
        family_rng = np.random.default_rng([seed, f])
        base = family_rng.permutation(vocab_words)
        order = ORDER_RULES[f % len(ORDER_RULES)]
        for j, code in enumerate(registry.members(family)):
            mapping = base.copy()
            lang_rng = np.random.default_rng([seed, f, j + 1])
            for _ in range(language_swaps):
                a, b = lang_rng.choice(vocab_words, size=2, replace=False)
                mapping[a], mapping[b] = mapping[b], mapping[a]
            languages[code] = ToyLanguage(code, family, tuple(int(x) for x in mapping), order)
    return languages


def toy_sizes(registry: LanguageRegistry, scale: float = 1e-3, min_size: int = 20,
              max_size: Optional[int] = None) -> Dict[str, int]:
    """Per-language example counts following the registry's size profile."""
    sizes = {}
    for info in registry:
        n = max(min_size, int(round(info.train_size * scale)))
        sizes[info.code] = min(n, max_size) if max_size else n
    return sizes


def generate_toy_corpus(
    registry: LanguageRegistry,
    seed: int = 0,
    vocab_words: int = 24,
    min_len: int = 3,
    max_len: int = 8,
    scale: float = 1e-3,
    min_size: int = 20,
    max_size: Optional[int] = None,
) -> Dict[str, List[Tuple[str, str]]]:
    """Raw (english, target) sentence pairs keyed by pair id `en-xx`."""
    if not 1 <= min_len <= max_len:
        raise ValueError(f"need 1 <= min_len <= max_len (got {min_len}, {max_len})")
    languages = toy_languages(registry, seed, vocab_words)
    # Zipfian source words give every family a distinct target unigram profile.
    zipf = 1.0 / np.arange(1, vocab_words + 1)
    zipf /= zipf.sum()
    sizes = toy_sizes(registry, scale, min_size, max_size)
    corpus = {}
    for i, info in enumerate(registry):
        rng = np.random.default_rng([seed, 1000 + i])
        lang = languages[info.code]
        pairs = []
        for _ in range(sizes[info.code]):
            length = int(rng.integers(min_len, max_len + 1))
            source = rng.choice(vocab_words, size=length, p=zipf).tolist()
            target = lang.translate(source)
            pairs.append((" ".join(f"e{w}" for w in source), " ".join(f"w{w}" for w in target)))
        corpus[info.pair] = pairs
    logger.info(f"Generated toy corpus: {len(corpus)} pairs, {sum(sizes.values())} examples")
    return corpus


def write_toy_corpus(
    out_dir: Union[str, Path],
    registry: LanguageRegistry,
    seed: int = 0,
    valid_n: int = 5,
    test_n: int = 5,
    **kwargs,
) -> Dict[str, Dict[str, int]]:
    """Write `<split>.<pair>.<side>` files plus `registry.tsv`; returns split sizes per pair."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    corpus = generate_toy_corpus(registry, seed=seed, **kwargs)
    counts = {}
    for i, (pair, examples) in enumerate(corpus.items()):
        if valid_n + test_n >= len(examples):
            raise ValueError(f"{pair}: {len(examples)} examples cannot hold out {valid_n}+{test_n}")
        order = np.random.default_rng([seed, 2000 + i]).permutation(len(examples))
        splits = {
            "valid": np.sort(order[:valid_n]),
            "test": np.sort(order[valid_n:valid_n + test_n]),
            "train": np.sort(order[valid_n + test_n:]),
        }
        src_code, tgt_code = pair.split("-", 1)
        for split, indices in splits.items():
            rows = [examples[k] for k in indices]
            (out / f"{split}.{pair}.{src_code}").write_text("".join(s + "\n" for s, _ in rows), encoding="utf-8")
            (out / f"{split}.{pair}.{tgt_code}").write_text("".join(t + "\n" for _, t in rows), encoding="utf-8")
        counts[pair] = {split: len(indices) for split, indices in splits.items()}
    (out / "registry.tsv").write_text(registry.to_text(), encoding="utf-8")
    logger.info(f"Wrote toy corpus for {len(counts)} pairs to {out}")
    return counts
