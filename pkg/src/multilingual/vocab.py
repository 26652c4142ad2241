"""
Toy tokenization and vocabulary.

Reserved ids come first and never move: pad=0, bos=1, eos=2, unk=3, then one
`__xx__` tag per language in registry order. Corpus tokens follow by
descending frequency, ties broken lexicographically.
"""

import logging
from collections import Counter
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Union

logger = logging.getLogger(__name__)

PAD, BOS, EOS, UNK = "<pad>", "<s>", "</s>", "<unk>"
SPECIAL_TOKENS = (PAD, BOS, EOS, UNK)
PAD_ID, BOS_ID, EOS_ID, UNK_ID = 0, 1, 2, 3
SPACE_MARK = "▁"
MODES = ("whitespace", "char")


def lang_tag(code: str) -> str:
    return f"__{code}__"


def _is_tag_shaped(token: str) -> bool:
    return token.startswith("__") and token.endswith("__") and len(token) > 4


def tokenize(text: str, mode: str) -> List[str]:
    if mode == "whitespace":
        return text.split()
    if mode == "char":
        return [SPACE_MARK if ch == " " else ch for ch in " ".join(text.split())]
    raise ValueError(f"unknown tokenization mode '{mode}' (expected one of {MODES})")


def detokenize(tokens: Sequence[str], mode: str) -> str:
    if mode == "whitespace":
        return " ".join(tokens)
    if mode == "char":
        return "".join(tokens).replace(SPACE_MARK, " ")
    raise ValueError(f"unknown tokenization mode '{mode}' (expected one of {MODES})")


class Vocab:
    """Bidirectional token/id map with stable reserved ids."""

    def __init__(self, tokens: Sequence[str], mode: str = "whitespace", lang_codes: Optional[Sequence[str]] = None):
        """Wrap `tokens` (already in id order).

        `lang_codes` names the tags that follow the specials. Without it the
        tags are the leading run of `__xx__` tokens, which is ambiguous only
        when the most frequent corpus token is itself tag-shaped.
        """
        if tuple(tokens[:len(SPECIAL_TOKENS)]) != SPECIAL_TOKENS:
            raise ValueError(f"vocabulary must start with {SPECIAL_TOKENS}")
        if mode not in MODES:
            raise ValueError(f"unknown tokenization mode '{mode}' (expected one of {MODES})")
        self.tokens: List[str] = list(tokens)
        self.mode = mode
        self.index: Dict[str, int] = {}
        for i, token in enumerate(self.tokens):
            if token in self.index:
                raise ValueError(f"duplicate vocabulary token '{token}' at id {i}")
            self.index[token] = i
        first = len(SPECIAL_TOKENS)
        if lang_codes is None:
            lang_codes = []
            for token in self.tokens[first:]:
                if not _is_tag_shaped(token):
                    break
                lang_codes.append(token[2:-2])
        else:
            expected = [lang_tag(c) for c in lang_codes]
            if self.tokens[first:first + len(expected)] != expected:
                raise ValueError(f"vocabulary ids {first}.. do not hold the tags {expected}")
        self.lang_codes: List[str] = list(lang_codes)

    pad_id = PAD_ID
    bos_id = BOS_ID
    eos_id = EOS_ID
    unk_id = UNK_ID

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def tag_id(self, code: str) -> int:
        if code not in self.lang_codes:
            raise KeyError(f"no language tag for '{code}' in vocabulary")
        return len(SPECIAL_TOKENS) + self.lang_codes.index(code)

    def tag_ids(self) -> Dict[str, int]:
        return {code: len(SPECIAL_TOKENS) + i for i, code in enumerate(self.lang_codes)}

    def encode(self, text: str) -> List[int]:
        return [self.index.get(tok, UNK_ID) for tok in tokenize(text, self.mode)]

    def decode(self, ids: Iterable[int]) -> str:
        """Join tokens up to the first eos, skipping reserved and tag ids."""
        specials = set(range(len(SPECIAL_TOKENS) + len(self.lang_codes)))
        specials.discard(UNK_ID)
        out = []
        for i in ids:
            i = int(i)
            if i == EOS_ID:
                break
            if i in specials:
                continue
            out.append(self.tokens[i])
        return detokenize(out, self.mode)

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: Union[str, Path], mode: str = "whitespace",
             lang_codes: Optional[Sequence[str]] = None) -> "Vocab":
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        return cls(lines, mode=mode, lang_codes=lang_codes)


def build_vocab(corpora: Iterable[str], mode: str = "whitespace", lang_codes: Sequence[str] = ()) -> Vocab:
    """Build a deterministic vocabulary from raw text lines.

    Args:
        corpora: Raw text lines (source and target sides alike).
        mode: 'whitespace' or 'char' tokenization.
        lang_codes: Languages that get a reserved `__xx__` tag, in order.

    Raises:
        ValueError: If the corpus has no tokens.
    """
    counts: Counter = Counter()
    for line in corpora:
        counts.update(tokenize(line, mode))
    if not counts:
        raise ValueError("cannot build a vocabulary from an empty corpus")

    reserved = list(SPECIAL_TOKENS) + [lang_tag(c) for c in lang_codes]
    taken = set(reserved)
    ranked = sorted((tok for tok in counts if tok not in taken), key=lambda tok: (-counts[tok], tok))
    vocab = Vocab(reserved + ranked, mode=mode, lang_codes=list(lang_codes))
    logger.info(f"Built {mode} vocabulary: {len(vocab)} tokens ({len(reserved)} reserved)")
    return vocab
