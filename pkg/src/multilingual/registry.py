"""
Language metadata registry and grouping schemes.

A registry file lists one language per line as whitespace-separated
columns: code, family, script, seen, size. Lines starting with '#' and
blank lines are ignored. The bundled `ted` registry is the canonical
example.
"""

import logging
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

logger = logging.getLogger(__name__)

BUNDLED_DIR = Path(__file__).parent / "registries"
BUNDLED_REGISTRIES = ("ted", "opus")
DEFAULT_REGISTRY = "ted"

COLUMNS = ("code", "family", "script", "seen", "size")
GROUPING_KINDS = ("family", "agnostic", "pair", "random", "custom")

_SEEN_VALUES = {"seen": True, "true": True, "yes": True, "1": True,
                "unseen": False, "false": False, "no": False, "0": False}


class RegistryParseError(ValueError):
    """Raised when a registry file is malformed; carries the 1-based line number."""

    def __init__(self, message: str, line_no: int = 0, path: str = ""):
        self.line_no = line_no
        self.path = path
        where = f"{path}:{line_no}" if path else f"line {line_no}"
        super().__init__(f"{where}: {message}" if line_no else message)


class GroupingCoverageError(ValueError):
    """Raised when groups do not partition the registry's languages."""

    def __init__(self, missing: Sequence[str] = (), duplicated: Sequence[str] = (), unknown: Sequence[str] = ()):
        self.missing = sorted(missing)
        self.duplicated = sorted(duplicated)
        self.unknown = sorted(unknown)
        parts = []
        if self.missing:
            parts.append(f"missing {self.missing}")
        if self.duplicated:
            parts.append(f"in several groups {self.duplicated}")
        if self.unknown:
            parts.append(f"not in registry {self.unknown}")
        super().__init__("grouping is not a partition: " + "; ".join(parts))


@dataclass(frozen=True)
class LanguageInfo:
    code: str
    family: str
    script: str
    seen: bool
    train_size: int

    @property
    def pair(self) -> str:
        return f"en-{self.code}"


class LanguageRegistry:
    """Ordered, immutable collection of LanguageInfo keyed by code."""

    def __init__(self, languages: Sequence[LanguageInfo], name: str = ""):
        self.name = name
        self._languages: "OrderedDict[str, LanguageInfo]" = OrderedDict()
        for info in languages:
            if info.code in self._languages:
                raise ValueError(f"duplicate language code '{info.code}'")
            self._languages[info.code] = info

    def __len__(self) -> int:
        return len(self._languages)

    def __iter__(self) -> Iterator[LanguageInfo]:
        return iter(self._languages.values())

    def __contains__(self, code: str) -> bool:
        return code in self._languages

    def __getitem__(self, code: str) -> LanguageInfo:
        return self._languages[code]

    @property
    def codes(self) -> List[str]:
        return list(self._languages)

    def families(self) -> List[str]:
        """Distinct family names in order of first appearance."""
        return list(OrderedDict.fromkeys(info.family for info in self))

    def members(self, family: str) -> List[str]:
        return [info.code for info in self if info.family == family]

    def unseen(self) -> List[str]:
        return [info.code for info in self if not info.seen]

    def subset(self, codes: Sequence[str]) -> "LanguageRegistry":
        wanted = set(codes)
        unknown = wanted - set(self._languages)
        if unknown:
            raise KeyError(f"unknown language codes: {sorted(unknown)}")
        return LanguageRegistry([info for info in self if info.code in wanted], name=self.name)

    def to_text(self) -> str:
        lines = ["# columns: " + " ".join(COLUMNS)]
        for info in self:
            seen = "seen" if info.seen else "unseen"
            lines.append(f"{info.code}\t{info.family}\t{info.script}\t{seen}\t{info.train_size}")
        return "\n".join(lines) + "\n"


def _parse_line(fields: List[str], line_no: int, path: str) -> LanguageInfo:
    if len(fields) != len(COLUMNS):
        raise RegistryParseError(
            f"expected {len(COLUMNS)} fields ({' '.join(COLUMNS)}), got {len(fields)}", line_no, path
        )
    code, family, script, seen, size = fields
    if seen.lower() not in _SEEN_VALUES:
        raise RegistryParseError(f"unknown seen value '{seen}'", line_no, path)
    try:
        train_size = int(size)
    except ValueError:
        raise RegistryParseError(f"size '{size}' is not an integer", line_no, path) from None
    if train_size < 0:
        raise RegistryParseError(f"size must be >= 0 (got {train_size})", line_no, path)
    return LanguageInfo(code, family, script, _SEEN_VALUES[seen.lower()], train_size)


def parse_registry(text: str, path: str = "") -> LanguageRegistry:
    languages: List[LanguageInfo] = []
    seen_codes: Dict[str, int] = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        info = _parse_line(line.split(), line_no, path)
        if info.code in seen_codes:
            raise RegistryParseError(
                f"duplicate code '{info.code}' (first defined on line {seen_codes[info.code]})", line_no, path
            )
        seen_codes[info.code] = line_no
        languages.append(info)
    if not languages:
        raise RegistryParseError(f"registry {path or '<text>'} lists no languages")
    return LanguageRegistry(languages, name=Path(path).stem if path else "")


def load_registry(path: Union[str, Path, None] = None) -> LanguageRegistry:
    """Load a registry file, or a bundled registry by name ('ted', 'opus').

    Args:
        path: File path or bundled name. Defaults to the bundled TED registry.

    Raises:
        RegistryParseError: On duplicate codes, wrong field counts, bad values or an empty file.
    """
    if path is None:
        path = DEFAULT_REGISTRY
    if str(path) in BUNDLED_REGISTRIES:
        path = BUNDLED_DIR / f"{path}.tsv"
    path = Path(path)
    registry = parse_registry(path.read_text(encoding="utf-8"), path=str(path))
    logger.info(f"Loaded registry '{registry.name}': {len(registry)} languages, "
                f"{len(registry.families())} families, {len(registry.unseen())} unseen")
    return registry


# ---------------------------------------------------------------------------
# Grouping schemes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GroupingScheme:
    """A partition of the registry's languages into adapter groups."""

    kind: str
    groups: Tuple[Tuple[str, Tuple[str, ...]], ...]

    @classmethod
    def from_mapping(cls, kind: str, groups: Mapping[str, Sequence[str]]) -> "GroupingScheme":
        return cls(kind, tuple((gid, tuple(codes)) for gid, codes in groups.items()))

    @property
    def group_ids(self) -> List[str]:
        return [gid for gid, _ in self.groups]

    def as_dict(self) -> Dict[str, Tuple[str, ...]]:
        return dict(self.groups)

    def members(self, group_id: str) -> Tuple[str, ...]:
        return self.as_dict()[group_id]

    def group_of(self, code: str) -> str:
        for gid, codes in self.groups:
            if code in codes:
                return gid
        raise KeyError(f"language '{code}' is not in any group")

    def sizes(self) -> List[int]:
        return [len(codes) for _, codes in self.groups]

    def __len__(self) -> int:
        return len(self.groups)


def check_partition(registry: LanguageRegistry, groups: Mapping[str, Sequence[str]]) -> None:
    counts: Dict[str, int] = {}
    for codes in groups.values():
        for code in codes:
            counts[code] = counts.get(code, 0) + 1
    known = set(registry.codes)
    missing = known - set(counts)
    duplicated = [c for c, n in counts.items() if n > 1]
    unknown = set(counts) - known
    empty = [gid for gid, codes in groups.items() if not codes]
    if missing or duplicated or unknown:
        raise GroupingCoverageError(missing, duplicated, unknown)
    if empty:
        raise GroupingCoverageError(unknown=[f"<empty group {gid}>" for gid in empty])


def build_grouping(
    registry: LanguageRegistry,
    kind: str,
    rng: Optional[np.random.Generator] = None,
    custom: Optional[Mapping[str, Sequence[str]]] = None,
) -> GroupingScheme:
    """Group the registry's languages for adapter training.

    family/agnostic/pair ignore `rng`. random shuffles the codes with `rng`
    and cuts them into the family grouping's size profile.
    """
    if kind not in GROUPING_KINDS:
        raise ValueError(f"unknown grouping kind '{kind}' (expected one of {GROUPING_KINDS})")
    if (kind == "custom") != (custom is not None):
        raise ValueError("custom groups are required exactly when kind='custom'")

    if kind == "family":
        groups = OrderedDict((fam, registry.members(fam)) for fam in registry.families())
    elif kind == "agnostic":
        groups = OrderedDict([("all", registry.codes)])
    elif kind == "pair":
        groups = OrderedDict((f"en-{code}", [code]) for code in registry.codes)
    elif kind == "random":
        if rng is None:
            raise ValueError("random grouping needs a seeded generator")
        shuffled = [registry.codes[i] for i in rng.permutation(len(registry))]
        groups = OrderedDict()
        start = 0
        for i, fam in enumerate(registry.families()):
            size = len(registry.members(fam))
            groups[f"random-{i}"] = shuffled[start:start + size]
            start += size
    else:
        groups = OrderedDict((gid, list(codes)) for gid, codes in custom.items())

    check_partition(registry, groups)
    scheme = GroupingScheme.from_mapping(kind, groups)
    logger.debug(f"Grouping '{kind}': {len(scheme)} groups, sizes {scheme.sizes()}")
    return scheme
