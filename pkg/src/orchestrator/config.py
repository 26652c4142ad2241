"""
Experiment specification files.

A spec is a plain-text file of `key=value` lines. `#` starts a comment.
Keys under a section are dotted (`model.heads=4`, `train.max_updates=200`,
`adapter.init_scale=0.01`). Repeating a list key appends (`regime=family`,
then `regime=agnostic`). Any `FAMADAPT_<SECTION>_<KEY>` environment
variable overrides the file; list values in the environment are
comma-separated (`FAMADAPT_EXPERIMENT_REGIME=family,pair`).

Example:

    registry=ted
    data_dir=data/toy
    regime=family
    regime=agnostic
    bottleneck=8
    dropout=0.1
    seed=0
    model.model_dim=32
    train.max_updates=400
"""

import logging
import os
from dataclasses import MISSING, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Union

from multilingual import LanguageRegistry, bitext_paths, load_registry
from multilingual.vocab import MODES
from seq2seq import AdapterConfig, ModelConfig
from seq2seq.errors import ConfigError
from training import TrainConfig

logger = logging.getLogger(__name__)

ENV_PREFIX = "FAMADAPT_"
REGIMES = ("family", "agnostic", "pair", "random", "gmm", "full_ft")
NO_EMB_SUFFIX = "-noemb"
SECTIONS = ("experiment", "model", "adapter", "train", "cluster")

# Top-level keys that accumulate when repeated.
LIST_KEYS = {"regime": "regimes", "bottleneck": "bottlenecks", "dropout": "dropouts", "seed": "seeds"}

_SECTION_TYPES = {"model": ModelConfig, "adapter": AdapterConfig, "train": TrainConfig}
# Derived from the vocabulary, the model, or the sweep lists.
_DERIVED = {
    "model": {"vocab_size", "dropout"},
    "adapter": {"model_dim", "bottleneck"},
    "train": {"seed", "dropout"},
}


class ExperimentSpecError(ValueError):
    """Raised when a spec file cannot be parsed or fails validation; lists every problem."""

    def __init__(self, problems: Sequence[str], path: str = ""):
        self.problems = list(problems)
        self.path = path
        where = f"{path}: " if path else ""
        super().__init__(where + "; ".join(self.problems))


@dataclass
class ClusterSettings:
    components: int = 0  # 0 -> number of families in the registry
    pca_dim: int = 100
    restarts: int = 5
    max_sentences: int = 500
    embeddings: str = ""  # optional externally computed sentence vectors


@dataclass
class ExperimentSpec:
    registry: str = "ted"
    data_dir: str = "data/toy"
    vocab_mode: str = "whitespace"
    regimes: List[str] = field(default_factory=list)
    bottlenecks: List[int] = field(default_factory=list)
    dropouts: List[float] = field(default_factory=list)
    seeds: List[int] = field(default_factory=list)
    ablate_embedding_adapters: bool = False
    warmup_updates: int = 0
    beam: int = 5
    length_penalty: float = 1.0
    model: Dict[str, Any] = field(default_factory=dict)
    adapter: Dict[str, Any] = field(default_factory=dict)
    train: Dict[str, Any] = field(default_factory=dict)
    cluster: ClusterSettings = field(default_factory=ClusterSettings)
    path: str = ""

    # -- derived configs -------------------------------------------------------

    def sweep_bottlenecks(self) -> List[int]:
        return self.bottlenecks or [8]

    def sweep_dropouts(self) -> List[float]:
        return self.dropouts or [0.1]

    def sweep_seeds(self) -> List[int]:
        return self.seeds or [0]

    def variants(self) -> List[str]:
        """Regime names as they appear in reports, ablation variants included."""
        names = list(self.regimes)
        if self.ablate_embedding_adapters:
            names += [r + NO_EMB_SUFFIX for r in self.regimes if r != "full_ft"]
        return names

    def model_config(self, vocab_size: int, dropout: Optional[float] = None,
                     use_embedding_adapters: Optional[bool] = None) -> ModelConfig:
        cfg = ModelConfig(vocab_size=vocab_size, dropout=self.sweep_dropouts()[0], **self.model)
        if dropout is not None:
            cfg = replace(cfg, dropout=dropout)
        if use_embedding_adapters is not None:
            cfg = replace(cfg, use_embedding_adapters=use_embedding_adapters)
        return cfg

    def adapter_config(self, model_cfg: ModelConfig, bottleneck: Optional[int] = None) -> AdapterConfig:
        size = self.sweep_bottlenecks()[0] if bottleneck is None else bottleneck
        return AdapterConfig(model_dim=model_cfg.model_dim, bottleneck=size, **self.adapter)

    def train_config(self, seed: Optional[int] = None, dropout: Optional[float] = None) -> TrainConfig:
        return TrainConfig(
            seed=self.sweep_seeds()[0] if seed is None else seed,
            dropout=self.sweep_dropouts()[0] if dropout is None else dropout,
            **self.train,
        )

    def load_registry(self) -> LanguageRegistry:
        return load_registry(self.registry)

    # -- validation ------------------------------------------------------------

    def validate(self, check_files: bool = True, need_regimes: bool = True) -> None:
        """Collect every problem with the spec and raise them together.

        Commands that work on finished runs (`eval`, `cluster`) pass
        need_regimes=False; a listed regime is still checked.

        Raises:
            ExperimentSpecError: At least one problem was found.
        """
        problems = []
        if need_regimes and not self.regimes:
            problems.append("at least one regime is required")
        unknown = [r for r in self.regimes if r not in REGIMES]
        if unknown:
            problems.append(f"unknown regimes {unknown} (expected any of {list(REGIMES)})")
        if len(set(self.regimes)) != len(self.regimes):
            problems.append(f"duplicate regimes in {self.regimes}")
        if self.vocab_mode not in MODES:
            problems.append(f"vocab_mode must be one of {MODES} (got {self.vocab_mode!r})")
        if any(b < 1 for b in self.sweep_bottlenecks()):
            problems.append(f"bottleneck sizes must be >= 1 (got {self.sweep_bottlenecks()})")
        if any(not 0.0 <= d < 1.0 for d in self.sweep_dropouts()):
            problems.append(f"dropout values must be in [0, 1) (got {self.sweep_dropouts()})")
        if self.beam < 1:
            problems.append(f"beam must be >= 1 (got {self.beam})")
        if self.warmup_updates < 0:
            problems.append(f"warmup_updates must be >= 0 (got {self.warmup_updates})")
        if self.cluster.components < 0 or self.cluster.pca_dim < 1 or self.cluster.restarts < 1:
            problems.append("cluster.components must be >= 0, cluster.pca_dim and cluster.restarts >= 1")

        try:
            model_cfg = self.model_config(vocab_size=1)
            model_cfg.validate()
            for b in self.sweep_bottlenecks():
                self.adapter_config(model_cfg, b).validate()
            self.train_config().validate()
        except ConfigError as e:
            problems.extend(e.violations)
        except TypeError as e:
            problems.append(str(e))

        registry = None
        try:
            registry = self.load_registry()
        except (OSError, ValueError) as e:
            problems.append(f"registry: {e}")

        if check_files:
            data_dir = Path(self.data_dir)
            if not data_dir.is_dir():
                problems.append(f"data directory not found: {data_dir}")
            elif registry is not None:
                for info in registry:
                    for split in ("train", "valid", "test"):
                        for path in bitext_paths(data_dir, split, info.pair):
                            if not path.exists():
                                problems.append(f"missing corpus file: {path}")
            if self.cluster.embeddings and not Path(self.cluster.embeddings).exists():
                problems.append(f"embedding file not found: {self.cluster.embeddings}")

        if problems:
            raise ExperimentSpecError(problems, self.path)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "registry": self.registry,
            "data_dir": self.data_dir,
            "vocab_mode": self.vocab_mode,
            "regimes": self.variants(),
            "bottlenecks": self.sweep_bottlenecks(),
            "dropouts": self.sweep_dropouts(),
            "seeds": self.sweep_seeds(),
            "warmup_updates": self.warmup_updates,
            "beam": self.beam,
            "length_penalty": self.length_penalty,
            "model": dict(self.model),
            "adapter": dict(self.adapter),
            "train": dict(self.train),
            "cluster": vars(self.cluster).copy(),
        }


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

def _coerce(raw: str, like: Any, key: str) -> Any:
    raw = raw.strip()
    if isinstance(like, bool):
        lowered = raw.lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{key}: expected a boolean (got {raw!r})")
    if isinstance(like, int):
        return int(raw)
    if isinstance(like, float):
        return float(raw)
    return raw


def _section_defaults(section: str) -> Dict[str, Any]:
    if section == "cluster":
        return vars(ClusterSettings()).copy()
    cls = _SECTION_TYPES[section]
    return {
        f.name: f.default for f in fields(cls)
        if f.name not in _DERIVED[section] and f.default is not MISSING
    }


_TOP_LEVEL = {
    "registry": "ted",
    "data_dir": "",
    "vocab_mode": "",
    "ablate_embedding_adapters": False,
    "warmup_updates": 0,
    "beam": 0,
    "length_penalty": 0.0,
}
_LIST_TYPES = {"regime": "", "bottleneck": 0, "dropout": 0.0, "seed": 0}


def _assign(spec: ExperimentSpec, key: str, raw: str, origin: str, problems: List[str]) -> None:
    """Apply one key. List keys append; everything else overwrites."""
    try:
        if "." in key:
            section, name = key.split(".", 1)
            if section not in _SECTION_TYPES and section != "cluster":
                problems.append(f"{origin}: unknown section '{section}'")
                return
            defaults = _section_defaults(section)
            if name not in defaults:
                problems.append(f"{origin}: unknown key '{key}'")
                return
            value = _coerce(raw, defaults[name], key)
            if section == "cluster":
                setattr(spec.cluster, name, value)
            else:
                getattr(spec, section)[name] = value
        elif key in LIST_KEYS:
            getattr(spec, LIST_KEYS[key]).append(_coerce(raw, _LIST_TYPES[key], key))
        elif key in _TOP_LEVEL:
            setattr(spec, key, _coerce(raw, _TOP_LEVEL[key], key))
        else:
            problems.append(f"{origin}: unknown key '{key}'")
    except ValueError as e:
        problems.append(f"{origin}: {e}")


def parse_experiment_spec(text: str, path: str = "") -> ExperimentSpec:
    """Parse spec text; raises ExperimentSpecError listing every bad line."""
    spec = ExperimentSpec(path=path)
    problems: List[str] = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            problems.append(f"line {line_no}: expected key=value (got {line!r})")
            continue
        key, value = (part.strip() for part in line.split("=", 1))
        _assign(spec, key, value, f"line {line_no}", problems)
    if problems:
        raise ExperimentSpecError(problems, path)
    return spec


def apply_env_overrides(spec: ExperimentSpec, environ: Optional[Mapping[str, str]] = None) -> List[str]:
    """Override spec values from `FAMADAPT_<SECTION>_<KEY>` variables.

    Variables that do not name a known key are left alone, since click reads
    the same prefix for command options. Returns the dotted keys applied.
    """
    environ = os.environ if environ is None else environ
    applied = []
    problems: List[str] = []
    for var in sorted(environ):
        if not var.startswith(ENV_PREFIX):
            continue
        rest = var[len(ENV_PREFIX):].lower()
        section, _, name = rest.partition("_")
        if section not in SECTIONS or not name:
            continue
        raw = environ[var]
        if section == "experiment":
            if name in LIST_KEYS:
                setattr(spec, LIST_KEYS[name], [])
                for item in raw.split(","):
                    if item.strip():
                        _assign(spec, name, item, var, problems)
            elif name in _TOP_LEVEL:
                _assign(spec, name, raw, var, problems)
            else:
                continue
            applied.append(name)
        elif name in _section_defaults(section):
            _assign(spec, f"{section}.{name}", raw, var, problems)
            applied.append(f"{section}.{name}")
    if problems:
        raise ExperimentSpecError(problems, spec.path)
    for key in applied:
        logger.info(f"Environment override: {key}")
    return applied


def load_experiment_spec(
    path: Union[str, Path, None] = None,
    environ: Optional[Mapping[str, str]] = None,
) -> ExperimentSpec:
    """Read a spec file (or start from defaults) and apply environment overrides."""
    if path is None:
        spec = ExperimentSpec()
    else:
        path = Path(path)
        if not path.exists():
            raise ExperimentSpecError([f"spec file not found: {path}"], str(path))
        spec = parse_experiment_spec(path.read_text(encoding="utf-8"), str(path))
    apply_env_overrides(spec, environ)
    return spec
