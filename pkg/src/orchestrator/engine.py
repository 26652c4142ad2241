"""
Experiment engine: data, backbones, groupings and regime cells.

A cell is one (seed, bottleneck, dropout, regime) point. Every cell trains
its regime's groups on a frozen per-seed backbone, decodes the test split
and records BLEU per pair in `cell.json`. Cells whose `cell.json` carries
the current fingerprint are skipped on re-runs; unfinished groups resume
from their `last.ckpt`.

Layout under the output directory:

    vocab.txt
    seed-<s>/backbone.ckpt
    seed-<s>/clustering/             (gmm regime)
    seed-<s>/b<d>-d<p>/<regime>/cell.json
    seed-<s>/b<d>-d<p>/<regime>/<group>/{best,last}.ckpt, train_log.tsv
    report/                          (experiment)
"""

import copy
import hashlib
import json
import logging
import zlib
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from clustering import (
    ClusterReport,
    cluster_languages,
    cluster_report,
    embed_corpora,
    load_external_embeddings,
)
from evaluation import evaluate_corpus, report_emit
from evaluation.report import ReportFiles
from multilingual import (
    BitextCorpus,
    BudgetReport,
    GroupingScheme,
    LanguageRegistry,
    Vocab,
    bitext_paths,
    budget_report,
    build_grouping,
    build_vocab,
    load_split,
)
from seq2seq import ModelConfig, Seq2SeqModel, build_model, freeze_backbone
from training import (
    Checkpoint,
    FingerprintMismatchError,
    checkpoint_load,
    checkpoint_save,
    denoise_warmup,
    group_languages,
    model_for_checkpoint,
    train_regime,
)

from .config import NO_EMB_SUFFIX, ExperimentSpec

logger = logging.getLogger(__name__)

VOCAB_FILE = "vocab.txt"
BACKBONE_FILE = "backbone.ckpt"
CELL_FILE = "cell.json"


def _digest(payload) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode("utf-8")).hexdigest()[:16]


def _seed_sequence(seed: int, purpose: str) -> np.random.SeedSequence:
    return np.random.SeedSequence([seed, zlib.crc32(purpose.encode("utf-8"))])


def split_variant(variant: str) -> Tuple[str, bool]:
    """'family-noemb' -> ('family', False); 'family' -> ('family', True)."""
    if variant.endswith(NO_EMB_SUFFIX):
        return variant[: -len(NO_EMB_SUFFIX)], False
    return variant, True


# ---------------------------------------------------------------------------
# Data and backbone
# ---------------------------------------------------------------------------

@dataclass
class DataBundle:
    registry: LanguageRegistry
    vocab: Vocab
    train: Dict[str, BitextCorpus]
    valid: Dict[str, BitextCorpus]
    test: Dict[str, BitextCorpus]

    @property
    def pairs(self) -> List[str]:
        return [info.pair for info in self.registry]


def prepare_data(spec: ExperimentSpec, out_dir: Optional[Union[str, Path]] = None) -> DataBundle:
    """Build the vocabulary from the training files and load every split."""
    registry = spec.load_registry()
    pairs = [info.pair for info in registry]
    lines: List[str] = []
    for pair in pairs:
        for path in bitext_paths(spec.data_dir, "train", pair):
            lines.extend(path.read_text(encoding="utf-8").splitlines())
    vocab = build_vocab(lines, spec.vocab_mode, lang_codes=registry.codes)
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        vocab.save(Path(out_dir) / VOCAB_FILE)
    splits = {split: load_split(spec.data_dir, split, pairs, vocab) for split in ("train", "valid", "test")}
    logger.info(f"Loaded {len(pairs)} pairs from {spec.data_dir}: vocabulary {len(vocab)}, "
                f"{sum(len(c) for c in splits['train'].values()):,} training sentences")
    return DataBundle(registry, vocab, splits["train"], splits["valid"], splits["test"])


def backbone_fingerprint(spec: ExperimentSpec, model_cfg: ModelConfig, vocab: Vocab, seed: int) -> str:
    payload = {
        "model": model_cfg.fingerprint(),
        "vocab": hashlib.sha256("\n".join(vocab.tokens).encode("utf-8")).hexdigest(),
        "seed": seed,
        "warmup_updates": spec.warmup_updates,
    }
    if spec.warmup_updates:
        payload["train"] = spec.train_config(seed).fingerprint()
    return _digest(payload)


def load_backbone(path: Union[str, Path], expected_fingerprint: Optional[str] = None) -> Seq2SeqModel:
    """Rebuild a frozen backbone from `backbone.ckpt`."""
    ckpt = checkpoint_load(path, expected_fingerprint)
    cfg = ModelConfig(**ckpt.metadata["model"])
    model = Seq2SeqModel(cfg, np.random.default_rng(0))
    model.load_state_dict(ckpt.tensors)
    freeze_backbone(model)
    return model


def build_backbone(spec: ExperimentSpec, data: DataBundle, seed: int, seed_dir: Optional[Path] = None) -> Seq2SeqModel:
    """Random (optionally warmed-up) frozen backbone for one seed, cached as `backbone.ckpt`."""
    model_cfg = spec.model_config(len(data.vocab))
    fingerprint = backbone_fingerprint(spec, model_cfg, data.vocab, seed)
    path = seed_dir / BACKBONE_FILE if seed_dir is not None else None
    if path is not None and path.exists():
        try:
            model = load_backbone(path, fingerprint)
            logger.info(f"Reusing backbone {path}")
            return model
        except FingerprintMismatchError:
            logger.warning(f"Backbone {path} was built with other settings; rebuilding")

    model = build_model(model_cfg, np.random.default_rng(_seed_sequence(seed, "backbone")))
    if spec.warmup_updates:
        seen = [c for c in data.registry.codes if data.registry[c].seen]
        denoise_warmup(model, data.train, data.vocab, seen, spec.warmup_updates, spec.train_config(seed))
    freeze_backbone(model)
    if path is not None:
        metadata = {"kind": "backbone", "model": model_cfg.to_dict(), "seed": seed,
                    "vocab_mode": data.vocab.mode, "lang_codes": data.vocab.lang_codes,
                    "warmup_updates": spec.warmup_updates}
        checkpoint_save(Checkpoint(model.state_dict(), metadata, {}, fingerprint), path)
    return model


def with_model_config(backbone: Seq2SeqModel, cfg: ModelConfig) -> Seq2SeqModel:
    """The same frozen weights under another config (dropout, embedding adapters)."""
    if cfg == backbone.cfg:
        return backbone
    model = Seq2SeqModel(cfg, np.random.default_rng(0))
    model.load_state_dict(backbone.state_dict())
    freeze_backbone(model)
    return model


def find_upwards(start: Union[str, Path], name: str) -> Optional[Path]:
    """Nearest `name` in `start` or one of its parents."""
    here = Path(start).resolve()
    for directory in [here] + list(here.parents):
        candidate = directory / name
        if candidate.exists():
            return candidate
    return None


def write_grouping(scheme: GroupingScheme, path: Union[str, Path]) -> Path:
    """One `group<TAB>code,code,...` line per group."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(f"{gid}\t{','.join(codes)}\n" for gid, codes in scheme.groups), encoding="utf-8")
    return path


# ---------------------------------------------------------------------------
# Cells
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Cell:
    seed: int
    bottleneck: int
    dropout: float
    regime: str

    @property
    def relative_dir(self) -> Path:
        return Path(f"seed-{self.seed}") / f"b{self.bottleneck}-d{self.dropout:g}" / self.regime


@dataclass
class CellResult:
    seed: int
    bottleneck: int
    dropout: float
    regime: str
    scores: Dict[str, float]
    valid_perplexity: float
    budget: Dict
    fingerprint: str
    groups: Dict[str, List[str]] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "CellResult":
        return cls(**json.loads(text))


class ExperimentRunner:
    """Runs regimes x sweep points x seeds and emits the comparison report."""

    def __init__(
        self,
        spec: ExperimentSpec,
        out_dir: Union[str, Path] = "results",
        workers: int = 1,
        resume: bool = True,
    ):
        """Initialize the runner.

        Args:
            spec: Validated experiment spec
            out_dir: Root of every artifact the run writes
            workers: Cells (or groups, for a single cell) trained concurrently
            resume: Skip finished cells and continue unfinished groups
        """
        self.spec = spec
        self.out_dir = Path(out_dir)
        self.workers = max(1, workers)
        self.resume = resume
        self._data: Optional[DataBundle] = None
        self._backbones: Dict[int, Seq2SeqModel] = {}
        self._clusters: Dict[int, ClusterReport] = {}
        self._registry: Optional[LanguageRegistry] = None

    # -- shared assets ---------------------------------------------------------

    @property
    def data(self) -> DataBundle:
        if self._data is None:
            self._data = prepare_data(self.spec, self.out_dir)
        return self._data

    @property
    def registry(self) -> LanguageRegistry:
        if self._data is not None:
            return self._data.registry
        if self._registry is None:
            self._registry = self.spec.load_registry()
        return self._registry

    def seed_dir(self, seed: int) -> Path:
        return self.out_dir / f"seed-{seed}"

    def backbone(self, seed: int) -> Seq2SeqModel:
        if seed not in self._backbones:
            self._backbones[seed] = build_backbone(self.spec, self.data, seed, self.seed_dir(seed))
        return self._backbones[seed]

    def cluster(self, seed: int, out_dir: Optional[Path] = None) -> ClusterReport:
        """Cluster the languages from backbone encodings (or the configured vector file)."""
        if seed in self._clusters and out_dir is None:
            return self._clusters[seed]
        settings = self.spec.cluster
        registry = self.registry
        if settings.embeddings:
            batch = load_external_embeddings(settings.embeddings)
        else:
            batch = embed_corpora(self.backbone(seed), self.data.train, settings.max_sentences)
        components = settings.components or len(registry.families())
        rng = np.random.default_rng(_seed_sequence(seed, "gmm"))
        result = cluster_languages(batch, components, rng, pca_dim=settings.pca_dim, restarts=settings.restarts)
        target = out_dir or self.seed_dir(seed) / "clustering"
        report = cluster_report(result.assignment, registry, result.centroids_2d, target)
        write_grouping(report.scheme, target / "grouping.tsv")
        self._clusters[seed] = report
        return report

    def grouping(self, regime: str, seed: int) -> GroupingScheme:
        base, _ = split_variant(regime)
        registry = self.data.registry
        if base == "gmm":
            return self.cluster(seed).scheme
        if base == "full_ft":
            return build_grouping(registry, "agnostic")
        if base == "random":
            return build_grouping(registry, "random", rng=np.random.default_rng(_seed_sequence(seed, "random")))
        return build_grouping(registry, base)

    # -- one cell --------------------------------------------------------------

    def cells(self) -> List[Cell]:
        spec = self.spec
        cells = []
        for seed in spec.sweep_seeds():
            for dropout in spec.sweep_dropouts():
                for i, bottleneck in enumerate(spec.sweep_bottlenecks()):
                    for regime in spec.variants():
                        # Full fine-tuning has no adapters; one bottleneck is enough.
                        if regime == "full_ft":
                            if i == 0:
                                cells.append(Cell(seed, 0, dropout, regime))
                            continue
                        cells.append(Cell(seed, bottleneck, dropout, regime))
        return cells

    def _cell_setup(self, cell: Cell):
        spec = self.spec
        base, use_emb = split_variant(cell.regime)
        backbone = self.backbone(cell.seed)
        model_cfg = replace(backbone.cfg, dropout=cell.dropout, use_embedding_adapters=use_emb)
        adapter_cfg = spec.adapter_config(model_cfg, cell.bottleneck or None)
        train_cfg = spec.train_config(cell.seed, cell.dropout)
        grouping = self.grouping(cell.regime, cell.seed)
        full_ft = base == "full_ft"
        fingerprint = _digest({
            "backbone": backbone_fingerprint(spec, backbone.cfg, self.data.vocab, cell.seed),
            "model": model_cfg.fingerprint(),
            "adapter": adapter_cfg.to_dict(),
            "train": train_cfg.to_dict(),
            "groups": grouping.as_dict(),
            "full_finetune": full_ft,
            "beam": spec.beam,
            "length_penalty": spec.length_penalty,
        })
        return backbone, model_cfg, adapter_cfg, train_cfg, grouping, full_ft, fingerprint

    def run_cell(self, cell: Cell, group_workers: int = 1) -> CellResult:
        """Train one regime at one sweep point and score the test split."""
        backbone, model_cfg, adapter_cfg, train_cfg, grouping, full_ft, fingerprint = self._cell_setup(cell)
        cell_dir = self.out_dir / cell.relative_dir
        cell_file = cell_dir / CELL_FILE
        if self.resume and cell_file.exists():
            done = CellResult.from_json(cell_file.read_text(encoding="utf-8"))
            if done.fingerprint == fingerprint:
                logger.info(f"[{cell.relative_dir}] already complete; skipping")
                return done
            logger.warning(f"[{cell.relative_dir}] settings changed since the last run; retraining")

        data = self.data
        model = with_model_config(backbone, model_cfg)
        if full_ft:
            model = copy.deepcopy(model)
        new_languages = data.registry.unseen() if model_cfg.train_new_embedding_rows else ()
        checkpoints = train_regime(
            model, grouping, data.train, train_cfg,
            valid_corpora=data.valid, vocab=data.vocab, adapter_cfg=adapter_cfg,
            full_finetune=full_ft, new_languages=new_languages,
            out_dir=cell_dir, workers=group_workers, resume=self.resume,
        )

        scores: Dict[str, float] = {}
        perplexities = []
        for ckpt in checkpoints.values():
            served = model_for_checkpoint(model, ckpt)
            for code in group_languages(ckpt):
                pair = data.registry[code].pair
                scores[pair] = evaluate_corpus(
                    served, data.vocab, data.test[pair], self.spec.beam, self.spec.length_penalty
                ).bleu
            perplexities.append(float(ckpt.metadata["perplexity"]))

        budget = replace(budget_report(model_cfg, adapter_cfg, grouping, full_finetune=full_ft), regime=cell.regime)
        result = CellResult(
            seed=cell.seed,
            bottleneck=cell.bottleneck,
            dropout=cell.dropout,
            regime=cell.regime,
            scores={pair: scores[pair] for pair in data.pairs},
            valid_perplexity=float(np.mean(perplexities)),
            budget=budget.to_dict(),
            fingerprint=fingerprint,
            groups={gid: list(codes) for gid, codes in grouping.groups},
        )
        cell_dir.mkdir(parents=True, exist_ok=True)
        cell_file.write_text(result.to_json(), encoding="utf-8")
        logger.info(f"[{cell.relative_dir}] mean BLEU {np.mean(list(result.scores.values())):.2f}, "
                    f"valid ppl {result.valid_perplexity:.3f}")
        return result

    # -- whole experiment ------------------------------------------------------

    def run(self) -> Tuple[List[CellResult], ReportFiles]:
        spec = self.spec
        cells = self.cells()
        logger.info("=" * 80)
        logger.info(f"Experiment: {len(spec.variants())} regimes, {len(spec.sweep_seeds())} seeds, "
                    f"{len(cells)} cells, {self.workers} workers")
        logger.info("=" * 80)

        # Shared state is built up front so cells only read it.
        for seed in spec.sweep_seeds():
            self.backbone(seed)
            if "gmm" in spec.regimes:
                self.cluster(seed)

        results: List[CellResult] = []
        if self.workers <= 1 or len(cells) == 1:
            for cell in cells:
                results.append(self.run_cell(cell, group_workers=self.workers))
        else:
            with ThreadPoolExecutor(max_workers=self.workers) as executor:
                futures = {executor.submit(self.run_cell, cell): cell for cell in cells}
                for future in as_completed(futures):
                    cell = futures[future]
                    try:
                        results.append(future.result())
                    except Exception as e:
                        logger.error(f"[{cell.relative_dir}] failed: {e}")
                        raise
        order = {cell: i for i, cell in enumerate(cells)}
        results.sort(key=lambda r: order[Cell(r.seed, r.bottleneck, r.dropout, r.regime)])

        files = self.report(results)
        logger.info("=" * 80)
        logger.info(f"Experiment complete. Report: {files.summary}")
        logger.info("=" * 80)
        return results, files

    def report(self, results: List[CellResult]) -> ReportFiles:
        """Average seeds at each regime's best sweep point and emit the report.

        The sweep point of a regime is the one with the lowest mean
        validation perplexity.
        """
        sweep = pd.DataFrame(
            [
                {"seed": r.seed, "bottleneck": r.bottleneck, "dropout": r.dropout, "regime": r.regime,
                 "pair": pair, "bleu": bleu, "valid_perplexity": r.valid_perplexity}
                for r in results for pair, bleu in r.scores.items()
            ]
        )
        chosen: Dict[Tuple[str, str], float] = {}
        budgets: List[BudgetReport] = []
        for regime in self.spec.variants():
            rows = sweep[sweep["regime"] == regime]
            points = rows.groupby(["bottleneck", "dropout"])["valid_perplexity"].mean()
            bottleneck, dropout = points.idxmin()
            best = rows[(rows["bottleneck"] == bottleneck) & (rows["dropout"] == dropout)]
            for pair, bleu in best.groupby("pair")["bleu"].mean().items():
                chosen[(regime, pair)] = float(bleu)
            budget = next(r.budget for r in results
                          if r.regime == regime and r.bottleneck == bottleneck and r.dropout == dropout)
            budgets.append(BudgetReport(**{k: budget[k] for k in ("regime", "groups", "per_set", "total",
                                                                  "backbone_total")}))
            logger.info(f"{regime}: sweep point bottleneck={bottleneck}, dropout={dropout:g}")
        swept = len(self.spec.sweep_bottlenecks()) * len(self.spec.sweep_dropouts()) > 1
        return report_emit(chosen, self.data.registry, self.out_dir / "report", budgets,
                           sweep if swept else None)


# ---------------------------------------------------------------------------
# Serving a trained group
# ---------------------------------------------------------------------------

def load_group_model(
    checkpoint: Union[str, Path],
    backbone_path: Optional[Union[str, Path]] = None,
    vocab_path: Optional[Union[str, Path]] = None,
) -> Tuple[Seq2SeqModel, Vocab, Checkpoint]:
    """Backbone + group checkpoint ready to decode, and the run's vocabulary.

    The backbone and vocabulary default to the nearest `backbone.ckpt` and
    `vocab.txt` above the checkpoint.

    Raises:
        FileNotFoundError: A required file is missing.
    """
    checkpoint = Path(checkpoint)
    if not checkpoint.exists():
        raise FileNotFoundError(f"checkpoint not found: {checkpoint}")
    backbone_path = Path(backbone_path) if backbone_path else find_upwards(checkpoint.parent, BACKBONE_FILE)
    vocab_path = Path(vocab_path) if vocab_path else find_upwards(checkpoint.parent, VOCAB_FILE)
    for name, path in ((BACKBONE_FILE, backbone_path), (VOCAB_FILE, vocab_path)):
        if path is None or not path.exists():
            raise FileNotFoundError(f"no {name} found for {checkpoint} (looked in its parent directories)")

    ckpt = checkpoint_load(checkpoint)
    backbone_ckpt = checkpoint_load(backbone_path)
    vocab = Vocab.load(vocab_path, mode=backbone_ckpt.metadata.get("vocab_mode", "whitespace"),
                       lang_codes=backbone_ckpt.metadata.get("lang_codes"))
    backbone = load_backbone(backbone_path)
    model = with_model_config(backbone, ModelConfig(**ckpt.metadata["model"]))
    return model_for_checkpoint(model, ckpt), vocab, ckpt
