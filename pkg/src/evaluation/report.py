"""
Report generator for adapter-regime comparisons.

Writes tab-separated tables and SVG charts:
- scores.tsv: BLEU per pair and regime
- family_deltas.tsv: mean delta vs. the baseline regime per language family
- seen_unseen_deltas.tsv: mean delta for seen and unseen languages
- budget.tsv: trainable parameters per regime
- sweep.tsv: mean BLEU per bottleneck, dropout and regime (when a sweep ran)
- REPORT.md: a short markdown summary linking the above
"""

import logging
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Dict, Iterable, Mapping, Optional, Tuple, Union

import pandas as pd

from multilingual import BudgetReport, LanguageRegistry

from .visualizer import DeltaVisualizer

logger = logging.getLogger(__name__)

BASELINE_REGIME = "pair"


class ReportCoverageError(ValueError):
    """Raised when regimes were scored on different pairs or on unknown languages."""

    def __init__(self, message: str, regimes: Iterable[str] = ()):
        self.regimes = sorted(regimes)
        super().__init__(f"{message}: {self.regimes}" if self.regimes else message)


@dataclass
class ReportFiles:
    tables: Dict[str, Path] = field(default_factory=dict)
    charts: Dict[str, Path] = field(default_factory=dict)
    summary: Optional[Path] = None


def scores_table(results: Mapping[Tuple[str, str], float], registry: LanguageRegistry) -> pd.DataFrame:
    """Wide table: one row per pair, one column per regime, plus family and seen flags."""
    regimes = sorted({regime for regime, _ in results})
    pairs_by_regime = {r: {pair for reg, pair in results if reg == r} for r in regimes}
    reference = next(iter(pairs_by_regime.values()), set())
    mismatched = [r for r, pairs in pairs_by_regime.items() if pairs != reference]
    if mismatched:
        raise ReportCoverageError("regimes cover different pairs", mismatched)

    rows = []
    for info in registry:
        if info.pair not in reference:
            continue
        row = {"pair": info.pair, "language": info.code, "family": info.family,
               "seen": "seen" if info.seen else "unseen"}
        row.update({r: float(results[(r, info.pair)]) for r in regimes})
        rows.append(row)
    known = {info.pair for info in registry}
    unknown = reference - known
    if unknown:
        raise ReportCoverageError("pairs not in the registry", unknown)
    return pd.DataFrame(rows, columns=["pair", "language", "family", "seen", *regimes])


def delta_table(scores: pd.DataFrame, by: str, baseline: str = BASELINE_REGIME) -> pd.DataFrame:
    """Long table of mean (regime - baseline) per group of `by`; groups keep first-seen order."""
    regimes = [c for c in scores.columns[4:] if c != baseline]
    order = list(dict.fromkeys(scores[by]))
    rows = []
    for group in order:
        subset = scores[scores[by] == group]
        for regime in regimes:
            rows.append({by: group, "regime": regime, "pairs": len(subset),
                         "delta": float((subset[regime] - subset[baseline]).mean())})
    return pd.DataFrame(rows, columns=[by, "regime", "pairs", "delta"])


def budget_table(budgets: Iterable[BudgetReport]) -> pd.DataFrame:
    return pd.DataFrame([b.to_dict() for b in budgets],
                        columns=["regime", "groups", "per_set", "total", "backbone_total", "trainable_fraction"])


def sweep_table(sweep: pd.DataFrame) -> pd.DataFrame:
    """Mean BLEU (over seeds and pairs) per bottleneck x dropout x regime."""
    return (
        sweep.groupby(["bottleneck", "dropout", "regime"], as_index=False)["bleu"]
        .mean()
        .sort_values(["bottleneck", "dropout", "regime"])
        .reset_index(drop=True)
    )


class ReportGenerator:
    """Generates the comparison tables, charts and markdown summary."""

    def __init__(self, output_dir: Union[str, Path] = "results", baseline: str = BASELINE_REGIME):
        """Initialize report generator.

        Args:
            output_dir: Directory to write reports to
            baseline: Regime every delta is measured against
        """
        self.output_dir = Path(output_dir)
        self.output_dir.mkdir(parents=True, exist_ok=True)
        self.baseline = baseline
        self.visualizer = DeltaVisualizer(self.output_dir / "charts")

    def _write(self, frame: pd.DataFrame, name: str, files: ReportFiles) -> None:
        path = self.output_dir / name
        frame.to_csv(path, sep="\t", index=False, float_format="%.4f")
        files.tables[name] = path

    def emit(
        self,
        results: Mapping[Tuple[str, str], float],
        registry: LanguageRegistry,
        budgets: Iterable[BudgetReport] = (),
        sweep: Optional[pd.DataFrame] = None,
    ) -> ReportFiles:
        files = ReportFiles()
        scores = scores_table(results, registry)
        self._write(scores, "scores.tsv", files)

        if self.baseline in scores.columns:
            family = delta_table(scores, "family", self.baseline)
            seen = delta_table(scores, "seen", self.baseline)
            self._write(family, "family_deltas.tsv", files)
            self._write(seen, "seen_unseen_deltas.tsv", files)
            for name, frame, column, title in (
                ("family_deltas.svg", family, "family", "BLEU difference per language family"),
                ("seen_unseen_deltas.svg", seen, "seen", "BLEU difference for seen and unseen languages"),
            ):
                path = self.visualizer.plot_deltas(frame, column, title, name, self.baseline)
                if path is not None:
                    files.charts[name] = path
        else:
            logger.warning(f"Baseline regime '{self.baseline}' not scored; delta tables skipped")

        budgets = list(budgets)
        if budgets:
            self._write(budget_table(budgets), "budget.tsv", files)
        if sweep is not None and not sweep.empty:
            self._write(sweep_table(sweep), "sweep.tsv", files)

        files.summary = self._write_summary(scores, files)
        logger.info(f"Report written to {self.output_dir} ({len(files.tables)} tables, {len(files.charts)} charts)")
        return files

    def _write_summary(self, scores: pd.DataFrame, files: ReportFiles) -> Path:
        regimes = list(scores.columns[4:])
        lines = [
            "# Adapter Regime Comparison",
            "",
            f"**Generated:** {datetime.now().strftime('%Y-%m-%d %H:%M:%S')}",
            f"**Pairs:** {len(scores)}",
            f"**Regimes:** {', '.join(regimes)}",
            "",
            "## Average BLEU",
            "",
            "| Regime | BLEU |",
            "|---|---|",
        ]
        lines += [f"| {r} | {scores[r].mean():.2f} |" for r in regimes]
        lines += ["", "## Files", ""]
        lines += [f"- `{name}`" for name in list(files.tables) + [f"charts/{c}" for c in files.charts]]
        path = self.output_dir / "REPORT.md"
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return path


def report_emit(
    results: Mapping[Tuple[str, str], float],
    registry: LanguageRegistry,
    output_dir: Union[str, Path] = "results",
    budgets: Iterable[BudgetReport] = (),
    sweep: Optional[pd.DataFrame] = None,
    baseline: str = BASELINE_REGIME,
) -> ReportFiles:
    """Write score, delta, budget and sweep tables plus charts.

    Raises:
        ReportCoverageError: Regimes cover different pairs, or pairs are not in the registry.
    """
    return ReportGenerator(output_dir, baseline).emit(results, registry, budgets, sweep)
