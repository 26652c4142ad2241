"""Bar charts of BLEU deltas, saved as standalone SVG files."""

import logging
from pathlib import Path
from typing import Optional, Union

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402
import seaborn as sns  # noqa: E402

logger = logging.getLogger(__name__)


class DeltaVisualizer:
    """Generates seaborn bar charts for regime-vs-baseline BLEU deltas."""

    def __init__(self, output_dir: Union[str, Path] = "results/charts", figsize: tuple = (10, 5)):
        """Initialize the visualizer.

        Args:
            output_dir: Directory to save charts
            figsize: Default figure size (width, height)
        """
        self.output_dir = Path(output_dir)
        self.figsize = figsize
        self.output_dir.mkdir(parents=True, exist_ok=True)
        sns.set_style("whitegrid")

    def plot_deltas(
        self,
        deltas: pd.DataFrame,
        group_column: str,
        title: str,
        filename: str,
        baseline: str = "pair",
    ) -> Optional[Path]:
        """Grouped bars of mean BLEU delta per group and regime.

        Args:
            deltas: Long table with columns [group_column, "regime", "delta"]
            group_column: Column holding the x-axis groups (family, seen/unseen)
            title: Chart title
            filename: SVG file name inside output_dir
            baseline: Name of the reference regime, for the axis label

        Returns:
            Path to the saved chart, or None when there is nothing to plot
        """
        if deltas.empty:
            logger.warning(f"No data for {filename}; chart skipped")
            return None

        fig, ax = plt.subplots(figsize=self.figsize)
        sns.barplot(data=deltas, x=group_column, y="delta", hue="regime", ax=ax, edgecolor="black")
        for container in ax.containers:
            ax.bar_label(container, fmt="%+.2f", fontsize=8)
        ax.axhline(0, color="black", linewidth=0.8, linestyle="--")
        ax.set_xlabel(group_column.replace("_", " ").title(), fontsize=12)
        ax.set_ylabel(f"BLEU difference vs. {baseline}", fontsize=12)
        ax.set_title(title, fontsize=14, fontweight="bold")
        plt.tight_layout()

        output_path = self.output_dir / filename
        fig.savefig(output_path, format="svg", bbox_inches="tight")
        plt.close(fig)
        logger.info(f"Saved {filename} chart to {output_path}")
        return output_path
