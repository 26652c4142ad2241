"""
TrainingLog: append-only record of a group's training run.

One tab-separated row per update:
- update: 1-based update counter
- lr: learning rate applied at that update
- loss: label-smoothed training loss per target token
- perplexity: pooled validation perplexity, empty when not evaluated
"""

import threading
from pathlib import Path
from typing import Optional, Union

import pandas as pd

COLUMNS = ("update", "lr", "loss", "perplexity")


class TrainingLog:
    """
    Tracks the trajectory of one adapter group's training.

    Rows are appended and flushed immediately so an interrupted run keeps
    everything logged up to the interruption. Reopening an existing log
    continues it.
    """

    def __init__(self, output_path: Union[str, Path]):
        """
        Initialize the log.

        Args:
            output_path: TSV file; created with a header row if missing
        """
        self.output_path = Path(output_path)
        self.output_path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        if not self.output_path.exists() or self.output_path.stat().st_size == 0:
            self.output_path.write_text("\t".join(COLUMNS) + "\n", encoding="utf-8")

    def append(self, update: int, lr: float, loss: float, perplexity: Optional[float] = None) -> None:
        ppl = "" if perplexity is None else repr(float(perplexity))
        row = f"{update}\t{float(lr)!r}\t{float(loss)!r}\t{ppl}\n"
        with self._lock, open(self.output_path, "a", encoding="utf-8") as f:
            f.write(row)

    def truncate_after(self, update: int) -> None:
        """Drop rows past `update` (used when resuming from an earlier checkpoint)."""
        frame = self.to_frame()
        kept = frame[frame["update"] <= update]
        with self._lock:
            kept.to_csv(self.output_path, sep="\t", index=False)

    def to_frame(self) -> pd.DataFrame:
        return pd.read_csv(self.output_path, sep="\t")

    def evaluations(self) -> pd.DataFrame:
        frame = self.to_frame()
        return frame.dropna(subset=["perplexity"]).reset_index(drop=True)
