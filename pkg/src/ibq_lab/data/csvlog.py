"""
data/csvlog.py
Metrics CSV writer: UTF-8, header row, fixed column order, '.' decimals and
'\\n' line endings. Floats are written with repr-level precision so reruns
compare byte for byte.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Mapping, Sequence, Union

from ..core.errors import DataError

TOKENIZER_COLUMNS = ("step", "epoch", "lr", "loss_total", "loss_recon", "loss_quant", "loss_entropy",
                     "usage", "perplexity", "psnr_val")
AR_COLUMNS = ("step", "epoch", "lr", "nll_train", "nll_eval")
COMPARE_COLUMNS = ("quantizer", "epoch", "usage", "psnr", "loss")


def format_value(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return repr(value)
    return str(value)


class MetricsCSV:
    """Append-only CSV with a fixed header.

    Opening with resume=True keeps the rows already in the file, so a resumed
    run extends the same log.
    """

    def __init__(self, path: Union[str, Path], columns: Sequence[str], resume: bool = False):
        self.path = Path(path)
        self.columns = tuple(columns)
        try:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            if not (resume and self.path.exists()):
                with self.path.open("w", newline="", encoding="utf-8") as handle:
                    csv.writer(handle, lineterminator="\n").writerow(self.columns)
        except OSError as exc:
            raise DataError(f"cannot create metrics file {self.path}: {exc}") from exc

    def truncate_after(self, step: int):
        """Drop rows with step > `step` (rows a crashed run wrote after its last checkpoint)."""
        with self.path.open("r", newline="", encoding="utf-8") as handle:
            rows = list(csv.reader(handle))
        kept = [rows[0]] + [r for r in rows[1:] if r and int(r[0]) <= step]
        with self.path.open("w", newline="", encoding="utf-8") as handle:
            csv.writer(handle, lineterminator="\n").writerows(kept)

    def append(self, row: Mapping[str, object]):
        unknown = set(row) - set(self.columns)
        if unknown:
            raise DataError(f"unknown metrics columns {sorted(unknown)} for {self.path}")
        try:
            with self.path.open("a", newline="", encoding="utf-8") as handle:
                csv.writer(handle, lineterminator="\n").writerow(
                    [format_value(row.get(column)) for column in self.columns])
        except OSError as exc:
            raise DataError(f"cannot append to {self.path}: {exc}") from exc
