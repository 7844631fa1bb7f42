import glob
import logging
import math
import os
from typing import Dict, List, Optional, Sequence

import numpy as np

from ..config._constants import PRESETS
from ..file import read_rows, write_rows

__all__ = ["PlotDataError", "curve_file", "aggregate_sweep", "normalize_landscape", "emit_plot_data"]

logger = logging.getLogger(__name__)

_KEY_COLUMNS = ("preset", "key", "value", "seed")


class PlotDataError(IOError):
    def __init__(self, missing: Sequence[str]):
        self.missing = list(missing)
        super().__init__(f"missing plot inputs: {', '.join(self.missing)}")


def curve_file(output_dir: str, preset: str) -> str:
    return os.path.join(output_dir, f"curve_{preset}.csv")


def _number(text: str) -> float:
    try:
        return float(text)
    except (TypeError, ValueError):
        return math.nan


def aggregate_sweep(rows: Sequence[Dict[str, str]]) -> List[Dict[str, object]]:
    """
    One row per swept value, in first-seen order: ``seeds`` plus ``<column>_mean``
    and ``<column>_std`` over the seeds for every numeric column.
    """
    by_value: Dict[str, List[Dict[str, str]]] = {}
    for row in rows:
        by_value.setdefault(row["value"], []).append(row)
    out = []
    for value, group in by_value.items():
        entry = {"preset": group[0].get("preset", ""), "key": group[0].get("key", ""), "value": value,
                 "seeds": len(group)}
        for column in group[0]:
            if column in _KEY_COLUMNS:
                continue
            samples = np.array([_number(r.get(column)) for r in group])
            samples = samples[np.isfinite(samples)]
            entry[f"{column}_mean"] = float(samples.mean()) if len(samples) else math.nan
            entry[f"{column}_std"] = float(samples.std()) if len(samples) else math.nan
        out.append(entry)
    return out


def normalize_landscape(rows: Sequence[Dict[str, str]]) -> List[Dict[str, float]]:
    """Adds ``normalized`` = residual rescaled to [0, 1] over the grid."""
    residuals = np.array([_number(r["residual"]) for r in rows])
    low, high = (float(residuals.min()), float(residuals.max())) if len(residuals) else (0.0, 0.0)
    span = high - low
    return [{"phi": _number(r["phi"]), "theta": _number(r["theta"]), "residual": float(res),
             "normalized": float((res - low) / span) if span > 0 else 0.0}
            for r, res in zip(rows, residuals)]


def emit_plot_data(output_dir: str, presets: Optional[Sequence[str]] = None) -> List[str]:
    """
    Turns the sweep and landscape CSVs in ``output_dir`` into plot-ready files:
    ``curve_<preset>.csv`` (mean and std per swept value) and
    ``<landscape>_norm.csv`` grids. Running it twice gives identical files.

    Raises:
        PlotDataError: a requested preset has no sweep file, or nothing was found.
    """
    if presets:
        expected = [os.path.join(output_dir, f"sweep_{p}.csv") for p in presets]
        missing = [p for p in expected if not os.path.isfile(p)]
        if missing:
            raise PlotDataError(missing)
        sweeps = expected
    else:
        sweeps = sorted(os.path.join(output_dir, f"sweep_{p}.csv") for p in PRESETS
                        if os.path.isfile(os.path.join(output_dir, f"sweep_{p}.csv")))
    landscapes = sorted(p for p in glob.glob(os.path.join(output_dir, "landscape_*.csv"))
                        if not p.endswith("_norm.csv"))
    if not sweeps and not landscapes:
        raise PlotDataError([os.path.join(output_dir, "sweep_<preset>.csv"),
                             os.path.join(output_dir, "landscape_*.csv")])
    written = []
    for path in sweeps:
        rows = read_rows(path)
        preset = os.path.basename(path)[len("sweep_"):-len(".csv")]
        curve = aggregate_sweep(rows)
        columns = list(curve[0]) if curve else ["preset", "key", "value", "seeds"]
        target = curve_file(output_dir, preset)
        write_rows(target, curve, columns)
        written.append(target)
    for path in landscapes:
        target = path[:-len(".csv")] + "_norm.csv"
        write_rows(target, normalize_landscape(read_rows(path)), ("phi", "theta", "residual", "normalized"))
        written.append(target)
    logger.info(f"plot data: {len(written)} files written to {output_dir}")
    return written
