"""Verification reports: score tables by group and curve data for plotting.

Scores are expressed in percent of the mean daytime power of each plant,
so tables from plants of different size can be read side by side.
"""

import csv
import json
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DomainError
from .scoring import (
    LEVELS,
    MEDIAN_INDEX,
    crps_decomposition,
    crps_ensemble,
    interval_diagnostics,
    piaw_vs_picp_curve,
    point_metrics,
    quantile_score_curve,
    rank_histogram,
    reliability_diagram,
)

GROUP_KINDS = ("overall", "plant", "time")
SCORE_FIELDS = ("crps", "rel", "res", "unc", "mae_median", "rmse_mean", "mbe_mean",
                "crpss", "maes", "picp", "piaw", "ri")


@dataclass
class ScoreRow:
    method: str
    group: str
    n: int
    crps: float
    rel: float
    res: float
    unc: float
    mae_median: float
    rmse_mean: float
    mbe_mean: float
    crpss: float = math.nan
    maes: float = math.nan
    picp: float = math.nan
    piaw: float = math.nan
    ri: float = math.nan


@dataclass
class VerificationReport:
    """Score rows for each grouping plus per-method curve data.

    ``tables`` maps ``"overall"``, ``"plant"`` and ``"time"`` to lists of
    :class:`ScoreRow`.  ``curves`` maps a method name to its reliability
    diagram, rank histogram, quantile score by level and PIAW/PICP triples
    computed over all cases.
    """

    tables: dict = field(default_factory=dict)
    curves: dict = field(default_factory=dict)
    reference: str = ""

    def rows(self, kind="overall", method=None):
        return [r for r in self.tables[kind] if method is None or r.method == method]


def format_minutes(minutes):
    return f"{int(minutes) // 60:02d}:{int(minutes) % 60:02d}"


def score_row(method, group, q, y, seed=0):
    """All scores for one method on one group of cases (already in % units)."""
    crps = float(np.mean(crps_ensemble(q, y)))
    rel, res, unc = crps_decomposition(q, y)
    mae, rmse, mbe = point_metrics(q[:, MEDIAN_INDEX], q.mean(axis=1), y)
    picp, piaw = interval_diagnostics(q, y)
    _, ri = rank_histogram(q, y, seed=seed)
    return ScoreRow(method, group, int(len(y)), crps, rel, res, unc, mae, rmse, mbe,
                    picp=picp, piaw=piaw, ri=ri)


def _groups(data):
    return {"overall": np.array(["all"] * len(data), dtype=object),
            "plant": np.asarray(data.plant_ids, dtype=object),
            "time": np.array([format_minutes(m) for m in data.time_of_day], dtype=object)}


def evaluate_predictions(predictions, data, reference=None, seed=0):
    """Build a :class:`VerificationReport`.

    Parameters
    ----------
    predictions : dict
        ``method -> (n, 51)`` quantile matrices in normalized units, aligned
        with the cases of ``data``.
    data : Dataset
        Supplies observations, plants, observation times and the
        normalized mean daytime power used as the percent scale.
    reference : str, optional
        Method used for the CRPS and MAE skill scores.
    """
    if reference is not None and reference not in predictions:
        raise DomainError(f"reference method {reference!r} not among the predictions")
    if len(data) < 2:
        raise DomainError("evaluation needs at least two cases")
    scale = data.score_scale()
    if not np.all(np.isfinite(scale) & (scale > 0)):
        raise DomainError("mean daytime power is missing or zero for some plant")
    pct = 100.0 / scale
    y = data.obs * pct
    scaled = {}
    for name, q in predictions.items():
        q = np.asarray(q, dtype=float)
        if q.shape != (len(data), len(LEVELS)):
            raise DomainError(f"predictions for {name!r} have shape {q.shape}, "
                              f"expected {(len(data), len(LEVELS))}")
        scaled[name] = q * pct[:, None]

    report = VerificationReport(reference=reference or "")
    for kind, keys in _groups(data).items():
        rows = []
        for g in sorted(set(keys)):
            sel = keys == g
            if sel.sum() < 2:
                continue
            by_method = {m: score_row(m, str(g), q[sel], y[sel], seed) for m, q in scaled.items()}
            if reference is not None:
                ref = by_method[reference]
                for r in by_method.values():
                    r.crpss = 1.0 - r.crps / ref.crps if ref.crps > 0 else math.nan
                    r.maes = 1.0 - r.mae_median / ref.mae_median if ref.mae_median > 0 else math.nan
            rows.extend(by_method.values())
        report.tables[kind] = rows

    for name, q in scaled.items():
        counts, ri = rank_histogram(q, y, seed=seed)
        report.curves[name] = {
            "reliability": [list(p) for p in reliability_diagram(q, y)],
            "rank_histogram": counts.tolist(),
            "reliability_index": ri,
            "quantile_score": [[float(t), float(s)]
                               for t, s in zip(LEVELS, quantile_score_curve(q, y))],
            "piaw_picp": [list(t) for t in piaw_vs_picp_curve(q, y)],
        }
    return report


def _fmt(v):
    if isinstance(v, float):
        return "nan" if math.isnan(v) else f"{v:.10g}"
    return str(v)


def write_report(report, out_dir):
    """One CSV per grouping plus ``curves.json``; returns the written paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for kind, rows in report.tables.items():
        path = os.path.join(out_dir, f"scores_{kind}.csv")
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            header = list(asdict(rows[0]).keys()) if rows else ["method", "group", "n", *SCORE_FIELDS]
            w.writerow(header)
            for r in rows:
                w.writerow([_fmt(v) for v in asdict(r).values()])
        paths.append(path)
    path = os.path.join(out_dir, "curves.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"reference": report.reference, "methods": report.curves}, fh,
                  sort_keys=True, indent=1)
        fh.write("\n")
    paths.append(path)
    return paths
