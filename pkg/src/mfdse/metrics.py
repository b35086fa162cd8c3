"""Evaluation statistics and CSV emission."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

KL_BINS = 32


def _paired(a, b):
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.size} vs {b.size}")
    if a.size < 2:
        raise ValueError("need at least 2 points")
    return a, b


def pearson_r(a, b) -> float:
    a, b = _paired(a, b)
    da = a - a.mean()
    db = b - b.mean()
    denom = math.sqrt(float(da @ da) * float(db @ db))
    if denom == 0.0:
        raise ValueError("zero variance")
    return float(np.clip((da @ db) / denom, -1.0, 1.0))


def spearman_rho(a, b) -> float:
    """Pearson correlation of average ranks."""
    a, b = _paired(a, b)
    return pearson_r(rankdata(a), rankdata(b))


def kl_divergence_hist(p_samples, q_samples, bins: int = KL_BINS) -> float:
    """KL(p || q) between add-one-smoothed histograms on the pooled range."""
    p = np.asarray(p_samples, dtype=np.float64).ravel()
    q = np.asarray(q_samples, dtype=np.float64).ravel()
    if p.size == 0 or q.size == 0:
        raise ValueError("empty sample set")
    if bins < 2:
        raise ValueError("bins must be >= 2")
    lo = min(p.min(), q.min())
    hi = max(p.max(), q.max())
    if hi == lo:
        hi = lo + 1.0
    edges = np.linspace(lo, hi, bins + 1)
    hp = np.histogram(p, edges)[0] + 1.0
    hq = np.histogram(q, edges)[0] + 1.0
    hp /= hp.sum()
    hq /= hq.sum()
    return float(max(np.sum(hp * np.log(hp / hq)), 0.0))


@dataclass
class MetricsRecord:
    metric: str
    name: str
    value: float
    n: int
    seed: int | None = None
    dataset_hash: str = ""
    context: dict = field(default_factory=dict)

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise ValueError(f"non-finite metric value for {self.metric}")
        if self.metric in ("spearman_rho", "pearson_r") and self.n < 2:
            raise ValueError("correlation metrics need n >= 2")

    def row(self) -> list:
        ctx = dict(self.context)
        if self.dataset_hash:
            ctx["dataset_hash"] = self.dataset_hash
        return [self.metric, self.name, repr(float(self.value)), self.n,
                "" if self.seed is None else self.seed, json.dumps(ctx, sort_keys=True)]


def write_metrics_csv(records, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "name", "value", "n", "seed", "context"])
        for rec in records:
            w.writerow(rec.row())
    return path


def summarize_group(histories) -> dict:
    """Order statistics of final EDP across trials of one method on one workload."""
    histories = list(histories)
    if not histories:
        raise ValueError("no histories")
    workloads = {h.workload for h in histories}
    if len(workloads) > 1:
        raise ValueError(f"mixed workloads in one group: {sorted(workloads)}")
    finals = np.array([h.final_edp for h in histories], dtype=np.float64)
    return {
        "method": histories[0].method,
        "workload": histories[0].workload,
        "trials": len(histories),
        "median": float(np.median(finals)),
        "min": float(finals.min()),
        "max": float(finals.max()),
        "series": [list(h.cumulative_min) for h in histories],
    }


def summarize_runs(histories) -> list[dict]:
    """Group histories by (method, workload) and summarise each group."""
    groups: dict = {}
    for h in histories:
        groups.setdefault((h.method, h.workload), []).append(h)
    if not groups:
        raise ValueError("no histories")
    return [summarize_group(groups[key]) for key in sorted(groups)]


def write_summary_csv(summaries, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "workload", "trials", "median_edp", "min_edp", "max_edp"])
        for s in summaries:
            w.writerow([s["method"], s["workload"], s["trials"],
                        repr(s["median"]), repr(s["min"]), repr(s["max"])])
    return path


def write_convergence_csv(summaries, path) -> Path:
    """Long-format cumulative-minimum series for external plotting."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "workload", "trial", "evaluation", "cumulative_min_edp"])
        for s in summaries:
            for trial, series in enumerate(s["series"]):
                for step, v in enumerate(series):
                    w.writerow([s["method"], s["workload"], trial, step + 1, repr(float(v))])
    return path
