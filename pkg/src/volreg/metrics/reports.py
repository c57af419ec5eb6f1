"""Experiment protocol summaries and their CSV/JSON tables."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from ..intraop.noise import BENCHMARK_PERLIN_MM, BENCHMARK_SIGMA_MM
from .core import MetricError, failed, med, pearson, prd, rms_error, rmse, spearman

DEFAULT_PRD_BINS_MM = (0.0, 10.0, 20.0, 30.0, 40.0, 50.0, math.inf)
DEFAULT_VISIBILITY_BINS = (0.0, 0.1, 0.2, 0.3, 0.4)
QUANTILES = (0.05, 0.25, 0.5, 0.75, 0.95)


@dataclass
class SampleMetrics:
    name: str
    med: float
    rmse: float
    rms: float
    prd: float
    delta_re: float
    failed: bool
    tre: float = math.nan
    visibility: float = math.nan

    def to_row(self) -> dict:
        return asdict(self)


def evaluate_sample(name: str, pred, gt, tre_value: float = math.nan,
                    visibility_value: float = math.nan) -> SampleMetrics:
    m = med(pred, gt)
    p = prd(gt)
    return SampleMetrics(name, m, rmse(pred, gt), rms_error(pred, gt), p, p - m, failed(m, p), tre_value,
                         visibility_value)


def _stats(values) -> dict:
    v = np.asarray(values, dtype=np.float64)
    out = {"count": int(v.size), "mean": float(v.mean()), "std": float(v.std(ddof=1)) if v.size > 1 else 0.0}
    for q in QUANTILES:
        out[f"q{int(round(q * 100)):02d}"] = float(np.quantile(v, q))
    return out


def _bin_label(lo: float, hi: float, scale: float = 1.0) -> str:
    fmt = lambda x: "inf" if math.isinf(x) else f"{x * scale:g}"  # noqa: E731
    return f"{fmt(lo)}-{fmt(hi)}"


def _assign(values: np.ndarray, edges) -> np.ndarray:
    """Half-open bin index per value, -1 outside ``[edges[0], edges[-1])``."""
    edges = np.asarray(edges, dtype=np.float64)
    idx = np.searchsorted(edges, values, side="right") - 1
    idx[(values < edges[0]) | (values >= edges[-1])] = -1
    return idx


def deformation_level_report(samples: list[SampleMetrics], edges_mm=DEFAULT_PRD_BINS_MM) -> dict:
    """Per-PRD-bin MED and the correlation of the error reduction with PRD."""
    if len(samples) < 3:
        raise MetricError("deformation-level report needs at least 3 samples")
    prd_mm = np.array([s.prd for s in samples]) * 1e3
    med_mm = np.array([s.med for s in samples]) * 1e3
    delta = prd_mm - med_mm
    idx = _assign(prd_mm, edges_mm)
    bins, notes = [], []
    for b in range(len(edges_mm) - 1):
        sel = idx == b
        label = _bin_label(edges_mm[b], edges_mm[b + 1])
        if not sel.any():
            notes.append(f"PRD bin {label} mm is empty")
            continue
        bins.append({"prd_bin_mm": label, **{f"med_{k}": v for k, v in _stats(med_mm[sel]).items()},
                     "mean_delta_re_mm": float(delta[sel].mean())})
    r, rho = pearson(delta, prd_mm), spearman(delta, prd_mm)
    if math.isnan(r):
        notes.append("correlation undefined: constant input vector")
    return {"bins": bins, "pearson_r": r, "spearman_rho": rho, "n_samples": len(samples),
            "n_failed": int(sum(s.failed for s in samples)), "notes": notes}


def noise_sweep_report(cells: list[dict], perlin_mm=BENCHMARK_PERLIN_MM, sigma_mm=BENCHMARK_SIGMA_MM) -> list[dict]:
    """Per-(A_P, sigma) error distribution; ``cells`` carry perlin_mm, sigma_mm and a ``med`` list in meters."""
    grouped: dict = {}
    for c in cells:
        key = (float(c["perlin_mm"]), float(c["sigma_mm"]))
        grouped.setdefault(key, []).extend(np.atleast_1d(c["med"]).tolist())
    rows = []
    for s in sigma_mm:
        for a in perlin_mm:
            key = (float(a), float(s))
            if key not in grouped or not grouped[key]:
                raise MetricError(f"noise sweep is missing cell A_P={a} mm, sigma={s} mm")
            st = _stats(np.asarray(grouped[key]) * 1e3)
            rows.append({"perlin_mm": key[0], "sigma_mm": key[1], **{f"med_mm_{k}": v for k, v in st.items()}})
    return rows


def visibility_sweep_report(alpha, tre_values, edges=DEFAULT_VISIBILITY_BINS) -> tuple[list[dict], list[str]]:
    """Mean and std TRE (mm) per visibility bin ``[lo, hi)``; empty bins are omitted with a note."""
    alpha = np.asarray(alpha, dtype=np.float64)
    t = np.asarray(tre_values, dtype=np.float64) * 1e3
    if alpha.shape != t.shape:
        raise MetricError("alpha and TRE vectors differ in length")
    idx = _assign(alpha, edges)
    rows, notes = [], []
    for b in range(len(edges) - 1):
        label = _bin_label(edges[b], edges[b + 1], 100.0)
        sel = idx == b
        if not sel.any():
            notes.append(f"visibility bin {label} % is empty")
            continue
        v = t[sel]
        rows.append({"visibility_pct": label, "count": int(sel.sum()), "tre_mean_mm": float(v.mean()),
                     "tre_std_mm": float(v.std(ddof=1)) if v.size > 1 else 0.0})
    return rows, notes


# tables -----------------------------------------------------------------

def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return v


def write_table(path, rows: list[dict], fields: list[str] | None = None) -> None:
    """CSV with floats written via ``repr`` so reading back is bit-exact."""
    fields = fields or (list(rows[0]) if rows else [])
    with Path(path).open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(r.get(k, "")) for k in fields})


def _parse(v: str):
    if v in ("true", "false"):
        return v == "true"
    try:
        i = int(v)
        return i
    except ValueError:
        pass
    try:
        return float(v)
    except ValueError:
        return v


def read_table(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        return [{k: _parse(v) for k, v in r.items()} for r in csv.DictReader(fh)]


def write_json(path, obj) -> None:
    def default(o):
        if isinstance(o, (np.floating, np.integer)):
            return o.item()
        if isinstance(o, np.ndarray):
            return o.tolist()
        raise TypeError(type(o))

    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=default, allow_nan=True))
