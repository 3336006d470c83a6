"""Validation metrics and deterministic CSV emission.

All writers format floats with repr, the shortest round-trip
representation, so a rerun with identical inputs produces byte-identical
files.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class Metrics:
    mspe: float
    medspe: float
    coverage: float | None
    n: int

    def rows(self):
        out = [("mspe", self.mspe), ("medspe", self.medspe)]
        if self.coverage is not None:
            out.append(("coverage", self.coverage))
        out.append(("n", self.n))
        return out


def compute_metrics(pred_mean, truth, ci_low=None, ci_high=None) -> Metrics:
    """MSPE, MedSPE, and 95% interval coverage against known truth."""
    pred_mean = np.asarray(pred_mean, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred_mean.shape != truth.shape:
        raise ValueError(
            f"prediction/truth length mismatch: {pred_mean.shape} vs {truth.shape}"
        )
    err2 = (pred_mean - truth) ** 2
    coverage = None
    if ci_low is not None and ci_high is not None:
        ci_low = np.asarray(ci_low, dtype=np.float64)
        ci_high = np.asarray(ci_high, dtype=np.float64)
        if ci_low.shape != truth.shape or ci_high.shape != truth.shape:
            raise ValueError("interval/truth length mismatch")
        coverage = float(np.mean((truth >= ci_low) & (truth <= ci_high)))
    return Metrics(
        mspe=float(np.mean(err2)),
        medspe=float(np.median(err2)),
        coverage=coverage,
        n=len(truth),
    )


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_csv(path, header, rows):
    """Plain deterministic CSV: no quoting needed for our numeric tables."""
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) if not isinstance(v, str) else v for v in row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_predictions_csv(path, points, result):
    rows = [
        (
            points.lon[i],
            points.lat[i],
            points.time[i],
            result.mean[i],
            float(np.sqrt(result.var[i])),
            result.ci_low[i],
            result.ci_high[i],
        )
        for i in range(len(points))
    ]
    write_csv(path, ["lon", "lat", "day", "mean", "sd", "ci_low", "ci_high"], rows)


def write_params_csv(path, names, summaries):
    rows = [
        (name, s.mean, s.sd, s.skewness, s.ci_low, s.ci_high, s.method)
        for name, s in zip(names, summaries)
    ]
    write_csv(
        path,
        ["name", "mean", "sd", "skewness", "ci_low", "ci_high", "method"],
        rows,
    )


def write_metrics_csv(path, metrics: Metrics):
    write_csv(path, ["metric", "value"], metrics.rows())
