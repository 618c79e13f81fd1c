"""Metrics over labelled datasets: MAE, uncertainty studies, group stats.

A model is scored once into a list of per-sample records; every study
here is a pure function over those records, so reports stay deterministic
and the studies compose without re-running the network.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .geometry import EulerPose, angular_error, mae
from .keypoints import present_count
from .model import Model, PoseEstimate
from .synthetic import Sample
from .training import prepare_arrays


@dataclass(frozen=True)
class EvalRecord:
    """Per-sample outcome; mean_uncertainty averages the 3 log-variances."""

    estimate: PoseEstimate
    ground_truth: EulerPose
    present_keypoints: int
    mean_uncertainty: float | None

    @property
    def overall_error(self) -> float:
        err = angular_error(self.estimate.pose, self.ground_truth)
        return float(np.mean(err))


@dataclass(frozen=True)
class EvalResult:
    mae_yaw: float
    mae_pitch: float
    mae_roll: float
    mae_overall: float
    records: list[EvalRecord]


class CurvePoint(NamedTuple):
    threshold: float
    mean_error: float | None
    retained: float


def evaluate(model: Model, samples: list[Sample]) -> EvalResult:
    """Forward every sample and aggregate per-angle mean absolute errors."""
    if not samples:
        raise ValueError("empty dataset")
    x1, x2, c, targets = prepare_arrays(samples)
    angles, log_var = model.predict_batch(x1, x2, c)
    records = []
    for i, sample in enumerate(samples):
        lv = log_var[i].copy() if log_var is not None else None
        estimate = PoseEstimate(
            pose=EulerPose(float(angles[i, 0]), float(angles[i, 1]), float(angles[i, 2])),
            log_variance=lv,
        )
        records.append(
            EvalRecord(
                estimate=estimate,
                ground_truth=sample.pose,
                present_keypoints=present_count(sample.keypoints),
                mean_uncertainty=float(lv.mean()) if lv is not None else None,
            )
        )
    errors = np.abs(angles - targets)
    mae_y, mae_p, mae_r, overall = mae(errors)
    return EvalResult(mae_y, mae_p, mae_r, overall, records)


def pearson(a: Sequence[float], b: Sequence[float]) -> float:
    """Sample Pearson correlation; rejects degenerate inputs."""
    av = np.asarray(a, dtype=np.float64)
    bv = np.asarray(b, dtype=np.float64)
    if av.shape != bv.shape or av.ndim != 1:
        raise ValueError("pearson needs two equal-length vectors")
    if av.size < 2:
        raise ValueError("pearson needs at least 2 points")
    da = av - av.mean()
    db = bv - bv.mean()
    denom = np.sqrt((da * da).sum() * (db * db).sum())
    if denom == 0.0:
        raise ValueError("pearson undefined for zero-variance input")
    return float((da * db).sum() / denom)


def _uncertain_records(records: Sequence[EvalRecord]) -> list[EvalRecord]:
    missing = [r for r in records if r.mean_uncertainty is None]
    if missing:
        raise ValueError("records lack uncertainty (point-estimate head)")
    return list(records)


def cumulative_error_curve(
    records: Sequence[EvalRecord], uncertainty_grid: Sequence[float]
) -> list[CurvePoint]:
    """Mean overall error of records at or below each uncertainty threshold.

    The grid must be ascending. Thresholds that retain nothing yield a
    None mean error; the retained fraction is non-decreasing by construction.
    """
    recs = _uncertain_records(records)
    grid = list(uncertainty_grid)
    if any(grid[i] > grid[i + 1] for i in range(len(grid) - 1)):
        raise ValueError("uncertainty grid must be sorted ascending")
    mu = np.array([r.mean_uncertainty for r in recs])
    err = np.array([r.overall_error for r in recs])
    points = []
    for u in grid:
        mask = mu <= u
        kept = int(mask.sum())
        mean_error = float(err[mask].mean()) if kept else None
        points.append(CurvePoint(float(u), mean_error, kept / len(recs)))
    return points


def uncertainty_cross_correlation(
    records: Sequence[EvalRecord],
) -> tuple[float, float, float]:
    """Pairwise Pearson r between the per-angle log-variance series.

    Order: (yaw vs pitch, yaw vs roll, pitch vs roll).
    """
    recs = _uncertain_records(records)
    series = np.array([r.estimate.log_variance for r in recs])
    if series.shape[0] < 2:
        raise ValueError("need at least 2 records")
    return (
        pearson(series[:, 0], series[:, 1]),
        pearson(series[:, 0], series[:, 2]),
        pearson(series[:, 1], series[:, 2]),
    )


@dataclass(frozen=True)
class BoxStats:
    """Box-plot summary with type-7 (linear interpolation) quartiles."""

    mean: float
    q1: float
    median: float
    q3: float

    @staticmethod
    def of(values: Sequence[float]) -> "BoxStats":
        v = np.asarray(values, dtype=np.float64)
        if v.size == 0:
            raise ValueError("no values")
        q1, med, q3 = np.percentile(v, [25.0, 50.0, 75.0])
        return BoxStats(float(v.mean()), float(q1), float(med), float(q3))

    def to_dict(self) -> dict:
        return {"mean": self.mean, "q1": self.q1, "median": self.median, "q3": self.q3}


def error_by_keypoint_count(
    records: Sequence[EvalRecord],
) -> dict[int, dict[str, BoxStats | None]]:
    """Group records by visible-keypoint count; box stats per group.

    Only counts that occur appear as keys. Uncertainty stats are None when
    the records carry no uncertainty.
    """
    groups: dict[int, list[EvalRecord]] = {}
    for r in records:
        groups.setdefault(r.present_keypoints, []).append(r)
    out: dict[int, dict[str, BoxStats | None]] = {}
    for count in sorted(groups):
        recs = groups[count]
        errors = [r.overall_error for r in recs]
        uncertainties = [r.mean_uncertainty for r in recs]
        has_unc = all(u is not None for u in uncertainties)
        out[count] = {
            "error": BoxStats.of(errors),
            "uncertainty": BoxStats.of(uncertainties) if has_unc else None,
        }
    return out


def build_report(result: EvalResult, n_curve_points: int = 21) -> dict:
    """Plot-ready report dict with a fixed key order.

    Serializing this with the same inputs yields byte-identical text; no
    timestamps, paths, or unordered collections are included.
    """
    report: dict = {
        "n_samples": len(result.records),
        "mae": {
            "yaw": result.mae_yaw,
            "pitch": result.mae_pitch,
            "roll": result.mae_roll,
            "overall": result.mae_overall,
        },
    }
    has_unc = all(r.mean_uncertainty is not None for r in result.records)
    if has_unc and len(result.records) >= 2:
        mu = [r.mean_uncertainty for r in result.records]
        err = [r.overall_error for r in result.records]
        try:
            r_err = pearson(mu, err)
        except ValueError:
            r_err = None
        try:
            r_yp, r_yr, r_pr = uncertainty_cross_correlation(result.records)
            cross = {"yaw_pitch": r_yp, "yaw_roll": r_yr, "pitch_roll": r_pr}
        except ValueError:
            cross = None
        grid = np.linspace(min(mu), max(mu), n_curve_points)
        curve = [
            {"threshold": p.threshold, "mean_error": p.mean_error, "retained": p.retained}
            for p in cumulative_error_curve(result.records, grid)
        ]
        report["uncertainty"] = {
            "pearson_vs_error": r_err,
            "cross_correlation": cross,
            "cumulative_curve": curve,
        }
    else:
        report["uncertainty"] = None
    report["by_keypoint_count"] = {
        str(count): {
            "error": stats["error"].to_dict(),
            "uncertainty": stats["uncertainty"].to_dict() if stats["uncertainty"] else None,
        }
        for count, stats in error_by_keypoint_count(result.records).items()
    }
    return report
