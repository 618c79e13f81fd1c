"""Mutual-gaze detection between head pairs in a frame.

Each head contributes its centroid and its pose estimate. A pair scores
high when each projected gaze direction points at the other centroid; a
per-head binary weight discards estimates whose yaw/pitch log-variances
look untrustworthy, and the pair score is the weight-normalized average
of the two gaze cosines.

Gate modes:
* "interval": weight 1 iff the mean log-variance lies in [0, delta],
  taken literally. Very confident heads (negative log-variance) gate out.
* "open-below": weight 1 iff the mean log-variance is <= delta. With
  delta -> infinity this reproduces the ungated method exactly.
* "off": every weight is 1 (the ungated baseline).

Heads whose estimates carry no variances always weigh 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .geometry import project_direction
from .model import PoseEstimate

GATE_MODES = ("interval", "open-below", "off")

DEFAULT_DELTA = 7.0
DEFAULT_TAU = 0.93


@dataclass(frozen=True)
class HeadInstance:
    """One detected head: image centroid plus its pose estimate."""

    id: str
    centroid: tuple[float, float]
    estimate: PoseEstimate

    def __post_init__(self) -> None:
        if not all(math.isfinite(v) for v in self.centroid):
            raise ValueError(f"head {self.id}: non-finite centroid")


@dataclass(frozen=True)
class LaeoResult:
    pair: tuple[str, str]
    cos_a: float
    cos_b: float
    weight_a: int
    weight_b: int
    laeo_value: float
    is_laeo: bool

    def to_dict(self) -> dict:
        return {
            "pair": list(self.pair),
            "cos_a": self.cos_a,
            "cos_b": self.cos_b,
            "weight_a": self.weight_a,
            "weight_b": self.weight_b,
            "laeo_value": self.laeo_value,
            "is_laeo": self.is_laeo,
        }


def uncertainty_weight(
    s_yaw: float,
    s_pitch: float,
    delta: float = DEFAULT_DELTA,
    mode: str = "interval",
) -> int:
    """Binary trust gate on the mean yaw/pitch log-variance.

    Roll is excluded: it does not move the projected gaze direction.
    """
    if mode not in GATE_MODES:
        raise ValueError(f"unknown gate mode {mode!r}")
    if mode == "off":
        return 1
    if not (math.isfinite(s_yaw) and math.isfinite(s_pitch)):
        raise ValueError("non-finite log-variance")
    if delta <= 0:
        raise ValueError("delta must be > 0")
    s_hat = 0.5 * (s_yaw + s_pitch)
    if mode == "interval":
        return 1 if 0.0 <= s_hat <= delta else 0
    return 1 if s_hat <= delta else 0


def interaction_measure(a: HeadInstance, b: HeadInstance) -> tuple[float, float]:
    """Cosines between each head's projected gaze and the line joining them."""
    u = np.array(b.centroid, dtype=np.float64) - np.array(a.centroid, dtype=np.float64)
    u_norm = float(np.linalg.norm(u))
    if u_norm == 0.0:
        raise ValueError(f"heads {a.id}, {b.id} share a centroid")
    cosines = []
    for head, toward in ((a, u), (b, -u)):
        g = np.array(project_direction(head.estimate.pose), dtype=np.float64)
        g_norm = float(np.linalg.norm(g))
        if g_norm == 0.0:
            raise ValueError(f"head {head.id} gaze projects to a point")
        cosines.append(float(np.dot(toward, g) / (u_norm * g_norm)))
    return cosines[0], cosines[1]


def laeo_value(measure: tuple[float, float], weights: tuple[int, int]) -> float:
    """Weight-normalized average of the two cosines; 0 when fully gated out."""
    (ca, cb), (wa, wb) = measure, weights
    if wa not in (0, 1) or wb not in (0, 1):
        raise ValueError("weights must be 0 or 1")
    if wa + wb == 0:
        return 0.0
    return (wa * ca + wb * cb) / (wa + wb)


def classify(value: float, tau: float = DEFAULT_TAU) -> bool:
    return value >= tau


def _head_weight(head: HeadInstance, delta: float, mode: str) -> int:
    lv = head.estimate.log_variance
    if lv is None:
        return 1
    return uncertainty_weight(float(lv[0]), float(lv[1]), delta, mode)


def score_pair(
    a: HeadInstance,
    b: HeadInstance,
    tau: float = DEFAULT_TAU,
    delta: float = DEFAULT_DELTA,
    mode: str = "interval",
) -> LaeoResult:
    ca, cb = interaction_measure(a, b)
    wa = _head_weight(a, delta, mode)
    wb = _head_weight(b, delta, mode)
    value = laeo_value((ca, cb), (wa, wb))
    return LaeoResult(
        pair=(a.id, b.id),
        cos_a=ca,
        cos_b=cb,
        weight_a=wa,
        weight_b=wb,
        laeo_value=value,
        is_laeo=classify(value, tau),
    )


@dataclass(frozen=True)
class Frame:
    """All heads of one image plus the labelled mutual-gaze pairs."""

    frame_id: str
    heads: tuple[HeadInstance, ...]
    laeo_pairs: frozenset[frozenset[str]]

    def __post_init__(self) -> None:
        ids = [h.id for h in self.heads]
        if len(set(ids)) != len(ids):
            raise ValueError(f"frame {self.frame_id}: duplicate head ids")
        known = set(ids)
        for pair in self.laeo_pairs:
            if len(pair) != 2 or not pair <= known:
                raise ValueError(f"frame {self.frame_id}: bad label pair {sorted(pair)}")


@dataclass(frozen=True)
class LaeoEvaluation:
    precision: float
    recall: float
    f1: float
    average_precision: float
    n_pairs: int
    n_positive: int
    results: list[tuple[str, LaeoResult, bool]]

    def to_dict(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "average_precision": self.average_precision,
            "n_pairs": self.n_pairs,
            "n_positive": self.n_positive,
        }


def _average_precision(ranked_labels: Sequence[bool]) -> float:
    """All-points interpolated AP over a ranked boolean label list."""
    n_pos = sum(ranked_labels)
    if n_pos == 0:
        return 0.0
    precisions = []
    recalls = []
    tp = 0
    for i, lab in enumerate(ranked_labels, start=1):
        if lab:
            tp += 1
        precisions.append(tp / i)
        recalls.append(tp / n_pos)
    # precision envelope: best precision at any recall >= r
    env = precisions[:]
    for i in range(len(env) - 2, -1, -1):
        env[i] = max(env[i], env[i + 1])
    ap = 0.0
    prev_recall = 0.0
    for p, r in zip(env, recalls):
        if r > prev_recall:
            ap += (r - prev_recall) * p
            prev_recall = r
    return ap


def evaluate_laeo(
    frames: Sequence[Frame],
    tau: float = DEFAULT_TAU,
    delta: float = DEFAULT_DELTA,
    mode: str = "interval",
) -> LaeoEvaluation:
    """Score every unordered head pair per frame against the labels.

    Precision/recall/F1 use the tau cutoff; average precision ranks pairs
    by laeo_value (ties broken by frame and head ids for determinism).
    A frame with fewer than two heads contributes nothing.
    """
    scored: list[tuple[str, LaeoResult, bool]] = []
    for frame in frames:
        heads = sorted(frame.heads, key=lambda h: h.id)
        for i in range(len(heads)):
            for j in range(i + 1, len(heads)):
                result = score_pair(heads[i], heads[j], tau, delta, mode)
                label = frozenset(result.pair) in frame.laeo_pairs
                scored.append((frame.frame_id, result, label))
    tp = sum(1 for _, r, lab in scored if r.is_laeo and lab)
    fp = sum(1 for _, r, lab in scored if r.is_laeo and not lab)
    fn = sum(1 for _, r, lab in scored if not r.is_laeo and lab)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    ranked = sorted(scored, key=lambda e: (-e[1].laeo_value, e[0], e[1].pair))
    ap = _average_precision([lab for _, _, lab in ranked])
    return LaeoEvaluation(
        precision=precision,
        recall=recall,
        f1=f1,
        average_precision=ap,
        n_pairs=len(scored),
        n_positive=sum(1 for _, _, lab in scored if lab),
        results=scored,
    )
