"""Facial keypoint containers, input normalization and keypoint dropping.

The network consumes exactly five keypoints in the fixed order
[nose, left eye, right eye, left ear, right ear] (anatomical left/right).
A confidence of 0 encodes a missing point.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

KEYPOINT_NAMES = ("nose", "left_eye", "right_eye", "left_ear", "right_ear")
N_KEYPOINTS = 5


@dataclass(frozen=True)
class Keypoint:
    """One detected point: image coordinates in pixels plus confidence."""

    x1: float  # horizontal, pixels
    x2: float  # vertical, pixels
    c: float  # confidence in [0, 1]; 0 means missing

    def __post_init__(self):
        if not 0.0 <= self.c <= 1.0:
            raise ValueError(f"confidence {self.c} outside [0, 1]")


@dataclass(frozen=True)
class KeypointSet:
    """The five face keypoints in the fixed KEYPOINT_NAMES order."""

    points: tuple[Keypoint, ...]

    def __post_init__(self):
        if len(self.points) != N_KEYPOINTS:
            raise ValueError(f"expected {N_KEYPOINTS} keypoints, got {len(self.points)}")

    @staticmethod
    def from_triplets(triplets: Sequence[Sequence[float]]) -> "KeypointSet":
        return KeypointSet(tuple(Keypoint(float(a), float(b), float(c)) for a, b, c in triplets))

    def as_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        x1 = np.array([p.x1 for p in self.points], dtype=np.float64)
        x2 = np.array([p.x2 for p in self.points], dtype=np.float64)
        c = np.array([p.c for p in self.points], dtype=np.float64)
        return x1, x2, c


@dataclass(frozen=True)
class NormalizedInput:
    """Centered and max-normalized coordinates; confidences pass through.

    Present-point coordinates have zero centroid per axis and max absolute
    value 1 per axis (all zeros when the present points coincide on an
    axis). Missing points carry zero coordinates and c = 0.
    """

    x1: np.ndarray
    x2: np.ndarray
    c: np.ndarray


def present_count(kps: KeypointSet) -> int:
    """Number of points with confidence > 0."""
    return sum(1 for p in kps.points if p.c > 0.0)


def _normalize_axis(values: np.ndarray, present: np.ndarray) -> np.ndarray:
    out = np.zeros_like(values)
    centered = values[present] - values[present].mean()
    peak = np.abs(centered).max()
    if peak > 0.0:
        out[present] = centered / peak
    return out


def normalize(raw: KeypointSet) -> NormalizedInput:
    """Center present points on their centroid and scale each axis to peak 1.

    Missing points (c = 0) are excluded from the centroid and peak
    statistics and come out with zero coordinates. Idempotent on its own
    output; invariant to translation and positive uniform scaling of the
    raw pixel coordinates. Raises ValueError when every confidence is 0.
    """
    x1, x2, c = raw.as_arrays()
    present = c > 0.0
    if not present.any():
        raise ValueError("no usable keypoints: all confidences are zero")
    return NormalizedInput(
        x1=_normalize_axis(x1, present),
        x2=_normalize_axis(x2, present),
        c=c,
    )


def drop_keypoints(kps: KeypointSet, keep: int, rng: np.random.Generator) -> KeypointSet:
    """Zero confidences of randomly chosen present points, keeping `keep`.

    Coordinates are left untouched; only c is set to 0. Deterministic for
    a fixed Generator state. Raises ValueError unless
    1 <= keep <= present_count(kps).
    """
    present_idx = [i for i, p in enumerate(kps.points) if p.c > 0.0]
    if not 1 <= keep <= len(present_idx):
        raise ValueError(f"keep={keep} not in [1, {len(present_idx)}] present points")
    n_drop = len(present_idx) - keep
    dropped = set(rng.choice(present_idx, size=n_drop, replace=False).tolist())
    points = tuple(
        Keypoint(p.x1, p.x2, 0.0) if i in dropped else p for i, p in enumerate(kps.points)
    )
    return KeypointSet(points)


def stack_normalized(
    sets: Sequence[KeypointSet],
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Normalize each set and stack the streams into (N, 5) arrays."""
    if not sets:
        raise ValueError("nothing to stack")
    normed = [normalize(s) for s in sets]
    x1 = np.stack([n.x1 for n in normed])
    x2 = np.stack([n.x2 for n in normed])
    c = np.stack([n.c for n in normed])
    return x1, x2, c
