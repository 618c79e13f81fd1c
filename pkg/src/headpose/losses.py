"""Training objectives for the pose network.

Three interchangeable objectives, matched to the head widths in model.py:

* heteroscedastic: per angle, 0.5 * exp(-s) * (q - f)^2 + 0.5 * s, where f
  is the predicted angle and s the predicted log-variance. This is the
  Gaussian negative log-likelihood with the constant 0.5*log(2*pi) dropped;
  the network damps the residual where it predicts high variance and pays
  0.5 * s for doing so.
* mse: plain summed squared error over the three angles.
* combined: per-angle cross entropy against a binned version of the target
  plus a weighted squared-error term on the continuous head.

Graph builders return the batch-mean scalar ready for backward(); the
numeric helpers mirror them for evaluation and testing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .geometry import EulerPose
from .model import NetworkOutput, PoseEstimate


@dataclass(frozen=True)
class BinningScheme:
    """Uniform angle bins; the top edge folds into the last bin."""

    n_bins: int = 66
    width_degrees: float = 3.0
    lo_degrees: float = -99.0

    def __post_init__(self) -> None:
        if self.n_bins < 2 or self.width_degrees <= 0:
            raise ValueError("need at least 2 bins of positive width")

    @property
    def hi_degrees(self) -> float:
        return self.lo_degrees + self.n_bins * self.width_degrees

    def bin_index(self, angles_degrees) -> np.ndarray:
        a = np.asarray(angles_degrees, dtype=np.float64)
        if np.any(a < self.lo_degrees) or np.any(a > self.hi_degrees):
            raise ValueError(
                f"angle outside [{self.lo_degrees}, {self.hi_degrees}] degrees"
            )
        idx = np.floor((a - self.lo_degrees) / self.width_degrees).astype(np.int64)
        return np.minimum(idx, self.n_bins - 1)

    def bin_center(self, index) -> np.ndarray:
        idx = np.asarray(index)
        return self.lo_degrees + (idx + 0.5) * self.width_degrees

    @staticmethod
    def centered(n_bins: int, width_degrees: float) -> "BinningScheme":
        lo = -0.5 * n_bins * width_degrees
        return BinningScheme(n_bins=n_bins, width_degrees=width_degrees, lo_degrees=lo)


def heteroscedastic_terms(values: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Per-angle loss terms, shape (..., 3), from a six-value head."""
    v = np.asarray(values, dtype=np.float64)
    q = np.asarray(targets, dtype=np.float64)
    f, s = v[..., :3], v[..., 3:6]
    return 0.5 * np.exp(-s) * (q - f) ** 2 + 0.5 * s


def heteroscedastic_loss(values: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Per-sample loss (terms summed over the three angles)."""
    return heteroscedastic_terms(values, targets).sum(axis=-1)


def gaussian_nll(values: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Exact per-sample Gaussian negative log-likelihood, three angles."""
    v = np.asarray(values, dtype=np.float64)
    q = np.asarray(targets, dtype=np.float64)
    f, s = v[..., :3], v[..., 3:6]
    terms = 0.5 * np.log(2.0 * np.pi) + 0.5 * s + 0.5 * np.exp(-s) * (q - f) ** 2
    return terms.sum(axis=-1)


def squared_error_loss(values: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Per-sample summed squared error over the three angles."""
    v = np.asarray(values, dtype=np.float64)
    q = np.asarray(targets, dtype=np.float64)
    return ((q - v[..., :3]) ** 2).sum(axis=-1)


@dataclass(frozen=True)
class LossValue:
    """A single sample's loss, total plus the three per-angle terms."""

    total: float
    per_angle: tuple[float, float, float]


def heteroscedastic_value(estimate: PoseEstimate, target: EulerPose) -> LossValue:
    if estimate.log_variance is None:
        raise ValueError("estimate carries no log-variances")
    values = np.concatenate([estimate.pose.as_array(), estimate.log_variance])
    terms = heteroscedastic_terms(values, target.as_array())
    return LossValue(float(terms.sum()), tuple(float(t) for t in terms))


def squared_error_value(pose: EulerPose, target: EulerPose) -> LossValue:
    terms = (target.as_array() - pose.as_array()) ** 2
    return LossValue(float(terms.sum()), tuple(float(t) for t in terms))


def combined_value(
    pose: EulerPose,
    logits: np.ndarray,
    target: EulerPose,
    binning: BinningScheme,
    mse_mix: float = 1.0,
) -> LossValue:
    """Per-angle cross entropy on binned targets plus weighted squared error."""
    z = np.asarray(logits, dtype=np.float64)
    n = binning.n_bins
    if z.shape != (3 * n,):
        raise ValueError(f"expected {3 * n} logits, got {z.shape}")
    q = target.as_array()
    idx = binning.bin_index(q)
    sq = (q - pose.as_array()) ** 2
    terms = []
    for angle in range(3):
        row = z[angle * n : (angle + 1) * n]
        lse = float(np.log(np.exp(row - row.max()).sum()) + row.max())
        terms.append(lse - float(row[idx[angle]]) + mse_mix * float(sq[angle]))
    return LossValue(float(sum(terms)), tuple(terms))


def nll_gap(estimate: PoseEstimate, target: EulerPose) -> float:
    """Worst per-angle gap between the loss term and the exact Gaussian
    negative log-likelihood with the constant 0.5*log(2*pi) removed.

    Algebraically zero; anything above rounding noise means the loss no
    longer matches its maximum-likelihood derivation.
    """
    if estimate.log_variance is None:
        raise ValueError("estimate carries no log-variances")
    values = np.concatenate([estimate.pose.as_array(), estimate.log_variance])
    q = target.as_array()
    terms = heteroscedastic_terms(values, q)
    f, s = values[:3], values[3:6]
    sigma_sq = np.exp(s)
    nll = (q - f) ** 2 / (2.0 * sigma_sq) + 0.5 * np.log(sigma_sq) + 0.5 * np.log(2.0 * np.pi)
    return float(np.abs(terms - (nll - 0.5 * np.log(2.0 * np.pi))).max())


def _batch_size(t: ad.Tensor) -> int:
    return t.data.shape[0] if t.data.ndim == 2 else 1


def heteroscedastic_loss_graph(output: NetworkOutput, targets: np.ndarray) -> ad.Tensor:
    values = output.values
    if values.shape[-1] != 6:
        raise ValueError(f"heteroscedastic loss needs 6 outputs, got {values.shape}")
    f = ad.slice_last(values, 0, 3)
    s = ad.slice_last(values, 3, 6)
    diff = ad.sub(f, ad.Tensor(targets))
    damped = ad.scale(ad.mul(ad.exp(ad.neg(s)), ad.mul(diff, diff)), 0.5)
    term = ad.add(damped, ad.scale(s, 0.5))
    return ad.scale(ad.tsum(term), 1.0 / _batch_size(values))


def mse_loss_graph(output: NetworkOutput, targets: np.ndarray) -> ad.Tensor:
    values = output.values
    if values.shape[-1] != 3:
        raise ValueError(f"mse loss needs 3 outputs, got {values.shape}")
    diff = ad.sub(values, ad.Tensor(targets))
    return ad.scale(ad.tsum(ad.mul(diff, diff)), 1.0 / _batch_size(values))


def combined_loss_graph(
    output: NetworkOutput,
    targets: np.ndarray,
    binning: BinningScheme,
    mse_mix: float = 1.0,
) -> ad.Tensor:
    if output.logits is None:
        raise ValueError("combined loss needs the bin-logits head")
    values, logits = output.values, output.logits
    if values.data.ndim != 2:
        raise ValueError("combined loss expects batched outputs")
    n = binning.n_bins
    if logits.shape[-1] != 3 * n:
        raise ValueError(f"expected {3 * n} logits, got {logits.shape[-1]}")
    q = np.asarray(targets, dtype=np.float64)
    total: ad.Tensor | None = None
    for angle in range(3):
        rows = ad.slice_last(logits, angle * n, (angle + 1) * n)
        ce = ad.cross_entropy_logits(rows, binning.bin_index(q[:, angle]))
        ce_sum = ad.tsum(ce)
        total = ce_sum if total is None else ad.add(total, ce_sum)
    diff = ad.sub(values, ad.Tensor(q))
    total = ad.add(total, ad.scale(ad.tsum(ad.mul(diff, diff)), mse_mix))
    return ad.scale(total, 1.0 / _batch_size(values))


def loss_graph(
    kind: str,
    output: NetworkOutput,
    targets: np.ndarray,
    binning: BinningScheme | None = None,
    mse_mix: float = 1.0,
) -> ad.Tensor:
    """Dispatch to the builder matching the model's loss kind."""
    if kind == "heteroscedastic":
        return heteroscedastic_loss_graph(output, targets)
    if kind == "mse":
        return mse_loss_graph(output, targets)
    if kind == "combined":
        if binning is None:
            raise ValueError("combined loss needs a binning scheme")
        return combined_loss_graph(output, targets, binning, mse_mix)
    raise ValueError(f"unknown loss kind {kind!r}")
