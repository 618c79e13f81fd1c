"""Minibatch training loop with Adam and best-epoch selection.

Inputs are normalized once up front; every epoch reshuffles the training
indices with the caller's generator, so a fixed seed reproduces the run
bit for bit. After each epoch the loss is measured on a held-out
validation split, and the parameters that scored best are restored at the
end, which matters here because the heteroscedastic objective can start
oscillating once the variance head sharpens.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .keypoints import stack_normalized
from .losses import BinningScheme, loss_graph
from .model import Model
from .synthetic import Sample


@dataclass(frozen=True)
class TrainConfig:
    n_epochs: int = 100
    batch_size: int = 64
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    val_fraction: float = 0.1
    mse_mix: float = 1.0

    def __post_init__(self) -> None:
        if self.n_epochs < 1 or self.batch_size < 1:
            raise ValueError("n_epochs and batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must be in [0, 1)")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must be in [0, 1)")

    def to_dict(self) -> dict:
        return {
            "n_epochs": self.n_epochs,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "epsilon": self.epsilon,
            "val_fraction": self.val_fraction,
            "mse_mix": self.mse_mix,
        }


class AdamState:
    """First/second moment accumulators for one parameter list."""

    def __init__(self, params: list[ad.Tensor]):
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.t = 0

    def step(self, params: list[ad.Tensor], config: TrainConfig) -> None:
        self.t += 1
        b1, b2 = config.beta1, config.beta2
        bias1 = 1.0 - b1**self.t
        bias2 = 1.0 - b2**self.t
        for i, p in enumerate(params):
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient at step {self.t}")
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g
            m_hat = self.m[i] / bias1
            v_hat = self.v[i] / bias2
            p.data -= config.learning_rate * m_hat / (np.sqrt(v_hat) + config.epsilon)


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    # one (yaw, pitch, roll) MAE triple per epoch, for reporting only
    val_mae: list[list[float]] = field(default_factory=list)
    best_epoch: int = -1
    best_val_loss: float | None = None

    def to_dict(self) -> dict:
        return {
            "train_loss": self.train_loss,
            "val_loss": self.val_loss,
            "val_mae": self.val_mae,
            "best_epoch": self.best_epoch,
            "best_val_loss": self.best_val_loss,
        }


def prepare_arrays(
    samples: list[Sample],
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Normalized input streams plus (N, 3) angle targets in degrees."""
    x1, x2, c = stack_normalized([s.keypoints for s in samples])
    targets = np.stack([s.pose.as_array() for s in samples])
    return x1, x2, c, targets


def _validation_pass(
    model: Model, arrays, binning, mse_mix: float
) -> tuple[float, list[float]]:
    """Loss plus per-angle MAE on a held-out split, one forward pass."""
    x1, x2, c, targets = arrays
    out = model.forward(x1, x2, c)
    loss = float(loss_graph(model.config.loss_kind, out, targets, binning, mse_mix).data)
    per_angle = np.abs(out.values.data[..., :3] - targets).mean(axis=0)
    return loss, [float(v) for v in per_angle]


def train(
    model: Model,
    samples: list[Sample],
    config: TrainConfig,
    rng: np.random.Generator,
    val_samples: list[Sample] | None = None,
) -> TrainHistory:
    """Optimize the model in place; parameters end at the best epoch.

    When val_samples is None, the tail val_fraction of a seeded shuffle of
    `samples` becomes the validation split. With no validation data at all
    the final epoch's parameters are kept.
    """
    if not samples:
        raise ValueError("no training samples")
    if val_samples is None and config.val_fraction > 0.0:
        order = rng.permutation(len(samples))
        n_val = max(1, int(round(len(samples) * config.val_fraction)))
        if n_val >= len(samples):
            raise ValueError("validation split would consume every sample")
        val_samples = [samples[i] for i in order[:n_val]]
        samples = [samples[i] for i in order[n_val:]]

    x1, x2, c, targets = prepare_arrays(samples)
    val_arrays = prepare_arrays(val_samples) if val_samples else None
    binning = None
    if model.config.loss_kind == "combined":
        binning = BinningScheme.centered(
            model.config.n_bins, model.config.bin_width_degrees
        )

    params = model.parameters()
    opt = AdamState(params)
    history = TrainHistory()
    best_val = np.inf
    best_snapshot: dict[str, np.ndarray] | None = None
    n = len(samples)

    for epoch in range(config.n_epochs):
        order = rng.permutation(n)
        running = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            out = model.forward(x1[idx], x2[idx], c[idx])
            loss = loss_graph(
                model.config.loss_kind, out, targets[idx], binning, config.mse_mix
            )
            if not np.isfinite(loss.data):
                raise FloatingPointError(
                    f"non-finite loss at epoch {epoch}, batch {start // config.batch_size}"
                )
            for p in params:
                p.zero_grad()
            loss.backward()
            opt.step(params, config)
            running += float(loss.data) * len(idx)
        history.train_loss.append(running / n)

        if val_arrays is not None:
            val, per_angle = _validation_pass(model, val_arrays, binning, config.mse_mix)
            history.val_loss.append(val)
            history.val_mae.append(per_angle)
            if val < best_val:
                best_val = val
                best_snapshot = model.snapshot()
                history.best_epoch = epoch
                history.best_val_loss = val

    if best_snapshot is not None:
        model.restore(best_snapshot)
    else:
        history.best_epoch = config.n_epochs - 1
    return history
