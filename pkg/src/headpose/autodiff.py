"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

Just enough machinery to express the gated keypoint network and its
losses: each operation builds a node holding its parents and a closure
producing the parents' gradient contributions; backward() walks the graph
once in reverse topological order. Element ops accept any shape; the
structured ops (dense, conv1d) accept a single sample or a batch with one
leading axis.

Everything is float64 and deterministic: identical inputs and parameters
yield bit-identical outputs.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class Tensor:
    """A float64 ndarray plus the bookkeeping needed for backward()."""

    __slots__ = ("data", "grad", "_parents", "_vjp")

    def __init__(
        self,
        data,
        parents: tuple["Tensor", ...] = (),
        vjp: Callable[[np.ndarray], tuple[np.ndarray, ...]] | None = None,
    ):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self._parents = parents
        self._vjp = vjp

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Accumulate gradients of this scalar into every reachable tensor."""
        if self.data.size != 1:
            raise ValueError(f"backward() needs a scalar, got shape {self.shape}")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._vjp is None or node.grad is None:
                continue
            for parent, contrib in zip(node._parents, node._vjp(node.grad)):
                if parent.grad is None:
                    parent.grad = contrib.copy()
                else:
                    parent.grad += contrib

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"


def _require_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "add")
    return Tensor(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "sub")
    return Tensor(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Element-wise product; the gradient distributes to both operands."""
    _require_same_shape(a, b, "mul")
    return Tensor(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def neg(a: Tensor) -> Tensor:
    return Tensor(-a.data, (a,), lambda g: (-g,))


def scale(a: Tensor, k: float) -> Tensor:
    """Multiply by a constant scalar (no gradient flows to k)."""
    return Tensor(a.data * k, (a,), lambda g: (g * k,))


def add_const(a: Tensor, k) -> Tensor:
    return Tensor(a.data + k, (a,), lambda g: (g,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return Tensor(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    return Tensor(np.log(a.data), (a,), lambda g: (g / a.data,))


def leaky_relu(a: Tensor, slope: float) -> Tensor:
    """max(x, slope*x); the derivative at exactly 0 takes the x>0 branch."""
    if slope <= 0:
        raise ValueError("leaky_relu slope must be > 0")
    factor = np.where(a.data >= 0.0, 1.0, slope)
    return Tensor(a.data * factor, (a,), lambda g: (g * factor,))


def sigmoid(a: Tensor) -> Tensor:
    # split by sign for overflow-free evaluation
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return Tensor(out, (a,), lambda g: (g * out * (1.0 - out),))


def tsum(a: Tensor) -> Tensor:
    """Sum every element into a scalar."""
    return Tensor(a.data.sum(), (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),))


def dense(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Affine map x @ w + b with w of shape (m, k) and bias (k,).

    x may be a single vector (m,) or a batch (B, m).
    """
    if w.data.ndim != 2 or b.data.ndim != 1 or w.shape[1] != b.shape[0]:
        raise ValueError(f"dense: bad weight/bias shapes {w.shape}, {b.shape}")
    if x.data.ndim not in (1, 2) or x.shape[-1] != w.shape[0]:
        raise ValueError(f"dense: input {x.shape} does not match weights {w.shape}")
    out = x.data @ w.data + b.data

    if x.data.ndim == 1:
        def vjp(g):
            return g @ w.data.T, np.outer(x.data, g), g
    else:
        def vjp(g):
            return g @ w.data.T, x.data.T @ g, g.sum(axis=0)

    return Tensor(out, (x, w, b), vjp)


def conv1d(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Same-padded 1-D cross-correlation of a single-channel sequence.

    x: (n,) or (B, n); w: (k, F) with k odd; b: (F,). Output (n, F) or
    (B, n, F): out[..., i, f] = sum_j w[j, f] * x_padded[..., i + j] + b[f].
    """
    k, nf = w.shape
    if k % 2 != 1:
        raise ValueError(f"conv1d kernel must be odd for same padding, got {k}")
    if b.shape != (nf,):
        raise ValueError(f"conv1d bias shape {b.shape} != ({nf},)")
    batched = x.data.ndim == 2
    n = x.shape[-1]
    if k > n:
        raise ValueError(f"conv1d kernel {k} longer than input {n}")
    pad = k // 2
    xb = x.data if batched else x.data[None, :]
    xpad = np.pad(xb, ((0, 0), (pad, pad)))
    # windows[b, i, j] = xpad[b, i + j]
    windows = np.lib.stride_tricks.sliding_window_view(xpad, k, axis=1)
    out = windows @ w.data + b.data  # (B, n, F)

    def vjp(g):
        gb = g if batched else g[None, :, :]
        gw = np.tensordot(windows, gb, axes=([0, 1], [0, 1]))  # (k, F)
        gbias = gb.sum(axis=(0, 1))
        gxpad = np.zeros_like(xpad)
        for j in range(k):
            gxpad[:, j : j + n] += gb @ w.data[j]
        gx = gxpad[:, pad : pad + n]
        return (gx if batched else gx[0], gw, gbias)

    return Tensor(out if batched else out[0], (x, w, b), vjp)


def flatten(a: Tensor) -> Tensor:
    """Collapse everything but a leading batch axis (2-D stays, 3-D -> 2-D)."""
    if a.data.ndim <= 1:
        return a
    if a.data.ndim == 2:
        new_shape = (a.data.size,)
    else:
        new_shape = (a.shape[0], -1)
    out = a.data.reshape(new_shape)
    return Tensor(out, (a,), lambda g: (g.reshape(a.shape),))


def concat(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate along the last axis."""
    if not parts:
        raise ValueError("concat of nothing")
    out = np.concatenate([p.data for p in parts], axis=-1)
    widths = [p.shape[-1] for p in parts]
    edges = np.cumsum([0] + widths)

    def vjp(g):
        return tuple(g[..., edges[i] : edges[i + 1]] for i in range(len(parts)))

    return Tensor(out, tuple(parts), vjp)


def slice_last(a: Tensor, start: int, stop: int) -> Tensor:
    """Slice along the last axis; the gradient scatters back zero-padded."""
    out = a.data[..., start:stop]

    def vjp(g):
        full = np.zeros(a.shape)
        full[..., start:stop] = g
        return (full,)

    return Tensor(out, (a,), vjp)


def cross_entropy_logits(logits: Tensor, target_idx: np.ndarray) -> Tensor:
    """Per-row cross entropy logsumexp(logits) - logits[target].

    logits: (B, n) with integer targets (B,). Returns (B,). Stable via the
    max-shift; the gradient is softmax(logits) minus the one-hot target.
    """
    z = logits.data
    if z.ndim != 2:
        raise ValueError(f"cross_entropy_logits expects (B, n), got {logits.shape}")
    idx = np.asarray(target_idx)
    if idx.shape != (z.shape[0],):
        raise ValueError("target index shape must match the batch")
    zmax = z.max(axis=1, keepdims=True)
    ez = np.exp(z - zmax)
    sez = ez.sum(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(sez[:, 0])
    rows = np.arange(z.shape[0])
    out = lse - z[rows, idx]

    def vjp(g):
        soft = ez / sez
        gi = soft * g[:, None]
        gi[rows, idx] -= g
        return (gi,)

    return Tensor(out, (logits,), vjp)


def grad_check(
    fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    epsilon: float = 1e-6,
    floor: float = 1e-3,
    max_elements_per_param: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Worst relative error between analytic and central-difference gradients.

    fn rebuilds the scalar loss from the current parameter data on every
    call. When max_elements_per_param is set, a seeded random subset of
    each parameter's elements is checked instead of all of them.

    Each element's error is |analytic - numeric| / max(|analytic|,
    |numeric|, floor). The floor keeps the ratio meaningful where both
    derivatives sit inside the difference quotient's own rounding noise,
    which is about 1e-16 * |f| / epsilon in absolute terms; pick epsilon
    so that noise stays well under floor for your loss magnitude.
    """
    if not 0.0 < epsilon <= 1e-2:
        raise ValueError(f"epsilon {epsilon} outside (0, 1e-2]")
    if floor <= 0.0:
        raise ValueError("floor must be > 0")
    out = fn()
    if out.data.size != 1:
        raise ValueError("grad_check needs a scalar-valued function")
    for p in params:
        p.zero_grad()
    out = fn()
    out.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    worst = 0.0
    for p, a in zip(params, analytic):
        flat = p.data.reshape(-1)
        n = flat.size
        if max_elements_per_param is not None and n > max_elements_per_param:
            picker = rng if rng is not None else np.random.default_rng(0)
            indices = picker.choice(n, size=max_elements_per_param, replace=False)
        else:
            indices = range(n)
        aflat = a.reshape(-1)
        for i in indices:
            orig = flat[i]
            flat[i] = orig + epsilon
            fplus = float(fn().data)
            flat[i] = orig - epsilon
            fminus = float(fn().data)
            flat[i] = orig
            numeric = (fplus - fminus) / (2.0 * epsilon)
            denom = max(abs(aflat[i]), abs(numeric), floor)
            worst = max(worst, abs(aflat[i] - numeric) / denom)
    return worst
