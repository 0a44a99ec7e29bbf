"""Soft-binned disparity distributions and the Jensen-Shannon divergence."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .numcore import Tensor, record, reduce, reshape

LN2 = math.log(2.0)


@dataclass(frozen=True)
class BinSpec:
    """N equal-width bins over [0, 1] with Gaussian kernel width 1/(2N)."""

    n_bins: int = 32

    def __post_init__(self):
        if self.n_bins < 1:
            raise ValueError("n_bins must be >= 1")

    @property
    def centers(self) -> np.ndarray:
        return (np.arange(self.n_bins) + 0.5) / self.n_bins

    @property
    def sigma(self) -> float:
        return 1.0 / (2 * self.n_bins)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def soft_bin(disp, spec: BinSpec = BinSpec(), pixel_axes: int = 2) -> Tensor:
    """Normalized histogram of a disparity map with a Gaussian membership kernel.

    The trailing ``pixel_axes`` axes are aggregated; any leading axes (a batch)
    are kept, so a (B, H, W) input yields a (B, N) stack of distributions.
    """
    d = _as_tensor(disp)
    sigma = spec.sigma
    norm = 1.0 / (sigma * math.sqrt(2.0 * math.pi))
    diff = d.data[..., None] - spec.centers
    weights = norm * np.exp(diff * diff / (-2.0 * sigma * sigma))

    # kernel evaluation is one primitive so the (..., H, W, N) graph stays small
    w = record(weights, (d,), lambda g: ((g * weights * (-diff / sigma**2)).sum(axis=-1),))
    axes = tuple(range(d.ndim - pixel_axes, d.ndim))
    total = reduce("sum", w, axes)
    mass = reduce("sum", total, -1)
    if (mass.data <= 0).any():
        raise ValueError("soft_bin aggregate is zero")
    return total / reshape(mass, mass.shape + (1,))


def soft_bin_naive(disp, spec: BinSpec = BinSpec()) -> np.ndarray:
    """Double loop over pixels and bins; an independent check of :func:`soft_bin`."""
    d = np.asarray(disp, dtype=np.float64).reshape(-1)
    sigma = spec.sigma
    centers = spec.centers
    hist = [0.0] * spec.n_bins
    for value in d:
        for n in range(spec.n_bins):
            hist[n] += math.exp(-((value - centers[n]) ** 2) / (2 * sigma**2)) / (
                sigma * math.sqrt(2 * math.pi)
            )
    total = sum(hist)
    return np.array([h / total for h in hist])


def js_divergence(p, q) -> Tensor:
    """JS(P || Q) in nats along the last axis; 0 * ln 0 terms count as 0.

    Leading axes are kept (one divergence per distribution pair).
    """
    p, q = _as_tensor(p), _as_tensor(q)
    if p.shape[-1] != q.shape[-1]:
        raise ValueError(f"bin count mismatch: {p.shape[-1]} vs {q.shape[-1]}")
    pd, qd = np.broadcast_arrays(p.data, q.data)
    m = 0.5 * (pd + qd)
    with np.errstate(divide="ignore", invalid="ignore"):
        lp = np.where(pd > 0, np.log(np.where(pd > 0, pd, 1.0)) - np.log(np.where(m > 0, m, 1.0)), 0.0)
        lq = np.where(qd > 0, np.log(np.where(qd > 0, qd, 1.0)) - np.log(np.where(m > 0, m, 1.0)), 0.0)
    out = 0.5 * (pd * lp).sum(axis=-1) + 0.5 * (qd * lq).sum(axis=-1)
    out = np.maximum(out, 0.0)

    def back(g):
        g = np.asarray(g)[..., None]
        gp = _reduce_to(0.5 * g * lp, p.shape) if p.requires_grad else None
        gq = _reduce_to(0.5 * g * lq, q.shape) if q.requires_grad else None
        return gp, gq

    return record(out, (p, q), back)


def _reduce_to(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def is_distribution(p, atol: float = 1e-9) -> bool:
    arr = np.asarray(p.data if isinstance(p, Tensor) else p)
    return bool((arr >= 0).all() and np.allclose(arr.sum(axis=-1), 1.0, rtol=0, atol=atol))
