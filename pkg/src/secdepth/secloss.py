"""Self-evolution contrastive loss with its margin and weight schedules."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .distbin import js_divergence
from .numcore import Tensor, absolute, maximum, reduce


@dataclass(frozen=True)
class ScheduleState:
    """Immutable snapshot of every schedule scalar at one optimizer step."""

    t: int = 0
    T: int = 1
    e: int = 0
    a: float = 0.05
    c: float = 0.001
    alpha2: float = 0.005
    delta: float = 1e-4
    w_s: float = 0.01
    e_a: int = 5
    e_b: int = 15
    S: int = 5
    decay_rate: float = 15.0
    decay: str = "exp"

    def __post_init__(self):
        if not 0 <= self.t <= self.T:
            raise ValueError(f"step t={self.t} outside [0, T={self.T}]")
        if self.S < 1:
            raise ValueError("S must be >= 1")
        if self.decay not in ("exp", "linear"):
            raise ValueError(f"unknown alpha1 decay {self.decay!r}")

    def at(self, t: int, e: int) -> "ScheduleState":
        return replace(self, t=t, e=e)


def alpha1(sched: ScheduleState) -> float:
    """a * exp(-15 t / T) + c (or the linear-decay ablation a * (1 - t/T) + c)."""
    if sched.T <= 0:
        raise ValueError("T must be positive")
    frac = sched.t / sched.T
    if sched.decay == "linear":
        return sched.a * (1.0 - frac) + sched.c
    return sched.a * math.exp(-sched.decay_rate * frac) + sched.c


def contrastive_weight(sched: ScheduleState) -> float:
    """Piecewise epoch ramp; note the jump at e = e_b (first branch is inclusive)."""
    if sched.e <= sched.e_b:
        return sched.w_s * (1 + max(0, sched.e - sched.e_a))
    return sched.w_s * (sched.e_b - sched.e_a)


def margin_hinge(js_an, alpha: float):
    """max(alpha - js_an, 0); works on floats and on tensors."""
    if isinstance(js_an, Tensor):
        return maximum(alpha - js_an, 0.0)
    if js_an < 0:
        raise ValueError("divergence must be non-negative")
    return max(alpha - js_an, 0.0)


@dataclass
class TripletBatch:
    """Anchor distribution (on the tape) with detached positive and negatives.

    Distributions are (..., N); a leading batch axis is averaged in the loss.
    """

    anchor: Tensor
    positive: np.ndarray
    negatives: Sequence[np.ndarray]

    def __post_init__(self):
        self.positive = _detached(self.positive)
        self.negatives = [_detached(n) for n in self.negatives]
        n = self.anchor.shape[-1]
        for other in [self.positive, *self.negatives]:
            if other.shape[-1] != n:
                raise ValueError("all distributions must share the bin count")

    @property
    def M(self) -> int:
        return len(self.negatives)


def _detached(x) -> np.ndarray:
    return np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)


@dataclass(frozen=True)
class LossTerms:
    """Which parts of the contrastive objective are active (ablation axes)."""

    use_delta1: bool = True
    use_delta2: bool = True


def sec_loss_from_divergences(
    d_ap: Tensor,
    d_an: Sequence[Tensor],
    alpha_1: float,
    alpha_2: float,
    delta: float,
    terms: LossTerms = LossTerms(),
) -> Tensor:
    """d_ap + (1/M) * sum_k [delta * hinge(alpha_1, d_an^k) + d_an^k * hinge(alpha_2, d_an^k)]."""
    if not d_an:
        raise ValueError("at least one negative is required")
    loss = d_ap
    neg = None
    for d in d_an:
        term = None
        if terms.use_delta1:
            term = delta * margin_hinge(d, alpha_1)
        if terms.use_delta2:
            t2 = d * margin_hinge(d, alpha_2)
            term = t2 if term is None else term + t2
        if term is not None:
            neg = term if neg is None else neg + term
    if neg is not None:
        loss = loss + neg * (1.0 / len(d_an))
    return loss


def sec_loss(
    batch: TripletBatch, sched: ScheduleState, terms: LossTerms = LossTerms()
) -> Tensor:
    """Contrastive loss over distributions; only the anchor carries gradients."""
    if batch.M == 0:
        raise ValueError("M must be >= 1")
    d_ap = js_divergence(batch.anchor, batch.positive)
    d_an = [js_divergence(batch.anchor, n) for n in batch.negatives]
    loss = sec_loss_from_divergences(d_ap, d_an, alpha1(sched), sched.alpha2, sched.delta, terms)
    return reduce("mean", loss)


def pixel_distance(a: Tensor, b) -> Tensor:
    """Mean absolute disparity difference per map; the direct-alignment distance."""
    b = Tensor(_detached(b))
    return reduce("mean", absolute(a - b), (-2, -1))


def sec_loss_pixel(
    anchor: Tensor,
    positive,
    negatives: Sequence,
    sched: ScheduleState,
    terms: LossTerms | None = LossTerms(),
) -> Tensor:
    """Same objective with pixel-level disparity distance instead of distribution JS.

    ``terms=None`` keeps only the anchor-positive alignment.
    """
    d_ap = pixel_distance(anchor, positive)
    if terms is None:
        return reduce("mean", d_ap)
    d_an = [pixel_distance(anchor, n) for n in negatives]
    loss = sec_loss_from_divergences(d_ap, d_an, alpha1(sched), sched.alpha2, sched.delta, terms)
    return reduce("mean", loss)


def js_scalar(p, q) -> float:
    return float(np.mean(js_divergence(_detached(p), _detached(q)).data))
