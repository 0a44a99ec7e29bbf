"""Rectified-stereo view synthesis and photometric supervision."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .numcore import Tensor, absolute, clip, fold_edges, record, reduce

logger = logging.getLogger(__name__)

DISP_EPS = 1e-4
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2
BETA_SSIM = 0.425
BETA_L1 = 0.15


@dataclass(frozen=True)
class CameraModel:
    """Pinhole intrinsics plus a horizontal stereo baseline.

    ``max_disp_px`` maps a normalized disparity of 1 to a pixel shift.
    ``direction`` is the sign of the source camera offset along x (+1 when the
    source is the right view).
    """

    focal: float = 100.0
    cx: float = 64.0
    cy: float = 32.0
    baseline: float = 0.54
    max_disp_px: float = 8.0
    direction: int = 1

    def __post_init__(self):
        if self.focal <= 0 or self.baseline <= 0 or self.max_disp_px <= 0:
            raise ValueError("focal, baseline and max_disp_px must be positive")
        if self.direction not in (1, -1):
            raise ValueError("direction must be +1 or -1")

    @property
    def pose_translation(self) -> tuple[float, float, float]:
        return (self.direction * self.baseline, 0.0, 0.0)


def disparity_to_depth(disp, cam: CameraModel) -> np.ndarray:
    """Depth in meters from a normalized disparity map; values below 1e-4 are clamped."""
    d = np.asarray(disp.data if isinstance(disp, Tensor) else disp, dtype=np.float64)
    low = d < DISP_EPS
    if low.any():
        logger.debug("clamped %d disparity pixels to %g", int(low.sum()), DISP_EPS)
    d = np.maximum(d, DISP_EPS)
    return (cam.focal * cam.baseline) / (d * cam.max_disp_px)


def clamped_count(disp) -> int:
    d = np.asarray(disp.data if isinstance(disp, Tensor) else disp)
    return int((d < DISP_EPS).sum())


def warp(source, disp, cam: CameraModel) -> Tensor:
    """Sample ``source`` (..., H, W, C) at x - s * D * max_disp_px along each row.

    Bilinear along x with border replication. Differentiable w.r.t. both the
    source image and the (..., H, W) disparity map.
    """
    src = source if isinstance(source, Tensor) else Tensor(source)
    d = disp if isinstance(disp, Tensor) else Tensor(disp)
    if src.shape[:-1] != d.shape:
        raise ValueError(f"source {src.shape} and disparity {d.shape} disagree")
    w = src.shape[-2]
    scale = cam.direction * cam.max_disp_px
    cols = np.arange(w, dtype=np.float64)
    pos = cols - scale * d.data
    inside = (pos >= 0.0) & (pos <= w - 1)
    pos_c = np.clip(pos, 0.0, w - 1)
    x0 = np.minimum(np.floor(pos_c).astype(np.intp), max(w - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    frac = (pos_c - x0)[..., None]
    v0 = np.take_along_axis(src.data, x0[..., None], axis=-2)
    v1 = np.take_along_axis(src.data, x1[..., None], axis=-2)
    out = v0 + frac * (v1 - v0)

    def back(g):
        gs = None
        if src.requires_grad:
            gs = np.zeros_like(src.data)
            lead = np.indices(x0.shape)
            np.add.at(gs, (*lead[:-1], x0), g * (1 - frac))
            np.add.at(gs, (*lead[:-1], x1), g * frac)
        gd = None
        if d.requires_grad:
            slope = ((v1 - v0) * g).sum(axis=-1)
            gd = np.where(inside, slope * (-scale), 0.0)
        return gs, gd

    return record(out, (src, d), back)


def _box3(x: Tensor) -> Tensor:
    """3x3 mean filter with replicate padding over the (H, W) axes."""
    h, w = x.shape[-3], x.shape[-2]
    spec = [(0, 0)] * (x.ndim - 3) + [(1, 1), (1, 1), (0, 0)]
    xp = np.pad(x.data, spec, mode="edge")
    out = np.zeros_like(x.data)
    for i in range(3):
        for j in range(3):
            out += xp[..., i : i + h, j : j + w, :]
    out /= 9.0

    def back(g):
        gp = np.zeros_like(xp)
        for i in range(3):
            for j in range(3):
                gp[..., i : i + h, j : j + w, :] += g
        return (fold_edges(fold_edges(gp, -2, 1), -3, 1) / 9.0,)

    return record(out, (x,), back)


def ssim(a, b) -> Tensor:
    """Per-pixel SSIM of two (..., H, W, C) images, averaged over channels."""
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = b if isinstance(b, Tensor) else Tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    mu_a, mu_b = _box3(a), _box3(b)
    var_a = _box3(a * a) - mu_a * mu_a
    var_b = _box3(b * b) - mu_b * mu_b
    cov = _box3(a * b) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2)
    den = (mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return reduce("mean", clip(num / den, -1.0, 1.0), -1)


def photometric_map(target, warped) -> Tensor:
    """Per-pixel 0.425 * (1 - SSIM) + 0.15 * |I - I~|, shape (..., H, W)."""
    s = ssim(target, warped)
    l1 = reduce("mean", absolute(target - warped), -1)
    return BETA_SSIM * (1.0 - s) + BETA_L1 * l1


def photometric_loss(target, warped) -> Tensor:
    return reduce("mean", photometric_map(target, warped))
