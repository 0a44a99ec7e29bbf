"""Procedural stereo scenes with exact disparity, plus weather degradations.

Scenes are layered: a textured background whose disparity grows with image
row (a ground-plane stand-in) and 3-8 textured fronto-parallel rectangles.
Each layer carries a continuous texture function, so both views are rendered
analytically and the right view is exactly the left view shifted by the
layer's disparity. Near rectangles are warmer in tint, which gives the
monocular network a learnable appearance cue.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from .geomphoto import CameraModel, disparity_to_depth

WEATHER_KINDS = ("fog", "rain", "snow")

_FAR_TINT = np.array([0.35, 0.55, 0.85])
_NEAR_TINT = np.array([0.95, 0.55, 0.25])


@dataclass
class WeatherParams:
    fog_beta: float = 0.06
    fog_airlight: float = 0.85
    rain_count: int = 80
    rain_length: tuple[int, int] = (6, 14)
    rain_intensity: float = 0.55
    snow_count: int = 60
    snow_radius: tuple[float, float] = (0.8, 2.2)
    snow_brightness: float = 0.9
    blur_sigma: tuple[float, float] = (0.5, 1.5)
    erase_count: int = 1
    erase_size: tuple[float, float] = (0.1, 0.3)

    def scaled(self, severity: float) -> "WeatherParams":
        """Magnitudes scaled linearly by ``severity`` in [0, 1]."""
        if not 0.0 <= severity <= 1.0:
            raise ValueError("severity must lie in [0, 1]")
        return WeatherParams(
            fog_beta=self.fog_beta * severity,
            fog_airlight=self.fog_airlight,
            rain_count=int(round(self.rain_count * severity)),
            rain_length=self.rain_length,
            rain_intensity=self.rain_intensity,
            snow_count=int(round(self.snow_count * severity)),
            snow_radius=self.snow_radius,
            snow_brightness=self.snow_brightness,
            blur_sigma=self.blur_sigma,
            erase_count=self.erase_count,
            erase_size=self.erase_size,
        )


@dataclass
class SceneSample:
    image: np.ndarray  # target (left) view, H x W x 3
    source: np.ndarray  # source (right) view
    disparity: np.ndarray  # H x W in [0, 1]
    valid: np.ndarray  # non-occluded target pixels
    seed: int
    augmented: np.ndarray | None = None
    weather: dict = field(default_factory=dict)

    @property
    def shape(self) -> tuple[int, int]:
        return self.disparity.shape


class _Texture:
    """Two-octave value noise evaluated at continuous (u, y) coordinates."""

    def __init__(self, rng: np.random.Generator, u_range: tuple[float, float], height: int):
        self.u0 = u_range[0]
        self.octaves = []
        for spacing, amp in ((8.0, 0.6), (4.0, 0.4)):
            nu = int(np.ceil((u_range[1] - u_range[0]) / spacing)) + 3
            ny = int(np.ceil(height / spacing)) + 3
            self.octaves.append((spacing, amp, rng.uniform(-1.0, 1.0, (ny, nu))))

    def __call__(self, u: np.ndarray, y: np.ndarray) -> np.ndarray:
        total = np.zeros(np.broadcast(u, y).shape)
        for spacing, amp, grid in self.octaves:
            gu = (u - self.u0) / spacing
            gy = y / spacing
            iu = np.floor(gu).astype(int)
            iy = np.floor(gy).astype(int)
            fu = _smooth(gu - iu)
            fy = _smooth(gy - iy)
            iu = np.clip(iu, 0, grid.shape[1] - 2)
            iy = np.clip(iy, 0, grid.shape[0] - 2)
            top = grid[iy, iu] * (1 - fu) + grid[iy, iu + 1] * fu
            bot = grid[iy + 1, iu] * (1 - fu) + grid[iy + 1, iu + 1] * fu
            total = total + amp * (top * (1 - fy) + bot * fy)
        return total


def _smooth(t: np.ndarray) -> np.ndarray:
    return t * t * (3.0 - 2.0 * t)


def _tint(disp: float | np.ndarray) -> np.ndarray:
    d = np.asarray(disp, dtype=np.float64)[..., None]
    return _FAR_TINT + (_NEAR_TINT - _FAR_TINT) * d


@dataclass
class _Layer:
    disparity: np.ndarray | float  # per-row array for background, scalar for rectangles
    box: tuple[float, float, int, int] | None  # x0, x1 (continuous), y0, y1
    texture: _Texture
    contrast: float


def _layout(seed: int, h: int, w: int, cam: CameraModel) -> list[_Layer]:
    rng = np.random.default_rng(seed)
    margin = cam.max_disp_px + 8.0
    rows = np.arange(h, dtype=np.float64)
    bg_disp = 0.08 + 0.32 * rows / max(h - 1, 1)
    layers = [_Layer(bg_disp, None, _Texture(rng, (-margin, w + margin), h), 0.25)]
    count = int(rng.integers(3, 9))
    rects = []
    for _ in range(count):
        d = float(rng.uniform(0.3, 0.95))
        rw = rng.uniform(0.12, 0.3) * w * (0.6 + 0.6 * d)
        rh = rng.uniform(0.2, 0.45) * h * (0.6 + 0.6 * d)
        x0 = rng.uniform(-0.1 * w, w - 0.5 * rw)
        y0 = int(rng.integers(0, max(h - int(rh), 1)))
        tex = _Texture(rng, (x0 - 4.0, x0 + rw + 4.0), h)
        rects.append(_Layer(d, (x0, x0 + rw, y0, min(h, y0 + int(rh) + 1)), tex, float(rng.uniform(0.2, 0.35))))
    rects.sort(key=lambda layer: layer.disparity)
    return layers + rects


def _render(layers: list[_Layer], h: int, w: int, cam: CameraModel, view: str):
    """Paint layers far-to-near; returns image, disparity and layer-id maps."""
    shift_sign = 0.0 if view == "left" else cam.direction * cam.max_disp_px
    xs = np.arange(w, dtype=np.float64)[None, :]
    ys = np.arange(h, dtype=np.float64)[:, None]
    image = np.zeros((h, w, 3))
    disp = np.zeros((h, w))
    ids = np.zeros((h, w), dtype=np.int64)
    for k, layer in enumerate(layers):
        if layer.box is None:
            d = np.asarray(layer.disparity)[:, None] * np.ones((1, w))
            mask = np.ones((h, w), dtype=bool)
        else:
            d = np.full((h, w), float(layer.disparity))
            x0, x1, y0, y1 = layer.box
            u = xs + shift_sign * d[:1]
            mask = (u >= x0) & (u < x1) & (ys >= y0) & (ys < y1)
        u = xs + shift_sign * d
        tex = layer.texture(u, ys * np.ones((1, w)))
        color = _tint(d) * (1.0 + layer.contrast * tex[..., None] / 0.6)
        image[mask] = color[mask]
        disp[mask] = d[mask]
        ids[mask] = k
    return np.clip(image, 0.0, 1.0), disp, ids


def generate_scene(seed: int, size: tuple[int, int] = (64, 128), cam: CameraModel | None = None) -> SceneSample:
    h, w = size
    if h < 16 or w < 16:
        raise ValueError("scene must be at least 16x16")
    cam = cam or CameraModel(cx=w / 2, cy=h / 2)
    layers = _layout(seed, h, w, cam)
    left, disp, left_ids = _render(layers, h, w, cam, "left")
    right, _, right_ids = _render(layers, h, w, cam, "right")
    # a target pixel is valid when both bilinear taps in the source hit the same layer
    pos = np.arange(w)[None, :] - cam.direction * cam.max_disp_px * disp
    inside = (pos >= 0) & (pos <= w - 1)
    p = np.clip(pos, 0, w - 1)
    x0 = np.floor(p).astype(int)
    x1 = np.minimum(x0 + 1, w - 1)
    rows = np.arange(h)[:, None]
    valid = inside & (right_ids[rows, x0] == left_ids) & (right_ids[rows, x1] == left_ids)
    return SceneSample(left, right, disp, valid, seed)


# ------------------------------------------------------------------ weather


def apply_fog(image: np.ndarray, disparity: np.ndarray, params: WeatherParams, cam: CameraModel | None = None) -> np.ndarray:
    """Koschmieder attenuation with airlight, driven by ground-truth depth."""
    if params.fog_beta < 0 or not 0 <= params.fog_airlight <= 1:
        raise ValueError("fog needs beta >= 0 and airlight in [0, 1]")
    cam = cam or CameraModel()
    depth = disparity_to_depth(disparity, cam)
    return fog_from_depth(image, depth, params.fog_beta, params.fog_airlight)


def fog_from_depth(image: np.ndarray, depth: np.ndarray, beta: float, airlight: float) -> np.ndarray:
    trans = np.exp(-beta * np.asarray(depth))[..., None]
    return np.clip(image * trans + airlight * (1.0 - trans), 0.0, 1.0)


def apply_rain(image: np.ndarray, params: WeatherParams, seed: int) -> np.ndarray:
    """Semi-transparent diagonal streaks; only stamped pixels change."""
    rng = np.random.default_rng(seed)
    out = image.copy()
    h, w = image.shape[:2]
    for _ in range(params.rain_count):
        length = int(rng.integers(params.rain_length[0], params.rain_length[1] + 1))
        y0 = int(rng.integers(-length, h))
        x0 = int(rng.integers(0, w + length // 2))
        steps = np.arange(length)
        ys = y0 + steps
        xs = x0 - steps // 2
        keep = (ys >= 0) & (ys < h) & (xs >= 0) & (xs < w)
        ys, xs = ys[keep], xs[keep]
        a = params.rain_intensity
        out[ys, xs] = (1.0 - a) * out[ys, xs] + a * 0.9
    return np.clip(out, 0.0, 1.0)


def apply_snow(image: np.ndarray, params: WeatherParams, seed: int) -> np.ndarray:
    """Bright Gaussian flakes screen-blended onto the image."""
    rng = np.random.default_rng(seed)
    out = image.copy()
    h, w = image.shape[:2]
    yy, xx = np.mgrid[0:h, 0:w]
    for _ in range(params.snow_count):
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        r = rng.uniform(*params.snow_radius)
        y0, y1 = max(int(cy - 3 * r), 0), min(int(cy + 3 * r) + 2, h)
        x0, x1 = max(int(cx - 3 * r), 0), min(int(cx + 3 * r) + 2, w)
        if y0 >= y1 or x0 >= x1:
            continue
        g = np.exp(-((yy[y0:y1, x0:x1] - cy) ** 2 + (xx[y0:y1, x0:x1] - cx) ** 2) / (2 * r * r))
        a = (params.snow_brightness * g)[..., None]
        out[y0:y1, x0:x1] = out[y0:y1, x0:x1] + (1.0 - out[y0:y1, x0:x1]) * a
    return np.clip(out, 0.0, 1.0)


def extra_augment(image: np.ndarray, seed: int, params: WeatherParams | None = None) -> np.ndarray:
    """Random erasing (fill = per-channel mean) and Gaussian blur, each with p = 1/2."""
    params = params or WeatherParams()
    rng = np.random.default_rng(seed)
    do_erase = bool(rng.random() < 0.5)
    do_blur = bool(rng.random() < 0.5)
    out = image.copy()
    h, w = image.shape[:2]
    if do_erase:
        for _ in range(params.erase_count):
            eh = max(1, int(h * rng.uniform(*params.erase_size)))
            ew = max(1, int(w * rng.uniform(*params.erase_size)))
            y0 = int(rng.integers(0, h - eh + 1))
            x0 = int(rng.integers(0, w - ew + 1))
            out[y0 : y0 + eh, x0 : x0 + ew] = out.mean(axis=(0, 1))
    if do_blur:
        sigma = float(rng.uniform(*params.blur_sigma))
        out = gaussian_filter(out, sigma=(sigma, sigma, 0), mode="nearest")
    return out


def degrade(
    sample: SceneSample,
    kind: str,
    severity: float,
    seed: int,
    params: WeatherParams | None = None,
    cam: CameraModel | None = None,
    extra: bool = False,
) -> np.ndarray:
    """Degraded copy of the target view; ground truth is untouched."""
    if kind not in WEATHER_KINDS:
        raise ValueError(f"unknown weather kind {kind!r}")
    p = (params or WeatherParams()).scaled(severity)
    h, w = sample.shape
    cam = cam or CameraModel(cx=w / 2, cy=h / 2)
    if kind == "fog":
        out = apply_fog(sample.image, sample.disparity, p, cam)
    elif kind == "rain":
        out = apply_rain(sample.image, p, seed)
    else:
        out = apply_snow(sample.image, p, seed)
    if extra:
        out = extra_augment(out, seed + 7919, p)
    return out


def sample_weather(rng: np.random.Generator, severity_range=(0.5, 1.0)) -> tuple[str, float]:
    kind = WEATHER_KINDS[int(rng.integers(len(WEATHER_KINDS)))]
    return kind, float(rng.uniform(*severity_range))


def make_dataset(
    seed: int,
    count: int,
    size: tuple[int, int] = (64, 128),
    cam: CameraModel | None = None,
    with_weather: bool = True,
    severity_range=(0.5, 1.0),
) -> list[SceneSample]:
    """Deterministic list of scenes; each gets a weather kind and degraded view."""
    rng = np.random.default_rng(seed)
    scene_seeds = rng.integers(0, 2**31 - 1, size=count)
    out = []
    for i, s in enumerate(scene_seeds):
        sample = generate_scene(int(s), size, cam)
        if with_weather:
            kind = WEATHER_KINDS[i % len(WEATHER_KINDS)]
            severity = float(rng.uniform(*severity_range))
            sample.augmented = degrade(sample, kind, severity, int(s) + 1, cam=cam)
            sample.weather = {"kind": kind, "severity": severity}
        out.append(sample)
    return out
