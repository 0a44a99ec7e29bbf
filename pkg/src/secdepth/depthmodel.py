"""Tiny encoder-decoder disparity network and its snapshot format."""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

from .numcore import Tensor, concat, conv2d, maximum, sigmoid, upsample_nearest

# name, kernel shape (kh, kw, cin, cout), stride
LAYERS = (
    ("enc1", (3, 3, 3, 8), 1),
    ("enc2", (3, 3, 8, 16), 2),
    ("enc3", (3, 3, 16, 16), 2),
    ("dec2", (3, 3, 32, 8), 1),
    ("head", (3, 3, 16, 1), 1),
)

_HEADER = struct.Struct("<8sQ")


class FingerprintError(ValueError):
    pass


def layer_fingerprint(layers=LAYERS) -> bytes:
    text = ";".join(f"{n}:{'x'.join(map(str, s))}:{st}" for n, s, st in layers)
    return hashlib.sha256(text.encode()).digest()[:8]


@dataclass
class ModelSnapshot:
    params: np.ndarray
    fingerprint: bytes

    def to_bytes(self) -> bytes:
        body = np.ascontiguousarray(self.params, dtype="<f8").tobytes()
        return _HEADER.pack(self.fingerprint, self.params.size) + body

    @classmethod
    def from_bytes(cls, blob: bytes) -> "ModelSnapshot":
        if len(blob) < _HEADER.size:
            raise ValueError("truncated snapshot header")
        fp, count = _HEADER.unpack_from(blob)
        body = blob[_HEADER.size :]
        if len(body) != 8 * count:
            raise ValueError(f"snapshot declares {count} params, holds {len(body) // 8}")
        return cls(np.frombuffer(body, dtype="<f8").astype(np.float64), fp)

    def blend(self, other: "ModelSnapshot", omega: float) -> "ModelSnapshot":
        """omega * self + (1 - omega) * other."""
        if self.fingerprint != other.fingerprint or self.params.size != other.params.size:
            raise FingerprintError("cannot blend snapshots of different architectures")
        return ModelSnapshot(omega * self.params + (1.0 - omega) * other.params, self.fingerprint)


class DepthNet:
    """Image (..., H, W, 3) -> disparity (..., H, W) in (0, 1).

    Two stride-2 encoder stages, nearest-neighbour decoding with skip
    connections, sigmoid head.
    """

    def __init__(self, params: dict[str, Tensor] | None = None):
        self.params: dict[str, Tensor] = params or {}
        self.fingerprint = layer_fingerprint()

    @classmethod
    def init(cls, seed: int) -> "DepthNet":
        rng = np.random.default_rng(seed)
        params = {}
        for name, shape, _ in LAYERS:
            fan_in = shape[0] * shape[1] * shape[2]
            bound = np.sqrt(6.0 / fan_in)
            if name == "head":
                bound = np.sqrt(3.0 / fan_in)
            params[f"{name}.w"] = Tensor(rng.uniform(-bound, bound, shape), requires_grad=True)
            params[f"{name}.b"] = Tensor(np.zeros(shape[3]), requires_grad=True)
        return cls(params)

    def parameters(self) -> list[Tensor]:
        return [self.params[k] for k in self.param_names()]

    @staticmethod
    def param_names() -> list[str]:
        return [f"{n}.{kind}" for n, _, _ in LAYERS for kind in ("w", "b")]

    def num_params(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def _conv(self, name: str, x: Tensor, stride: int) -> Tensor:
        return conv2d(x, self.params[f"{name}.w"], stride=stride, padding=1, mode="replicate") + self.params[f"{name}.b"]

    def forward(self, image) -> Tensor:
        x = image if isinstance(image, Tensor) else Tensor(image)
        h, w = x.shape[-3], x.shape[-2]
        if h % 4 or w % 4:
            raise ValueError(f"spatial size {h}x{w} must be divisible by 4")
        e1 = maximum(self._conv("enc1", x, 1), 0.0)
        e2 = maximum(self._conv("enc2", e1, 2), 0.0)
        e3 = maximum(self._conv("enc3", e2, 2), 0.0)
        d2 = maximum(self._conv("dec2", concat([upsample_nearest(e3), e2], -1), 1), 0.0)
        logits = self._conv("head", concat([upsample_nearest(d2), e1], -1), 1)
        return sigmoid(logits)[..., 0]

    __call__ = forward

    def export_snapshot(self) -> ModelSnapshot:
        flat = np.concatenate([p.data.reshape(-1) for p in self.parameters()])
        return ModelSnapshot(flat.copy(), self.fingerprint)

    def load_snapshot(self, snap: ModelSnapshot) -> None:
        shapes = self.shapes()
        count = sum(int(np.prod(s)) for s in shapes.values())
        if snap.fingerprint != self.fingerprint or snap.params.size != count:
            raise FingerprintError("snapshot fingerprint does not match this architecture")
        offset = 0
        for name in self.param_names():
            n = int(np.prod(shapes[name]))
            values = snap.params[offset : offset + n].reshape(shapes[name]).copy()
            self.params[name] = Tensor(values, requires_grad=True)
            offset += n

    @classmethod
    def import_snapshot(cls, snap: ModelSnapshot) -> "DepthNet":
        net = cls()
        net.load_snapshot(snap)
        return net

    @staticmethod
    def shapes() -> dict[str, tuple[int, ...]]:
        out = {}
        for name, shape, _ in LAYERS:
            out[f"{name}.w"] = shape
            out[f"{name}.b"] = (shape[3],)
        return out


def init(seed: int) -> DepthNet:
    return DepthNet.init(seed)
