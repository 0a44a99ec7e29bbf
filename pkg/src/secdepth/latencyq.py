"""Queue of historical ("latency") model snapshots used to produce negatives."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .depthmodel import DepthNet, FingerprintError, ModelSnapshot
from .numcore import Tensor, no_grad


@dataclass
class LatencyQueue:
    slots: list[ModelSnapshot]
    omega: float = 0.01
    interval: int = 200
    cursor: int = 0
    update_count: int = 0
    history: list[tuple[int, str]] = field(default_factory=list)

    def __post_init__(self):
        if not self.slots:
            raise ValueError("queue needs at least one slot")
        if not 0 <= self.cursor < len(self.slots):
            raise ValueError("cursor out of range")

    @property
    def j(self) -> int:
        return len(self.slots)

    @classmethod
    def random(cls, j: int, seed: int, factory: Callable[[int], DepthNet] = DepthNet.init, **kw) -> "LatencyQueue":
        """Slots drawn from independent random initializations."""
        seeds = np.random.default_rng(seed).integers(0, 2**31 - 1, size=j)
        return cls([factory(int(s)).export_snapshot() for s in seeds], **kw)

    def ema_update(self, theta: ModelSnapshot) -> None:
        """slot[n] <- omega * slot[n] + (1 - omega) * theta, then advance the cursor."""
        slot = self.slots[self.cursor]
        if slot.fingerprint != theta.fingerprint or slot.params.size != theta.params.size:
            raise FingerprintError("live model does not match the queue architecture")
        self.slots[self.cursor] = slot.blend(theta, self.omega)
        self.cursor = (self.cursor + 1) % self.j
        self.update_count += 1

    # -- persistence

    def to_bytes(self) -> bytes:
        meta = json.dumps(
            {"omega": self.omega, "interval": self.interval, "cursor": self.cursor,
             "update_count": self.update_count, "history": self.history, "j": self.j},
            sort_keys=True,
        ).encode()
        parts = [struct.pack("<I", len(meta)), meta]
        for snap in self.slots:
            blob = snap.to_bytes()
            parts += [struct.pack("<Q", len(blob)), blob]
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "LatencyQueue":
        (n,) = struct.unpack_from("<I", blob)
        meta = json.loads(blob[4 : 4 + n])
        off = 4 + n
        slots = []
        for _ in range(meta["j"]):
            (size,) = struct.unpack_from("<Q", blob, off)
            off += 8
            slots.append(ModelSnapshot.from_bytes(blob[off : off + size]))
            off += size
        return cls(
            slots,
            omega=meta["omega"],
            interval=meta["interval"],
            cursor=meta["cursor"],
            update_count=meta["update_count"],
            history=[tuple(h) for h in meta["history"]],
        )


def _arr(x) -> np.ndarray:
    return np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)


def should_update(
    queue: LatencyQueue,
    t: int,
    d_a=None,
    d_p=None,
    negatives: Sequence | None = None,
) -> tuple[bool, str | None]:
    """Interval trigger every ``queue.interval`` steps, else the diversity test.

    Diversity fires when the mean over negatives of Var(D_a - D_n) drops below
    Var(D_a - D_p) (population variance over all pixels). Without a triplet only
    the interval trigger is evaluated.
    """
    if t % queue.interval == 0:
        return True, "interval"
    if d_a is None:
        return False, None
    if negatives is not None and len(negatives) == 0:
        raise ValueError("diversity test needs at least one negative")
    a = _arr(d_a)
    neg_var = float(np.mean([np.var(a - _arr(n)) for n in negatives]))
    pos_var = float(np.var(a - _arr(d_p)))
    if neg_var < pos_var:
        return True, "diversity"
    return False, None


def generate_negatives(
    queue: LatencyQueue,
    aug_images: Sequence,
    model_factory: Callable[[ModelSnapshot], DepthNet] = DepthNet.import_snapshot,
    rng: np.random.Generator | None = None,
) -> tuple[list[np.ndarray], list[int]]:
    """Run each image through a distinct, randomly permuted queue slot without gradients.

    Returns the disparity maps and the slot index used for each image.
    """
    if len(aug_images) != queue.j:
        raise ValueError(f"need exactly j={queue.j} images, got {len(aug_images)}")
    rng = rng or np.random.default_rng()
    order = [int(k) for k in rng.permutation(queue.j)]
    out = []
    with no_grad():
        for image, slot in zip(aug_images, order):
            net = model_factory(queue.slots[slot])
            out.append(net(image).data.copy())
    return out, order


def anchor_positive(model: DepthNet, image, image_aug) -> tuple[Tensor, np.ndarray]:
    """D_A = F(I_aug) on the tape, D_P = F(I) detached."""
    d_a = model(image_aug)
    with no_grad():
        d_p = model(image).data.copy()
    return d_a, d_p
