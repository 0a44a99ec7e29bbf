"""Training loop: clean photometric steps with an augmented contrastive step every S."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import __version__
from ..depthmodel import DepthNet, FingerprintError, ModelSnapshot
from ..distbin import BinSpec, soft_bin
from ..geomphoto import CameraModel, disparity_to_depth, photometric_loss, warp
from ..latencyq import LatencyQueue, anchor_positive, generate_negatives, should_update
from ..numcore import NonFiniteError, Tensor, backward, no_grad, reset_tape
from ..secloss import LossTerms, ScheduleState, TripletBatch, alpha1, contrastive_weight, sec_loss, sec_loss_pixel
from ..weathersim import SceneSample, WeatherParams, degrade, make_dataset, sample_weather
from . import checkpoint as ckpt
from .config import TrainConfig
from .dataio import read_dataset
from .metrics import METRIC_KEYS, MetricsRecord, compute_errors

logger = logging.getLogger(__name__)

CSV_HEADER = "step,epoch,phase,L_ph,L_c,w,alpha1,queue_updates," + ",".join(METRIC_KEYS)


class TrainingAborted(RuntimeError):
    pass


class Adam:
    def __init__(self, params: dict[str, Tensor], lr: float = 1e-3, b1: float = 0.9, b2: float = 0.999, eps: float = 1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, params: dict[str, Tensor]) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for k, p in params.items():
            if p.grad is None:
                continue
            g = p.grad
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            p.data = p.data - self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
            p.grad = None

    def state_bytes(self) -> bytes:
        arrays = {f"m/{k}": v for k, v in self.m.items()}
        arrays.update({f"v/{k}": v for k, v in self.v.items()})
        arrays["t"] = np.array([self.t])
        return ckpt.arrays_to_bytes(arrays)

    def load_bytes(self, blob: bytes) -> None:
        arrays = ckpt.arrays_from_bytes(blob)
        self.t = int(arrays.pop("t")[0])
        for key, value in arrays.items():
            kind, name = key.split("/", 1)
            getattr(self, kind)[name] = value


def grad_norm(net: DepthNet) -> float:
    return float(math.sqrt(sum(float((p.grad**2).sum()) for p in net.parameters() if p.grad is not None)))


def _stack(samples: list[SceneSample], name: str) -> np.ndarray:
    return np.stack([getattr(s, name) for s in samples])


@dataclass
class StepResult:
    phase: str
    L_ph: float
    L_c: float = 0.0
    w: float = 0.0
    alpha1: float = 0.0
    queue_update: str | None = None
    grad_norm: float = 0.0


def train_step_clean(model: DepthNet, batch: dict, cam: CameraModel, optimizer: Adam) -> StepResult:
    """Photometric loss of the clean target against the warped source; one optimizer step."""
    reset_tape()
    disp = model(batch["image"])
    loss = photometric_loss(Tensor(batch["image"]), warp(Tensor(batch["source"]), disp, cam))
    _check(loss, "clean photometric loss")
    backward(loss)
    gn = grad_norm(model)
    optimizer.step(model.params)
    return StepResult("clean", float(loss.data), grad_norm=gn)


def _check(loss: Tensor, what: str) -> None:
    if not np.isfinite(loss.data).all():
        raise TrainingAborted(f"non-finite {what}")


@dataclass
class AugOptions:
    contrastive: bool = True
    distribution: bool = True
    terms: LossTerms = field(default_factory=LossTerms)
    spec: BinSpec = field(default_factory=BinSpec)
    aug_loss: str = "aug"


def train_step_aug(
    model: DepthNet,
    batch: dict,
    cam: CameraModel,
    queue: LatencyQueue,
    sched: ScheduleState,
    optimizer: Adam,
    rng: np.random.Generator,
    opts: AugOptions = AugOptions(),
    scratch: DepthNet | None = None,
) -> StepResult:
    """L = L_ph(I, warp(I', F(I_aug))) + w * L_c, then queue maintenance."""
    reset_tape()
    image, source, image_aug = batch["image"], batch["source"], batch["augmented"]
    d_a, d_p = anchor_positive(model, image, image_aug)
    l_ph = photometric_loss(Tensor(image), warp(Tensor(source), d_a, cam))
    if opts.aug_loss == "both":
        d_clean = model(image)
        l_ph = l_ph + photometric_loss(Tensor(image), warp(Tensor(source), d_clean, cam))
    w = contrastive_weight(sched)
    a1 = alpha1(sched)
    result = StepResult("aug", 0.0, w=w, alpha1=a1)
    negatives = None
    total = l_ph
    if opts.contrastive:
        neg_images = batch.get("negatives") or [image_aug] * queue.j
        factory = _loader(scratch)
        negatives, _ = generate_negatives(queue, neg_images, factory, rng)
        if opts.distribution:
            p_a = soft_bin(d_a, opts.spec)
            with no_grad():
                p_p = soft_bin(d_p, opts.spec).data
                p_n = [soft_bin(n, opts.spec).data for n in negatives]
            use_terms = opts.terms if (opts.terms.use_delta1 or opts.terms.use_delta2) else LossTerms(False, False)
            l_c = sec_loss(TripletBatch(p_a, p_p, p_n), sched, use_terms)
        else:
            terms = opts.terms if (opts.terms.use_delta1 or opts.terms.use_delta2) else None
            l_c = sec_loss_pixel(d_a, d_p, negatives, sched, terms)
        result.L_c = float(l_c.data)
        total = l_ph + w * l_c
    _check(total, "augmented-step loss")
    backward(total)
    result.grad_norm = grad_norm(model)
    optimizer.step(model.params)
    result.L_ph = float(l_ph.data)
    if negatives is not None:
        fire, reason = should_update(queue, sched.t, d_a.data, d_p, negatives)
    else:
        fire, reason = should_update(queue, sched.t)
    if fire:
        queue.ema_update(model.export_snapshot())
        queue.history.append((sched.t, reason))
        result.queue_update = reason
    return result


def _loader(scratch: DepthNet | None):
    if scratch is None:
        return DepthNet.import_snapshot

    def load(snap: ModelSnapshot) -> DepthNet:
        scratch.load_snapshot(snap)
        return scratch

    return load


def evaluate(model: DepthNet, samples: list[SceneSample], cam: CameraModel, degraded: bool = True, chunk: int = 16) -> MetricsRecord:
    """Per-image metrics on depth (no median scaling), averaged over images."""
    if not samples:
        raise ValueError("empty dataset")
    records = []
    with no_grad():
        for i in range(0, len(samples), chunk):
            part = samples[i : i + chunk]
            images = np.stack([s.augmented if (degraded and s.augmented is not None) else s.image for s in part])
            pred = model(images).data
            for s, d in zip(part, pred):
                records.append(compute_errors(disparity_to_depth(d, cam), disparity_to_depth(s.disparity, cam)))
    return MetricsRecord.mean(records)


def evaluate_by_weather(model: DepthNet, samples: list[SceneSample], cam: CameraModel) -> dict:
    kinds = sorted({s.weather.get("kind", "clean") for s in samples})
    out, counts = {}, {}
    for kind in kinds:
        subset = [s for s in samples if s.weather.get("kind", "clean") == kind]
        out[kind] = evaluate(model, subset, cam)
        counts[kind] = len(subset)
    out["aggregate"] = MetricsRecord.mean([out[k] for k in kinds], [counts[k] for k in kinds])
    return out


def _fmt(x) -> str:
    if x is None or x == "":
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


class Trainer:
    """Owns model, optimizer, queue, RNG and the metrics log for one run."""

    def __init__(self, config: TrainConfig, train: list[SceneSample] | None = None, test: list[SceneSample] | None = None):
        self.config = config.validate()
        h, w = config.dataset.size
        self.cam = CameraModel(cx=w / 2, cy=h / 2, max_disp_px=config.max_disp_px)
        self.train_set = train if train is not None else self._load(config, "train")
        self.test_set = test if test is not None else self._load(config, "test")
        if config.eval_count:
            self.test_set = self.test_set[: config.eval_count]
        self.model = DepthNet.init(config.seed)
        self.scratch = DepthNet.init(config.seed)
        self.optimizer = Adam(self.model.params, lr=config.lr)
        self.queue = LatencyQueue.random(config.j, config.seed + 1, omega=config.omega, interval=config.interval)
        self.rng = np.random.default_rng(config.seed + 2)
        self.step = 0
        self.aug_steps = 0
        self.rows: list[str] = []
        self.weather = WeatherParams()
        self.opts = AugOptions(
            contrastive=config.contrastive,
            distribution=config.distribution,
            terms=LossTerms(config.delta1, config.delta2),
            spec=BinSpec(config.n_bins),
            aug_loss=config.aug_loss,
        )
        self._order: np.ndarray | None = None

    @staticmethod
    def _load(config: TrainConfig, which: str) -> list[SceneSample]:
        ds = config.dataset
        folder = getattr(ds, f"{which}_dir")
        if folder:
            return read_dataset(folder)
        seed = getattr(ds, f"{which}_seed")
        count = getattr(ds, f"{which}_count")
        h, w = ds.size
        cam = CameraModel(cx=w / 2, cy=h / 2, max_disp_px=config.max_disp_px)
        return make_dataset(seed, count, tuple(ds.size), cam, severity_range=ds.severity_range)

    # -- schedule helpers

    def epoch_of(self, t: int) -> int:
        return (t - 1) // self.config.steps_per_epoch if t > 0 else 0

    def schedule_at(self, t: int) -> ScheduleState:
        return self.config.schedule().at(t, self.epoch_of(t))

    def is_aug_step(self, t: int) -> bool:
        return self.config.augment and t % self.config.S == 0

    # -- data

    def _next_batch(self) -> list[SceneSample]:
        n = len(self.train_set)
        bs = self.config.batch_size
        if self._order is None or self._order.size < bs:
            extra = self.rng.permutation(n)
            self._order = extra if self._order is None else np.concatenate([self._order, extra])
        idx, self._order = self._order[:bs], self._order[bs:]
        return [self.train_set[int(i)] for i in idx]

    def _augment(self, samples: list[SceneSample]) -> np.ndarray:
        out = []
        for s in samples:
            kind, severity = sample_weather(self.rng, self.config.dataset.severity_range)
            seed = int(self.rng.integers(0, 2**31 - 1))
            out.append(degrade(s, kind, severity, seed, self.weather, self.cam, extra=self.config.extra_aug))
        return np.stack(out)

    # -- loop

    def run_step(self) -> StepResult:
        t = self.step + 1
        samples = self._next_batch()
        batch = {"image": _stack(samples, "image"), "source": _stack(samples, "source")}
        sched = self.schedule_at(t)
        if self.is_aug_step(t):
            batch["augmented"] = self._augment(samples)
            if self.config.contrastive and self.config.negatives_mode == "independent":
                batch["negatives"] = [self._augment(samples) for _ in range(self.config.j)]
            res = train_step_aug(self.model, batch, self.cam, self.queue, sched, self.optimizer, self.rng, self.opts, self.scratch)
            self.aug_steps += 1
        else:
            res = train_step_clean(self.model, batch, self.cam, self.optimizer)
            res.w = contrastive_weight(sched)
            res.alpha1 = alpha1(sched)
            fire, reason = should_update(self.queue, t)
            if fire:
                self.queue.ema_update(self.model.export_snapshot())
                self.queue.history.append((t, reason))
                res.queue_update = reason
        if not math.isfinite(res.grad_norm):
            raise TrainingAborted(f"non-finite gradient norm at step {t}")
        self.step = t
        cfg = self.config
        if cfg.log_interval and t % cfg.log_interval == 0:
            self._log(t, res.phase, res.L_ph, res.L_c, res.w, res.alpha1)
        if cfg.eval_interval and t % cfg.eval_interval == 0:
            self.log_eval()
        return res

    def _log(self, t, phase, l_ph="", l_c="", w="", a1="", metrics: MetricsRecord | None = None):
        vals = [t, self.epoch_of(t), phase, l_ph, l_c, w, a1, self.queue.update_count]
        vals += [getattr(metrics, k) for k in METRIC_KEYS] if metrics else [""] * len(METRIC_KEYS)
        self.rows.append(",".join(_fmt(v) for v in vals))

    def log_eval(self) -> MetricsRecord:
        m = evaluate(self.model, self.test_set, self.cam)
        self._log(self.step, "eval", metrics=m)
        return m

    def run(self, until: int | None = None, checkpoint_dir: str | Path | None = None, csv_path: str | Path | None = None) -> None:
        until = self.config.total_steps if until is None else min(until, self.config.total_steps)
        cfg = self.config
        while self.step < until:
            try:
                self.run_step()
            except (TrainingAborted, NonFiniteError) as exc:
                logger.error("aborting at step %d: %s", self.step + 1, exc)
                if csv_path:
                    self.write_csv(csv_path)
                raise TrainingAborted(f"step {self.step + 1}: {exc}") from exc
            if checkpoint_dir and cfg.checkpoint_interval and self.step % cfg.checkpoint_interval == 0:
                self.save(Path(checkpoint_dir) / f"step_{self.step:06d}.secd")
                self.save(Path(checkpoint_dir) / "last.secd")
        final = self.step == cfg.total_steps
        if final and not (cfg.eval_interval and self.step % cfg.eval_interval == 0):
            self.log_eval()
        if csv_path:
            self.write_csv(csv_path)

    def csv_text(self) -> str:
        return "\n".join([CSV_HEADER, *self.rows]) + "\n"

    def write_csv(self, path: str | Path) -> None:
        Path(path).write_text(self.csv_text(), encoding="utf-8", newline="\n")

    # -- persistence

    def save(self, path: str | Path) -> None:
        state = {
            "step": self.step,
            "aug_steps": self.aug_steps,
            "order": None if self._order is None else [int(i) for i in self._order],
            "version": __version__,
        }
        sections = {
            "config": self.config.to_json().encode(),
            "model": self.model.export_snapshot().to_bytes(),
            "optimizer": self.optimizer.state_bytes(),
            "queue": self.queue.to_bytes(),
            "schedules": json.dumps(state, sort_keys=True).encode(),
            "rng": json.dumps(self.rng.bit_generator.state, sort_keys=True).encode(),
            "log": "\n".join(self.rows).encode(),
        }
        ckpt.save(path, sections)

    def restore(self, path: str | Path) -> None:
        sections = ckpt.load(path)
        missing = {"model", "optimizer", "queue", "schedules", "rng"} - set(sections)
        if missing:
            raise ckpt.CheckpointError(f"checkpoint lacks sections {sorted(missing)}")
        snap = ModelSnapshot.from_bytes(sections["model"])
        if snap.fingerprint != self.model.fingerprint:
            raise FingerprintError("checkpoint model fingerprint does not match")
        self.model.load_snapshot(snap)
        self.optimizer = Adam(self.model.params, lr=self.config.lr)
        self.optimizer.load_bytes(sections["optimizer"])
        self.queue = LatencyQueue.from_bytes(sections["queue"])
        state = json.loads(sections["schedules"])
        self.step = state["step"]
        self.aug_steps = state["aug_steps"]
        self._order = None if state["order"] is None else np.array(state["order"], dtype=np.int64)
        self.rng.bit_generator.state = json.loads(sections["rng"])
        log = sections.get("log", b"").decode()
        self.rows = log.split("\n") if log else []

    @classmethod
    def from_checkpoint(cls, path: str | Path, train=None, test=None) -> "Trainer":
        sections = ckpt.load(path)
        config = TrainConfig.from_dict(json.loads(sections["config"]))
        trainer = cls(config, train, test)
        trainer.restore(path)
        return trainer
