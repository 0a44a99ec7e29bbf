"""Invariant suite behind ``secdepth verify``: each check returns expected vs actual."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .depthmodel import DepthNet, ModelSnapshot
from .distbin import is_distribution, js_divergence, soft_bin, soft_bin_naive
from .geomphoto import CameraModel, photometric_loss, warp
from .latencyq import LatencyQueue, should_update
from .numcore import Tensor, gradcheck
from .secloss import ScheduleState, TripletBatch, alpha1, contrastive_weight, sec_loss, sec_loss_from_divergences
from .weathersim import generate_scene


@dataclass
class CheckResult:
    name: str
    passed: bool
    expected: str
    actual: str


def _close(name: str, expected: float, actual: float, tol: float) -> CheckResult:
    return CheckResult(name, abs(expected - actual) <= tol, f"{expected:.10g}", f"{actual:.10g}")


def _below(name: str, value: float, bound: float) -> CheckResult:
    return CheckResult(name, value < bound, f"< {bound:g}", f"{value:.3e}")


def check_gradients() -> list[CheckResult]:
    rng = np.random.default_rng(11)
    cam = CameraModel(cx=4, cy=4)
    img = rng.uniform(0, 1, (8, 8, 3))
    src = rng.uniform(0, 1, (8, 8, 3))
    disp = rng.uniform(0.1, 0.9, (8, 8))
    ref = soft_bin(rng.uniform(0, 1, (8, 8))).data
    negs = [soft_bin(rng.uniform(0, 1, (8, 8))).data for _ in range(3)]
    sched = ScheduleState(t=0, T=100)
    return [
        _below("gradcheck photometric loss wrt disparity",
               gradcheck(lambda d: photometric_loss(Tensor(img), warp(Tensor(src), d, cam)), disp), 1e-4),
        _below("gradcheck JS(soft_bin(D), P) wrt disparity",
               gradcheck(lambda d: js_divergence(soft_bin(d), ref), disp), 1e-4),
        _below("gradcheck contrastive loss wrt anchor disparity",
               gradcheck(lambda d: sec_loss(TripletBatch(soft_bin(d), ref, negs), sched), disp), 1e-4),
    ]


def check_distributions(n_maps: int = 200) -> list[CheckResult]:
    rng = np.random.default_rng(12)
    ok_sum = True
    sym = 0.0
    top = 0.0
    for _ in range(n_maps):
        p = soft_bin(rng.uniform(0, 1, (8, 8))).data
        q = soft_bin(rng.uniform(0, 1, (8, 8))).data
        ok_sum &= is_distribution(p)
        a, b = float(js_divergence(p, q).data), float(js_divergence(q, p).data)
        sym = max(sym, abs(a - b))
        top = max(top, a)
    d = rng.uniform(0, 1, (6, 6))
    naive = float(np.abs(soft_bin(d).data - soft_bin_naive(d)).max())
    return [
        CheckResult("soft_bin sums to 1, non-negative", ok_sum, "True", str(ok_sum)),
        _below("JS symmetry gap", sym, 1e-12),
        CheckResult("JS <= ln 2", top <= math.log(2), f"<= {math.log(2):.6f}", f"{top:.6f}"),
        _close("JS([1,0],[0.5,0.5])", 0.215762, float(js_divergence([1.0, 0.0], [0.5, 0.5]).data), 1e-6),
        _below("soft_bin vs naive loop", naive, 1e-10),
    ]


def check_schedules(sched: ScheduleState | None = None) -> list[CheckResult]:
    base = sched or ScheduleState(t=0, T=1000)
    end = replace(base, t=base.T)
    return [
        _close("alpha1(0)", 0.051, alpha1(base), 1e-9),
        _close("alpha1(T)", 0.05 * math.exp(-15) + 0.001, alpha1(end), 1e-9),
        _close("w(e=3)", 0.01, contrastive_weight(replace(base, e=3)), 1e-15),
        _close("w(e=10)", 0.06, contrastive_weight(replace(base, e=10)), 1e-15),
        _close("w(e=20)", 0.1, contrastive_weight(replace(base, e=20)), 1e-15),
    ]


def _scalar_queue(values, omega=0.01, interval=200) -> LatencyQueue:
    return LatencyQueue([ModelSnapshot(np.array([v]), b"scalar00") for v in values], omega=omega, interval=interval)


def check_queue() -> list[CheckResult]:
    q = _scalar_queue([0.0, 0.0, 0.0])
    fired = [t for t in range(1, 1001) if should_update(q, t)[0]]
    interval_ok = fired == [200, 400, 600, 800, 1000]
    d_a = np.random.default_rng(0).uniform(0, 1, (8, 8))
    d_p = d_a + np.random.default_rng(1).normal(0, 0.1, (8, 8))
    div = should_update(q, 7, d_a, d_p, [d_a.copy(), d_a.copy()])
    q1 = _scalar_queue([0.5])
    theta = ModelSnapshot(np.array([1.0]), b"scalar00")
    gaps = []
    for _ in range(4):
        q1.ema_update(theta)
        gaps.append(abs(q1.slots[0].params[0] - 1.0))
    ratios = [gaps[i + 1] / gaps[i] for i in range(len(gaps) - 1)]
    return [
        CheckResult("interval trigger at multiples of 200 only", interval_ok, "[200..1000]", str(fired[:6])),
        CheckResult("diversity trigger on zero-variance negatives", div == (True, "diversity"), "(True, 'diversity')", str(div)),
        _close("EMA slot 0.5 -> theta 1.0", 0.995, 1.0 - gaps[0], 1e-12),
        _close("EMA geometric ratio", 0.01, float(np.mean(ratios)), 1e-9),
    ]


def check_loss_algebra() -> list[CheckResult]:
    loss = sec_loss_from_divergences(Tensor(0.01), [Tensor(0.002)], 0.051, 0.005, 1e-4)
    p = np.full(4, 0.25)
    saturated = float(sec_loss(TripletBatch(Tensor(p), p, [np.array([1.0, 0, 0, 0])]), ScheduleState(t=0, T=10)).data)
    return [
        _close("L_c hand case", 0.0100109, float(loss.data), 1e-9),
        _close("L_c = 0 when P_A = P_P, negatives saturated", 0.0, saturated, 1e-15),
    ]


def check_geometry() -> list[CheckResult]:
    scene = generate_scene(5, (64, 128))
    cam = CameraModel(cx=64, cy=32)
    ident = np.array_equal(warp(scene.source, np.zeros((64, 128)), cam).data, scene.source)
    rec = np.abs(warp(scene.source, scene.disparity, cam).data - scene.image).mean(-1)[scene.valid].mean()
    return [
        CheckResult("zero-disparity warp is the identity", ident, "True", str(ident)),
        _below("warp(I', D_gt) reconstruction error", float(rec), 0.02),
    ]


def check_model() -> list[CheckResult]:
    net = DepthNet.init(0)
    out = net(np.random.default_rng(3).uniform(0, 1, (32, 64, 3))).data
    ok = out.shape == (32, 64) and bool(((out > 0) & (out < 1)).all())
    return [CheckResult("DepthNet shape and sigmoid range", ok, "(32, 64) in (0,1)", f"{out.shape}")]


CHECKS: dict[str, Callable[[], list[CheckResult]]] = {
    "gradients": check_gradients,
    "distributions": check_distributions,
    "schedules": check_schedules,
    "queue": check_queue,
    "loss": check_loss_algebra,
    "geometry": check_geometry,
    "model": check_model,
}


def run_all(schedule_override: ScheduleState | None = None) -> list[CheckResult]:
    results = []
    for name, fn in CHECKS.items():
        if name == "schedules":
            results += check_schedules(schedule_override)
        else:
            results += fn()
    return results


def format_report(results: list[CheckResult]) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{'check':<{width}}  status  expected / actual"]
    for r in results:
        lines.append(f"{r.name:<{width}}  {'PASS' if r.passed else 'FAIL'}    {r.expected} / {r.actual}")
    failed = sum(not r.passed for r in results)
    lines.append(f"{len(results) - failed}/{len(results)} checks passed")
    return "\n".join(lines)
