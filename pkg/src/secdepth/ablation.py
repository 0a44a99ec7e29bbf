"""Run preset ablation arms and summarize them across seeds."""

from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass

from .trainpipe import MetricsRecord, TrainConfig, Trainer, evaluate
from .weathersim import SceneSample

logger = logging.getLogger(__name__)


def load_preset(name: str, **overrides) -> TrainConfig:
    from .cli import resolve_config

    config = TrainConfig.load(resolve_config(f"{name}.json"))
    return dataclasses.replace(config, **overrides).validate()


@dataclass
class ArmResult:
    preset: str
    seed: int
    degraded: MetricsRecord
    clean: MetricsRecord
    aug_steps: int
    queue_updates: int
    seconds: float


def run_arm(
    preset: str,
    seed: int,
    train: list[SceneSample] | None = None,
    test: list[SceneSample] | None = None,
    **overrides,
) -> ArmResult:
    config = load_preset(preset, seed=seed, log_interval=0, **overrides)
    start = time.perf_counter()
    trainer = Trainer(config, train, test)
    trainer.run()
    degraded = evaluate(trainer.model, trainer.test_set, trainer.cam)
    clean = evaluate(trainer.model, trainer.test_set, trainer.cam, degraded=False)
    elapsed = time.perf_counter() - start
    logger.info("%s seed %d: AbsRel %.4f (%.0fs)", preset, seed, degraded.AbsRel, elapsed)
    return ArmResult(preset, seed, degraded, clean, trainer.aug_steps, trainer.queue.update_count, elapsed)


def mean_metrics(results: list[ArmResult], clean: bool = False) -> MetricsRecord:
    return MetricsRecord.mean([r.clean if clean else r.degraded for r in results])


def relative_gain(baseline: float, candidate: float) -> float:
    """Fractional reduction of an error metric, positive when the candidate is better."""
    return (baseline - candidate) / baseline


def sweep_aug_counts(presets: list[str], steps: int, **overrides) -> dict[str, int]:
    """Train each preset for ``steps`` optimizer steps and report its augmented-step count."""
    out = {}
    for name in presets:
        config = load_preset(name, epochs=1, steps_per_epoch=steps, log_interval=0, **overrides)
        trainer = Trainer(config)
        trainer.run(until=steps)
        out[name] = trainer.aug_steps
    return out
