"""Training configuration, loaded from and written to JSON."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from ..secloss import ScheduleState


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("invalid config:\n" + "\n".join(f"  - {p}" for p in problems))


@dataclass
class DatasetConfig:
    size: tuple[int, int] = (64, 128)
    train_seed: int = 1
    train_count: int = 256
    test_seed: int = 2
    test_count: int = 64
    train_dir: str | None = None
    test_dir: str | None = None
    severity_range: tuple[float, float] = (0.5, 1.0)


@dataclass
class TrainConfig:
    seed: int = 0
    epochs: int = 20
    steps_per_epoch: int = 40
    batch_size: int = 4
    lr: float = 1e-3
    optimizer: str = "adam"
    S: int = 5
    # contrastive schedule
    a: float = 0.05
    c: float = 0.001
    alpha2: float = 0.005
    delta: float = 1e-4
    w_s: float = 0.01
    e_a: int = 5
    e_b: int = 15
    alpha1_decay: str = "exp"
    # negative-model queue
    j: int = 3
    omega: float = 0.01
    interval: int = 200
    negatives_mode: str = "shared"
    n_bins: int = 32
    # ablation switches
    augment: bool = True
    contrastive: bool = True
    distribution: bool = True
    delta1: bool = True
    delta2: bool = True
    extra_aug: bool = False
    aug_loss: str = "aug"
    max_disp_px: float = 8.0
    log_interval: int = 10
    eval_interval: int = 0
    checkpoint_interval: int = 0
    eval_count: int = 0
    dataset: DatasetConfig = field(default_factory=DatasetConfig)

    @property
    def total_steps(self) -> int:
        return self.epochs * self.steps_per_epoch

    def schedule(self) -> ScheduleState:
        return ScheduleState(
            t=0, T=self.total_steps, e=0, a=self.a, c=self.c, alpha2=self.alpha2,
            delta=self.delta, w_s=self.w_s, e_a=self.e_a, e_b=self.e_b, S=self.S,
            decay=self.alpha1_decay,
        )

    def validate(self) -> "TrainConfig":
        problems = []
        for name in ("epochs", "steps_per_epoch", "batch_size", "S", "j", "interval", "n_bins"):
            if getattr(self, name) < 1:
                problems.append(f"{name}: must be >= 1 (got {getattr(self, name)})")
        for name in ("lr", "a", "c", "w_s", "max_disp_px"):
            if getattr(self, name) <= 0:
                problems.append(f"{name}: must be positive (got {getattr(self, name)})")
        for name in ("alpha2", "delta"):
            if getattr(self, name) < 0:
                problems.append(f"{name}: must be non-negative")
        if not 0 <= self.omega <= 1:
            problems.append("omega: must lie in [0, 1]")
        if self.S > self.steps_per_epoch:
            problems.append("S: must not exceed steps_per_epoch")
        if self.optimizer != "adam":
            problems.append(f"optimizer: only 'adam' is supported (got {self.optimizer!r})")
        if self.alpha1_decay not in ("exp", "linear"):
            problems.append("alpha1_decay: must be 'exp' or 'linear'")
        if self.negatives_mode not in ("shared", "independent"):
            problems.append("negatives_mode: must be 'shared' or 'independent'")
        if self.aug_loss not in ("aug", "both"):
            problems.append("aug_loss: must be 'aug' or 'both'")
        h, w = self.dataset.size
        if h % 4 or w % 4 or h < 16 or w < 16:
            problems.append(f"dataset.size: {h}x{w} must be >= 16 and divisible by 4")
        if self.dataset.train_dir is None and self.dataset.train_count < 1:
            problems.append("dataset.train_count: must be >= 1")
        if problems:
            raise ConfigError(problems)
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        problems = []
        known = {f.name: f for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, value in raw.items():
            if key.startswith("_"):
                continue
            if key not in known:
                problems.append(f"{key}: unknown field")
                continue
            if key == "dataset":
                if not isinstance(value, dict):
                    problems.append("dataset: must be an object")
                    continue
                dfields = {f.name for f in dataclasses.fields(DatasetConfig)}
                bad = sorted(set(value) - dfields)
                problems += [f"dataset.{b}: unknown field" for b in bad]
                dv = {k: (tuple(v) if isinstance(v, list) else v) for k, v in value.items() if k in dfields}
                kwargs[key] = DatasetConfig(**dv)
                continue
            expected = type(known[key].default)
            if expected is bool and not isinstance(value, bool):
                problems.append(f"{key}: expected boolean, got {value!r}")
            elif expected is int and (isinstance(value, bool) or not isinstance(value, int)):
                problems.append(f"{key}: expected integer, got {value!r}")
            elif expected is float and (isinstance(value, bool) or not isinstance(value, (int, float))):
                problems.append(f"{key}: expected number, got {value!r}")
            elif expected is str and not isinstance(value, str):
                problems.append(f"{key}: expected string, got {value!r}")
            else:
                kwargs[key] = float(value) if expected is float else value
        # range checks run on the well-typed fields so every problem is reported at once
        try:
            config = cls(**kwargs).validate()
        except ConfigError as exc:
            problems += exc.problems
        if problems:
            raise ConfigError(problems)
        return config

    @classmethod
    def load(cls, path: str | Path) -> "TrainConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError([f"not valid JSON: {exc}"]) from None
        if not isinstance(raw, dict):
            raise ConfigError(["top level must be an object"])
        return cls.from_dict(raw)
