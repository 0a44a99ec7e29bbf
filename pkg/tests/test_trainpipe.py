import dataclasses
import json

import numpy as np
import pytest

from secdepth.depthmodel import DepthNet, FingerprintError
from secdepth.geomphoto import CameraModel, photometric_map, warp
from secdepth.latencyq import LatencyQueue
from secdepth.secloss import ScheduleState
from secdepth.trainpipe import (
    CSV_HEADER,
    Adam,
    AugOptions,
    ConfigError,
    DatasetConfig,
    MetricsRecord,
    TrainConfig,
    Trainer,
    compute_errors,
    evaluate,
    evaluate_by_weather,
    train_step_aug,
    train_step_clean,
)
from secdepth.trainpipe import checkpoint as ckpt
from secdepth.trainpipe.dataio import manifest_hash, read_dataset, write_dataset
from secdepth.weathersim import generate_scene, make_dataset


def small_config(**kw) -> TrainConfig:
    base = dict(
        epochs=2, steps_per_epoch=10, batch_size=2, S=5, log_interval=1, interval=7,
        dataset=DatasetConfig(size=(16, 32), train_count=6, test_count=3),
    )
    base.update(kw)
    return TrainConfig(**base)


# -- metrics


def test_perfect_prediction_metrics():
    gt = np.array([1.0, 2.0, 5.0])
    m = compute_errors(gt, gt)
    assert (m.AbsRel, m.SqRel, m.RMSE, m.RMSElog) == (0, 0, 0, 0)
    assert (m.a1, m.a2, m.a3) == (1, 1, 1)


def test_two_pixel_metrics():
    m = compute_errors(np.array([2.0, 4.0]), np.array([1.0, 4.0]))
    assert m.AbsRel == pytest.approx(0.5)
    assert m.SqRel == pytest.approx(0.5)
    assert m.RMSE == pytest.approx(np.sqrt(0.5))
    assert m.a1 == 0.5


def test_uniform_overprediction_thresholds():
    gt = np.linspace(1, 10, 20)
    m = compute_errors(2 * gt, gt)
    # ratio 2 exceeds every threshold, including 1.25**3 = 1.953125
    assert m.a1 == 0 and m.a2 == 0 and m.a3 == 0
    assert m.AbsRel == pytest.approx(1.0)


def test_metrics_mask_and_empty():
    m = compute_errors(np.array([1.0, 9.0]), np.array([1.0, 1.0]), np.array([True, False]))
    assert m.AbsRel == 0
    with pytest.raises(ValueError):
        compute_errors(np.array([1.0]), np.array([1.0]), np.array([False]))


def test_weighted_mean():
    a = MetricsRecord(1, 1, 1, 1, 1, 1, 1)
    b = MetricsRecord(4, 4, 4, 4, 0, 0, 0)
    m = MetricsRecord.mean([a, b], [2, 1])
    assert m.AbsRel == pytest.approx(2.0) and m.a1 == pytest.approx(2 / 3)


# -- config


def test_config_round_trip(tmp_path):
    cfg = small_config(seed=3)
    path = tmp_path / "c.json"
    path.write_text(cfg.to_json())
    assert TrainConfig.load(path) == cfg


def test_config_errors_field_by_field():
    with pytest.raises(ConfigError) as info:
        TrainConfig.from_dict({"epochs": "ten", "lr": -1.0, "bogus": 1, "augment": 1})
    text = "\n".join(info.value.problems)
    for field in ("epochs", "bogus", "augment"):
        assert field in text
    with pytest.raises(ConfigError) as info:
        TrainConfig.from_dict({"lr": -1.0, "S": 0})
    assert {p.split(":")[0] for p in info.value.problems} == {"lr", "S"}


def test_config_rejects_bad_size_and_json(tmp_path):
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({"dataset": {"size": [33, 64]}})
    bad = tmp_path / "bad.json"
    bad.write_text("{nope")
    with pytest.raises(ConfigError):
        TrainConfig.load(bad)


def test_schedule_from_config():
    cfg = TrainConfig()
    assert cfg.total_steps == 800
    s = cfg.schedule()
    assert (s.T, s.S, s.a, s.c) == (800, 5, 0.05, 0.001)


# -- checkpoint container


def test_checkpoint_magic_and_round_trip(tmp_path):
    path = tmp_path / "x.secd"
    ckpt.save(path, {"a": b"123", "b": b""})
    raw = path.read_bytes()
    assert raw[:4] == b"SECD" and raw[4] == ckpt.VERSION
    assert ckpt.load(path) == {"a": b"123", "b": b""}


def test_checkpoint_truncated_and_bad_magic():
    blob = ckpt.pack({"model": b"x" * 100})
    with pytest.raises(ckpt.CheckpointError):
        ckpt.unpack(blob[:-10])
    with pytest.raises(ckpt.CheckpointError):
        ckpt.unpack(b"NOPE" + blob[4:])
    with pytest.raises(ckpt.CheckpointError):
        ckpt.unpack(blob[:4] + bytes([9]) + blob[5:])


def test_adam_state_round_trip():
    net = DepthNet.init(0)
    opt = Adam(net.params)
    for p in net.parameters():
        p.grad = np.ones_like(p.data)
    opt.step(net.params)
    other = Adam(net.params)
    other.load_bytes(opt.state_bytes())
    assert other.t == 1
    for k in opt.m:
        assert np.array_equal(opt.m[k], other.m[k]) and np.array_equal(opt.v[k], other.v[k])


# -- training steps


def test_perfect_disparity_gives_near_zero_loss():
    # occluded pixels have no correspondence, so the bound is checked where one exists
    for seed in range(5):
        s = generate_scene(seed)
        per_pixel = photometric_map(s.image, warp(s.source, s.disparity, CameraModel())).data
        assert per_pixel[s.valid].mean() < 0.01
        assert per_pixel.mean() < 0.05


def test_single_sample_overfit():
    s = generate_scene(1, (32, 64))
    batch = {"image": s.image[None], "source": s.source[None]}
    cam = CameraModel(cx=32, cy=16)
    net = DepthNet.init(0)
    opt = Adam(net.params, lr=1e-3)
    losses, norms = [], []
    for _ in range(200):
        r = train_step_clean(net, batch, cam, opt)
        losses.append(r.L_ph)
        norms.append(r.grad_norm)
    assert np.isfinite(norms).all()
    assert losses[-1] <= 0.5 * losses[0]


def test_aug_step_with_identical_images_has_zero_positive_term():
    s = generate_scene(2, (16, 32))
    batch = {"image": s.image[None], "source": s.source[None], "augmented": s.image[None].copy()}
    cam = CameraModel(cx=16, cy=8)
    net = DepthNet.init(0)
    q = LatencyQueue.random(3, 5)
    sched = ScheduleState(t=5, T=100, e=20)
    rng = np.random.default_rng(0)
    r = train_step_aug(net, batch, cam, q, sched, Adam(net.params), rng, AugOptions(terms=_no_terms()))
    assert r.L_c == pytest.approx(0.0, abs=1e-15)
    assert r.w == pytest.approx(0.1)
    clean = DepthNet.init(0)
    rc = train_step_clean(clean, batch, cam, Adam(clean.params))
    assert r.L_ph == pytest.approx(rc.L_ph, rel=1e-12)


def _no_terms():
    from secdepth.secloss import LossTerms

    return LossTerms(False, False)


# -- trainer


@pytest.fixture(scope="module")
def data():
    return make_dataset(1, 6, (16, 32)), make_dataset(2, 3, (16, 32))


def test_aug_step_count_is_floor(data):
    for S in (1, 3, 5, 7):
        tr = Trainer(small_config(S=S), *data)
        tr.run(until=17)
        assert tr.aug_steps == 17 // S


def test_baseline_never_augments(data):
    tr = Trainer(small_config(augment=False, contrastive=False), *data)
    tr.run()
    assert tr.aug_steps == 0
    assert all(",aug," not in row for row in tr.rows)


def test_contrastive_only_on_aug_rows(data):
    tr = Trainer(small_config(), *data)
    tr.run()
    header = CSV_HEADER.split(",")
    for row in tr.rows:
        vals = dict(zip(header, row.split(",")))
        if vals["phase"] == "clean":
            assert float(vals["L_c"]) == 0.0
        if vals["phase"] == "aug":
            assert int(vals["step"]) % 5 == 0


def test_queue_interval_updates(data):
    tr = Trainer(small_config(interval=4, contrastive=False), *data)
    tr.run()
    interval_steps = [t for t, reason in tr.queue.history if reason == "interval"]
    assert interval_steps == [4, 8, 12, 16, 20]


def test_csv_format(data, tmp_path):
    tr = Trainer(small_config(), *data)
    tr.run(csv_path=tmp_path / "m.csv")
    raw = (tmp_path / "m.csv").read_bytes()
    assert b"\r" not in raw
    lines = raw.decode().splitlines()
    assert lines[0] == CSV_HEADER
    assert lines[-1].split(",")[2] == "eval"
    assert len(lines) == 1 + 20 + 1


def test_resume_is_byte_identical(data, tmp_path):
    full = Trainer(small_config(), *data)
    full.run()
    part = Trainer(small_config(), *data)
    part.run(until=11)
    part.save(tmp_path / "mid.secd")
    resumed = Trainer.from_checkpoint(tmp_path / "mid.secd", *data)
    assert resumed.step == 11
    resumed.run()
    assert resumed.csv_text() == full.csv_text()
    assert np.array_equal(resumed.model.export_snapshot().params, full.model.export_snapshot().params)


def test_rerun_is_byte_identical(data):
    a, b = Trainer(small_config(), *data), Trainer(small_config(), *data)
    a.run()
    b.run()
    assert a.csv_text() == b.csv_text()


def test_checkpoint_fingerprint_mismatch(data, tmp_path):
    tr = Trainer(small_config(), *data)
    path = tmp_path / "c.secd"
    tr.save(path)
    sections = ckpt.load(path)
    sections["model"] = b"otherarc" + sections["model"][8:]
    ckpt.save(path, sections)
    with pytest.raises(FingerprintError):
        Trainer.from_checkpoint(path, *data)


def test_evaluate_by_weather_aggregate(data):
    net = DepthNet.init(0)
    test = make_dataset(5, 5, (16, 32))
    cam = CameraModel(cx=16, cy=8)
    out = evaluate_by_weather(net, test, cam)
    assert set(out) == {"fog", "rain", "snow", "aggregate"}
    assert out["aggregate"].AbsRel == pytest.approx(evaluate(net, test, cam).AbsRel, rel=1e-12)
    with pytest.raises(ValueError):
        evaluate(net, [], cam)


def test_dataset_io_round_trip(tmp_path):
    samples = make_dataset(4, 3, (16, 32))
    write_dataset(samples, tmp_path / "d", 4, (16, 32))
    back = read_dataset(tmp_path / "d")
    assert len(back) == 3
    for a, b in zip(samples, back):
        for field in ("image", "source", "disparity", "valid", "augmented"):
            assert np.array_equal(getattr(a, field), getattr(b, field))
        assert a.weather == b.weather
    write_dataset(samples, tmp_path / "e", 4, (16, 32))
    assert manifest_hash(tmp_path / "d") == manifest_hash(tmp_path / "e")
