"""On-disk dataset layout: flat little-endian f64 tensors plus a JSON manifest.

    <dir>/manifest.json
    <dir>/NNNNNN_<field>.bin    field in image, source, disparity, valid, augmented

The manifest records format version, spatial size, generator seed and, per
sample, its scene seed, weather descriptor and the shape of every file.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from ..weathersim import SceneSample

FORMAT_VERSION = 1
FIELDS = ("image", "source", "disparity", "valid", "augmented")


def write_dataset(samples: list[SceneSample], out: str | Path, seed: int, size: tuple[int, int]) -> Path:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, s in enumerate(samples):
        files = {}
        for name in FIELDS:
            arr = getattr(s, name)
            if arr is None:
                continue
            fname = f"{i:06d}_{name}.bin"
            (out / fname).write_bytes(np.ascontiguousarray(arr, dtype="<f8").tobytes())
            files[name] = {"file": fname, "shape": list(arr.shape)}
        entries.append({"index": i, "seed": int(s.seed), "weather": s.weather, "files": files})
    manifest = {"format_version": FORMAT_VERSION, "seed": seed, "size": list(size), "count": len(samples), "samples": entries}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out


def read_dataset(path: str | Path) -> list[SceneSample]:
    path = Path(path)
    manifest = json.loads((path / "manifest.json").read_text())
    if manifest.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported dataset format {manifest.get('format_version')!r}")
    samples = []
    for entry in manifest["samples"]:
        arrays = {}
        for name, meta in entry["files"].items():
            raw = np.frombuffer((path / meta["file"]).read_bytes(), dtype="<f8")
            arrays[name] = raw.reshape(meta["shape"]).astype(np.float64)
        if "disparity" not in arrays:
            raise ValueError(f"sample {entry['index']} has no ground truth")
        samples.append(
            SceneSample(
                image=arrays["image"],
                source=arrays["source"],
                disparity=arrays["disparity"],
                valid=arrays.get("valid", np.ones_like(arrays["disparity"])) > 0.5,
                seed=entry["seed"],
                augmented=arrays.get("augmented"),
                weather=entry.get("weather", {}),
            )
        )
    return samples


def manifest_hash(path: str | Path) -> str:
    return hashlib.sha256((Path(path) / "manifest.json").read_bytes()).hexdigest()
