"""Binary checkpoint container.

Layout: b"SECD", one version byte, then sections, each
``u8 name length | name | u64 payload length | payload``.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

MAGIC = b"SECD"
VERSION = 1


class CheckpointError(ValueError):
    pass


def pack(sections: dict[str, bytes]) -> bytes:
    parts = [MAGIC, bytes([VERSION])]
    for name, payload in sections.items():
        key = name.encode()
        parts += [struct.pack("<B", len(key)), key, struct.pack("<Q", len(payload)), payload]
    return b"".join(parts)


def unpack(blob: bytes) -> dict[str, bytes]:
    if blob[:4] != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    if len(blob) < 5:
        raise CheckpointError("truncated checkpoint header")
    if blob[4] != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {blob[4]}")
    off = 5
    out = {}
    while off < len(blob):
        try:
            (n,) = struct.unpack_from("<B", blob, off)
            name = blob[off + 1 : off + 1 + n].decode()
            (size,) = struct.unpack_from("<Q", blob, off + 1 + n)
        except (struct.error, UnicodeDecodeError):
            raise CheckpointError("truncated checkpoint section header") from None
        start = off + 1 + n + 8
        if start + size > len(blob):
            raise CheckpointError(f"section {name!r} truncated")
        out[name] = blob[start : start + size]
        off = start + size
    return out


def save(path: str | Path, sections: dict[str, bytes]) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(pack(sections))
    tmp.replace(path)


def load(path: str | Path) -> dict[str, bytes]:
    return unpack(Path(path).read_bytes())


def arrays_to_bytes(arrays: dict[str, np.ndarray]) -> bytes:
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    return buf.getvalue()


def arrays_from_bytes(blob: bytes) -> dict[str, np.ndarray]:
    with np.load(io.BytesIO(blob)) as data:
        return {k: data[k].copy() for k in data.files}
