"""Ensemble snapshots: a versioned little-endian binary record and a JSON twin.

Binary layout::

    b"KFLO" | u32 version | u64 N | f64 t | f64 weight | N x (x1, x2, v1, v2, L) f64

All numbers little-endian. Both forms round-trip bit-exactly.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .flow import ParticleEnsemble

MAGIC = b"KFLO"
VERSION = 1
_HEAD = struct.Struct("<4sIQdd")


class SnapshotFormatError(ValueError):
    pass


def _rows(ens: ParticleEnsemble) -> np.ndarray:
    return np.column_stack([ens.z, ens.log_jacobian])


def to_bytes(ens: ParticleEnsemble) -> bytes:
    head = _HEAD.pack(MAGIC, VERSION, ens.n, float(ens.time), float(ens.weight))
    return head + np.ascontiguousarray(_rows(ens), dtype="<f8").tobytes()


def from_bytes(data: bytes) -> ParticleEnsemble:
    if len(data) < _HEAD.size:
        raise SnapshotFormatError("snapshot truncated before header end")
    magic, version, n, t, weight = _HEAD.unpack_from(data)
    if magic != MAGIC:
        raise SnapshotFormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise SnapshotFormatError(f"unsupported snapshot version {version}")
    body = data[_HEAD.size:]
    if len(body) != n * 5 * 8:
        raise SnapshotFormatError(f"expected {n} particles, payload holds {len(body) / 40:g}")
    rows = np.frombuffer(body, dtype="<f8").reshape(n, 5).astype(float)
    return ParticleEnsemble(rows[:, :4].copy(), weight, rows[:, 4].copy(), t)


def to_json(ens: ParticleEnsemble) -> str:
    # float repr round-trips exactly through json
    return json.dumps({"format": MAGIC.decode(), "version": VERSION, "n": ens.n,
                       "time": float(ens.time), "weight": float(ens.weight),
                       "columns": ["x1", "x2", "v1", "v2", "L"],
                       "particles": _rows(ens).tolist()})


def from_json(text: str) -> ParticleEnsemble:
    d = json.loads(text)
    if d.get("format") != MAGIC.decode() or d.get("version") != VERSION:
        raise SnapshotFormatError("not a version-1 snapshot document")
    rows = np.array(d["particles"], dtype=float).reshape(-1, 5)
    if len(rows) != d["n"]:
        raise SnapshotFormatError("particle count does not match header")
    return ParticleEnsemble(rows[:, :4].copy(), d["weight"], rows[:, 4].copy(), d["time"])


def save(ens: ParticleEnsemble, path) -> Path:
    """Write by suffix: ``.json`` gives the JSON form, anything else binary."""
    path = Path(path)
    if path.suffix == ".json":
        path.write_text(to_json(ens))
    else:
        path.write_bytes(to_bytes(ens))
    return path


def load(path) -> ParticleEnsemble:
    path = Path(path)
    if path.suffix == ".json":
        return from_json(path.read_text())
    return from_bytes(path.read_bytes())
