"""Artifact persistence: atomic writes, manifests, CSV series and field snapshots."""

import csv
import hashlib
import io
import json
import os
import struct
import tempfile
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np

from .errors import ConfigError


FIELD_MAGIC = b"LABFLD01"
FIELD_FORMAT_VERSION = 1
# magic, version, d, L, kind code, seed
FIELD_HEADER = struct.Struct("<8sIIIIQ")

FIELD_KIND_CODES = {
    "lattice_gaussian": 0,
    "lattice_gibbs": 1,
    "continuum_gaussian": 2,
}

MANIFEST_NAME = "manifest.json"


def atomic_write_bytes(path: Path, payload: bytes) -> Path:
    """Write bytes through a temporary file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(payload)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise
    return path


def atomic_write_text(path: Path, text: str) -> Path:
    return atomic_write_bytes(path, text.encode("utf-8"))


def _json_default(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, Path):
        return value.as_posix()
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


def dumps_json(data: Any) -> str:
    """Canonical JSON text: sorted keys, two-space indent, trailing newline."""
    return json.dumps(data, indent=2, sort_keys=True, ensure_ascii=False, default=_json_default) + "\n"


def write_json(path: Path, data: Any) -> Path:
    return atomic_write_text(path, dumps_json(data))


def read_json(path: Path) -> Any:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def write_series_csv(path: Path, times: Sequence[float], positions: np.ndarray) -> Path:
    """
    Write a trajectory time series with columns t, X1..Xd.

    Args:
        path: Target CSV path
        times: Sample times
        positions: Array of shape (len(times), d)
    """
    positions = np.asarray(positions, dtype=float)
    if positions.ndim != 2 or positions.shape[0] != len(times):
        raise ConfigError(
            "Series shape does not match the time grid",
            {"times": len(times), "positions": list(positions.shape)},
        )

    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["t"] + [f"X{k + 1}" for k in range(positions.shape[1])])
    for t, row in zip(times, positions):
        writer.writerow([repr(float(t))] + [repr(float(v)) for v in row])
    return atomic_write_text(path, buffer.getvalue())


def read_series_csv(path: Path) -> tuple[np.ndarray, np.ndarray]:
    """Read a series written by write_series_csv; returns (times, positions)."""
    with open(path, "r", encoding="utf-8") as f:
        rows = list(csv.reader(f))
    data = np.array([[float(v) for v in row] for row in rows[1:]], dtype=float)
    if data.size == 0:
        return np.zeros(0), np.zeros((0, len(rows[0]) - 1))
    return data[:, 0], data[:, 1:]


def write_field_snapshot(
    path: Path,
    values: np.ndarray,
    d: int,
    L: int,
    kind: str,
    seed: int,
    extra: Optional[Dict[str, Any]] = None,
) -> Path:
    """
    Write a field as header + little-endian float64 values, plus a JSON sidecar.

    The sidecar lives next to the binary file with a `.json` suffix.
    """
    if kind not in FIELD_KIND_CODES:
        raise ConfigError(f"Unknown field kind: {kind}")

    header = FIELD_HEADER.pack(
        FIELD_MAGIC, FIELD_FORMAT_VERSION, d, L, FIELD_KIND_CODES[kind], seed & 0xFFFFFFFFFFFFFFFF
    )
    body = np.ascontiguousarray(values, dtype="<f8").tobytes()
    atomic_write_bytes(path, header + body)

    sidecar = {
        "format_version": FIELD_FORMAT_VERSION,
        "d": d,
        "L": L,
        "kind": kind,
        "seed": seed,
        "shape": list(np.shape(values)),
        "dtype": "float64",
        **(extra or {}),
    }
    write_json(Path(str(path) + ".json"), sidecar)
    return Path(path)


def read_field_snapshot(path: Path) -> Dict[str, Any]:
    """Read a field snapshot; returns the header fields and the values array."""
    raw = Path(path).read_bytes()
    magic, version, d, L, kind_code, seed = FIELD_HEADER.unpack_from(raw, 0)
    if magic != FIELD_MAGIC:
        raise ConfigError("Not a field snapshot", {"path": str(path)})
    if version != FIELD_FORMAT_VERSION:
        raise ConfigError("Unsupported field snapshot version", {"version": version})

    kind = {code: name for name, code in FIELD_KIND_CODES.items()}[kind_code]
    values = np.frombuffer(raw, dtype="<f8", offset=FIELD_HEADER.size).copy()

    sidecar_path = Path(str(path) + ".json")
    if sidecar_path.exists():
        shape = tuple(read_json(sidecar_path)["shape"])
    else:
        shape = (L,) * d
    return {
        "d": d,
        "L": L,
        "kind": kind,
        "seed": seed,
        "values": values.reshape(shape),
    }


def export_slice_csv(path: Path, values: np.ndarray, axis: int = 2, index: int = 0) -> Path:
    """Export a 2d slice of a field (fixing `axis` at `index`) as a CSV grid."""
    values = np.asarray(values)
    if values.ndim == 2:
        plane = values
    else:
        plane = np.take(values, index, axis=axis)
        while plane.ndim > 2:
            plane = plane[..., 0]

    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    for row in plane:
        writer.writerow([repr(float(v)) for v in row])
    return atomic_write_text(path, buffer.getvalue())


def sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(
    run_dir: Path,
    artifacts: Iterable[Path],
    config: Dict[str, Any],
    master_seed: int,
) -> Path:
    """
    Write the run manifest last; its presence marks the run complete.

    Artifact paths are stored relative to run_dir, each with its SHA-256.
    """
    run_dir = Path(run_dir)
    entries: List[Dict[str, str]] = []
    for artifact in sorted(Path(a) for a in artifacts):
        entries.append({
            "path": Path(os.path.relpath(artifact, run_dir)).as_posix(),
            "sha256": sha256_file(artifact),
        })

    manifest = {
        "complete": True,
        "created_at": datetime.now().isoformat(timespec="seconds"),
        "master_seed": master_seed,
        "config": config,
        "artifacts": entries,
    }
    return write_json(run_dir / MANIFEST_NAME, manifest)


def is_complete(run_dir: Path) -> bool:
    """A run directory is complete only when its manifest exists and every hash matches."""
    manifest_path = Path(run_dir) / MANIFEST_NAME
    if not manifest_path.exists():
        return False
    manifest = read_json(manifest_path)
    for entry in manifest.get("artifacts", []):
        target = Path(run_dir) / entry["path"]
        if not target.exists() or sha256_file(target) != entry["sha256"]:
            return False
    return bool(manifest.get("complete"))
