"""Persistence: binary trajectory/weight formats, metrics export, dataset dirs.

Both binary formats are little-endian regardless of platform so golden
files compare byte-identically everywhere.

Trajectory (`.l2pt`):
    magic "L2PT" | u16 version=1 | u32 T | u32 D | u8 dtype (0=f32, 1=f64)
    | u8 direction (1 = labels descending) | u64 seed
    | T*D feature scalars row-major | T f64 step labels

Weights (`.l2pw`):
    magic "L2PW" | u16 version=1 | u32 T | rows concatenated as f64
    (row for target step t holds t values, t = 1..T-1)
    plus a JSON sidecar `<path>.json` with training provenance.

The trajectory source tag is not part of the binary format; standalone
loads come back tagged "external" (dataset directories restore tags from
their manifest).
"""

from __future__ import annotations

import json
import math
import struct
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .core import (
    FeatureTrajectory,
    L2PError,
    NonFiniteError,
    RunMetrics,
    TrajectorySet,
    WeightMatrix,
)

__all__ = [
    "BadMagicError",
    "UnsupportedVersionError",
    "TruncatedFileError",
    "NonFinitePayloadError",
    "RowLengthMismatchError",
    "IoFailureError",
    "save_trajectory",
    "load_trajectory",
    "save_weights",
    "load_weights",
    "export_metrics",
    "format_float",
    "save_dataset",
    "load_dataset",
    "SWEEP_CSV_HEADER",
]

_TRAJ_MAGIC = b"L2PT"
_WEIGHT_MAGIC = b"L2PW"
_VERSION = 1

SWEEP_CSV_HEADER = ("predictor", "N", "seed", "aggregate_mse", "psnr_db",
                    "flops_reduction", "cache_bytes_peak")


class BadMagicError(L2PError):
    """File does not start with the expected magic bytes."""


class UnsupportedVersionError(L2PError):
    """File declares a format version newer than this library understands."""


class TruncatedFileError(L2PError):
    """File ends before its declared payload."""


class NonFinitePayloadError(L2PError):
    """Stored payload contains NaN or infinity."""


class RowLengthMismatchError(L2PError):
    """Weight payload size disagrees with the declared step count."""


class IoFailureError(L2PError):
    """Underlying filesystem operation failed."""


def _read_exact(fh, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise TruncatedFileError(f"truncated file while reading {what}")
    return buf


def save_trajectory(traj: FeatureTrajectory, path, dtype: str = "f64") -> None:
    """Write a trajectory; ``dtype`` "f32" halves storage at ~1e-7 relative loss."""
    if dtype not in ("f32", "f64"):
        raise ValueError(f"dtype must be 'f32' or 'f64', got {dtype!r}")
    T, D = traj.num_steps, traj.dim
    dtype_code = 1 if dtype == "f64" else 0
    direction = 1 if traj.labels_descending else 0
    payload = traj.data.astype("<f8" if dtype == "f64" else "<f4")
    with open(path, "wb") as fh:
        fh.write(_TRAJ_MAGIC)
        fh.write(struct.pack("<HIIBBQ", _VERSION, T, D, dtype_code, direction,
                             traj.seed & 0xFFFFFFFFFFFFFFFF))
        fh.write(payload.tobytes(order="C"))
        fh.write(traj.step_labels.astype("<f8").tobytes())


def load_trajectory(path) -> FeatureTrajectory:
    """Read a trajectory file; validates magic, version, and finiteness."""
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, "magic")
        if magic != _TRAJ_MAGIC:
            raise BadMagicError(f"expected {_TRAJ_MAGIC!r}, got {magic!r}")
        version, T, D, dtype_code, direction, seed = struct.unpack(
            "<HIIBBQ", _read_exact(fh, 20, "header")
        )
        if version > _VERSION:
            raise UnsupportedVersionError(f"version {version} > supported {_VERSION}")
        if dtype_code not in (0, 1):
            raise BadMagicError(f"unknown dtype code {dtype_code}")
        scalar = "<f8" if dtype_code == 1 else "<f4"
        width = 8 if dtype_code == 1 else 4
        raw = _read_exact(fh, T * D * width, "feature payload")
        data = np.frombuffer(raw, dtype=scalar).reshape(T, D).astype(np.float64)
        labels = np.frombuffer(_read_exact(fh, T * 8, "step labels"), dtype="<f8")
    if not np.isfinite(data).all() or not np.isfinite(labels).all():
        raise NonFinitePayloadError(f"non-finite payload in {path}")
    try:
        return FeatureTrajectory(data=data, step_labels=labels,
                                 labels_descending=bool(direction), seed=seed,
                                 source_tag="external")
    except NonFiniteError as exc:  # pragma: no cover - already screened above
        raise NonFinitePayloadError(str(exc)) from exc


def save_weights(weights: WeightMatrix, path, provenance: Optional[dict] = None) -> None:
    """Write a weight file plus its JSON provenance sidecar."""
    with open(path, "wb") as fh:
        fh.write(_WEIGHT_MAGIC)
        fh.write(struct.pack("<HI", _VERSION, weights.num_steps))
        for row in weights.rows:
            fh.write(row.astype("<f8").tobytes())
    sidecar = {
        "format": "l2pw",
        "version": _VERSION,
        "num_steps": weights.num_steps,
        "provenance": provenance or {},
    }
    with open(str(path) + ".json", "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_weights(path) -> WeightMatrix:
    """Read a weight file; payload size must match the declared step count."""
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, "magic")
        if magic != _WEIGHT_MAGIC:
            raise BadMagicError(f"expected {_WEIGHT_MAGIC!r}, got {magic!r}")
        version, T = struct.unpack("<HI", _read_exact(fh, 6, "header"))
        if version > _VERSION:
            raise UnsupportedVersionError(f"version {version} > supported {_VERSION}")
        expected = T * (T - 1) // 2 * 8
        raw = fh.read()
    if len(raw) != expected:
        raise RowLengthMismatchError(
            f"declared T={T} implies {expected} payload bytes, file has {len(raw)}"
        )
    flat = np.frombuffer(raw, dtype="<f8")
    if not np.isfinite(flat).all():
        raise NonFinitePayloadError(f"non-finite weight in {path}")
    rows, pos = [], 0
    for t in range(1, T):
        rows.append(flat[pos:pos + t].copy())
        pos += t
    return WeightMatrix(num_steps=T, rows=tuple(rows))


def format_float(x: float) -> str:
    """17-significant-digit decimal text (round-trips any float64); inf -> 'inf'."""
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(float(x), ".17g")


def _json_scalar(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        f = float(v)
        if math.isnan(f):
            raise ValueError("NaN is not serializable")
        if math.isinf(f):
            return json.dumps(format_float(f))   # quoted "inf" sentinel
        return format_float(f)
    return json.dumps(v)


def _json_render(v) -> str:
    if isinstance(v, dict):
        inner = ", ".join(f"{json.dumps(str(k))}: {_json_render(val)}" for k, val in v.items())
        return "{" + inner + "}"
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_json_render(x) for x in v) + "]"
    return _json_scalar(v)


def metrics_to_dict(metrics: RunMetrics) -> dict:
    """Stable field ordering for serialization."""
    return {
        "aggregate_mse": metrics.aggregate_mse,
        "psnr_db": metrics.psnr_db,
        "flops_full": metrics.flops_full,
        "flops_cached": metrics.flops_cached,
        "flops_reduction": metrics.flops_reduction,
        "cache_bytes_peak": metrics.cache_bytes_peak,
        "per_step_mse": list(metrics.per_step_mse),
    }


def render_sweep_csv(rows: Sequence[dict]) -> str:
    """Fixed-header CSV text for sweep rows (see SWEEP_CSV_HEADER)."""
    lines = [",".join(SWEEP_CSV_HEADER)]
    for row in rows:
        cells = []
        for key in SWEEP_CSV_HEADER:
            v = row[key]
            if isinstance(v, (float, np.floating)):
                cells.append(format_float(float(v)))
            else:
                cells.append(str(v))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def render_metrics_json(payload: Union[RunMetrics, Sequence[dict], dict]) -> str:
    """JSON text with 17-digit floats and quoted-'inf' sentinels."""
    if isinstance(payload, RunMetrics):
        payload = metrics_to_dict(payload)
    return _json_render(payload) + "\n"


def export_metrics(payload, path, format: str = "json") -> None:
    """Write RunMetrics (json) or a sweep row table (json or csv) to a file."""
    if format not in ("json", "csv"):
        raise ValueError(f"format must be 'json' or 'csv', got {format!r}")
    if format == "csv":
        if isinstance(payload, RunMetrics):
            raise ValueError("csv export needs sweep rows; single metrics exports as json")
        text = render_sweep_csv(payload)
    else:
        text = render_metrics_json(payload)
    try:
        with open(path, "w") as fh:
            fh.write(text)
    except OSError as exc:
        raise IoFailureError(f"cannot write {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# Dataset directories: N trajectory files plus a manifest.
# ---------------------------------------------------------------------------


def save_dataset(dataset: TrajectorySet, out_dir, extra: Optional[dict] = None,
                 dtype: str = "f64") -> Path:
    """Write every trajectory plus a manifest.json; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, (traj, meta) in enumerate(zip(dataset.trajectories, dataset.manifest)):
        name = f"traj_{i:03d}.l2pt"
        save_trajectory(traj, out / name, dtype=dtype)
        entries.append({"file": name, "seed": traj.seed, "tag": traj.source_tag,
                        **{k: v for k, v in meta.items() if k not in ("seed", "tag")}})
    manifest = {
        "schema": 1,
        "count": len(dataset),
        "steps": dataset.num_steps,
        "dim": dataset.dim,
        "trajectories": entries,
    }
    if extra:
        manifest.update(extra)
    manifest_path = out / "manifest.json"
    with open(manifest_path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest_path


def load_dataset(data_dir) -> TrajectorySet:
    """Read a dataset directory written by ``save_dataset``."""
    root = Path(data_dir)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise IoFailureError(f"no manifest.json in {root}")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    trajs: List[FeatureTrajectory] = []
    metas: List[dict] = []
    for entry in manifest["trajectories"]:
        traj = load_trajectory(root / entry["file"])
        trajs.append(FeatureTrajectory(
            data=traj.data, step_labels=traj.step_labels,
            labels_descending=traj.labels_descending, seed=entry.get("seed", traj.seed),
            source_tag=entry.get("tag", "external"),
        ))
        metas.append({k: v for k, v in entry.items() if k != "file"})
    return TrajectorySet(trajectories=tuple(trajs), manifest=tuple(metas))
