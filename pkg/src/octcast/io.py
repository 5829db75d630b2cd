"""Dataset and weight containers.

Datasets are JSON-lines (``.jsonl``) or the binary ``OCTD1`` container
(any other suffix, conventionally ``.octd``). Weights use ``OCTW1``. Both
binary formats are: magic bytes, an 8-byte little-endian manifest length,
the UTF-8 JSON manifest, then contiguous little-endian float32 data.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import SchemaError
from .geometry import HandTrajectory
from .synthdata import TrainingSample

DATASET_MAGIC = b"OCTD1"
WEIGHTS_MAGIC = b"OCTW1"
_ARRAY_FIELDS = (("features", "hand"), ("features", "object"), ("features", "global"), ("boxes", "hand"), ("boxes", "object"))


def _dumps(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), sort_keys=True)


def sample_to_record(s: TrainingSample, arrays_inline: bool = True) -> dict:
    rec = {
        "id": s.id,
        "T": s.T,
        "F": s.F,
        "features": {k: np.asarray(v, np.float32) for k, v in s.features.items()},
        "boxes": {k: np.asarray(v, np.float32) for k, v in s.boxes.items()},
        "valid": {k: np.asarray(v, bool).tolist() for k, v in s.valid.items()},
        "gt": {
            "trajectory": s.gt_trajectory.to_dict(),
            "contacts": np.asarray(s.gt_contacts, float).reshape(-1, 2).tolist(),
            "action": list(s.action) if s.action is not None else None,
        },
        "oracle": None,
    }
    if s.oracle_trajectory is not None:
        rec["oracle"] = {
            "trajectory": s.oracle_trajectory.to_dict(),
            "contacts": np.asarray(s.oracle_contacts, float).reshape(-1, 2).tolist(),
        }
    if arrays_inline:
        for a, b in _ARRAY_FIELDS:
            rec[a][b] = rec[a][b].tolist()
    return rec


def record_to_sample(rec: dict) -> TrainingSample:
    try:
        T, F = int(rec["T"]), int(rec["F"])
        feats = {k: np.asarray(rec["features"][k], np.float32) for k in ("hand", "object", "global")}
        boxes = {k: np.asarray(rec["boxes"][k], np.float32).astype(float) for k in ("hand", "object")}
        valid = {k: np.asarray(rec["valid"][k], bool) for k in ("hand", "object")}
        gt = rec["gt"]
        traj = HandTrajectory.from_dict(gt["trajectory"])
        contacts = np.asarray(gt["contacts"], float).reshape(-1, 2)
        action = tuple(int(v) for v in gt["action"]) if gt.get("action") is not None else None
        oracle = rec.get("oracle")
        o_traj = HandTrajectory.from_dict(oracle["trajectory"]) if oracle else None
        o_contacts = np.asarray(oracle["contacts"], float).reshape(-1, 2) if oracle else None
        sample_id = str(rec["id"])
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"malformed dataset record: {exc!r}") from exc
    d = feats["global"].shape[-1] if feats["global"].ndim == 2 else -1
    expected = {
        "hand": (2, T, d),
        "object": (2, T, d),
        "global": (T, d),
    }
    for k, shape in expected.items():
        if feats[k].shape != shape:
            raise SchemaError(f"{sample_id}: features.{k} has shape {feats[k].shape}, expected {shape}")
    for k in ("hand", "object"):
        if boxes[k].shape != (2, T, 4) or valid[k].shape != (2, T):
            raise SchemaError(f"{sample_id}: boxes/valid for {k} have wrong shape")
    if traj.horizon != F:
        raise SchemaError(f"{sample_id}: trajectory horizon {traj.horizon} != F={F}")
    return TrainingSample(sample_id, T, F, feats, boxes, valid, traj, contacts, action, o_traj, o_contacts)


def _write_container(path: Path, magic: bytes, manifest, chunks: list[bytes]):
    blob = _dumps(manifest).encode()
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for c in chunks:
            fh.write(c)


def _read_container(path: Path, magic: bytes):
    raw = Path(path).read_bytes()
    if raw[: len(magic)] != magic:
        raise SchemaError(f"{path}: bad magic, expected {magic!r}")
    if len(raw) < len(magic) + 8:
        raise SchemaError(f"{path}: truncated header")
    (n,) = struct.unpack("<Q", raw[len(magic) : len(magic) + 8])
    start = len(magic) + 8
    if len(raw) < start + n:
        raise SchemaError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(raw[start : start + n].decode())
    except ValueError as exc:
        raise SchemaError(f"{path}: corrupt manifest") from exc
    return manifest, memoryview(raw)[start + n :]


def _take(payload, offset: int, shape) -> np.ndarray:
    count = int(np.prod(shape)) if len(shape) else 1
    end = offset + 4 * count
    if end > len(payload):
        raise SchemaError("payload shorter than manifest declares")
    return np.frombuffer(payload[offset:end], dtype="<f4").reshape(shape).astype(np.float32)


def write_dataset(samples: Iterable[TrainingSample], path) -> None:
    path = Path(path)
    samples = list(samples)
    if path.suffix == ".jsonl":
        with open(path, "w") as fh:
            for s in samples:
                fh.write(_dumps(sample_to_record(s)) + "\n")
        return
    records, chunks, offset = [], [], 0
    for s in samples:
        rec = sample_to_record(s, arrays_inline=False)
        for a, b in _ARRAY_FIELDS:
            arr = rec[a][b].astype("<f4")
            chunks.append(arr.tobytes())
            rec[a][b] = {"offset": offset, "shape": list(arr.shape)}
            offset += arr.nbytes
        records.append(rec)
    _write_container(path, DATASET_MAGIC, {"records": records}, chunks)


def read_dataset(path) -> list[TrainingSample]:
    path = Path(path)
    if path.suffix == ".jsonl":
        out = []
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                except ValueError as exc:
                    raise SchemaError(f"{path}:{lineno}: invalid JSON") from exc
                out.append(record_to_sample(rec))
        if not out:
            raise SchemaError(f"{path}: dataset is empty")
        return out
    manifest, payload = _read_container(path, DATASET_MAGIC)
    out = []
    for rec in manifest.get("records", []):
        for a, b in _ARRAY_FIELDS:
            ref = rec[a][b]
            rec[a][b] = _take(payload, ref["offset"], ref["shape"])
        out.append(record_to_sample(rec))
    if not out:
        raise SchemaError(f"{path}: dataset is empty")
    return out


def save_weights(path, tensors: dict[str, np.ndarray], model_config: dict | None = None, meta: dict | None = None):
    """Write named float32 tensors in the ``OCTW1`` container."""
    entries, chunks, offset = [], [], 0
    for name in sorted(tensors):
        arr = np.ascontiguousarray(np.asarray(tensors[name], dtype="<f4"))
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    manifest = {"tensors": entries, "model_config": model_config or {}, "meta": meta or {}}
    _write_container(Path(path), WEIGHTS_MAGIC, manifest, chunks)


def load_weights(path) -> tuple[dict[str, np.ndarray], dict, dict]:
    manifest, payload = _read_container(Path(path), WEIGHTS_MAGIC)
    try:
        tensors = {e["name"]: _take(payload, e["offset"], e["shape"]) for e in manifest["tensors"]}
    except (KeyError, TypeError) as exc:
        raise SchemaError(f"{path}: malformed weight manifest") from exc
    return tensors, manifest.get("model_config", {}), manifest.get("meta", {})
