"""JSONL dataset files with a JSON metadata sidecar."""
from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .spec import FullSample, ScmSpec

DATASET_FORMAT_VERSION = 1


class DatasetFormatError(ValueError):
    pass


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".meta.json")


def _encode_t(t):
    if isinstance(t, (int, np.integer)):
        return int(t)
    return [float(v) for v in np.asarray(t).reshape(-1)]


def _decode_t(v, lineno: int, key: str):
    if isinstance(v, bool):
        raise DatasetFormatError(f"line {lineno}: field {key!r} must be a number or array")
    if isinstance(v, int):
        return v
    if isinstance(v, float):
        return np.array([v])
    if isinstance(v, list):
        return np.asarray(v, dtype=np.float64)
    raise DatasetFormatError(f"line {lineno}: field {key!r} must be a number or array")


def write_dataset(samples: list[FullSample], path, spec: ScmSpec | None = None, seed: int | None = None) -> None:
    path = Path(path)
    lines = []
    for s in samples:
        rec = {"x": [int(v) for v in s.x], "t": _encode_t(s.t), "t_prime": _encode_t(s.t_prime),
               "y": [float(v) for v in s.y]}
        if s.z_true is not None:
            rec["z_true"] = [float(v) for v in s.z_true]
        if s.y_prime_true is not None:
            rec["y_prime_true"] = [float(v) for v in s.y_prime_true]
        lines.append(json.dumps(rec, separators=(",", ":")))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    meta = {
        "format_version": DATASET_FORMAT_VERSION,
        "n": len(samples),
        "seed": seed,
        "spec": spec.to_dict() if spec is not None else None,
    }
    sidecar_path(path).write_text(json.dumps(meta, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def read_metadata(path) -> dict | None:
    side = sidecar_path(path)
    if not side.exists():
        return None
    meta = json.loads(side.read_text(encoding="utf-8"))
    version = meta.get("format_version")
    if version != DATASET_FORMAT_VERSION:
        raise DatasetFormatError(f"{side}: format version {version!r} != supported {DATASET_FORMAT_VERSION}")
    return meta


def read_spec(path) -> ScmSpec | None:
    meta = read_metadata(path)
    if meta is None or meta.get("spec") is None:
        return None
    return ScmSpec.from_dict(meta["spec"])


def read_dataset(path) -> list[FullSample]:
    """Parse a dataset file. Ground-truth fields are ``None`` when absent."""
    path = Path(path)
    meta = read_metadata(path)
    text = path.read_text(encoding="utf-8")
    if text and not text.endswith("\n"):
        nlines = text.count("\n") + 1
        raise DatasetFormatError(f"line {nlines}: truncated record (no trailing newline)")
    samples = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetFormatError(f"line {lineno}: malformed record ({exc.msg})") from None
        if not isinstance(rec, dict):
            raise DatasetFormatError(f"line {lineno}: record must be a JSON object")
        for key in ("x", "t", "t_prime", "y"):
            if key not in rec:
                raise DatasetFormatError(f"line {lineno}: missing field {key!r}")
        try:
            x = tuple(int(v) for v in rec["x"])
            y = np.asarray(rec["y"], dtype=np.float64)
            z = np.asarray(rec["z_true"], dtype=np.float64) if "z_true" in rec else None
            yp = np.asarray(rec["y_prime_true"], dtype=np.float64) if "y_prime_true" in rec else None
        except (TypeError, ValueError) as exc:
            raise DatasetFormatError(f"line {lineno}: bad value ({exc})") from None
        t = _decode_t(rec["t"], lineno, "t")
        tp = _decode_t(rec["t_prime"], lineno, "t_prime")
        samples.append(FullSample(x, t, tp, y, z, yp))
    if meta is not None and meta.get("n") is not None and meta["n"] != len(samples):
        raise DatasetFormatError(
            f"line {len(samples) + 1}: expected {meta['n']} records, file ends after {len(samples)}")
    return samples


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
