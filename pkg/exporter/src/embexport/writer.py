"""Writers for the retrieval engine's binary container and manifest.

Implemented independently against the documented byte layout (the engine
repo's docs/FORMATS.md); the exporter deliberately does not import the
engine, so these writers are the compatibility surface and are verified by
feeding their output to the engine's own tooling.
"""

from __future__ import annotations

import os
import struct
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

MAGIC = b"FLMR"
FORMAT_VERSION = 1
KIND_EMBEDDINGS = 1
KIND_FEATURES = 2


def atomic_write(path: Path | str, payload: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(payload)
    os.replace(tmp, path)


def _header(kind: int) -> bytes:
    return MAGIC + struct.pack("<II", FORMAT_VERSION, kind)


def write_embeddings(matrices: Sequence[np.ndarray], path: Path | str) -> None:
    """Token matrices (float32, shared width), no row labels."""
    if not matrices:
        raise ValueError("nothing to write")
    dim = matrices[0].shape[1]
    out = bytearray(_header(KIND_EMBEDDINGS))
    out += struct.pack("<III", dim, len(matrices), 0)
    for m in matrices:
        if m.ndim != 2 or m.shape[1] != dim:
            raise ValueError(f"matrix shape {m.shape} does not match width {dim}")
        out += struct.pack("<I", m.shape[0])
    for m in matrices:
        out += np.ascontiguousarray(m, dtype="<f4").tobytes()
    atomic_write(path, bytes(out))


def write_features(
    features: Sequence[
        tuple[np.ndarray, str, Optional[tuple[float, float, float, float]], Optional[str]]
    ],
    path: Path | str,
) -> None:
    """Visual features as (vector, kind 'global'|'roi', bbox or None, class name)."""
    if not features:
        raise ValueError("nothing to write")
    dim = features[0][0].shape[0]
    out = bytearray(_header(KIND_FEATURES))
    out += struct.pack("<II", dim, len(features))
    for vec, kind, bbox, class_name in features:
        if vec.shape != (dim,):
            raise ValueError(f"feature shape {vec.shape} does not match width {dim}")
        out += struct.pack("<BB", 0 if kind == "global" else 1, 1 if bbox else 0)
        if bbox:
            out += struct.pack("<4f", *bbox)
        raw = (class_name or "").encode("utf-8")
        out += struct.pack("<H", len(raw)) + raw
        out += np.ascontiguousarray(vec, dtype="<f4").tobytes()
    atomic_write(path, bytes(out))


def write_manifest(path: Path | str, values: dict, files: dict) -> None:
    lines = {str(k): str(v) for k, v in values.items()}
    for name, rel in files.items():
        lines[f"file.{name}"] = rel
    text = "".join(f"{k}: {v}\n" for k, v in sorted(lines.items()))
    atomic_write(path, text.encode("utf-8"))


def write_lines(path: Path | str, lines: Sequence[str]) -> None:
    atomic_write(path, "".join(line + "\n" for line in lines).encode("utf-8"))
