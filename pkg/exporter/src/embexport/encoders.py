"""Deterministic local encoders.

The exporter bridges encoders to the retrieval engine's file formats.  The
built-in encoders are seeded featurizers rather than pretrained networks:
identical inputs always produce identical bytes, on any machine, which is
what the downstream engine's reproducibility contract needs.  Encoders are
selected by id string; an unknown id raises ``EncoderError`` (the load
failure path callers must handle).
"""

from __future__ import annotations

import hashlib
import re

import numpy as np
from PIL import Image

TEXT_ENCODERS = ("hashing-text-v1",)
VISION_ENCODERS = ("patch-stats-v1",)

_TOKEN_RE = re.compile(r"[a-z0-9']+")
_GRID = 8  # downsample size for the vision featurizer


class EncoderError(ValueError):
    """Unknown encoder id or unusable input."""


def _seed_from(*parts: str) -> int:
    digest = hashlib.sha256(":".join(parts).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


class TextEncoder:
    """Hash-seeded token embeddings: one unit-norm row per token."""

    def __init__(self, encoder_id: str, d_l: int):
        if encoder_id not in TEXT_ENCODERS:
            raise EncoderError(f"unknown text encoder {encoder_id!r}")
        self.encoder_id = encoder_id
        self.d_l = d_l
        self._cache: dict[str, np.ndarray] = {}

    def _token_vector(self, token: str) -> np.ndarray:
        vec = self._cache.get(token)
        if vec is None:
            rng = np.random.default_rng(_seed_from(self.encoder_id, str(self.d_l), token))
            vec = rng.standard_normal(self.d_l)
            vec = (vec / np.linalg.norm(vec)).astype(np.float32)
            self._cache[token] = vec
        return vec

    def encode(self, text: str) -> np.ndarray:
        """(tokens, d_l) matrix; empty input is an error."""
        tokens = tokenize(text)
        if not tokens:
            raise EncoderError("empty input")
        return np.stack([self._token_vector(t) for t in tokens])


class VisionEncoder:
    """Patch-statistics features: grayscale downsample through a fixed map.

    The image (or crop) is resized to an 8x8 grid; the 64 intensities go
    through a seeded random projection to ``d_v`` and are L2-normalized.
    """

    def __init__(self, encoder_id: str, d_v: int):
        if encoder_id not in VISION_ENCODERS:
            raise EncoderError(f"unknown vision encoder {encoder_id!r}")
        self.encoder_id = encoder_id
        self.d_v = d_v
        rng = np.random.default_rng(_seed_from(encoder_id, "projection", str(d_v)))
        self._proj = rng.standard_normal((d_v, _GRID * _GRID)) / np.sqrt(_GRID * _GRID)

    def _featurize(self, image: Image.Image) -> np.ndarray:
        gray = image.convert("L").resize((_GRID, _GRID), Image.BILINEAR)
        v = np.asarray(gray, dtype=np.float64).reshape(-1) / 255.0
        out = self._proj @ (v - v.mean() + 1.0 / _GRID)
        norm = np.linalg.norm(out)
        if norm == 0:
            out = self._proj[:, 0].copy()
            norm = np.linalg.norm(out)
        return (out / norm).astype(np.float32)

    def encode_image(self, image: Image.Image) -> np.ndarray:
        return self._featurize(image)

    def encode_crop(self, image: Image.Image, bbox: tuple[float, float, float, float]) -> np.ndarray:
        x, y, w, h = bbox
        if w <= 0 or h <= 0:
            raise EncoderError(f"degenerate bbox {bbox}")
        left = max(0, int(round(x)))
        top = max(0, int(round(y)))
        right = min(image.width, int(round(x + w)))
        bottom = min(image.height, int(round(y + h)))
        if right <= left or bottom <= top:
            raise EncoderError(f"bbox {bbox} falls outside the image")
        return self._featurize(image.crop((left, top, right, bottom)))
