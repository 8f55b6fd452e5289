"""Export jobs: text token embeddings and image/ROI features.

Outputs are corpus directories in the engine's layout (manifest plus blobs)
so the engine can load and validate them directly.  The exporter never
computes relevance scores; all scoring stays in the engine.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional

import numpy as np
from PIL import Image, UnidentifiedImageError

from .encoders import EncoderError, TextEncoder, VisionEncoder
from .roi import Box, order_boxes, read_boxes
from . import writer


@dataclass(frozen=True)
class ExportJob:
    """Dimensions and policies an export must honor (the target manifest)."""

    text_encoder: str = "hashing-text-v1"
    vision_encoder: str = "patch-stats-v1"
    d_l: int = 16
    d_v: int = 16
    n_vt: int = 1
    n_roi: int = 4
    crop_policy: str = "clip"  # clip to image bounds; "strict" errors instead


def export_text(
    texts: Mapping[str, str],
    out_dir: Path | str,
    job: ExportJob,
    role: str = "documents",
) -> dict[str, np.ndarray]:
    """Encode ``id -> text`` into token-matrix blobs; returns the matrices.

    ``role`` selects the manifest section: "documents" or "questions".
    Re-exporting the same inputs produces identical bytes.
    """
    if role not in ("documents", "questions"):
        raise ValueError(f"unknown role {role!r}")
    encoder = TextEncoder(job.text_encoder, job.d_l)
    ids = sorted(texts)
    matrices = {}
    for key in ids:
        matrices[key] = encoder.encode(texts[key])

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if role == "documents":
        writer.write_embeddings([matrices[k] for k in ids], out / "docs.bin")
        writer.write_lines(out / "docs.ids.txt", ids)
        writer.write_lines(
            out / "doc_texts.tsv", [f"{k}\t{texts[k]}" for k in ids]
        )
        files = {
            "documents": "docs.bin",
            "document_ids": "docs.ids.txt",
            "document_texts": "doc_texts.tsv",
        }
        counts = {"doc_count": len(ids), "query_count": 0}
    else:
        writer.write_embeddings([matrices[k] for k in ids], out / "queries.bin")
        writer.write_lines(out / "queries.ids.txt", ids)
        writer.write_lines(
            out / "queries.meta.jsonl",
            [json.dumps({"query_id": k, "question_text": texts[k]}) for k in ids],
        )
        files = {
            "queries": "queries.bin",
            "query_ids": "queries.ids.txt",
            "query_meta": "queries.meta.jsonl",
        }
        counts = {"doc_count": 0, "query_count": len(ids)}
    writer.write_manifest(
        out / "manifest.txt",
        {
            "format_version": writer.FORMAT_VERSION,
            "d_v": job.d_v,
            "d_l": job.d_l,
            "n_vt": job.n_vt,
            "n_roi": 0 if role == "documents" else job.n_roi,
            "normalize_rows": "true",
            **counts,
        },
        files,
    )
    return matrices


def _load_image(path: Path) -> Image.Image:
    try:
        with Image.open(path) as img:
            return img.convert("RGB")
    except (UnidentifiedImageError, OSError) as e:
        raise EncoderError(f"unreadable image {path.name}: {e}") from None


def _image_feature_set(
    image: Image.Image, boxes: list[Box], question: str, job: ExportJob, encoder
) -> tuple[list, list[Box]]:
    """Global feature + n_roi entries (ROI crops, global pads for deficits)."""
    global_vec = encoder.encode_image(image)
    feats = [(global_vec, "global", None, None)]
    ordered = order_boxes(boxes, question, job.n_roi)
    for box in ordered:
        bbox = (box.x, box.y, box.w, box.h)
        if job.crop_policy == "strict":
            if (
                box.x < 0
                or box.y < 0
                or box.x + box.w > image.width
                or box.y + box.h > image.height
            ):
                raise EncoderError(f"bbox {bbox} exceeds image bounds")
        feats.append((encoder.encode_crop(image, bbox), "roi", bbox, box.class_name))
    for _ in range(job.n_roi - len(ordered)):
        feats.append((global_vec, "global", None, None))
    return feats, ordered


def _image_paths(image_dir: Path) -> list[Path]:
    paths = sorted(
        p for p in image_dir.iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg")
    )
    if not paths:
        raise EncoderError(f"no images found in {image_dir}")
    return paths


def export_vision(
    image_dir: Path | str,
    boxes_path: Path | str,
    out_dir: Path | str,
    job: ExportJob,
    questions: Optional[Mapping[str, str]] = None,
) -> dict[str, list[Box]]:
    """One global feature plus up to ``n_roi`` ROI features per image.

    Images are ``<image_id>.png`` (or .jpg) files under ``image_dir``;
    detected boxes come from the metadata TSV.  ROI order follows the
    engine's selection rule using each image's question text (empty string
    when absent, i.e. pure area ordering).  Images with fewer boxes than
    ``n_roi`` are padded with the global feature so every image contributes
    exactly ``1 + n_roi`` entries.  Returns the chosen boxes per image.
    """
    encoder = VisionEncoder(job.vision_encoder, job.d_v)
    boxes_by_image = read_boxes(boxes_path)
    questions = questions or {}
    paths = _image_paths(Path(image_dir))

    feats = []
    chosen: dict[str, list[Box]] = {}
    for path in paths:
        image_id = path.stem
        per_image, ordered = _image_feature_set(
            _load_image(path),
            boxes_by_image.get(image_id, []),
            questions.get(image_id, ""),
            job,
            encoder,
        )
        feats.extend(per_image)
        chosen[image_id] = ordered

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    writer.write_features(feats, out / "features.bin")
    writer.write_manifest(
        out / "manifest.txt",
        {
            "format_version": writer.FORMAT_VERSION,
            "d_v": job.d_v,
            "d_l": job.d_l,
            "n_vt": job.n_vt,
            "n_roi": job.n_roi,
            "doc_count": 0,
            "query_count": len(paths),
            "normalize_rows": "true",
        },
        {"features": "features.bin"},
    )
    return chosen


def export_queries(
    questions: Mapping[str, str],
    image_dir: Path | str,
    boxes_path: Path | str,
    out_dir: Path | str,
    job: ExportJob,
) -> dict[str, list[Box]]:
    """Full query bundles: question tokens plus per-image feature sets.

    Question ids double as image ids: every question needs
    ``<image_id>.png`` under ``image_dir``.  The output directory is a
    complete queries corpus the engine can load directly.
    """
    text_encoder = TextEncoder(job.text_encoder, job.d_l)
    vision_encoder = VisionEncoder(job.vision_encoder, job.d_v)
    boxes_by_image = read_boxes(boxes_path)
    image_dir = Path(image_dir)

    ids = sorted(questions)
    feats = []
    chosen: dict[str, list[Box]] = {}
    matrices = []
    for image_id in ids:
        path = image_dir / f"{image_id}.png"
        if not path.exists():
            path = image_dir / f"{image_id}.jpg"
        if not path.exists():
            raise EncoderError(f"no image for question {image_id}")
        matrices.append(text_encoder.encode(questions[image_id]))
        per_image, ordered = _image_feature_set(
            _load_image(path),
            boxes_by_image.get(image_id, []),
            questions[image_id],
            job,
            vision_encoder,
        )
        feats.extend(per_image)
        chosen[image_id] = ordered

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    writer.write_embeddings(matrices, out / "queries.bin")
    writer.write_lines(out / "queries.ids.txt", ids)
    writer.write_lines(
        out / "queries.meta.jsonl",
        [json.dumps({"query_id": k, "question_text": questions[k]}) for k in ids],
    )
    writer.write_features(feats, out / "features.bin")
    writer.write_manifest(
        out / "manifest.txt",
        {
            "format_version": writer.FORMAT_VERSION,
            "d_v": job.d_v,
            "d_l": job.d_l,
            "n_vt": job.n_vt,
            "n_roi": job.n_roi,
            "doc_count": 0,
            "query_count": len(ids),
            "normalize_rows": "true",
        },
        {
            "queries": "queries.bin",
            "query_ids": "queries.ids.txt",
            "query_meta": "queries.meta.jsonl",
            "features": "features.bin",
        },
    )
    return chosen
