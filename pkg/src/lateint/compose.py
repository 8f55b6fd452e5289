"""Assemble token matrices for queries and documents.

A query matrix stacks the encoded question text, the mapped global image
tokens, and one mapped token block per region of interest; a multi-modal
document appends the mapped document-image tokens to its text tokens.  ROI
selection prefers regions whose detected class is mentioned in the question,
then larger boxes.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .types import (
    KIND_ROI,
    LABEL_DOC_IMG,
    LABEL_GLOBAL,
    LABEL_TEXT,
    DimensionMismatch,
    DocumentRecord,
    EngineError,
    MappingNetwork,
    QueryBundle,
    TokenMatrix,
    VisualFeature,
    roi_label,
)


def map_visual(
    feature: VisualFeature, net: MappingNetwork, normalize_rows: bool = True
) -> TokenMatrix:
    """Project one visual feature into ``n_vt`` token rows of width ``d_l``.

    Forward pass: ``tanh(x @ w1 + b1) @ w2 + b2`` reshaped row-major, rows
    L2-normalized when the row policy is on.
    """
    x = feature.data.astype(np.float64)
    if x.shape[0] != net.d_v:
        raise DimensionMismatch(
            f"feature dim {x.shape[0]} != network input dim {net.d_v}"
        )
    hidden = np.tanh(x @ net.w1 + net.b1)
    out = hidden @ net.w2 + net.b2
    tokens = out.reshape(net.n_vt, net.d_l)
    if normalize_rows:
        norms = np.linalg.norm(tokens, axis=1, keepdims=True)
        norms[norms == 0] = 1.0
        tokens = tokens / norms
    return TokenMatrix(tokens.astype(np.float32))


@dataclass(frozen=True)
class RoiCandidate:
    """One ROI proposal scored for selection."""

    feature: VisualFeature
    area: float
    mentioned: bool
    order: int  # original position, final tie-break


def _word_mentioned(class_name: Optional[str], question_text: str) -> bool:
    if not class_name:
        return False
    return re.search(rf"\b{re.escape(class_name)}\b", question_text, re.IGNORECASE) is not None


def build_roi_candidates(
    features: Sequence[VisualFeature], question_text: str
) -> list[RoiCandidate]:
    out = []
    for i, f in enumerate(features):
        if f.kind != KIND_ROI or f.bbox is None:
            raise EngineError(f"roi candidate {i} is not an ROI feature with a bbox")
        _, _, w, h = f.bbox
        area = float(w) * float(h)
        if area <= 0:
            raise EngineError(f"roi candidate {i} has non-positive area")
        out.append(
            RoiCandidate(
                feature=f,
                area=area,
                mentioned=_word_mentioned(f.class_name, question_text),
                order=i,
            )
        )
    return out


def select_rois(
    features: Sequence[VisualFeature], question_text: str, n_roi: int
) -> list[VisualFeature]:
    """Pick up to ``n_roi`` regions: mentioned first, then larger, then by name.

    Returns fewer than ``n_roi`` when there are fewer candidates; the query
    composer pads the deficit with the global feature.
    """
    if n_roi < 0:
        raise EngineError("n_roi must be >= 0")
    candidates = build_roi_candidates(features, question_text)
    ordered = sorted(
        candidates,
        key=lambda c: (not c.mentioned, -c.area, c.feature.class_name or "", c.order),
    )
    return [c.feature for c in ordered[:n_roi]]


def compose_query(
    bundle: QueryBundle,
    net: MappingNetwork,
    n_roi: Optional[int] = None,
    normalize_rows: bool = True,
) -> TokenMatrix:
    """Stack [text tokens; global tokens; roi_1 tokens; ...; roi_n tokens].

    Total rows are always ``l_q + (n_roi + 1) * n_vt``: if the bundle carries
    fewer ROI features than ``n_roi``, the missing slots are filled with the
    global feature so the shape stays static.
    """
    if n_roi is None:
        n_roi = len(bundle.roi_features)
    text = bundle.question_tokens
    if text.dim != net.d_l:
        raise DimensionMismatch(
            f"question token dim {text.dim} != network output dim {net.d_l}"
        )
    features = [bundle.global_feature] + list(bundle.roi_features[:n_roi])
    while len(features) < n_roi + 1:
        features.append(bundle.global_feature)
    blocks = [text.data]
    labels = [LABEL_TEXT] * text.rows
    for slot, feat in enumerate(features):
        mapped = map_visual(feat, net, normalize_rows=normalize_rows)
        blocks.append(mapped.data)
        label = LABEL_GLOBAL if slot == 0 else roi_label(slot - 1)
        labels.extend([label] * mapped.rows)
    return TokenMatrix(np.vstack(blocks), row_labels=tuple(labels))


def compose_document(
    record: DocumentRecord,
    net: Optional[MappingNetwork] = None,
    multimodal: bool = False,
    normalize_rows: bool = True,
) -> TokenMatrix:
    """Document tokens, with mapped image tokens appended when multimodal."""
    text = record.tokens
    if not multimodal:
        labels = text.row_labels or (LABEL_TEXT,) * text.rows
        return TokenMatrix(text.data, row_labels=tuple(labels))
    if record.image_feature is None:
        raise EngineError(f"document {record.doc_id} has no image feature")
    if net is None:
        raise EngineError("multimodal composition requires a mapping network")
    mapped = map_visual(record.image_feature, net, normalize_rows=normalize_rows)
    labels = (LABEL_TEXT,) * text.rows + (LABEL_DOC_IMG,) * mapped.rows
    return TokenMatrix(np.vstack([text.data, mapped.data]), row_labels=labels)
