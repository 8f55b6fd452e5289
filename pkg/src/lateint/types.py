"""Shared domain types for the late-interaction retrieval engine.

Everything here is an immutable value object.  Numeric payloads are numpy
arrays frozen with ``writeable = False`` after construction, so instances are
safe to share across threads.  Structural problems (wrong rank, wrong field
type) raise at construction; *semantic* problems (NaNs, dimension mismatches,
empty answer sets) are reported by :func:`validate`, which never raises.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

# Row labels used to mark the blocks of a composed query/document matrix.
LABEL_TEXT = "text"
LABEL_GLOBAL = "global_img"
LABEL_DOC_IMG = "doc_img"

KIND_GLOBAL = "global"
KIND_ROI = "roi"

UNIT_NORM_TOL = 1e-5


def roi_label(k: int) -> str:
    return f"roi:{k}"


class EngineError(ValueError):
    """Base class for errors raised by the engine."""


class DimensionMismatch(EngineError):
    """Operands disagree on an embedding dimension."""


def _freeze(arr: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(arr)
    out.flags.writeable = False
    return out


@dataclass(frozen=True, eq=False)
class TokenMatrix:
    """A stack of token embeddings: one row per token, ``dim`` columns.

    Used both for queries (text tokens plus mapped visual tokens) and for
    documents.  ``row_labels``, when present, tags each row with the block it
    came from (text, global image, roi:k, doc image).
    """

    data: np.ndarray
    row_labels: Optional[tuple[str, ...]] = None

    def __post_init__(self) -> None:
        arr = np.asarray(self.data, dtype=np.float32)
        if arr.ndim != 2:
            raise EngineError(f"token matrix must be 2-D, got shape {arr.shape}")
        object.__setattr__(self, "data", _freeze(arr))
        if self.row_labels is not None:
            object.__setattr__(self, "row_labels", tuple(self.row_labels))

    def __eq__(self, other) -> bool:
        if not isinstance(other, TokenMatrix):
            return NotImplemented
        return (
            self.data.shape == other.data.shape
            and self.data.tobytes() == other.data.tobytes()
            and self.row_labels == other.row_labels
        )

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    def block(self, label: str) -> np.ndarray:
        """Rows carrying ``label``; requires row_labels to be present."""
        if self.row_labels is None:
            raise EngineError("token matrix has no row labels")
        mask = [i for i, lab in enumerate(self.row_labels) if lab == label]
        return self.data[mask]


@dataclass(frozen=True, eq=False)
class VisualFeature:
    """A single vision-encoder output vector (global image or ROI crop).

    Box coordinates are canonicalized to float32 so serialization round-trips
    exactly.
    """

    data: np.ndarray
    kind: str = KIND_GLOBAL
    bbox: Optional[tuple[float, float, float, float]] = None  # (x, y, w, h) px
    class_name: Optional[str] = None

    def __post_init__(self) -> None:
        arr = np.asarray(self.data, dtype=np.float32)
        if arr.ndim != 1:
            raise EngineError(f"visual feature must be 1-D, got shape {arr.shape}")
        object.__setattr__(self, "data", _freeze(arr))
        if self.bbox is not None:
            object.__setattr__(
                self, "bbox", tuple(float(np.float32(v)) for v in self.bbox)
            )

    @property
    def dim(self) -> int:
        return self.data.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, VisualFeature):
            return NotImplemented
        return (
            self.data.tobytes() == other.data.tobytes()
            and self.kind == other.kind
            and self.bbox == other.bbox
            and self.class_name == other.class_name
        )


@dataclass(frozen=True)
class MappingNetwork:
    """Parameters of the 2-layer MLP projecting a visual feature to tokens.

    Maps a ``d_v`` vector through a tanh hidden layer of width ``hidden`` to
    ``n_vt * d_l`` values, reshaped row-major into ``n_vt`` token rows.  By
    default ``hidden == n_vt * d_l // 2``.  Parameters are float64 so that
    training and finite-difference checks share one numeric path.
    """

    w1: np.ndarray  # (d_v, hidden)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (hidden, n_vt * d_l)
    b2: np.ndarray  # (n_vt * d_l,)
    n_vt: int
    d_l: int

    def __post_init__(self) -> None:
        for name in ("w1", "b1", "w2", "b2"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            object.__setattr__(self, name, _freeze(arr))
        if self.w1.ndim != 2 or self.w2.ndim != 2:
            raise EngineError("weight matrices must be 2-D")
        if self.b1.ndim != 1 or self.b2.ndim != 1:
            raise EngineError("biases must be 1-D")

    @property
    def d_v(self) -> int:
        return self.w1.shape[0]

    @property
    def hidden(self) -> int:
        return self.w1.shape[1]

    def replace_params(
        self, w1: np.ndarray, b1: np.ndarray, w2: np.ndarray, b2: np.ndarray
    ) -> "MappingNetwork":
        return MappingNetwork(w1=w1, b1=b1, w2=w2, b2=b2, n_vt=self.n_vt, d_l=self.d_l)


@dataclass(frozen=True)
class QueryBundle:
    """One query: question tokens plus the visual features feeding the mapper.

    ``question_tokens`` is the encoded question text (any serialized
    text-based vision is assumed to already be part of it).  ``query_id`` is
    engine bookkeeping used by run files.
    """

    question_tokens: TokenMatrix
    global_feature: VisualFeature
    roi_features: tuple[VisualFeature, ...] = ()
    question_text: str = ""
    query_id: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "roi_features", tuple(self.roi_features))


@dataclass(frozen=True)
class DocumentRecord:
    """A knowledge-base document: token embeddings plus optional extras.

    ``image_feature`` supports multi-modal documents; ``pooled`` holds a
    precomputed one-dimensional embedding for the pooled-retrieval baseline.
    """

    doc_id: str
    tokens: TokenMatrix
    image_feature: Optional[VisualFeature] = None
    pooled: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        if self.pooled is not None:
            arr = np.asarray(self.pooled, dtype=np.float32)
            if arr.ndim != 1:
                raise EngineError("pooled embedding must be 1-D")
            object.__setattr__(self, "pooled", _freeze(arr))


def normalize_answer(s: str) -> str:
    """Canonical answer form: lowercased, surrounding whitespace trimmed."""
    return s.strip().lower()


@dataclass(frozen=True)
class EvalRecord:
    """Everything needed to score one question.

    ``answers`` is the multiset of human answer strings (stored normalized).
    ``candidate_answers`` holds (generated answer, generation log-prob) pairs
    aligned one-to-one with ``retrieved_doc_ids``.
    """

    question_id: str
    answers: tuple[str, ...]
    retrieved_doc_ids: tuple[str, ...] = ()
    candidate_answers: Optional[tuple[tuple[str, float], ...]] = None
    no_knowledge_answer: Optional[str] = None

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "answers", tuple(normalize_answer(a) for a in self.answers)
        )
        object.__setattr__(self, "retrieved_doc_ids", tuple(self.retrieved_doc_ids))
        if self.candidate_answers is not None:
            object.__setattr__(
                self,
                "candidate_answers",
                tuple((str(y), float(lp)) for y, lp in self.candidate_answers),
            )


# ---------------------------------------------------------------------------
# validation


def _check_finite(arr: np.ndarray, what: str, out: list[str]) -> None:
    bad = np.argwhere(~np.isfinite(arr))
    if bad.size:
        idx = tuple(int(v) for v in bad[0])
        out.append(f"{what}: non-finite value at {idx}")


def _validate_token_matrix(
    tm: TokenMatrix, out: list[str], normalize_rows: bool | None
) -> None:
    if tm.rows < 1:
        out.append("token matrix: rows < 1")
    if tm.dim < 1:
        out.append("token matrix: dim < 1")
    _check_finite(tm.data, "token matrix", out)
    if tm.row_labels is not None and len(tm.row_labels) != tm.rows:
        out.append("token matrix: row_labels length does not match rows")
    if normalize_rows and tm.rows >= 1 and np.all(np.isfinite(tm.data)):
        norms = np.linalg.norm(tm.data.astype(np.float64), axis=1)
        off = np.abs(norms - 1.0)
        if off.size and off.max() > UNIT_NORM_TOL:
            i = int(np.argmax(off))
            out.append(f"token matrix: row {i} not unit-norm (|n-1|={off[i]:.2e})")


def _validate_visual_feature(
    vf: VisualFeature, out: list[str], expected_dim: int | None
) -> None:
    if vf.dim < 1:
        out.append("visual feature: dim < 1")
    _check_finite(vf.data, "visual feature", out)
    if vf.kind not in (KIND_GLOBAL, KIND_ROI):
        out.append(f"visual feature: unknown kind {vf.kind!r}")
    if vf.kind == KIND_ROI:
        if vf.bbox is None:
            out.append("visual feature: ROI without bbox")
        else:
            x, y, w, h = vf.bbox
            if not (w > 0 and h > 0):
                out.append("visual feature: ROI bbox has non-positive extent")
    if expected_dim is not None and vf.dim != expected_dim:
        out.append(f"visual feature: dim {vf.dim} != manifest d_v {expected_dim}")


def _validate_mapping_network(net: MappingNetwork, out: list[str]) -> None:
    for name in ("w1", "b1", "w2", "b2"):
        _check_finite(getattr(net, name), f"mapping network {name}", out)
    if net.b1.shape[0] != net.hidden:
        out.append("mapping network: b1 width != hidden width")
    if net.w2.shape[0] != net.hidden:
        out.append("mapping network: w2 rows != hidden width")
    if net.w2.shape[1] != net.n_vt * net.d_l:
        out.append("mapping network: w2 cols != n_vt * d_l")
    if net.b2.shape[0] != net.n_vt * net.d_l:
        out.append("mapping network: b2 width != n_vt * d_l")


def _validate_query_bundle(
    qb: QueryBundle, out: list[str], manifest=None, normalize_rows=None
) -> None:
    _validate_token_matrix(qb.question_tokens, out, normalize_rows)
    dims = {qb.global_feature.dim} | {r.dim for r in qb.roi_features}
    if len(dims) > 1:
        out.append("query bundle: feature dim mismatch")
    expected = getattr(manifest, "d_v", None)
    _validate_visual_feature(qb.global_feature, out, expected)
    for r in qb.roi_features:
        _validate_visual_feature(r, out, expected)
    n_roi = getattr(manifest, "n_roi", None)
    if n_roi is not None and len(qb.roi_features) != n_roi:
        out.append(
            f"query bundle: {len(qb.roi_features)} roi features != manifest n_roi {n_roi}"
        )


def _validate_document(
    doc: DocumentRecord, out: list[str], manifest=None, normalize_rows=None
) -> None:
    if not doc.doc_id:
        out.append("document: empty doc_id")
    _validate_token_matrix(doc.tokens, out, normalize_rows)
    d_l = getattr(manifest, "d_l", None)
    if d_l is not None and doc.tokens.dim != d_l:
        out.append(f"document: token dim {doc.tokens.dim} != manifest d_l {d_l}")
    if doc.image_feature is not None:
        _validate_visual_feature(doc.image_feature, out, getattr(manifest, "d_v", None))
    if doc.pooled is not None:
        _check_finite(doc.pooled, "document pooled", out)


def _validate_eval_record(rec: EvalRecord, out: list[str]) -> None:
    if not rec.answers:
        out.append("eval record: empty answer set")
    if rec.candidate_answers is not None and len(rec.candidate_answers) != len(
        rec.retrieved_doc_ids
    ):
        out.append("eval record: candidate_answers length != retrieved_doc_ids length")


def validate(obj, manifest=None, normalize_rows: bool | None = None) -> list[str]:
    """Return all invariant violations for a domain object (empty = valid).

    ``manifest`` supplies corpus-level context (d_v, d_l, n_roi) when the
    caller has one; ``normalize_rows`` overrides the manifest's row policy.
    Validation never raises.
    """
    if normalize_rows is None and manifest is not None:
        normalize_rows = getattr(manifest, "normalize_rows", None)
    out: list[str] = []
    if isinstance(obj, TokenMatrix):
        _validate_token_matrix(obj, out, normalize_rows)
    elif isinstance(obj, VisualFeature):
        _validate_visual_feature(obj, out, getattr(manifest, "d_v", None))
    elif isinstance(obj, MappingNetwork):
        _validate_mapping_network(obj, out)
    elif isinstance(obj, QueryBundle):
        _validate_query_bundle(obj, out, manifest, normalize_rows)
    elif isinstance(obj, DocumentRecord):
        _validate_document(obj, out, manifest, normalize_rows)
    elif isinstance(obj, EvalRecord):
        _validate_eval_record(obj, out)
    else:
        out.append(f"unknown domain type {type(obj).__name__}")
    return out
