"""Embedding files, corpus manifests, and seeded synthetic corpora.

Binary layout (full byte tables in docs/FORMATS.md): every file starts with
the magic bytes ``FLMR``, a little-endian u32 format version, and a u32 kind
code.  Embedding files store token matrices as little-endian float32 rows;
network checkpoints store float64 parameters.  Write -> read roundtrips are
bit-exact.

A corpus lives in a directory: ``manifest.txt`` (one ``key: value`` datum per
line) plus the blobs it references.  All writers are atomic
(write-temp-then-rename) and fully deterministic, so rerunning a generation
with the same spec produces byte-identical artifacts.
"""

from __future__ import annotations

import json
import os
import re
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import compose, train
from .types import (
    KIND_GLOBAL,
    KIND_ROI,
    LABEL_DOC_IMG,
    LABEL_GLOBAL,
    LABEL_TEXT,
    EngineError,
    DocumentRecord,
    MappingNetwork,
    QueryBundle,
    TokenMatrix,
    VisualFeature,
)

MAGIC = b"FLMR"
FORMAT_VERSION = 1

KIND_EMBEDDINGS = 1
KIND_FEATURES = 2
KIND_NETWORK = 3
KIND_INDEX = 4

_LABEL_TO_CODE = {LABEL_TEXT: 0, LABEL_GLOBAL: 1, LABEL_DOC_IMG: 2}
_ROI_CODE_BASE = 3


class StoreError(EngineError):
    """Malformed file, bad path, or invalid spec."""


def _label_code(label: str) -> int:
    if label in _LABEL_TO_CODE:
        return _LABEL_TO_CODE[label]
    m = re.fullmatch(r"roi:(\d+)", label)
    if not m:
        raise StoreError(f"unsupported row label {label!r}")
    return _ROI_CODE_BASE + int(m.group(1))


def _code_label(code: int) -> str:
    for lab, c in _LABEL_TO_CODE.items():
        if c == code:
            return lab
    return f"roi:{code - _ROI_CODE_BASE}"


def atomic_write_bytes(path: Path | str, payload: bytes) -> None:
    """Write ``payload`` to ``path`` via a temp file and rename."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(payload)
    os.replace(tmp, path)


def atomic_write_text(path: Path | str, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


class _Reader:
    """Cursor over a byte buffer that reports truncation by offset."""

    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise StoreError(f"truncated at byte {len(self.buf)}")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u8(self) -> int:
        return self.take(1)[0]

    def f32s(self, n: int) -> np.ndarray:
        return np.frombuffer(self.take(4 * n), dtype="<f4").copy()

    def f64s(self, n: int) -> np.ndarray:
        return np.frombuffer(self.take(8 * n), dtype="<f8").copy()

    def string(self) -> str:
        n = self.u16()
        return self.take(n).decode("utf-8")


def _header(kind: int) -> bytes:
    return MAGIC + struct.pack("<II", FORMAT_VERSION, kind)


def _open_kind(buf: bytes, want_kind: int) -> _Reader:
    r = _Reader(buf)
    if r.take(4) != MAGIC:
        raise StoreError("bad magic")
    version = r.u32()
    if version != FORMAT_VERSION:
        raise StoreError(f"unsupported version {version}")
    kind = r.u32()
    if kind != want_kind:
        raise StoreError(f"unexpected file kind {kind}, wanted {want_kind}")
    return r


def _pack_string(s: str) -> bytes:
    raw = s.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise StoreError("string too long for format")
    return struct.pack("<H", len(raw)) + raw


# ---------------------------------------------------------------------------
# token-embedding files


def write_embeddings(matrices: Sequence[TokenMatrix], path: Path | str) -> None:
    """Serialize token matrices; all must share one embedding width."""
    if not matrices:
        raise StoreError("empty corpus")
    dim = matrices[0].dim
    for i, tm in enumerate(matrices):
        if tm.dim != dim:
            raise StoreError(f"record {i} has dim {tm.dim}, expected {dim}")
    has_labels = any(tm.row_labels is not None for tm in matrices)
    out = bytearray(_header(KIND_EMBEDDINGS))
    out += struct.pack("<III", dim, len(matrices), 1 if has_labels else 0)
    for tm in matrices:
        out += struct.pack("<I", tm.rows)
    if has_labels:
        for tm in matrices:
            labels = tm.row_labels or (LABEL_TEXT,) * tm.rows
            out += bytes(_label_code(lab) for lab in labels)
    for tm in matrices:
        out += tm.data.astype("<f4").tobytes()
    atomic_write_bytes(path, bytes(out))


def read_embeddings(path: Path | str) -> list[TokenMatrix]:
    """Inverse of :func:`write_embeddings`."""
    r = _open_kind(Path(path).read_bytes(), KIND_EMBEDDINGS)
    dim = r.u32()
    count = r.u32()
    flags = r.u32()
    rows = [r.u32() for _ in range(count)]
    labels: list[Optional[tuple[str, ...]]] = [None] * count
    if flags & 1:
        for i in range(count):
            codes = r.take(rows[i])
            labels[i] = tuple(_code_label(c) for c in codes)
    out = []
    for i in range(count):
        data = r.f32s(rows[i] * dim).reshape(rows[i], dim)
        out.append(TokenMatrix(data, row_labels=labels[i]))
    return out


# ---------------------------------------------------------------------------
# visual-feature files


def write_features(features: Sequence[VisualFeature], path: Path | str) -> None:
    if not features:
        raise StoreError("empty feature list")
    dim = features[0].dim
    out = bytearray(_header(KIND_FEATURES))
    out += struct.pack("<II", dim, len(features))
    for f in features:
        if f.dim != dim:
            raise StoreError(f"feature dim {f.dim} != {dim}")
        out += struct.pack("<BB", 0 if f.kind == KIND_GLOBAL else 1, 1 if f.bbox else 0)
        if f.bbox:
            out += struct.pack("<4f", *f.bbox)
        out += _pack_string(f.class_name or "")
        out += f.data.astype("<f4").tobytes()
    atomic_write_bytes(path, bytes(out))


def read_features(path: Path | str) -> list[VisualFeature]:
    r = _open_kind(Path(path).read_bytes(), KIND_FEATURES)
    dim = r.u32()
    count = r.u32()
    out = []
    for _ in range(count):
        kind = KIND_GLOBAL if r.u8() == 0 else KIND_ROI
        bbox = tuple(struct.unpack("<4f", r.take(16))) if r.u8() else None
        class_name = r.string() or None
        data = r.f32s(dim)
        out.append(VisualFeature(data, kind=kind, bbox=bbox, class_name=class_name))
    return out


# ---------------------------------------------------------------------------
# mapping-network checkpoints


def write_network(net: MappingNetwork, path: Path | str) -> None:
    out = bytearray(_header(KIND_NETWORK))
    out += struct.pack("<IIII", net.d_v, net.hidden, net.n_vt, net.d_l)
    for arr in (net.w1, net.b1, net.w2, net.b2):
        out += arr.astype("<f8").tobytes()
    atomic_write_bytes(path, bytes(out))


def read_network(path: Path | str) -> MappingNetwork:
    r = _open_kind(Path(path).read_bytes(), KIND_NETWORK)
    d_v, hidden, n_vt, d_l = (r.u32() for _ in range(4))
    w1 = r.f64s(d_v * hidden).reshape(d_v, hidden)
    b1 = r.f64s(hidden)
    w2 = r.f64s(hidden * n_vt * d_l).reshape(hidden, n_vt * d_l)
    b2 = r.f64s(n_vt * d_l)
    return MappingNetwork(w1=w1, b1=b1, w2=w2, b2=b2, n_vt=n_vt, d_l=d_l)


# ---------------------------------------------------------------------------
# corpus manifest


@dataclass(frozen=True)
class CorpusManifest:
    d_v: int
    d_l: int
    n_vt: int
    n_roi: int
    doc_count: int
    query_count: int
    normalize_rows: bool = True
    format_version: int = FORMAT_VERSION
    files: dict = field(default_factory=dict)

    def violations(self) -> list[str]:
        out = []
        for name in ("d_v", "d_l", "n_vt"):
            if getattr(self, name) < 1:
                out.append(f"manifest: {name} < 1")
        if self.n_roi < 0:
            out.append("manifest: n_roi < 0")
        return out


def write_manifest(manifest: CorpusManifest, path: Path | str) -> None:
    lines = {
        "format_version": str(manifest.format_version),
        "d_v": str(manifest.d_v),
        "d_l": str(manifest.d_l),
        "n_vt": str(manifest.n_vt),
        "n_roi": str(manifest.n_roi),
        "doc_count": str(manifest.doc_count),
        "query_count": str(manifest.query_count),
        "normalize_rows": "true" if manifest.normalize_rows else "false",
    }
    for name, rel in manifest.files.items():
        lines[f"file.{name}"] = rel
    text = "".join(f"{k}: {v}\n" for k, v in sorted(lines.items()))
    atomic_write_text(path, text)


def read_manifest(path: Path | str) -> CorpusManifest:
    path = Path(path)
    kv: dict[str, str] = {}
    for lineno, line in enumerate(path.read_text("utf-8").splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        if ":" not in line:
            raise StoreError(f"manifest line {lineno}: expected 'key: value'")
        k, v = line.split(":", 1)
        kv[k.strip()] = v.strip()
    try:
        files = {
            k[len("file.") :]: v for k, v in kv.items() if k.startswith("file.")
        }
        manifest = CorpusManifest(
            d_v=int(kv["d_v"]),
            d_l=int(kv["d_l"]),
            n_vt=int(kv["n_vt"]),
            n_roi=int(kv["n_roi"]),
            doc_count=int(kv["doc_count"]),
            query_count=int(kv["query_count"]),
            normalize_rows=kv.get("normalize_rows", "true") == "true",
            format_version=int(kv.get("format_version", "1")),
            files=files,
        )
    except KeyError as e:
        raise StoreError(f"manifest missing field: {e.args[0]}") from None
    for name, rel in files.items():
        if not (path.parent / rel).exists():
            raise StoreError(f"manifest references missing file {rel}")
    return manifest


# ---------------------------------------------------------------------------
# synthetic corpora


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for a seeded retrieval corpus with planted relevance.

    For each query exactly one gold document receives near-copies (Gaussian
    noise ``noise_sigma``) of a ``planted_relevance`` fraction of the query's
    composed token rows, restricted to ``planted_blocks`` ("text",
    "global_img", "roi").  ``pooled_alignment``, when set, builds gold pooled
    embeddings correlated (cosine alpha) with the query's pooled text+global
    vector so the one-dimensional baseline has a topical signal to work with;
    when unset, pooled embeddings are the normalized sum of token rows.
    """

    seed: int
    doc_count: int = 100
    query_count: int = 20
    tokens_per_doc: tuple[int, int] = (10, 20)
    question_tokens: tuple[int, int] = (4, 8)
    planted_relevance: float = 1.0
    noise_sigma: float = 0.0
    d_v: int = 16
    d_l: int = 16
    n_vt: int = 4
    n_roi: int = 2
    planted_blocks: tuple[str, ...] = ("text", "global_img", "roi")
    pooled_alignment: Optional[float] = None
    normalize_rows: bool = True

    def violations(self) -> list[str]:
        out = []
        if not 0.0 <= self.planted_relevance <= 1.0:
            out.append("planted_relevance outside [0, 1]")
        if self.noise_sigma < 0:
            out.append("noise_sigma < 0")
        if self.doc_count < self.query_count:
            out.append("doc_count < query_count (gold docs are distinct)")
        for lo, hi in (self.tokens_per_doc, self.question_tokens):
            if lo < 1 or hi < lo:
                out.append("invalid token count range")
        bad = set(self.planted_blocks) - {"text", "global_img", "roi"}
        if bad:
            out.append(f"unknown planted blocks {sorted(bad)}")
        return out


_REQUIRED_SPEC_FIELDS = ("seed",)
_CLASS_VOCAB = ("cat", "dog", "tree", "car", "sign", "bird", "boat", "lamp")


def spec_from_dict(d: dict) -> SyntheticSpec:
    for name in _REQUIRED_SPEC_FIELDS:
        if name not in d:
            raise StoreError(f"missing field: {name}")
    kwargs = dict(d)
    for key in ("tokens_per_doc", "question_tokens", "planted_blocks"):
        if key in kwargs:
            kwargs[key] = tuple(kwargs[key])
    try:
        spec = SyntheticSpec(**kwargs)
    except TypeError as e:
        raise StoreError(f"bad spec: {e}") from None
    problems = spec.violations()
    if problems:
        raise StoreError("bad spec: " + "; ".join(problems))
    return spec


@dataclass(frozen=True)
class SyntheticCorpus:
    manifest: CorpusManifest
    documents: tuple[DocumentRecord, ...]
    queries: tuple[QueryBundle, ...]
    gold: dict  # query_id -> doc_id
    net: MappingNetwork
    doc_texts: dict  # doc_id -> text
    answers: dict  # query_id -> list of answer strings


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    return v / n if n > 0 else v


def _unit_rows(m: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return m / norms


def _block_selector(labels: Sequence[str], blocks: Sequence[str]) -> np.ndarray:
    want_roi = "roi" in blocks
    keep = [
        i
        for i, lab in enumerate(labels)
        if lab in blocks or (want_roi and lab.startswith("roi:"))
    ]
    return np.asarray(keep, dtype=int)


def generate_synthetic(spec: SyntheticSpec) -> SyntheticCorpus:
    """Build a deterministic corpus with planted gold documents."""
    problems = spec.violations()
    if problems:
        raise StoreError("bad spec: " + "; ".join(problems))
    ss = np.random.SeedSequence(spec.seed)
    seeds = ss.spawn(4)
    rng_docs = np.random.default_rng(seeds[0])
    rng_queries = np.random.default_rng(seeds[1])
    rng_plant = np.random.default_rng(seeds[2])
    net = train.init_mapping_network(
        spec.d_v, spec.n_vt, spec.d_l, seed=int(seeds[3].generate_state(1)[0])
    )

    doc_tokens = []
    for _ in range(spec.doc_count):
        l_d = int(rng_docs.integers(spec.tokens_per_doc[0], spec.tokens_per_doc[1] + 1))
        rows = rng_docs.standard_normal((l_d, spec.d_l))
        doc_tokens.append(_unit_rows(rows) if spec.normalize_rows else rows)

    queries = []
    composed = []
    for j in range(spec.query_count):
        l_q = int(
            rng_queries.integers(spec.question_tokens[0], spec.question_tokens[1] + 1)
        )
        text_rows = rng_queries.standard_normal((l_q, spec.d_l))
        if spec.normalize_rows:
            text_rows = _unit_rows(text_rows)
        global_feat = VisualFeature(rng_queries.standard_normal(spec.d_v))
        rois = []
        for k in range(spec.n_roi):
            x, y = rng_queries.uniform(0, 100, size=2)
            w, h = rng_queries.uniform(10, 60, size=2)
            rois.append(
                VisualFeature(
                    rng_queries.standard_normal(spec.d_v),
                    kind=KIND_ROI,
                    bbox=(x, y, w, h),
                    class_name=_CLASS_VOCAB[
                        int(rng_queries.integers(len(_CLASS_VOCAB)))
                    ],
                )
            )
        mentioned = rois[0].class_name if rois else _CLASS_VOCAB[0]
        bundle = QueryBundle(
            question_tokens=TokenMatrix(text_rows),
            global_feature=global_feat,
            roi_features=tuple(rois),
            question_text=f"what is near the {mentioned} in picture {j}",
            query_id=f"q{j:04d}",
        )
        queries.append(bundle)
        composed.append(
            compose.compose_query(
                bundle, net, n_roi=spec.n_roi, normalize_rows=spec.normalize_rows
            )
        )

    # Plant near-copies of the selected query rows into each gold document.
    gold = {}
    planted_tokens = list(doc_tokens)
    for j, bundle in enumerate(queries):
        q = composed[j]
        source = _block_selector(q.row_labels, spec.planted_blocks)
        n_plant = int(round(spec.planted_relevance * len(source)))
        gold_doc = j
        gold[bundle.query_id] = f"d{gold_doc:04d}"
        if n_plant == 0:
            continue
        chosen = np.sort(rng_plant.choice(source, size=n_plant, replace=False))
        copies = q.data[chosen].astype(np.float64)
        if spec.noise_sigma > 0:
            copies = copies + spec.noise_sigma * rng_plant.standard_normal(copies.shape)
        if spec.normalize_rows:
            copies = _unit_rows(copies)
        planted_tokens[gold_doc] = np.vstack([planted_tokens[gold_doc], copies])

    # Pooled embeddings for the one-dimensional baseline.  Gold documents get
    # a pooled vector with cosine ~alpha to the query's pooled text+global
    # vector (a topical signal no token-level planting provides); without
    # alpha, pooling is just the normalized row sum.
    pooled = []
    if spec.pooled_alignment is None:
        for rows in planted_tokens:
            pooled.append(_unit(rows.sum(axis=0)))
    else:
        alpha = float(spec.pooled_alignment)
        topic_by_doc = {}
        for j, bundle in enumerate(queries):
            cls = _unit(bundle.question_tokens.data.astype(np.float64).sum(axis=0))
            g_rows = composed[j].block(LABEL_GLOBAL).astype(np.float64)
            topic_by_doc[j] = _unit(cls + g_rows.sum(axis=0))
        for i in range(spec.doc_count):
            eps = _unit(rng_plant.standard_normal(spec.d_l))
            if i in topic_by_doc:
                v = alpha * topic_by_doc[i] + np.sqrt(1 - alpha**2) * eps
                pooled.append(_unit(v))
            else:
                pooled.append(eps)

    documents = []
    doc_texts = {}
    answers = {}
    answer_of = {}
    for j, bundle in enumerate(queries):
        answer_of[j] = f"ans-{j:04d}"
        answers[bundle.query_id] = [answer_of[j]] * 3
    for i in range(spec.doc_count):
        doc_id = f"d{i:04d}"
        documents.append(
            DocumentRecord(
                doc_id=doc_id,
                tokens=TokenMatrix(planted_tokens[i]),
                pooled=pooled[i],
            )
        )
        if i < spec.query_count:
            doc_texts[doc_id] = (
                f"passage for q{i:04d}: the answer is {answer_of[i]} as annotated."
            )
        else:
            doc_texts[doc_id] = f"filler passage {i} about nothing in particular."

    manifest = CorpusManifest(
        d_v=spec.d_v,
        d_l=spec.d_l,
        n_vt=spec.n_vt,
        n_roi=spec.n_roi,
        doc_count=spec.doc_count,
        query_count=spec.query_count,
        normalize_rows=spec.normalize_rows,
    )
    return SyntheticCorpus(
        manifest=manifest,
        documents=tuple(documents),
        queries=tuple(queries),
        gold=gold,
        net=net,
        doc_texts=doc_texts,
        answers=answers,
    )


# ---------------------------------------------------------------------------
# synthetic alignment pairs (image feature -> document tokens)


@dataclass(frozen=True)
class AlignmentSpec:
    """Recipe for aligned (visual feature, document tokens) pairs.

    Document rows are fixed random linear projections of the paired feature
    plus Gaussian noise, so a mapping network can learn the alignment.
    """

    seed: int
    pairs: int = 1200
    d_v: int = 16
    d_l: int = 8
    n_vt: int = 4
    doc_rows: int = 4
    noise_sigma: float = 0.05
    normalize_rows: bool = True


def alignment_spec_from_dict(d: dict) -> AlignmentSpec:
    if "seed" not in d:
        raise StoreError("missing field: seed")
    kwargs = {k: v for k, v in d.items() if k != "task"}
    try:
        return AlignmentSpec(**kwargs)
    except TypeError as e:
        raise StoreError(f"bad spec: {e}") from None


def generate_alignment_pairs(
    spec: AlignmentSpec,
) -> tuple[list[VisualFeature], list[TokenMatrix]]:
    rng = np.random.default_rng(spec.seed)
    proj = rng.standard_normal((spec.doc_rows, spec.d_l, spec.d_v)) / np.sqrt(spec.d_v)
    features = []
    docs = []
    for _ in range(spec.pairs):
        x = rng.standard_normal(spec.d_v)
        rows = proj @ x
        if spec.noise_sigma > 0:
            rows = rows + spec.noise_sigma * rng.standard_normal(rows.shape)
        if spec.normalize_rows:
            rows = _unit_rows(rows)
        features.append(VisualFeature(x))
        docs.append(TokenMatrix(rows))
    return features, docs


# ---------------------------------------------------------------------------
# corpus directories


@dataclass(frozen=True)
class CorpusBundle:
    manifest: CorpusManifest
    documents: tuple[DocumentRecord, ...]
    queries: tuple[QueryBundle, ...]
    gold: dict
    net: Optional[MappingNetwork]
    doc_texts: dict
    answers: dict


def save_corpus(corpus: SyntheticCorpus, out_dir: Path | str) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_embeddings([d.tokens for d in corpus.documents], out / "docs.bin")
    atomic_write_text(
        out / "docs.ids.txt", "".join(d.doc_id + "\n" for d in corpus.documents)
    )
    pooled = [
        TokenMatrix(d.pooled[None, :]) for d in corpus.documents if d.pooled is not None
    ]
    files = {
        "documents": "docs.bin",
        "document_ids": "docs.ids.txt",
        "document_texts": "doc_texts.tsv",
        "queries": "queries.bin",
        "query_ids": "queries.ids.txt",
        "query_meta": "queries.meta.jsonl",
        "features": "features.bin",
        "network": "net.bin",
        "gold": "gold.tsv",
        "answers": "answers.jsonl",
    }
    if len(pooled) == len(corpus.documents):
        write_embeddings(pooled, out / "docs.pooled.bin")
        files["document_pooled"] = "docs.pooled.bin"
    atomic_write_text(
        out / "doc_texts.tsv",
        "".join(f"{d}\t{corpus.doc_texts[d]}\n" for d in sorted(corpus.doc_texts)),
    )
    write_embeddings([q.question_tokens for q in corpus.queries], out / "queries.bin")
    atomic_write_text(
        out / "queries.ids.txt", "".join(q.query_id + "\n" for q in corpus.queries)
    )
    atomic_write_text(
        out / "queries.meta.jsonl",
        "".join(
            json.dumps({"query_id": q.query_id, "question_text": q.question_text})
            + "\n"
            for q in corpus.queries
        ),
    )
    feats: list[VisualFeature] = []
    for q in corpus.queries:
        feats.append(q.global_feature)
        feats.extend(q.roi_features)
    write_features(feats, out / "features.bin")
    write_network(corpus.net, out / "net.bin")
    atomic_write_text(
        out / "gold.tsv",
        "".join(f"{q}\t{corpus.gold[q]}\n" for q in sorted(corpus.gold)),
    )
    atomic_write_text(
        out / "answers.jsonl",
        "".join(
            json.dumps({"question_id": qid, "answers": corpus.answers[qid]}) + "\n"
            for qid in sorted(corpus.answers)
        ),
    )
    write_manifest(replace(corpus.manifest, files=files), out / "manifest.txt")


def load_corpus(corpus_dir: Path | str) -> CorpusBundle:
    """Load whatever sections the manifest declares (partial dirs are fine:
    an exporter may produce documents-only or queries-only sets)."""
    root = Path(corpus_dir)
    manifest = read_manifest(root / "manifest.txt")
    fp = lambda name: root / manifest.files[name]

    documents: tuple[DocumentRecord, ...] = ()
    if "documents" in manifest.files:
        if "document_ids" not in manifest.files:
            raise StoreError("manifest has documents but no document_ids")
        doc_mats = read_embeddings(fp("documents"))
        doc_ids = fp("document_ids").read_text("utf-8").splitlines()
        if len(doc_ids) != len(doc_mats):
            raise StoreError("document id count does not match record count")
        pooled = [None] * len(doc_mats)
        if "document_pooled" in manifest.files:
            pooled = [tm.data[0] for tm in read_embeddings(fp("document_pooled"))]
        documents = tuple(
            DocumentRecord(doc_id=i, tokens=m, pooled=p)
            for i, m, p in zip(doc_ids, doc_mats, pooled)
        )

    doc_texts = {}
    if "document_texts" in manifest.files:
        for line in fp("document_texts").read_text("utf-8").splitlines():
            doc_id, text = line.split("\t", 1)
            doc_texts[doc_id] = text

    queries: list[QueryBundle] = []
    if "queries" in manifest.files:
        for need in ("query_ids", "features"):
            if need not in manifest.files:
                raise StoreError(f"manifest has queries but no {need}")
        q_mats = read_embeddings(fp("queries"))
        q_ids = fp("query_ids").read_text("utf-8").splitlines()
        if len(q_ids) != len(q_mats):
            raise StoreError("query id count does not match record count")
        q_text = {}
        if "query_meta" in manifest.files:
            for line in fp("query_meta").read_text("utf-8").splitlines():
                rec = json.loads(line)
                q_text[rec["query_id"]] = rec.get("question_text", "")
        feats = read_features(fp("features"))
        per_query = manifest.n_roi + 1
        if len(feats) != per_query * len(q_mats):
            raise StoreError(
                f"features file holds {len(feats)} entries, expected "
                f"{per_query} per query"
            )
        for j, (qid, tm) in enumerate(zip(q_ids, q_mats)):
            chunk = feats[j * per_query : (j + 1) * per_query]
            queries.append(
                QueryBundle(
                    question_tokens=tm,
                    global_feature=chunk[0],
                    roi_features=tuple(chunk[1:]),
                    question_text=q_text.get(qid, ""),
                    query_id=qid,
                )
            )

    net = read_network(fp("network")) if "network" in manifest.files else None

    gold = {}
    if "gold" in manifest.files:
        for line in fp("gold").read_text("utf-8").splitlines():
            qid, doc_id = line.split("\t")
            gold[qid] = doc_id
    answers = {}
    if "answers" in manifest.files:
        for line in fp("answers").read_text("utf-8").splitlines():
            rec = json.loads(line)
            answers[rec["question_id"]] = list(rec["answers"])

    return CorpusBundle(
        manifest=manifest,
        documents=documents,
        queries=tuple(queries),
        gold=gold,
        net=net,
        doc_texts=doc_texts,
        answers=answers,
    )


def save_alignment_pairs(
    spec: AlignmentSpec,
    features: Sequence[VisualFeature],
    docs: Sequence[TokenMatrix],
    out_dir: Path | str,
) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_features(list(features), out / "features.bin")
    write_embeddings(list(docs), out / "docs.bin")
    atomic_write_text(
        out / "docs.ids.txt", "".join(f"p{i:05d}\n" for i in range(len(docs)))
    )
    manifest = CorpusManifest(
        d_v=spec.d_v,
        d_l=spec.d_l,
        n_vt=spec.n_vt,
        n_roi=0,
        doc_count=len(docs),
        query_count=len(features),
        normalize_rows=spec.normalize_rows,
        files={
            "documents": "docs.bin",
            "document_ids": "docs.ids.txt",
            "features": "features.bin",
        },
    )
    write_manifest(manifest, out / "manifest.txt")


def load_alignment_pairs(
    pairs_dir: Path | str,
) -> tuple[CorpusManifest, list[VisualFeature], list[TokenMatrix]]:
    root = Path(pairs_dir)
    manifest = read_manifest(root / "manifest.txt")
    features = read_features(root / manifest.files["features"])
    docs = read_embeddings(root / manifest.files["documents"])
    if len(features) != len(docs):
        raise StoreError("pairs dir: feature and document counts differ")
    return manifest, features, docs
