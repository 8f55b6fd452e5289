"""Top-K late-interaction retrieval over a document collection.

Two stores: an exhaustive index that scores every document (the correctness
oracle), and a two-stage centroid index that clusters all document token rows
with k-means, probes the nearest centroids for each query token to gather
candidate documents, and reranks the candidates with exact scoring.  Returned
scores are therefore always exact; only the candidate set is approximate, so
recall against the exhaustive index is non-decreasing in ``nprobe`` and hits
1.0 when every centroid is probed.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from math import ceil, sqrt
from pathlib import Path
from typing import Sequence

import numpy as np

from . import store as store_mod
from .scorer import maxsim
from .types import DocumentRecord, EngineError, TokenMatrix


def kmeans(
    points: np.ndarray, k: int, seed: int = 0, max_iters: int = 50
) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd's k-means with k-means++ seeding, deterministic under ``seed``.

    Iterates until the assignment reaches a fixpoint or ``max_iters``.  An
    empty cluster is reseeded to the point farthest from its assigned
    centroid (lowest index on ties).
    """
    pts = np.asarray(points, dtype=np.float64)
    m = pts.shape[0]
    if k < 1:
        raise EngineError("k must be >= 1")
    if k > m:
        raise EngineError(f"k = {k} exceeds point count {m}")
    rng = np.random.default_rng(seed)

    # k-means++ seeding
    centroids = np.empty((k, pts.shape[1]), dtype=np.float64)
    first = int(rng.integers(m))
    centroids[0] = pts[first]
    d2 = ((pts - centroids[0]) ** 2).sum(axis=1)
    for c in range(1, k):
        total = d2.sum()
        if total <= 0:
            choice = int(rng.integers(m))
        else:
            choice = int(rng.choice(m, p=d2 / total))
        centroids[c] = pts[choice]
        d2 = np.minimum(d2, ((pts - centroids[c]) ** 2).sum(axis=1))

    assign = np.full(m, -1, dtype=np.int64)
    for _ in range(max_iters):
        dists = ((pts[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        new_assign = dists.argmin(axis=1)
        point_dist = dists[np.arange(m), new_assign]
        for c in range(k):
            members = new_assign == c
            if members.any():
                centroids[c] = pts[members].mean(axis=0)
            else:
                far = int(np.argmax(point_dist))
                centroids[c] = pts[far]
                new_assign[far] = c
                point_dist[far] = 0.0  # sits on its centroid now
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
    return centroids, assign


def default_n_centroids(total_tokens: int) -> int:
    return max(1, ceil(sqrt(total_tokens)))


def default_nprobe(n_centroids: int) -> int:
    return max(1, n_centroids // 8)


def _check_unique_ids(docs: Sequence[DocumentRecord]) -> None:
    seen = set()
    for d in docs:
        if d.doc_id in seen:
            raise EngineError(f"duplicate doc_id {d.doc_id!r}")
        seen.add(d.doc_id)


@dataclass(frozen=True)
class ExactIndex:
    docs: tuple[DocumentRecord, ...]

    def __post_init__(self):
        object.__setattr__(self, "docs", tuple(self.docs))
        _check_unique_ids(self.docs)


def build_exact_index(docs: Sequence[DocumentRecord]) -> ExactIndex:
    return ExactIndex(tuple(docs))


def _ranked(
    docs: Sequence[DocumentRecord], q: TokenMatrix, k: int, positions: Sequence[int]
) -> list[tuple[str, float]]:
    scored = [(docs[p].doc_id, maxsim(q, docs[p].tokens)) for p in positions]
    scored.sort(key=lambda t: (-t[1], t[0]))
    return scored[:k]


def search_exact(index: ExactIndex, q: TokenMatrix, k: int) -> list[tuple[str, float]]:
    """Exact top-K by late-interaction score, ties broken by ascending doc_id."""
    if k < 1:
        raise EngineError("k must be >= 1")
    if not index.docs:
        raise EngineError("empty index")
    return _ranked(index.docs, q, k, range(len(index.docs)))


@dataclass(frozen=True)
class CentroidIndex:
    docs: tuple[DocumentRecord, ...]
    centroids: np.ndarray  # (C, d_l) float64
    token_doc: np.ndarray  # global token row -> document position
    token_centroid: np.ndarray  # global token row -> centroid id
    postings: tuple[np.ndarray, ...]  # centroid id -> global token rows

    @property
    def n_centroids(self) -> int:
        return self.centroids.shape[0]


def build_centroid_index(
    docs: Sequence[DocumentRecord], n_centroids: int, seed: int = 0
) -> CentroidIndex:
    """Pool every document token row, cluster, and build posting lists."""
    docs = tuple(docs)
    _check_unique_ids(docs)
    if not docs:
        raise EngineError("empty corpus")
    total = sum(d.tokens.rows for d in docs)
    if n_centroids > total:
        raise EngineError(f"n_centroids {n_centroids} exceeds token count {total}")
    pool = np.vstack([d.tokens.data for d in docs]).astype(np.float64)
    token_doc = np.concatenate(
        [np.full(d.tokens.rows, p, dtype=np.int64) for p, d in enumerate(docs)]
    )
    centroids, assign = kmeans(pool, n_centroids, seed=seed)
    postings = tuple(
        np.flatnonzero(assign == c).astype(np.int64) for c in range(n_centroids)
    )
    return CentroidIndex(
        docs=docs,
        centroids=centroids,
        token_doc=token_doc,
        token_centroid=assign.astype(np.int64),
        postings=postings,
    )


def search_centroid(
    index: CentroidIndex, q: TokenMatrix, k: int, nprobe: int
) -> list[tuple[str, float]]:
    """Probe ``nprobe`` nearest centroids per query token, rerank exactly.

    Output format matches :func:`search_exact`.  An empty candidate set (all
    probed postings empty) returns an empty list.
    """
    c = index.n_centroids
    if not 1 <= nprobe <= c:
        raise EngineError(f"nprobe must be in [1, {c}]")
    if k < 1:
        raise EngineError("k must be >= 1")
    qrows = q.data.astype(np.float64)
    dists = ((qrows[:, None, :] - index.centroids[None, :, :]) ** 2).sum(axis=2)
    probe = np.argsort(dists, axis=1)[:, :nprobe]
    candidates: set[int] = set()
    for row in probe:
        for cid in row:
            tokens = index.postings[cid]
            if tokens.size:
                candidates.update(index.token_doc[tokens].tolist())
    if not candidates:
        return []
    return _ranked(index.docs, q, k, sorted(candidates))


# ---------------------------------------------------------------------------
# serialization (embedding-store container, kind 4)


def save_index(index: ExactIndex | CentroidIndex, path: Path | str) -> None:
    out = bytearray(store_mod.MAGIC)
    out += struct.pack("<II", store_mod.FORMAT_VERSION, store_mod.KIND_INDEX)
    mode = 1 if isinstance(index, ExactIndex) else 2
    out += struct.pack("<I", mode)
    docs = index.docs
    dim = docs[0].tokens.dim
    out += struct.pack("<II", len(docs), dim)
    for d in docs:
        raw = d.doc_id.encode("utf-8")
        out += struct.pack("<H", len(raw)) + raw
        out += struct.pack("<I", d.tokens.rows)
    for d in docs:
        out += d.tokens.data.astype("<f4").tobytes()
    if mode == 2:
        out += struct.pack("<I", index.n_centroids)
        out += index.centroids.astype("<f8").tobytes()
        out += struct.pack("<I", index.token_centroid.shape[0])
        out += index.token_centroid.astype("<i8").tobytes()
    store_mod.atomic_write_bytes(path, bytes(out))


def load_index(path: Path | str) -> ExactIndex | CentroidIndex:
    r = store_mod._open_kind(Path(path).read_bytes(), store_mod.KIND_INDEX)
    mode = r.u32()
    count = r.u32()
    dim = r.u32()
    ids = []
    rows = []
    for _ in range(count):
        ids.append(r.string())
        rows.append(r.u32())
    docs = []
    for i in range(count):
        data = r.f32s(rows[i] * dim).reshape(rows[i], dim)
        docs.append(DocumentRecord(doc_id=ids[i], tokens=TokenMatrix(data)))
    if mode == 1:
        return ExactIndex(tuple(docs))
    c = r.u32()
    centroids = r.f64s(c * dim).reshape(c, dim)
    n_tokens = r.u32()
    assign = np.frombuffer(r.take(8 * n_tokens), dtype="<i8").copy()
    token_doc = np.concatenate(
        [np.full(rows[i], i, dtype=np.int64) for i in range(count)]
    )
    postings = tuple(np.flatnonzero(assign == cid).astype(np.int64) for cid in range(c))
    return CentroidIndex(
        docs=tuple(docs),
        centroids=centroids,
        token_doc=token_doc,
        token_centroid=assign,
        postings=postings,
    )
