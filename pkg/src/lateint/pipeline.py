"""End-to-end retrieval: compose, search, softmax, and answer selection.

Retrieval probabilities are the softmax of the top-K scores.  Joint answer
selection multiplies each candidate's externally supplied generation
probability with its document's retrieval probability (log space internally)
and keeps the arg-max, preferring the higher-ranked document on ties.

Run files are line-oriented text, one query per line, four tab-separated
fields: query_id, comma-joined doc ids, comma-joined scores, comma-joined
probabilities.  Floats are printed with shortest round-trip precision so a
reload reproduces the results exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Optional, Sequence

import numpy as np

from . import compose, index as index_mod
from .store import atomic_write_text
from .types import EngineError, MappingNetwork, QueryBundle


def retrieval_probs(scores: Sequence[float]) -> list[float]:
    """Softmax over the retrieved scores (max-subtracted, sums to 1)."""
    s = np.asarray(scores, dtype=np.float64)
    if s.size == 0:
        raise EngineError("empty score list")
    if not np.all(np.isfinite(s)):
        raise EngineError("scores must be finite")
    e = np.exp(s - s.max())
    p = e / e.sum()
    return [float(v) for v in p]


class JointSelection(NamedTuple):
    answer: str
    index: int
    joint_prob: float


def joint_select(
    candidates: Sequence[tuple[str, float]], probs: Sequence[float]
) -> JointSelection:
    """Best (answer, document) by generation-times-retrieval probability.

    ``candidates[k]`` is (answer, generation log-prob) for the k-th retrieved
    document; ``probs[k]`` its retrieval probability.  Ties go to the lower k.
    """
    if len(candidates) != len(probs):
        raise EngineError(
            f"{len(candidates)} candidates vs {len(probs)} retrieval probs"
        )
    if not candidates:
        raise EngineError("no candidates")
    joint = np.array(
        [lp + np.log(p) for (_, lp), p in zip(candidates, probs)], dtype=np.float64
    )
    k = int(np.argmax(joint))
    return JointSelection(candidates[k][0], k, float(np.exp(joint[k])))


@dataclass(frozen=True)
class RetrievalResult:
    """Ranked documents for one query with scores and softmax probabilities."""

    query_id: str
    doc_ids: tuple[str, ...]
    scores: tuple[float, ...]
    probs: tuple[float, ...]

    def entries(self) -> list[tuple[str, float, float]]:
        return list(zip(self.doc_ids, self.scores, self.probs))

    @property
    def k(self) -> int:
        return len(self.doc_ids)

    def violations(self) -> list[str]:
        out = []
        if not len(self.doc_ids) == len(self.scores) == len(self.probs):
            out.append("retrieval result: field lengths differ")
            return out
        if self.probs and abs(sum(self.probs) - 1.0) > 1e-9:
            out.append("retrieval result: probabilities do not sum to 1")
        if any(a < b for a, b in zip(self.scores, self.scores[1:])):
            out.append("retrieval result: scores not in descending order")
        return out


def run_retrieval(
    queries: Sequence[QueryBundle],
    search_index,
    net: MappingNetwork,
    k: int,
    mode: str = "exact",
    nprobe: Optional[int] = None,
    n_roi: Optional[int] = None,
    normalize_rows: bool = True,
    run_path: Optional[Path | str] = None,
) -> list[RetrievalResult]:
    """Compose each query, search top-K, and attach retrieval probabilities.

    Writes a run file when ``run_path`` is given.
    """
    if mode not in ("exact", "centroid"):
        raise EngineError(f"unknown mode {mode!r}")
    results = []
    for pos, bundle in enumerate(queries):
        q = compose.compose_query(bundle, net, n_roi=n_roi, normalize_rows=normalize_rows)
        if mode == "exact":
            ranked = index_mod.search_exact(search_index, q, k)
        else:
            np_ = nprobe if nprobe is not None else index_mod.default_nprobe(
                search_index.n_centroids
            )
            ranked = index_mod.search_centroid(search_index, q, k, np_)
        ids = tuple(doc_id for doc_id, _ in ranked)
        scores = tuple(score for _, score in ranked)
        probs = tuple(retrieval_probs(scores)) if scores else ()
        qid = bundle.query_id or f"q{pos:04d}"
        results.append(
            RetrievalResult(query_id=qid, doc_ids=ids, scores=scores, probs=probs)
        )
    if run_path is not None:
        write_run_file(results, run_path)
    return results


def _fmt(values: Sequence[float]) -> str:
    return ",".join(repr(float(v)) for v in values)


def write_run_file(results: Sequence[RetrievalResult], path: Path | str) -> None:
    lines = []
    for r in results:
        lines.append(
            f"{r.query_id}\t{','.join(r.doc_ids)}\t{_fmt(r.scores)}\t{_fmt(r.probs)}\n"
        )
    atomic_write_text(path, "".join(lines))


def read_run_file(path: Path | str) -> list[RetrievalResult]:
    results = []
    for lineno, line in enumerate(Path(path).read_text("utf-8").splitlines(), 1):
        parts = line.split("\t")
        if len(parts) != 4:
            raise EngineError(f"run file line {lineno}: expected 4 fields")
        qid, ids, scores, probs = parts
        results.append(
            RetrievalResult(
                query_id=qid,
                doc_ids=tuple(ids.split(",")) if ids else (),
                scores=tuple(float(v) for v in scores.split(",")) if scores else (),
                probs=tuple(float(v) for v in probs.split(",")) if probs else (),
            )
        )
    return results
