"""Relevance scoring.

Late-interaction score of a query against a document: every query token row
is dotted against every document token row, the per-query-token maximum is
taken, and the maxima are summed.  With unit-norm rows the score lies in
[-l_Q, +l_Q].  MEAN and SUM aggregation variants exist behind ``agg`` purely
for length-sensitivity ablations; MAX is the default and the contract.

The pooled baseline collapses each side to a single vector (CLS embedding
plus the sum of all mapped visual token rows) and scores by inner product.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Iterable, Sequence

import numpy as np

from .types import DimensionMismatch, DocumentRecord, EngineError, TokenMatrix

_AGGS = ("max", "mean", "sum")


def maxsim(q: TokenMatrix, d: TokenMatrix, agg: str = "max") -> float:
    """Late-interaction relevance of query tokens ``q`` vs document ``d``."""
    if q.dim != d.dim:
        raise DimensionMismatch(f"query dim {q.dim} != document dim {d.dim}")
    if q.rows == 0 or d.rows == 0:
        raise EngineError("maxsim requires nonempty token matrices")
    if agg not in _AGGS:
        raise EngineError(f"unknown aggregation {agg!r}")
    # storage is float32; score arithmetic is float64 so results match a
    # plain-Python oracle exactly at 1e-6
    sims = q.data.astype(np.float64) @ d.data.astype(np.float64).T  # (l_q, l_d)
    if agg == "max":
        per_token = sims.max(axis=1)
    elif agg == "mean":
        per_token = sims.mean(axis=1)
    else:
        per_token = sims.sum(axis=1)
    return float(per_token.sum())


def maxsim_argmax(q: TokenMatrix, d: TokenMatrix) -> np.ndarray:
    """Index of the best document token per query token (lowest index wins ties)."""
    if q.dim != d.dim:
        raise DimensionMismatch(f"query dim {q.dim} != document dim {d.dim}")
    sims = q.data.astype(np.float64) @ d.data.astype(np.float64).T
    return np.argmax(sims, axis=1)


def maxsim_batch(
    q: TokenMatrix,
    corpus: Sequence[DocumentRecord],
    agg: str = "max",
    threads: int = 1,
) -> list[float]:
    """``maxsim(q, doc.tokens)`` for every document, order preserved.

    Per-document scores are independent, so any thread count returns the
    identical list.
    """
    if threads <= 1:
        return [maxsim(q, doc.tokens, agg) for doc in corpus]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda doc: maxsim(q, doc.tokens, agg), corpus))


def dpr_pool(
    text_cls: np.ndarray, visual_blocks: Iterable[TokenMatrix | np.ndarray] = ()
) -> np.ndarray:
    """Pool a CLS vector and mapped visual token blocks into one vector.

    The result is the elementwise sum of the CLS embedding and every token
    row of every visual block (empty block list returns the CLS unchanged).
    """
    out = np.asarray(text_cls, dtype=np.float32).copy()
    if out.ndim != 1:
        raise EngineError("text_cls must be 1-D")
    for block in visual_blocks:
        rows = block.data if isinstance(block, TokenMatrix) else np.asarray(block, dtype=np.float32)
        if rows.ndim == 1:
            rows = rows[None, :]
        if rows.shape[1] != out.shape[0]:
            raise DimensionMismatch(
                f"visual block dim {rows.shape[1]} != pooled dim {out.shape[0]}"
            )
        out += rows.sum(axis=0)
    return out


def dpr_score(q_pooled: np.ndarray, d_pooled: np.ndarray) -> float:
    """Inner product of two pooled embeddings."""
    qv = np.asarray(q_pooled, dtype=np.float32)
    dv = np.asarray(d_pooled, dtype=np.float32)
    if qv.shape != dv.shape:
        raise DimensionMismatch(f"pooled dims differ: {qv.shape} vs {dv.shape}")
    return float(qv.astype(np.float64) @ dv.astype(np.float64))
