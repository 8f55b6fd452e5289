"""Contrastive alignment training of the mapping network.

Given (visual feature, document tokens) pairs, the network is trained so the
mapped tokens of each feature retrieve the paired document: batch scores are
late-interaction sums, the diagonal holds positives, and every other document
in the batch is a negative.  Loss is the in-batch softmax cross-entropy over
raw scores.  Only the mapping-network parameters receive gradients; document
tokens are frozen inputs.

Gradients are written out by hand (float64 end to end) and routed through the
per-token max via its arg-max document token, lowest index on ties, so they
can be validated against central finite differences.  The optimizer is plain
seeded SGD for a deterministic, dependency-free numeric path.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import compose, scorer
from .types import EngineError, MappingNetwork, TokenMatrix, VisualFeature

Pair = tuple[VisualFeature, TokenMatrix]


def init_mapping_network(
    d_v: int,
    n_vt: int,
    d_l: int,
    hidden: Optional[int] = None,
    seed: int = 0,
) -> MappingNetwork:
    """Seeded uniform[-1/sqrt(fan_in), +1/sqrt(fan_in)] initialization.

    Hidden width defaults to half the output width (the projection chain
    d_v -> n_vt*d_l/2 -> n_vt*d_l).
    """
    out_dim = n_vt * d_l
    if hidden is None:
        hidden = max(1, out_dim // 2)
    rng = np.random.default_rng(seed)
    lim1 = 1.0 / np.sqrt(d_v)
    lim2 = 1.0 / np.sqrt(hidden)
    return MappingNetwork(
        w1=rng.uniform(-lim1, lim1, size=(d_v, hidden)),
        b1=rng.uniform(-lim1, lim1, size=hidden),
        w2=rng.uniform(-lim2, lim2, size=(hidden, out_dim)),
        b2=rng.uniform(-lim2, lim2, size=out_dim),
        n_vt=n_vt,
        d_l=d_l,
    )


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 30
    steps: int = 1000
    seed: int = 0
    grad_clip: Optional[float] = None
    eval_every: int = 0

    def violations(self) -> list[str]:
        out = []
        if self.learning_rate <= 0:
            out.append("learning_rate must be > 0")
        if self.batch_size < 2:
            out.append("batch_size must be >= 2 (in-batch negatives)")
        if self.steps < 0:
            out.append("steps must be >= 0")
        return out


def contrastive_loss(scores: np.ndarray) -> float:
    """In-batch softmax cross-entropy with diagonal positives.

    ``-sum_i log(exp(s_ii) / sum_j exp(s_ij))``, computed with max
    subtraction so it stays finite for any finite score matrix.
    """
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise EngineError(f"score matrix must be square, got {s.shape}")
    if s.shape[0] < 2:
        raise EngineError("batch size must be >= 2")
    m = s.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(s - m).sum(axis=1))
    return float((lse - np.diag(s)).sum())


def loss_and_score_grad(scores: np.ndarray) -> tuple[float, np.ndarray]:
    """Loss plus its gradient w.r.t. the score matrix (softmax minus identity)."""
    s = np.asarray(scores, dtype=np.float64)
    loss = contrastive_loss(s)
    m = s.max(axis=1, keepdims=True)
    e = np.exp(s - m)
    g = e / e.sum(axis=1, keepdims=True)
    g[np.diag_indices_from(g)] -= 1.0
    return loss, g


def _pad_docs(docs: Sequence[TokenMatrix]) -> tuple[np.ndarray, np.ndarray]:
    """Stack variable-length documents into (B, Lmax, d_l) plus a row mask."""
    if any(d.rows == 0 for d in docs):
        raise EngineError("documents must have at least one token row")
    lmax = max(d.rows for d in docs)
    dim = docs[0].dim
    padded = np.zeros((len(docs), lmax, dim), dtype=np.float64)
    mask = np.zeros((len(docs), lmax), dtype=bool)
    for b, d in enumerate(docs):
        padded[b, : d.rows] = d.data
        mask[b, : d.rows] = True
    return padded, mask


def _forward(
    net: MappingNetwork, x: np.ndarray, normalize_rows: bool
) -> tuple[np.ndarray, dict]:
    z1 = x @ net.w1 + net.b1
    a1 = np.tanh(z1)
    y = a1 @ net.w2 + net.b2
    q_raw = y.reshape(x.shape[0], net.n_vt, net.d_l)
    if normalize_rows:
        norms = np.linalg.norm(q_raw, axis=2, keepdims=True)
        norms[norms == 0] = 1.0
        q = q_raw / norms
    else:
        norms = None
        q = q_raw
    return q, {"x": x, "a1": a1, "q": q, "norms": norms}


def batch_scores(
    net: MappingNetwork,
    features: Sequence[VisualFeature],
    docs: Sequence[TokenMatrix],
    normalize_rows: bool = True,
) -> np.ndarray:
    """Score matrix S[a, b] = late-interaction score of feature a vs doc b."""
    x = np.stack([f.data.astype(np.float64) for f in features])
    q, _ = _forward(net, x, normalize_rows)
    padded, mask = _pad_docs(docs)
    sims = np.einsum("aid,bjd->abij", q, padded)
    sims = np.where(mask[None, :, None, :], sims, -np.inf)
    return sims.max(axis=3).sum(axis=2)


def loss_gradients(
    features: Sequence[VisualFeature],
    docs: Sequence[TokenMatrix],
    net: MappingNetwork,
    normalize_rows: bool = True,
) -> tuple[float, dict[str, np.ndarray]]:
    """Analytic gradients of the in-batch contrastive loss w.r.t. the net.

    The max over document tokens is differentiated by routing the gradient to
    the arg-max token (first index on ties).
    """
    if len(features) != len(docs):
        raise EngineError("features and documents must pair up")
    x = np.stack([f.data.astype(np.float64) for f in features])
    b = x.shape[0]
    q, cache = _forward(net, x, normalize_rows)
    padded, mask = _pad_docs(docs)

    sims = np.einsum("aid,bjd->abij", q, padded)
    sims = np.where(mask[None, :, None, :], sims, -np.inf)
    jstar = np.argmax(sims, axis=3)  # (B, B, n_vt)
    s = np.take_along_axis(sims, jstar[..., None], axis=3)[..., 0].sum(axis=2)

    loss, g = loss_and_score_grad(s)

    # dL/dQ[a, i] = sum_b g[a, b] * D[b, jstar[a, b, i]]
    d_sel = padded[np.arange(b)[None, :, None], jstar]  # (B, B, n_vt, d_l)
    dq = np.einsum("ab,abid->aid", g, d_sel)

    if normalize_rows:
        norms = cache["norms"]
        qhat = cache["q"]
        inner = (dq * qhat).sum(axis=2, keepdims=True)
        dy = (dq - inner * qhat) / norms
    else:
        dy = dq
    dy = dy.reshape(b, net.n_vt * net.d_l)

    a1 = cache["a1"]
    dw2 = a1.T @ dy
    db2 = dy.sum(axis=0)
    da1 = dy @ net.w2.T
    dz1 = da1 * (1.0 - a1**2)
    dw1 = x.T @ dz1
    db1 = dz1.sum(axis=0)
    return loss, {"w1": dw1, "b1": db1, "w2": dw2, "b2": db2}


def recall_at_1(
    net: MappingNetwork, pairs: Sequence[Pair], normalize_rows: bool = True
) -> float:
    """Fraction of features whose mapped tokens rank their own document first.

    Uses the production scoring path (map_visual + exhaustive maxsim) as the
    retrieval oracle.
    """
    hits = 0
    for i, (feat, _) in enumerate(pairs):
        q = compose.map_visual(feat, net, normalize_rows=normalize_rows)
        scores = [scorer.maxsim(q, doc) for _, doc in pairs]
        if int(np.argmax(scores)) == i:
            hits += 1
    return hits / len(pairs)


def train_alignment(
    pairs: Sequence[Pair],
    cfg: TrainConfig,
    normalize_rows: bool = True,
    heldout: Optional[Sequence[Pair]] = None,
    init: Optional[MappingNetwork] = None,
    dims: Optional[tuple[int, int, int]] = None,
) -> tuple[MappingNetwork, list[tuple[int, float, Optional[float]]]]:
    """SGD over in-batch contrastive batches; returns the net and loss curve.

    Deterministic under ``cfg.seed`` (seeded init, fixed shuffle order,
    single-threaded numerics).  ``dims`` = (d_v, n_vt, d_l) when no initial
    network is supplied.  Curve entries are (step, loss, heldout recall or
    None); recall is evaluated every ``cfg.eval_every`` steps when a heldout
    set is given, and always once at the end.
    """
    problems = cfg.violations()
    if problems:
        raise EngineError("bad train config: " + "; ".join(problems))
    if len(pairs) < cfg.batch_size:
        raise EngineError(
            f"insufficient pairs: {len(pairs)} < batch size {cfg.batch_size}"
        )

    if init is not None:
        net = init
    else:
        if dims is None:
            d_v = pairs[0][0].dim
            d_l = pairs[0][1].dim
            raise EngineError(
                f"dims (d_v, n_vt, d_l) required to initialize, e.g. ({d_v}, ?, {d_l})"
            )
        net = init_mapping_network(dims[0], dims[1], dims[2], seed=cfg.seed)

    params = {
        "w1": net.w1.copy(),
        "b1": net.b1.copy(),
        "w2": net.w2.copy(),
        "b2": net.b2.copy(),
    }
    rng = np.random.default_rng(cfg.seed)
    curve: list[tuple[int, float, Optional[float]]] = []
    order = np.arange(len(pairs))
    cursor = len(pairs)  # force a shuffle before the first batch

    def current() -> MappingNetwork:
        return net.replace_params(**params)

    for step in range(cfg.steps):
        if cursor + cfg.batch_size > len(pairs):
            order = rng.permutation(len(pairs))
            cursor = 0
        batch = order[cursor : cursor + cfg.batch_size]
        cursor += cfg.batch_size
        feats = [pairs[i][0] for i in batch]
        docs = [pairs[i][1] for i in batch]
        loss, grads = loss_gradients(feats, docs, current(), normalize_rows)
        if cfg.grad_clip is not None:
            total = np.sqrt(sum(float((g**2).sum()) for g in grads.values()))
            if total > cfg.grad_clip:
                scale = cfg.grad_clip / total
                grads = {k: g * scale for k, g in grads.items()}
        for name in params:
            params[name] = params[name] - cfg.learning_rate * grads[name]
        recall = None
        if heldout is not None and cfg.eval_every and (step + 1) % cfg.eval_every == 0:
            recall = recall_at_1(current(), heldout, normalize_rows)
        curve.append((step + 1, loss, recall))

    final = current()
    if heldout is not None:
        curve.append((cfg.steps, float("nan"), recall_at_1(final, heldout, normalize_rows)))
    return final, curve


def write_loss_curve(curve, path) -> None:
    """Comma-separated loss curve: step,loss,heldout_recall_at_1."""
    lines = ["step,loss,heldout_recall_at_1\n"]
    for step, loss, recall in curve:
        r = "" if recall is None else f"{recall:.6f}"
        l = "" if np.isnan(loss) else f"{loss:.10g}"
        lines.append(f"{step},{l},{r}\n")
    from .store import atomic_write_text

    atomic_write_text(path, "".join(lines))
