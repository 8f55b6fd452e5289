"""Shared oracles and instance builders for the test suite."""

import numpy as np

from lateint.train import batch_scores, contrastive_loss, init_mapping_network
from lateint.types import TokenMatrix, VisualFeature


def naive_maxsim(q: np.ndarray, d: np.ndarray) -> float:
    """Double-loop maxsim oracle sharing no vectorization with the engine."""
    total = 0.0
    for i in range(q.shape[0]):
        best = -float("inf")
        for j in range(d.shape[0]):
            dot = float(sum(float(a) * float(b) for a, b in zip(q[i], d[j])))
            best = max(best, dot)
        total += best
    return total


def random_instance(seed, b=3, d_v=6, n_vt=2, d_l=3):
    rng = np.random.default_rng(seed)
    net = init_mapping_network(d_v, n_vt, d_l, seed=seed)
    feats = [VisualFeature(rng.standard_normal(d_v)) for _ in range(b)]
    docs = [
        TokenMatrix(rng.standard_normal((int(rng.integers(3, 7)), d_l)))
        for _ in range(b)
    ]
    return net, feats, docs


def argmax_margin(net, feats, docs, normalize) -> float:
    """Smallest gap between the best and second-best document token dot.

    Finite differences are only valid away from max ties; instances whose
    margin is below a safety threshold are regenerated.
    """
    from lateint.compose import map_visual

    margin = np.inf
    for f in feats:
        q = map_visual(f, net, normalize_rows=normalize).data.astype(np.float64)
        for d in docs:
            sims = q @ d.data.astype(np.float64).T
            if sims.shape[1] < 2:
                continue
            part = np.sort(sims, axis=1)
            margin = min(margin, float((part[:, -1] - part[:, -2]).min()))
    return margin


def separated_instances(count, normalize, margin=0.02, start_seed=0):
    """First ``count`` random instances with all argmax gaps above ``margin``."""
    out = []
    seed = start_seed
    while len(out) < count:
        net, feats, docs = random_instance(seed)
        if argmax_margin(net, feats, docs, normalize) > margin:
            out.append((net, feats, docs))
        seed += 1
    return out


def numeric_gradients(net, feats, docs, normalize, eps=1e-4):
    """Central-difference gradients of the contrastive loss, all parameters."""
    grads = {}
    for name in ("w1", "b1", "w2", "b2"):
        p = getattr(net, name)
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            for sign in (+1, -1):
                shifted = p.copy()
                shifted[idx] += sign * eps
                kwargs = {n: getattr(net, n) for n in ("w1", "b1", "w2", "b2")}
                kwargs[name] = shifted
                loss = contrastive_loss(
                    batch_scores(net.replace_params(**kwargs), feats, docs, normalize)
                )
                g[idx] += sign * loss
            g[idx] /= 2 * eps
        grads[name] = g
    return grads


def max_relative_error(analytic: dict, numeric: dict) -> float:
    worst = 0.0
    for name in analytic:
        a, n = analytic[name], numeric[name]
        rel = np.abs(a - n) / np.maximum(1e-8, np.abs(a) + np.abs(n))
        worst = max(worst, float(rel.max()))
    return worst
