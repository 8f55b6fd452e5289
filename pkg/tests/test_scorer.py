"""Late-interaction scoring against independent oracles."""

import numpy as np
import pytest
from conftest import naive_maxsim

from lateint.scorer import dpr_pool, dpr_score, maxsim, maxsim_argmax, maxsim_batch
from lateint.types import DimensionMismatch, DocumentRecord, EngineError, TokenMatrix


def unit_rows(rng, shape):
    m = rng.standard_normal(shape)
    return m / np.linalg.norm(m, axis=1, keepdims=True)


class TestMaxsim:
    def test_single_query_token(self):
        q = TokenMatrix([[1.0, 0.0]])
        d = TokenMatrix([[0.0, 1.0], [1.0, 0.0]])
        assert maxsim(q, d) == pytest.approx(1.0)

    def test_hand_arithmetic(self):
        q = TokenMatrix([[1.0, 0.0], [0.0, 1.0]])
        d = TokenMatrix([[1.0, 0.0]])
        assert maxsim(q, d) == pytest.approx(1.0)

    def test_matches_double_loop_oracle(self):
        rng = np.random.default_rng(11)
        q = rng.standard_normal((5, 4)).astype(np.float32)
        d = rng.standard_normal((7, 4)).astype(np.float32)
        assert maxsim(TokenMatrix(q), TokenMatrix(d)) == pytest.approx(
            naive_maxsim(q, d), abs=1e-6
        )

    def test_dim_mismatch(self):
        with pytest.raises(DimensionMismatch):
            maxsim(TokenMatrix(np.ones((1, 2))), TokenMatrix(np.ones((1, 3))))

    def test_empty_rejected(self):
        with pytest.raises(EngineError):
            maxsim(TokenMatrix(np.ones((0, 2))), TokenMatrix(np.ones((1, 2))))

    def test_doc_row_permutation_invariance(self):
        rng = np.random.default_rng(5)
        q = TokenMatrix(rng.standard_normal((4, 6)))
        d = rng.standard_normal((9, 6))
        base = maxsim(q, TokenMatrix(d))
        for _ in range(5):
            perm = rng.permutation(9)
            assert maxsim(q, TokenMatrix(d[perm])) == pytest.approx(base, abs=1e-6)

    def test_query_row_permutation_keeps_value(self):
        rng = np.random.default_rng(6)
        q = rng.standard_normal((4, 6))
        d = TokenMatrix(rng.standard_normal((9, 6)))
        base = maxsim(TokenMatrix(q), d)
        perm = rng.permutation(4)
        assert maxsim(TokenMatrix(q[perm]), d) == pytest.approx(base, abs=1e-6)

    def test_appending_doc_row_monotone(self):
        rng = np.random.default_rng(7)
        q = TokenMatrix(rng.standard_normal((3, 5)))
        d = rng.standard_normal((4, 5))
        base = maxsim(q, TokenMatrix(d))
        for _ in range(10):
            extra = np.vstack([d, rng.standard_normal((1, 5))])
            assert maxsim(q, TokenMatrix(extra)) >= base - 1e-6

    def test_duplicate_doc_row_invariance(self):
        rng = np.random.default_rng(8)
        q = TokenMatrix(rng.standard_normal((3, 5)))
        d = rng.standard_normal((4, 5))
        base = maxsim(q, TokenMatrix(d))
        dup = np.vstack([d, d[2:3]])
        assert maxsim(q, TokenMatrix(dup)) == pytest.approx(base, abs=1e-6)

    def test_unit_norm_bound(self):
        rng = np.random.default_rng(9)
        for _ in range(20):
            lq = int(rng.integers(1, 8))
            q = TokenMatrix(unit_rows(rng, (lq, 6)))
            d = TokenMatrix(unit_rows(rng, (int(rng.integers(1, 8)), 6)))
            assert abs(maxsim(q, d)) <= lq + 1e-5

    def test_mean_and_sum_variants(self):
        q = np.array([[1.0, 0.0], [0.0, 1.0]], dtype=np.float32)
        d = np.array([[1.0, 0.0], [0.0, 0.5]], dtype=np.float32)
        tm_q, tm_d = TokenMatrix(q), TokenMatrix(d)
        assert maxsim(tm_q, tm_d, agg="sum") == pytest.approx((q @ d.T).sum())
        assert maxsim(tm_q, tm_d, agg="mean") == pytest.approx(
            (q @ d.T).mean(axis=1).sum()
        )

    def test_argmax_breaks_ties_low(self):
        q = TokenMatrix([[1.0, 0.0]])
        d = TokenMatrix([[1.0, 0.0], [1.0, 0.0]])
        assert maxsim_argmax(q, d).tolist() == [0]


class TestMaxsimBatch:
    def _corpus(self, rng, n):
        return [
            DocumentRecord(
                doc_id=f"d{i}",
                tokens=TokenMatrix(rng.standard_normal((int(rng.integers(2, 9)), 6))),
            )
            for i in range(n)
        ]

    def test_singleton(self):
        rng = np.random.default_rng(0)
        q = TokenMatrix(rng.standard_normal((3, 6)))
        corpus = self._corpus(rng, 1)
        assert maxsim_batch(q, corpus) == [maxsim(q, corpus[0].tokens)]

    def test_matches_sequential_calls(self):
        rng = np.random.default_rng(1)
        q = TokenMatrix(rng.standard_normal((3, 6)))
        corpus = self._corpus(rng, 100)
        batch = maxsim_batch(q, corpus)
        assert batch == [maxsim(q, d.tokens) for d in corpus]

    def test_threaded_identical(self):
        rng = np.random.default_rng(2)
        q = TokenMatrix(rng.standard_normal((3, 6)))
        corpus = self._corpus(rng, 40)
        assert maxsim_batch(q, corpus, threads=1) == maxsim_batch(q, corpus, threads=4)


class TestDprBaseline:
    def test_pool_empty_blocks_is_identity(self):
        np.testing.assert_array_equal(dpr_pool(np.array([1.0, 0.0])), [1.0, 0.0])

    def test_pool_hand_sum(self):
        out = dpr_pool(np.array([1.0, 0.0]), [TokenMatrix([[0.0, 1.0], [1.0, 1.0]])])
        np.testing.assert_allclose(out, [2.0, 2.0])

    def test_pool_matches_accumulation_oracle(self):
        rng = np.random.default_rng(3)
        cls = rng.standard_normal(8).astype(np.float32)
        blocks = [TokenMatrix(rng.standard_normal((4, 8))) for _ in range(3)]
        expected = cls.copy()
        for b in blocks:
            for row in b.data:
                expected = expected + row
        np.testing.assert_allclose(dpr_pool(cls, blocks), expected, atol=1e-5)

    def test_score_orthogonal(self):
        assert dpr_score(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 0.0

    def test_score_hand(self):
        assert dpr_score(np.array([1.0, 2.0]), np.array([3.0, 4.0])) == pytest.approx(11.0)

    def test_score_matches_summation_oracle(self):
        rng = np.random.default_rng(4)
        q = rng.standard_normal(16).astype(np.float32)
        d = rng.standard_normal(16).astype(np.float32)
        assert dpr_score(q, d) == pytest.approx(
            sum(float(a) * float(b) for a, b in zip(q, d)), abs=1e-5
        )

    def test_bilinearity(self):
        rng = np.random.default_rng(5)
        q = rng.standard_normal(8)
        d = rng.standard_normal(8)
        assert dpr_score(2.5 * q, d) == pytest.approx(2.5 * dpr_score(q, d), rel=1e-5)

    def test_dim_mismatch(self):
        with pytest.raises(DimensionMismatch):
            dpr_score(np.ones(3), np.ones(4))
