import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from otseq.costs import (
    CostError,
    FusionConfig,
    PositionalConfig,
    PositionalVariant,
    fused_cost,
    positional_cost,
    semantic_cost,
    sinusoid_encoding,
)


def sequences(m=st.integers(1, 6), d=3):
    return m.flatmap(lambda k: arrays(np.float64, (k, d), elements=st.floats(-5, 5)))


class TestSemanticCost:
    def test_self_distance_diagonal_is_zero(self):
        a = np.random.default_rng(0).standard_normal((5, 4))
        np.testing.assert_array_equal(np.diag(semantic_cost(a, a)), 0.0)

    def test_345(self):
        assert semantic_cost([[0, 0]], [[3, 4]]).tolist() == [[5.0]]

    def test_hand_evaluated(self):
        np.testing.assert_allclose(semantic_cost([[1, 0], [0, 1]], [[0, 0], [1, 1]]), [[1, 1], [1, 1]], rtol=1e-15)

    def test_dimension_mismatch(self):
        with pytest.raises(CostError):
            semantic_cost(np.zeros((2, 3)), np.zeros((2, 4)))

    def test_rejects_non_finite(self):
        with pytest.raises(CostError):
            semantic_cost([[np.nan, 0.0]], [[0.0, 0.0]])

    @settings(max_examples=50, deadline=None)
    @given(sequences(), sequences())
    def test_swap_transposes_exactly(self, a, b):
        np.testing.assert_array_equal(semantic_cost(a, b), semantic_cost(b, a).T)

    @settings(max_examples=50, deadline=None)
    @given(sequences(st.integers(2, 6)), sequences())
    def test_triangle_relation(self, a, b):
        C = semantic_cost(a, b)
        A = semantic_cost(a, a)
        for p, p2 in itertools.permutations(range(len(a)), 2):
            assert np.all(C[p] <= A[p, p2] + C[p2] + 1e-12)

    @settings(max_examples=30, deadline=None)
    @given(sequences(), sequences())
    def test_nonnegative_finite(self, a, b):
        C = semantic_cost(a, b)
        assert np.all(C >= 0) and np.all(np.isfinite(C))


class TestPositionalCost:
    def test_default_variant_diagonal(self):
        C = positional_cost(4, 4, PositionalConfig(sigma=1.2))
        np.testing.assert_allclose(np.diag(C), math.exp(-1 / 1.44), rtol=1e-15)
        assert C[0, 0] == pytest.approx(0.4994, abs=1e-4)

    def test_default_variant_far_pair(self):
        C = positional_cost(4, 4, PositionalConfig(sigma=1.2))
        expected = math.exp(-(1 / 1.44) * (1 / 1.5625))
        assert C[0, 3] == pytest.approx(expected, rel=1e-15)
        assert expected == pytest.approx(0.6412, abs=1e-4)
        assert C[0, 3] > C[0, 0]

    def test_default_variant_strictly_increasing_in_gap(self):
        cfg = PositionalConfig(sigma=1.2)
        for m1, m2 in itertools.product(range(1, 17), repeat=2):
            C = positional_cost(m1, m2, cfg)
            gap = ((np.arange(1, m1 + 1) / m1)[:, None] - (np.arange(1, m2 + 1) / m2)[None, :]) ** 2
            order = np.argsort(gap, axis=None, kind="stable")
            g, c = gap.ravel()[order], C.ravel()[order]
            bigger = g[1:] > g[:-1] + 1e-15
            assert np.all(c[1:][bigger] > c[:-1][bigger])

    def test_unequal_lengths_normalize_each_index(self):
        C = positional_cost(2, 4, PositionalConfig(sigma=1.0))
        # p=1 of 2 and q=2 of 4 share relative position 0.5
        assert C[0, 1] == pytest.approx(math.exp(-1.0), rel=1e-15)
        np.testing.assert_allclose(positional_cost(4, 2), positional_cost(2, 4).T, rtol=1e-15)

    def test_uniform_pe_closed_form(self):
        cfg = PositionalConfig(variant=PositionalVariant.UNIFORM_PE, pe_dimension=4)
        C = positional_cost(4, 4, cfg)
        assert C[0, 2] == pytest.approx(1.0, abs=1e-12)
        for m, d in [(3, 1), (4, 8), (7, 5)]:
            C = positional_cost(m, m, PositionalConfig(variant="uniform_pe", pe_dimension=d))
            idx = np.arange(1, m + 1)
            np.testing.assert_allclose(C, math.sqrt(d) / m * np.abs(idx[:, None] - idx[None, :]), atol=1e-12)

    def test_pe_dimension_falls_back_to_embedding(self):
        cfg = PositionalConfig(variant="uniform_pe")
        np.testing.assert_allclose(positional_cost(4, 4, cfg, embedding_dim=9)[0, 1], 3 / 4, atol=1e-12)

    def test_sinusoid_encoding_values(self):
        P = sinusoid_encoding(3, 4)
        # 1-based channel d: odd -> cos(m / 10000^((d-1)/D)), even -> sin(m / 10000^(d/D))
        m = 2
        expected = [math.cos(m), math.sin(m / 10000 ** 0.5), math.cos(m / 10000 ** 0.5), math.sin(m / 10000.0)]
        np.testing.assert_allclose(P[m - 1], expected, rtol=1e-14)

    def test_sinusoid_cost_is_distance_between_encodings(self):
        cfg = PositionalConfig(variant="sinusoid_pe", pe_dimension=6)
        C = positional_cost(3, 3, cfg)
        P = sinusoid_encoding(3, 6)
        assert C[0, 2] == pytest.approx(np.linalg.norm(P[0] - P[2]), rel=1e-14)
        np.testing.assert_allclose(np.diag(C), 0.0, atol=1e-15)

    @pytest.mark.parametrize("variant", list(PositionalVariant))
    def test_nonnegative_finite(self, variant):
        C = positional_cost(5, 3, PositionalConfig(variant=variant, pe_dimension=4))
        assert C.shape == (5, 3)
        assert np.all(C >= 0) and np.all(np.isfinite(C))

    def test_bad_sigma(self):
        with pytest.raises(CostError):
            PositionalConfig(sigma=0)


class TestFusedCost:
    def test_alpha_zero_is_semantic(self):
        se = np.random.default_rng(1).random((3, 3))
        np.testing.assert_array_equal(fused_cost(se, np.ones((3, 3)), FusionConfig(0.0)), se)

    def test_zero_semantic_gives_positional(self):
        po = positional_cost(3, 3)
        np.testing.assert_array_equal(fused_cost(np.zeros((3, 3)), po, FusionConfig(1.0)), po)

    def test_hand_arithmetic(self):
        out = fused_cost([[1, 2], [3, 4]], [[0.1, 0.2], [0.3, 0.4]], FusionConfig(0.5))
        np.testing.assert_allclose(out, [[1.05, 2.1], [3.15, 4.2]], rtol=1e-15)

    def test_shape_mismatch(self):
        with pytest.raises(CostError):
            fused_cost(np.zeros((2, 2)), np.zeros((2, 3)))

    def test_negative_alpha(self):
        with pytest.raises(CostError):
            FusionConfig(-0.1)
