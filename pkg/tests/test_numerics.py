import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hdpo.errors import InvalidInputError
from hdpo.numerics import (
    TopKDistribution,
    jsd_exact,
    jsd_topk,
    jsd_topk_grad_logits,
    kl_divergence,
    lemma1_bound_holds,
    log_softmax,
    softmax,
    total_variation,
)

logit_vectors = arrays(np.float64, st.integers(2, 24), elements=st.floats(-30, 30))


def _dirichlet(rng, v):
    return rng.dirichlet(np.ones(v))


def _jsd_oracle(p, q):
    """Term-by-term JSD in pure Python."""
    total = 0.0
    for a, b in zip(p, q):
        m = (a + b) / 2
        if a > 0:
            total += 0.5 * a * math.log(a / m)
        if b > 0:
            total += 0.5 * b * math.log(b / m)
    return total


class TestSoftmax:
    def test_two_logit_oracle(self):
        np.testing.assert_allclose(softmax([0.0, math.log(3.0)]), [0.25, 0.75], rtol=0, atol=1e-15)

    def test_large_logits_do_not_overflow(self):
        p = softmax([1000.0, 1000.0, 0.0])
        np.testing.assert_allclose(p, [0.5, 0.5, 0.0], atol=1e-15)

    def test_log_softmax_matches_log_of_softmax(self):
        z = np.array([0.3, -1.2, 2.5, 0.0])
        np.testing.assert_allclose(log_softmax(z), np.log(softmax(z)), atol=1e-14)

    @pytest.mark.parametrize("bad", [[1.0], [], [0.0, math.nan], [math.inf, 0.0], [[0.0, 1.0]]])
    def test_rejects_bad_input(self, bad):
        with pytest.raises(InvalidInputError):
            softmax(bad)

    @given(logit_vectors)
    def test_normalized_and_positive(self, z):
        p = softmax(z)
        assert abs(p.sum() - 1.0) <= 1e-12
        assert np.all(p >= 0)

    @given(logit_vectors, st.floats(-50, 50))
    def test_shift_invariance(self, z, c):
        np.testing.assert_allclose(softmax(z + c), softmax(z), atol=1e-12)


class TestKL:
    def test_oracle(self):
        # KL((1/2,1/2) || (1/4,3/4)) = 0.5 ln 2 + 0.5 ln(2/3) = 0.5 ln(4/3)
        assert kl_divergence([0.5, 0.5], [0.25, 0.75]) == pytest.approx(0.5 * math.log(4 / 3), abs=1e-15)

    def test_point_mass_against_uniform_thirds(self):
        assert kl_divergence([1.0, 0.0, 0.0], [1 / 3, 1 / 3, 1 / 3]) == pytest.approx(math.log(3), abs=1e-15)

    def test_infinite_when_support_escapes(self):
        assert kl_divergence([0.5, 0.5], [1.0, 0.0]) == math.inf

    def test_shape_mismatch(self):
        with pytest.raises(InvalidInputError):
            kl_divergence([0.5, 0.5], [0.2, 0.3, 0.5])

    @given(st.integers(0, 10_000), st.integers(2, 30))
    def test_nonnegative_and_zero_on_self(self, seed, v):
        rng = np.random.default_rng(seed)
        p, q = _dirichlet(rng, v), _dirichlet(rng, v)
        assert kl_divergence(p, q) >= 0
        assert kl_divergence(p, p) == 0.0


class TestJSD:
    def test_frozen_value_disjoint_support(self):
        assert jsd_exact([1.0, 0.0], [0.0, 1.0]) == pytest.approx(math.log(2), abs=1e-15)

    def test_frozen_value_single_token_teacher(self):
        # teacher keeps only token 0; student leaks 0.1 to token 1
        t = TopKDistribution((0,), np.array([1.0]))
        assert jsd_topk(t, [0.9, 0.1]) == pytest.approx(0.0359737566501484366733725, abs=1e-15)

    def test_tail_is_half_rest_mass_times_ln2(self):
        # one off-support token with student mass 0.1 contributes 0.5 * 0.1 * ln 2
        q = np.array([0.5, 0.4, 0.1])
        t = TopKDistribution((0, 1), np.array([0.5, 0.4]) / 0.9)
        inside = _jsd_oracle(list(t.probs) + [0.0], list(q[:2]) + [0.0])
        assert jsd_topk(t, q) - inside == pytest.approx(0.5 * 0.1 * math.log(2), abs=1e-15)

    @given(st.integers(0, 10_000), st.integers(2, 40))
    def test_full_support_equals_exact(self, seed, v):
        rng = np.random.default_rng(seed)
        p, q = _dirichlet(rng, v), _dirichlet(rng, v)
        t = TopKDistribution(tuple(range(v)), p)
        assert abs(jsd_topk(t, q) - jsd_exact(p, q)) <= 1e-12
        assert abs(jsd_exact(p, q) - _jsd_oracle(p, q)) <= 1e-12

    @given(st.integers(0, 10_000), st.integers(3, 40), st.data())
    def test_truncated_matches_dense_oracle(self, seed, v, data):
        rng = np.random.default_rng(seed)
        k = data.draw(st.integers(1, v - 1))
        teacher_full, q = _dirichlet(rng, v), _dirichlet(rng, v)
        support = tuple(int(i) for i in np.argsort(-teacher_full, kind="stable")[:k])
        t = TopKDistribution.from_weights(support, teacher_full[list(support)])
        assert abs(jsd_topk(t, q) - _jsd_oracle(t.dense(v), q)) <= 1e-12

    @given(st.integers(0, 10_000), st.integers(2, 30))
    def test_symmetric_and_bounded(self, seed, v):
        rng = np.random.default_rng(seed)
        p, q = _dirichlet(rng, v), _dirichlet(rng, v)
        assert jsd_exact(p, q) == pytest.approx(jsd_exact(q, p), abs=1e-14)
        assert 0.0 <= jsd_exact(p, q) <= math.log(2) + 1e-15

    def test_support_order_does_not_matter(self, rng):
        p, q = _dirichlet(rng, 6), _dirichlet(rng, 6)
        a = TopKDistribution((0, 2, 5), p[[0, 2, 5]] / p[[0, 2, 5]].sum())
        b = TopKDistribution((5, 0, 2), p[[5, 0, 2]] / p[[0, 2, 5]].sum())
        assert jsd_topk(a, q) == pytest.approx(jsd_topk(b, q), abs=1e-15)

    def test_topk_validation(self):
        with pytest.raises(InvalidInputError):
            TopKDistribution((1, 1), np.array([0.5, 0.5]))
        with pytest.raises(InvalidInputError):
            TopKDistribution((0, 1), np.array([0.5, 0.6]))
        with pytest.raises(InvalidInputError):
            TopKDistribution.from_weights((0, 1), [0.0, 0.0])
        with pytest.raises(InvalidInputError):
            jsd_topk(TopKDistribution((7,), np.array([1.0])), [0.5, 0.5])


class TestJSDGradient:
    def test_values_match_scalar_jsd(self, rng):
        z = rng.normal(size=(5, 7))
        dense = np.stack([TopKDistribution.from_weights((0, 3), rng.random(2)).dense(7) for _ in range(5)])
        values, _ = jsd_topk_grad_logits(dense, z)
        for row in range(5):
            assert values[row] == pytest.approx(_jsd_oracle(dense[row], softmax(z[row])), abs=1e-14)

    def test_central_differences(self, rng):
        z = rng.normal(size=(3, 6))
        dense = np.stack([TopKDistribution.from_weights((1, 2, 4), rng.random(3)).dense(6) for _ in range(3)])
        _, dz = jsd_topk_grad_logits(dense, z)
        h = 1e-6
        for r in range(3):
            for j in range(6):
                zp, zm = z.copy(), z.copy()
                zp[r, j] += h
                zm[r, j] -= h
                fd = (_jsd_oracle(dense[r], softmax(zp[r])) - _jsd_oracle(dense[r], softmax(zm[r]))) / (2 * h)
                assert dz[r, j] == pytest.approx(fd, abs=1e-8)

    def test_zero_at_match(self, rng):
        z = rng.normal(size=(2, 5))
        p = np.stack([softmax(row) for row in z])
        values, dz = jsd_topk_grad_logits(p, z)
        assert np.max(np.abs(values)) <= 1e-15
        assert np.max(np.abs(dz)) <= 1e-15


class TestLogitPerturbationBound:
    def test_equal_shift_gives_zero(self):
        kl, bound, ok = lemma1_bound_holds([0.1, 0.2, 0.3], [2.0, 2.0, 2.0])
        assert kl == pytest.approx(0.0, abs=1e-15) and bound == 2.0 and ok

    def test_two_token_exact_value(self):
        # z = (0, 0), delta = (0, ln 3): softmax(z + delta) = (1/4, 3/4)
        kl, bound, ok = lemma1_bound_holds([0.0, 0.0], [0.0, math.log(3.0)])
        assert kl == pytest.approx(0.5 * math.log(4 / 3), abs=1e-15)
        assert bound == pytest.approx(math.log(3.0) ** 2 / 2)
        assert ok

    @given(logit_vectors, st.data())
    def test_bound_holds(self, z, data):
        delta = data.draw(arrays(np.float64, z.shape, elements=st.floats(-10, 10)))
        kl, bound, ok = lemma1_bound_holds(z, delta)
        assert ok, (kl, bound)

    def test_shape_mismatch(self):
        with pytest.raises(InvalidInputError):
            lemma1_bound_holds([0.0, 1.0], [0.0, 1.0, 2.0])


def test_total_variation_exact():
    assert total_variation([0.5, 0.5, 0.0], [0.25, 0.25, 0.5]) == 0.5
    assert Fraction(total_variation([1.0, 0.0], [0.0, 1.0])) == 1
