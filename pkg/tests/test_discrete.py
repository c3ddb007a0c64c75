import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from infomax.discrete import (
    DiscreteJoint, JointSamplerConfig, exact_jsd, exact_mi, monotonicity_experiment,
    rank_correlation, sample_random_joint,
)

TWO_BY_TWO = np.array([[0.4, 0.1], [0.1, 0.4]])


def _brute_mi(p):
    px, py = p.sum(1), p.sum(0)
    total = 0.0
    for i in range(p.shape[0]):
        for j in range(p.shape[1]):
            if p[i, j] > 0:
                total += p[i, j] * math.log(p[i, j] / (px[i] * py[j]))
    return total


def _brute_jsd_column_major(p):
    q = np.outer(p.sum(1), p.sum(0))
    total = 0.0
    for j in range(p.shape[1]):
        for i in range(p.shape[0]):
            m = 0.5 * (p[i, j] + q[i, j])
            if p[i, j] > 0:
                total += 0.5 * p[i, j] * math.log(p[i, j] / m)
            if q[i, j] > 0:
                total += 0.5 * q[i, j] * math.log(q[i, j] / m)
    return total


class TestExact:
    def test_two_by_two_mi(self):
        assert exact_mi(DiscreteJoint(TWO_BY_TWO)) == pytest.approx(0.192745, abs=1e-6)
        assert exact_mi(DiscreteJoint(TWO_BY_TWO)) == pytest.approx(_brute_mi(TWO_BY_TWO), abs=1e-15)

    def test_two_by_two_jsd_two_summation_orders(self):
        v = exact_jsd(DiscreteJoint(TWO_BY_TWO))
        assert v == pytest.approx(_brute_jsd_column_major(TWO_BY_TWO), abs=1e-15)
        assert v == pytest.approx(0.0506718, abs=1e-7)

    def test_diagonal(self):
        assert exact_mi(DiscreteJoint(np.eye(8) / 8)) == pytest.approx(2.079442, abs=1e-6)

    def test_product_joint_is_zero(self, rng):
        px, py = rng.dirichlet(np.ones(5)), rng.dirichlet(np.ones(7))
        j = DiscreteJoint(np.outer(px, py) / np.outer(px, py).sum())
        assert exact_mi(j) == pytest.approx(0, abs=1e-12)
        assert exact_jsd(j) == pytest.approx(0, abs=1e-12)

    def test_perturbed_product_is_positive(self, rng):
        p = np.outer(np.full(3, 1 / 3), np.full(3, 1 / 3))
        p[0, 0] += 0.01
        p[0, 1] -= 0.01
        j = DiscreteJoint(p)
        assert exact_mi(j) > 0 and exact_jsd(j) > 0

    def test_relabeling_invariance(self, rng):
        j = sample_random_joint(JointSamplerConfig(6, 9), rng)
        p = j.p[rng.permutation(6)][:, rng.permutation(9)]
        assert exact_mi(DiscreteJoint(p)) == pytest.approx(exact_mi(j), abs=1e-12)

    @pytest.mark.parametrize("p", [np.ones((2, 2)), np.array([[0.6, -0.1], [0.25, 0.25]]), np.ones(4) / 4])
    def test_invalid_joints(self, p):
        with pytest.raises(ValueError):
            DiscreteJoint(p)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 12), st.integers(2, 12), st.floats(0.0, 0.9), st.integers(0, 2**32 - 1))
def test_sampled_joints_respect_bounds(n_x, n_y, dropout, seed):
    j = sample_random_joint(JointSamplerConfig(n_x, n_y, dropout), np.random.default_rng(seed))
    assert abs(j.p.sum() - 1) <= 1e-12 and (j.p >= 0).all()
    assert exact_mi(j) >= -1e-15
    assert -1e-15 <= exact_jsd(j) <= math.log(2) + 1e-12
    np.testing.assert_allclose(j.px, 1 / n_x)


class TestSampler:
    def test_no_dropout_strictly_positive(self, rng):
        j = sample_random_joint(JointSamplerConfig(8, 8, 0.0), rng)
        assert (j.p > 0).all()

    def test_same_seed_same_joint(self):
        cfg = JointSamplerConfig(5, 5)
        np.testing.assert_array_equal(sample_random_joint(cfg, np.random.default_rng(2)).p,
                                      sample_random_joint(cfg, np.random.default_rng(2)).p)

    def test_high_dropout_approaches_one_hot_rows(self):
        r = np.random.default_rng(0)
        n = 16
        j = sample_random_joint(JointSamplerConfig(n, n, 0.999), r)
        assert ((j.p > 0).sum(axis=1) == 1).all()
        # deterministic rows: MI = H(Y), which is ln n when the hot columns are distinct
        cols = j.p.argmax(axis=1)
        expected = math.log(n) - sum(c * math.log(c) / n for c in np.bincount(cols) if c > 0)
        assert exact_mi(j) == pytest.approx(expected, abs=1e-12)

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            JointSamplerConfig(0, 3)
        with pytest.raises(ValueError):
            JointSamplerConfig(3, 3, 1.0)


class TestMonotonicity:
    def test_summary_layout(self):
        res = monotonicity_experiment((4, 6), draws=20, rng=np.random.default_rng(0))
        assert [row[0] for row in res.summary] == [4, 6]
        assert len(res.scatter) == 40
        assert res.scatter[0][:2] == (4, 0)
        assert res.rho(6) > 0.5

    def test_degenerate_flag(self):
        rho, degenerate = rank_correlation([1, 1, 1], [0.1, 0.2, 0.3])
        assert degenerate and math.isnan(rho)

    def test_zero_dropout_two_by_two_is_not_degenerate(self):
        res = monotonicity_experiment((2,), draws=10, dropout_rate=0.0, rng=np.random.default_rng(0))
        assert res.summary[0][3] is False

    def test_unknown_size(self):
        res = monotonicity_experiment((4,), draws=5, rng=np.random.default_rng(0))
        with pytest.raises(KeyError):
            res.rho(8)

    @pytest.mark.parametrize("kwargs", [dict(draws=1), dict(sizes=(1, 4))])
    def test_rejects_bad_arguments(self, kwargs):
        with pytest.raises(ValueError):
            monotonicity_experiment(**{"sizes": (4,), "draws": 5, **kwargs})
