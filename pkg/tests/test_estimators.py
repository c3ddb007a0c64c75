import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from infomax import tensor as T
from infomax.estimators import (
    ConcatCritic, NegativeSamplingConfig, ScoreMatrix, SeparableCritic, TrainingDivergedError,
    build_score_matrix, dv_estimate, evaluate_critic, infonce_estimate, jsd_estimate, mi_lower_bound,
    mine_fit, score_layout, tail_mean, zero_mi_value,
)
from infomax.gradcheck import grad_check
from infomax.tensor import Tensor

from conftest import leaf

LN2 = math.log(2)


def sm_of(arr, mask=None):
    return ScoreMatrix(Tensor(np.asarray(arr, dtype=np.float64)), mask)


class TestClosedForms:
    def test_all_zero(self):
        sm = sm_of(np.zeros((5, 8)))
        assert dv_estimate(sm).item() == pytest.approx(0.0, abs=1e-12)
        assert jsd_estimate(sm).item() == pytest.approx(-2 * LN2, abs=1e-12)
        assert infonce_estimate(sm).item() == pytest.approx(-math.log(8), abs=1e-12)

    def test_constant_blocks(self):
        s = np.zeros((4, 6))
        s[:, 0] = 1.0
        assert dv_estimate(sm_of(s)).item() == pytest.approx(1.0, abs=1e-12)

    def test_saturated(self):
        s = np.full((3, 8), -30.0)
        s[:, 0] = 30.0
        assert jsd_estimate(sm_of(s)).item() == pytest.approx(0.0, abs=1e-9)
        assert infonce_estimate(sm_of(s)).item() == pytest.approx(0.0, abs=1e-9)

    @pytest.mark.parametrize("c", [-2.0, 0.0, 2.0])
    def test_constant_critic_jsd(self, c):
        expected = -math.log1p(math.exp(-c)) - math.log1p(math.exp(c))
        assert jsd_estimate(sm_of(np.full((3, 4), c))).item() == pytest.approx(expected, abs=1e-12)
        assert expected <= -2 * LN2 + 1e-12

    def test_zero_mi_values(self):
        assert zero_mi_value("dv", 9) == 0.0
        assert zero_mi_value("infonce", 9) == -math.log(9)
        assert mi_lower_bound("infonce", -math.log(9), 9) == pytest.approx(0.0)
        assert mi_lower_bound("jsd", -1.0, 9) == -1.0


class TestProperties:
    def test_infonce_cap_random(self, rng):
        for _ in range(200):
            K = int(rng.integers(2, 40))
            sm = sm_of(rng.normal(scale=rng.uniform(0.1, 50), size=(int(rng.integers(1, 6)), K)))
            assert infonce_estimate(sm).item() <= math.log(K) + 1e-9

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 10 ** 6), st.floats(-50, 50))
    def test_shift_invariance(self, seed, c):
        s = np.random.default_rng(seed).normal(size=(4, 7))
        for f in (dv_estimate, infonce_estimate):
            assert f(sm_of(s + c)).item() == pytest.approx(f(sm_of(s)).item(), abs=1e-9)

    def test_negative_permutation_invariance(self, rng):
        s = rng.normal(size=(5, 9))
        p = s.copy()
        for row in p:
            row[1:] = rng.permutation(row[1:])
        for f in (dv_estimate, jsd_estimate, infonce_estimate):
            assert f(sm_of(p)).item() == pytest.approx(f(sm_of(s)).item(), abs=1e-12)

    @pytest.mark.parametrize("f", [dv_estimate, jsd_estimate, infonce_estimate])
    def test_gradients(self, f, rng):
        s = leaf(rng.normal(size=(4, 6)))
        assert grad_check(lambda: f(ScoreMatrix(s)), [s], tol=1e-6).passed


class TestScoreMatrix:
    def test_rejects_single_column(self):
        with pytest.raises(ValueError):
            sm_of(np.zeros((3, 1)))

    def test_mask_drops_entries(self, rng):
        s = rng.normal(size=(2, 5))
        mask = np.ones((2, 5), bool)
        mask[:, 3:] = False
        full = sm_of(s[:, :3])
        masked = sm_of(s, mask)
        for f in (dv_estimate, jsd_estimate, infonce_estimate):
            assert f(masked).item() == pytest.approx(f(full).item(), abs=1e-9)

    def test_mask_must_keep_positives(self):
        mask = np.ones((2, 3), bool)
        mask[0, 0] = False
        with pytest.raises(ValueError):
            sm_of(np.zeros((2, 3)), mask)


class TestNegativeSampling:
    def test_smallest_case(self):
        rows, cols = score_layout(2, 2, 1, NegativeSamplingConfig())
        assert cols.tolist() == [[0, 1], [1, 0]]

    def test_local_counting(self):
        # anchors x locations rows, 1 positive + 3 other images x 16 locations
        rows, cols = score_layout(4, 4, 16, NegativeSamplingConfig())
        assert cols.shape == (64, 1 + 48)
        for r in range(64):
            img, loc = divmod(r, 16)
            assert cols[r, 0] == img * 16 + loc
            assert not np.any(cols[r, 1:] // 16 == img)
        rows, cols = score_layout(4, 4, 16, NegativeSamplingConfig(exclude_positive_from_marginals=False))
        assert cols.shape[1] - 1 == 64

    def test_subsample(self, rng):
        rows, cols = score_layout(6, 6, 1, NegativeSamplingConfig(2), rng)
        assert cols.shape == (6, 3)
        for i in range(6):
            assert i not in cols[i, 1:] and len(set(cols[i, 1:])) == 2

    def test_too_many_requested(self):
        with pytest.raises(ValueError, match="only 3 available"):
            score_layout(4, 4, 1, NegativeSamplingConfig(4))

    def test_batch_of_one(self):
        with pytest.raises(ValueError):
            score_layout(1, 1, 1, NegativeSamplingConfig())

    def test_build_uses_matched_pairs(self, rng):
        critic = ConcatCritic(3, 2, (8,), rng, np.float64)
        x, y = Tensor(rng.normal(size=(5, 3))), Tensor(rng.normal(size=(5, 2)))
        sm = build_score_matrix(critic, y, x)
        np.testing.assert_allclose(sm.positives().data, critic.pair_scores(x, y).data, atol=1e-12)
        raw = critic(y, x).data
        np.testing.assert_allclose(sm.scores.data[2, 1:], np.delete(raw[2], 2), atol=1e-12)

    def test_cross_batch(self, rng):
        critic = ConcatCritic(2, 2, (8,), rng, np.float64)
        x, y = Tensor(rng.normal(size=(4, 2))), Tensor(rng.normal(size=(4, 2)))
        extra = Tensor(rng.normal(size=(7, 2)))
        sm = build_score_matrix(critic, y, x, NegativeSamplingConfig(source="cross-batch"),
                                negative_candidates=extra)
        assert sm.K == 8
        np.testing.assert_allclose(sm.scores.data[:, 1:], critic(y, extra).data, atol=1e-12)

    def test_local_candidates(self, rng):
        critic = SeparableCritic(3, 5, (6,), 4, rng, np.float64)
        fmap = Tensor(rng.normal(size=(3, 3, 2, 2)))
        y = Tensor(rng.normal(size=(3, 5)))
        sm = build_score_matrix(critic, y, fmap)
        assert sm.scores.shape == (12, 1 + 8)


class TestCritics:
    @pytest.mark.parametrize("seed", range(20))
    def test_concat_gradcheck(self, seed):
        rng = np.random.default_rng(seed)
        critic = ConcatCritic(3, 2, (5, 4), rng, np.float64)
        # zero biases put dead units exactly on the ReLU kink
        for prm in critic.parameters():
            prm.data += rng.normal(scale=0.3, size=prm.shape)
        x, y = leaf(rng.normal(size=(4, 3))), leaf(rng.normal(size=(4, 2)))
        f = lambda: jsd_estimate(build_score_matrix(critic, y, x))
        assert grad_check(f, [x, y] + critic.parameters(), tol=1e-4).passed

    def test_concat_equals_mlp_on_concatenation(self, rng):
        critic = ConcatCritic(3, 2, (6,), rng, np.float64)
        x, y = rng.normal(size=(1, 3)), rng.normal(size=(1, 2))
        w = np.hstack([critic.first_c.weight.data, critic.first_a.weight.data])
        h = np.maximum(np.hstack([x, y]) @ w.T + critic.first_a.bias.data, 0)
        expected = critic.rest(Tensor(h)).data.item()
        assert critic(Tensor(y), Tensor(x)).data.item() == pytest.approx(expected, abs=1e-12)


def _gauss(r):
    def sample(rng, b):
        x = rng.normal(size=(b, 1))
        return x, r * x + math.sqrt(1 - r * r) * rng.normal(size=(b, 1))
    return sample


class TestMineFit:
    def test_curve_and_tail_mean(self):
        res = mine_fit(_gauss(0.5), kind="dv", hidden=(16,), steps=20, batch_size=16,
                       rng=np.random.default_rng(0))
        assert [row[0] for row in res.curve] == list(range(20))
        assert res.estimate == pytest.approx(np.mean([r[1] for r in res.curve[-2:]]))
        assert all(r[2] == -r[1] for r in res.curve)

    def test_array_streams_must_pair(self):
        with pytest.raises(ValueError, match="differ in length"):
            mine_fit(np.zeros((5, 1)), np.zeros((4, 1)), steps=1)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_reports_step(self):
        with pytest.raises(TrainingDivergedError) as err:
            mine_fit(_gauss(0.5), kind="dv", hidden=(16,), steps=50, batch_size=16, lr=1e30,
                     rng=np.random.default_rng(0))
        assert err.value.step >= 0

    def test_deterministic(self):
        runs = [mine_fit(_gauss(0.6), kind="jsd", hidden=(16,), steps=30, batch_size=16,
                         rng=np.random.default_rng(7)).curve for _ in range(2)]
        assert runs[0] == runs[1]

    def test_independent_streams_dv_near_zero(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(4000, 1))
        y = rng.permutation(0.9 * x + math.sqrt(0.19) * rng.normal(size=(4000, 1)))
        res = mine_fit(x, y, kind="dv", hidden=(32, 32), steps=300, batch_size=64,
                       rng=np.random.default_rng(0))
        assert res.estimate <= 0.05

    def test_correlated_dv_is_positive(self):
        res = mine_fit(_gauss(0.9), kind="dv", hidden=(32, 32), steps=300, batch_size=64,
                       rng=np.random.default_rng(0))
        assert abs(res.mi - 0.8304) < 0.2
        x, y = _gauss(0.9)(np.random.default_rng(1), 64)
        assert evaluate_critic(res.critic, "dv", x, y) > 0.4


def test_tail_mean_short_series():
    assert tail_mean([1.0, 2.0, 3.0]) == 3.0
    assert tail_mean(list(range(100))) == pytest.approx(np.mean(range(90, 100)))
