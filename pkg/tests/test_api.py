import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from infomax import DeepInfoMax, LinearProbe, MLPProbe, MutualInformationEstimator, NeuralDependencyMeasure
from infomax.data import GaussianPairSpec, ToyImageSpec, sample_gaussian_pairs, sample_toy_images


@pytest.mark.parametrize("cls", [MutualInformationEstimator, DeepInfoMax, NeuralDependencyMeasure,
                                 LinearProbe, MLPProbe])
def test_params_round_trip_through_clone(cls):
    est = cls(random_state=3)
    params = est.get_params()
    assert params["random_state"] == 3
    assert clone(est).get_params() == params


def test_mi_estimator_fit_and_score():
    x, y = sample_gaussian_pairs(GaussianPairSpec(1, 0.9), np.random.default_rng(0), 512)
    est = MutualInformationEstimator("infonce", hidden=(16,), steps=30, batch_size=32, random_state=0).fit(x, y)
    assert est.K_ == 32 and len(est.curve_) == 30
    assert est.mi_ == pytest.approx(est.estimate_ + np.log(32))
    assert np.isfinite(est.score(x[:64], y[:64]))
    with pytest.raises(ValueError):
        est.score(np.hstack([x, x])[:64], y[:64])


def test_mi_estimator_fit_is_reproducible():
    x, y = sample_gaussian_pairs(GaussianPairSpec(1, 0.5), np.random.default_rng(0), 256)
    a = MutualInformationEstimator(hidden=(8,), steps=10, batch_size=32, random_state=4).fit(x, y)
    b = MutualInformationEstimator(hidden=(8,), steps=10, batch_size=32, random_state=4).fit(x, y)
    assert a.curve_ == b.curve_


def test_mi_estimator_rejects_unpaired():
    with pytest.raises(ValueError):
        MutualInformationEstimator().fit(np.zeros((5, 1)), np.zeros((4, 1)))


def test_unfitted_errors():
    with pytest.raises(NotFittedError):
        MutualInformationEstimator().score(np.zeros((4, 1)), np.zeros((4, 1)))
    with pytest.raises(NotFittedError):
        DeepInfoMax().transform(np.zeros((2, 1, 16, 16)))
    with pytest.raises(NotFittedError):
        LinearProbe().predict(np.zeros((2, 3)))


def test_deep_infomax_transform():
    x, _ = sample_toy_images(ToyImageSpec(), np.random.default_rng(0), 64)
    dim = DeepInfoMax(steps=3, batch_size=8, scorer_width=16, widths=(4, 8), hidden=16, out_dim=6,
                      random_state=0).fit(x)
    z = dim.transform(x[:10])
    assert z.shape == (10, 6) and ((z > 0) & (z < 1)).all()
    assert len(dim.history_) == 3
    np.testing.assert_array_equal(dim.transform(x[:, 0][:10]), z)    # (n, H, W) accepted
    with pytest.raises(ValueError):
        dim.transform(np.zeros((2, 1, 8, 8), np.float32))


def test_deep_infomax_rejects_non_square():
    with pytest.raises(ValueError, match="square"):
        DeepInfoMax(steps=1).fit(np.zeros((4, 1, 16, 8)))


def test_ndm_fit():
    z = np.random.default_rng(0).normal(size=(300, 4))
    est = NeuralDependencyMeasure(hidden=(8,), steps=5, batch_size=32, random_state=0).fit(z)
    assert est.estimate_ == max(est.raw_, 0.0) and len(est.curve_) == 5


@pytest.mark.parametrize("cls", [LinearProbe, MLPProbe])
def test_probes_classify_separable_data(cls):
    r = np.random.default_rng(0)
    y = r.choice(["a", "b", "c"], size=300)
    x = np.eye(3)[np.searchsorted(["a", "b", "c"], y)] * 3 + r.normal(scale=0.1, size=(300, 3))
    clf = cls(epochs=20, random_state=0).fit(x, y)
    assert clf.score(x, y) == 1.0
    p = clf.predict_proba(x[:5])
    np.testing.assert_allclose(p.sum(axis=1), 1, atol=1e-6)
    assert set(clf.predict(x)) <= {"a", "b", "c"}
    with pytest.raises(ValueError):
        clf.predict(x[:, :2])
