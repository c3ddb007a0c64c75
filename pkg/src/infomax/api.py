"""scikit-learn style front ends for the estimators, DIM encoder and probes."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import dim as dim_mod
from .data import ProbeSpec, fit_classifier, predict_logits
from .estimators import NegativeSamplingConfig, evaluate_critic, mine_fit
from .ndm import NdmConfig, ndm_estimate
from .rng import make_rng


def _pairs(X, Y):
    X = check_array(X, dtype=np.float64)
    Y = check_array(Y, dtype=np.float64, ensure_2d=False)
    if Y.ndim == 1:
        Y = Y[:, None]
    if len(X) != len(Y):
        raise ValueError(f"X has {len(X)} rows but Y has {len(Y)}")
    if len(X) < 2:
        raise ValueError("need at least two paired samples")
    return X, Y


class MutualInformationEstimator(BaseEstimator):
    """Fit a critic to a lower bound on I(X; Y) from paired samples."""

    def __init__(self, estimator="dv", critic="concat", hidden=(64, 64), steps=500, batch_size=64,
                 lr=1e-3, negatives_per_positive=None, random_state=None):
        self.estimator = estimator
        self.critic = critic
        self.hidden = hidden
        self.steps = steps
        self.batch_size = batch_size
        self.lr = lr
        self.negatives_per_positive = negatives_per_positive
        self.random_state = random_state

    def _negatives(self):
        return NegativeSamplingConfig(self.negatives_per_positive)

    def fit(self, X, Y):
        X, Y = _pairs(X, Y)
        res = mine_fit(X, Y, self.estimator, critic_kind=self.critic, hidden=tuple(self.hidden),
                       steps=self.steps, batch_size=self.batch_size, lr=self.lr,
                       negatives=self._negatives(), rng=make_rng(self.random_state))
        self.n_features_in_ = X.shape[1]
        self.estimate_, self.mi_, self.K_ = res.estimate, res.mi, res.K
        self.curve_ = res.curve
        self.critic_ = res.critic
        return self

    def score(self, X, Y):
        """Estimator value of the fitted critic on (X, Y) taken as one batch."""
        check_is_fitted(self, "critic_")
        X, Y = _pairs(X, Y)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, fitted on {self.n_features_in_}")
        return evaluate_critic(self.critic_, self.estimator, X, Y, self._negatives(),
                               make_rng(self.random_state))


class DeepInfoMax(TransformerMixin, BaseEstimator):
    """Unsupervised image encoder; ``transform`` returns the 64-d global features.

    ``X`` is (n, C, H, W) or (n, H, W) with square images.
    """

    def __init__(self, alpha=0.0, beta=1.0, gamma=0.1, estimator="infonce", scorer="encode-dot",
                 scorer_width=256, steps=800, batch_size=32, lr=1e-3, prior_lr=None, beta1=0.9,
                 widths=(32, 64), hidden=256, out_dim=64, random_state=None):
        self.alpha = alpha
        self.beta = beta
        self.gamma = gamma
        self.estimator = estimator
        self.scorer = scorer
        self.scorer_width = scorer_width
        self.steps = steps
        self.batch_size = batch_size
        self.lr = lr
        self.prior_lr = prior_lr
        self.beta1 = beta1
        self.widths = widths
        self.hidden = hidden
        self.out_dim = out_dim
        self.random_state = random_state

    @staticmethod
    def _images(X):
        X = check_array(X, allow_nd=True, dtype=np.float32)
        if X.ndim == 3:
            X = X[:, None]
        if X.ndim != 4 or X.shape[2] != X.shape[3]:
            raise ValueError(f"expected square images shaped (n, C, H, W), got {X.shape}")
        return X

    def fit(self, X, y=None):
        X = self._images(X)
        rng = make_rng(self.random_state)
        h = dim_mod.DimHyperparams(self.alpha, self.beta, self.gamma, self.estimator, self.scorer)
        self.model_ = dim_mod.DimModel(h, image_size=X.shape[2], in_channels=X.shape[1],
                                       widths=tuple(self.widths), hidden=self.hidden,
                                       out_dim=self.out_dim, scorer_width=self.scorer_width, rng=rng)
        self.history_ = dim_mod.train_dim(self.model_, X, self.steps, self.batch_size, self.lr, rng=rng,
                                          prior_lr=self.prior_lr, betas=(self.beta1, 0.999))
        self.n_features_in_ = int(np.prod(X.shape[1:]))
        return self

    def transform(self, X):
        check_is_fitted(self, "model_")
        X = self._images(X)
        if int(np.prod(X.shape[1:])) != self.n_features_in_:
            raise ValueError("image shape differs from the one seen in fit")
        return self.model_.transform(X)


class NeuralDependencyMeasure(BaseEstimator):
    """KL between the joint of the columns of Z and the product of their marginals."""

    def __init__(self, hidden=(512, 512), steps=600, batch_size=128, lr=1e-4,
                 use_sigmoid_output=False, preprocess="rank", random_state=None):
        self.hidden = hidden
        self.steps = steps
        self.batch_size = batch_size
        self.lr = lr
        self.use_sigmoid_output = use_sigmoid_output
        self.preprocess = preprocess
        self.random_state = random_state

    def fit(self, Z, y=None):
        Z = check_array(Z, dtype=np.float64, ensure_min_samples=2, ensure_min_features=1)
        cfg = NdmConfig(tuple(self.hidden), self.steps, self.batch_size, self.lr, self.use_sigmoid_output,
                        self.preprocess)
        res = ndm_estimate(Z, cfg, make_rng(self.random_state))
        self.n_features_in_ = Z.shape[1]
        self.estimate_, self.raw_, self.curve_ = res.estimate, res.raw, res.curve
        return self


class _Probe(ClassifierMixin, BaseEstimator):
    kind = "linear"

    def _spec(self):
        return ProbeSpec(self.kind, self.epochs, getattr(self, "dropout", 0.0), self.lr, self.batch_size)

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        check_classification_targets(y)
        self.classes_, yi = np.unique(y, return_inverse=True)
        self.mean_, self.scale_ = X.mean(axis=0), X.std(axis=0) + 1e-6
        rng = make_rng(self.random_state)
        self.model_, _ = fit_classifier((X - self.mean_) / self.scale_, yi, self._spec(), rng, len(self.classes_))
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, fitted on {self.n_features_in_}")
        return predict_logits(self.model_, (X - self.mean_) / self.scale_)

    def predict_proba(self, X):
        z = self.decision_function(X)
        z = np.exp(z - z.max(axis=1, keepdims=True))
        return z / z.sum(axis=1, keepdims=True)

    def predict(self, X):
        check_is_fitted(self, "model_")
        return self.classes_[self.decision_function(X).argmax(axis=1)]


class LinearProbe(_Probe):
    """Multinomial logistic regression on standardized frozen features."""

    kind = "linear"

    def __init__(self, epochs=50, lr=1e-2, batch_size=128, random_state=None):
        self.epochs = epochs
        self.lr = lr
        self.batch_size = batch_size
        self.random_state = random_state


class MLPProbe(_Probe):
    """One 200-unit ReLU hidden layer with dropout."""

    kind = "mlp200"

    def __init__(self, epochs=50, lr=1e-2, batch_size=128, dropout=0.1, random_state=None):
        self.epochs = epochs
        self.lr = lr
        self.batch_size = batch_size
        self.dropout = dropout
        self.random_state = random_state


__all__ = ["MutualInformationEstimator", "DeepInfoMax", "NeuralDependencyMeasure", "LinearProbe", "MLPProbe"]
