"""scikit-learn compatible estimators for the three model families.

``SoftmaxClassifier`` is the plain DNN, ``MCDropoutClassifier`` turns a
fitted DNN into a Monte-Carlo dropout ensemble and
``PriorNetworkClassifier`` fits a Dirichlet Prior Network (optionally with
FGSM-augmented OOD data).  Every estimator exposes ``uncertainty(X)`` and
``attack_target()``; the latter is the differentiable view used by
:mod:`pnbench.attacks`.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import autodiff as ad
from . import uncertainty as unc
from .exceptions import ContractError
from .losses import TargetDirichletSpec, TrainConfig, train
from .models import (
    DIRICHLET,
    SOFTMAX,
    CategoricalDist,
    DirichletParams,
    Network,
    predict_mc_dropout,
)


# ---------------------------------------------------------------- attack views


class NetworkTarget:
    """Deterministic differentiable view of a single network."""

    def __init__(self, network):
        self.network = network

    @property
    def is_dirichlet(self):
        return self.network.head == DIRICHLET

    def concentration(self, x):
        if not self.is_dirichlet:
            return None
        return self.network.concentrations(self.network.logits(x))

    def log_predictive(self, x):
        logits = self.network.logits(x)
        if not self.is_dirichlet:
            return ad.log_softmax(logits)
        if self.network.concentration == "exp":
            # log(alpha_c / alpha_0) with alpha = exp(logit)
            return ad.log_softmax(logits)
        alpha = self.network.concentrations(logits)
        return ad.log(alpha) - ad.log(ad.sum(alpha, axis=-1, keepdims=True))

    def predict_proba(self, x):
        return np.exp(self.log_predictive(np.asarray(x, dtype=np.float64)).data)


class MCDropoutTarget:
    """Mean softmax over a fixed set of dropout masks, so gradients are deterministic."""

    is_dirichlet = False

    def __init__(self, network, n_samples=10, seed=0):
        self.network = network
        rng = np.random.default_rng(seed)
        self.masks = [network.sample_masks(rng) for _ in range(n_samples)]

    def concentration(self, x):
        return None

    def log_predictive(self, x):
        parts = [ad.log_softmax(self.network.logits(x, m)) for m in self.masks]
        if len(parts) == 1:
            return parts[0]
        return ad.logsumexp(_stack(parts), axis=0) - np.log(len(parts))

    def predict_proba(self, x):
        return np.exp(self.log_predictive(np.asarray(x, dtype=np.float64)).data)


def _stack(tensors):
    """Stack equally shaped tensors along a new leading axis."""
    data = np.stack([t.data for t in tensors])

    def bw(g):
        for i, t in enumerate(tensors):
            if t.requires_grad:
                t._accumulate(g[i])

    return ad._make(data, tensors, "stack", bw)


def as_attack_target(model):
    if hasattr(model, "attack_target"):
        return model.attack_target()
    if isinstance(model, Network):
        return NetworkTarget(model)
    if hasattr(model, "log_predictive"):
        return model
    raise ContractError(f"cannot attack object of type {type(model).__name__}")


# ---------------------------------------------------------------- estimators


class _NetworkClassifier(ClassifierMixin, BaseEstimator):
    _head = SOFTMAX
    _default_measure = unc.ENTROPY

    def _train_config(self):
        return TrainConfig(
            learning_rate=self.learning_rate,
            schedule=self.schedule,
            peak_multiplier=self.peak_multiplier,
            cycle_epochs=self.cycle_epochs,
            epochs=self.epochs,
            final_lr=self.final_lr,
            batch_size=self.batch_size,
            momentum=self.momentum,
            optimizer=self.optimizer,
            max_grad_norm=self.max_grad_norm,
            seed=self.random_state,
        )

    @classmethod
    def from_network(cls, network, classes=None, **params):
        """Wrap an already trained network without refitting."""
        if network.head != cls._head:
            raise ContractError(f"{cls.__name__} needs a {cls._head} head, got {network.head}")
        est = cls(**params)
        est.network_ = network
        est.classes_ = np.arange(network.n_classes) if classes is None else np.asarray(classes)
        est.n_features_in_ = network.n_inputs
        est.loss_curve_ = []
        return est

    def _build_network(self, n_features, n_classes):
        sizes = (n_features,) + tuple(self.hidden_layer_sizes) + (n_classes,)
        return Network(sizes, self.leaky_slope, self.dropout_keep, self._head,
                       getattr(self, "concentration", "exp"), seed=self.random_state)

    def _validate_data(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_, y_idx = np.unique(y, return_inverse=True)
        self.n_features_in_ = X.shape[1]
        return X, y_idx

    def _check_X(self, X):
        check_is_fitted(self, "network_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ContractError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return X

    def attack_target(self):
        check_is_fitted(self, "network_")
        return NetworkTarget(self.network_)

    def predict_proba(self, X):
        X = self._check_X(X)
        return self.attack_target().predict_proba(X)

    def predict(self, X):
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]

    @property
    def n_classes_(self):
        return len(self.classes_)


class SoftmaxClassifier(_NetworkClassifier):
    """Leaky-ReLU MLP trained with cross-entropy (the DNN baseline)."""

    def __init__(self, hidden_layer_sizes=(64, 64), leaky_slope=0.2, dropout_keep=0.5,
                 learning_rate=0.01, schedule="one-cycle", peak_multiplier=10.0,
                 cycle_epochs=20, epochs=30, final_lr=1e-6, batch_size=64, momentum=0.9,
                 optimizer="sgd", max_grad_norm=None, uncertainty_measure="entropy", random_state=0):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.leaky_slope = leaky_slope
        self.dropout_keep = dropout_keep
        self.learning_rate = learning_rate
        self.schedule = schedule
        self.peak_multiplier = peak_multiplier
        self.cycle_epochs = cycle_epochs
        self.epochs = epochs
        self.final_lr = final_lr
        self.batch_size = batch_size
        self.momentum = momentum
        self.optimizer = optimizer
        self.max_grad_norm = max_grad_norm
        self.uncertainty_measure = uncertainty_measure
        self.random_state = random_state

    def fit(self, X, y):
        X, y_idx = self._validate_data(X, y)
        net = self._build_network(X.shape[1], len(self.classes_))
        self.network_, self.loss_curve_ = train(net, X, y_idx, self._train_config())
        return self

    def predict_dist(self, X):
        return CategoricalDist(self.predict_proba(X))

    def uncertainty(self, X):
        if self.uncertainty_measure != unc.ENTROPY:
            raise ContractError(f"a softmax DNN only supports entropy, got {self.uncertainty_measure!r}")
        return unc.entropy(self.predict_proba(X)).value


class MCDropoutClassifier(ClassifierMixin, BaseEstimator):
    """Monte-Carlo dropout ensemble built on a :class:`SoftmaxClassifier`.

    With ``prefit=True`` the wrapped estimator is used as already fitted,
    which is how the DNN and MCDP rosters share weights.
    """

    def __init__(self, estimator=None, n_samples=100, attack_samples=10,
                 uncertainty_measure="mutual_information", prefit=False, random_state=0):
        self.estimator = estimator
        self.n_samples = n_samples
        self.attack_samples = attack_samples
        self.uncertainty_measure = uncertainty_measure
        self.prefit = prefit
        self.random_state = random_state

    @classmethod
    def from_fitted(cls, estimator, **kwargs):
        return cls(estimator=estimator, prefit=True, **kwargs)._adopt()

    def _adopt(self):
        est = self.estimator
        check_is_fitted(est, "network_")
        self.estimator_ = est
        self.network_ = est.network_
        self.classes_ = est.classes_
        self.n_features_in_ = est.n_features_in_
        if self.network_.dropout_keep >= 1.0:
            import warnings
            warnings.warn("dropout_keep is 1; the Monte-Carlo ensemble is degenerate", stacklevel=2)
        return self

    def fit(self, X, y):
        if self.prefit:
            return self._adopt()
        from sklearn.base import clone

        est = clone(self.estimator if self.estimator is not None else SoftmaxClassifier())
        self.estimator = est.fit(X, y)
        return self._adopt()

    def _check_X(self, X):
        check_is_fitted(self, "network_")
        return check_array(X, dtype=np.float64)

    def predict_ensemble(self, X):
        if self.n_samples < 1:
            raise ContractError("n_samples must be positive")
        return predict_mc_dropout(self.network_, self._check_X(X), self.n_samples, self.random_state)

    def predict_proba(self, X):
        return self.predict_ensemble(X).expected.probs

    def predict(self, X):
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]

    def uncertainty(self, X):
        ens = self.predict_ensemble(X)
        if self.uncertainty_measure == unc.ENTROPY:
            return unc.entropy(ens.expected).value
        if self.uncertainty_measure == unc.MUTUAL_INFORMATION:
            return unc.mutual_information_ensemble(ens).value
        raise ContractError(f"unsupported measure {self.uncertainty_measure!r} for MC dropout")

    def attack_target(self):
        check_is_fitted(self, "network_")
        return MCDropoutTarget(self.network_, self.attack_samples, self.random_state)


class PriorNetworkClassifier(_NetworkClassifier):
    """Dirichlet Prior Network; ``adversarial=True`` gives the PN-ADV variant."""

    _head = DIRICHLET
    _default_measure = unc.MUTUAL_INFORMATION

    def __init__(self, hidden_layer_sizes=(64, 64), leaky_slope=0.2, dropout_keep=0.7,
                 concentration="exp", target_smoothing=0.01, target_precision=100.0,
                 ood_weight=1.0, adversarial=False, adv_eps_mean=0.15, adv_eps_std=0.05,
                 learning_rate=0.005, schedule="one-cycle", peak_multiplier=10.0,
                 cycle_epochs=20, epochs=30, final_lr=1e-6, batch_size=64, momentum=0.9,
                 optimizer="sgd", max_grad_norm=None, uncertainty_measure="mutual_information", random_state=0):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.leaky_slope = leaky_slope
        self.dropout_keep = dropout_keep
        self.concentration = concentration
        self.target_smoothing = target_smoothing
        self.target_precision = target_precision
        self.ood_weight = ood_weight
        self.adversarial = adversarial
        self.adv_eps_mean = adv_eps_mean
        self.adv_eps_std = adv_eps_std
        self.learning_rate = learning_rate
        self.schedule = schedule
        self.peak_multiplier = peak_multiplier
        self.cycle_epochs = cycle_epochs
        self.epochs = epochs
        self.final_lr = final_lr
        self.batch_size = batch_size
        self.momentum = momentum
        self.optimizer = optimizer
        self.max_grad_norm = max_grad_norm
        self.uncertainty_measure = uncertainty_measure
        self.random_state = random_state

    def _train_config(self):
        cfg = super()._train_config()
        cfg.ood_weight = self.ood_weight
        cfg.adversarial = self.adversarial
        cfg.adv_eps_mean = self.adv_eps_mean
        cfg.adv_eps_std = self.adv_eps_std
        return cfg

    def fit(self, X, y, X_ood=None):
        X, y_idx = self._validate_data(X, y)
        if X_ood is not None:
            X_ood = check_array(X_ood, dtype=np.float64)
        net = self._build_network(X.shape[1], len(self.classes_))
        spec = TargetDirichletSpec(self.target_smoothing, self.target_precision)
        self.network_, self.loss_curve_ = train(net, X, y_idx, self._train_config(), X_ood, spec)
        return self

    def predict_dirichlet(self, X):
        X = self._check_X(X)
        return DirichletParams(self.network_.concentrations(self.network_.logits(X)).data)

    def uncertainty(self, X):
        d = self.predict_dirichlet(X)
        if self.uncertainty_measure == unc.MUTUAL_INFORMATION:
            return unc.mutual_information_dirichlet(d).value
        if self.uncertainty_measure == unc.ENTROPY:
            return unc.entropy(d.alpha / d.alpha0[:, None]).value
        if self.uncertainty_measure == unc.DIFFERENTIAL_ENTROPY:
            return unc.differential_entropy_dirichlet(d).value
        raise ContractError(f"unknown measure {self.uncertainty_measure!r}")
