"""Uncertainty measures in nats.

All functions are vectorised over leading axes and return plain float arrays
(0-d for a single distribution).
"""

import logging
from dataclasses import dataclass

import numpy as np

from . import special
from .models import CategoricalDist, DirichletParams, EnsemblePrediction

logger = logging.getLogger(__name__)

ENTROPY = "entropy"
MUTUAL_INFORMATION = "mutual_information"
DIFFERENTIAL_ENTROPY = "differential_entropy"
KINDS = (ENTROPY, MUTUAL_INFORMATION, DIFFERENTIAL_ENTROPY)

# probabilities below this are exact zeros for 0 * ln 0
_TINY = 1e-300
_CLAMP_LOG_LEVEL = 1e-9


@dataclass(frozen=True)
class UncertaintyScore:
    kind: str
    value: np.ndarray

    def __float__(self):
        return float(self.value)


def _probs(p):
    return p.probs if isinstance(p, CategoricalDist) else np.asarray(p, dtype=np.float64)


def _alpha(d):
    a = d.alpha if isinstance(d, DirichletParams) else np.asarray(d, dtype=np.float64)
    return np.sort(a, axis=-1)


def entropy_array(probs):
    # sorted so that permuting classes gives bit-identical sums
    p = np.sort(np.asarray(probs, dtype=np.float64), axis=-1)
    safe = np.where(p > _TINY, p, 1.0)
    return -np.sum(np.where(p > _TINY, p * np.log(safe), 0.0), axis=-1)


def entropy(p):
    """Shannon entropy -sum p ln p of a categorical distribution."""
    return UncertaintyScore(ENTROPY, entropy_array(_probs(p)))


def mutual_information_ensemble(e):
    """Entropy of the mean member minus the mean member entropy."""
    members = e.members if isinstance(e, EnsemblePrediction) else np.asarray(e, dtype=np.float64)
    total = entropy_array(members.mean(axis=0))
    expected_data = entropy_array(members).mean(axis=0)
    mi = total - expected_data
    worst = float(np.max(-mi, initial=0.0))
    if worst > _CLAMP_LOG_LEVEL:
        logger.warning("clamped negative ensemble mutual information of magnitude %.3g", worst)
    return UncertaintyScore(MUTUAL_INFORMATION, np.maximum(mi, 0.0))


def expected_entropy_dirichlet(alpha):
    """E_{pi ~ Dir(alpha)} H[pi] in closed form."""
    a = np.sort(np.asarray(alpha, dtype=np.float64), axis=-1)
    a0 = a.sum(axis=-1, keepdims=True)
    mean = a / a0
    return np.sum(mean * (special.digamma(a0 + 1.0) - special.digamma(a + 1.0)), axis=-1)


def mutual_information_dirichlet(d):
    """Total predictive entropy minus expected categorical entropy under Dir(alpha)."""
    a = _alpha(d)
    total = entropy_array(a / a.sum(axis=-1, keepdims=True))
    mi = total - expected_entropy_dirichlet(a)
    return UncertaintyScore(MUTUAL_INFORMATION, np.maximum(mi, 0.0))


def log_beta(alpha):
    a = np.asarray(alpha, dtype=np.float64)
    return np.sum(special.lgamma(a), axis=-1) - special.lgamma(a.sum(axis=-1))


def differential_entropy_dirichlet(d):
    a = _alpha(d)
    k = a.shape[-1]
    a0 = a.sum(axis=-1)
    value = (log_beta(a) + (a0 - k) * special.digamma(a0)
             - np.sum((a - 1.0) * special.digamma(a), axis=-1))
    return UncertaintyScore(DIFFERENTIAL_ENTROPY, value)
