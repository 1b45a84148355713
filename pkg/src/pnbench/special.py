"""Log-gamma, digamma and trigamma on float64 arrays.

Digamma and trigamma shift the argument upward with the recurrence until it
is at least 6 and then apply the asymptotic series through x**-10.  Log-gamma
is delegated to scipy.
"""

import numpy as np
from scipy.special import gammaln

from .exceptions import DomainError

_SHIFT_TO = 6.0


def _check_positive(x, name):
    x = np.asarray(x, dtype=np.float64)
    if np.any(~(x > 0)):
        raise DomainError(f"{name} requires strictly positive arguments")
    return x


def lgamma(x):
    x = _check_positive(x, "lgamma")
    return gammaln(x)


def digamma(x):
    """psi(x) = d/dx ln Gamma(x) for x > 0."""
    x = _check_positive(x, "digamma").copy()
    acc = np.zeros_like(x)
    small = x < _SHIFT_TO
    while np.any(small):
        acc[small] -= 1.0 / x[small]
        x[small] += 1.0
        small = x < _SHIFT_TO
    inv = 1.0 / x
    inv2 = inv * inv
    # Bernoulli terms B_{2k} / (2k x^{2k}), k = 1..5
    series = inv2 * (1.0 / 12 - inv2 * (1.0 / 120 - inv2 * (1.0 / 252 - inv2 * (1.0 / 240 - inv2 * (1.0 / 132)))))
    return acc + np.log(x) - 0.5 * inv - series


def trigamma(x):
    """psi'(x) for x > 0."""
    x = _check_positive(x, "trigamma").copy()
    acc = np.zeros_like(x)
    small = x < _SHIFT_TO
    while np.any(small):
        acc[small] += 1.0 / (x[small] * x[small])
        x[small] += 1.0
        small = x < _SHIFT_TO
    inv = 1.0 / x
    inv2 = inv * inv
    series = inv * (1.0 + inv * (0.5 + inv * (1.0 / 6 - inv2 * (1.0 / 30 - inv2 * (1.0 / 42 - inv2 * (1.0 / 30 - inv2 * (5.0 / 66)))))))
    return acc + series
