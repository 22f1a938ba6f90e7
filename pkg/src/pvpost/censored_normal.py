"""Gaussian law left-censored at 0 and right-censored at 1.

All functions broadcast over numpy arrays: ``mu``, ``sigma`` and the
evaluation point may be scalars or arrays of compatible shape.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri

from .errors import DomainError

_SQRT_PI = np.sqrt(np.pi)
_SQRT_2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class CensoredNormalParams:
    """Location and scale of the doubly censored normal law.

    ``mu`` and ``sigma`` may be floats or equally shaped arrays (one law
    per forecast case).
    """

    mu: object
    sigma: object

    def __post_init__(self):
        object.__setattr__(self, "mu", _as_float(self.mu))
        object.__setattr__(self, "sigma", _as_float(self.sigma))
        _check_sigma(self.sigma)

    def __len__(self):
        return np.size(self.mu)


def _as_float(v):
    a = np.asarray(v, dtype=float)
    return float(a) if a.ndim == 0 else a


def _check_sigma(sigma):
    s = np.asarray(sigma)
    if not np.all(np.isfinite(s)) or np.any(s <= 0):
        raise DomainError("sigma must be finite and strictly positive")


def _pdf(z):
    return _INV_SQRT_2PI * np.exp(-0.5 * z * z)


def cdf(x, p):
    """CDF of the censored law: 0 below 0, Phi((x - mu)/sigma) on [0, 1], 1 above 1."""
    x = np.asarray(x, dtype=float)
    inner = ndtr((x - p.mu) / p.sigma)
    out = np.where(x < 0.0, 0.0, np.where(x > 1.0, 1.0, inner))
    return _as_float(out)


def point_masses(p):
    """Return ``(p_lb, p_ub)``, the probability atoms at 0 and at 1."""
    p_lb = ndtr(-p.mu / p.sigma)
    p_ub = ndtr((p.mu - 1.0) / p.sigma)
    return _as_float(p_lb), _as_float(p_ub)


def quantile(tau, p):
    """Generalized inverse of :func:`cdf`.

    Returns 0 where ``tau <= p_lb``, 1 where ``tau >= 1 - p_ub`` and
    ``mu + sigma * Phi^-1(tau)`` in between.  ``tau`` broadcasts against
    the parameters, so ``quantile(levels[None, :], params_with_column_shape)``
    yields a matrix of quantiles.
    """
    tau = np.asarray(tau, dtype=float)
    if np.any((tau <= 0.0) | (tau >= 1.0)) or np.any(np.isnan(tau)):
        raise DomainError("tau must lie in the open interval (0, 1)")
    p_lb, p_ub = point_masses(p)
    q = p.mu + p.sigma * ndtri(tau)
    q = np.where(tau <= p_lb, 0.0, np.where(tau >= 1.0 - np.asarray(p_ub), 1.0, q))
    # the interior branch can stray by rounding at the boundaries of the atoms
    return _as_float(np.clip(q, 0.0, 1.0))


def _antiderivative(w):
    # d/dw [w Phi(w)^2 + 2 Phi(w) phi(w) - Phi(sqrt2 w)/sqrt(pi)] = Phi(w)^2
    Phi = ndtr(w)
    return w * Phi * Phi + 2.0 * Phi * _pdf(w) - ndtr(_SQRT_2 * w) / _SQRT_PI


def _standardized(p, y):
    y = np.asarray(y, dtype=float)
    if np.any((y < 0.0) | (y > 1.0)) or np.any(np.isnan(y)):
        raise DomainError("observation must lie in [0, 1]")
    mu = np.asarray(p.mu, dtype=float)
    sigma = np.asarray(p.sigma, dtype=float)
    lo = -mu / sigma
    z = (y - mu) / sigma
    hi = (1.0 - mu) / sigma
    return lo, z, hi, sigma


def crps_closed_form(p, y):
    """Closed-form CRPS of the censored law for an observation ``y`` in [0, 1].

    With ``l = -mu/sigma``, ``z = (y - mu)/sigma`` and ``u = (1 - mu)/sigma``
    the score integral splits at the observation into
    ``sigma * [A(z) - A(l) + A(-z) - A(-u)]`` where ``A`` is an
    antiderivative of ``Phi(w)**2``.
    """
    lo, z, hi, sigma = _standardized(p, y)
    g = _antiderivative(z) - _antiderivative(lo) + _antiderivative(-z) - _antiderivative(-hi)
    # differences of nearly equal antiderivative values can dip below zero
    return _as_float(np.maximum(sigma * g, 0.0))


def crps_gradient(p, y):
    """Analytic partial derivatives ``(d/dmu, d/dsigma)`` of :func:`crps_closed_form`."""
    lo, z, hi, sigma = _standardized(p, y)
    g = _antiderivative(z) - _antiderivative(lo) + _antiderivative(-z) - _antiderivative(-hi)
    dz = 2.0 * ndtr(z) - 1.0  # Phi(z)^2 - Phi(-z)^2
    dlo = -ndtr(lo) ** 2
    dhi = ndtr(-hi) ** 2
    d_mu = -(dz + dlo + dhi)
    d_sigma = g - z * dz - lo * dlo - hi * dhi
    return _as_float(d_mu), _as_float(d_sigma)


def sample(p, size, rng):
    """Draw from the censored law by clipping normal draws to [0, 1]."""
    return np.clip(rng.normal(p.mu, p.sigma, size=size), 0.0, 1.0)
