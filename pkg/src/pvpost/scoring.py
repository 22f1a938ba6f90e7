"""Verification functionals for quantile and ensemble forecasts.

Forecasts are passed as ``(n, K)`` arrays (one row per case) or as
:class:`QuantileForecast` objects.  Observations are ``(n,)`` arrays.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError

N_LEVELS = 51
#: Quantile levels k/52, k = 1..51; the widest central interval then has
#: nominal coverage 50/52, matching a 51-member ensemble.
LEVELS = np.arange(1, N_LEVELS + 1) / (N_LEVELS + 1)
MEDIAN_INDEX = N_LEVELS // 2


@dataclass
class QuantileForecast:
    """Quantile values at fixed levels; ``values`` is ``(51,)`` or ``(n, 51)``."""

    values: np.ndarray
    levels: np.ndarray = field(default_factory=lambda: LEVELS.copy())

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.levels = np.asarray(self.levels, dtype=float)
        if self.values.shape[-1] != self.levels.size:
            raise DomainError(
                f"expected {self.levels.size} quantile values, got {self.values.shape[-1]}"
            )
        if np.any(np.diff(self.levels) <= 0):
            raise DomainError("levels must be strictly increasing")
        if np.any(np.diff(self.values, axis=-1) < 0):
            raise DomainError("quantile values cross (not non-decreasing)")

    def __len__(self):
        return 1 if self.values.ndim == 1 else self.values.shape[0]


def _values(forecasts):
    v = forecasts.values if isinstance(forecasts, QuantileForecast) else forecasts
    return np.atleast_2d(np.asarray(v, dtype=float))


def _obs(obs, n):
    y = np.atleast_1d(np.asarray(obs, dtype=float))
    if y.shape != (n,):
        raise DomainError(f"got {y.size} observations for {n} forecasts")
    return y


def _check_tau(tau):
    tau = np.asarray(tau, dtype=float)
    if np.any((tau <= 0) | (tau >= 1)) or np.any(np.isnan(tau)):
        raise DomainError("tau must lie in (0, 1)")
    return tau


def pinball(tau, u):
    """Pinball loss: ``u * tau`` for ``u >= 0`` and ``u * (tau - 1)`` otherwise."""
    tau = _check_tau(tau)
    u = np.asarray(u, dtype=float)
    return np.where(u >= 0, u * tau, u * (tau - 1.0))


def _huber(u, eps):
    a = np.abs(u)
    return np.where(a <= eps, u * u / (2.0 * eps), a - eps / 2.0)


def huber_pinball(tau, u, eps=1e-8):
    """Quantile Huber loss.

    The residual magnitude is smoothed by the Huber norm and weighted by
    ``tau`` (``u >= 0``) or ``1 - tau`` (``u < 0``).  Differs from
    :func:`pinball` by at most ``eps / 2``.
    """
    if eps <= 0:
        raise DomainError("eps must be positive")
    tau = _check_tau(tau)
    u = np.asarray(u, dtype=float)
    return np.where(u >= 0, tau, 1.0 - tau) * _huber(u, eps)


def huber_pinball_grad(tau, u, eps=1e-8):
    """Derivative of :func:`huber_pinball` with respect to ``u``."""
    u = np.asarray(u, dtype=float)
    dh = np.where(np.abs(u) <= eps, u / eps, np.sign(u))
    return np.where(u >= 0, tau, 1.0 - tau) * dh


def crps_ensemble(values, y):
    """Empirical CRPS of an ensemble (or equally weighted quantile set).

    ``values`` is ``(K,)`` with scalar ``y`` or ``(n, K)`` with ``(n,)``
    observations.  Uses the sorted-sample form of
    ``mean|f_k - y| - 0.5 * mean|f_k - f_l|``.
    """
    v = np.asarray(values, dtype=float)
    scalar = v.ndim == 1
    v = np.atleast_2d(v)
    if v.shape[-1] == 0:
        raise DomainError("crps_ensemble needs at least one member")
    K = v.shape[1]
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.size != v.shape[0]:
        raise DomainError("one observation per ensemble required")
    s = np.sort(v, axis=1)
    w = (2.0 * np.arange(1, K + 1) - K - 1) / K**2
    crps = np.mean(np.abs(s - y[:, None]), axis=1) - s @ w
    return float(crps[0]) if scalar else crps


def crps_decomposition(forecasts, obs):
    """Reliability/resolution/uncertainty split of the mean empirical CRPS.

    Bin-wise decomposition over the intervals between sorted forecast
    values; observations falling outside the forecast range are handled
    with outlier bins.  ``rel - res + unc`` equals the mean of
    :func:`crps_ensemble` up to rounding, and ``unc`` only depends on
    ``obs``.

    Returns
    -------
    rel, res, unc : float
    """
    x = np.sort(_values(forecasts), axis=1)
    n, K = x.shape
    y = _obs(obs, n)
    if n < 2:
        raise DomainError("decomposition needs at least two cases")

    yc = y[:, None]
    clipped = np.clip(yc, x[:, :-1], x[:, 1:])
    alpha = np.empty((n, K + 1))
    beta = np.empty((n, K + 1))
    alpha[:, 1:K] = clipped - x[:, :-1]
    beta[:, 1:K] = x[:, 1:] - clipped
    alpha[:, 0] = 0.0
    beta[:, 0] = np.maximum(x[:, 0] - y, 0.0)
    alpha[:, K] = np.maximum(y - x[:, -1], 0.0)
    beta[:, K] = 0.0

    a_bar = alpha.mean(axis=0)
    b_bar = beta.mean(axis=0)
    g = a_bar + b_bar
    p = np.arange(K + 1) / K
    o = np.zeros(K + 1)
    inner = g > 0
    o[inner] = b_bar[inner] / g[inner]

    below = np.mean(y < x[:, 0])
    if below > 0:
        o[0] = below
        g[0] = b_bar[0] / below
    else:
        g[0] = 0.0
    above = np.mean(y > x[:, -1])
    if above > 0:
        o[K] = 1.0 - above
        g[K] = a_bar[K] / above
    else:
        g[K] = 0.0

    rel = float(np.sum(g * (o - p) ** 2))
    potential = float(np.sum(g * o * (1.0 - o)))
    ys = np.sort(y)
    unc = float(np.sum((2.0 * np.arange(1, n + 1) - n - 1) * ys) / n**2)
    return rel, unc - potential, unc


def _level_index(tau, levels):
    idx = np.flatnonzero(np.isclose(levels, tau, rtol=0, atol=1e-12))
    if idx.size != 1:
        raise DomainError(f"level {tau} is not on the quantile grid")
    return int(idx[0])


def quantile_score(q, y, tau, levels=LEVELS):
    """Pinball loss ``rho_tau(y - q_tau)`` of the quantile at level ``tau``.

    ``q`` is a :class:`QuantileForecast` or an array of quantile values on
    ``levels``; ``y`` matches its leading shape.
    """
    if isinstance(q, QuantileForecast):
        levels = q.levels
        q = q.values
    q = np.asarray(q, dtype=float)
    k = _level_index(tau, np.asarray(levels))
    return pinball(levels[k], np.asarray(y, dtype=float) - q[..., k])


def quantile_score_curve(forecasts, obs, levels=LEVELS):
    """Mean quantile score at every level (one value per level)."""
    v = _values(forecasts)
    y = _obs(obs, v.shape[0])
    return np.mean(pinball(np.asarray(levels)[None, :], y[:, None] - v), axis=0)


def point_metrics(forecast_median, forecast_mean, obs):
    """MAE of the medians, RMSE and MBE of the means."""
    med = np.asarray(forecast_median, dtype=float)
    mean = np.asarray(forecast_mean, dtype=float)
    y = np.asarray(obs, dtype=float)
    if not (med.shape == mean.shape == y.shape):
        raise DomainError("median, mean and observation lengths differ")
    err = mean - y
    return (
        float(np.mean(np.abs(med - y))),
        float(np.sqrt(np.mean(err**2))),
        float(np.mean(err)),
    )


def skill_score(score_f, score_ref):
    """Relative improvement ``1 - score_f / score_ref`` over a reference."""
    if score_ref <= 0:
        raise DomainError("reference score must be positive")
    return 1.0 - score_f / score_ref


def _nearest_level(tau, levels):
    return int(np.argmin(np.abs(np.asarray(levels) - tau)))


def interval_diagnostics(forecasts, obs, alpha=2.0 / 52.0, levels=LEVELS):
    """Coverage (PICP) and mean width (PIAW) of the central interval.

    The interval bounds are the grid levels nearest to ``alpha / 2`` and
    ``1 - alpha / 2``; the default ``alpha`` selects the extreme levels
    (nominal coverage 50/52).
    """
    if isinstance(forecasts, QuantileForecast):
        levels = forecasts.levels
    v = _values(forecasts)
    if v.shape[0] == 0:
        raise DomainError("no forecasts")
    y = _obs(obs, v.shape[0])
    lo = _nearest_level(alpha / 2.0, levels)
    hi = _nearest_level(1.0 - alpha / 2.0, levels)
    return _coverage_width(v[:, lo], v[:, hi], y)


def _coverage_width(low, high, y):
    inside = (y >= low) & (y <= high)
    return float(np.mean(inside)), float(np.mean(high - low))


def piaw_vs_picp_curve(forecasts, obs, levels=LEVELS):
    """``(nominal, picp, piaw)`` for every symmetric central interval.

    Intervals pair level ``k`` with level ``K - 1 - k``; listed from the
    narrowest to the widest.
    """
    if isinstance(forecasts, QuantileForecast):
        levels = forecasts.levels
    levels = np.asarray(levels)
    v = _values(forecasts)
    y = _obs(obs, v.shape[0])
    K = levels.size
    out = []
    for lo in range(K // 2 - 1, -1, -1):
        hi = K - 1 - lo
        picp, piaw = _coverage_width(v[:, lo], v[:, hi], y)
        out.append((float(levels[hi] - levels[lo]), picp, piaw))
    return out


def reliability_diagram(forecasts, obs, levels=LEVELS):
    """Observed frequency of ``obs <= q_tau`` for every level ``tau``."""
    if isinstance(forecasts, QuantileForecast):
        levels = forecasts.levels
    v = _values(forecasts)
    y = _obs(obs, v.shape[0])
    freq = np.mean(y[:, None] <= v, axis=0)
    return list(zip(np.asarray(levels, dtype=float).tolist(), freq.tolist()))


def rank_histogram(ensembles, obs, seed=0):
    """Verification rank counts over ``K + 1`` ranks and the reliability index.

    An observation tied with one or more members receives a uniformly
    random rank among the admissible ones (seeded).

    Returns
    -------
    counts : ndarray of int, shape (K + 1,)
    ri : float
    """
    v = _values(ensembles)
    n, K = v.shape
    y = _obs(obs, n)
    below = np.sum(v < y[:, None], axis=1)
    at_or_below = np.sum(v <= y[:, None], axis=1)
    rng = np.random.default_rng(seed)
    rank0 = below + np.floor(rng.random(n) * (at_or_below - below + 1)).astype(int)
    counts = np.bincount(rank0, minlength=K + 1)
    return counts, reliability_index(counts)


def reliability_index(counts):
    """Sum of absolute deviations of rank frequencies from uniformity."""
    counts = np.asarray(counts, dtype=float)
    freq = counts / counts.sum()
    return float(np.sum(np.abs(freq - 1.0 / counts.size)))
