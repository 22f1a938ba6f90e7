"""Censored-normal EMOS: CRPS-optimal link coefficients and a boosted variant."""

import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.special import log_ndtr

from . import censored_normal as cn
from .dataset import VAR_FLOOR, EnsembleStats, ensemble_stats
from .errors import DomainError

MIN_CASES = 30
DEFAULT_INIT = (0.0, 0.5, 0.5, -2.0, 0.5)
SIGMA_FLOOR = 1e-8


@dataclass
class EmosCoefficients:
    a0: float
    a1: float
    a2: float
    b0: float
    b1: float
    status: str = "ok"

    def as_array(self):
        return np.array([self.a0, self.a1, self.a2, self.b0, self.b1])

    @classmethod
    def from_array(cls, x, status="ok"):
        return cls(*(float(v) for v in x), status=status)

    def to_dict(self):
        return asdict(self)


def _link(theta, ctrl, mean, var):
    a0, a1, a2, b0, b1 = theta
    mu = a0 + a1 * ctrl + a2 * mean
    sigma = np.exp(b0 + b1 * np.log(np.maximum(var, VAR_FLOOR)))
    return mu, np.maximum(sigma, SIGMA_FLOOR)


def predict_cn_emos(c, s):
    """Censored-normal parameters from ensemble statistics.

    ``mu = a0 + a1 * ctrl + a2 * mean`` and
    ``sigma = exp(b0 + b1 * log(var))`` with the variance floored at 1e-10.
    """
    theta = c.as_array() if isinstance(c, EmosCoefficients) else np.asarray(c, dtype=float)
    mu, sigma = _link(theta, np.asarray(s.ctrl), np.asarray(s.mean), np.asarray(s.var))
    return cn.CensoredNormalParams(mu, sigma)


def _stats_and_obs(train):
    """Accept a Dataset or a pair ``(EnsembleStats, obs)``."""
    if hasattr(train, "members"):
        return ensemble_stats(train), np.asarray(train.obs, dtype=float)
    stats, obs = train
    return stats, np.asarray(obs, dtype=float)


def mean_crps(theta, stats, obs):
    mu, sigma = _link(theta, stats.ctrl, stats.mean, stats.var)
    return float(np.mean(cn.crps_closed_form(cn.CensoredNormalParams(mu, sigma), obs)))


def fit_cn_emos(train, init=None, max_iter=5000, tol=1e-8):
    """Minimum-CRPS estimate of the five EMOS link coefficients.

    Nelder-Mead from ``init``; the result never has a higher training CRPS
    than ``init``.  ``status`` is ``"ok"``, ``"not-converged"`` (best
    coefficients found so far, with a warning) or ``"degenerate"`` when
    every observation is identical.

    Parameters
    ----------
    train : Dataset or tuple of (EnsembleStats, obs)
    init : EmosCoefficients or sequence of 5 floats, optional
    """
    stats, obs = _stats_and_obs(train)
    stats = EnsembleStats(np.asarray(stats.ctrl, float), np.asarray(stats.mean, float),
                          np.asarray(stats.var, float))
    if obs.size < MIN_CASES:
        raise DomainError(f"EMOS needs at least {MIN_CASES} training cases, got {obs.size}")
    if init is None:
        init = DEFAULT_INIT
    x0 = init.as_array() if isinstance(init, EmosCoefficients) else np.asarray(init, float)
    f0 = mean_crps(x0, stats, obs)

    def objective(theta):
        value = mean_crps(theta, stats, obs)
        return value if np.isfinite(value) else 1e10

    res = minimize(objective, x0, method="Nelder-Mead",
                   options={"xatol": tol, "fatol": tol, "maxiter": max_iter,
                            "maxfev": 2 * max_iter})
    best, f_best = res.x, res.fun
    if not f_best <= f0:
        best, f_best = x0, f0
    status = "ok"
    if np.ptp(obs) == 0:
        status = "degenerate"
    elif not res.success:
        status = "not-converged"
        warnings.warn(f"EMOS optimizer did not converge: {res.message}", stacklevel=2)
    return EmosCoefficients.from_array(best, status=status)


def fit_emos_per_lead_time(train, init=None, min_cases=MIN_CASES):
    """One EMOS fit per lead time; sparse slots reuse a pooled fit.

    Returns
    -------
    dict
        ``lead_time -> EmosCoefficients``; fallbacks carry
        ``status == "pooled-fallback"``.
    """
    stats = ensemble_stats(train)
    obs = train.obs
    leads = np.asarray(train.lead_times)
    out = {}
    pooled = None
    for lead in np.unique(leads):
        sel = leads == lead
        if sel.sum() >= min_cases:
            sub = EnsembleStats(stats.ctrl[sel], stats.mean[sel], stats.var[sel])
            out[int(lead)] = fit_cn_emos((sub, obs[sel]), init)
        else:
            if pooled is None:
                pooled = fit_cn_emos((stats, obs), init)
            c = EmosCoefficients(**{**pooled.to_dict(), "status": "pooled-fallback"})
            out[int(lead)] = c
    return out


# ------------------------------------------------------------------ boosting

@dataclass
class BoostingConfig:
    nu: float = 0.05
    max_iter: int = 1000
    patience: int = 20


@dataclass
class BoostedEmosModel:
    """Linear predictors for ``mu`` and ``log sigma`` on standardized covariates.

    ``mu_coeffs`` and ``sigma_coeffs`` hold the intercept first, then one
    weight per covariate.
    """

    mu_coeffs: np.ndarray
    sigma_coeffs: np.ndarray
    covariate_names: list
    center: np.ndarray
    scale: np.ndarray
    iterations_used: int = 0
    status: str = "ok"
    history: dict = field(default_factory=dict)

    def design(self, covariates):
        x = np.atleast_2d(np.asarray(covariates, dtype=float))
        z = (x - self.center) / self.scale
        return np.column_stack([np.ones(len(z)), z])

    def predict(self, covariates):
        Z = self.design(covariates)
        mu = Z @ self.mu_coeffs
        sigma = np.maximum(np.exp(Z @ self.sigma_coeffs), SIGMA_FLOOR)
        return cn.CensoredNormalParams(mu, sigma)

    def selected(self):
        """Names of covariates with a non-zero weight on either side."""
        w = (self.mu_coeffs[1:] != 0) | (self.sigma_coeffs[1:] != 0)
        return [n for n, keep in zip(self.covariate_names, w) if keep]

    def to_dict(self):
        return {
            "mu_coeffs": self.mu_coeffs.tolist(),
            "sigma_coeffs": self.sigma_coeffs.tolist(),
            "covariate_names": list(self.covariate_names),
            "center": self.center.tolist(),
            "scale": self.scale.tolist(),
            "iterations_used": self.iterations_used,
            "status": self.status,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["mu_coeffs"]), np.asarray(d["sigma_coeffs"]),
                   list(d["covariate_names"]), np.asarray(d["center"]),
                   np.asarray(d["scale"]), d["iterations_used"], d["status"])


EMOS_B_COVARIATES = ["ctrl", "mean", "sd"]


def emos_b_covariates(d):
    """Control member, ensemble mean and ensemble standard deviation."""
    s = ensemble_stats(d)
    return np.column_stack([s.ctrl, s.mean, np.sqrt(s.var)])


def censored_nll(mu, log_sigma, y):
    """Per-case negative log-likelihood of the censored normal, and its
    derivatives with respect to ``mu`` and ``log_sigma``."""
    sigma = np.exp(log_sigma)
    z = (y - mu) / sigma
    lo = y <= 0.0
    hi = y >= 1.0
    inner = ~(lo | hi)
    nll = np.empty_like(z)
    d_mu = np.empty_like(z)
    d_ls = np.empty_like(z)

    nll[inner] = log_sigma[inner] + 0.5 * z[inner] ** 2 + 0.5 * math.log(2 * math.pi)
    d_mu[inner] = -z[inner] / sigma[inner]
    d_ls[inner] = 1.0 - z[inner] ** 2

    for mask, arg, sign in ((lo, -mu / sigma, 1.0), (hi, (mu - 1.0) / sigma, -1.0)):
        if mask.any():
            a = arg[mask]
            log_p = log_ndtr(a)
            mills = np.exp(-0.5 * a * a - log_p) / math.sqrt(2 * math.pi)
            nll[mask] = -log_p
            d_mu[mask] = sign * mills / sigma[mask]
            d_ls[mask] = mills * a
    return nll, d_mu, d_ls


def _nll_mean(Z, beta, gamma, y):
    return float(np.mean(censored_nll(Z @ beta, Z @ gamma, y)[0]))


def fit_cn_emos_boosted(train, val, cfg=None, names=None):
    """Coordinate-wise gradient boosting of the censored-normal likelihood.

    Each iteration moves the single coefficient (``mu`` side or
    ``log sigma`` side, intercepts included) whose Fisher-scaled
    loss gradient is largest, by ``nu`` times a scaled gradient step.
    The stopping criterion is the summed validation NLL plus
    ``0.5 * log(n_val)`` per covariate with a non-zero weight; training
    stops at ``max_iter`` or after ``patience`` iterations without a new
    minimum of that criterion, and the best iteration is returned.

    Parameters
    ----------
    train, val : tuple of (covariates, obs)
        ``covariates`` has shape ``(n, p)``.
    """
    cfg = cfg or BoostingConfig()
    X, y = (np.asarray(a, dtype=float) for a in train)
    Xv, yv = (np.asarray(a, dtype=float) for a in val)
    X = X.reshape(len(y), -1)
    Xv = Xv.reshape(len(yv), -1)
    p = X.shape[1]
    names = list(names) if names is not None else [f"x{i}" for i in range(p)]
    center = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0] = 1.0
    model = BoostedEmosModel(np.zeros(p + 1), np.zeros(p + 1), names, center, scale)
    Z, Zv = model.design(X), model.design(Xv)

    beta = np.zeros(p + 1)
    gamma = np.zeros(p + 1)
    beta[0] = y.mean()
    gamma[0] = math.log(max(y.std(), 1e-3))
    zz = np.mean(Z * Z, axis=0)

    penalty = 0.5 * math.log(len(yv)) / len(yv)

    def criterion(b, g):
        df = np.count_nonzero((b[1:] != 0) | (g[1:] != 0))
        return _nll_mean(Zv, b, g, yv) + penalty * df

    best_val = criterion(beta, gamma)
    best = (beta.copy(), gamma.copy(), 0)
    initial_val = best_val
    history = {"criterion": [best_val], "selected": []}
    stale = 0
    it = 0
    for it in range(1, cfg.max_iter + 1):
        mu = Z @ beta
        ls = Z @ gamma
        _, d_mu, d_ls = censored_nll(mu, ls, y)
        g_beta = Z.T @ d_mu / len(y)
        g_gamma = Z.T @ d_ls / len(y)
        # expected information per coefficient: 1/sigma^2 on the mu side, 2 on log sigma
        info_beta = np.mean((Z * Z) / np.exp(2 * ls)[:, None], axis=0)
        info_gamma = 2.0 * zz
        score = np.concatenate([np.abs(g_beta) / np.sqrt(info_beta),
                                np.abs(g_gamma) / np.sqrt(info_gamma)])
        j = int(np.argmax(score))
        if j <= p:
            beta[j] -= cfg.nu * g_beta[j] / info_beta[j]
        else:
            k = j - p - 1
            gamma[k] -= cfg.nu * g_gamma[k] / info_gamma[k]
        history["selected"].append(j)
        v = criterion(beta, gamma)
        history["criterion"].append(v)
        if v < best_val:
            best_val, best, stale = v, (beta.copy(), gamma.copy(), it), 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break

    model.mu_coeffs, model.sigma_coeffs, model.iterations_used = best
    model.history = history
    if best[2] == 0:
        model.status = "intercept-only"
    if not best_val < initial_val:
        model.status = "no-improvement"
    return model
