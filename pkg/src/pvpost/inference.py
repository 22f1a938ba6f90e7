"""Significance testing for forecast score series.

Stationary block bootstrap intervals for a mean score, one-sided
Diebold-Mariano tests for pairs of aligned score series, and the
Benjamini-Hochberg step-up procedure to control the false discovery rate
across many parallel tests.
"""

import csv
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.special import ndtr, ndtri

from ._parallel import parallel_map
from .errors import DomainError

MIN_BOOTSTRAP_LENGTH = 10


@dataclass
class ScoreSeries:
    """Time-ordered score samples of one method in one group of cases."""

    values: np.ndarray
    label: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).ravel()
        if self.values.size == 0:
            raise DomainError("score series is empty")
        if not np.all(np.isfinite(self.values)):
            raise DomainError(f"score series {self.label!r} has non-finite values")

    def __len__(self):
        return self.values.size


def _values(s):
    return s.values if isinstance(s, ScoreSeries) else ScoreSeries(s).values


class ConfidenceInterval(NamedTuple):
    lo: float
    hi: float
    mean: float
    sd: float
    degenerate: bool


@dataclass
class TestResult:
    """Outcome of a one-sided Diebold-Mariano test.

    ``p_value`` and ``statistic`` are NaN when the loss differential has
    zero variance; ``degenerate`` is then True.
    """

    statistic: float
    p_value: float
    rejected: bool = False
    pair: tuple = ("", "")
    degenerate: bool = False

    __test__ = False  # keep pytest from collecting this class


def default_block_length(n):
    return max(1, math.ceil(n ** (1.0 / 3.0)))


def bootstrap_means(values, n_samples=2000, mean_block_len=None, seed=0):
    """Means of stationary block bootstrap resamples.

    Blocks start at uniform positions, wrap around the end of the series
    and have geometric lengths with mean ``mean_block_len``.  Block sums
    come from prefix sums, so the cost is proportional to the number of
    blocks rather than the series length.
    """
    x = np.asarray(values, dtype=float)
    n = x.size
    mean_len = default_block_length(n) if mean_block_len is None else float(mean_block_len)
    if mean_len < 1:
        raise DomainError("mean block length must be at least 1")
    rng = np.random.default_rng(seed)
    p = 1.0 / mean_len
    total = x.sum()
    prefix = np.concatenate([[0.0], np.cumsum(np.concatenate([x, x]))])

    n_blocks = int(math.ceil(1.5 * n * p)) + 10
    lengths = rng.geometric(p, size=(n_samples, n_blocks))
    while np.any(lengths.sum(axis=1) < n):
        lengths = np.concatenate([lengths, rng.geometric(p, size=(n_samples, n_blocks))], axis=1)
    starts = rng.integers(0, n, size=lengths.shape)

    # truncate each resample to exactly n observations
    ends = np.cumsum(lengths, axis=1)
    lengths = np.clip(lengths - np.maximum(ends - n, 0), 0, None)

    full, part = np.divmod(lengths, n)
    sums = full * total + prefix[starts + part] - prefix[starts]
    return sums.sum(axis=1) / n


def block_bootstrap_ci(s, n_samples=2000, level=0.95, mean_block_len=None, seed=0):
    """Gaussian confidence interval for the mean score.

    The interval is ``mean +/- z * sd`` where ``sd`` is the standard
    deviation of stationary block bootstrap means.

    Parameters
    ----------
    s : ScoreSeries or array_like
        At least 10 time-ordered values.
    n_samples : int
        Number of bootstrap resamples.
    level : float
        Two-sided confidence level.
    mean_block_len : float, optional
        Mean geometric block length; defaults to ``ceil(n ** (1/3))``.
    seed : int

    Returns
    -------
    ConfidenceInterval
        ``degenerate`` is True for a constant series, whose interval has
        zero width.
    """
    x = _values(s)
    if x.size < MIN_BOOTSTRAP_LENGTH:
        raise DomainError(f"bootstrap needs at least {MIN_BOOTSTRAP_LENGTH} values")
    if not 0 < level < 1:
        raise DomainError("level must lie in (0, 1)")
    mean = float(x.mean())
    if np.ptp(x) == 0:
        return ConfidenceInterval(mean, mean, mean, 0.0, True)
    sd = float(np.std(bootstrap_means(x, n_samples, mean_block_len, seed), ddof=1))
    z = float(ndtri(0.5 + level / 2))
    return ConfidenceInterval(mean - z * sd, mean + z * sd, mean, sd, False)


def long_run_variance(d, lag=None):
    """Autocovariance sum with uniform weights up to ``lag`` (default ``n ** (1/3)``)."""
    d = np.asarray(d, dtype=float)
    n = d.size
    lag = int(math.floor(n ** (1.0 / 3.0))) if lag is None else int(lag)
    e = d - d.mean()
    gamma0 = float(e @ e) / n
    lrv = gamma0
    for k in range(1, min(lag, n - 1) + 1):
        lrv += 2.0 * float(e[k:] @ e[:-k]) / n
    # uniform weights can give a negative sum; fall back to the plain variance
    return lrv if lrv > 0 else gamma0


def dm_test(a, b, alternative="less", lag=None):
    """One-sided Diebold-Mariano test on the loss differential ``d = a - b``.

    With ``alternative="less"`` a small p-value is evidence that ``a`` has
    lower expected score (is better) than ``b``; ``"greater"`` reverses the
    direction.  The statistic is antisymmetric: swapping ``a`` and ``b``
    negates it exactly.
    """
    x, y = _values(a), _values(b)
    if x.shape != y.shape:
        raise DomainError("Diebold-Mariano inputs must have equal length")
    if alternative not in ("less", "greater"):
        raise DomainError("alternative must be 'less' or 'greater'")
    pair = (getattr(a, "label", ""), getattr(b, "label", ""))
    d = x - y
    if np.ptp(d) == 0:
        return TestResult(math.nan, math.nan, False, pair, True)
    stat = float(d.mean() / math.sqrt(long_run_variance(d, lag) / d.size))
    p = float(ndtr(stat)) if alternative == "less" else float(ndtr(-stat))
    return TestResult(stat, p, False, pair, False)


def benjamini_hochberg(p_values, alpha=0.05):
    """Step-up rejection mask controlling the false discovery rate at ``alpha``.

    >>> benjamini_hochberg([0.01, 0.02, 0.03, 0.04, 0.2]).tolist()
    [True, True, True, True, False]
    """
    p = np.asarray(p_values, dtype=float).ravel()
    if p.size == 0:
        return np.zeros(0, dtype=bool)
    if np.any(~np.isfinite(p)) or np.any((p < 0) | (p > 1)):
        raise DomainError("p-values must lie in [0, 1]")
    m = p.size
    order = np.argsort(p, kind="stable")
    below = p[order] <= alpha * np.arange(1, m + 1) / m
    mask = np.zeros(m, dtype=bool)
    if below.any():
        k = int(np.nonzero(below)[0].max())
        mask[order[:k + 1]] = True
    return mask


@dataclass
class DmMatrix:
    """Pairwise rejection proportions; row method beats column method.

    ``proportion[i, j]`` is the fraction of non-degenerate cells where the
    hypothesis "method i is not better than method j" is rejected after
    the Benjamini-Hochberg correction over those cells.
    """

    methods: list
    proportion: np.ndarray
    n_tests: np.ndarray
    n_degenerate: np.ndarray
    n_missing: np.ndarray
    alpha: float = 0.05
    results: dict = field(default_factory=dict, repr=False)


def dm_matrix(methods, alpha=0.05, lag=None, threads=1):
    """Diebold-Mariano rejection proportions for every ordered method pair.

    Parameters
    ----------
    methods : dict
        ``name -> {cell: ScoreSeries}`` where a cell is any hashable key such
        as ``(plant, observation_time)``.  Cells present for only one method
        of a pair are skipped and counted in ``n_missing``.
    alpha : float
        False discovery rate for the correction across cells.
    """
    names = list(methods)
    m = len(names)
    prop = np.zeros((m, m))
    n_tests = np.zeros((m, m), dtype=int)
    n_deg = np.zeros((m, m), dtype=int)
    n_missing = np.zeros((m, m), dtype=int)
    results = {}

    def run_pair(ij):
        i, j = ij
        a, b = methods[names[i]], methods[names[j]]
        cells = sorted(set(a) & set(b), key=repr)
        missing = len(set(a) ^ set(b))
        tests = [dm_test(a[c], b[c], "less", lag) for c in cells]
        return ij, cells, tests, missing

    pairs = [(i, j) for i in range(m) for j in range(m) if i != j]
    for (i, j), cells, tests, missing in parallel_map(run_pair, pairs, threads):
        live = [t for t in tests if not t.degenerate]
        mask = benjamini_hochberg([t.p_value for t in live], alpha)
        for t, r in zip(live, mask):
            t.rejected = bool(r)
        n_tests[i, j] = len(live)
        n_deg[i, j] = len(tests) - len(live)
        n_missing[i, j] = missing
        prop[i, j] = mask.mean() if live else 0.0
        results[(names[i], names[j])] = dict(zip(cells, tests))
    return DmMatrix(names, prop, n_tests, n_deg, n_missing, alpha, results)


def cell_series(scores, plant_ids, times, label=""):
    """Group per-case scores into ``{(plant, time): ScoreSeries}``.

    Input order is preserved inside every cell, so time-ordered input
    gives time-ordered series.
    """
    scores = np.asarray(scores, dtype=float)
    keys = list(zip(np.asarray(plant_ids).tolist(), np.asarray(times).tolist()))
    groups = {}
    for idx, key in enumerate(keys):
        groups.setdefault(key, []).append(idx)
    return {k: ScoreSeries(scores[idx], f"{label}@{k[0]}/{k[1]}") for k, idx in groups.items()}


def write_dm_matrix_csv(dm, path):
    """Proportion matrix with winners as rows and losers as columns."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["winner"] + dm.methods)
        for i, name in enumerate(dm.methods):
            w.writerow([name] + [f"{v:.6f}" for v in dm.proportion[i]])


def write_ci_csv(rows, path):
    """Write ``(method, group, n, ConfidenceInterval)`` rows."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "group", "n", "mean", "lo", "hi", "sd", "degenerate"])
        for method, group, n, ci in rows:
            w.writerow([method, group, n, f"{ci.mean:.10g}", f"{ci.lo:.10g}", f"{ci.hi:.10g}",
                        f"{ci.sd:.10g}", int(ci.degenerate)])
