"""Shared fixtures and independent oracles for the test suite."""

import mpmath
import numpy as np
import pytest
from scipy.integrate import trapezoid
from scipy.special import ndtr

from pvpost.dataset import SynthConfig, daytime_filter, synth_generate

mpmath.mp.dps = 30


def mp_phi(x):
    """Standard normal CDF in 30-digit arithmetic."""
    return float(mpmath.ncdf(x))


def crps_integral(mu, sigma, y, panels=200_000):
    """Trapezoidal integral of (F(t) - 1{t >= y})^2 for the censored normal.

    The integrand jumps at 0, y and 1, so the rule is applied separately on
    each smooth piece; outside [0, 1] the integrand is either 0 or the
    squared point-mass complement, which is zero as well.
    """
    total = 0.0
    for a, b in ((0.0, y), (y, 1.0)):
        if b <= a:
            continue
        t = np.linspace(a, b, panels + 1)
        F = ndtr((t - mu) / sigma)
        g = (F - (1.0 if a >= y else 0.0)) ** 2
        total += trapezoid(g, t)
    return total


def dataset(days=30, seed=0, **kw):
    cfg = SynthConfig(days=days, **kw)
    return synth_generate(cfg, seed=seed)


@pytest.fixture(scope="session")
def small_day_data():
    """About 1900 daytime cases of a mildly corrupted ensemble."""
    return daytime_filter(dataset(days=30, seed=11, bias=0.05, deflation=0.7))


# criterion number -> (title, "PASS" | "FAIL", detail); filled by test_acceptance
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        title, verdict, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"{verdict} criterion {number:2d}: {title} [{detail}]")
