"""Decay-constant and rate-slope estimation.

Survival counts are modeled as binomial draws with success probability
``A exp(-r t)``; ``A`` is fixed to 1 unless a free amplitude is requested.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import optimize, stats

__all__ = [
    "FitError",
    "RankDeficientError",
    "UnphysicalRateWarning",
    "DecayFit",
    "RateFit",
    "BootstrapResult",
    "FitResult",
    "fit_decay",
    "fit_exponential",
    "subtract_natural",
    "fit_rate_vs_intensity",
    "bootstrap_uncertainty",
]


class FitError(ValueError):
    """The data do not constrain the requested parameter."""


class RankDeficientError(FitError):
    pass


class UnphysicalRateWarning(UserWarning):
    """Measured lifetime exceeds the natural lifetime beyond its uncertainty."""


@dataclass(frozen=True)
class DecayFit:
    tau_meas: float
    sigma_tau: float
    chi2: float
    dof: int
    amplitude: float = 1.0
    sigma_amplitude: float = 0.0
    method: str = "binomial-mle"

    @property
    def rate(self) -> float:
        return 1.0 / self.tau_meas

    @property
    def sigma_rate(self) -> float:
        return self.sigma_tau / self.tau_meas**2

    @property
    def p_value(self) -> float:
        return float(stats.chi2.sf(self.chi2, self.dof)) if self.dof > 0 else float("nan")


@dataclass(frozen=True)
class RateFit:
    """Weighted slope through the origin plus a free-intercept cross-check."""

    slope: float
    sigma_slope: float
    chi2: float
    dof: int
    intercept: float = float("nan")
    sigma_intercept: float = float("nan")
    slope_free: float = float("nan")


@dataclass(frozen=True)
class BootstrapResult:
    sigma: float
    n_used: int
    n_skipped: int


@dataclass
class FitResult:
    """Serializable summary consumed by the CLI."""

    tau_s: float | None = None
    sigma_tau_s: float | None = None
    gamma_sd_hz: float | None = None
    sigma_hz: float | None = None
    slope_si: float | None = None
    sigma_slope_si: float | None = None
    chi2: float | None = None
    dof: int | None = None
    method: str = "binomial-mle"
    seed: int | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def _as_arrays(delays, n_trials, n_survived):
    t = np.asarray(delays, dtype=float)
    n = np.asarray(n_trials, dtype=float)
    k = np.asarray(n_survived, dtype=float)
    if not (t.shape == n.shape == k.shape) or t.ndim != 1:
        raise ValueError("delays, n_trials and n_survived must be 1-d arrays of equal length")
    if np.any(t <= 0):
        raise ValueError("delays must be positive")
    if np.any(k < 0) or np.any(k > n):
        raise ValueError("survivor counts must lie in [0, n_trials]")
    keep = n > 0
    return t[keep], n[keep], k[keep]


def _score(r: float, t, n, k) -> float:
    # d logL / dr for p = exp(-r t); each term decreases in r
    return float(np.sum(-k * t + (n - k) * t / np.expm1(r * t)))


def _rate_mle(t, n, k) -> float:
    # callers guarantee 0 < sum(k) < sum(n), so a sign change exists
    lo, hi = 1e-12 / t.max(), 1.0 / t.max()
    while _score(hi, t, n, k) > 0:
        hi *= 4
    return optimize.brentq(_score, lo, hi, args=(t, n, k), xtol=1e-300, rtol=1e-13, maxiter=500)


def _chi2(p, n, k) -> float:
    var = n * p * (1 - p)
    ok = var > 0
    return float(np.sum((k[ok] - n[ok] * p[ok]) ** 2 / var[ok]))


def _nll(r: float, a: float, t, n, k) -> float:
    p = np.clip(a * np.exp(-r * t), 1e-300, 1 - 1e-16)
    return -float(np.sum(k * np.log(p) + (n - k) * np.log1p(-p)))


def fit_decay(delays, n_trials, n_survived, free_amplitude: bool = False) -> DecayFit:
    """Binomial maximum-likelihood decay constant.

    Parameters
    ----------
    delays, n_trials, n_survived : array_like
        Per-delay times (s), usable trials and D5/2 survivors.  Counts may be
        non-integer (expected values).
    free_amplitude : bool
        Fit ``A exp(-t/tau)`` with ``0 < A <= 1`` instead of fixing ``A = 1``.

    Raises
    ------
    FitError
        Fewer than two usable delays, no exits at all, or no survivors at all.
    """
    t, n, k = _as_arrays(delays, n_trials, n_survived)
    if np.unique(t).size < 2:
        raise FitError("need at least two distinct delays with trials")
    if not np.any(k > 0):
        raise FitError("no survivors at any delay: decay constant not bounded away from 0")
    if np.all(k == n):
        raise FitError("all trials survived: lifetime unbounded")
    if not free_amplitude:
        r = _rate_mle(t, n, k)
        p = np.exp(-r * t)
        info = float(np.sum((n - k) * t**2 * p / (1 - p) ** 2))
        sigma_r = 1.0 / math.sqrt(info)
        return DecayFit(1.0 / r, sigma_r / r**2, _chi2(p, n, k), t.size - 1)

    r0 = _rate_mle(t, n, k)

    def profile(log_r):
        r = math.exp(log_r)
        res = optimize.minimize_scalar(lambda a: _nll(r, a, t, n, k), bounds=(1e-6, 1.0), method="bounded",
                                       options={"xatol": 1e-12})
        return res.fun, res.x

    res = optimize.minimize_scalar(lambda x: profile(x)[0], bracket=(math.log(r0) - 0.5, math.log(r0) + 0.5),
                                   tol=1e-10)
    r = math.exp(res.x)
    a = profile(res.x)[1]
    hess = _numeric_hessian(lambda v: _nll(v[0], v[1], t, n, k), np.array([r, a]))
    try:
        cov = np.linalg.inv(hess)
    except np.linalg.LinAlgError:
        raise FitError("singular information matrix for the free-amplitude fit") from None
    sigma_r = math.sqrt(max(cov[0, 0], 0.0))
    sigma_a = math.sqrt(max(cov[1, 1], 0.0)) if a < 1 - 1e-6 else 0.0
    p = a * np.exp(-r * t)
    return DecayFit(1.0 / r, sigma_r / r**2, _chi2(p, n, k), t.size - 2, a, sigma_a, "binomial-mle-free-amplitude")


def _numeric_hessian(f: Callable, x: np.ndarray) -> np.ndarray:
    h = 1e-4 * np.maximum(np.abs(x), 1e-8)
    dim = x.size
    out = np.empty((dim, dim))
    for i in range(dim):
        for j in range(dim):
            ei = np.zeros(dim)
            ej = np.zeros(dim)
            ei[i] = h[i]
            ej[j] = h[j]
            out[i, j] = (f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)) / (4 * h[i] * h[j])
    return out


def fit_exponential(data, free_amplitude: bool = False) -> DecayFit:
    """Fit a :class:`~caraman.experiment.Dataset` (discarded trials excluded)."""
    t, n, k = data.arrays()
    return fit_decay(t, n, k, free_amplitude)


def subtract_natural(tau_meas: float, sigma_tau: float, tau_nat: float, sigma_nat: float) -> tuple[float, float]:
    """``1/tau_meas - 1/tau_nat`` with first-order error propagation.

    Warns with :class:`UnphysicalRateWarning` when the result is negative by
    more than three combined standard deviations; the value is still returned.
    """
    if not (tau_meas > 0 and tau_nat > 0):
        raise ValueError("lifetimes must be positive")
    if sigma_tau < 0 or sigma_nat < 0:
        raise ValueError("uncertainties must be non-negative")
    gamma = 1.0 / tau_meas - 1.0 / tau_nat
    sigma = math.hypot(sigma_tau / tau_meas**2, sigma_nat / tau_nat**2)
    if gamma < -3 * sigma:
        warnings.warn(
            f"tau_meas={tau_meas:.6g} s exceeds tau_nat={tau_nat:.6g} s beyond 3 sigma; negative rate",
            UnphysicalRateWarning,
            stacklevel=2,
        )
    return gamma, sigma


def fit_rate_vs_intensity(points: Sequence[tuple[float, float, float]]) -> RateFit:
    """Weighted least-squares slope of rate against intensity, intercept fixed at 0.

    Parameters
    ----------
    points : sequence of (intensity W/m^2, rate Hz, sigma Hz)

    Notes
    -----
    With three or more points of distinct intensity a free-intercept fit is
    also reported so a nonzero offset can be spotted.
    """
    arr = np.asarray(points, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 3 or arr.shape[0] == 0:
        raise ValueError("points must be a non-empty list of (intensity, rate, sigma)")
    x, y, s = arr.T
    if np.any(s <= 0):
        raise ValueError("every point needs a positive sigma")
    if arr.shape[0] >= 2 and np.ptp(x) == 0:
        raise RankDeficientError("all intensities are equal; the slope is not identified")
    w = 1.0 / s**2
    sxx = float(np.sum(w * x * x))
    if sxx == 0:
        raise RankDeficientError("all intensities are zero")
    slope = float(np.sum(w * x * y)) / sxx
    sigma = 1.0 / math.sqrt(sxx)
    resid = y - slope * x
    chi2 = float(np.sum(w * resid**2))
    intercept = sigma_int = slope_free = float("nan")
    if np.unique(x).size >= 2:
        design = np.column_stack([x, np.ones_like(x)]) * np.sqrt(w)[:, None]
        coef, *_ = np.linalg.lstsq(design, y * np.sqrt(w), rcond=None)
        cov = np.linalg.inv(design.T @ design)
        slope_free, intercept = float(coef[0]), float(coef[1])
        sigma_int = math.sqrt(cov[1, 1])
    return RateFit(slope, sigma, chi2, int(x.size - 1), intercept, sigma_int, slope_free)


def bootstrap_uncertainty(
    data,
    fit: Callable | None = None,
    resamples: int = 1000,
    seed: int = 0,
) -> BootstrapResult:
    """Nonparametric bootstrap over trials within each delay.

    Each resample redraws every delay's outcome histogram from its observed
    class frequencies.  ``fit`` maps a dataset to a scalar; the default is the
    fitted ``tau_meas``.  Resamples where the fit fails are skipped and counted.
    """
    if resamples < 100:
        raise ValueError("resamples must be at least 100")
    if fit is None:
        def fit(d):
            return fit_exponential(d).tau_meas
    rng = np.random.default_rng(seed)
    values = []
    skipped = 0
    for _ in range(resamples):
        sample = data.resampled(rng)
        try:
            values.append(float(fit(sample)))
        except FitError:
            skipped += 1
    if len(values) < 2:
        raise FitError("fewer than two usable bootstrap resamples")
    return BootstrapResult(float(np.std(values, ddof=1)), len(values), skipped)
