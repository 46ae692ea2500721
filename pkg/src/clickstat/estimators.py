"""Moments, Q parameters, crosstalk calibration and naive photon inversion."""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
import math
import warnings

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.optimize import brentq
from sklearn.base import BaseEstimator

from ._validation import check_click_values, check_count, check_real
from .click_model import coherent_click_distribution
from .crosstalk import _build_table
from .exceptions import DomainError, IllPosedInversionError, OutOfBracketError, UndefinedQError
from .types import ClickDistribution, ClickSample, DetectorConfig

CHI_BRACKET = (0.0, 0.2)
BOOTSTRAP_CHUNK = 250


def click_moments(data):
    """Mean and variance of a distribution (exact) or sample (unbiased)."""
    if isinstance(data, (ClickDistribution, ClickSample)):
        return data.mean(), data.variance()
    return click_moments(ClickDistribution(data))


def _n_pixels(data, n_pixels):
    if n_pixels is None:
        return data.n_pixels
    return check_count(n_pixels, "n_pixels", 1)


def _q_binomial(mean, var, n_pixels):
    scale = 1e-14 * n_pixels
    if mean <= scale or mean >= n_pixels - scale:
        raise UndefinedQError(f"Q_B undefined for mean click number {mean}")
    return var / (mean * (1.0 - mean / n_pixels)) - 1.0


def _q_mandel(mean, var):
    if mean <= 0.0:
        raise UndefinedQError("Q_M undefined for zero mean")
    return var / mean - 1.0


def q_binomial(data, n_pixels=None):
    """Binomial Q parameter ``Var/(<c>(1 - <c>/N)) - 1``.

    Zero for coherent light, negative only for nonclassical light.
    """
    if not isinstance(data, (ClickDistribution, ClickSample)):
        data = ClickDistribution(data)
    mean, var = click_moments(data)
    return _q_binomial(mean, var, _n_pixels(data, n_pixels))


def q_mandel(data):
    """Mandel Q of click numbers, ``Var/<c> - 1``."""
    if not isinstance(data, (ClickDistribution, ClickSample)):
        data = ClickDistribution(data)
    return _q_mandel(*click_moments(data))


@dataclass(frozen=True)
class QReport:
    q_binomial: float
    q_mandel: float
    mean: float
    variance: float
    q_binomial_stderr: float = None
    q_mandel_stderr: float = None
    method: str = "analytic"

    def to_dict(self):
        return {
            "q_binomial": self.q_binomial,
            "q_mandel": self.q_mandel,
            "mean": self.mean,
            "variance": self.variance,
            "q_binomial_stderr": self.q_binomial_stderr,
            "q_mandel_stderr": self.q_mandel_stderr,
            "method": self.method,
        }


def q_report(dist, n_pixels=None):
    """Analytic :class:`QReport` of an exact distribution (no error bars)."""
    if not isinstance(dist, ClickDistribution):
        dist = ClickDistribution(dist)
    mean, var = click_moments(dist)
    n = _n_pixels(dist, n_pixels)
    return QReport(
        q_binomial=_q_binomial(mean, var, n),
        q_mandel=_q_mandel(mean, var),
        mean=mean,
        variance=var,
    )


def _q_rows(counts, n_pixels):
    """Vectorised Q_B and Q_M for each row of a count matrix (nan if undefined)."""
    k = np.arange(counts.shape[1], dtype=float)
    n = counts.sum(axis=1).astype(float)
    mean = counts @ k / n
    ss = counts @ (k * k) - n * mean * mean
    var = np.where(n > 1, ss / np.maximum(n - 1, 1), 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        qb = var / (mean * (1.0 - mean / n_pixels)) - 1.0
        qm = var / mean - 1.0
    bad = (mean <= 0) | (mean >= n_pixels)
    qb[bad] = np.nan
    qm[mean <= 0] = np.nan
    return qb, qm


def bootstrap_counts(sample, n_resamples, seed, n_workers=1):
    """Multinomial bootstrap replicates of a click histogram.

    Replicates come in fixed chunks with their own spawned generators, so the
    result for a given ``seed`` does not depend on ``n_workers``.
    """
    return _multinomial_replicates(sample.frequencies(), sample.n_trials, n_resamples, seed,
                                   n_workers)


def _multinomial_replicates(freqs, n_trials, n_resamples, seed, n_workers=1):
    chunks = [BOOTSTRAP_CHUNK] * (n_resamples // BOOTSTRAP_CHUNK)
    if n_resamples % BOOTSTRAP_CHUNK:
        chunks.append(n_resamples % BOOTSTRAP_CHUNK)
    seeds = np.random.SeedSequence(seed).spawn(len(chunks))

    def draw(job):
        size, ss = job
        rng = np.random.Generator(np.random.Philox(ss))
        return rng.multinomial(n_trials, freqs, size=size)

    jobs = list(zip(chunks, seeds))
    if n_workers == 1:
        parts = [draw(j) for j in jobs]
    else:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            parts = list(pool.map(draw, jobs))
    return np.concatenate(parts)


def _delta_stderr(sample, n_pixels):
    p = sample.frequencies()
    n = sample.n_trials
    k = np.arange(p.size, dtype=float)
    mean = float(p @ k)
    var = float(p @ (k - mean) ** 2)
    denom = mean * (1.0 - mean / n_pixels)
    # gradients with respect to the cell frequencies
    g_var = k * k - 2.0 * mean * k
    g_b = g_var / denom - var * (1.0 - 2.0 * mean / n_pixels) * k / denom**2
    g_m = g_var / mean - var * k / mean**2

    def se(g):
        v = (p @ (g * g) - (p @ g) ** 2) / n
        return math.sqrt(max(v, 0.0))

    return se(g_b), se(g_m)


def q_uncertainty(sample, n_pixels=None, method="bootstrap", n_resamples=2000, seed=None,
                  n_workers=1):
    """Q parameters of an observed sample with standard errors.

    Parameters
    ----------
    sample : ClickSample
    n_pixels : int, optional
        Defaults to the histogram length minus one.
    method : {"bootstrap", "delta"}
        Multinomial bootstrap of the click histogram, or first-order error
        propagation of the multinomial covariance.
    n_resamples : int
    seed : int, optional
    n_workers : int

    Returns
    -------
    QReport
    """
    if not isinstance(sample, ClickSample):
        raise TypeError("sample must be a ClickSample")
    n = _n_pixels(sample, n_pixels)
    mean, var = sample.mean(), sample.variance()
    qb = _q_binomial(mean, var, n)
    qm = _q_mandel(mean, var)
    if method == "bootstrap":
        if sample.n_trials < 100:
            raise DomainError("bootstrap needs at least 100 trials")
        n_resamples = check_count(n_resamples, "n_resamples", 2)
        reps = bootstrap_counts(sample, n_resamples, seed, n_workers)
        rb, rm = _q_rows(reps, n)
        se_b = float(np.nanstd(rb, ddof=1))
        se_m = float(np.nanstd(rm, ddof=1))
    elif method == "delta":
        se_b, se_m = _delta_stderr(sample, n)
    else:
        raise DomainError(f"unknown uncertainty method {method!r}")
    return QReport(qb, qm, mean, var, se_b, se_m, method)


def fitted_q_report(dist, n_trials, n_resamples=2000, seed=None, n_workers=1):
    """Q parameters of a fitted distribution with parametric bootstrap errors.

    The point values are exact for ``dist``; the errors are the spread of Q
    over multinomial samples of ``n_trials`` pulses drawn from ``dist``.
    """
    if not isinstance(dist, ClickDistribution):
        dist = ClickDistribution(dist)
    base = q_report(dist)
    n_trials = check_count(n_trials, "n_trials", 100)
    n_resamples = check_count(n_resamples, "n_resamples", 2)
    reps = _multinomial_replicates(dist.probs, n_trials, n_resamples, seed, n_workers)
    rb, rm = _q_rows(reps, dist.n_pixels)
    return QReport(
        base.q_binomial, base.q_mandel, base.mean, base.variance,
        float(np.nanstd(rb, ddof=1)), float(np.nanstd(rm, ddof=1)), "bootstrap",
    )


def seed_cascade(chi, n_pixels):
    """Total click distribution ``C_m`` (``m = 1..N``) started by one click."""
    chi = check_real(chi, "chi", 0.0, 1.0, high_open=True)
    n = check_count(n_pixels, "n_pixels", 1)
    if chi == 0.0:
        out = np.zeros(n)
        out[0] = 1.0
        return out
    return _build_table(chi, n)[n - 1][1]


def crosstalk_q_limit(chi, n_pixels):
    """Zero-intensity limit of Q for crosstalk strength ``chi``.

    ``sum m^2 C_m / sum m C_m - 1`` where ``C_m`` is the total click
    distribution of a cascade seeded by one click.
    """
    c = seed_cascade(chi, n_pixels)
    m = np.arange(1, c.size + 1, dtype=float)
    return float((m * m) @ c / (m @ c) - 1.0)


def extract_chi(low_intensity_q, n_pixels, xtol=1e-12):
    """Invert :func:`crosstalk_q_limit` for ``chi`` in ``[0, 0.2]``."""
    target = check_real(low_intensity_q, "low_intensity_q", 0.0)
    n = check_count(n_pixels, "n_pixels", 1)
    if target == 0.0:
        return 0.0
    lo, hi = CHI_BRACKET
    top = crosstalk_q_limit(hi, n)
    if target > top:
        raise OutOfBracketError(
            f"Q={target} exceeds the zero-intensity limit {top:.6g} reached at chi={hi}"
        )
    return brentq(lambda c: crosstalk_q_limit(c, n) - target, lo, hi, xtol=xtol, rtol=1e-15)


def _inverse_q_limit(q_values, n_pixels, n_nodes=33):
    """Map many Q values to chi through a monotone interpolant of the limit curve."""
    q = np.asarray(q_values, dtype=float)
    ok = np.isfinite(q)
    out = np.full(q.shape, np.nan)
    if not ok.any():
        return out
    qpos = np.clip(q[ok], 0.0, None)
    lo_chi = extract_chi(qpos.min(), n_pixels)
    hi_chi = extract_chi(min(qpos.max(), crosstalk_q_limit(CHI_BRACKET[1], n_pixels)), n_pixels)
    if hi_chi - lo_chi <= 0.0:
        out[ok] = lo_chi
        return out
    nodes = np.linspace(lo_chi, hi_chi, n_nodes)
    qn = np.array([crosstalk_q_limit(c, n_pixels) for c in nodes])
    out[ok] = PchipInterpolator(qn, nodes)(np.clip(qpos, qn[0], qn[-1]))
    return out


@dataclass(frozen=True)
class ChiEstimate:
    chi: float
    chi_stderr: float
    q_binomial: float
    q_binomial_stderr: float
    n_pixels: int
    negative_q: bool = False

    def to_dict(self):
        return {
            "chi": self.chi,
            "chi_stderr": self.chi_stderr,
            "q_binomial": self.q_binomial,
            "q_binomial_stderr": self.q_binomial_stderr,
            "n_pixels": self.n_pixels,
            "negative_q": self.negative_q,
        }


def calibrate_crosstalk(sample, n_pixels=None, n_resamples=2000, seed=None, n_workers=1):
    """Estimate ``chi`` from a low-intensity click sample.

    The sample's Q_B is taken as the zero-intensity limit and inverted; the
    bootstrap replicates of Q_B are pushed through the same inversion. A
    negative Q_B maps to ``chi = 0`` with ``negative_q`` set.
    """
    n = _n_pixels(sample, n_pixels)
    if sample.n_trials < 100:
        raise DomainError("bootstrap needs at least 100 trials")
    qb = q_binomial(sample, n)
    reps = bootstrap_counts(sample, check_count(n_resamples, "n_resamples", 2), seed, n_workers)
    rb, _ = _q_rows(reps, n)
    chis = _inverse_q_limit(rb, n)
    negative = qb < 0.0
    if negative:
        warnings.warn(
            "negative Q_B at low intensity (nonclassical light or a statistical "
            "fluctuation); reporting chi = 0",
            RuntimeWarning,
            stacklevel=2,
        )
        chi = 0.0
    else:
        chi = extract_chi(qb, n)
    return ChiEstimate(
        chi=chi,
        chi_stderr=float(np.nanstd(chis, ddof=1)),
        q_binomial=qb,
        q_binomial_stderr=float(np.nanstd(rb, ddof=1)),
        n_pixels=n,
        negative_q=negative,
    )


def photon_click_matrix(det, n_max):
    """``M[k, n] = P(k clicks | n photons)``.

    Each photon is detected with probability ``eta`` and lands on a uniformly
    random pixel; Poisson dark events land the same way.
    """
    n_max = check_count(n_max, "n_max")
    N = det.n_pixels
    k = np.arange(N + 1, dtype=float)
    # occupancy left behind by Poisson(nu) dark events
    v = coherent_click_distribution(det.dark_rate, N).probs.copy()
    eta = det.efficiency
    out = np.empty((N + 1, n_max + 1))
    out[:, 0] = v
    for n in range(1, n_max + 1):
        w = (1.0 - eta) * v + eta * (k / N) * v
        w[1:] += eta * ((N - k[1:] + 1.0) / N) * v[:-1]
        v = w
        out[:, n] = v
    return out


@dataclass(frozen=True, eq=False)
class InversionResult:
    """Unconstrained photon-number estimate; entries may be negative."""

    probs: np.ndarray
    total: float
    minimum: float
    condition_number: float
    residual: float

    def to_dict(self):
        return {
            "probs": [float(p) for p in self.probs],
            "total": self.total,
            "minimum": self.minimum,
            "condition_number": self.condition_number,
            "residual": self.residual,
        }


def naive_photon_inversion(clicks, det, n_max=None, rtol=1e-8):
    """Solve ``c = M p`` for photon probabilities by plain least squares.

    No positivity constraint is imposed. Since many photon numbers map onto the
    same click number, the minimum-norm solution develops negative entries
    once the light is bright compared with the pixel count.

    Parameters
    ----------
    clicks : ClickDistribution or ClickSample
    det : DetectorConfig
    n_max : int, optional
        Largest photon number, default ``2 N``.
    rtol : float
        Largest relative residual ``|M p - c| / |c|`` accepted.

    Raises
    ------
    IllPosedInversionError
        If the truncated system cannot reproduce the clicks to ``rtol``.
    """
    if isinstance(clicks, ClickSample):
        c = clicks.frequencies()
    else:
        c = np.asarray(clicks, dtype=float)
    if c.size != det.n_pixels + 1:
        raise DomainError("click vector length does not match the detector")
    n_max = 2 * det.n_pixels if n_max is None else check_count(n_max, "n_max")
    m = photon_click_matrix(det, n_max)
    sol, _, _, sv = np.linalg.lstsq(m, c, rcond=None)
    cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else math.inf
    resid = float(np.linalg.norm(m @ sol - c) / np.linalg.norm(c))
    if resid > rtol:
        raise IllPosedInversionError(
            f"relative residual {resid:.3g} exceeds {rtol:g} (condition number {cond:.3g})",
            condition_number=cond,
            residual=resid,
        )
    return InversionResult(
        probs=sol,
        total=float(sol.sum()),
        minimum=float(sol.min()),
        condition_number=cond,
        residual=resid,
    )


class ClickQEstimator(BaseEstimator):
    """Q parameters of per-pulse click numbers, with standard errors.

    Parameters
    ----------
    n_pixels : int
    method : {"bootstrap", "delta"}
    n_resamples : int
    random_state : int or None
    """

    def __init__(self, n_pixels=100, method="bootstrap", n_resamples=2000, random_state=None):
        self.n_pixels = n_pixels
        self.method = method
        self.n_resamples = n_resamples
        self.random_state = random_state

    def fit(self, X, y=None):
        clicks = check_click_values(X, self.n_pixels)
        return self.fit_sample(ClickSample.from_clicks(clicks, self.n_pixels))

    def fit_sample(self, sample):
        self.sample_ = sample
        self.report_ = q_uncertainty(
            sample, self.n_pixels, self.method, self.n_resamples, self.random_state
        )
        self.q_binomial_ = self.report_.q_binomial
        self.q_mandel_ = self.report_.q_mandel
        return self


class CrosstalkCalibrator(BaseEstimator):
    """Estimate the crosstalk probability from low-intensity click numbers."""

    def __init__(self, n_pixels=100, n_resamples=2000, random_state=None):
        self.n_pixels = n_pixels
        self.n_resamples = n_resamples
        self.random_state = random_state

    def fit(self, X, y=None):
        clicks = check_click_values(X, self.n_pixels)
        return self.fit_sample(ClickSample.from_clicks(clicks, self.n_pixels))

    def fit_sample(self, sample):
        est = calibrate_crosstalk(sample, self.n_pixels, self.n_resamples, self.random_state)
        self.estimate_ = est
        self.chi_ = est.chi
        self.chi_stderr_ = est.chi_stderr
        return self

    def detector(self, **kwargs):
        """A :class:`DetectorConfig` carrying the fitted ``chi``."""
        return DetectorConfig(self.n_pixels, crosstalk=self.chi_, **kwargs)
