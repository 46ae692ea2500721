"""Exact click-counting statistics of an ideal (crosstalk-free) detector.

For ``N`` homogeneously illuminated pixels the probability of ``k`` clicks is
the normal-ordered expectation

    c_k = < : C(N,k) exp(-(eta n + nu)/N)^(N-k) (1 - exp(-(eta n + nu)/N))^k : >

Expanding the second factor binomially reduces every ``c_k`` to values of the
generating function ``G(l) = < : exp(-l (eta n + nu)) : >`` at ``l = m/N``.
Coherent light gives an exact binomial and is evaluated directly in log
space; Fock and thermal light go through the alternating sum, which is carried
out in extended precision because its terms grow like ``3**N``.
"""
import math

import mpmath
import numpy as np
from scipy.special import gammaln
from scipy.stats import binom

from ._validation import check_count, check_real
from .exceptions import DomainError
from .types import ClickDistribution, DetectorConfig, PhotonSource, SourceKind

# digits kept beyond the largest term of the alternating sum
# 2**-64 absolute error on each c_k
_GUARD_BITS = 64


def _gf_factor(ctx, source, x):
    """State-dependent factor of the generating function at ``x = l*eta``."""
    if source.kind is SourceKind.COHERENT:
        return ctx.exp(-x * ctx.mpf(source.parameter))
    if source.kind is SourceKind.THERMAL:
        return 1 / (1 + x * ctx.mpf(source.parameter))
    return (1 - x) ** int(source.parameter)


def normal_ordered_gf(source, lam, nu_term=0.0, efficiency=1.0):
    """Evaluate ``< : exp(-lam*eta*n - nu_term) : >`` for ``source``.

    Parameters
    ----------
    source : PhotonSource
    lam : float
        Scale in [0, 1]; ``lam * efficiency`` must not exceed 1.
    nu_term : float
        Nonnegative additive dark-count term in the exponent.
    efficiency : float
        Detection efficiency ``eta``.

    Returns
    -------
    float in [0, 1]
    """
    lam = check_real(lam, "lambda", 0.0, 1.0)
    nu_term = check_real(nu_term, "nu_term", 0.0)
    efficiency = check_real(efficiency, "efficiency", 0.0, 1.0)
    x = lam * efficiency
    if x > 1.0:
        raise DomainError(f"lambda*eta = {x} exceeds 1")
    if source.kind is SourceKind.COHERENT:
        value = math.exp(-nu_term - x * source.parameter)
    elif source.kind is SourceKind.THERMAL:
        value = math.exp(-nu_term) / (1.0 + x * source.parameter)
    else:
        value = math.exp(-nu_term) * (1.0 - x) ** int(source.parameter)
    return value


def log_binomial_coefficients(n):
    """``log C(n, k)`` for ``k = 0..n``."""
    k = np.arange(n + 1, dtype=float)
    return gammaln(n + 1.0) - gammaln(k + 1.0) - gammaln(n - k + 1.0)


def coherent_click_distribution(mean_photons, n_pixels):
    """Binomial click statistics of coherent light with effective mean ``mean_photons``.

    A single pixel clicks with probability ``1 - exp(-mean_photons/N)``.
    """
    mu = check_real(mean_photons, "mean_photons", 0.0)
    n = check_count(n_pixels, "n_pixels", 1)
    if mu == 0.0:
        return ClickDistribution.delta(0, n)
    # scipy's binomial pmf keeps 1e-16 relative accuracy out to very large N,
    # which summing exp(log pmf) does not
    return ClickDistribution(binom.pmf(np.arange(n + 1), n, -math.expm1(-mu / n)))


def _alternating_sum(source, det):
    n = det.n_pixels
    eta = det.efficiency
    nu = det.dark_rate
    # G is rounded to integers in units of 2**-bits and the sum is then exact.
    # Each c_k picks up at most C(N,k) 2^k / 2 <= 3^N / 2 units of rounding.
    bits = int(math.ceil(n * math.log2(3.0))) + _GUARD_BITS
    ctx = mpmath.MPContext()
    ctx.prec = bits + 64
    unit = ctx.ldexp(1, bits)
    g = []
    for m in range(n + 1):
        lam = ctx.mpf(m) / n
        val = ctx.exp(-lam * ctx.mpf(nu)) * _gf_factor(ctx, source, lam * ctx.mpf(eta))
        g.append(int(ctx.nint(val * unit)))
    scale = 1 << bits
    probs = np.empty(n + 1)
    for k in range(n + 1):
        acc = 0
        for j in range(k + 1):
            term = math.comb(k, j) * g[n - k + j]
            acc += -term if j % 2 else term
        probs[k] = math.comb(n, k) * acc / scale
    # round-off can leave entries like -1e-300; anything larger would be a bug
    if probs.min() < -1e-12:
        raise ArithmeticError("alternating click sum lost precision")
    return np.clip(probs, 0.0, None)


def click_distribution(source, det):
    """Click statistics of ``source`` on an ideal detector.

    Dark counts enter through the generating function. ``det.crosstalk`` and
    ``det.preclick_prob`` are ignored here; see
    :func:`clickstat.crosstalk.click_distribution_with_crosstalk`.
    """
    if not isinstance(det, DetectorConfig):
        raise TypeError("det must be a DetectorConfig")
    if not isinstance(source, PhotonSource):
        raise TypeError("source must be a PhotonSource")
    if source.kind is SourceKind.COHERENT:
        return coherent_click_distribution(
            det.efficiency * source.parameter + det.dark_rate, det.n_pixels
        )
    return ClickDistribution(_alternating_sum(source, det))


def coherent_mean_clicks(mean_photons, det):
    """``N (1 - exp(-(eta mu + nu)/N))``."""
    n = det.n_pixels
    return -n * math.expm1(-(det.efficiency * mean_photons + det.dark_rate) / n)
