"""Cascaded optical crosstalk.

One crosstalk generation seeded by ``n_previous`` freshly fired pixels fires
each of ``n_available`` idle pixels independently with probability
``1 - (1 - chi)**n_previous``, so its size is binomial. Fired pixels seed the
next generation until a generation is empty.

The total cascade size ``f(k, N_A, N_P)`` obeys

    f(0, N_A, N_P) = C_0(N_A, N_P)
    f(k, N_A, N_P) = sum_{j=1..k} C_j(N_A, N_P) f(k - j, N_A - j, j)

which sums over ordered generation sizes (compositions of ``k``). The kernel
below tabulates it for every reachable state of an ``N``-pixel detector.
"""
import functools
import math
import threading

import numpy as np

from ._validation import check_count, check_probability_vector, check_real
from .click_model import click_distribution, log_binomial_coefficients
from .exceptions import DomainError, ModelInconsistencyError
from .types import ClickDistribution, DetectorConfig


def crosstalk_generation(k, n_available, n_previous, chi):
    """Probability that one generation adds exactly ``k`` crosstalk clicks."""
    n_available = check_count(n_available, "n_available")
    n_previous = check_count(n_previous, "n_previous")
    k = check_count(k, "k")
    chi = check_real(chi, "chi", 0.0, 1.0, high_open=True)
    if k > n_available:
        raise DomainError(f"k={k} exceeds the {n_available} available pixels")
    miss = (1.0 - chi) ** n_previous
    return math.comb(n_available, k) * (1.0 - miss) ** k * miss ** (n_available - k)


def _generation_pmf(n_available, n_previous, chi):
    """``C_j(n_available, n_previous)`` as a matrix over (n_previous, j)."""
    j = np.arange(n_available + 1, dtype=float)
    log_miss = n_previous * math.log1p(-chi)
    with np.errstate(divide="ignore"):
        log_hit = np.log(-np.expm1(log_miss))
    with np.errstate(invalid="ignore"):
        lpmf = (
            log_binomial_coefficients(n_available)[None, :]
            + j[None, :] * log_hit[:, None]
            + (n_available - j)[None, :] * log_miss[:, None]
        )
    # j = 0 column: 0 * log(0) must count as 0
    lpmf[:, 0] = n_available * log_miss
    return np.exp(lpmf)


def _build_table(chi, n_pixels):
    levels = []
    n_prev_all = np.arange(n_pixels + 1, dtype=float)
    for n_avail in range(n_pixels + 1):
        # reachable previous-generation sizes are bounded by the fired pixels
        pmf = _generation_pmf(n_avail, n_prev_all[: n_pixels - n_avail + 1], chi)
        shift = np.zeros((n_avail + 1, n_avail + 1))
        shift[0, 0] = 1.0
        for j in range(1, n_avail + 1):
            shift[j, j:] = levels[n_avail - j][j]
        levels.append(pmf @ shift)
    return levels


class CrosstalkKernel:
    """Memo table of cascade-size distributions for fixed ``chi`` and ``N``.

    The table is filled on first access under a lock and is read-only
    afterwards, so one kernel can be shared between threads.
    """

    def __init__(self, chi, n_pixels):
        self.chi = check_real(chi, "chi", 0.0, 1.0, high_open=True)
        self.n_pixels = check_count(n_pixels, "n_pixels", 1)
        self._levels = None
        self._lock = threading.Lock()

    @property
    def table(self):
        """List indexed by ``n_available``; entry ``[n_previous, k]``."""
        if self._levels is None:
            with self._lock:
                if self._levels is None:
                    levels = _build_table(self.chi, self.n_pixels)
                    for level in levels:
                        level.setflags(write=False)
                    self._levels = levels
        return self._levels

    def probability(self, k, n_available, n_previous):
        """``f(k, n_available, n_previous)``."""
        if n_available + n_previous > self.n_pixels:
            raise DomainError("state not reachable on this detector")
        if k > n_available:
            return 0.0
        return float(self.table[n_available][n_previous, k])

    def cascade(self, initial_clicks):
        """Distribution of added clicks, indexed ``0 .. N - initial_clicks``."""
        a0 = check_count(initial_clicks, "initial_clicks")
        if a0 > self.n_pixels:
            raise DomainError(f"initial_clicks={a0} exceeds N={self.n_pixels}")
        return self.table[self.n_pixels - a0][a0]


@functools.lru_cache(maxsize=16)
def get_kernel(chi, n_pixels):
    return CrosstalkKernel(chi, n_pixels)


def cascade_distribution(initial_clicks, det):
    """Distribution of the number of clicks added by crosstalk to ``initial_clicks``.

    Returns
    -------
    ndarray of length ``N - initial_clicks + 1``
    """
    a0 = check_count(initial_clicks, "initial_clicks")
    if a0 > det.n_pixels:
        raise DomainError(f"initial_clicks={a0} exceeds N={det.n_pixels}")
    if det.crosstalk == 0.0:
        out = np.zeros(det.n_pixels - a0 + 1)
        out[0] = 1.0
        return out
    return get_kernel(det.crosstalk, det.n_pixels).cascade(a0).copy()


def convolve_noise(light, noise, atol=1e-12):
    """Add independent noise clicks: ``c_k = sum_i light_i noise_{k-i}``.

    Mass landing beyond ``N`` raises :class:`ModelInconsistencyError`.
    """
    light_p = np.asarray(light, dtype=float)
    light_p = check_probability_vector(light_p, "light")
    noise_p = check_probability_vector(np.asarray(noise, dtype=float), "noise")
    n = light_p.size - 1
    full = np.convolve(light_p, noise_p)
    overflow = full[n + 1:].sum()
    if overflow > atol:
        raise ModelInconsistencyError(
            f"noise pushes probability {overflow:.3g} beyond {n} pixels"
        )
    return ClickDistribution(full[: n + 1])


def seeded_crosstalk(light, chi):
    """Apply the crosstalk cascade to every first-stage click of ``light``."""
    light_p = np.asarray(light, dtype=float)
    n = light_p.size - 1
    if chi == 0.0:
        return ClickDistribution(light_p)
    kernel = get_kernel(float(chi), n)
    out = np.zeros(n + 1)
    out[0] = light_p[0]
    for k in range(1, n + 1):
        if light_p[k] != 0.0:
            out[k:] += light_p[k] * kernel.cascade(k)
    return ClickDistribution(out)


def click_distribution_with_crosstalk(source, det):
    """Click statistics of ``source`` including cascaded crosstalk.

    ``c_m = sum_{k=1..m} c_k(light) f(m - k | k seeds)`` and ``c_0`` is the
    light-only zero-click probability.
    """
    if not isinstance(det, DetectorConfig):
        raise TypeError("det must be a DetectorConfig")
    return seeded_crosstalk(click_distribution(source, det), det.crosstalk)
