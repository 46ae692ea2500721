"""Decomposition of pulse-area histograms into click statistics.

The area of a pulse with ``i`` clicks is normal with mean ``x0 + i*delta_x``
and variance ``sigma0**2 + i*sigma1**2`` (electronic noise plus ``i``
independent single-click gains). A histogram is therefore a mixture of
``N + 1`` Gaussians whose weights are proportional to the click
probabilities.

Fitting alternates a nonnegative least-squares solve for the weights with a
damped Gauss-Newton step for the four shape parameters. Internally all areas
are measured in units of the initial peak spacing, which makes the fit
equivariant under rescaling of the area axis.
"""
from dataclasses import dataclass, field, replace
import math

import numpy as np
from scipy.optimize import nnls
from scipy.signal import find_peaks
from scipy.special import ndtr
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_areas, check_count
from .exceptions import DegenerateFitError, DomainError, FitError, InitializationError
from .types import AuPParams, ClickDistribution

SHAPE_PARAMS = ("delta_x", "x0", "sigma0", "sigma1")
# typical single-click width relative to the gain
SIGMA1_RATIO = 0.0037
SIGMA0_RATIO = 0.18
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


@dataclass(frozen=True, eq=False)
class AuPHistogram:
    """Binned pulse areas."""

    bin_edges: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        edges = np.asarray(self.bin_edges, dtype=float)
        counts = np.asarray(self.counts)
        if edges.ndim != 1 or edges.size < 2 or not np.all(np.diff(edges) > 0):
            raise DomainError("bin edges must be strictly increasing")
        if counts.shape != (edges.size - 1,):
            raise DomainError("need one count per bin")
        if counts.size and (counts.min() < 0 or not np.all(np.equal(np.mod(counts, 1), 0))):
            raise DomainError("counts must be nonnegative integers")
        object.__setattr__(self, "bin_edges", edges)
        object.__setattr__(self, "counts", counts.astype(np.int64))

    @classmethod
    def from_samples(cls, areas, bins=None):
        """Histogram ``areas``; ``bins=None`` uses the Freedman-Diaconis rule."""
        areas = np.asarray(areas, dtype=float)
        if areas.size == 0:
            raise InitializationError("no pulse areas to histogram")
        if not np.all(np.isfinite(areas)):
            raise DomainError("pulse areas must be finite")
        if bins is None:
            bins = "fd"
        if np.ptp(areas) == 0.0:
            bins = np.array([areas[0] - 0.5, areas[0] + 0.5])
        counts, edges = np.histogram(areas, bins=bins)
        return cls(edges, counts)

    @property
    def n_samples(self):
        return int(self.counts.sum())

    @property
    def centers(self):
        return 0.5 * (self.bin_edges[1:] + self.bin_edges[:-1])

    @property
    def widths(self):
        return np.diff(self.bin_edges)

    def scaled(self, factor):
        return AuPHistogram(self.bin_edges * factor, self.counts)


@dataclass(frozen=True, eq=False)
class GaussianMixtureFit:
    """Fitted pulse-area mixture.

    ``amplitudes[i]`` is the (expected) number of pulses with ``i`` clicks;
    the component densities are normalised Gaussians.
    """

    delta_x: float
    x0: float
    sigma0: float
    sigma1: float
    amplitudes: np.ndarray
    residual_norm: float = math.nan
    converged: bool = False
    n_iterations: int = 0
    residual_history: tuple = field(default=(), repr=False)

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=float)
        if self.delta_x <= 0 or self.sigma0 <= 0 or self.sigma1 < 0:
            raise DomainError("need delta_x > 0, sigma0 > 0 and sigma1 >= 0")
        if amps.ndim != 1 or amps.size < 1 or amps.min() < 0:
            raise DomainError("amplitudes must be a nonnegative vector")
        object.__setattr__(self, "amplitudes", amps)

    @property
    def n_pixels(self):
        return self.amplitudes.size - 1

    @property
    def params(self):
        return AuPParams(self.delta_x, self.sigma0, self.sigma1, self.x0)

    def centers(self):
        return self.x0 + np.arange(self.amplitudes.size) * self.delta_x

    def variances(self):
        return self.sigma0**2 + np.arange(self.amplitudes.size) * self.sigma1**2

    def peak_overlap(self):
        """Fraction of each peak lying beyond the midpoints to its neighbours."""
        return 2.0 * ndtr(-0.5 * self.delta_x / np.sqrt(self.variances()))

    def to_dict(self):
        return {
            "delta_x": self.delta_x,
            "x0": self.x0,
            "sigma0": self.sigma0,
            "sigma1": self.sigma1,
            "amplitudes": [float(a) for a in self.amplitudes],
            "residual_norm": self.residual_norm,
            "converged": bool(self.converged),
            "n_iterations": int(self.n_iterations),
            "peak_overlap": [float(v) for v in self.peak_overlap()],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            delta_x=d["delta_x"],
            x0=d["x0"],
            sigma0=d["sigma0"],
            sigma1=d["sigma1"],
            amplitudes=np.asarray(d["amplitudes"], dtype=float),
            residual_norm=d.get("residual_norm", math.nan),
            converged=d.get("converged", False),
            n_iterations=d.get("n_iterations", 0),
        )


def mixture_model(x, fit):
    """Mixture density at ``x`` (weights ``fit.amplitudes``)."""
    x = np.asarray(x, dtype=float)
    mu = fit.centers()
    sd = np.sqrt(fit.variances())
    z = (x[..., None] - mu) / sd
    return (np.exp(-0.5 * z * z) * _INV_SQRT_2PI / sd) @ fit.amplitudes


def clicks_from_fit(fit):
    """``c_k = A_k / sum_i A_i``."""
    total = fit.amplitudes.sum()
    if not total > 0.0:
        raise DegenerateFitError("all fitted amplitudes are zero")
    return ClickDistribution(fit.amplitudes / total)


# --------------------------------------------------------------------------
# initialisation


def _peak_positions(hist):
    counts = hist.counts.astype(float)
    peaks, _ = find_peaks(np.r_[0.0, counts, 0.0], prominence=4.0 * np.sqrt(counts.max()) ** 0.5 + 3.0)
    peaks = peaks - 1
    peaks = peaks[(counts[peaks] >= 5.0)]
    centers = hist.centers
    pos = centers[peaks].astype(float)
    # parabolic refinement on interior peaks
    w = hist.widths
    for n, i in enumerate(peaks):
        if 0 < i < counts.size - 1:
            a, b, c = counts[i - 1], counts[i], counts[i + 1]
            denom = a - 2.0 * b + c
            if denom < 0:
                pos[n] += 0.5 * (a - c) / denom * w[i]
    return peaks, pos


def _mass_near(hist, centers, half_width):
    cum = np.r_[0.0, np.cumsum(hist.counts)]
    lo = np.interp(centers - half_width, hist.bin_edges, cum)
    hi = np.interp(centers + half_width, hist.bin_edges, cum)
    return np.clip(hi - lo, 0.0, None)


def _local_sd(hist, center, half_width):
    c = hist.centers
    sel = np.abs(c - center) <= half_width
    w = hist.counts[sel].astype(float)
    if w.sum() < 3:
        return math.nan
    m = np.average(c[sel], weights=w)
    var = np.average((c[sel] - m) ** 2, weights=w) - np.mean(hist.widths[sel]) ** 2 / 12.0
    return math.sqrt(var) if var > 0 else math.nan


def initialize_fit(hist, n_pixels, delta_x=None, x0=0.0):
    """Starting point for :func:`fit_mixture`.

    The peak spacing comes from a straight-line fit of detected peak positions
    against their order; peaks are then numbered so that click ``0`` sits at
    ``x0``. With a single detectable peak the histogram is taken to show the
    zero-click peak only, and the spacing defaults to ``sigma0 / 0.18`` unless
    ``delta_x`` is given.

    Raises
    ------
    InitializationError
        If the histogram is empty or shows no regular peak comb. Supplying
        ``delta_x`` avoids the spacing estimate.
    """
    n_pixels = check_count(n_pixels, "n_pixels", 1)
    if hist.n_samples == 0:
        raise InitializationError("empty histogram; nothing to fit")
    peaks, pos = _peak_positions(hist)
    if peaks.size == 0:
        raise InitializationError("no peaks found; supply delta_x manually")
    if delta_x is not None and delta_x <= 0:
        raise DomainError("delta_x must be positive")

    if peaks.size == 1 and delta_x is None:
        x0 = float(pos[0])
        sd = _local_sd(hist, x0, 3.0 * np.mean(hist.widths) + np.ptp(hist.bin_edges) / 2)
        if not sd > 0:
            sd = float(np.mean(hist.widths))
        delta_x = sd / SIGMA0_RATIO
        sigma0 = sd
    else:
        if delta_x is None:
            gaps = np.diff(pos)
            step = np.median(gaps)
            order = np.r_[0.0, np.cumsum(np.round(gaps / step))]
            if np.any(order[1:] == order[:-1]):
                raise InitializationError("irregular peak spacing; supply delta_x manually")
            slope, icept = np.polyfit(order, pos, 1)
            scatter = np.abs(pos - (icept + slope * order))
            if slope <= 0 or scatter.max() > 0.25 * slope:
                raise InitializationError("no periodic peak structure; supply delta_x manually")
            delta_x = float(slope)
        index = np.round((pos - x0) / delta_x)
        if index.min() < 0:
            raise InitializationError("peaks below the zero-click offset; check x0")
        if pos.size >= 2 and np.unique(index).size == index.size:
            slope, icept = np.polyfit(index, pos, 1)
            delta_x, x0 = float(slope), float(icept)
        best = int(np.argmax(hist.counts[peaks]))
        sd = _local_sd(hist, pos[best], 0.5 * delta_x)
        i_best = index[best]
        s1 = SIGMA1_RATIO * delta_x
        if sd > 0 and sd**2 > i_best * s1**2:
            sigma0 = math.sqrt(sd**2 - i_best * s1**2)
        else:
            sigma0 = SIGMA0_RATIO * delta_x
    sigma0 = max(sigma0, 1e-3 * delta_x)
    centers = x0 + np.arange(n_pixels + 1) * delta_x
    amps = _mass_near(hist, centers, 0.5 * delta_x)
    return GaussianMixtureFit(
        delta_x=float(delta_x),
        x0=float(x0),
        sigma0=float(sigma0),
        sigma1=float(SIGMA1_RATIO * delta_x),
        amplitudes=amps,
    )


# --------------------------------------------------------------------------
# fitting


def _pad(edges, counts, lo, hi):
    width = edges[1] - edges[0], edges[-1] - edges[-2]
    n_lo = max(int(math.ceil((edges[0] - lo) / width[0])), 0)
    n_hi = max(int(math.ceil((hi - edges[-1]) / width[1])), 0)
    edges = np.r_[edges[0] - width[0] * np.arange(n_lo, 0, -1), edges,
                  edges[-1] + width[1] * np.arange(1, n_hi + 1)]
    return edges, np.r_[np.zeros(n_lo), counts, np.zeros(n_hi)]


class _Problem:
    """Histogram in units of ``scale`` with fixed residual weights."""

    def __init__(self, hist, scale, weighting, span=None):
        edges = hist.bin_edges / scale
        counts = hist.counts.astype(float)
        if span is not None:
            # empty bins out to the extreme peaks keep every amplitude identifiable
            edges, counts = _pad(edges, counts, *span)
        self.edges = edges
        self.y = counts
        if weighting == "neyman":
            self.w = 1.0 / np.sqrt(np.maximum(self.y, 1.0))
        elif weighting == "uniform":
            self.w = np.ones_like(self.y)
        else:
            raise DomainError(f"unknown weighting {weighting!r}")

    def basis(self, theta, n_comp, jac=False):
        """Per-bin component masses and, optionally, their shape derivatives."""
        dx, x0, v0, v1 = theta
        i = np.arange(n_comp, dtype=float)
        mu = x0 + i * dx
        s = np.sqrt(v0 + i * v1)
        zl = (self.edges[:-1, None] - mu) / s
        zh = (self.edges[1:, None] - mu) / s
        # take the difference on whichever tail keeps precision
        upper = zl > 0
        mass = np.where(upper, ndtr(-zl) - ndtr(-zh), ndtr(zh) - ndtr(zl))
        if not jac:
            return mass
        pl = np.exp(-0.5 * zl * zl) * _INV_SQRT_2PI
        ph = np.exp(-0.5 * zh * zh) * _INV_SQRT_2PI
        d_mu = (pl - ph) / s
        d_s = (zl * pl - zh * ph) / s
        d_v = d_s / (2.0 * s)
        derivs = (d_mu * i, d_mu, d_v, d_v * i)
        return mass, derivs

    def residual(self, theta, amps):
        return self.w * (self.y - self.basis(theta, amps.size) @ amps)

    def nnls(self, theta, n_comp):
        b = self.basis(theta, n_comp) * self.w[:, None]
        amps, rnorm = nnls(b, self.w * self.y, maxiter=50 * n_comp)
        return amps, rnorm

    def jacobian(self, theta, amps, free):
        _, derivs = self.basis(theta, amps.size, jac=True)
        cols = [-(self.w * (d @ amps)) for d, f in zip(derivs, free) if f]
        return np.column_stack(cols)


def _theta_from_fit(fit, scale):
    return np.array(
        [fit.delta_x / scale, fit.x0 / scale, (fit.sigma0 / scale) ** 2, (fit.sigma1 / scale) ** 2]
    )


def _fit_from_theta(theta, amps, scale, **extra):
    dx, x0, v0, v1 = theta
    return GaussianMixtureFit(
        delta_x=dx * scale,
        x0=x0 * scale,
        sigma0=math.sqrt(v0) * scale,
        sigma1=math.sqrt(max(v1, 0.0)) * scale,
        amplitudes=amps,
        **extra,
    )


def _valid(theta):
    return theta[0] > 0 and theta[2] > 0 and np.all(np.isfinite(theta))


def _iterate(prob, theta, free, n_comp, max_iter, tol, max_rejects, scale):
    amps, rnorm = prob.nnls(theta, n_comp)
    history = [rnorm]
    lam = 1e-3
    it = 0
    for it in range(1, max_iter + 1):
        active = free.copy()
        if active.any():
            r = prob.residual(theta, amps)
            cost = r @ r
            jac = prob.jacobian(theta, amps, active)
            grad = jac.T @ r
            # sigma1**2 resting on its bound and pushed outward stays put this step
            if active[3] and theta[3] == 0.0 and grad[-1] > 0.0:
                active[3] = False
                jac, grad = jac[:, :-1], grad[:-1]
            hess = jac.T @ jac
            diag = np.diag(hess).copy()
            diag[diag <= 0] = max(diag.max(), 1.0) * 1e-12
            gn = np.linalg.lstsq(jac, -r, rcond=None)[0] if active.any() else grad
            predicted = -(2 * grad @ gn + gn @ hess @ gn)
            if active.any() and predicted > tol * cost:
                rejects = 0
                while True:
                    step = np.linalg.solve(hess + lam * np.diag(diag), -grad)
                    trial = theta.copy()
                    trial[active] += step
                    trial[3] = max(trial[3], 0.0)
                    if _valid(trial):
                        rt = prob.residual(trial, amps)
                        if rt @ rt < cost:
                            theta = trial
                            lam = max(lam / 10.0, 1e-12)
                            break
                    rejects += 1
                    lam *= 10.0
                    if rejects >= max_rejects:
                        best = _fit_from_theta(
                            theta, amps, scale, residual_norm=history[-1],
                            converged=False, n_iterations=it, residual_history=tuple(history),
                        )
                        raise FitError(
                            f"residual increased for {max_rejects} consecutive damped steps",
                            best=best,
                        )
        before = float(np.linalg.norm(prob.residual(theta, amps)))
        new_amps, rnorm = prob.nnls(theta, n_comp)
        # nnls is optimal for the new shape; it can only lose to the old amplitudes by rounding
        if rnorm <= before:
            amps = new_amps
        else:
            rnorm = before
        change = abs(history[-1] - rnorm) / max(history[-1], 1e-300)
        history.append(rnorm)
        if change < tol:
            return theta, amps, history, True, it
    return theta, amps, history, False, it


def fit_mixture(hist, init, max_iter=200, tol=1e-8, fix=(), weighting="pearson", max_rejects=5):
    """Fit the Gaussian mixture to ``hist`` starting from ``init``.

    Each iteration takes one damped Gauss-Newton step on the shape parameters
    ``(delta_x, x0, sigma0**2, sigma1**2)`` with the amplitudes held, then
    re-solves the amplitudes by nonnegative least squares. The model is always
    integrated over each bin, so coarse binning adds no width bias. Iteration stops
    when the weighted residual norm changes by less than ``tol`` (relative).

    Parameters
    ----------
    hist : AuPHistogram
        Must contain every recorded pulse; the fit treats the area range
        beyond the outer bins as empty.
    init : GaussianMixtureFit
        Starting point, e.g. from :func:`initialize_fit`.
    max_iter : int
        Iteration cap (per pass for ``"pearson"``).
    tol : float
    fix : iterable of str
        Shape parameters to hold at their initial values.
    weighting : {"pearson", "neyman", "uniform"}
        ``"neyman"`` weights residuals by ``1/sqrt(max(count, 1))``, which
        biases sparse tails low. ``"pearson"`` refits once with weights
        ``1/sqrt(max(model, 1))`` frozen from the Neyman solution.
        ``"uniform"`` uses unit weights.
    max_rejects : int
        Consecutive uphill damped steps tolerated before giving up.

    Returns
    -------
    GaussianMixtureFit

    Raises
    ------
    FitError
        If the residual keeps increasing for ``max_rejects`` damped steps
        while the linearised model still predicts progress. ``err.best`` holds
        the best fit reached.
    """
    fix = set(fix)
    unknown = fix - set(SHAPE_PARAMS)
    if unknown:
        raise DomainError(f"unknown parameters to fix: {sorted(unknown)}")
    if weighting not in ("pearson", "neyman", "uniform"):
        raise DomainError(f"unknown weighting {weighting!r}")
    free = np.array([p not in fix for p in SHAPE_PARAMS])
    scale = init.delta_x
    n_comp = init.amplitudes.size
    theta = _theta_from_fit(init, scale)
    sd_max = math.sqrt(theta[2] + (n_comp - 1) * theta[3])
    span = (theta[1] - 6.0 * math.sqrt(theta[2]), theta[1] + (n_comp - 0.5) * theta[0] + 6.0 * sd_max)
    prob = _Problem(hist, scale, "uniform" if weighting == "uniform" else "neyman", span)
    args = (free, n_comp, max_iter, tol, max_rejects, scale)

    theta, amps, history, converged, n_it = _iterate(prob, theta, *args)
    if weighting == "pearson":
        expected = prob.basis(theta, n_comp) @ amps
        prob.w = 1.0 / np.sqrt(np.maximum(expected, 1.0))
        theta, amps, history, converged, it = _iterate(prob, theta, *args)
        n_it += it
    return _fit_from_theta(
        theta, amps, scale, residual_norm=history[-1], converged=converged,
        n_iterations=n_it, residual_history=tuple(history),
    )


class AuPMixture(BaseEstimator):
    """Gaussian-mixture decomposition of pulse areas into click numbers.

    Parameters
    ----------
    n_pixels : int
        Largest click number in the mixture.
    bins : int, sequence or None
        Histogram binning; ``None`` selects Freedman-Diaconis.
    delta_x : float or None
        Known peak spacing; estimated from the data when ``None``.
    x0 : float
        Area of the zero-click peak used to number the peaks.
    fix : tuple of str
        Shape parameters held fixed during the fit.
    max_iter, tol, weighting
        Passed to :func:`fit_mixture`.

    Attributes
    ----------
    hist_ : AuPHistogram
    init_ : GaussianMixtureFit
    fit_ : GaussianMixtureFit
    click_distribution_ : ClickDistribution
    n_iter_ : int
    converged_ : bool

    Examples
    --------
    >>> from clickstat import AuPMixture
    >>> model = AuPMixture(n_pixels=100).fit(areas)  # doctest: +SKIP
    >>> model.click_distribution_.mean()             # doctest: +SKIP
    """

    def __init__(self, n_pixels=100, bins=None, delta_x=None, x0=0.0, fix=(), max_iter=200,
                 tol=1e-8, weighting="pearson"):
        self.n_pixels = n_pixels
        self.bins = bins
        self.delta_x = delta_x
        self.x0 = x0
        self.fix = fix
        self.max_iter = max_iter
        self.tol = tol
        self.weighting = weighting

    def fit(self, X, y=None):
        areas = check_areas(X)
        return self.fit_histogram(AuPHistogram.from_samples(areas, self.bins))

    def fit_histogram(self, hist):
        self.hist_ = hist
        self.init_ = initialize_fit(hist, self.n_pixels, self.delta_x, self.x0)
        self.fit_ = fit_mixture(
            hist, self.init_, max_iter=self.max_iter, tol=self.tol, fix=self.fix,
            weighting=self.weighting,
        )
        self.click_distribution_ = clicks_from_fit(self.fit_)
        self.n_iter_ = self.fit_.n_iterations
        self.converged_ = self.fit_.converged
        return self

    def _log_components(self, X):
        check_is_fitted(self, "fit_")
        areas = check_areas(X)
        f = self.fit_
        var = f.variances()
        z2 = (areas[:, None] - f.centers()) ** 2 / var
        with np.errstate(divide="ignore"):
            logw = np.log(self.click_distribution_.probs)
        return logw - 0.5 * z2 - 0.5 * np.log(2 * np.pi * var)

    def score_samples(self, X):
        """Log density of each area under the fitted mixture."""
        lc = self._log_components(X)
        m = lc.max(axis=1, keepdims=True)
        return (m + np.log(np.exp(lc - m).sum(axis=1, keepdims=True)))[:, 0]

    def predict_proba(self, X):
        """Posterior click-number probabilities of each pulse."""
        lc = self._log_components(X)
        lc -= lc.max(axis=1, keepdims=True)
        p = np.exp(lc)
        return p / p.sum(axis=1, keepdims=True)

    def predict(self, X):
        """Most probable click number of each pulse."""
        return np.argmax(self._log_components(X), axis=1)

    def transform(self, X):
        return self.predict_proba(X)
