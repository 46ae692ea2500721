"""Core value types: detector, light source, click distributions and samples."""
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from ._validation import check_count, check_probability_vector, check_real
from .exceptions import DomainError


@dataclass(frozen=True)
class DetectorConfig:
    """Pixelated photon detector.

    Parameters
    ----------
    n_pixels : int
        Number of binary pixels ``N``.
    efficiency : float
        Detection efficiency ``eta`` in [0, 1].
    dark_rate : float
        Mean number of dark events per measurement window (Poisson).
    crosstalk : float
        Probability that a fired pixel triggers a given idle pixel.
    preclick_prob : float
        Probability that a pixel is already dead when the pulse arrives.
        Only the simulator models it.
    """

    n_pixels: int
    efficiency: float = 1.0
    dark_rate: float = 0.0
    crosstalk: float = 0.0
    preclick_prob: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "n_pixels", check_count(self.n_pixels, "n_pixels", 1))
        object.__setattr__(
            self, "efficiency", check_real(self.efficiency, "efficiency", 0.0, 1.0)
        )
        object.__setattr__(self, "dark_rate", check_real(self.dark_rate, "dark_rate", 0.0))
        object.__setattr__(
            self, "crosstalk", check_real(self.crosstalk, "crosstalk", 0.0, 1.0, high_open=True)
        )
        object.__setattr__(
            self,
            "preclick_prob",
            check_real(self.preclick_prob, "preclick_prob", 0.0, 1.0, high_open=True),
        )

    def replace(self, **changes):
        return replace(self, **changes)

    def to_dict(self):
        return {
            "n_pixels": self.n_pixels,
            "efficiency": self.efficiency,
            "dark_rate": self.dark_rate,
            "crosstalk": self.crosstalk,
            "preclick_prob": self.preclick_prob,
        }


class SourceKind(str, Enum):
    COHERENT = "coherent"
    THERMAL = "thermal"
    FOCK = "fock"


@dataclass(frozen=True)
class PhotonSource:
    """Single-mode light source.

    ``parameter`` is the mean photon number for coherent and thermal light and
    the exact photon number for a Fock state. Use the ``coherent``, ``thermal``
    and ``fock`` constructors.
    """

    kind: SourceKind
    parameter: float

    def __post_init__(self):
        try:
            kind = SourceKind(self.kind)
        except ValueError:
            raise DomainError(f"unknown source kind {self.kind!r}") from None
        object.__setattr__(self, "kind", kind)
        if kind is SourceKind.FOCK:
            object.__setattr__(self, "parameter", check_count(self.parameter, "photon number"))
        else:
            object.__setattr__(self, "parameter", check_real(self.parameter, "mean photon number", 0.0))

    @classmethod
    def coherent(cls, mean_photons):
        return cls(SourceKind.COHERENT, mean_photons)

    @classmethod
    def thermal(cls, mean_photons):
        return cls(SourceKind.THERMAL, mean_photons)

    @classmethod
    def fock(cls, n):
        return cls(SourceKind.FOCK, n)

    @property
    def mean_photons(self):
        return float(self.parameter)

    def to_dict(self):
        return {"kind": self.kind.value, "parameter": self.parameter}


@dataclass(frozen=True, eq=False)
class ClickDistribution:
    """Probabilities ``c_0 .. c_N`` of observing ``k`` clicks."""

    probs: np.ndarray

    def __post_init__(self):
        probs = check_probability_vector(self.probs)
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)

    @property
    def n_pixels(self):
        return self.probs.size - 1

    @property
    def clicks(self):
        return np.arange(self.probs.size)

    def __len__(self):
        return self.probs.size

    def __getitem__(self, k):
        return self.probs[k]

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.probs, dtype=dtype)

    def mean(self):
        return float(np.dot(self.clicks, self.probs))

    def variance(self):
        d = self.clicks - self.mean()
        return float(np.dot(d * d, self.probs))

    def total_variation(self, other):
        other = np.asarray(other, dtype=float)
        return 0.5 * float(np.abs(self.probs - other).sum())

    @classmethod
    def delta(cls, k, n_pixels):
        probs = np.zeros(n_pixels + 1)
        probs[k] = 1.0
        return cls(probs)


@dataclass(frozen=True, eq=False)
class ClickSample:
    """Observed click histogram ``counts[k]`` over ``k = 0 .. N``."""

    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.ndim != 1 or counts.size < 2:
            raise DomainError("counts must be a 1-D histogram over 0..N")
        if not np.all(np.equal(np.mod(counts, 1), 0)) or counts.min() < 0:
            raise DomainError("counts must be nonnegative integers")
        counts = counts.astype(np.int64)
        if counts.sum() < 1:
            raise DomainError("sample must contain at least one trial")
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)

    @classmethod
    def from_clicks(cls, clicks, n_pixels):
        clicks = np.asarray(clicks, dtype=np.int64)
        if clicks.size and (clicks.min() < 0 or clicks.max() > n_pixels):
            raise DomainError(f"click numbers must lie in [0, {n_pixels}]")
        return cls(np.bincount(clicks, minlength=n_pixels + 1))

    @property
    def n_pixels(self):
        return self.counts.size - 1

    @property
    def n_trials(self):
        return int(self.counts.sum())

    @property
    def clicks(self):
        return np.arange(self.counts.size)

    def frequencies(self):
        return self.counts / self.n_trials

    def mean(self):
        return float(np.dot(self.clicks, self.counts)) / self.n_trials

    def variance(self):
        """Unbiased sample variance (plug-in when there is a single trial)."""
        n = self.n_trials
        d = self.clicks - self.mean()
        ss = float(np.dot(d * d, self.counts))
        return ss / (n - 1) if n > 1 else 0.0

    def to_distribution(self):
        return ClickDistribution(self.frequencies())


@dataclass(frozen=True)
class AuPParams:
    """Pulse-area response: peak ``i`` sits at ``x0 + i*delta_x`` with
    variance ``sigma0**2 + i*sigma1**2``."""

    delta_x: float
    sigma0: float
    sigma1: float = 0.0
    x0: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "delta_x", check_real(self.delta_x, "delta_x", 0.0, low_open=True))
        object.__setattr__(self, "sigma0", check_real(self.sigma0, "sigma0", 0.0, low_open=True))
        object.__setattr__(self, "sigma1", check_real(self.sigma1, "sigma1", 0.0))
        object.__setattr__(self, "x0", check_real(self.x0, "x0"))

    def centers(self, k):
        return self.x0 + np.asarray(k) * self.delta_x

    def widths(self, k):
        return np.sqrt(self.sigma0**2 + np.asarray(k) * self.sigma1**2)

    def to_dict(self):
        return {"delta_x": self.delta_x, "x0": self.x0, "sigma0": self.sigma0, "sigma1": self.sigma1}
