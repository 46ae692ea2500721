"""Event-level Monte Carlo of a pixelated photon detector.

Trials are processed in fixed-size chunks. Chunk ``i`` draws from a Philox
stream keyed by ``(seed, i)``, so results do not depend on how many worker
threads process the chunks.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
import math

import numpy as np

from ._validation import check_count
from .exceptions import DomainError
from .types import AuPParams, ClickDistribution, DetectorConfig, PhotonSource, SourceKind

CHUNK_TRIALS = 1 << 15


def _chunk_generator(seed, index):
    seq = np.random.SeedSequence(seed, spawn_key=(index,))
    return np.random.Generator(np.random.Philox(seq))


@dataclass(frozen=True)
class SimConfig:
    det: DetectorConfig
    source: PhotonSource
    n_trials: int
    seed: int = 0
    aup: AuPParams = None

    def __post_init__(self):
        object.__setattr__(self, "n_trials", check_count(self.n_trials, "n_trials", 1))
        seed = check_count(self.seed, "seed")
        if seed >= 1 << 64:
            raise DomainError("seed must fit in 64 bits")
        object.__setattr__(self, "seed", seed)


@dataclass(eq=False)
class SimResult:
    """Summed outcome of a simulation run.

    ``light_clicks``, ``dark_clicks`` and ``crosstalk_clicks`` partition the
    total number of clicks; a pixel hit by both light and a dark event counts
    as a light click.
    """

    click_histogram: np.ndarray
    light_clicks: int
    dark_clicks: int
    crosstalk_clicks: int
    preclicked_pixels: int
    areas: np.ndarray = None

    @property
    def n_trials(self):
        return int(self.click_histogram.sum())

    @property
    def n_pixels(self):
        return self.click_histogram.size - 1

    def frequencies(self):
        return self.click_histogram / self.n_trials

    def to_dict(self):
        return {
            "n_trials": self.n_trials,
            "n_pixels": self.n_pixels,
            "click_histogram": [int(c) for c in self.click_histogram],
            "light_clicks": int(self.light_clicks),
            "dark_clicks": int(self.dark_clicks),
            "crosstalk_clicks": int(self.crosstalk_clicks),
            "preclicked_pixels": int(self.preclicked_pixels),
        }


def _photon_numbers(rng, source, size):
    if source.kind is SourceKind.COHERENT:
        return rng.poisson(source.parameter, size)
    if source.kind is SourceKind.THERMAL:
        # Bose-Einstein: P(n) = nbar^n / (1 + nbar)^(n+1)
        return rng.geometric(1.0 / (1.0 + source.parameter), size) - 1
    return np.full(size, int(source.parameter), dtype=np.int64)


def _scatter(rng, events, n_pixels):
    """Boolean (trials, pixels) map of pixels receiving at least one event."""
    trials = events.size
    hit = np.zeros(trials * n_pixels, dtype=bool)
    total = int(events.sum())
    if total:
        offsets = np.repeat(np.arange(0, trials * n_pixels, n_pixels, dtype=np.int32), events)
        offsets += rng.integers(0, n_pixels, total, dtype=np.int32)
        hit[offsets] = True
    return hit.reshape(trials, n_pixels)


def _bernoulli_positions(rng, p, n_slots):
    """Success positions of ``n_slots`` Bernoulli(p_r) trials for each row ``r``.

    An i.i.d. Bernoulli field is a Binomial(n_slots, p_r) number of successes
    placed on a uniformly random subset, which costs only as much as there are
    successes. Returns ``(rows, positions)``.
    """
    counts = rng.binomial(n_slots, p)
    rows = np.repeat(np.arange(p.size), counts)
    pos = rng.integers(0, n_slots, rows.size)
    # reject repeated positions within a row until every row is a proper subset
    while rows.size:
        key = rows * n_slots + pos
        order = np.argsort(key, kind="stable")
        dup = np.zeros(key.size, dtype=bool)
        dup[order[1:]] = key[order[1:]] == key[order[:-1]]
        n_dup = int(dup.sum())
        if not n_dup:
            break
        pos[dup] = rng.integers(0, n_slots, n_dup)
    return rows, pos


# rows with a smaller trigger probability use geometric gap sampling
_SPARSE_P = 0.05


def _cascade(rng, clicked, blocked, chi):
    """Run crosstalk generations; returns clicks added per trial."""
    added = np.zeros(clicked.shape[0], dtype=np.int64)
    n_new = np.count_nonzero(clicked, axis=1)
    active = np.flatnonzero(n_new)
    n_new = n_new[active]
    # state marks pixels that can no longer fire
    state = clicked[active]
    if blocked is not None:
        state |= blocked[active]
    n_pixels = clicked.shape[1]
    log_miss = math.log1p(-chi)
    while active.size:
        # an idle pixel fires if any of the n_new seeds triggers it
        p = -np.expm1(n_new * log_miss)
        n_new = np.zeros(active.size, dtype=np.int64)
        sparse = p < _SPARSE_P
        idx = np.flatnonzero(sparse)
        if idx.size:
            rows, pos = _bernoulli_positions(rng, p[idx], n_pixels)
            rows = idx[rows]
            fresh = ~state[rows, pos]
            rows = rows[fresh]
            state[rows, pos[fresh]] = True
            n_new += np.bincount(rows, minlength=active.size)
        idx = np.flatnonzero(~sparse)
        if idx.size:
            sub = state[idx]
            fired = (rng.random(sub.shape) < p[idx, None]) & ~sub
            state[idx] = sub | fired
            n_new[idx] = np.count_nonzero(fired, axis=1)
        added[active] += n_new
        keep = np.flatnonzero(n_new)
        active = active[keep]
        n_new = n_new[keep]
        state = state[keep]
    return added


def _simulate_chunk(cfg, index, size):
    rng = _chunk_generator(cfg.seed, index)
    det = cfg.det
    n = det.n_pixels
    if det.preclick_prob > 0.0:
        blocked = rng.random((size, n)) < det.preclick_prob
    else:
        blocked = None
    photons = _photon_numbers(rng, cfg.source, size)
    detected = rng.binomial(photons, det.efficiency) if det.efficiency < 1.0 else photons
    light = _scatter(rng, detected, n)
    if det.dark_rate > 0.0:
        dark = _scatter(rng, rng.poisson(det.dark_rate, size), n)
    else:
        dark = None
    if blocked is not None:
        light &= ~blocked
        if dark is not None:
            dark &= ~blocked
    n_light = int(light.sum())
    if dark is not None:
        dark &= ~light
        n_dark = int(dark.sum())
        clicked = light | dark
    else:
        n_dark = 0
        clicked = light
    k = np.count_nonzero(clicked, axis=1)
    n_cross = 0
    if det.crosstalk > 0.0:
        extra = _cascade(rng, clicked, blocked, det.crosstalk)
        n_cross = int(extra.sum())
        k += extra
    areas = None
    if cfg.aup is not None:
        a = cfg.aup
        areas = rng.normal(a.x0 + k * a.delta_x, np.sqrt(a.sigma0**2 + k * a.sigma1**2))
    return (
        np.bincount(k, minlength=n + 1),
        n_light,
        n_dark,
        n_cross,
        int(blocked.sum()) if blocked is not None else 0,
        areas,
    )


def simulate(cfg, n_workers=1):
    """Simulate ``cfg.n_trials`` detector pulses.

    Parameters
    ----------
    cfg : SimConfig
    n_workers : int
        Threads used for chunks. Output is identical for any value.

    Returns
    -------
    SimResult
    """
    n_workers = check_count(n_workers, "n_workers", 1)
    sizes = [CHUNK_TRIALS] * (cfg.n_trials // CHUNK_TRIALS)
    if cfg.n_trials % CHUNK_TRIALS:
        sizes.append(cfg.n_trials % CHUNK_TRIALS)
    jobs = list(enumerate(sizes))
    if n_workers == 1:
        parts = [_simulate_chunk(cfg, i, s) for i, s in jobs]
    else:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            parts = list(pool.map(lambda job: _simulate_chunk(cfg, *job), jobs))
    hist = np.zeros(cfg.det.n_pixels + 1, dtype=np.int64)
    totals = [0, 0, 0, 0]
    areas = []
    for part in parts:
        hist += part[0]
        for i in range(4):
            totals[i] += part[i + 1]
        if part[5] is not None:
            areas.append(part[5])
    return SimResult(
        click_histogram=hist,
        light_clicks=totals[0],
        dark_clicks=totals[1],
        crosstalk_clicks=totals[2],
        preclicked_pixels=totals[3],
        areas=np.concatenate(areas) if areas else None,
    )


def sample_aup(dist, aup, n_samples, seed=0):
    """Draw pulse areas for click numbers distributed as ``dist``.

    Each sample picks ``i ~ dist`` and returns a normal variate with mean
    ``x0 + i*delta_x`` and variance ``sigma0**2 + i*sigma1**2``.
    """
    if not isinstance(dist, ClickDistribution):
        dist = ClickDistribution(dist)
    n_samples = check_count(n_samples, "n_samples", 1)
    rng = _chunk_generator(check_count(seed, "seed"), 0)
    k = rng.choice(dist.probs.size, size=n_samples, p=dist.probs)
    return rng.normal(aup.centers(k), aup.widths(k))
