import math

import numpy as np
import pytest
from scipy.stats import binom, poisson

from clickstat import (
    ClickDistribution,
    ClickQEstimator,
    ClickSample,
    CrosstalkCalibrator,
    DetectorConfig,
    DomainError,
    IllPosedInversionError,
    OutOfBracketError,
    PhotonSource,
    UndefinedQError,
    calibrate_crosstalk,
    click_distribution,
    click_distribution_with_crosstalk,
    coherent_click_distribution,
    crosstalk_q_limit,
    extract_chi,
    fitted_q_report,
    naive_photon_inversion,
    q_binomial,
    q_mandel,
    q_report,
    q_uncertainty,
)
from clickstat.estimators import photon_click_matrix
from clickstat.mc_sim import SimConfig, simulate

# Zero-intensity Q limit at chi = 0.0025, N = 100, cross-checked below by
# extrapolating Q_M of the light + crosstalk model to zero intensity.
Q_LIMIT_0025 = 0.7543263568839884


def _binomial_sample(n_trials, p, seed, n=100):
    k = np.random.default_rng(seed).binomial(n, p, n_trials)
    return ClickSample.from_clicks(k, n)


class TestQ:
    @pytest.mark.parametrize("n", [2, 10, 100])
    @pytest.mark.parametrize("p", [0.01, 0.3, 0.9])
    def test_binomial_is_zero(self, n, p):
        d = ClickDistribution(binom.pmf(np.arange(n + 1), n, p))
        assert abs(q_binomial(d)) <= 1e-12

    def test_single_click_is_minus_one(self):
        d = click_distribution(PhotonSource.fock(1), DetectorConfig(100))
        assert q_binomial(d) == pytest.approx(-1.0, abs=1e-12)

    def test_undefined(self):
        with pytest.raises(UndefinedQError):
            q_binomial(ClickDistribution.delta(0, 10))
        with pytest.raises(UndefinedQError):
            q_binomial(ClickDistribution.delta(10, 10))
        with pytest.raises(UndefinedQError):
            q_mandel(ClickDistribution.delta(0, 10))

    def test_mandel_of_poisson(self):
        n = 1000
        p = poisson.pmf(np.arange(n + 1), 3.0)
        p[-1] += 1 - p.sum()
        assert abs(q_mandel(p)) <= 1e-9

    @pytest.mark.parametrize("mu", [100, 150])
    def test_mandel_artifact(self, mu):
        d = coherent_click_distribution(mu, 100)
        assert q_mandel(d) == pytest.approx(math.expm1(-mu / 100), abs=1e-12)

    def test_mandel_artifact_with_loss(self):
        det = DetectorConfig(100, efficiency=0.6, dark_rate=0.2)
        d = click_distribution(PhotonSource.coherent(80), det)
        assert q_mandel(d) == pytest.approx(math.expm1(-(0.6 * 80 + 0.2) / 100), abs=1e-10)

    def test_signs_over_grid(self):
        for eta in (0.3, 0.6, 1.0):
            for n in range(1, 6):
                d = click_distribution(PhotonSource.fock(n), DetectorConfig(100, efficiency=eta))
                assert q_binomial(d) < 0
            for chi in (0.0, 0.01):
                det = DetectorConfig(50, efficiency=eta, crosstalk=chi)
                for src in (PhotonSource.coherent(20), PhotonSource.thermal(20)):
                    assert q_binomial(click_distribution_with_crosstalk(src, det)) >= -1e-12

    def test_report(self):
        r = q_report(coherent_click_distribution(50, 100))
        assert r.method == "analytic" and r.q_binomial_stderr is None
        assert r.to_dict()["q_mandel"] == pytest.approx(math.expm1(-0.5))


class TestUncertainty:
    def test_deterministic_sample(self):
        s = ClickSample(np.eye(11, dtype=int)[5] * 500)
        for method in ("bootstrap", "delta"):
            r = q_uncertainty(s, 10, method=method, seed=1)
            assert r.variance == 0 and r.q_binomial == -1.0
            assert r.q_binomial_stderr == 0.0

    def test_binomial_sample_consistent_with_zero(self):
        r = q_uncertainty(_binomial_sample(10**5, 0.3, 0), 100, seed=2)
        assert abs(r.q_binomial) <= 3 * r.q_binomial_stderr

    def test_bootstrap_matches_delta(self):
        s = _binomial_sample(10**5, 0.3, 1)
        b = q_uncertainty(s, 100, "bootstrap", seed=3)
        d = q_uncertainty(s, 100, "delta")
        assert b.q_binomial_stderr == pytest.approx(d.q_binomial_stderr, rel=0.25)
        assert b.q_mandel_stderr == pytest.approx(d.q_mandel_stderr, rel=0.25)

    def test_scaling(self):
        small = q_uncertainty(_binomial_sample(10**4, 0.3, 4), 100, seed=5).q_binomial_stderr
        large = q_uncertainty(_binomial_sample(10**6, 0.3, 6), 100, seed=7).q_binomial_stderr
        assert small / large == pytest.approx(10.0, rel=0.2)

    def test_thread_independent(self):
        s = _binomial_sample(5000, 0.2, 8)
        a = q_uncertainty(s, 100, seed=9, n_workers=1)
        b = q_uncertainty(s, 100, seed=9, n_workers=4)
        assert a == b

    def test_small_sample_rejected(self):
        with pytest.raises(DomainError):
            q_uncertainty(_binomial_sample(50, 0.2, 0), 100)
        with pytest.raises(DomainError):
            q_uncertainty(_binomial_sample(500, 0.2, 0), 100, method="jackknife")

    def test_fitted_report(self):
        r = fitted_q_report(coherent_click_distribution(30, 100), 10**5, seed=0)
        assert abs(r.q_binomial) < 1e-12
        # Q_B of a multinomial sample has standard error close to sqrt(2/n)
        assert r.q_binomial_stderr == pytest.approx(math.sqrt(2e-5), rel=0.15)

    def test_estimator_api(self):
        k = np.random.default_rng(3).binomial(100, 0.4, 20000)
        est = ClickQEstimator(n_pixels=100, method="delta").fit(k.reshape(-1, 1))
        assert abs(est.q_binomial_) < 3 * est.report_.q_binomial_stderr
        assert est.get_params()["method"] == "delta"
        with pytest.raises(DomainError):
            ClickQEstimator(n_pixels=10).fit(k)


class TestCrosstalkLimit:
    def test_zero(self):
        assert crosstalk_q_limit(0.0, 100) == 0.0

    def test_hand_enumeration(self):
        # cascade from one seed on four pixels at chi = 1/2: C_1..C_4 = 1/8, 3/32, 3/16, 19/32
        assert crosstalk_q_limit(0.5, 4) == pytest.approx(135 / 52, rel=1e-14)

    def test_frozen_value(self):
        assert crosstalk_q_limit(0.0025, 100) == pytest.approx(Q_LIMIT_0025, rel=1e-12)

    def test_is_zero_intensity_limit_of_mandel(self):
        det = DetectorConfig(100, crosstalk=0.0025)

        def qm(mu):
            return q_mandel(click_distribution_with_crosstalk(PhotonSource.coherent(mu), det))

        extrapolated = 2 * qm(1e-4) - qm(2e-4)
        assert extrapolated == pytest.approx(Q_LIMIT_0025, abs=1e-7)

    def test_strictly_increasing(self):
        q = [crosstalk_q_limit(c, 100) for c in np.linspace(0, 0.2, 41)]
        assert np.all(np.diff(q) > 0)

    @pytest.mark.parametrize("chi", [0.001, 0.0025, 0.01, 0.05])
    def test_round_trip(self, chi):
        assert extract_chi(crosstalk_q_limit(chi, 100), 100) == pytest.approx(chi, abs=1e-8)

    def test_extract(self):
        assert extract_chi(0.0, 100) == 0.0
        chi = extract_chi(0.5, 100)
        assert 0 < chi < 0.2
        assert crosstalk_q_limit(chi, 100) == pytest.approx(0.5, abs=1e-8)

    def test_out_of_bracket(self):
        with pytest.raises(OutOfBracketError):
            extract_chi(1000.0, 100)
        with pytest.raises(DomainError):
            extract_chi(-0.1, 100)


class TestCalibration:
    def test_negative_q_flagged(self):
        s = _binomial_sample(2000, 0.001, 0)
        counts = np.array(s.counts)
        counts[0] -= 5
        counts[1] += 5
        with pytest.warns(RuntimeWarning):
            est = calibrate_crosstalk(ClickSample(counts), 100, n_resamples=200, seed=1)
        assert est.negative_q and est.chi == 0.0

    def test_simulated_round_trip(self):
        det = DetectorConfig(100, crosstalk=0.01)
        res = simulate(SimConfig(det, PhotonSource.coherent(0.1), 10**6, seed=21))
        est = calibrate_crosstalk(ClickSample(res.click_histogram), 100, n_resamples=500, seed=2)
        assert abs(est.chi - 0.01) <= 3 * est.chi_stderr + 1e-4

    def test_estimator_api(self):
        det = DetectorConfig(100, crosstalk=0.01)
        res = simulate(SimConfig(det, PhotonSource.coherent(0.1), 2 * 10**5, seed=3))
        k = np.repeat(np.arange(101), res.click_histogram)
        cal = CrosstalkCalibrator(n_pixels=100, n_resamples=300, random_state=0).fit(k)
        assert cal.detector().crosstalk == cal.chi_
        assert cal.chi_stderr_ > 0


def _stirling_matrix(n, n_max):
    # exact occupancy: P(k | m balls) = C(N,k) k! S(m,k) / N^m
    s = [[1]]
    for m in range(1, n_max + 1):
        prev = s[-1] + [0]
        s.append([0] + [k * prev[k] + prev[k - 1] for k in range(1, m + 1)])
    out = np.zeros((n + 1, n_max + 1))
    for m in range(n_max + 1):
        for k in range(min(m, n) + 1):
            out[k, m] = math.comb(n, k) * math.factorial(k) * s[m][k] / n**m
    return out


class TestInversion:
    def test_matrix_against_occupancy(self):
        np.testing.assert_allclose(
            photon_click_matrix(DetectorConfig(6), 15), _stirling_matrix(6, 15), atol=1e-15
        )

    def test_matrix_with_loss_reproduces_model(self):
        det = DetectorConfig(20, efficiency=0.6, dark_rate=0.1)
        m = photon_click_matrix(det, 400)
        p = poisson.pmf(np.arange(401), 15.0)
        expect = click_distribution(PhotonSource.coherent(15.0), det).probs
        np.testing.assert_allclose(m @ p, expect, atol=1e-12)

    def test_vacuum(self):
        r = naive_photon_inversion(ClickDistribution.delta(0, 100), DetectorConfig(100))
        assert r.probs[0] == pytest.approx(1.0, abs=1e-12)
        assert np.abs(r.probs[1:]).max() < 1e-12

    def test_dim_light_works(self):
        r = naive_photon_inversion(coherent_click_distribution(5, 100), DetectorConfig(100))
        assert r.minimum >= -1e-6
        assert r.total == pytest.approx(1.0, abs=1e-9)

    def test_bright_light_goes_negative(self):
        r = naive_photon_inversion(coherent_click_distribution(150, 100), DetectorConfig(100))
        assert r.minimum < -1e-3
        assert r.residual < 1e-10

    def test_sample_input(self):
        r = naive_photon_inversion(_binomial_sample(10**4, 0.05, 0), DetectorConfig(100))
        assert r.total == pytest.approx(1.0, abs=1e-6)

    def test_ill_posed(self):
        with pytest.raises(IllPosedInversionError) as info:
            naive_photon_inversion(coherent_click_distribution(150, 100), DetectorConfig(100), n_max=100)
        assert info.value.condition_number > 1

    def test_length_mismatch(self):
        with pytest.raises(DomainError):
            naive_photon_inversion(coherent_click_distribution(1, 10), DetectorConfig(100))
