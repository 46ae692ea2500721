import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import binom

from clickstat import (
    ClickDistribution,
    DetectorConfig,
    DomainError,
    PhotonSource,
    click_distribution,
    coherent_click_distribution,
    coherent_mean_clicks,
    normal_ordered_gf,
)

# Frozen from an exact occupancy-number oracle (Stirling numbers of the second
# kind, binomial thinning and Poisson dark events in 60-digit arithmetic); no
# generating functions are involved there.
THERMAL_2_N8_ETA06_NU005 = [
    0.4323770111366882, 0.2763721094224685, 0.15328297283808787,
    0.07883874468810657, 0.03695572587313303, 0.015292024855100244,
    0.005293393220317468, 0.0013808851879114241, 0.0002071327781867159,
]
FOCK_5_N10 = [0.0, 0.0001, 0.0135, 0.18, 0.504, 0.3024, 0.0, 0.0, 0.0, 0.0, 0.0]
FOCK_12_N6_ETA07_NU02 = [
    4.3510709014651575e-07, 0.00013645951165840135, 0.0062641411578111894,
    0.0765046067988825, 0.31018195864871106, 0.4340758761458177,
    0.17283652263002894,
]


class TestGeneratingFunction:
    @pytest.mark.parametrize("source", [
        PhotonSource.coherent(3.0), PhotonSource.thermal(2.0), PhotonSource.fock(4),
    ])
    def test_identity_at_zero(self, source):
        assert normal_ordered_gf(source, 0.0) == 1.0

    def test_vacuum(self):
        assert normal_ordered_gf(PhotonSource.fock(0), 0.5) == 1.0

    def test_coherent_value(self):
        assert normal_ordered_gf(PhotonSource.coherent(1.0), 1.0) == pytest.approx(math.exp(-1), abs=1e-15)

    def test_closed_forms(self):
        lam, eta, nu = 0.3, 0.8, 0.2
        x = lam * eta
        assert normal_ordered_gf(PhotonSource.fock(3), lam, nu, eta) == pytest.approx(math.exp(-nu) * (1 - x) ** 3)
        assert normal_ordered_gf(PhotonSource.thermal(2.0), lam, nu, eta) == pytest.approx(math.exp(-nu) / (1 + 2 * x))

    def test_domain(self):
        with pytest.raises(DomainError):
            normal_ordered_gf(PhotonSource.fock(1), 1.5)
        with pytest.raises(DomainError):
            normal_ordered_gf(PhotonSource.fock(1), 0.5, nu_term=-1.0)

    @given(lam=st.floats(0, 1), nbar=st.floats(0, 1e3), nu=st.floats(0, 5))
    def test_range(self, lam, nbar, nu):
        for source in (PhotonSource.coherent(nbar), PhotonSource.thermal(nbar)):
            assert 0.0 <= normal_ordered_gf(source, lam, nu) <= 1.0


class TestCoherent:
    def test_vacuum(self):
        d = coherent_click_distribution(0.0, 10)
        assert d[0] == 1.0 and d.probs[1:].sum() == 0.0

    def test_saturation(self):
        assert coherent_click_distribution(1e6, 10)[10] == pytest.approx(1.0, abs=1e-10)

    def test_two_pixels(self):
        q = math.exp(-1)
        expected = [math.exp(-2), 2 * q * (1 - q), (1 - q) ** 2]
        np.testing.assert_allclose(coherent_click_distribution(2.0, 2).probs, expected, rtol=1e-14)

    def test_binomial_at_one_photon_per_pixel(self):
        d = click_distribution(PhotonSource.coherent(100), DetectorConfig(100))
        exact = binom.pmf(np.arange(101), 100, 1 - math.exp(-1))
        np.testing.assert_allclose(d.probs, exact, atol=1e-14)

    @pytest.mark.parametrize("mu", [0.0, 0.1, 1.0, 10.0, 100.0, 300.0])
    @pytest.mark.parametrize("n", [1, 2, 10, 100])
    def test_normalised(self, mu, n):
        assert coherent_click_distribution(mu, n).probs.sum() == pytest.approx(1.0, abs=1e-10)

    def test_large_detector(self):
        d = coherent_click_distribution(5e4, 100_000)
        assert d.probs.sum() == pytest.approx(1.0, abs=1e-10)
        assert d.mean() == pytest.approx(1e5 * -math.expm1(-0.5), rel=1e-12)

    @given(mu=st.floats(0, 500), eta=st.floats(0, 1), nu=st.floats(0, 2), n=st.integers(1, 120))
    @settings(max_examples=50, deadline=None)
    def test_mean_identity(self, mu, eta, nu, n):
        det = DetectorConfig(n, efficiency=eta, dark_rate=nu)
        d = click_distribution(PhotonSource.coherent(mu), det)
        assert d.mean() == pytest.approx(coherent_mean_clicks(mu, det), rel=1e-10, abs=1e-10)

    def test_model_matches_closed_form_with_loss_and_darks(self):
        det = DetectorConfig(50, efficiency=0.4, dark_rate=0.3)
        a = click_distribution(PhotonSource.coherent(70), det)
        b = coherent_click_distribution(0.4 * 70 + 0.3, 50)
        np.testing.assert_allclose(a.probs, b.probs, atol=1e-10)

    def test_mean_monotone_in_intensity(self):
        means = [coherent_click_distribution(mu, 100).mean() for mu in np.linspace(0, 600, 61)]
        assert np.all(np.diff(means) >= 0)


class TestNonCoherent:
    def test_single_photon(self):
        d = click_distribution(PhotonSource.fock(1), DetectorConfig(4))
        np.testing.assert_allclose(d.probs, [0, 1, 0, 0, 0], atol=1e-15)

    def test_thermal_against_occupancy_oracle(self):
        d = click_distribution(PhotonSource.thermal(2.0), DetectorConfig(8, 0.6, 0.05))
        np.testing.assert_allclose(d.probs, THERMAL_2_N8_ETA06_NU005, atol=1e-13)

    def test_fock_against_occupancy_oracle(self):
        d = click_distribution(PhotonSource.fock(5), DetectorConfig(10))
        np.testing.assert_allclose(d.probs, FOCK_5_N10, atol=1e-15)

    def test_more_photons_than_pixels(self):
        d = click_distribution(PhotonSource.fock(12), DetectorConfig(6, 0.7, 0.2))
        np.testing.assert_allclose(d.probs, FOCK_12_N6_ETA07_NU02, atol=1e-13)

    @pytest.mark.parametrize("source", [
        PhotonSource.fock(150), PhotonSource.fock(7), PhotonSource.thermal(100.0),
        PhotonSource.thermal(0.1),
    ])
    def test_normalised_at_full_size(self, source):
        d = click_distribution(source, DetectorConfig(100, efficiency=0.6, dark_rate=0.001))
        assert d.probs.sum() == pytest.approx(1.0, abs=1e-10)
        assert d.probs.min() >= 0.0

    def test_fock_mean(self):
        # each pixel stays dark with probability (1 - eta/N)^n
        n, eta, N = 150, 0.6, 100
        d = click_distribution(PhotonSource.fock(n), DetectorConfig(N, efficiency=eta))
        assert d.mean() == pytest.approx(N * (1 - (1 - eta / N) ** n), rel=1e-12)

    def test_thermal_mean(self):
        nbar, N = 30.0, 100
        d = click_distribution(PhotonSource.thermal(nbar), DetectorConfig(N))
        assert d.mean() == pytest.approx(N * (1 - 1 / (1 + nbar / N)), rel=1e-12)

    def test_returns_click_distribution(self):
        d = click_distribution(PhotonSource.thermal(1.0), DetectorConfig(3))
        assert isinstance(d, ClickDistribution) and d.n_pixels == 3

    def test_type_checks(self):
        with pytest.raises(TypeError):
            click_distribution(PhotonSource.fock(1), {"n_pixels": 3})
        with pytest.raises(TypeError):
            click_distribution("fock", DetectorConfig(3))

    def test_ignores_crosstalk_and_preclicks(self):
        src = PhotonSource.fock(3)
        a = click_distribution(src, DetectorConfig(10))
        b = click_distribution(src, DetectorConfig(10, crosstalk=0.3, preclick_prob=0.2))
        np.testing.assert_array_equal(a.probs, b.probs)
