import numpy as np
import pytest

from openqx.model import BathConfig, SpectralDensity, SystemModel, ValidationError
from openqx.spectral import (
    SingularResolventError,
    broadened_density,
    find_localized_modes,
    footnote_density,
    resolvent,
    self_energy,
    spectrum,
    sum_rule_residual,
)

from reference_values import OHMIC_BOUND_STATE, SIGMA_BAND_COMPLEX, SIGMA_BAND_REAL

BATH = BathConfig(2.0)
BAND = SpectralDensity.lorentzian([(1.0, 0.0, 0.5)], support=(-1, 1))
ONE = SystemModel([[0.2]], "fermion")


@pytest.mark.parametrize("eps, expected", sorted(SIGMA_BAND_REAL.items()))
def test_band_self_energy_on_real_axis(eps, expected):
    got = self_energy(ONE, BAND, BATH, eps + 1e-13j)[0, 0]
    assert abs(got - expected) < 1e-9


@pytest.mark.parametrize("z, expected", list(SIGMA_BAND_COMPLEX.items()))
def test_band_self_energy_off_axis(z, expected):
    assert abs(self_energy(ONE, BAND, BATH, z, check=True)[0, 0] - expected) < 1e-10


def test_self_energy_on_support_needs_imaginary_part():
    with pytest.raises(ValidationError):
        self_energy(ONE, BAND, BATH, 0.3)


@pytest.mark.parametrize(
    "jd",
    [
        BAND,
        SpectralDensity.ohmic(0.8, 1.0),
        SpectralDensity.lorentzian([(0.4, 0.3, 0.7)]),
        SpectralDensity.wide_band(0.6),
    ],
    ids=["band", "ohmic", "lorentzian", "wideband"],
)
def test_reflection_symmetry(jd):
    rng = np.random.default_rng(7)
    z = rng.normal(size=100) * 2 + 1j * rng.uniform(0.01, 2, size=100)
    up = self_energy(ONE, jd, BATH, z)
    down = self_energy(ONE, jd, BATH, z.conj())
    assert np.max(np.abs(down - np.swapaxes(up, -1, -2).conj())) < 1e-12


def test_resolvent_residual_matrix():
    model = SystemModel([[0.1, 0.2], [0.2, -0.3]], "fermion")
    jd = SpectralDensity.lorentzian([([[0.5, 0.1j], [-0.1j, 0.4]], 0.0, 1.0)], dim=2, support=(-3, 3))
    z = np.array([0.4 + 0.2j, -2.5 + 0.01j, 5 - 1j])
    u = resolvent(model, jd, BATH, z)
    m = z[:, None, None] * np.eye(2) - model.eps_s - self_energy(model, jd, BATH, z)
    assert np.max(np.abs(m @ u - np.eye(2))) < 1e-12


def test_resolvent_at_isolated_level_is_singular():
    with pytest.raises(SingularResolventError):
        resolvent(ONE, SpectralDensity.zero(), BATH, 0.2)


def test_discrete_self_energy():
    jd = SpectralDensity.discrete([0.5], [[0.3]])
    assert self_energy(ONE, jd, BATH, 2.0)[0, 0] == pytest.approx(0.09 / 1.5)


def test_wide_band_self_energy():
    jd = SpectralDensity.wide_band(0.8)
    assert self_energy(ONE, jd, BATH, 0.3 + 1e-3j)[0, 0] == pytest.approx(-0.4j)
    assert self_energy(ONE, jd, BATH, 0.3 - 1e-3j)[0, 0] == pytest.approx(0.4j)


def test_decoupled_levels_are_localized():
    model = SystemModel([[0.5, 0.2], [0.2, -0.1]], "boson")
    modes = find_localized_modes(model, SpectralDensity.zero(2), BathConfig(1.0, -1.0))
    w = np.linalg.eigvalsh(model.eps_s)
    assert [m.eps_l for m in modes] == pytest.approx(list(w))
    assert np.allclose(sum(m.Z_l for m in modes), np.eye(2))


def test_ohmic_bound_state():
    model = SystemModel([[0.2]], "fermion")
    modes = find_localized_modes(model, SpectralDensity.ohmic(2.0, 1.0), BathConfig(2.0, 0.1))
    assert len(modes) == 1
    eps_l, z_l = OHMIC_BOUND_STATE
    assert modes[0].eps_l == pytest.approx(eps_l, abs=1e-9)
    assert modes[0].Z_l[0, 0] == pytest.approx(z_l, abs=1e-8)


def test_weak_ohmic_has_no_bound_state():
    model = SystemModel([[0.5]], "fermion")
    assert find_localized_modes(model, SpectralDensity.ohmic(0.3, 1.0), BATH) == []


def test_band_bound_states_and_sum_rule():
    model = SystemModel([[0.9]], "fermion")
    jd = SpectralDensity.lorentzian([(3.0, 0.0, 0.5)], support=(-1, 1))
    modes = find_localized_modes(model, jd, BATH)
    assert modes and all(not -1 <= m.eps_l <= 1 for m in modes)
    assert sum_rule_residual(modes, spectrum(model, jd, BATH)) < 1e-6


@pytest.mark.parametrize(
    "model, jd",
    [
        (SystemModel([[0.3]], "fermion"), SpectralDensity.lorentzian([(0.5, 0.0, 1.0)])),
        (SystemModel([[0.2, 0.05], [0.05, -0.1]], "fermion"), SpectralDensity.lorentzian([(0.4 * np.eye(2), 0.0, 0.5)], dim=2, support=(-2, 2))),
        (SystemModel([[0.5]], "boson"), SpectralDensity.ohmic(0.3, 1.0)),
    ],
    ids=["lorentzian", "band-2d", "ohmic"],
)
def test_sum_rule_continuum_only(model, jd):
    bath = BathConfig(2.0, -0.5 if model.statistics.name == "BOSON" else 0.0)
    modes = find_localized_modes(model, jd, bath)
    assert modes == []
    assert sum_rule_residual(modes, spectrum(model, jd, bath)) < 1e-6


def test_wide_band_density_is_lorentzian():
    model = SystemModel([[0.2]], "fermion")
    jd = SpectralDensity.wide_band(0.6)
    eps = np.linspace(-3, 3, 13)
    d, _ = broadened_density(model, jd, BATH, eps)
    expected = 0.6 / ((eps - 0.2) ** 2 + 0.09)
    assert np.allclose(d[:, 0, 0].real, expected, rtol=1e-8)


def test_density_matches_imaginary_part_of_resolvent():
    model = SystemModel([[0.1, 0.3j], [-0.3j, -0.2]], "fermion")
    jd = SpectralDensity.lorentzian([([[0.5, 0.1], [0.1, 0.3]], 0.2, 0.8)], dim=2)
    eps = np.linspace(-2, 2, 21)
    d, _ = broadened_density(model, jd, BATH, eps)
    assert np.max(np.abs(d - footnote_density(model, jd, BATH, eps))) < 1e-8


def test_density_is_psd():
    model = SystemModel([[0.1, 0.3], [0.3, -0.2]], "boson")
    jd = SpectralDensity.ohmic([[0.5, 0.2], [0.2, 0.3]], 1.0, dim=2)
    table = spectrum(model, jd, BathConfig(1.0, -1.0))
    assert np.linalg.eigvalsh(table.D).min() >= 0
