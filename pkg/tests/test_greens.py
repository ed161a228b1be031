import numpy as np
import pytest
from scipy.integrate import trapezoid
from scipy.linalg import expm

from openqx.greens import (
    LocalKernel,
    NyquistError,
    StepSizeError,
    TimeGrid,
    _check_contraction,
    compute_v,
    green_pair,
    memory_kernel,
    noise_kernel,
    reconstruct_u_spectral,
    solve_u,
)
from openqx.model import BathConfig, SpectralDensity, SystemModel, ValidationError
from openqx.spectral import energy_grid, find_localized_modes, spectrum

from reference_values import LORENTZ_NOISE

LORENTZ = SpectralDensity.lorentzian([(0.5, 0.0, 1.0)])


def test_initial_condition():
    model = SystemModel([[0.3, 0.1], [0.1, -0.2]], "fermion")
    u = solve_u(model, SpectralDensity.lorentzian([(0.3 * np.eye(2), 0, 1)], dim=2), TimeGrid(2.0, 40))
    assert np.allclose(u[0], np.eye(2))


def test_uncoupled_propagator_is_exponential():
    eps = np.array([[0.3, 0.1 - 0.2j], [0.1 + 0.2j, -0.4]])
    grid = TimeGrid(5.0, 50)
    u = solve_u(SystemModel(eps, "boson"), SpectralDensity.zero(2), grid)
    for t, ut in zip(grid.times, u):
        assert np.allclose(ut, expm(-1j * eps * t), atol=1e-12)


def test_wide_band_propagator():
    grid = TimeGrid(10.0, 200)
    u = solve_u(SystemModel([[0.4]], "fermion"), SpectralDensity.wide_band(0.5), grid)
    exact = np.exp(-0.4j * grid.times - 0.25 * grid.times)
    assert np.max(np.abs(u[:, 0, 0] - exact)) < 1e-6


def test_wide_band_occupation_at_infinite_temperature():
    grid = TimeGrid(10.0, 200)
    gp = green_pair(SystemModel([[0.4]], "fermion"), SpectralDensity.wide_band(0.5), BathConfig(0.0), grid)
    assert np.max(np.abs(gp.v[:, 0, 0] - 0.5 * (1 - np.exp(-0.5 * grid.times)))) < 2e-3


def test_wide_band_needs_flat_occupation():
    with pytest.raises(ValidationError):
        noise_kernel(SpectralDensity.wide_band(0.5), BathConfig(1.0), "fermion", 0.0)


def test_memory_kernel_at_zero_lag():
    assert memory_kernel(LORENTZ, 0.0)[0, 0] == pytest.approx(0.25)


def test_memory_kernel_is_local_for_wide_band():
    assert isinstance(memory_kernel(SpectralDensity.wide_band(0.5), 0.0), LocalKernel)


def test_band_memory_kernel_matches_direct_quadrature():
    jd = SpectralDensity.lorentzian([(1.0, 0.0, 0.5)], support=(-1, 1))
    e = np.linspace(-1, 1, 200001)
    j = jd(e)[:, 0, 0].real
    for s in (0.0, 1.3, 7.0):
        direct = trapezoid(j * np.exp(-1j * e * s), e) / (2 * np.pi)
        assert abs(memory_kernel(jd, s)[0, 0] - direct) < 1e-8


@pytest.mark.parametrize("s, expected", sorted(LORENTZ_NOISE.items()))
def test_lorentzian_noise_kernel(s, expected):
    got = noise_kernel(LORENTZ, BathConfig(2.0, 0.1), "fermion", s)[0, 0]
    assert abs(got - expected) < 1e-8


@pytest.mark.parametrize(
    "jd, bath, stats",
    [
        (LORENTZ, BathConfig(2.0, 0.1), "fermion"),
        (SpectralDensity.ohmic(0.3, 1.0), BathConfig(1.0, -0.2), "boson"),
        (SpectralDensity.lorentzian([(1.0, 0.0, 0.5)], support=(-1, 1)), BathConfig(3.0), "fermion"),
    ],
    ids=["lorentzian", "ohmic", "band"],
)
def test_kernels_are_hermitian_under_time_reversal(jd, bath, stats):
    s = np.linspace(0.1, 5, 7)
    for kern in (lambda x: memory_kernel(jd, x), lambda x: noise_kernel(jd, bath, stats, x)):
        assert np.allclose(kern(-s), np.swapaxes(kern(s), -1, -2).conj(), atol=1e-12)


def test_boson_mu_inside_support_rejected():
    with pytest.raises(ValidationError):
        noise_kernel(SpectralDensity.ohmic(0.3, 1.0), BathConfig(1.0, 0.1), "boson", 0.0)


def test_propagator_contracts():
    model = SystemModel([[0.3, 0.1], [0.1, -0.2]], "fermion")
    jd = SpectralDensity.lorentzian([([[0.5, 0.1], [0.1, 0.3]], 0.0, 1.0)], dim=2)
    u = solve_u(model, jd, TimeGrid(20.0, 400))
    assert np.linalg.norm(u, ord=2, axis=(1, 2)).max() <= 1 + 1e-6


def test_growth_beyond_unit_norm_is_reported():
    with pytest.raises(StepSizeError):
        _check_contraction(np.array([np.eye(2), 1.01 * np.eye(2)]))


def test_second_order_without_extrapolation():
    model = SystemModel([[0.3]], "fermion")
    t = 8.0

    def at_end(n):
        return solve_u(model, LORENTZ, TimeGrid(t, n), extrapolate=False)[-1, 0, 0]

    ref = solve_u(model, LORENTZ, TimeGrid(t, 1600))[-1, 0, 0]
    e1, e2 = abs(at_end(100) - ref), abs(at_end(200) - ref)
    assert e1 / e2 >= 3


def test_spectral_reconstruction_agrees_with_dyson():
    model = SystemModel([[0.3]], "fermion")
    bath = BathConfig(2.0)
    grid = TimeGrid(10.0, 400)
    table = spectrum(model, LORENTZ, bath, energy_grid(model, LORENTZ, bath, t_max=grid.t_max))
    recon = reconstruct_u_spectral(find_localized_modes(model, LORENTZ, bath), table, grid)
    assert np.max(np.abs(recon - solve_u(model, LORENTZ, grid))) < 1e-6


def test_spectral_reconstruction_nyquist_guard():
    model = SystemModel([[0.3]], "fermion")
    table = spectrum(model, LORENTZ, BathConfig(2.0), np.linspace(-10, 10, 41))
    with pytest.raises(NyquistError):
        reconstruct_u_spectral([], table, TimeGrid(50.0, 100))


def test_v_is_hermitian_and_bounded():
    model = SystemModel([[0.3, 0.1], [0.1, -0.2]], "fermion")
    jd = SpectralDensity.lorentzian([([[0.5, 0.1], [0.1, 0.3]], 0.0, 1.0)], dim=2)
    gp = green_pair(model, jd, BathConfig(1.5, 0.05), TimeGrid(10.0, 200))
    assert np.allclose(gp.v, np.swapaxes(gp.v, -1, -2).conj())
    w = np.linalg.eigvalsh(gp.v)
    assert w.min() > -1e-8 and w.max() < 1 + 1e-8
    assert np.allclose(gp.v[0], 0)


def test_v_from_constant_kernel():
    # u = 1 and a constant kernel c give v(t) = c t^2 exactly under the trapezoid
    grid = TimeGrid(3.0, 30)
    u = np.ones((31, 1, 1), dtype=complex)
    v = compute_v(u, np.full((31, 1, 1), 0.2 + 0j), grid)
    assert np.allclose(v[:, 0, 0], 0.2 * grid.times**2)


def test_discrete_bath_route():
    model = SystemModel([[0.1]], "fermion")
    jd = SpectralDensity.discrete([0.4, -0.3], [[0.2, 0.15]])
    gp = green_pair(model, jd, BathConfig(1.0), TimeGrid(10.0, 100))
    u_dyson = solve_u(model, jd, TimeGrid(10.0, 400))[::4]
    assert np.max(np.abs(gp.u - u_dyson)) < 1e-6
