"""Time-domain Green functions u(t) and v(t, t).

u(t) comes either from the Dyson integro-differential equation or from the
spectral decomposition into localized modes plus the continuum D(eps).
v(t, t) is the double integral of u, the noise kernel and u^dag.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import exp1

from .model import (
    BathConfig,
    SpectralDensity,
    SpectralKind,
    Statistics,
    SystemModel,
    ValidationError,
    fermi_bose_occupation,
)
from .quadrature import EnergyGrid, panel_rule, split_edges
from .spectral import LocalizedMode, SpectrumTable, total_hamiltonian

TWO_PI = 2 * np.pi


class StepSizeError(RuntimeError):
    """The time step is too coarse and the propagator left the unit ball."""


class NyquistError(ValueError):
    """The energy grid is too coarse for the requested times."""


@dataclass(frozen=True)
class TimeGrid:
    t_max: float
    n_steps: int

    def __post_init__(self):
        if not (self.t_max > 0 and self.n_steps >= 1):
            raise ValidationError("time grid needs t_max > 0 and n_steps >= 1")

    @property
    def h(self) -> float:
        return self.t_max / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.t_max, self.n_steps + 1)

    def refined(self, factor: int = 2) -> "TimeGrid":
        return TimeGrid(self.t_max, self.n_steps * factor)


@dataclass(frozen=True)
class LocalKernel:
    """A kernel ``weight * delta(s)``; it acts as a local term in time."""

    weight: np.ndarray


@dataclass(frozen=True, eq=False)
class GreenPair:
    grid: TimeGrid
    u: np.ndarray
    v: np.ndarray


# --------------------------------------------------------------------------- kernels


def _fourier(rule: EnergyGrid, values: np.ndarray, s: np.ndarray) -> np.ndarray:
    """``sum_m w_m values_m exp(-i x_m s) / 2 pi`` for every s."""
    d = values.shape[-1]
    wv = (rule.weights[:, None, None] * values).reshape(rule.nodes.size, d * d)
    out = np.empty((s.size, d * d), dtype=complex)
    step = s[1] - s[0] if s.size > 1 else 0.0
    if s.size > 512 and np.allclose(np.diff(s), step, rtol=0, atol=1e-12 * max(1.0, abs(s[-1]))):
        # uniform lattice: one block of phases, shifted per block by a single exp
        block = 256
        table = np.exp(-1j * np.outer(step * np.arange(block), rule.nodes))
        for k in range(0, s.size, block):
            shifted = np.exp(-1j * s[k] * rule.nodes)[:, None] * wv
            m = min(block, s.size - k)
            out[k:k + m] = table[:m] @ shifted
        return out.reshape(s.size, d, d) / TWO_PI
    chunk = max(1, 2_000_000 // max(rule.nodes.size, 1))
    for k in range(0, s.size, chunk):
        out[k:k + chunk] = np.exp(-1j * np.outer(s[k:k + chunk], rule.nodes)) @ wv
    return out.reshape(s.size, d, d) / TWO_PI


def _band_rule(jd: SpectralDensity, lo: float, hi: float, s_max: float, extra=(), refine: int = 1) -> EnergyGrid:
    feat = min(jd.feature_width(), hi - lo)
    width = feat / 4
    if s_max > 0:
        width = min(width, 8.0 / s_max)
    pts = [lo, hi] + [p for p in list(jd.breakpoints()) + list(extra) if lo < p < hi]
    return panel_rule(split_edges(sorted(pts), width / refine), 20)


def _scaled_exp1(z: np.ndarray) -> np.ndarray:
    """``exp(z) E1(z)`` without overflow."""
    z = np.asarray(z, dtype=complex)
    out = np.empty_like(z)
    small = np.abs(z) < 500
    out[small] = np.exp(z[small]) * exp1(z[small])
    zl = z[~small]
    term = 1.0 / zl
    acc = term.copy()
    for n in range(1, 30):
        term = -term * n / zl
        acc += term
    out[~small] = acc
    return out


def _lorentz_left_integral(amplitude, center, width, x, s: np.ndarray) -> np.ndarray:
    """``int_{-inf}^{x} deps/2pi A W^2/((eps-c)^2+W^2) exp(-i eps s)`` for s >= 0.

    Closed through the lower half plane: the pole at ``c - iW`` contributes
    when ``c < x`` and the vertical leg ``x - i y`` reduces to exponential
    integrals.
    """
    s = np.asarray(s, dtype=float)
    out = np.zeros(s.shape, dtype=complex)
    zero = s == 0
    out[zero] = width / TWO_PI * (np.arctan((x - center) / width) + np.pi / 2)
    sp = s[~zero]
    delta = x - center
    p1 = width - 1j * delta
    p2 = -width - 1j * delta
    vertical = 1j * np.exp(-1j * x * sp) * (-width / 2) * (_scaled_exp1(-sp * p1) - _scaled_exp1(-sp * p2))
    pole = 0.5 * width * np.exp(-1j * center * sp - width * sp) if center < x else 0.0
    out[~zero] = pole + vertical / TWO_PI
    return out[..., None, None] * amplitude


def _hermitian_extend(s: np.ndarray, fn) -> np.ndarray:
    """Evaluate ``fn`` on |s| and use K(-s) = K(s)^dag for negative s."""
    s = np.atleast_1d(np.asarray(s, dtype=float))
    out = fn(np.abs(s))
    neg = s < 0
    out[neg] = np.swapaxes(out[neg], -1, -2).conj()
    return out


def memory_kernel(jd: SpectralDensity, s):
    """g(s) = int deps/2pi J(eps) exp(-i eps s); a :class:`LocalKernel` for wide bands."""
    if jd.kind is SpectralKind.WIDE_BAND:
        return LocalKernel(jd.amplitude.copy())
    scalar = np.ndim(s) == 0
    s_arr = np.atleast_1d(np.asarray(s, dtype=float))
    s_max = float(np.max(np.abs(s_arr), initial=0.0))

    def positive(sp):
        if jd.kind is SpectralKind.DISCRETE_MODES:
            v = jd.couplings
            return np.einsum("ik,sk,jk->sij", v, np.exp(-1j * np.outer(sp, jd.mode_energies)), v.conj())
        if jd.kind is SpectralKind.OHMIC_EXP_CUTOFF:
            return (1.0 / (TWO_PI * (1.0 / jd.cutoff + 1j * sp) ** 2))[:, None, None] * jd.amplitude
        if not jd.bounded:
            out = np.zeros(sp.shape + (jd.dim, jd.dim), dtype=complex)
            for t in jd.lorentzians:
                out += (0.5 * t.width * np.exp(-1j * t.center * sp - t.width * sp))[:, None, None] * t.amplitude
            return out
        rule = _band_rule(jd, *jd.support, s_max)
        return _fourier(rule, jd(rule.nodes), sp)

    out = _hermitian_extend(s_arr, positive)
    return out[0] if scalar else out


def noise_kernel(jd: SpectralDensity, bath: BathConfig, statistics, t1, t2=0.0):
    """g~(t1, t2) = int deps/2pi f(eps) J(eps) exp(-i eps (t1 - t2)).

    Depends on ``t1 - t2`` only; array arguments broadcast. Wide bands are
    supported for a flat occupation only and return a :class:`LocalKernel`.
    """
    stats = Statistics.parse(statistics)
    s = np.asarray(t1, dtype=float) - np.asarray(t2, dtype=float)
    scalar = np.ndim(s) == 0
    s_arr = np.atleast_1d(s)
    s_max = float(np.max(np.abs(s_arr), initial=0.0))
    flat = stats is Statistics.FERMION and bath.beta == 0.0

    if jd.kind is SpectralKind.WIDE_BAND:
        if not flat:
            raise ValidationError("wide-band noise kernels need a flat occupation (fermions at beta = 0)")
        return LocalKernel(0.5 * jd.amplitude)
    if stats is Statistics.BOSON and jd.kind is not SpectralKind.DISCRETE_MODES and not bath.mu < jd.support[0]:
        raise ValidationError("bosonic baths need mu below the spectral support")

    def positive(sp):
        if jd.kind is SpectralKind.DISCRETE_MODES:
            e = jd.mode_energies
            f = fermi_bose_occupation(bath, stats, e) if e.size else e
            v = jd.couplings
            return np.einsum("ik,sk,jk->sij", v * f, np.exp(-1j * np.outer(sp, e)), v.conj())
        if flat:
            return 0.5 * memory_kernel(jd, sp)
        if not jd.bounded:
            return _lorentz_noise(jd, bath, sp, s_max)
        lo, hi = jd.support
        extra = []
        if np.isinf(bath.beta):
            hi = min(hi, bath.mu)
            if hi <= lo:
                return np.zeros(sp.shape + (jd.dim, jd.dim), dtype=complex)
        else:
            extra = [bath.mu + k / bath.beta for k in (-32, -16, -8, -4, -2, -1, -0.5, 0, 0.5, 1, 2, 4, 8, 16, 32)]
        rule = _band_rule(jd, lo, hi, s_max, extra)
        f = fermi_bose_occupation(bath, stats, rule.nodes)
        return _fourier(rule, f[:, None, None] * jd(rule.nodes), sp)

    out = _hermitian_extend(s_arr, positive)
    return out[0] if scalar else out


def _lorentz_noise(jd: SpectralDensity, bath: BathConfig, sp: np.ndarray, s_max: float) -> np.ndarray:
    # Fermions on the whole line: below mu - L the occupation is 1 to within
    # e^-40, so that tail is the closed-form Lorentzian integral; above
    # mu + L it vanishes; the window in between is integrated numerically.
    out = np.zeros(sp.shape + (jd.dim, jd.dim), dtype=complex)
    if np.isinf(bath.beta):
        for t in jd.lorentzians:
            x = bath.mu
            out += _lorentz_left_integral(t.amplitude, t.center, t.width, x, sp)
        return out
    span = 40.0 / bath.beta
    x_left = bath.mu - span
    widths = [t.width for t in jd.lorentzians]
    while any(abs(x_left - t.center) < 0.1 * t.width for t in jd.lorentzians):
        x_left -= min(widths)
    x_right = bath.mu + span
    for t in jd.lorentzians:
        out += _lorentz_left_integral(t.amplitude, t.center, t.width, x_left, sp)
    extra = [bath.mu + k / bath.beta for k in (-32, -16, -8, -4, -2, -1, -0.5, 0, 0.5, 1, 2, 4, 8, 16, 32)]
    rule = _band_rule(jd, x_left, x_right, s_max, extra)
    f = fermi_bose_occupation(bath, Statistics.FERMION, rule.nodes)
    return out + _fourier(rule, f[:, None, None] * jd(rule.nodes), sp)


def kernel_table(kernel, grid: TimeGrid):
    """Sample a kernel callable on ``s = k h`` or pass a table/local kernel through."""
    if isinstance(kernel, LocalKernel):
        return kernel
    if callable(kernel):
        return kernel(grid.h * np.arange(grid.n_steps + 1))
    table = np.asarray(kernel, dtype=complex)
    if table.shape[0] != grid.n_steps + 1:
        raise ValidationError("kernel table length must be n_steps + 1")
    return table


# --------------------------------------------------------------------------- u(t)


def _volterra(eps_s: np.ndarray, kernel, grid: TimeGrid) -> np.ndarray:
    """Trapezoidal Volterra rule; the linear corrector is solved exactly."""
    d = eps_s.shape[0]
    n, h = grid.n_steps, grid.h
    eye = np.eye(d, dtype=complex)
    local = kernel.weight / 2 if isinstance(kernel, LocalKernel) else np.zeros((d, d))
    g = None if isinstance(kernel, LocalKernel) else kernel
    a = -1j * eps_s - local
    u = np.empty((n + 1, d, d), dtype=complex)
    u[0] = eye
    g0 = g[0] if g is not None else np.zeros((d, d))
    lhs_inv = np.linalg.inv(eye - 0.5 * h * a + 0.25 * h * h * g0)
    f_prev = a @ u[0]  # the memory integral vanishes at tau = 0
    for k in range(n):
        rhs = u[k] + 0.5 * h * f_prev
        if g is not None:
            hist = 0.5 * g[k + 1] @ u[0]
            if k >= 1:
                hist = hist + np.tensordot(g[k:0:-1], u[1:k + 1], axes=([0, 2], [0, 1]))
            rhs = rhs - 0.5 * h * h * hist
        u[k + 1] = lhs_inv @ rhs
        f_prev = a @ u[k + 1]
        if g is not None:
            f_prev = f_prev - h * (hist + 0.5 * g0 @ u[k + 1])
    return u


def _check_contraction(u: np.ndarray, tol: float = 1e-4) -> None:
    norms = np.linalg.norm(u, ord=2, axis=(1, 2))
    if np.max(norms) > 1 + tol:
        raise StepSizeError(f"|u| reached {np.max(norms):.6f}; reduce the time step")


def solve_u(model: SystemModel, jd: SpectralDensity, grid: TimeGrid, *, extrapolate: bool = True) -> np.ndarray:
    """u on the grid from the Dyson equation.

    ``extrapolate`` combines steps h and h/2 (Richardson), raising the order
    from two to four.
    """
    if jd.is_zero():
        w, vecs = np.linalg.eigh(model.eps_s)
        return np.einsum("ik,tk,jk->tij", vecs, np.exp(-1j * np.outer(grid.times, w)), vecs.conj())

    def run(g: TimeGrid):
        kern = memory_kernel(jd, g.h * np.arange(g.n_steps + 1))
        return _volterra(model.eps_s, kern, g)

    coarse = run(grid)
    _check_contraction(coarse)
    if not extrapolate:
        return coarse
    fine = run(grid.refined(2))
    return (4 * fine[::2] - coarse) / 3


def reconstruct_u_spectral(modes: list[LocalizedMode], table: SpectrumTable | None, grid: TimeGrid) -> np.ndarray:
    """u(t) = sum_l Z_l exp(-i eps_l t) + int deps/2pi D(eps) exp(-i eps t)."""
    t = grid.times
    d = modes[0].Z_l.shape[0] if modes else table.D.shape[-1]
    u = np.zeros((t.size, d, d), dtype=complex)
    for m in modes:
        u += np.exp(-1j * m.eps_l * t)[:, None, None] * m.Z_l
    if table is not None and table.energies.size:
        e = table.energies
        gaps = np.diff(e)
        if gaps.size and np.max(gaps) >= np.pi / grid.t_max:
            raise NyquistError(f"energy spacing {np.max(gaps):.3g} exceeds pi/t_max = {np.pi / grid.t_max:.3g}")
        u += _fourier(EnergyGrid(e, table.weights), table.D, t)
    return u


# --------------------------------------------------------------------------- v(t, t)


def compute_v(u: np.ndarray, noise, grid: TimeGrid) -> np.ndarray:
    """Double trapezoid of ``int int u(t-t1) g~(t1-t2) u^dag(t-t2)``.

    After substituting tau = t - t1 the square grows by one row and one
    column per step, so all outputs come from a running sum in O(n^2).
    """
    kern = kernel_table(noise, grid)
    n, h = grid.n_steps, grid.h
    d = u.shape[-1]
    v = np.zeros((n + 1, d, d), dtype=complex)
    if isinstance(kern, LocalKernel):
        terms = u @ kern.weight @ np.swapaxes(u, -1, -2).conj()
        v[1:] = np.cumsum(0.5 * h * (terms[1:] + terms[:-1]), axis=0)
    else:
        udag = np.swapaxes(u, -1, -2).conj()
        wu = u.copy()
        wu[0] *= 0.5
        q = 0.25 * u[0] @ kern[0] @ udag[0]
        for k in range(1, n + 1):
            x = np.tensordot(wu[:k], kern[k:0:-1], axes=([0, 2], [0, 1]))  # sum_b w_b u_b G_{k-b}
            r = u[k] @ x.conj().T
            diag = u[k] @ kern[0] @ udag[k]
            v[k] = h * h * (q + 0.5 * (r + r.conj().T) + 0.25 * diag)
            q = q + r + r.conj().T + diag
    return 0.5 * (v + np.swapaxes(v, -1, -2).conj())


# --------------------------------------------------------------------------- exact discrete route


def discrete_green_functions(model: SystemModel, jd: SpectralDensity, bath: BathConfig, times) -> tuple[np.ndarray, np.ndarray]:
    """u and v at arbitrary times for a bath of discrete modes.

    u comes from the eigen-decomposition of the single-particle matrix and the
    double integral for v is done in closed form mode by mode.
    """
    times = np.asarray(times, dtype=float)
    d = model.dim
    e = jd.mode_energies
    h = total_hamiltonian(model, jd)
    w, vecs = np.linalg.eigh(h)
    ps = vecs[:d]  # system components of every eigenvector
    u = np.einsum("il,tl,jl->tij", ps, np.exp(-1j * np.outer(times, w)), ps.conj())
    v = np.zeros_like(u)
    if e.size:
        f = fermi_bose_occupation(bath, model.statistics, e)
        # y_k(t) = int_0^t u(tau) exp(i e_k tau) dtau V_k
        x = e[None, :] - w[:, None]  # (l, k)
        tt = times[:, None, None]
        phi = tt * np.exp(0.5j * x * tt) * np.sinc(x * tt / TWO_PI)  # (t, l, k)
        proj = ps.conj().T @ jd.couplings  # (l, k): <psi_l|V_k> on the system block
        y = np.einsum("il,tlk,lk->tik", ps, phi, proj)
        v = np.einsum("tik,k,tjk->tij", y, f, y.conj())
    return u, 0.5 * (v + np.swapaxes(v, -1, -2).conj())


def green_pair(
    model: SystemModel,
    jd: SpectralDensity,
    bath: BathConfig,
    grid: TimeGrid,
    *,
    extrapolate: bool = True,
) -> GreenPair:
    """u and v on ``grid`` by the most accurate available route."""
    if jd.kind is SpectralKind.DISCRETE_MODES:
        u, v = discrete_green_functions(model, jd, bath, grid.times)
        return GreenPair(grid, u, v)

    def run(g: TimeGrid):
        u = solve_u(model, jd, g, extrapolate=False)
        noise = noise_kernel(jd, bath, model.statistics, g.h * np.arange(g.n_steps + 1))
        return u, compute_v(u, noise, g)

    u, v = run(grid)
    _check_contraction(u)
    if extrapolate and not jd.is_zero():
        uf, vf = run(grid.refined(2))
        u = (4 * uf[::2] - u) / 3
        v = (4 * vf[::2] - v) / 3
    return GreenPair(grid, u, v)
