"""Self-energy, resolvent, localized modes and the broadened spectrum D(eps)."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.optimize import brentq

from .model import BathConfig, SpectralDensity, SpectralKind, SystemModel, ValidationError
from .quadrature import EnergyGrid, QuadratureError, adaptive_edges, graded_points, panel_rule, split_edges

TWO_PI = 2 * np.pi
SCAN_POINTS = 2000
SCAN_BANDWIDTHS = 10.0
ROOT_CLUSTER_TOL = 1e-8
CONTOUR_POINTS = 64
_CHUNK = 96


class SingularResolventError(ArithmeticError):
    """The resolvent is evaluated at (or numerically on top of) a pole."""


class RootBracketError(RuntimeError):
    """A sign change was seen but the root could not be refined."""


@dataclass(frozen=True, eq=False)
class LocalizedMode:
    eps_l: float
    Z_l: np.ndarray

    @property
    def rank(self) -> int:
        return int(np.sum(np.linalg.eigvalsh(self.Z_l) > 1e-10))


@dataclass(frozen=True, eq=False)
class SpectrumTable:
    """D(eps) sampled on quadrature nodes; ``weights`` integrate over energy."""

    energies: np.ndarray
    weights: np.ndarray
    D: np.ndarray
    eta: float
    min_eig_raw: float

    def integrate(self, factor=None) -> np.ndarray:
        """``sum_k w_k factor(eps_k) D(eps_k) / 2 pi``."""
        w = self.weights if factor is None else self.weights * factor
        return np.einsum("k,kij->ij", w, self.D) / TWO_PI


# --------------------------------------------------------------------------- self-energy


@lru_cache(maxsize=64)
def _sigma_rule(jd: SpectralDensity, refine: int = 1) -> EnergyGrid:
    a, b = jd.support
    width = b - a
    feat = min(jd.feature_width(), width)
    pts = [p for p in jd.breakpoints() if a <= p <= b]
    pts += graded_points(a, 1e-12 * width, min(feat, width / 4), +1)
    pts += graded_points(b, 1e-12 * width, min(feat, width / 4), -1)
    edges = split_edges(sorted(pts), feat / (4 * refine))
    return panel_rule(edges, 20 + 4 * (refine - 1))


def _sigma_numeric(jd: SpectralDensity, z: np.ndarray, refine: int = 1) -> np.ndarray:
    # Subtract J at the nearest support point so the integrand stays bounded
    # near the real axis; the subtracted piece integrates to a pair of logs.
    rule = _sigma_rule(jd, refine)
    a, b = jd.support
    jx = jd(rule.nodes)
    out = np.empty(z.shape + (jd.dim, jd.dim), dtype=complex)
    for s in range(0, z.size, _CHUNK):
        zc = z[s:s + _CHUNK]
        j0 = jd(np.clip(zc.real, a, b))
        kern = rule.weights / (zc[:, None] - rule.nodes)
        body = np.einsum("cm,cmij->cij", kern, jx[None] - j0[:, None])
        logs = np.log(zc - a) - np.log(zc - b)
        out[s:s + _CHUNK] = (body + j0 * logs[:, None, None]) / TWO_PI
    return out


def self_energy(model: SystemModel, jd: SpectralDensity, bath: BathConfig, z, *, check: bool = False) -> np.ndarray:
    """Sigma(z) = int deps/2pi J(eps)/(z - eps), vectorized over ``z``.

    Real ``z`` must lie outside the support; on the support evaluate at
    ``eps + i eta``. ``check=True`` repeats the integral with a refined rule
    and raises :class:`QuadratureError` when the two disagree.
    """
    zz = np.atleast_1d(np.asarray(z, dtype=complex))
    d = jd.dim
    on_support = (zz.imag == 0) & (zz.real >= jd.support[0]) & (zz.real <= jd.support[1])
    if jd.kind is SpectralKind.DISCRETE_MODES:
        v = jd.couplings
        out = np.einsum("ik,zk,jk->zij", v, 1.0 / (zz[:, None] - jd.mode_energies), v.conj())
    elif np.any(on_support) and not jd.is_zero():
        raise ValidationError("self-energy on the spectral support needs Im z != 0")
    elif jd.kind is SpectralKind.WIDE_BAND:
        out = -0.5j * np.sign(zz.imag)[:, None, None] * jd.amplitude
    elif jd.kind is SpectralKind.LORENTZIAN_SUM and not jd.bounded:
        out = np.zeros(zz.shape + (d, d), dtype=complex)
        sgn = np.sign(zz.imag)
        for t in jd.lorentzians:
            out += (0.5 * t.width / (zz - t.center + 1j * t.width * sgn))[:, None, None] * t.amplitude
    else:
        out = _sigma_numeric(jd, zz)
        if check:
            ref = _sigma_numeric(jd, zz, refine=2)
            err = np.max(np.abs(out - ref))
            if err > 1e-9 * max(1.0, np.max(np.abs(ref))):
                raise QuadratureError(f"self-energy quadrature error {err:.2e}")
    return out if np.ndim(z) else out[0]


def resolvent(model: SystemModel, jd: SpectralDensity, bath: BathConfig, z, *, cond_limit: float = 1e13) -> np.ndarray:
    """U(z) = (z - eps_S - Sigma(z))^{-1}, vectorized over ``z``."""
    zz = np.atleast_1d(np.asarray(z, dtype=complex))
    m = zz[:, None, None] * np.eye(model.dim) - model.eps_s - self_energy(model, jd, bath, zz)
    if np.any(np.linalg.cond(m) > cond_limit):
        raise SingularResolventError("z is at a pole of the resolvent")
    out = np.linalg.inv(m)
    return out if np.ndim(z) else out[0]


def lamb_shift(model, jd, bath, eps) -> np.ndarray:
    """Hermitian part of Sigma(eps + i eta)."""
    eta = bath.eta_for(jd)
    s = self_energy(model, jd, bath, np.asarray(eps, dtype=float) + 1j * eta)
    return 0.5 * (s + np.swapaxes(s, -1, -2).conj())


# --------------------------------------------------------------------------- localized modes


def _cluster(values: list[float], tol: float) -> list[list[float]]:
    groups: list[list[float]] = []
    for x in sorted(values):
        if groups and x - groups[-1][-1] <= tol:
            groups[-1].append(x)
        else:
            groups.append([x])
    return groups


def _modes_from_eig(energies, vectors_s, tol=ROOT_CLUSTER_TOL) -> list[LocalizedMode]:
    modes = []
    order = np.argsort(energies)
    energies, vectors_s = energies[order], vectors_s[:, order]
    start = 0
    for k in range(1, energies.size + 1):
        if k == energies.size or energies[k] - energies[k - 1] > tol:
            block = vectors_s[:, start:k]
            z = block @ block.conj().T
            if np.trace(z).real > 1e-14:
                modes.append(LocalizedMode(float(np.mean(energies[start:k])), 0.5 * (z + z.conj().T)))
            start = k
    return modes


def _branch_values(model, jd, bath, eps: np.ndarray) -> np.ndarray:
    sig = self_energy(model, jd, bath, eps.astype(complex))
    h = model.eps_s + 0.5 * (sig + np.swapaxes(sig, -1, -2).conj())
    return np.linalg.eigvalsh(h) - eps[:, None]


def _scan_side(model, jd, bath, edge: float, side: int, bw: float) -> list[float]:
    far = edge + side * SCAN_BANDWIDTHS * bw
    pts = np.linspace(far, edge, SCAN_POINTS + 1)[:-1]
    near = edge + side * bw * 10.0 ** -np.arange(3, 13)
    pts = np.unique(np.concatenate([pts, near]))
    vals = _branch_values(model, jd, bath, pts)
    roots = []
    for k in range(model.dim):
        g = vals[:, k]
        for i in np.nonzero(np.sign(g[:-1]) * np.sign(g[1:]) <= 0)[0]:
            lo, hi = pts[i], pts[i + 1]
            if g[i] == 0:
                roots.append(float(lo))
                continue
            try:
                r = brentq(lambda e: _branch_values(model, jd, bath, np.array([e]))[0, k], lo, hi, xtol=1e-15 * bw, rtol=1e-15)
            except ValueError as exc:
                raise RootBracketError(f"root refinement failed in [{lo}, {hi}]") from exc
            roots.append(float(r))
    return roots


def residue(model, jd, bath, eps_l: float, radius: float) -> np.ndarray:
    """(1/2 pi i) closed integral of U(z) around ``eps_l`` (trapezoid on a circle)."""
    theta = TWO_PI * np.arange(CONTOUR_POINTS) / CONTOUR_POINTS
    phase = np.exp(1j * theta)
    u = resolvent(model, jd, bath, eps_l + radius * phase, cond_limit=np.inf)
    z = radius * np.einsum("k,kij->ij", phase, u) / CONTOUR_POINTS
    return 0.5 * (z + z.conj().T)


def find_localized_modes(model: SystemModel, jd: SpectralDensity, bath: BathConfig) -> list[LocalizedMode]:
    """Real poles of U outside the support with their residues Z_l.

    Modes embedded inside the continuum are not searched for.
    """
    if jd.is_zero():
        w, vecs = np.linalg.eigh(model.eps_s)
        return _modes_from_eig(w, vecs)
    if jd.kind is SpectralKind.DISCRETE_MODES:
        w, vecs = np.linalg.eigh(total_hamiltonian(model, jd))
        return _modes_from_eig(w, vecs[: model.dim])
    a, b = jd.support
    if not (np.isfinite(a) or np.isfinite(b)):
        return []
    bw = (b - a) if jd.bounded else jd.energy_scale()
    roots = []
    if np.isfinite(a):
        roots += _scan_side(model, jd, bath, a, -1, bw)
    if np.isfinite(b):
        roots += _scan_side(model, jd, bath, b, +1, bw)
    centers = [float(np.mean(g)) for g in _cluster(roots, ROOT_CLUSTER_TOL * max(1.0, bw))]
    modes = []
    for k, e in enumerate(centers):
        gaps = [abs(e - x) for x in (a, b) if np.isfinite(x)]
        gaps += [abs(e - o) for j, o in enumerate(centers) if j != k]
        z = residue(model, jd, bath, e, 0.5 * min(gaps))
        modes.append(LocalizedMode(e, z))
    return modes


def total_hamiltonian(model: SystemModel, jd: SpectralDensity) -> np.ndarray:
    """Single-particle matrix of system plus discrete bath modes."""
    d, n = model.dim, jd.mode_energies.size
    h = np.zeros((d + n, d + n), dtype=complex)
    h[:d, :d] = model.eps_s
    h[:d, d:] = jd.couplings
    h[d:, :d] = jd.couplings.conj().T
    h[d:, d:] = np.diag(jd.mode_energies)
    return h


# --------------------------------------------------------------------------- broadened spectrum


def broadened_density(model, jd, bath, eps) -> tuple[np.ndarray, float]:
    """D(eps) = U(eps+i eta) J(eps) U(eps+i eta)^dag, PSD-clipped, and the raw min eigenvalue."""
    eps = np.asarray(eps, dtype=float)
    if jd.kind is SpectralKind.DISCRETE_MODES or eps.size == 0:
        return np.zeros(eps.shape + (model.dim, model.dim), dtype=complex), 0.0
    eta = bath.eta_for(jd)
    u = resolvent(model, jd, bath, eps + 1j * eta, cond_limit=np.inf)
    u = u.reshape((-1,) + u.shape[-2:])
    d = u @ jd(eps).reshape(u.shape) @ np.swapaxes(u, -1, -2).conj()
    d = 0.5 * (d + np.swapaxes(d, -1, -2).conj())
    w, vecs = np.linalg.eigh(d)
    scale = max(1.0, float(np.max(np.abs(w), initial=0.0)))
    min_raw = float(w.min()) / scale if w.size else 0.0
    w = np.clip(w, 0.0, None)
    d = np.einsum("kij,kj,klj->kil", vecs, w, vecs.conj())
    return d.reshape(eps.shape + d.shape[-2:]), min_raw


def energy_grid(
    model: SystemModel,
    jd: SpectralDensity,
    bath: BathConfig,
    *,
    t_max: float | None = None,
    tol: float = 1e-12,
) -> EnergyGrid:
    """Gauss-Legendre grid adapted to D(eps).

    With ``t_max`` the panels also resolve ``exp(-i eps t)`` up to ``t_max``
    and an unbounded support is cut to a finite window. Without it the grid
    carries geometric tail panels so that non-oscillatory integrals converge.
    """
    if jd.kind is SpectralKind.DISCRETE_MODES or jd.is_zero():
        return EnergyGrid(np.zeros(0), np.zeros(0))
    scale = jd.energy_scale()
    levels = list(np.linalg.eigvalsh(model.eps_s))
    pts = list(jd.breakpoints()) + levels
    if np.isfinite(bath.beta) and bath.beta > 0:
        pts += [bath.mu + s * k / bath.beta for s in (-1, 1) for k in (0.25, 0.5, 1, 2, 4, 8, 16, 32)]
    a, b = jd.support
    lo = a if np.isfinite(a) else min(pts) - 100 * scale
    hi = b if np.isfinite(b) else max(pts) + 100 * scale
    pts = sorted({p for p in pts + [lo, hi] if lo <= p <= hi})
    max_width = (hi - lo) / 8
    if t_max is not None and t_max > 0:
        max_width = min(max_width, 8.0 / t_max)

    def dens(x):
        return broadened_density(model, jd, bath, x)[0].reshape(x.size, -1)

    edges = adaptive_edges(dens, pts, tol, max_width=max_width)
    grid = panel_rule(edges)
    if t_max is None and not jd.bounded:
        tails = []
        for edge, side in ((lo, -1), (hi, +1)):
            if not np.isfinite(a if side < 0 else b):
                span = max(abs(edge), scale)
                tails.append(np.array(sorted(edge + side * span * (2.0 ** np.arange(0, 30) - 1))))
        for t in tails:
            g = panel_rule(t)
            grid = EnergyGrid(np.concatenate([grid.nodes, g.nodes]), np.concatenate([grid.weights, g.weights]))
        order = np.argsort(grid.nodes)
        grid = EnergyGrid(grid.nodes[order], grid.weights[order])
    return grid


def spectrum(model: SystemModel, jd: SpectralDensity, bath: BathConfig, grid=None) -> SpectrumTable:
    """Tabulate D(eps). ``grid`` may be an :class:`EnergyGrid` or plain energies (trapezoid weights)."""
    if grid is None:
        grid = energy_grid(model, jd, bath)
    elif not isinstance(grid, EnergyGrid):
        grid = EnergyGrid.trapezoid(grid)
    d, min_raw = broadened_density(model, jd, bath, grid.nodes)
    return SpectrumTable(grid.nodes, grid.weights, d, bath.eta_for(jd), min_raw)


def sum_rule_residual(modes: list[LocalizedMode], table: SpectrumTable) -> float:
    """Max-abs deviation of sum Z_l + int D/2pi from the identity."""
    acc = table.integrate()
    for m in modes:
        acc = acc + m.Z_l
    return float(np.max(np.abs(acc - np.eye(acc.shape[0]))))


def footnote_density(model, jd, bath, eps) -> np.ndarray:
    """``-2 Im U(eps + i eta)`` in the matrix sense, i.e. ``i (U - U^dag)``."""
    eta = bath.eta_for(jd)
    u = resolvent(model, jd, bath, np.asarray(eps, dtype=float) + 1j * eta, cond_limit=np.inf)
    return 1j * (u - np.swapaxes(u, -1, -2).conj())
