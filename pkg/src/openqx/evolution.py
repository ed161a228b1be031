"""Exact reduced density matrix, thermal-like states and the master equation."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .fock import (
    FockBasis,
    annihilation_operators,
    build_submatrix,
    coherent_overlaps,
    determinant,
    enumerate_splits,
    factorial_product,
    permanent,
)
from .greens import TimeGrid
from .model import Statistics, ValidationError

TRUNCATION_LIMIT = 1e-6


class TruncationError(RuntimeError):
    """Too much probability falls outside the truncated bosonic basis."""


class NearSingularError(ArithmeticError):
    """u(t) is not safely invertible."""


class TraceDriftError(RuntimeError):
    """The master-equation integrator lost trace beyond tolerance."""


@dataclass(frozen=True, eq=False)
class ReducedDensityMatrix:
    basis: FockBasis
    mat: np.ndarray
    truncation_mass: float = 0.0
    hermiticity_fix: float = 0.0

    def audit(self) -> dict:
        m = self.mat
        return {
            "trace_deviation": float(abs(np.trace(m) - 1)),
            "min_eigenvalue": float(np.linalg.eigvalsh(0.5 * (m + m.conj().T)).min()),
            "hermiticity": float(np.max(np.abs(m - m.conj().T), initial=0.0)),
            "truncation_mass": float(self.truncation_mass),
        }

    def passes_audit(self, trace_tol=1e-6, eig_tol=1e-8, herm_tol=1e-10) -> bool:
        a = self.audit()
        return a["trace_deviation"] <= trace_tol and a["min_eigenvalue"] >= -eig_tol and a["hermiticity"] <= herm_tol

    def populations(self) -> np.ndarray:
        return np.real(np.diag(self.mat)).copy()

    def purity(self) -> float:
        return float(np.real(np.trace(self.mat @ self.mat)))


def density_matrix(basis: FockBasis, entries) -> ReducedDensityMatrix:
    """Build rho from ``{(I, J): coefficient}``; the Hermitian partners must be present."""
    m = np.zeros((basis.size, basis.size), dtype=complex)
    for (occ_i, occ_j), c in entries.items():
        try:
            m[basis.index[tuple(occ_i)], basis.index[tuple(occ_j)]] = c
        except KeyError as exc:
            raise ValidationError(f"state {exc.args[0]} is outside the basis") from None
    return ReducedDensityMatrix(basis, m)


def pure_state(basis: FockBasis, amplitudes) -> ReducedDensityMatrix:
    """|psi><psi| from ``{I: amplitude}`` (normalized here)."""
    psi = np.zeros(basis.size, dtype=complex)
    for occ, a in amplitudes.items():
        psi[basis.index[tuple(occ)]] = a
    psi /= np.linalg.norm(psi)
    return ReducedDensityMatrix(basis, np.outer(psi, psi.conj()))


def trace_norm(a: np.ndarray) -> float:
    return float(np.sum(np.abs(np.linalg.eigvalsh(0.5 * (a + a.conj().T)))))


def trace_distance(rho1, rho2) -> float:
    m1 = getattr(rho1, "mat", rho1)
    m2 = getattr(rho2, "mat", rho2)
    return 0.5 * trace_norm(m1 - m2)


@lru_cache(maxsize=32)
def _operators(basis: FockBasis):
    a = annihilation_operators(basis)
    adag = [x.T.copy() for x in a]
    return a, adag


def one_body_matrix(rho: ReducedDensityMatrix) -> np.ndarray:
    """n_ij = Tr[rho a_j^dag a_i]."""
    a, adag = _operators(rho.basis)
    d = len(a)
    return np.array([[np.trace(rho.mat @ adag[j] @ a[i]) for j in range(d)] for i in range(d)])


# --------------------------------------------------------------------------- dressed matrices


@dataclass(frozen=True, eq=False)
class DressedMatrices:
    """Time-local combinations of u and v entering the exact solution."""

    statistics: Statistics
    u: np.ndarray
    v: np.ndarray
    a_tilde: np.ndarray
    u_tilde: np.ndarray
    thermal_kernel: np.ndarray
    log_norm: float

    @classmethod
    def from_green(cls, u, v, statistics) -> "DressedMatrices":
        stats = Statistics.parse(statistics)
        u = np.asarray(u, dtype=complex)
        v = np.asarray(v, dtype=complex)
        d = u.shape[0]
        one_pm_v = np.eye(d) + stats.zeta * v
        if np.linalg.cond(one_pm_v) > 1e12:
            raise NearSingularError("1 - v is singular: a fermion mode is fully occupied")
        inv = np.linalg.inv(one_pm_v)
        u_tilde = inv @ u
        a_tilde = np.eye(d) - u.conj().T @ inv @ u
        sign, logdet = np.linalg.slogdet(one_pm_v)
        return cls(stats, u, v, a_tilde, u_tilde, v @ inv, stats.zeta * float(logdet))


# --------------------------------------------------------------------------- thermal-like state


def thermal_like_state(v, basis: FockBasis) -> ReducedDensityMatrix:
    """Gaussian state whose one-body matrix Tr[rho a_j^dag a_i] equals v."""
    v = np.asarray(v, dtype=complex)
    v = 0.5 * (v + v.conj().T)
    occ, rot = np.linalg.eigh(v)
    fermion = basis.statistics is Statistics.FERMION
    occ = np.clip(occ, 0.0, 1.0 if fermion else None)
    a, adag = _operators(basis)
    cdag = [sum(rot[j, lam] * adag[j] for j in range(basis.dim)) for lam in range(basis.dim)]
    vac = np.zeros(basis.size, dtype=complex)
    vac[0] = 1.0
    probs = np.empty(basis.size)
    vecs = np.empty((basis.size, basis.size), dtype=complex)
    for k, state in enumerate(basis.states):
        p = 1.0
        psi = vac
        for lam in reversed(range(basis.dim)):
            c = state[lam]
            n = occ[lam]
            p *= (n**c * (1 - n) ** (1 - c)) if fermion else (n**c / (1 + n) ** (c + 1))
            for _ in range(c):
                psi = cdag[lam] @ psi
            psi = psi / math.sqrt(math.factorial(c))
        probs[k] = p
        vecs[:, k] = psi
    kept = float(probs.sum())
    if not fermion:
        lost_norm = float(np.max(np.abs(np.linalg.norm(vecs, axis=0) - 1)))
        if lost_norm > 1e-12:
            raise TruncationError("n_max is below n_cap; rotated Fock states leave the basis")
        if 1 - kept > TRUNCATION_LIMIT:
            raise TruncationError(f"discarded thermal probability {1 - kept:.2e} exceeds {TRUNCATION_LIMIT:g}")
    rho = (vecs * (probs / kept)) @ vecs.conj().T
    return ReducedDensityMatrix(basis, 0.5 * (rho + rho.conj().T), truncation_mass=max(0.0, 1 - kept))


# --------------------------------------------------------------------------- exact evolution


def _strings(basis: FockBasis, u_tilde: np.ndarray):
    """Cache of dressed creation strings prod_n [(a^dag u~)_n]^{c_n}, ascending n."""
    a, adag = _operators(basis)
    d = basis.dim
    b = [sum(u_tilde[m, n] * adag[m] for m in range(d)) for n in range(d)]
    cache: dict = {}

    def get(counts):
        key = tuple(counts)
        if key not in cache:
            out = np.eye(basis.size, dtype=complex)
            for n in range(d):
                for _ in range(counts[n]):
                    out = out @ b[n]
            cache[key] = out
        return cache[key]

    return get


def evolve_exact(rho0: ReducedDensityMatrix, dressed: DressedMatrices, basis: FockBasis | None = None) -> ReducedDensityMatrix:
    """Assemble rho(t) from the initial matrix elements and the dressed matrices.

    Every nonzero rho_IJ(0) contributes a sum over subsequence splits: the
    retained parts give a permanent (bosons) or determinant (fermions) of
    A~, and the complements become dressed creation strings around the
    thermal-like state. Pairs are visited in basis order so the accumulation
    is deterministic.
    """
    basis = basis or rho0.basis
    stats = basis.statistics
    th = thermal_like_state(dressed.v, basis)
    string = _strings(basis, dressed.u_tilde)
    reduce = permanent if stats is Statistics.BOSON else determinant
    coeffs: dict = {}
    rows, cols = np.nonzero(np.abs(rho0.mat) > 0)
    for r, c in zip(rows, cols):
        occ_i, occ_j = basis.states[r], basis.states[c]
        pref = rho0.mat[r, c] / math.sqrt(factorial_product(occ_i) * factorial_product(occ_j))
        for si, sj in enumerate_splits(occ_i, occ_j, stats):
            amp = reduce(build_submatrix(dressed.a_tilde, si.chosen, sj.chosen))
            if amp == 0:
                continue
            key = (si.complement, sj.complement)
            coeffs[key] = coeffs.get(key, 0.0) + pref * si.weight * sj.weight * amp
    out = np.zeros((basis.size, basis.size), dtype=complex)
    for (ci, cj), w in coeffs.items():
        out += w * (string(ci) @ th.mat @ string(cj).conj().T)
    herm = float(np.max(np.abs(out - out.conj().T), initial=0.0))
    out = 0.5 * (out + out.conj().T)
    deficit = max(0.0, float(np.real(np.trace(rho0.mat) - np.trace(out))))
    if stats is Statistics.BOSON and deficit > TRUNCATION_LIMIT:
        raise TruncationError(f"dressed strings push {deficit:.2e} of probability past the occupation cap")
    lost = th.truncation_mass + deficit
    return ReducedDensityMatrix(basis, out, truncation_mass=lost, hermiticity_fix=herm)


def evolve_trajectory(rho0: ReducedDensityMatrix, u_series, v_series) -> list[ReducedDensityMatrix]:
    stats = rho0.basis.statistics
    return [evolve_exact(rho0, DressedMatrices.from_green(u, v, stats)) for u, v in zip(u_series, v_series)]


# --------------------------------------------------------------------------- coherent states


def coherent_matrix_element(rho: ReducedDensityMatrix, eta, *, rho0=None, dressed=None, rtol: float = 1e-7) -> complex:
    """<eta^*| rho |eta> with unnormalized bosonic coherent states.

    When ``rho0`` and ``dressed`` are given the value is also computed from
    the closed form in the initial matrix elements and the two must agree.
    """
    if rho.basis.statistics is not Statistics.BOSON:
        raise ValidationError("coherent-state matrix elements are implemented for bosons only")
    ov = coherent_overlaps(rho.basis, eta)
    value = complex(ov @ rho.mat @ ov.conj())
    if rho0 is not None and dressed is not None:
        other = coherent_closed_form(rho0, dressed, eta)
        if abs(value - other) > rtol * max(1.0, abs(other)):
            raise AssertionError(f"coherent routes disagree: {value} vs {other}")
    return value


def coherent_closed_form(rho0: ReducedDensityMatrix, dressed: DressedMatrices, eta) -> complex:
    """<eta^*| rho(t) |eta> straight from rho_IJ(0), u~, A~ and v."""
    basis = rho0.basis
    eta = np.asarray(eta, dtype=complex)
    x = dressed.u_tilde.T @ eta.conj()  # (eta^* u~)_n
    y = dressed.u_tilde.conj().T @ eta  # (u~^dag eta)_n
    gauss = np.exp(eta.conj() @ dressed.thermal_kernel @ eta - dressed.log_norm)
    total = 0j
    rows, cols = np.nonzero(np.abs(rho0.mat) > 0)
    for r, c in zip(rows, cols):
        occ_i, occ_j = basis.states[r], basis.states[c]
        pref = rho0.mat[r, c] / math.sqrt(factorial_product(occ_i) * factorial_product(occ_j))
        for si, sj in enumerate_splits(occ_i, occ_j, Statistics.BOSON):
            amp = permanent(build_submatrix(dressed.a_tilde, si.chosen, sj.chosen))
            total += pref * si.weight * sj.weight * amp * np.prod(x ** np.array(si.complement)) * np.prod(
                y ** np.array(sj.complement)
            )
    return complex(total * gauss)


# --------------------------------------------------------------------------- master equation


@dataclass(frozen=True, eq=False)
class MasterEqCoefficients:
    times: np.ndarray
    eps_tilde: np.ndarray
    gamma: np.ndarray
    gamma_tilde: np.ndarray


def time_derivative(series: np.ndarray, h: float) -> np.ndarray:
    """Fourth-order finite differences along axis 0, one-sided near the ends."""
    f = np.asarray(series)
    if f.shape[0] < 5:
        raise ValidationError("need at least five samples for the derivative")
    out = np.empty_like(f)
    out[2:-2] = (-f[4:] + 8 * f[3:-1] - 8 * f[1:-3] + f[:-4]) / (12 * h)
    out[0] = (-25 * f[0] + 48 * f[1] - 36 * f[2] + 16 * f[3] - 3 * f[4]) / (12 * h)
    out[1] = (-3 * f[0] - 10 * f[1] + 18 * f[2] - 6 * f[3] + f[4]) / (12 * h)
    out[-1] = (25 * f[-1] - 48 * f[-2] + 36 * f[-3] - 16 * f[-4] + 3 * f[-5]) / (12 * h)
    out[-2] = (3 * f[-1] + 10 * f[-2] - 18 * f[-3] + 6 * f[-4] - f[-5]) / (12 * h)
    return out


def extract_me_coefficients(u, v, grid: TimeGrid, *, cond_limit: float = 1e8) -> MasterEqCoefficients:
    """Coefficients of the time-local master equation from u and v.

    With kappa = du/dt u^{-1}: eps~ = (i/2)(kappa - kappa^dag),
    gamma = -(kappa + kappa^dag)/2 and gamma~ = dv/dt - kappa v - v kappa^dag.
    The last one follows from d n/dt = kappa n + n kappa^dag + gamma~ for the
    one-body matrix n(t) = u n(0) u^dag + v.
    """
    u = np.asarray(u, dtype=complex)
    v = np.asarray(v, dtype=complex)
    conds = np.linalg.cond(u)
    if np.max(conds) > cond_limit:
        k = int(np.argmax(conds))
        raise NearSingularError(f"u is near-singular at t = {grid.times[k]:.6g} (cond {conds[k]:.2e})")
    du = time_derivative(u, grid.h)
    dv = time_derivative(v, grid.h)
    kappa = np.swapaxes(np.linalg.solve(np.swapaxes(u, -1, -2), np.swapaxes(du, -1, -2)), -1, -2)
    kdag = np.swapaxes(kappa, -1, -2).conj()
    eps_t = 0.5j * (kappa - kdag)
    gamma = -0.5 * (kappa + kdag)
    gt = dv - kappa @ v - v @ kdag
    herm = lambda m: 0.5 * (m + np.swapaxes(m, -1, -2).conj())
    return MasterEqCoefficients(grid.times.copy(), herm(eps_t), herm(gamma), herm(gt))


class _Liouvillian:
    def __init__(self, basis: FockBasis):
        a, adag = _operators(basis)
        self.a, self.adag = a, adag
        self.d = basis.dim
        self.zeta = basis.statistics.zeta
        self.pairs = np.array([[adag[i] @ a[j] for j in range(self.d)] for i in range(self.d)])  # a_i^dag a_j
        self.rpairs = np.array([[a[j] @ adag[i] for j in range(self.d)] for i in range(self.d)])  # a_j a_i^dag

    def __call__(self, rho, eps_t, gamma, gamma_t):
        z = self.zeta
        h = np.einsum("ij,ijab->ab", eps_t, self.pairs)
        g = np.einsum("ij,ijab->ab", gamma, self.pairs)
        gt = np.einsum("ij,ijab->ab", gamma_t, self.pairs)
        gr = np.einsum("ij,ijab->ab", gamma_t, self.rpairs)
        out = -1j * (h @ rho - rho @ h) - (g @ rho + rho @ g) - z * gt @ rho - rho @ gr
        for i in range(self.d):
            for j in range(self.d):
                aj_rho_adi = self.a[j] @ rho @ self.adag[i]
                out += (2 * gamma[i, j] + z * gamma_t[i, j]) * aj_rho_adi
                out += gamma_t[i, j] * (self.adag[i] @ rho @ self.a[j])
        return out


def _midpoints(x: np.ndarray) -> np.ndarray:
    """Cubic interpolation of samples to the midpoints of every interval."""
    n = x.shape[0] - 1
    if n < 3:
        return 0.5 * (x[:-1] + x[1:])
    mid = np.empty((n,) + x.shape[1:], dtype=x.dtype)
    mid[1:-1] = (-x[:-3] + 9 * x[1:-2] + 9 * x[2:-1] - x[3:]) / 16
    mid[0] = (5 * x[0] + 15 * x[1] - 5 * x[2] + x[3]) / 16
    mid[-1] = (5 * x[-1] + 15 * x[-2] - 5 * x[-3] + x[-4]) / 16
    return mid


def integrate_master_equation(
    rho0: ReducedDensityMatrix, coeffs: MasterEqCoefficients, grid: TimeGrid, *, drift_tol: float = 1e-7
) -> np.ndarray:
    """Classical RK4 for the master equation; returns rho at every grid time."""
    lv = _Liouvillian(rho0.basis)
    c = [coeffs.eps_tilde, coeffs.gamma, coeffs.gamma_tilde]
    mids = [_midpoints(x) for x in c]
    h = grid.h
    traj = np.empty((grid.n_steps + 1,) + rho0.mat.shape, dtype=complex)
    traj[0] = rho0.mat
    rho = rho0.mat.astype(complex)
    tr0 = np.trace(rho)
    for k in range(grid.n_steps):
        at_k = [x[k] for x in c]
        at_m = [x[k] for x in mids]
        at_n = [x[k + 1] for x in c]
        k1 = lv(rho, *at_k)
        k2 = lv(rho + 0.5 * h * k1, *at_m)
        k3 = lv(rho + 0.5 * h * k2, *at_m)
        k4 = lv(rho + h * k3, *at_n)
        rho = rho + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        traj[k + 1] = rho
    drift = abs(np.trace(rho) - tr0)
    if drift > drift_tol * max(grid.t_max, 1.0):
        raise TraceDriftError(f"trace drifted by {drift:.2e} over t = {grid.t_max}")
    return traj
