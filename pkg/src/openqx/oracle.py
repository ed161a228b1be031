"""Brute-force references: discretized baths and fermionic exact diagonalization."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .evolution import ReducedDensityMatrix, one_body_matrix
from .fock import FockBasis
from .model import BathConfig, SpectralDensity, Statistics, ValidationError, fermi_bose_occupation

MAX_MANY_BODY_MODES = 14


@dataclass(frozen=True, eq=False)
class DiscretizedBath:
    """System levels coupled to finitely many bath modes.

    ``couplings`` is d x N with column k the coupling vector of mode k.
    """

    energies: np.ndarray
    couplings: np.ndarray
    eps_s: np.ndarray
    cell_width: float = np.nan

    @property
    def dim(self) -> int:
        return self.couplings.shape[0]

    @property
    def n_modes(self) -> int:
        return self.energies.size

    @property
    def eps_tot(self) -> np.ndarray:
        d, n = self.dim, self.n_modes
        h = np.zeros((d + n, d + n), dtype=complex)
        h[:d, :d] = self.eps_s
        h[:d, d:] = self.couplings
        h[d:, :d] = self.couplings.conj().T
        h[d:, d:] = np.diag(self.energies)
        return h

    @property
    def recurrence_time(self) -> float:
        return 2 * np.pi / self.cell_width

    def with_system(self, eps_s) -> "DiscretizedBath":
        return DiscretizedBath(self.energies, self.couplings, np.asarray(eps_s, dtype=complex), self.cell_width)

    def as_spectral_density(self) -> SpectralDensity:
        return SpectralDensity.discrete(self.energies, self.couplings)

    def smoothed_density(self, eps) -> np.ndarray:
        """Histogram reconstruction of J: each mode spread over its own cell."""
        eps = np.asarray(eps, dtype=float)
        out = np.zeros(eps.shape + (self.dim, self.dim), dtype=complex)
        half = 0.5 * self.cell_width
        for e, v in zip(self.energies, self.couplings.T):
            inside = np.abs(eps - e) < half
            out[inside] += 2 * np.pi * np.outer(v, v.conj()) / self.cell_width
        return out


def discretize(jd: SpectralDensity, window, n: int, eps_s=None) -> DiscretizedBath:
    """Midpoint discretization of J on ``window`` into ``n`` equal cells.

    Each cell contributes one mode per nonzero eigen-channel of
    J(eps_k) * d_eps / 2pi, with couplings taken from its matrix square root.
    """
    if n < 2:
        raise ValidationError("need at least two cells")
    if not jd.is_continuous:
        raise ValidationError("discretize needs a continuous spectral density")
    a, b = (float(x) for x in window)
    a, b = max(a, jd.support[0]), min(b, jd.support[1])
    if not (np.isfinite(a) and np.isfinite(b) and a < b):
        raise ValidationError("the discretization window must be a finite interval overlapping the support")
    width = (b - a) / n
    centers = a + width * (np.arange(n) + 0.5)
    dens = jd(centers) * width / (2 * np.pi)
    energies, cols = [], []
    for e, m in zip(centers, dens):
        w, vecs = np.linalg.eigh(0.5 * (m + m.conj().T))
        if w.min() < -1e-12 * max(1.0, abs(w).max()):
            raise ValidationError(f"J is not positive semidefinite at eps = {e:.6g}")
        root = (vecs * np.sqrt(np.clip(w, 0, None))) @ vecs.conj().T
        for col in root.T:
            if np.linalg.norm(col) > 1e-14:
                energies.append(e)
                cols.append(col)
    d = jd.dim
    coup = np.array(cols).T if cols else np.zeros((d, 0), dtype=complex)
    eps_s = np.zeros((d, d), dtype=complex) if eps_s is None else np.asarray(eps_s, dtype=complex)
    return DiscretizedBath(np.array(energies), coup, eps_s, width)


def single_particle_blocks(db: DiscretizedBath, times) -> tuple[np.ndarray, np.ndarray]:
    """(u_SS(t), u_SE(t)) blocks of exp(-i eps_tot t) for every t."""
    times = np.atleast_1d(np.asarray(times, dtype=float))
    w, vecs = np.linalg.eigh(db.eps_tot)
    d = db.dim
    phases = np.exp(-1j * np.outer(times, w))
    full = np.einsum("al,tl,bl->tab", vecs[:d], phases, vecs.conj())
    return full[:, :, :d], full[:, :, d:]


def oracle_green_functions(db: DiscretizedBath, bath: BathConfig, statistics, times) -> tuple[np.ndarray, np.ndarray]:
    """u = u_SS and v = u_SE f(eps_E) u_SE^dag."""
    stats = Statistics.parse(statistics)
    u_ss, u_se = single_particle_blocks(db, times)
    f = fermi_bose_occupation(bath, stats, db.energies) if db.n_modes else np.zeros(0)
    v = np.einsum("tik,k,tjk->tij", u_se, f, u_se.conj())
    return u_ss, v


def block_unitarity_error(db: DiscretizedBath, times) -> float:
    """max |u_SS u_SS^dag + u_SE u_SE^dag - I| over ``times``."""
    u_ss, u_se = single_particle_blocks(db, times)
    rows = u_ss @ np.swapaxes(u_ss, -1, -2).conj() + u_se @ np.swapaxes(u_se, -1, -2).conj()
    return float(np.max(np.abs(rows - np.eye(db.dim))))


# --------------------------------------------------------------------------- many-body ED


def _jordan_wigner(m: int) -> list[sp.csr_matrix]:
    """Annihilators on 2^m states; mode 0 is the most significant bit."""
    z = sp.diags([1.0, -1.0])
    low = sp.csr_matrix(np.array([[0.0, 1.0], [0.0, 0.0]]))
    eye = sp.identity(2)
    ops = []
    for j in range(m):
        factors = [z] * j + [low] + [eye] * (m - j - 1)
        op = factors[0]
        for f in factors[1:]:
            op = sp.kron(op, f, format="csr")
        ops.append(sp.csr_matrix(op))
    return ops


def _state_index(bits) -> int:
    k = 0
    for b in bits:
        k = 2 * k + int(b)
    return k


def many_body_evolve(
    db: DiscretizedBath,
    rho0: ReducedDensityMatrix,
    bath: BathConfig,
    times,
    statistics=Statistics.FERMION,
) -> list[ReducedDensityMatrix]:
    """Reduced system state from exact evolution of system plus bath.

    The bath starts in the product state of diag(1 - f_k, f_k). Each bath
    configuration and each system basis state is propagated inside its
    particle-number sector, then the bath is traced out.
    """
    if Statistics.parse(statistics) is not Statistics.FERMION:
        raise ValidationError("many-body reference is implemented for fermions only")
    basis = rho0.basis
    d, n = db.dim, db.n_modes
    m = d + n
    if m > MAX_MANY_BODY_MODES:
        raise ValidationError(f"{m} modes exceed the many-body limit of {MAX_MANY_BODY_MODES}")
    times = np.atleast_1d(np.asarray(times, dtype=float))
    ops = _jordan_wigner(m)
    h_sp = db.eps_tot
    ham = sp.csr_matrix((2**m, 2**m), dtype=complex)
    for i in range(m):
        for j in range(m):
            if h_sp[i, j] != 0:
                ham = ham + h_sp[i, j] * (ops[i].T @ ops[j])
    ham = ham.tocsr()
    counts = np.array([bin(k).count("1") for k in range(2**m)])
    sectors = {}
    for q in range(m + 1):
        idx = np.flatnonzero(counts == q)
        w, vecs = np.linalg.eigh(ham[idx][:, idx].toarray())
        sectors[q] = (idx, w, vecs)

    f = fermi_bose_occupation(bath, Statistics.FERMION, db.energies) if n else np.zeros(0)
    sys_states = [basis.index[s] for s in basis.states]
    out = np.zeros((times.size, basis.size, basis.size), dtype=complex)
    for cfg in range(2**n):
        bbits = [(cfg >> (n - 1 - k)) & 1 for k in range(n)]
        p = float(np.prod([f[k] if b else 1 - f[k] for k, b in enumerate(bbits)]))
        if p < 1e-300:
            continue
        # propagate |I, b> for every system state I; amplitudes over (t, system, bath)
        psi = np.zeros((basis.size, times.size, 2**d, 2**n), dtype=complex)
        for col, state in zip(sys_states, basis.states):
            k0 = _state_index(list(state) + bbits)
            idx, w, vecs = sectors[counts[k0]]
            pos = np.searchsorted(idx, k0)
            amp = vecs @ (np.exp(-1j * np.outer(times, w)) * vecs[pos].conj()).T  # (sector, t)
            full = np.zeros((2**m, times.size), dtype=complex)
            full[idx] = amp
            psi[col] = full.T.reshape(times.size, 2**d, 2**n)
        # rows of the reduced matrix follow the FockBasis order
        perm = [_state_index(s) for s in basis.states]
        psi = psi[:, :, perm, :]  # (I, t, system row, bath)
        weights = rho0.mat
        for t in range(times.size):
            x = psi[:, t]  # (I, row, bath)
            out[t] += p * np.einsum("ij,iab,jcb->ac", weights, x, x.conj())
    return [ReducedDensityMatrix(basis, 0.5 * (r + r.conj().T)) for r in out]


def many_body_one_body(rhos: list[ReducedDensityMatrix]) -> np.ndarray:
    return np.array([one_body_matrix(r) for r in rhos])
