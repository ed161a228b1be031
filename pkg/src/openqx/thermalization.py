"""Steady states, the weak-coupling thermal limit and memory diagnostics."""

from __future__ import annotations

import json
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .evolution import DressedMatrices, ReducedDensityMatrix, evolve_exact, thermal_like_state, trace_distance
from .fock import FockBasis, annihilation_operators
from .greens import TimeGrid, green_pair
from .model import BathConfig, SpectralDensity, SpectralKind, Statistics, SystemModel, fermi_bose_occupation
from .spectral import LocalizedMode, SpectrumTable, find_localized_modes, spectrum


class LocalizedModeWarning(UserWarning):
    pass


class LocalizedModeError(RuntimeError):
    """A steady state was requested although localized modes keep memory."""


def occupation_on_nodes(bath: BathConfig, statistics, energies: np.ndarray, density: np.ndarray | None = None) -> np.ndarray:
    """f on quadrature nodes; bosonic nodes at or below mu must carry no weight."""
    stats = Statistics.parse(statistics)
    energies = np.asarray(energies, dtype=float)
    if stats is Statistics.FERMION:
        return fermi_bose_occupation(bath, stats, energies)
    f = np.zeros_like(energies)
    ok = energies > bath.mu
    if density is not None and np.any(np.abs(density[~ok]) > 1e-14):
        raise ValueError("bosonic spectrum has weight at or below the chemical potential")
    f[ok] = fermi_bose_occupation(bath, stats, energies[ok])
    return f


def steady_occupation(table: SpectrumTable, bath: BathConfig, statistics, modes=()) -> np.ndarray:
    """n_bar = int f(eps) D(eps) d eps / 2pi."""
    if modes:
        warnings.warn("localized modes present; the long-time state depends on the initial state", LocalizedModeWarning)
        raise LocalizedModeError("steady occupation is undefined with localized modes")
    f = occupation_on_nodes(bath, statistics, table.energies, table.D)
    n = table.integrate(f)
    n = 0.5 * (n + n.conj().T)
    w, vecs = np.linalg.eigh(n)
    return (vecs * np.clip(w, 0.0, None)) @ vecs.conj().T


def steady_state(n_bar, basis: FockBasis) -> ReducedDensityMatrix:
    return thermal_like_state(n_bar, basis)


def equilibrium_occupation(model: SystemModel, bath: BathConfig) -> np.ndarray:
    """f(eps_S) as a matrix function of the system Hamiltonian."""
    w, vecs = np.linalg.eigh(model.eps_s)
    f = fermi_bose_occupation(bath, model.statistics, w)
    return (vecs * f) @ vecs.conj().T


def gibbs_state(model: SystemModel, bath: BathConfig, basis: FockBasis | None = None) -> ReducedDensityMatrix:
    """Grand-canonical state exp(-beta (H_S - mu N)) / Z on the Fock basis."""
    basis = basis or FockBasis.for_model(model)
    if not np.isfinite(bath.beta):
        return thermal_like_state(equilibrium_occupation(model, bath), basis)
    a = annihilation_operators(basis)
    d = model.dim
    k = sum((model.eps_s[i, j] - bath.mu * (i == j)) * (a[i].T @ a[j]) for i in range(d) for j in range(d))
    k = 0.5 * (k + k.conj().T)
    w = np.linalg.eigvalsh(k)
    rho = expm(-bath.beta * (k - w.min() * np.eye(basis.size)))
    return ReducedDensityMatrix(basis, rho / np.trace(rho))


def relaxation_rate(model: SystemModel, jd: SpectralDensity) -> float:
    """Smallest golden-rule decay rate <e|J(eps)|e> over eigenlevels of eps_S."""
    if jd.kind is SpectralKind.DISCRETE_MODES:
        raise ValueError("a discrete bath has no relaxation rate")
    w, vecs = np.linalg.eigh(model.eps_s)
    rates = [float(np.real(vecs[:, k].conj() @ jd(w[k]) @ vecs[:, k])) for k in range(w.size)]
    rate = min(rates)
    if rate <= 0:
        raise ValueError("a system level lies outside the bath support; no finite relaxation time")
    return rate


# --------------------------------------------------------------------------- weak coupling


@dataclass(frozen=True)
class SweepRow:
    coupling: float
    deviation: float
    gibbs_distance: float
    localized_modes: int


def _sweep_point(model, jd, bath, lam, basis):
    scaled = jd.scaled(lam)
    modes = find_localized_modes(model, scaled, bath)
    if modes:
        return SweepRow(lam, math.nan, math.nan, len(modes))
    n_bar = steady_occupation(spectrum(model, scaled, bath), bath, model.statistics)
    dev = float(np.linalg.norm(n_bar - equilibrium_occupation(model, bath), 2))
    dist = trace_distance(steady_state(n_bar, basis), gibbs_state(model, bath, basis))
    return SweepRow(lam, dev, dist, 0)


def weak_coupling_sweep(model: SystemModel, jd: SpectralDensity, bath: BathConfig, couplings, *, workers: int = 1) -> list[SweepRow]:
    """Distance of n_bar from f(eps_S) as the coupling ``jd.scaled(lambda)`` shrinks.

    Rows come back in the order of ``couplings`` whatever the worker count.
    """
    basis = FockBasis.for_model(model)
    couplings = [float(x) for x in couplings]
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        rows = list(pool.map(lambda lam: _sweep_point(model, jd, bath, lam, basis), couplings))
    return rows


def is_monotone(rows: list[SweepRow], slack: float = 0.05) -> bool:
    """Deviation never grows by more than ``slack`` (relative) as the coupling decreases."""
    ordered = sorted(rows, key=lambda r: -r.coupling)
    return all(b.deviation <= a.deviation * (1 + slack) for a, b in zip(ordered, ordered[1:]))


# --------------------------------------------------------------------------- memory


@dataclass(frozen=True, eq=False)
class MemoryReport:
    has_localized_modes: bool
    distance: float
    t_final: float
    window: float
    averaged_states: list

    @property
    def retains_memory(self) -> bool:
        return self.distance > 1e-3


def long_time_horizon(model: SystemModel, jd: SpectralDensity, factor: float = 50.0) -> float:
    """``factor`` relaxation times; discrete baths fall back to their energy scale."""
    if not jd.is_continuous:
        return 2 * factor / jd.energy_scale()
    return factor / relaxation_rate(model, jd)


def averaging_window(modes: list[LocalizedMode], t_final: float, beats: int = 10) -> float:
    """Span of at least ``beats`` periods of the slowest localized-mode beat.

    Without localized modes nothing oscillates at long times and the final
    state alone is used.
    """
    if not modes:
        return 0.0
    energies = sorted(m.eps_l for m in modes)
    gaps = [b - a for a, b in zip(energies, energies[1:]) if b - a > 0]
    if not gaps:
        return 0.5 * t_final
    return min(0.5 * t_final, beats * 2 * math.pi / min(gaps))


def detect_memory(
    modes: list[LocalizedMode],
    model: SystemModel,
    jd: SpectralDensity,
    bath: BathConfig,
    probes: list[ReducedDensityMatrix],
    *,
    t_final: float | None = None,
    n_steps: int | None = None,
) -> MemoryReport:
    """Largest trace distance between long-time averages of the probe states."""
    if len(probes) < 2:
        raise ValueError("need at least two probe states")
    t_final = t_final or long_time_horizon(model, jd)
    window = averaging_window(modes, t_final)
    n_steps = n_steps or int(min(20000, max(400, 20 * t_final)))
    grid = TimeGrid(t_final, n_steps)
    gp = green_pair(model, jd, bath, grid)
    picks = np.flatnonzero(grid.times >= t_final - window)
    averages = []
    for rho0 in probes:
        acc = np.zeros_like(rho0.mat)
        for k in picks:
            acc += evolve_exact(rho0, DressedMatrices.from_green(gp.u[k], gp.v[k], model.statistics)).mat
        averages.append(ReducedDensityMatrix(rho0.basis, acc / picks.size))
    dist = max(trace_distance(a, b) for i, a in enumerate(averages) for b in averages[i + 1:])
    return MemoryReport(bool(modes), dist, t_final, window, averages)


# --------------------------------------------------------------------------- report


@dataclass(frozen=True, eq=False)
class SteadyStateReport:
    n_bar: np.ndarray | None
    rho_inf: ReducedDensityMatrix | None
    has_localized_modes: bool
    distance_to_grand_canonical: float
    memory_witness: float

    def to_json(self) -> str:
        def cm(m):
            return None if m is None else {"re": np.real(m).tolist(), "im": np.imag(m).tolist()}

        return json.dumps(
            {
                "n_bar": cm(self.n_bar),
                "rho_inf": cm(None if self.rho_inf is None else self.rho_inf.mat),
                "has_localized_modes": self.has_localized_modes,
                "distance_to_grand_canonical": _finite(self.distance_to_grand_canonical),
                "memory_witness": _finite(self.memory_witness),
            },
            indent=2,
            sort_keys=True,
        )


def _finite(x: float):
    return None if not np.isfinite(x) else float(f"{x:.15g}")


def steady_state_report(
    model: SystemModel,
    jd: SpectralDensity,
    bath: BathConfig,
    probes: list[ReducedDensityMatrix] | None = None,
    *,
    t_final: float | None = None,
) -> SteadyStateReport:
    basis = FockBasis.for_model(model)
    modes = find_localized_modes(model, jd, bath)
    witness = math.nan
    if probes is not None and len(probes) >= 2:
        witness = detect_memory(modes, model, jd, bath, probes, t_final=t_final).distance
    if modes:
        return SteadyStateReport(None, None, True, math.nan, witness)
    n_bar = steady_occupation(spectrum(model, jd, bath), bath, model.statistics)
    rho = steady_state(n_bar, basis)
    return SteadyStateReport(n_bar, rho, False, trace_distance(rho, gibbs_state(model, bath, basis)), witness)
