"""Command-line driver: ``openqx <stage> --config FILE``."""

from __future__ import annotations

import argparse
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .artifacts import matrix_columns, matrix_values, write_csv, write_json
from .config import ConfigError, Scenario, _initial, load_scenario
from .evolution import (
    DressedMatrices,
    coherent_closed_form,
    coherent_matrix_element,
    evolve_exact,
    extract_me_coefficients,
    NearSingularError,
    integrate_master_equation,
    one_body_matrix,
    trace_norm,
)
from .greens import TimeGrid, green_pair
from .model import SpectralKind, Statistics, ValidationError
from .oracle import (
    DiscretizedBath,
    discretize,
    many_body_evolve,
    many_body_one_body,
    oracle_green_functions,
)
from .spectral import broadened_density, find_localized_modes, self_energy, spectrum, sum_rule_residual
from .thermalization import steady_state_report, weak_coupling_sweep

WORKERS_ENV = "OPENQX_WORKERS"
EXIT_VALIDATION = 1
EXIT_TOLERANCE = 2


def resolve_workers(flag: int | None) -> int:
    if flag is not None:
        n = flag
    elif os.environ.get(WORKERS_ENV):
        try:
            n = int(os.environ[WORKERS_ENV])
        except ValueError:
            raise ConfigError(f"{WORKERS_ENV} must be an integer") from None
    else:
        n = os.cpu_count() or 1
    if n < 1:
        raise ConfigError("worker count must be at least 1")
    return n


def _energy_axis(sc: Scenario) -> np.ndarray:
    if sc.energy_window is not None:
        lo, hi = sc.energy_window
    else:
        levels = np.linalg.eigvalsh(sc.model.eps_s)
        scale = sc.jd.energy_scale()
        lo = max(sc.jd.support[0], levels.min() - 5 * scale) if np.isfinite(sc.jd.support[0]) else levels.min() - 5 * scale
        hi = min(sc.jd.support[1], levels.max() + 5 * scale) if np.isfinite(sc.jd.support[1]) else levels.max() + 5 * scale
        if not lo < hi:
            lo, hi = levels.min() - 1, levels.max() + 1
    return np.linspace(lo, hi, sc.energy_points)


def run_spectrum(sc: Scenario, out: Path, workers: int) -> int:
    d = sc.model.dim
    modes = find_localized_modes(sc.model, sc.jd, sc.bath)
    eps = _energy_axis(sc)
    dens, _ = broadened_density(sc.model, sc.jd, sc.bath, eps)
    eta = sc.bath.eta_for(sc.jd)
    sig_p = self_energy(sc.model, sc.jd, sc.bath, eps + 1j * eta)
    sig_m = np.swapaxes(sig_p, -1, -2).conj()
    header = ["energy"] + matrix_columns("D", d) + matrix_columns("sigma_plus", d) + matrix_columns("sigma_minus", d)
    rows = ([e] + matrix_values(a) + matrix_values(b) + matrix_values(c) for e, a, b, c in zip(eps, dens, sig_p, sig_m))
    write_csv(out / "spectrum.csv", header, rows)
    residual = math.nan
    min_raw = 0.0
    if sc.jd.is_continuous and not sc.jd.is_zero():
        table = spectrum(sc.model, sc.jd, sc.bath)
        residual, min_raw = sum_rule_residual(modes, table), table.min_eig_raw
    write_json(
        out / "modes.json",
        {
            "eta": eta,
            "localized_modes": [{"energy": m.eps_l, "residue": m.Z_l} for m in modes],
            "sum_rule_residual": residual,
            "min_eigenvalue_raw": min_raw,
        },
    )
    write_csv(
        out / "modes.csv",
        ["energy"] + matrix_columns("Z", d),
        ([m.eps_l] + matrix_values(m.Z_l) for m in modes),
    )
    print(f"spectrum: {len(modes)} localized mode(s); sum-rule residual {residual:.3e}")
    return 0


def run_greens(sc: Scenario, out: Path, workers: int) -> int:
    gp = green_pair(sc.model, sc.jd, sc.bath, sc.grid)
    d = sc.model.dim
    header = ["t"] + matrix_columns("u", d) + matrix_columns("v", d)
    rows = ([t] + matrix_values(u) + matrix_values(v) for t, u, v in zip(sc.grid.times, gp.u, gp.v))
    write_csv(out / "greens.csv", header, rows)
    print(f"greens: {sc.grid.n_steps + 1} samples up to t = {sc.grid.t_max:g}")
    return 0


def _evolve_at(sc: Scenario, gp, indices, workers: int):
    stats = sc.model.statistics

    def one(k):
        return evolve_exact(sc.rho0, DressedMatrices.from_green(gp.u[k], gp.v[k], stats))

    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, indices))


def run_evolve(sc: Scenario, out: Path, workers: int) -> int:
    gp = green_pair(sc.model, sc.jd, sc.bath, sc.grid)
    h = sc.grid.h
    stride = max(1, math.ceil(sc.grid.n_steps / 1000))
    series = list(range(0, sc.grid.n_steps + 1, stride))
    if series[-1] != sc.grid.n_steps:
        series.append(sc.grid.n_steps)
    snap_idx = [int(round(t / h)) for t in sc.snapshots]
    states = _evolve_at(sc, gp, sorted(set(series) | set(snap_idx)), workers)
    by_index = dict(zip(sorted(set(series) | set(snap_idx)), states))
    basis = sc.basis
    labels = [basis.label(k) for k in range(basis.size)]
    header = ["t", "trace_deviation", "min_eigenvalue", "hermiticity", "purity"] + [f"p{lab}" for lab in labels]
    failed = []
    rows = []
    for k in series:
        rho = by_index[k]
        a = rho.audit()
        if not rho.passes_audit():
            failed.append(k * h)
        rows.append([k * h, a["trace_deviation"], a["min_eigenvalue"], a["hermiticity"], rho.purity()] + list(rho.populations()))
    write_csv(out / "evolution.csv", header, rows)
    snaps = []
    for t, k in zip(sc.snapshots, snap_idx):
        rho = by_index[k]
        if not rho.passes_audit():
            failed.append(k * h)
        snaps.append({"t": k * h, "requested_t": t, "rho": rho.mat, "audit": rho.audit(), "basis": labels})
    write_json(out / "snapshots.json", {"snapshots": snaps})
    if failed:
        print(f"evolve: audit failed at t = {sorted(set(failed))[:5]}", file=sys.stderr)
        return EXIT_TOLERANCE
    print(f"evolve: {len(series)} states audited; {len(snaps)} snapshot(s) written")
    return 0


def _probes(sc: Scenario):
    spec = sc.thermalize.get("probes")
    if spec is None:
        d = sc.model.dim
        spec = ["vacuum", "fock:" + ",".join(["1"] + ["0"] * (d - 1))]
    return [_initial({"state": s}, sc.model, sc.basis) for s in spec]


def run_thermalize(sc: Scenario, out: Path, workers: int) -> int:
    t_final = sc.thermalize.get("t_final")
    report = steady_state_report(sc.model, sc.jd, sc.bath, _probes(sc), t_final=t_final)
    (out).mkdir(parents=True, exist_ok=True)
    (out / "steady_state.json").write_text(report.to_json() + "\n")
    write_json(
        out / "memory.json",
        {"has_localized_modes": report.has_localized_modes, "memory_witness": report.memory_witness, "retains_memory": report.memory_witness > 1e-3},
    )
    couplings = sc.thermalize.get("couplings")
    if couplings:
        rows = weak_coupling_sweep(sc.model, sc.jd, sc.bath, couplings, workers=workers)
        write_csv(
            out / "sweep.csv",
            ["coupling", "deviation", "gibbs_distance", "localized_modes"],
            ([r.coupling, r.deviation, r.gibbs_distance, str(r.localized_modes)] for r in rows),
        )
        print(f"thermalize: final sweep row deviation {rows[-1].deviation:.3e} at coupling {rows[-1].coupling:g}")
    print(f"thermalize: memory witness {report.memory_witness:.3e}; localized modes: {report.has_localized_modes}")
    return 0


def _line(name: str, value: float, tol: float) -> bool:
    ok = bool(value < tol)
    print(f"{name}: max |d| = {value:.3e} < {tol:g} {'PASS' if ok else 'FAIL'}")
    return ok


def _default_window(sc: Scenario) -> tuple[float, float]:
    """Support clipped to 40 energy scales around the system levels."""
    lo, hi = sc.jd.support
    levels = np.linalg.eigvalsh(sc.model.eps_s)
    s = sc.jd.energy_scale()
    if sc.jd.kind is SpectralKind.OHMIC_EXP_CUTOFF:
        return lo, min(hi, 20 * sc.jd.cutoff)
    return max(lo, levels.min() - 40 * s), min(hi, levels.max() + 40 * s)


def run_verify(sc: Scenario, out: Path, workers: int) -> int:
    results = {}
    stats = sc.model.statistics
    cfg = sc.verify
    if sc.jd.is_continuous and not sc.jd.is_zero() and sc.jd.kind is not SpectralKind.WIDE_BAND:
        window = cfg.get("window") or _default_window(sc)
        cells = int(cfg.get("cells", 6))
        db = discretize(sc.jd, window, cells, sc.model.eps_s)
        horizon = 0.5 * db.recurrence_time
        discrete = db.as_spectral_density()
    elif sc.jd.kind is SpectralKind.DISCRETE_MODES:
        discrete = sc.jd
        db = DiscretizedBath(sc.jd.mode_energies, sc.jd.couplings, sc.model.eps_s, np.nan)
        horizon = sc.grid.t_max
    else:
        db, discrete, horizon = None, None, sc.grid.t_max
    times = np.linspace(0.0, min(horizon, sc.grid.t_max), 20)

    if stats is Statistics.FERMION and db is not None and db.dim + db.n_modes <= 14:
        gp = green_pair(sc.model, discrete, sc.bath, TimeGrid(float(times[-1]) or 1.0, 19))
        ed = many_body_evolve(db, sc.rho0, sc.bath, times)
        ex = [evolve_exact(sc.rho0, DressedMatrices.from_green(gp.u[k], gp.v[k], stats)) for k in range(times.size)]
        dev = max(float(np.max(np.abs(a.mat - b.mat))) for a, b in zip(ed, ex))
        results["many_body_oracle"] = (dev, 1e-6, _line("many-body oracle, max |drho|", dev, 1e-6))
        u, v = oracle_green_functions(db, sc.bath, stats, times)
        n0 = one_body_matrix(sc.rho0)
        nb = many_body_one_body(ed)
        wick = float(np.max(np.abs(nb - (u @ n0 @ np.swapaxes(u, -1, -2).conj() + v))))
        results["wick_closure"] = (wick, 1e-10, _line("oracle one-body closure", wick, 1e-10))

    if stats is Statistics.BOSON:
        gp = green_pair(sc.model, sc.jd, sc.bath, sc.grid)
        rng = np.random.default_rng(int(cfg.get("seed", 7)))
        worst = 0.0
        for k in np.linspace(0, sc.grid.n_steps, 5).astype(int):
            dm = DressedMatrices.from_green(gp.u[k], gp.v[k], stats)
            rho = evolve_exact(sc.rho0, dm)
            for _ in range(10):
                eta = 0.5 * rng.random(sc.model.dim) * np.exp(2j * np.pi * rng.random(sc.model.dim))
                a = coherent_matrix_element(rho, eta)
                b = coherent_closed_form(sc.rho0, dm, eta)
                worst = max(worst, abs(a - b) / max(1.0, abs(b)))
        results["coherent_routes"] = (worst, 1e-7, _line("coherent-state routes", worst, 1e-7))

    if sc.jd.is_continuous and not sc.jd.is_zero() and sc.jd.kind is not SpectralKind.WIDE_BAND:
        block_window = cfg.get("block_window") or _default_window(sc)
        fine = discretize(sc.jd, block_window, int(cfg.get("block_cells", 400)), sc.model.eps_s)
        t_block = min(sc.grid.t_max, 0.8 * fine.recurrence_time)
        bgrid = TimeGrid(t_block, max(40, int(round(sc.grid.n_steps * t_block / sc.grid.t_max))))
        ref = green_pair(sc.model, sc.jd, sc.bath, bgrid)
        u_o, v_o = oracle_green_functions(fine, sc.bath, stats, bgrid.times)
        dev = float(max(np.max(np.abs(ref.u - u_o)), np.max(np.abs(ref.v - v_o))))
        results["block_oracle"] = (dev, 1e-3, _line(f"discretized-bath blocks ({fine.n_modes} modes), u and v", dev, 1e-3))

    gp = green_pair(sc.model, sc.jd, sc.bath, sc.grid)
    try:
        coeffs = extract_me_coefficients(gp.u, gp.v, sc.grid)
        traj = integrate_master_equation(sc.rho0, coeffs, sc.grid)
        exact = _evolve_at(sc, gp, range(sc.grid.n_steps + 1), workers)
        dev = max(trace_norm(traj[k] - exact[k].mat) for k in range(sc.grid.n_steps + 1))
        results["master_equation"] = (dev, 1e-5, _line("master equation vs exact, trace norm", dev, 1e-5))
    except NearSingularError as exc:
        print(f"master equation: skipped ({exc})")

    write_json(out / "verify.json", {k: {"deviation": v[0], "tolerance": v[1], "pass": v[2]} for k, v in results.items()})
    return 0 if all(v[2] for v in results.values()) else EXIT_TOLERANCE


STAGES = {
    "spectrum": run_spectrum,
    "greens": run_greens,
    "evolve": run_evolve,
    "thermalize": run_thermalize,
    "verify": run_verify,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="openqx", description="Exact dynamics of open bosonic and fermionic systems.")
    p.add_argument("--version", action="version", version=f"openqx {__version__}")
    p.add_argument("stage", choices=sorted(STAGES))
    p.add_argument("--config", required=True, help="scenario TOML file, or preset:<name>")
    p.add_argument("--workers", type=int, default=None, help=f"worker threads (default: ${WORKERS_ENV} or all cores)")
    p.add_argument("--out", type=Path, default=None, help="output directory (overrides [output] dir)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        sc = load_scenario(args.config)
        workers = resolve_workers(args.workers)
        out = args.out or sc.output_dir
        return STAGES[args.stage](sc, out, workers)
    except (ConfigError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ArithmeticError, RuntimeError) as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_TOLERANCE


if __name__ == "__main__":
    sys.exit(main())
