"""Scenario files: one TOML document per run."""

from __future__ import annotations

import math
import re
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .evolution import ReducedDensityMatrix
from .fock import FockBasis, check_counts
from .greens import TimeGrid
from .model import BathConfig, SpectralDensity, Statistics, SystemModel, ValidationError

_IMAG = re.compile(r"(?<![\d.eE])([ij])")


class ConfigError(ValidationError):
    """Invalid scenario file; the message names the offending field."""


def parse_complex(value, where: str = "value") -> complex:
    """Numbers or strings such as ``"0.3-0.2i"``, ``"2i"`` or ``"-i"``."""
    if isinstance(value, bool):
        raise ConfigError(f"{where}: expected a number, got a boolean")
    if isinstance(value, (int, float)):
        return complex(value)
    if isinstance(value, str):
        text = value.replace(" ", "")
        text = _IMAG.sub(r"1\1", text).replace("i", "j")
        try:
            return complex(text)
        except ValueError:
            pass
    raise ConfigError(f"{where}: cannot read {value!r} as a complex number")


def parse_matrix(value, where: str, d: int | None = None) -> np.ndarray:
    if isinstance(value, (int, float, str)):
        m = np.array([[parse_complex(value, where)]])
    else:
        try:
            m = np.array([[parse_complex(x, f"{where}[{r}][{c}]") for c, x in enumerate(row)] for r, row in enumerate(value)])
        except TypeError:
            raise ConfigError(f"{where}: expected a matrix (list of rows)") from None
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ConfigError(f"{where}: matrix must be square")
    if d is not None and m.shape[0] != d:
        if m.shape == (1, 1):
            return m[0, 0] * np.eye(d)
        raise ConfigError(f"{where}: expected {d}x{d}, got {m.shape[0]}x{m.shape[1]}")
    return m


def _float(section: dict, key: str, where: str, default=None) -> float:
    if key not in section:
        if default is None:
            raise ConfigError(f"{where}.{key}: required field is missing")
        return default
    v = section[key]
    if isinstance(v, str) and v.strip().lower() in ("inf", "infinity"):
        return math.inf
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{where}.{key}: expected a number, got {v!r}")
    return float(v)


@dataclass(frozen=True, eq=False)
class Scenario:
    name: str
    model: SystemModel
    bath: BathConfig
    jd: SpectralDensity
    rho0: ReducedDensityMatrix
    grid: TimeGrid
    snapshots: tuple[float, ...]
    energy_window: tuple[float, float] | None
    energy_points: int
    output_dir: Path
    thermalize: dict = field(default_factory=dict)
    verify: dict = field(default_factory=dict)

    @property
    def basis(self) -> FockBasis:
        return self.rho0.basis


def _system(sec: dict) -> SystemModel:
    try:
        stats = Statistics.parse(sec.get("statistics", ""))
    except ValueError:
        raise ConfigError(f"system.statistics: expected 'boson' or 'fermion', got {sec.get('statistics')!r}") from None
    if "eps_s" not in sec:
        raise ConfigError("system.eps_s: required field is missing")
    eps = parse_matrix(sec["eps_s"], "system.eps_s")
    n_max = int(sec.get("n_max", 8))
    n_cap = sec.get("n_cap")
    try:
        return SystemModel(eps, stats, n_max=n_max, n_cap=None if n_cap is None else int(n_cap))
    except ValidationError as exc:
        raise ConfigError(f"system: {exc}") from None


def _bath(sec: dict) -> BathConfig:
    beta = _float(sec, "beta", "bath")
    mu = _float(sec, "mu", "bath", 0.0)
    eta = sec.get("eta")
    try:
        return BathConfig(beta, mu, None if eta is None else _float(sec, "eta", "bath"))
    except ValidationError as exc:
        raise ConfigError(f"bath: {exc}") from None


def _spectral(sec: dict, d: int) -> SpectralDensity:
    kind = str(sec.get("kind", "")).lower().replace("-", "").replace("_", "")
    try:
        if kind == "lorentzian":
            terms = sec.get("terms")
            if not terms:
                raise ConfigError("spectral.terms: need at least one lorentzian term")
            built = []
            for k, t in enumerate(terms):
                w = f"spectral.terms[{k}]"
                built.append((parse_matrix(t.get("amplitude", 1.0), w + ".amplitude", d), _float(t, "center", w), _float(t, "width", w)))
            return SpectralDensity.lorentzian(built, d, sec.get("support"))
        if kind == "ohmic":
            return SpectralDensity.ohmic(parse_matrix(sec.get("amplitude", 1.0), "spectral.amplitude", d), _float(sec, "cutoff", "spectral"), d)
        if kind == "wideband":
            return SpectralDensity.wide_band(parse_matrix(sec.get("gamma", 1.0), "spectral.gamma", d), d)
        if kind == "discrete":
            e = [float(x) for x in sec.get("energies", [])]
            rows = sec.get("couplings", [])
            v = np.array([[parse_complex(x, f"spectral.couplings[{r}]") for x in row] for r, row in enumerate(rows)])
            return SpectralDensity.discrete(e, v.reshape(d, len(e)))
        if kind == "none":
            return SpectralDensity.zero(d)
    except ValidationError as exc:
        raise ConfigError(f"spectral: {exc}") from None
    raise ConfigError(f"spectral.kind: unknown kind {sec.get('kind')!r}")


def _counts(text: str, where: str, model: SystemModel) -> tuple[int, ...]:
    try:
        counts = tuple(int(x) for x in str(text).replace(" ", "").split(","))
    except ValueError:
        raise ConfigError(f"{where}: cannot read occupation {text!r}") from None
    if len(counts) != model.dim:
        raise ConfigError(f"{where}: occupation {counts} needs {model.dim} entries")
    try:
        return check_counts(counts, model.statistics, model.n_max)
    except ValidationError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _initial(sec: dict, model: SystemModel, basis: FockBasis) -> ReducedDensityMatrix:
    m = np.zeros((basis.size, basis.size), dtype=complex)

    def put(i, j, c, where):
        if i not in basis.index or j not in basis.index:
            raise ConfigError(f"{where}: state outside the truncated basis")
        if model.statistics is Statistics.FERMION and sum(i) != sum(j):
            raise ConfigError(f"{where}: coherence between different particle numbers")
        m[basis.index[i], basis.index[j]] += c

    state = sec.get("state")
    if state is not None:
        state = str(state).strip()
        if state == "vacuum":
            put((0,) * model.dim, (0,) * model.dim, 1.0, "initial.state")
        elif state.startswith("fock:"):
            occ = _counts(state[5:], "initial.state", model)
            put(occ, occ, 1.0, "initial.state")
        elif state.startswith("mixed:"):
            for k, part in enumerate(state[6:].split(";")):
                try:
                    p, occ = part.split("*")
                    p = float(p)
                except ValueError:
                    raise ConfigError(f"initial.state: mixed entry {part!r} must look like '<p>*<counts>'") from None
                occ = _counts(occ, f"initial.state[{k}]", model)
                put(occ, occ, p, f"initial.state[{k}]")
        else:
            raise ConfigError(f"initial.state: unknown preset {state!r}")
    for k, e in enumerate(sec.get("entries", [])):
        w = f"initial.entries[{k}]"
        i = _counts(",".join(map(str, e.get("i", []))), w + ".i", model)
        j = _counts(",".join(map(str, e.get("j", []))), w + ".j", model)
        put(i, j, parse_complex(e.get("c", 0), w + ".c"), w)
    if not np.any(m):
        raise ConfigError("initial: give a state preset or entries")
    if np.max(np.abs(m - m.conj().T)) > 1e-12:
        raise ConfigError("initial: coefficients are not Hermitian (a partner entry is missing)")
    if abs(np.trace(m) - 1) > 1e-9:
        raise ConfigError(f"initial: trace is {np.trace(m).real:.12g}, not 1")
    if np.linalg.eigvalsh(m).min() < -1e-9:
        raise ConfigError("initial: matrix is not positive semidefinite")
    return ReducedDensityMatrix(basis, m)


def scenario_from_dict(doc: dict, name: str = "scenario", base_dir: Path | None = None) -> Scenario:
    for sec in ("system", "bath", "spectral", "initial", "grid"):
        if not isinstance(doc.get(sec), dict):
            raise ConfigError(f"[{sec}]: required section is missing")
    model = _system(doc["system"])
    bath = _bath(doc["bath"])
    jd = _spectral(doc["spectral"], model.dim)
    basis = FockBasis.for_model(model)
    rho0 = _initial(doc["initial"], model, basis)
    g = doc["grid"]
    try:
        grid = TimeGrid(_float(g, "t_max", "grid"), int(g.get("n_steps", 0)))
    except ValidationError as exc:
        raise ConfigError(f"grid: {exc}") from None
    snaps = tuple(float(t) for t in g.get("snapshots", [grid.t_max]))
    if any(t < 0 or t > grid.t_max for t in snaps):
        raise ConfigError("grid.snapshots: times must lie in [0, t_max]")
    window = g.get("energy_window")
    if window is not None:
        window = (float(window[0]), float(window[1]))
        if not window[0] < window[1]:
            raise ConfigError("grid.energy_window: need emin < emax")
    out = doc.get("output", {}).get("dir", "out")
    out = Path(out)
    if base_dir is not None and not out.is_absolute():
        out = base_dir / out
    return Scenario(
        name=str(doc.get("name", name)),
        model=model,
        bath=bath,
        jd=jd,
        rho0=rho0,
        grid=grid,
        snapshots=snaps,
        energy_window=window,
        energy_points=int(g.get("energy_points", 801)),
        output_dir=out,
        thermalize=dict(doc.get("thermalize", {})),
        verify=dict(doc.get("verify", {})),
    )


def preset_names() -> list[str]:
    files = resources.files("openqx").joinpath("presets").iterdir()
    return sorted(p.name[:-5] for p in files if p.name.endswith(".toml"))


def load_scenario(path: str | Path) -> Scenario:
    """Read a scenario file, or a bundled one given as ``preset:<name>``."""
    text_path = str(path)
    if text_path.startswith("preset:"):
        name = text_path[7:]
        res = resources.files("openqx").joinpath("presets", f"{name}.toml")
        if not res.is_file():
            raise ConfigError(f"unknown preset {name!r}; available: {', '.join(preset_names())}")
        raw, base = res.read_text(), Path.cwd()
    else:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"{p}: no such file")
        raw, base, name = p.read_text(), p.parent, p.stem
    try:
        doc = tomllib.loads(raw)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{text_path}: {exc}") from None
    return scenario_from_dict(doc, name, base)
