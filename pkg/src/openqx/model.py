"""System, bath and spectral-density data shared by every other module.

Sign convention: ``zeta = +1`` for bosons and ``-1`` for fermions, so the
"upper/lower sign" pairs read ``1 + zeta * x`` etc.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

HERMITIAN_TOL = 1e-12
# Ohmic densities decay like e^{-eps/cutoff}; beyond this multiple J is below 1e-15 of its peak.
OHMIC_SUPPORT_FACTOR = 40.0


class ValidationError(ValueError):
    """Raised when model data violate an invariant."""


class Statistics(enum.Enum):
    BOSON = "boson"
    FERMION = "fermion"

    @property
    def zeta(self) -> int:
        return 1 if self is Statistics.BOSON else -1

    @classmethod
    def parse(cls, value: "str | Statistics") -> "Statistics":
        if isinstance(value, Statistics):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ValidationError(f"unknown statistics {value!r}") from None


def _as_matrix(value, d: int | None = None, name: str = "matrix") -> np.ndarray:
    arr = np.atleast_2d(np.asarray(value, dtype=complex))
    if arr.shape == (1, 1) and d is not None and d > 1:
        arr = arr[0, 0] * np.eye(d, dtype=complex)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ValidationError(f"{name} must be square, got shape {arr.shape}")
    if d is not None and arr.shape[0] != d:
        raise ValidationError(f"{name} must be {d}x{d}, got {arr.shape}")
    return arr


def _check_hermitian(m: np.ndarray, name: str) -> None:
    if np.max(np.abs(m - m.conj().T), initial=0.0) > HERMITIAN_TOL * max(1.0, np.max(np.abs(m))):
        raise ValidationError(f"{name} is not Hermitian")


def _check_psd(m: np.ndarray, name: str) -> None:
    _check_hermitian(m, name)
    if np.linalg.eigvalsh(m).min() < -HERMITIAN_TOL * max(1.0, np.max(np.abs(m))):
        raise ValidationError(f"{name} is not positive semidefinite")


@dataclass(frozen=True, eq=False)
class SystemModel:
    """Quadratic system Hamiltonian ``H_S = sum_ij eps_ij a_i^dag a_j``.

    ``n_max`` caps the occupation of a single level and ``n_cap`` the total
    particle number of the truncated bosonic Fock space. Both are 1 and ``d``
    for fermions.
    """

    eps_s: np.ndarray
    statistics: Statistics
    n_max: int = 8
    n_cap: int | None = None

    def __post_init__(self):
        eps = _as_matrix(self.eps_s, name="eps_s")
        _check_hermitian(eps, "eps_s")
        stats = Statistics.parse(self.statistics)
        d = eps.shape[0]
        n_max = int(self.n_max)
        n_cap = self.n_cap
        if stats is Statistics.FERMION:
            n_max, n_cap = 1, d
        else:
            n_cap = n_max if n_cap is None else int(n_cap)
        if n_max < 1 or n_cap < 1:
            raise ValidationError("n_max and n_cap must be >= 1")
        eps = 0.5 * (eps + eps.conj().T)
        eps.setflags(write=False)
        object.__setattr__(self, "eps_s", eps)
        object.__setattr__(self, "statistics", stats)
        object.__setattr__(self, "n_max", n_max)
        object.__setattr__(self, "n_cap", n_cap)

    @property
    def dim(self) -> int:
        return self.eps_s.shape[0]

    @property
    def zeta(self) -> int:
        return self.statistics.zeta


@dataclass(frozen=True)
class BathConfig:
    """Thermal reservoir parameters.

    ``beta = inf`` selects zero temperature. ``beta = 0`` is accepted for
    fermions only and means infinite temperature (flat occupation 1/2).
    """

    beta: float
    mu: float = 0.0
    regularization_eta: float | None = None

    def __post_init__(self):
        beta = float(self.beta)
        if np.isnan(beta) or beta < 0:
            raise ValidationError("beta must be >= 0 (inf allowed)")
        if self.regularization_eta is not None and not self.regularization_eta > 0:
            raise ValidationError("regularization_eta must be positive")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "mu", float(self.mu))

    def eta_for(self, jd: "SpectralDensity") -> float:
        if self.regularization_eta is not None:
            return float(self.regularization_eta)
        return 1e-10 * jd.energy_scale()


def fermi_bose_occupation(bath: BathConfig, statistics: Statistics, eps):
    """Occupation ``1/(exp(beta (eps - mu)) -/+ 1)``, vectorized over ``eps``."""
    stats = Statistics.parse(statistics)
    x = np.asarray(eps, dtype=float) - bath.mu
    if stats is Statistics.FERMION:
        if bath.beta == 0.0:
            out = np.full_like(x, 0.5)
        elif np.isinf(bath.beta):
            out = np.where(x < 0, 1.0, np.where(x > 0, 0.0, 0.5))
        else:
            out = expit(-bath.beta * x)
    else:
        if np.any(x <= 0):
            raise ValidationError("bosonic occupation requires eps > mu")
        if bath.beta == 0.0:
            raise ValidationError("bosons need a finite positive beta or beta = inf")
        out = np.zeros_like(x) if np.isinf(bath.beta) else 1.0 / np.expm1(bath.beta * x)
    return out if np.ndim(eps) else float(out)


class SpectralKind(enum.Enum):
    LORENTZIAN_SUM = "lorentzian"
    OHMIC_EXP_CUTOFF = "ohmic"
    DISCRETE_MODES = "discrete"
    WIDE_BAND = "wideband"


@dataclass(frozen=True)
class LorentzianTerm:
    amplitude: np.ndarray  # d x d PSD, the peak value
    center: float
    width: float


@dataclass(frozen=True, eq=False)
class SpectralDensity:
    """Matrix-valued spectral density J(eps).

    Build instances through the classmethod constructors. ``support`` is the
    closed interval outside which J vanishes; it may be infinite for
    Lorentzian and wide-band densities.
    """

    kind: SpectralKind
    dim: int
    support: tuple[float, float]
    lorentzians: tuple[LorentzianTerm, ...] = ()
    amplitude: np.ndarray | None = None
    cutoff: float = 0.0
    mode_energies: np.ndarray | None = None
    couplings: np.ndarray | None = None
    _scale: float = field(default=1.0, repr=False)

    @classmethod
    def lorentzian(cls, terms, dim: int = 1, support=None) -> "SpectralDensity":
        """Sum of ``A W^2 / ((eps - c)^2 + W^2)`` terms.

        ``terms`` holds ``(amplitude, center, width)`` triples. Without a
        ``support`` the density extends over the whole real line.
        """
        built = []
        for amp, center, width in terms:
            a = _as_matrix(amp, dim, "lorentzian amplitude")
            _check_psd(a, "lorentzian amplitude")
            if not width > 0:
                raise ValidationError("lorentzian width must be positive")
            built.append(LorentzianTerm(a, float(center), float(width)))
        if not built:
            raise ValidationError("need at least one lorentzian term")
        sup = (-np.inf, np.inf) if support is None else _check_support(support)
        widths = [t.width for t in built]
        centers = [t.center for t in built]
        scale = sup[1] - sup[0] if np.isfinite(sup[1] - sup[0]) else max(max(widths), np.ptp(centers))
        return cls(SpectralKind.LORENTZIAN_SUM, dim, sup, lorentzians=tuple(built), _scale=float(scale))

    @classmethod
    def ohmic(cls, amplitude, cutoff: float, dim: int = 1) -> "SpectralDensity":
        """``J(eps) = A eps exp(-eps/cutoff)`` for ``eps >= 0``."""
        a = _as_matrix(amplitude, dim, "ohmic amplitude")
        _check_psd(a, "ohmic amplitude")
        if not cutoff > 0:
            raise ValidationError("ohmic cutoff must be positive")
        sup = (0.0, OHMIC_SUPPORT_FACTOR * cutoff)
        return cls(SpectralKind.OHMIC_EXP_CUTOFF, dim, sup, amplitude=a, cutoff=float(cutoff), _scale=float(cutoff))

    @classmethod
    def wide_band(cls, gamma, dim: int = 1) -> "SpectralDensity":
        a = _as_matrix(gamma, dim, "wide-band amplitude")
        _check_psd(a, "wide-band amplitude")
        scale = float(np.linalg.eigvalsh(a).max()) or 1.0
        return cls(SpectralKind.WIDE_BAND, dim, (-np.inf, np.inf), amplitude=a, _scale=scale)

    @classmethod
    def discrete(cls, energies, couplings) -> "SpectralDensity":
        """Explicit bath modes; ``couplings`` is d x N with column k = V_k."""
        e = np.asarray(energies, dtype=float).ravel()
        v = np.atleast_2d(np.asarray(couplings, dtype=complex))
        if v.shape[1] != e.size:
            raise ValidationError(f"couplings must be d x {e.size}, got {v.shape}")
        sup = (float(e.min()), float(e.max())) if e.size else (0.0, 0.0)
        scale = float(np.ptp(e)) if e.size > 1 else 1.0
        return cls(SpectralKind.DISCRETE_MODES, v.shape[0], sup, mode_energies=e, couplings=v, _scale=scale or 1.0)

    @classmethod
    def zero(cls, dim: int = 1) -> "SpectralDensity":
        return cls.discrete(np.zeros(0), np.zeros((dim, 0)))

    def scaled(self, factor: float) -> "SpectralDensity":
        """Same shape with every amplitude multiplied by ``factor``."""
        if self.kind is SpectralKind.LORENTZIAN_SUM:
            terms = [(factor * t.amplitude, t.center, t.width) for t in self.lorentzians]
            sup = None if not np.isfinite(self.support[0]) else self.support
            return SpectralDensity.lorentzian(terms, self.dim, sup)
        if self.kind is SpectralKind.OHMIC_EXP_CUTOFF:
            return SpectralDensity.ohmic(factor * self.amplitude, self.cutoff, self.dim)
        if self.kind is SpectralKind.WIDE_BAND:
            return SpectralDensity.wide_band(factor * self.amplitude, self.dim)
        return SpectralDensity.discrete(self.mode_energies, np.sqrt(factor) * self.couplings)

    def is_zero(self) -> bool:
        if self.kind is SpectralKind.DISCRETE_MODES:
            return not np.any(self.couplings)
        if self.kind is SpectralKind.LORENTZIAN_SUM:
            return not any(np.any(t.amplitude) for t in self.lorentzians)
        return not np.any(self.amplitude)

    @property
    def is_continuous(self) -> bool:
        return self.kind is not SpectralKind.DISCRETE_MODES

    @property
    def bounded(self) -> bool:
        return bool(np.all(np.isfinite(self.support)))

    def energy_scale(self) -> float:
        """Characteristic energy width used for default tolerances and grids."""
        return self._scale

    def breakpoints(self) -> list[float]:
        """Energies where J has structure worth resolving."""
        pts = [x for x in self.support if np.isfinite(x)]
        if self.kind is SpectralKind.LORENTZIAN_SUM:
            pts += [t.center for t in self.lorentzians]
        elif self.kind is SpectralKind.OHMIC_EXP_CUTOFF:
            pts.append(self.cutoff)
        return sorted(set(pts))

    def feature_width(self) -> float:
        if self.kind is SpectralKind.LORENTZIAN_SUM:
            return min(t.width for t in self.lorentzians)
        if self.kind is SpectralKind.OHMIC_EXP_CUTOFF:
            return self.cutoff
        return self._scale

    def __call__(self, eps) -> np.ndarray:
        return evaluate_spectral_density(self, eps)


def _check_support(support) -> tuple[float, float]:
    a, b = (float(x) for x in support)
    if not a < b:
        raise ValidationError("support must satisfy emin < emax")
    return a, b


def evaluate_spectral_density(jd: SpectralDensity, eps) -> np.ndarray:
    """J(eps) as an array of shape ``eps.shape + (d, d)``; zero off support."""
    if jd.kind is SpectralKind.DISCRETE_MODES:
        raise ValidationError("discrete modes have no pointwise density")
    x = np.asarray(eps, dtype=float)
    d = jd.dim
    inside = (x >= jd.support[0]) & (x <= jd.support[1])
    if jd.kind is SpectralKind.WIDE_BAND:
        prof = [(np.ones_like(x), jd.amplitude)]
    elif jd.kind is SpectralKind.OHMIC_EXP_CUTOFF:
        xc = np.clip(x, 0.0, None)
        prof = [(xc * np.exp(-xc / jd.cutoff), jd.amplitude)]
    else:
        prof = [(t.width**2 / ((x - t.center) ** 2 + t.width**2), t.amplitude) for t in jd.lorentzians]
    out = np.zeros(x.shape + (d, d), dtype=complex)
    for weight, amp in prof:
        out += (weight * inside)[..., None, None] * amp
    return out
