"""Composite Gauss-Legendre rules and adaptive energy grids."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np


class QuadratureError(RuntimeError):
    """An integral did not reach the requested tolerance."""


@lru_cache(maxsize=16)
def _legendre(order: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(order)
    return x, w


@dataclass(frozen=True, eq=False)
class EnergyGrid:
    """Quadrature nodes and weights for integrals over energy."""

    nodes: np.ndarray
    weights: np.ndarray

    def __len__(self) -> int:
        return self.nodes.size

    @classmethod
    def trapezoid(cls, energies) -> "EnergyGrid":
        e = np.asarray(energies, dtype=float)
        w = np.zeros_like(e)
        if e.size > 1:
            de = np.diff(e)
            w[:-1] += de / 2
            w[1:] += de / 2
        return cls(e, w)

    def max_spacing(self) -> float:
        return float(np.max(np.diff(self.nodes))) if self.nodes.size > 1 else np.inf


def panel_rule(edges, order: int = 16) -> EnergyGrid:
    """Gauss-Legendre rule of the given order on every panel between ``edges``."""
    edges = np.asarray(edges, dtype=float)
    x, w = _legendre(order)
    lo, hi = edges[:-1, None], edges[1:, None]
    half = (hi - lo) / 2
    nodes = (lo + hi) / 2 + half * x
    weights = half * w
    return EnergyGrid(nodes.ravel(), weights.ravel())


def split_edges(breaks, max_width: float) -> np.ndarray:
    """Refine sorted breakpoints so that no panel exceeds ``max_width``."""
    breaks = np.unique(np.asarray(breaks, dtype=float))
    out = [breaks[:1]]
    for a, b in zip(breaks[:-1], breaks[1:]):
        k = max(1, int(np.ceil((b - a) / max_width)))
        out.append(np.linspace(a, b, k + 1)[1:])
    return np.concatenate(out)


def graded_points(center: float, inner: float, outer: float, side: int) -> list[float]:
    """Geometric points ``center + side * inner * 2^k`` up to ``outer``."""
    pts = []
    step = inner
    while step < outer:
        pts.append(center + side * step)
        step *= 2
    return pts


def adaptive_edges(func, edges, tol: float, *, max_width: float = np.inf, order: int = 16, max_panels: int = 20000):
    """Bisect panels until Gauss-Legendre rules of two orders agree.

    ``func`` maps a 1-D array of energies to an array whose leading axis
    matches; the panel error is the max-abs difference between the
    ``order`` and ``order // 2`` rules.
    """
    edges = split_edges(edges, max_width)
    pending = list(zip(edges[:-1], edges[1:]))
    done: list[tuple[float, float]] = []
    hi_x, hi_w = _legendre(order)
    lo_x, lo_w = _legendre(order // 2)
    while pending:
        if len(done) + len(pending) > max_panels:
            raise QuadratureError("adaptive energy grid exceeded its panel budget")
        a = np.array([p[0] for p in pending])
        b = np.array([p[1] for p in pending])
        mid, half = (a + b) / 2, (b - a) / 2
        xs = np.concatenate([(mid[:, None] + half[:, None] * hi_x).ravel(), (mid[:, None] + half[:, None] * lo_x).ravel()])
        vals = np.asarray(func(xs))
        vals = vals.reshape(vals.shape[0], -1)
        nh = a.size * hi_x.size
        v_hi = vals[:nh].reshape(a.size, hi_x.size, -1)
        v_lo = vals[nh:].reshape(a.size, lo_x.size, -1)
        i_hi = np.einsum("pk...,k->p...", v_hi, hi_w) * half[:, None]
        i_lo = np.einsum("pk...,k->p...", v_lo, lo_w) * half[:, None]
        err = np.max(np.abs(i_hi - i_lo), axis=1)
        nxt = []
        for k, (pa, pb) in enumerate(pending):
            if err[k] <= tol or (pb - pa) < 1e-13 * max(1.0, abs(pa)):
                done.append((pa, pb))
            else:
                m = 0.5 * (pa + pb)
                nxt += [(pa, m), (m, pb)]
        pending = nxt
    done.sort()
    return np.array([done[0][0]] + [p[1] for p in done])
