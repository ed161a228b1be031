"""Occupation sequences, permanents, determinants and Fock-space operators.

An occupation sequence is a tuple of counts ``(i_1, ..., i_d)``. Its canonical
sequence lists level ``n`` exactly ``i_n`` times in nondecreasing order, and
every sign convention below refers to that order.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .model import Statistics, ValidationError

PERMANENT_MAX_N = 24

OccupationSequence = tuple[int, ...]


def total(counts: Sequence[int]) -> int:
    return int(sum(counts))


def canonical_sequence(counts: Sequence[int]) -> list[int]:
    """Zero-based level indices, level ``n`` repeated ``counts[n]`` times."""
    return [n for n, c in enumerate(counts) for _ in range(c)]


def factorial_product(counts: Sequence[int]) -> int:
    return math.prod(math.factorial(c) for c in counts)


def permanent(m) -> complex:
    """Permanent by Ryser's formula, visiting column subsets in Gray-code order."""
    m = np.asarray(m, dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("permanent needs a square matrix")
    n = m.shape[0]
    if n > PERMANENT_MAX_N:
        raise ValueError(f"permanent size {n} exceeds the cap of {PERMANENT_MAX_N}")
    if n == 0:
        return 1.0 + 0j
    if n == 1:
        return complex(m[0, 0])
    cols = [m[:, j].copy() for j in range(n)]
    row_sums = np.zeros(n, dtype=complex)
    acc = 0j
    subset = 0
    for k in range(1, 1 << n):
        j = (k & -k).bit_length() - 1  # the bit that flips between Gray codes k-1 and k
        subset ^= 1 << j
        if subset >> j & 1:
            row_sums += cols[j]
        else:
            row_sums -= cols[j]
        term = complex(np.prod(row_sums))
        acc += -term if bin(subset).count("1") & 1 else term
    return acc if n % 2 == 0 else -acc


def determinant(m) -> complex:
    """LU determinant with the empty-matrix convention det() = 1."""
    m = np.asarray(m, dtype=complex)
    if m.size == 0:
        return 1.0 + 0j
    return complex(np.linalg.det(m))


def build_submatrix(a, sub_i: Sequence[int], sub_j: Sequence[int]) -> np.ndarray:
    """Replicated matrix ``A_{J',I'}``.

    Row ``p`` is level ``J'_p`` and column ``q`` is level ``I'_q`` of the
    canonical sequences, so entry ``(p, q)`` equals ``A[J'_p, I'_q]``. This is
    the orientation produced by expanding ``(alpha^* A alpha)^k``.
    """
    if total(sub_i) != total(sub_j):
        raise ValueError(f"sequence totals differ: {total(sub_i)} vs {total(sub_j)}")
    a = np.asarray(a)
    rows = canonical_sequence(sub_j)
    cols = canonical_sequence(sub_i)
    return a[np.ix_(rows, cols)]


def split_sign(counts: Sequence[int], chosen: Sequence[int]) -> int:
    """Parity of reordering the canonical sequence into (chosen, complement).

    Only meaningful for 0/1 counts; an inversion is a complement element that
    precedes a chosen element in the canonical order.
    """
    inversions = 0
    rest_seen = 0
    for n, c in enumerate(counts):
        if chosen[n]:
            inversions += rest_seen
        rest_seen += c - chosen[n]
    return -1 if inversions & 1 else 1


@dataclass(frozen=True)
class SubsequenceSplit:
    parent: OccupationSequence
    chosen: OccupationSequence
    complement: OccupationSequence
    multiplicity: int = 1
    sign: int = 1

    @property
    def weight(self) -> int:
        return self.multiplicity * self.sign


def _splits_of(counts: OccupationSequence, statistics: Statistics) -> dict[int, list[SubsequenceSplit]]:
    by_total: dict[int, list[SubsequenceSplit]] = {}
    for chosen in itertools.product(*(range(c + 1) for c in counts)):
        rest = tuple(c - k for c, k in zip(counts, chosen))
        if statistics is Statistics.BOSON:
            split = SubsequenceSplit(counts, chosen, rest, math.prod(math.comb(c, k) for c, k in zip(counts, chosen)), 1)
        else:
            split = SubsequenceSplit(counts, chosen, rest, 1, split_sign(counts, chosen))
        by_total.setdefault(sum(chosen), []).append(split)
    return by_total


def enumerate_splits(
    occ_i: Sequence[int], occ_j: Sequence[int], statistics: Statistics
) -> Iterator[tuple[SubsequenceSplit, SubsequenceSplit]]:
    """Stream every pair (I' from I, J' from J) with equal totals.

    Bosonic splits carry the binomial multiplicity of choosing the
    subsequence; fermionic splits carry the reordering sign.
    """
    statistics = Statistics.parse(statistics)
    left = _splits_of(tuple(occ_i), statistics)
    right = _splits_of(tuple(occ_j), statistics)
    for k in sorted(left):
        for si in left[k]:
            for sj in right.get(k, ()):
                yield si, sj


@dataclass(frozen=True, eq=False)
class FockBasis:
    """Truncated Fock basis, ordered by total particle number then counts."""

    dim: int
    statistics: Statistics
    n_max: int
    n_cap: int
    states: tuple[OccupationSequence, ...] = field(repr=False)
    index: dict = field(repr=False)

    @classmethod
    def build(cls, d: int, statistics, n_max: int = 8, n_cap: int | None = None) -> "FockBasis":
        statistics = Statistics.parse(statistics)
        if statistics is Statistics.FERMION:
            n_max, n_cap = 1, d
        n_cap = n_max if n_cap is None else n_cap
        states = [s for s in itertools.product(range(n_max + 1), repeat=d) if sum(s) <= n_cap]
        states.sort(key=lambda s: (sum(s), s))
        return cls(d, statistics, n_max, n_cap, tuple(states), {s: k for k, s in enumerate(states)})

    @classmethod
    def for_model(cls, model) -> "FockBasis":
        return cls.build(model.dim, model.statistics, model.n_max, model.n_cap)

    @property
    def size(self) -> int:
        return len(self.states)

    def __len__(self) -> int:
        return len(self.states)

    def label(self, k: int) -> str:
        return "|" + ",".join(map(str, self.states[k])) + ">"

    def number_vector(self) -> np.ndarray:
        return np.array([sum(s) for s in self.states])


def annihilation_operators(basis: FockBasis) -> list[np.ndarray]:
    """Matrices of ``a_1 .. a_d`` on the truncated basis.

    Fermionic operators carry the Jordan-Wigner string over lower levels, which
    matches ``|I> = (a_1^dag)^{i_1} ... (a_d^dag)^{i_d} |0>``.
    """
    ops = [np.zeros((basis.size, basis.size)) for _ in range(basis.dim)]
    fermion = basis.statistics is Statistics.FERMION
    for col, state in enumerate(basis.states):
        for n, c in enumerate(state):
            if c == 0:
                continue
            lowered = state[:n] + (c - 1,) + state[n + 1:]
            row = basis.index.get(lowered)
            if row is None:
                continue
            amp = (-1.0) ** sum(state[:n]) if fermion else math.sqrt(c)
            ops[n][row, col] = amp
    return ops


def coherent_overlaps(basis: FockBasis, eta) -> np.ndarray:
    """Unnormalized overlaps ``<eta^*|I> = prod conj(eta_n)^{i_n} / sqrt(i_n!)``."""
    eta_c = np.conj(np.asarray(eta, dtype=complex))
    return np.array(
        [np.prod(eta_c ** np.array(s)) / math.sqrt(factorial_product(s)) for s in basis.states], dtype=complex
    )


def check_counts(counts: Sequence[int], statistics: Statistics, n_max: int) -> OccupationSequence:
    counts = tuple(int(c) for c in counts)
    limit = 1 if statistics is Statistics.FERMION else n_max
    if any(c < 0 or c > limit for c in counts):
        raise ValidationError(f"occupation {counts} violates per-level cap {limit}")
    return counts
