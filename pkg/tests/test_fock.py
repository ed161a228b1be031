import itertools
import math

import numpy as np
import pytest

from openqx.fock import (
    FockBasis,
    annihilation_operators,
    build_submatrix,
    canonical_sequence,
    determinant,
    enumerate_splits,
    permanent,
    split_sign,
)
from openqx.model import Statistics


def naive_permanent(m):
    n = m.shape[0]
    return sum(np.prod([m[i, p[i]] for i in range(n)]) for p in itertools.permutations(range(n)))


def cofactor_det(m):
    n = m.shape[0]
    if n == 0:
        return 1.0
    return sum((-1) ** j * m[0, j] * cofactor_det(np.delete(m[1:], j, axis=1)) for j in range(n))


def parity(perm):
    inv = sum(1 for a, b in itertools.combinations(perm, 2) if a > b)
    return -1 if inv % 2 else 1


def test_permanent_small_cases():
    assert permanent(np.eye(3)) == pytest.approx(1)
    assert permanent(np.ones((2, 2))) == pytest.approx(2)
    assert permanent(np.ones((5, 5))) == pytest.approx(120)
    assert permanent(np.zeros((0, 0))) == 1


def test_permanent_matches_leibniz():
    rng = np.random.default_rng(0)
    m = rng.normal(size=(5, 5)) + 1j * rng.normal(size=(5, 5))
    assert abs(permanent(m) - naive_permanent(m)) < 1e-10 * abs(naive_permanent(m))


def test_permanent_row_linearity_and_zero_row():
    rng = np.random.default_rng(1)
    m = rng.normal(size=(4, 4)) + 0j
    scaled = m.copy()
    scaled[2] *= 3 - 1j
    assert permanent(scaled) == pytest.approx((3 - 1j) * permanent(m))
    m[1] = 0
    assert permanent(m) == 0


def test_permanent_size_guard():
    with pytest.raises(ValueError):
        permanent(np.ones((25, 25)))


def test_determinant_conventions():
    assert determinant(np.zeros((0, 0))) == 1
    assert determinant(np.eye(4)) == pytest.approx(1)
    rng = np.random.default_rng(2)
    m = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    assert determinant(m) == pytest.approx(cofactor_det(m), rel=1e-12)


def test_submatrix_replicates_levels():
    a = np.arange(4.0).reshape(2, 2) + 1
    m = build_submatrix(a, (2, 0), (1, 1))
    # rows follow the second sequence, columns the first
    assert np.array_equal(m, np.array([[a[0, 0], a[0, 0]], [a[1, 0], a[1, 0]]]))


def test_submatrix_of_identity_is_block_of_ones():
    m = build_submatrix(np.eye(3), (2, 0, 3), (2, 0, 3))
    expected = np.zeros((5, 5))
    expected[:2, :2] = 1
    expected[2:, 2:] = 1
    assert np.array_equal(m, expected)


def test_submatrix_total_mismatch():
    with pytest.raises(ValueError):
        build_submatrix(np.eye(2), (1, 0), (1, 1))


def test_submatrix_permanent_matches_symbolic_expansion():
    # coefficient of conj(x1)^2 x1 x2 in (x^* a x)^2 / 2 is perm / (2! 1! 1!)
    rng = np.random.default_rng(3)
    a = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    coefficient = a[0, 0] * a[0, 1]
    m = build_submatrix(a.T, (2, 0), (1, 1))
    assert permanent(m) / 2 == pytest.approx(coefficient)


def test_collapse_for_bosons():
    for d in (1, 2, 3):
        for counts in itertools.product(range(4), repeat=d):
            m = build_submatrix(np.eye(d), counts, counts)
            assert permanent(m) == pytest.approx(math.prod(math.factorial(c) for c in counts))


def test_collapse_for_fermions():
    for d in range(1, 5):
        for counts in itertools.product(range(2), repeat=d):
            assert determinant(build_submatrix(np.eye(d), counts, counts)) == pytest.approx(1)


def test_split_sign_matches_permutation_parity():
    for d in range(1, 5):
        for counts in itertools.product(range(2), repeat=d):
            seq = canonical_sequence(counts)
            for chosen in itertools.product(*(range(c + 1) for c in counts)):
                picked = canonical_sequence(chosen)
                rest = [x for x in seq if x not in picked]
                perm = [seq.index(x) for x in picked + rest]
                assert split_sign(counts, chosen) == parity(perm)


def test_empty_split():
    pairs = list(enumerate_splits((0, 0), (0, 0), Statistics.FERMION))
    assert len(pairs) == 1
    assert pairs[0][0].weight == 1 and pairs[0][1].weight == 1


def test_fermion_pair_enumeration():
    pairs = list(enumerate_splits((1, 1), (1, 1), Statistics.FERMION))
    totals = sorted(sum(a.chosen) for a, _ in pairs)
    assert totals == [0, 1, 1, 1, 1, 2]
    # subsets pair up by total: 1*1 + 2*2 + 1*1
    assert len(pairs) == 6


def test_boson_multiplicities():
    pairs = list(enumerate_splits((2,), (2,), Statistics.BOSON))
    weights = {a.chosen[0]: a.multiplicity * b.multiplicity for a, b in pairs}
    assert weights == {0: 1, 1: 4, 2: 1}


def test_split_count_formula():
    i, j = (2, 1, 0), (1, 1, 1)
    pairs = list(enumerate_splits(i, j, Statistics.BOSON))
    ways = lambda c, k: sum(1 for ch in itertools.product(*(range(x + 1) for x in c)) if sum(ch) == k)
    assert len(pairs) == sum(ways(i, k) * ways(j, k) for k in range(4))


def test_split_is_streamed():
    gen = enumerate_splits((1, 1), (1, 1), Statistics.FERMION)
    assert iter(gen) is gen


def test_fermion_basis_size_and_order():
    b = FockBasis.build(3, "fermion")
    assert b.size == 8
    assert b.states[0] == (0, 0, 0)
    assert [sum(s) for s in b.states] == sorted(sum(s) for s in b.states)


def test_boson_basis_respects_cap():
    b = FockBasis.build(2, "boson", n_max=3, n_cap=4)
    assert all(sum(s) <= 4 and max(s) <= 3 for s in b.states)


def test_fermion_operators_anticommute():
    b = FockBasis.build(3, "fermion")
    a = annihilation_operators(b)
    for i in range(3):
        for j in range(3):
            anti = a[i] @ a[j].T + a[j].T @ a[i]
            assert np.allclose(anti, np.eye(b.size) * (i == j))
            assert np.allclose(a[i] @ a[j] + a[j] @ a[i], 0)


def test_boson_operators_commute_below_cap():
    b = FockBasis.build(2, "boson", n_max=4, n_cap=4)
    a = annihilation_operators(b)
    low = [k for k, s in enumerate(b.states) if sum(s) < 4]
    comm = a[0] @ a[0].T - a[0].T @ a[0]
    assert np.allclose(comm[np.ix_(low, low)], np.eye(len(low)))
