from __future__ import annotations

import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from eitlab.keyed import keyed_hash, to_sign
from eitlab.spin_tree import SpinParams, lemma_bound_constant
from eitlab.unpredictable_walk import (DEFAULT_PARAMS, VertexAddress, WalkPath, _spin_key,
                                       _vertex_id, enumerate_level_spins,
                                       exact_conditional_profile, half_coordinate, iter_increments,
                                       profile_bound, sample_path, sample_paths, sample_stationary,
                                       spin_at, srw_concentration, stationary_batch,
                                       unconditional_concentration)

P21 = SpinParams(2, 1)


def materialize_level(params: SpinParams, seed, N: int) -> np.ndarray:
    """Top-down construction of every spin of the height-N tree."""
    key = _spin_key(seed)
    level = np.array([1])
    for depth in range(1, N + 1):
        parent = np.repeat(level, params.b)
        idx = np.arange(params.b ** depth)
        fresh = idx % params.b >= params.ell
        level = parent.copy()
        ids = _vertex_id(N - depth, idx[fresh])
        level[fresh] = to_sign(keyed_hash(key, ids))
    return level


def test_vertex_address_roundtrip():
    v = VertexAddress((1, 0, 2))
    assert v.level == 3 and v.index(3) == 1 * 9 + 0 + 2
    assert VertexAddress.from_index(v.index(3), 3, 3) == v


def test_spin_at_root_and_copy_chain():
    assert spin_at(P21, 0, VertexAddress(())) == 1
    for digits in itertools.product(range(2), repeat=4):
        assert spin_at(P21, 3, VertexAddress(digits)) == 1


def test_spin_at_copy_inheritance_under_any_seed():
    rng = np.random.default_rng(1)
    p = DEFAULT_PARAMS
    for _ in range(2000):
        L = int(rng.integers(1, 8))
        digits = tuple(int(d) for d in rng.integers(0, p.b, L))
        seed = int(rng.integers(0, 1000))
        v = VertexAddress(digits)
        assert spin_at(p, seed, v) == spin_at(p, seed, v)
        if digits[-1] < p.ell:
            parent = VertexAddress(digits[:-1])
            assert spin_at(p, seed, v) == spin_at(p, seed, parent, leaf_level=L)


def test_walk_path_invariants():
    with pytest.raises(ValueError):
        WalkPath(0, [1, 2])
    path = sample_path(P21, 0, 30)
    assert path.values[0] == 0 and path.values[1] == 1
    assert np.all(np.abs(np.diff(path.values)) == 1)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_sample_path_matches_full_tree(seed):
    N = 6
    leaves = materialize_level(P21, seed, N)
    path = sample_path(P21, seed, 3 ** N)
    np.testing.assert_array_equal(path.steps, leaves)


def test_level_invariance_and_random_access():
    p = DEFAULT_PARAMS
    a = sample_path(p, 5, 100)
    b = sample_path(p, 5, 100, level=5)
    np.testing.assert_array_equal(a.steps, b.steps)
    N = 4
    for m in [0, 7, 63, 99]:
        v = VertexAddress.from_index(m, N, p.b)
        assert spin_at(p, 5, v) == a.steps[m]
    stream = list(itertools.islice(iter_increments(p, 5), 100))
    np.testing.assert_array_equal(stream, a.steps)


def test_batch_matches_single():
    S = sample_paths(DEFAULT_PARAMS, [0, 1, 2], 50)
    for i in range(3):
        np.testing.assert_array_equal(S[i], sample_path(DEFAULT_PARAMS, i, 50).values)


def test_long_path_nearest_neighbor():
    path = sample_path(DEFAULT_PARAMS, 9, 10 ** 6)
    assert np.all(np.abs(path.steps) == 1)


def test_variance_scaling():
    p = DEFAULT_PARAMS
    ns = [4 ** j for j in range(3, 9)]
    vals = np.concatenate([sample_paths(p, range(lo, lo + 500), ns[-1])[:, ns]
                           for lo in range(0, 10_000, 500)])
    ratios = [vals[:, j].var() / n ** (2 * p.alpha) for j, n in enumerate(ns)]
    assert max(ratios) / min(ratios) < 10


def test_half_coordinate():
    assert list(half_coordinate(WalkPath(0, [1, 1, -1]))) == [0, 1, 2, 2]
    assert list(half_coordinate(WalkPath(0, [-1, -1]))) == [0, 0, 0]
    W = half_coordinate(sample_path(DEFAULT_PARAMS, 4, 10 ** 4))
    assert set(np.unique(np.diff(W))) <= {0, 1}


def test_stationary_marginal_and_nearest_neighbor():
    inc = stationary_batch(DEFAULT_PARAMS, range(40_000), [0])[:, 0]
    assert abs(inc.mean()) < 4 / math.sqrt(inc.size)
    path = sample_stationary(DEFAULT_PARAMS, 3, 5000)
    assert np.all(np.abs(path.steps) == 1)


def test_exact_profile_examples():
    spins = enumerate_level_spins(P21, 3)
    assert spins.shape == (2 ** P21.independent_spins(3), 27)
    est = exact_conditional_profile(P21, 3, 0, 1, spins=spins)
    assert est.value == 1
    assert isinstance(est.value, Fraction)
    # a window starting late still yields an exact value in (0, 1]
    late = exact_conditional_profile(P21, 3, 20, 7, spins=spins)
    assert 0 < late.value <= 1


def test_exact_profile_against_direct_enumeration():
    spins = enumerate_level_spins(P21, 2)
    n, k = 3, 4
    S = np.cumsum(spins, axis=1)
    best = Fraction(0)
    for hist in {tuple(row[:n]) for row in spins}:
        rows = [row for row in spins if tuple(row[:n]) == hist]
        ends = [int(np.sum(row[:n + k])) for row in rows]
        for x in set(ends):
            best = max(best, Fraction(ends.count(x), len(rows)))
    assert exact_conditional_profile(P21, 2, n, k, spins=spins).value == best
    assert S.shape[1] == 9


def test_profile_bound_formula():
    p = DEFAULT_PARAMS
    C = lemma_bound_constant(p)
    assert profile_bound(p, 16) == pytest.approx((2 * p.b) ** p.alpha * C * 16 ** -p.alpha)


def test_unconditional_concentration_k1_deterministic():
    est = unconditional_concentration(DEFAULT_PARAMS, 0, [1, 4], 2000)
    assert est[0].value == 1.0
    # Wilson interval for 2000/2000 successes: [n / (n + z^2), 1]
    z = stats.norm.ppf(0.5 + 0.9973 / 2)
    assert est[0].extra["ci"] == pytest.approx((2000 / (2000 + z * z), 1.0), rel=1e-9)
    assert not any(e.flag for e in est)
    with pytest.raises(ValueError):
        unconditional_concentration(DEFAULT_PARAMS, 0, [1], 10)


def test_srw_reference():
    rows = srw_concentration(0, [16, 64], 20_000)
    exact = [math.comb(k, k // 2) / 2 ** k for k in (16, 64)]
    for r, e in zip(rows, exact):
        assert abs(r.value - e) < 4 * math.sqrt(e * (1 - e) / 20_000)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10 ** 6), n=st.integers(1, 500))
def test_nearest_neighbor_property(seed, n):
    for path in (sample_path(DEFAULT_PARAMS, seed, n), sample_stationary(DEFAULT_PARAMS, seed, n)):
        assert len(path.values) == n + 1
        assert np.all(np.abs(np.diff(path.values)) == 1)
