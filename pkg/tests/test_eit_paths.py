from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from eitlab import frozen
from eitlab.eit_paths import (LatticePath, PathMeasureSpec, batch_collisions, collision_count,
                              fit_counts, gamma_profile_bound, lemma31_constants, pair_collisions,
                              sample_increments, sample_oriented, shared_edge_count,
                              survival_curve, theta_d_estimate)
from eitlab.spin_tree import SpinParams
from eitlab.unpredictable_walk import half_coordinate, sample_path

Z3 = PathMeasureSpec("z3", 3, seed=0)


def check_oriented(path: LatticePath):
    pos = path.positions()
    assert np.all(pos[0] == 0)
    steps = np.diff(pos, axis=0)
    assert np.all(steps.sum(axis=1) == 1) and np.all(steps >= 0)
    assert np.array_equal(pos.sum(axis=1), np.arange(path.L + 1))


def test_spec_validation():
    with pytest.raises(ValueError):
        PathMeasureSpec("z3", 4)
    with pytest.raises(ValueError):
        PathMeasureSpec("z3", 3, SpinParams(2, 7))   # alpha < 1/2
    with pytest.raises(ValueError):
        PathMeasureSpec("bogus")


def test_z3_path_is_oriented_and_built_from_half_coordinates():
    L = 301
    path = sample_oriented(Z3.with_seed(11), L)
    check_oriented(path)
    pos = path.positions()
    n = np.arange(L + 1)
    W = half_coordinate(sample_path(Z3.params, (11, "W"), (L + 1) // 2))
    Ws = half_coordinate(sample_path(Z3.params, (11, "W#"), (L + 1) // 2))
    np.testing.assert_array_equal(pos[:, 0], W[n // 2])
    np.testing.assert_array_equal(pos[:, 1], Ws[(n + 1) // 2])
    np.testing.assert_array_equal(pos[:, 2], n - W[n // 2] - Ws[(n + 1) // 2])


def test_uniform_increment_frequencies():
    path = sample_oriented(PathMeasureSpec("uniform", 4, seed=2), 10 ** 5)
    check_oriented(path)
    freq = np.bincount(path.increments, minlength=4) / path.L
    sigma = math.sqrt(0.25 * 0.75 / path.L)
    assert np.all(np.abs(freq - 0.25) < 3 * sigma)


def test_batch_sampling_matches_single():
    for spec in (Z3, PathMeasureSpec("uniform", 3, seed=1)):
        rows = sample_increments(spec, 64, [5, 6])
        np.testing.assert_array_equal(rows[0], sample_oriented(spec.with_seed(5), 64).increments)


def test_collision_examples():
    phi = sample_oriented(Z3, 50)
    assert collision_count(phi, phi) == 51
    a = LatticePath(3, [0] * 10)
    b = LatticePath(3, [1] * 10)
    assert collision_count(a, b) == 1
    assert shared_edge_count(a, b) == 0
    with pytest.raises(ValueError):
        collision_count(a, LatticePath(2, [0]))


def test_shared_edges_bounded_by_collisions():
    for spec in (Z3, PathMeasureSpec("uniform", 3, seed=3), PathMeasureSpec("uniform", 4, seed=3)):
        A = sample_increments(spec, 60, [(i, 0) for i in range(10_000)])
        B = sample_increments(spec, 60, [(i, 1) for i in range(10_000)])
        fast = batch_collisions(A, B, spec.d)
        for i in range(0, 10_000, 37):
            phi, psi = LatticePath(spec.d, A[i]), LatticePath(spec.d, B[i])
            assert fast[i] == collision_count(phi, psi)
        # shared edges <= collisions on every pair (vectorized form)
        same_step = A == B
        pos_eq = np.ones_like(same_step)
        for c in range(spec.d):
            pa = np.cumsum(A == c, axis=1) - (A == c)
            pb = np.cumsum(B == c, axis=1) - (B == c)
            pos_eq &= pa == pb
        shared = (same_step & pos_eq).sum(axis=1)
        assert np.all(shared <= fast)
        for i in range(0, 10_000, 211):
            phi, psi = LatticePath(spec.d, A[i]), LatticePath(spec.d, B[i])
            assert shared[i] == shared_edge_count(phi, psi)


def test_uniform_d3_collisions_grow_with_L():
    spec = PathMeasureSpec("uniform", 3, seed=4)
    c = pair_collisions(spec, 4096, 4000, horizons=[256, 1024, 4096])
    means = c.mean(axis=1)
    assert means[0] < means[1] < means[2]


def test_survival_and_fit_on_geometric_counts():
    rng = np.random.default_rng(0)
    theta = 0.6
    counts = rng.geometric(1 - theta, 200_000)   # P[X >= l] = theta^(l-1)
    fit = fit_counts(counts, bootstrap=100)
    assert fit.lo <= fit.theta_hat <= fit.hi
    assert abs(fit.theta_hat - theta) < 0.02
    surv = survival_curve(counts)
    assert surv[0] == 1 and np.all(np.diff(surv) <= 0)


def test_degenerate_fit_is_reported():
    with pytest.warns(RuntimeWarning):
        fit = fit_counts(np.ones(1000, dtype=int))
    assert fit.degenerate


def test_theta_d_errors_and_monotonicity():
    with pytest.raises(ValueError):
        theta_d_estimate(3, 0, 100, 10_000)
    a = theta_d_estimate(4, 1, 2000, 10_000)
    b = theta_d_estimate(4, 1, 2000, 20_000)
    assert 0 < a.value < 1
    assert b.returned >= a.returned


def test_theta_4_reproducible_across_seeds():
    est = theta_d_estimate(4, 99, 10_000, 10_000)
    assert est.lo <= frozen.THETA_4_HI and frozen.THETA_4_LO <= est.hi


def test_spaced_constants_zeta_example():
    c = lemma31_constants(lambda k: 1.0 / np.asarray(k, dtype=float) ** 2)
    beta = math.pi ** 2 / 24
    assert c.m == 2
    # the integral tail after 4096 explicit terms overshoots by at most f(4096 m)
    assert beta <= c.beta <= beta + 1.0 / (2 * 4096) ** 2
    assert c.theta == pytest.approx(math.sqrt(beta), rel=1e-7)
    assert c.C == pytest.approx(2 / beta, rel=1e-7)


def test_spaced_constants_degenerate():
    c = lemma31_constants(lambda k: 0.0 * np.asarray(k, dtype=float))
    assert c.m == 1 and c.beta == 0 and c.theta == 0 and c.degenerate


def test_spaced_constants_not_summable():
    with pytest.raises(ValueError):
        lemma31_constants(lambda k: 1.0 / np.asarray(k, dtype=float), max_m=64)


def test_spaced_constants_gamma_profile_frozen():
    c = lemma31_constants(gamma_profile_bound())
    assert c.beta < 1 and 0 < c.theta < 1
    assert tuple(c) == pytest.approx(frozen.GAMMA_SPACED_CONSTANTS, rel=1e-9)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10 ** 6), L=st.integers(1, 200), kind=st.sampled_from(["z3", "u3", "u5"]))
def test_sampled_paths_are_oriented(seed, L, kind):
    spec = Z3 if kind == "z3" else PathMeasureSpec("uniform", int(kind[1]))
    check_oriented(sample_oriented(spec.with_seed(seed), L))
