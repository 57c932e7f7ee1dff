from __future__ import annotations

import math

import networkx as nx
import numpy as np
import pytest

from eitlab.eit_paths import PathMeasureSpec
from eitlab.network_flows import (build_flow, dense_resistance, effective_resistance,
                                  energy_bound, energy_report, estimate_ZN, graph_from_edges,
                                  martingale_check, path_graph_profile, path_sample,
                                  resistance_growth_profile, second_moment_bound, sphere_resistance,
                                  support_bound)
from eitlab.percolation import PercConfig, oriented_cluster, sample_config

Z3 = PathMeasureSpec("z3", 3)
U3 = PathMeasureSpec("uniform", 3)


def random_connected(rng, n):
    while True:
        G = nx.gnp_random_graph(n, rng.uniform(0.2, 0.8), seed=int(rng.integers(1 << 30)))
        if nx.is_connected(G):
            return np.array(G.edges(), dtype=np.int64).reshape(-1, 2)


def test_support_and_exact_sample():
    assert support_bound(U3, 5) == 243
    assert [support_bound(Z3, N) for N in (8, 16, 24)] == [4, 16, 64]
    s = path_sample(U3, 4)
    assert s.exact and s.denom == 81 and s.weights.sum() == 81 and len(s.weights) == 81
    z = path_sample(Z3, 20)
    assert z.exact and z.weights.sum() == z.denom
    assert np.all(np.bincount(z.increments.ravel(), minlength=3) > 0)
    mc = path_sample(Z3, 20, 200, exact=False)
    assert not mc.exact and mc.denom == 200
    with pytest.raises(ValueError):
        path_sample(Z3, 20, 10, exact=False)


def test_ZN_extremes():
    assert estimate_ZN(sample_config(3, 10, 1.0), Z3, 10) == 1.0
    closed = PercConfig(3, 10, 1e-6)
    assert not closed.edge_open.any()
    assert estimate_ZN(closed, Z3, 10) == 0.0
    with pytest.raises(ValueError):
        estimate_ZN(sample_config(3, 5, 1.0), Z3, 10)


def test_ZN_exact_for_uniform_measure():
    cfg = sample_config(2, 6, 0.7, seed=9)
    # brute force over all 2^6 oriented paths
    from itertools import product
    hits = 0
    for inc in product(range(2), repeat=6):
        x = np.zeros(2, dtype=int)
        ok = True
        for i in inc:
            v = cfg.box.index(x)
            ok &= bool(cfg.edge_open[v, i])
            x[i] += 1
        hits += ok
    assert estimate_ZN(cfg, PathMeasureSpec("uniform", 2), 6) == pytest.approx(
        hits / 64 * 0.7 ** -6, rel=1e-15)


@pytest.mark.parametrize("spec", [Z3, U3])
def test_flow_strength_and_conservation(spec):
    for seed in range(20):
        cfg = sample_config(3, 10, 0.8, seed=seed)
        f = build_flow(cfg, spec, 10)
        assert f.strength == estimate_ZN(cfg, spec, 10)
        assert f.conservation_residual() < 1e-9
        if f.strength > 0:
            lev = cfg.box.level()
            assert f.divergence()[lev == 10].sum() == pytest.approx(-f.strength, rel=1e-12)


def test_flow_closed_and_single_path():
    f = build_flow(PercConfig(3, 6, 1e-6), Z3, 6)
    assert f.strength == 0 and f.energy == 0 and len(f.edge_ids) == 0
    # only the straight path along e_0 is open: energy / strength^2 is N
    cfg = PercConfig(2, 9, 1.0)
    mask = np.zeros_like(cfg.edge_open)
    mask[cfg.box.index(np.stack([np.arange(9), np.zeros(9, int)], axis=1)), 0] = True
    cfg.__dict__["edge_open"] = mask
    f1 = build_flow(cfg, PathMeasureSpec("uniform", 2), 9)
    assert f1.strength == 2.0 ** -9 and len(f1.edge_ids) == 9
    assert f1.energy / f1.strength ** 2 == pytest.approx(9, rel=1e-15)
    assert sphere_resistance(oriented_cluster(cfg), 9) == pytest.approx(9, abs=1e-12)
    assert f1.to_csv().splitlines()[0] == "edge_id,value"


def test_thomson_inequality():
    for seed in range(30):
        cfg = sample_config(3, 8, 0.75, seed=seed)
        f = build_flow(cfg, Z3, 8)
        if f.strength <= 0:
            continue
        g = oriented_cluster(cfg)
        R = sphere_resistance(g, 8)
        rep = energy_report(f, 0.85, 3.0, 0.75)
        assert R <= rep.resistance_proxy * (1 + 1e-9)


def test_bounds():
    assert energy_bound(0.5, 2.0, 1.0) == pytest.approx(2 * 0.5 / 0.25)
    assert energy_bound(0.9, 2.0, 0.9) == math.inf
    assert second_moment_bound(0.5, 2.0, 1.0) == pytest.approx(4.0)


def test_martingale_p1_and_inapplicable():
    res = martingale_check(Z3, 1.0, [4, 8], 5, theta=0.85, C=3.0)
    assert res["ok"] and all(r["mean"] == 1 for r in res["rows"])
    low = martingale_check(Z3, 0.8, [4, 8], 30, theta=0.85, C=3.0)
    assert not low["applicable"] and all(r["second_ok"] is None for r in low["rows"])


def test_resistance_closed_forms():
    assert effective_resistance(graph_from_edges(2, [[0, 1]]), 0, [1]) == pytest.approx(1, abs=1e-12)
    for n in (2, 5, 17):
        path = graph_from_edges(n + 1, [[i, i + 1] for i in range(n)])
        assert effective_resistance(path, 0, [n]) == pytest.approx(n, abs=1e-12)
    for a, b in [(1, 1), (2, 3), (4, 7)]:
        # two disjoint paths of lengths a and b between 0 and 1
        edges, nxt = [], 2
        for length in (a, b):
            chain = [0] + list(range(nxt, nxt + length - 1)) + [1]
            nxt += length - 1
            edges += list(zip(chain, chain[1:]))
        g = graph_from_edges(nxt, edges)
        assert effective_resistance(g, 0, [1]) == pytest.approx(a * b / (a + b), abs=1e-12)


def test_resistance_disconnected_and_trivial():
    g = graph_from_edges(4, [[0, 1], [2, 3]])
    assert effective_resistance(g, 0, [3]) == math.inf
    assert effective_resistance(g, 0, [0]) == 0.0
    # extra component does not affect the answer
    assert effective_resistance(g, 0, [1, 3]) == pytest.approx(1.0, abs=1e-12)


def test_resistance_matches_dense_oracle():
    rng = np.random.default_rng(0)
    for _ in range(200):
        n = int(rng.integers(2, 13))
        edges = random_connected(rng, n)
        k = int(rng.integers(1, n))
        sinks = rng.choice(np.arange(1, n), size=k, replace=False)
        got = effective_resistance(graph_from_edges(n, edges), 0, sinks)
        assert got == pytest.approx(dense_resistance(n, edges, 0, sinks), abs=1e-9)


def test_rayleigh_monotonicity():
    rng = np.random.default_rng(1)
    for _ in range(200):
        n = int(rng.integers(3, 13))
        edges = random_connected(rng, n)
        before = effective_resistance(graph_from_edges(n, edges), 0, [n - 1])
        extra = rng.integers(0, n, size=(1, 2))
        after = effective_resistance(graph_from_edges(n, np.vstack([edges, extra])), 0, [n - 1])
        assert after <= before + 1e-12


def test_growth_profiles():
    lattice = resistance_growth_profile(3, 1.0, None, [4, 8, 16], 1)
    assert lattice.flag == "transient-like"
    assert lattice.increments[1] < lattice.increments[0]
    line = path_graph_profile([4, 8, 16])
    assert line.medians == pytest.approx([4, 8, 16], abs=1e-12)
    assert line.slopes == pytest.approx([1, 1], abs=1e-12)
    assert lattice.to_csv().splitlines()[0] == "radius,median_R,increment,slope,survivors"


def test_growth_profile_guards():
    with pytest.raises(ValueError):
        resistance_growth_profile(3, 0.95, Z3, [8, 4], 5)
    with pytest.raises(ValueError):
        resistance_growth_profile(3, 0.8, Z3, [4, 8], 5, theta=0.85)
    with pytest.raises(ValueError, match="surviving"):
        resistance_growth_profile(2, 0.3, None, [4, 8], 5)
