"""Path-measure flows on oriented percolation clusters and electrical diagnostics.

For a configuration on the forward box and a unit-speed path measure mu,

    Z_N = p^{-N} mu{phi : the first N edges of phi are open}

and f_N(e) = p^{-N} mu{phi : phi_N open, e in phi_N} is a flow of strength
Z_N from the origin to the depth-N sphere.  Path measures are represented by a
finite sample with integer multiplicities over a common denominator (either an
exact enumeration or a Monte Carlo draw), so conservation and the identity
``strength == Z_N`` hold exactly rather than statistically.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass
from itertools import product
from typing import Sequence

import numpy as np
from scipy import sparse, stats
from scipy.sparse.csgraph import connected_components, shortest_path
from scipy.sparse.linalg import cg

from .eit_paths import PathMeasureSpec, _z3_increments, sample_increments
from .percolation import ClusterGraph, PercConfig, oriented_cluster, sample_config
from .unpredictable_walk import _resolving_vertices, tree_height

EXACT_SUPPORT_LIMIT = 10 ** 5


class SolverError(RuntimeError):
    """Conjugate gradients did not reach the requested residual."""


@dataclass(frozen=True)
class PathSample:
    """Paths of length N with integer weights summing to ``denom``."""

    increments: np.ndarray   # (M, N) int8
    weights: np.ndarray      # (M,) int64
    denom: int
    exact: bool


def _z3_walk_laws(spec: PathMeasureSpec, half: int) -> np.ndarray:
    """All equally likely step vectors of the first ``half`` walk steps."""
    idx = np.arange(half, dtype=np.int64)
    vid, at_root = _resolving_vertices(spec.params, idx, tree_height(spec.params, half))
    uniq, inv = np.unique(vid[~at_root], return_inverse=True)
    configs = np.arange(1 << uniq.size, dtype=np.int64)
    bits = (configs[:, None] >> np.arange(uniq.size, dtype=np.int64)[None, :]) & 1
    steps = np.ones((configs.size, half), dtype=np.int64)
    steps[:, ~at_root] = 1 - 2 * bits[:, inv]
    return steps


def support_bound(spec: PathMeasureSpec, N: int) -> int:
    """Size of the enumeration used by exact-mu mode at depth N."""
    if spec.kind == "uniform":
        return spec.d ** N
    half = (N + 1) // 2
    idx = np.arange(half, dtype=np.int64)
    vid, at_root = _resolving_vertices(spec.params, idx, tree_height(spec.params, half))
    return 4 ** np.unique(vid[~at_root]).size


def path_sample(spec: PathMeasureSpec, N: int, path_samples: int = 1000, *,
                exact: bool | None = None) -> PathSample:
    """Exact enumeration of mu restricted to N steps, or a Monte Carlo sample.

    ``exact=None`` enumerates whenever the support is at most 10^5 paths.
    Duplicate paths are merged into multiplicities.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    if exact is None:
        exact = support_bound(spec, N) <= EXACT_SUPPORT_LIMIT
    if exact:
        if spec.kind == "uniform":
            inc = np.array(list(product(range(spec.d), repeat=N)), dtype=np.int8)
        else:
            walks = _z3_walk_laws(spec, (N + 1) // 2)
            i, j = np.divmod(np.arange(len(walks) ** 2), len(walks))
            inc = _z3_increments(walks[i], walks[j], N)
    else:
        if path_samples < 100:
            raise ValueError("path_samples must be >= 100")
        inc = sample_increments(spec, N, [(spec.seed, "mu", i) for i in range(path_samples)])
    denom = len(inc)
    uniq, counts = np.unique(inc, axis=0, return_counts=True)
    return PathSample(uniq.astype(np.int8), counts.astype(np.int64), denom, exact)


def _path_edges(cfg: PercConfig, inc: np.ndarray):
    """Tail vertex indices ``(M, N)`` and openness ``(M,)`` of each path's edges."""
    box = cfg.box
    M, N = inc.shape
    if N > box.extent:
        raise ValueError(f"depth {N} exceeds the box depth {box.extent}")
    steps = np.zeros((M, N, cfg.d), dtype=np.int64)
    np.put_along_axis(steps, inc[..., None].astype(np.int64), 1, axis=2)
    pos = np.concatenate([np.zeros((M, 1, cfg.d), dtype=np.int64), np.cumsum(steps, axis=1)], axis=1)
    tails = box.index(pos[:, :-1])
    is_open = np.all(cfg.edge_open[tails, inc], axis=1)
    return tails, is_open


def _scale(p: float, N: int, denom: int) -> float:
    return p ** (-N) / denom


def estimate_ZN(cfg: PercConfig, spec: PathMeasureSpec, N: int, path_samples: int = 1000, *,
                exact: bool | None = None, sample: PathSample | None = None) -> float:
    """``p^{-N}`` times the mu-fraction of paths whose first N edges are open."""
    sample = sample or path_sample(spec, N, path_samples, exact=exact)
    _, is_open = _path_edges(cfg, sample.increments)
    n_open = int(sample.weights[is_open].sum())
    return n_open * _scale(cfg.p, N, sample.denom)


@dataclass
class FlowAssignment:
    """Edge flow on the forward box; edges are ids ``tail * d + direction``."""

    d: int
    N: int
    source: int
    edge_ids: np.ndarray     # sorted box edge ids carrying flow
    counts: np.ndarray       # integer path multiplicities per edge
    scale: float
    n_vertices: int
    vertex_level: np.ndarray
    heads: np.ndarray        # head vertex per edge id

    @property
    def values(self) -> np.ndarray:
        return self.counts * self.scale

    @property
    def tails(self) -> np.ndarray:
        return self.edge_ids // self.d

    @property
    def strength(self) -> float:
        """Net outflow from the source."""
        out = int(self.counts[self.tails == self.source].sum())
        return out * self.scale

    @property
    def energy(self) -> float:
        return float(np.sum(self.values ** 2))

    def divergence(self) -> np.ndarray:
        """Outflow minus inflow at every box vertex."""
        div = np.zeros(self.n_vertices)
        v = self.values
        np.add.at(div, self.tails, v)
        np.add.at(div, self.heads, -v)
        return div

    def conservation_residual(self) -> float:
        """Max |divergence| over interior vertices (not source, depth < N)."""
        div = self.divergence()
        interior = self.vertex_level < self.N
        interior[self.source] = False
        return float(np.max(np.abs(div[interior]), initial=0.0))

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("edge_id,value\n")
        for e, v in zip(self.edge_ids, self.values):
            buf.write(f"{int(e)},{float(v)!r}\n")
        return buf.getvalue()


def build_flow(cfg: PercConfig, spec: PathMeasureSpec, N: int, path_samples: int = 1000, *,
               exact: bool | None = None, sample: PathSample | None = None) -> FlowAssignment:
    """The flow ``f_N`` for the (exact or empirical) path measure."""
    sample = sample or path_sample(spec, N, path_samples, exact=exact)
    tails, is_open = _path_edges(cfg, sample.increments)
    eids = (tails[is_open] * cfg.d + sample.increments[is_open]).ravel()
    w = np.repeat(sample.weights[is_open], N)
    uniq, inv = np.unique(eids, return_inverse=True)
    counts = np.zeros(uniq.size, dtype=np.int64)
    np.add.at(counts, inv, w)
    box = cfg.box
    heads = box.heads[uniq // cfg.d, uniq % cfg.d]
    return FlowAssignment(cfg.d, N, box.origin, uniq, counts, _scale(cfg.p, N, sample.denom),
                          box.n_vertices, box.level(), heads)


@dataclass(frozen=True)
class EnergyReport:
    strength: float
    energy: float
    bound: float
    resistance_proxy: float

    def csv_row(self) -> str:
        return f"{self.strength!r},{self.energy!r},{self.bound!r},{self.resistance_proxy!r}"


def energy_bound(theta: float, C: float, p: float) -> float:
    """``sum_n C theta^n n p^{-n} = C q / (1 - q)^2`` with ``q = theta/p``."""
    q = theta / p
    if q >= 1:
        return math.inf
    return C * q / (1 - q) ** 2


def energy_report(flow: FlowAssignment, theta: float, C: float, p: float) -> EnergyReport:
    strength, energy = flow.strength, flow.energy
    proxy = energy / strength ** 2 if strength > 0 else math.inf
    return EnergyReport(strength, energy, energy_bound(theta, C, p), proxy)


def second_moment_bound(theta: float, C: float, p: float) -> float:
    q = theta / p
    return C / (1 - q) if q < 1 else math.inf


def martingale_check(spec: PathMeasureSpec, p: float, N_list: Sequence[int], replicas: int, *,
                     theta: float, C: float, seed=0, d: int = 3, path_samples: int = 1000) -> dict:
    """Mean, second moment and drift checks of ``Z_N`` across ``N_list``.

    Each replica is one configuration; all depths reuse the same path sample,
    so ``N -> Z_N`` is a martingale along each replica.  When ``p <= theta``
    the second-moment check is reported as inapplicable.
    """
    N_list = sorted(N_list)
    samples = {N: path_sample(spec, N, path_samples) for N in N_list}
    Z = np.empty((replicas, len(N_list)))
    for t in range(replicas):
        cfg = sample_config(d, N_list[-1], p, True, "bond", (seed, "martingale", t))
        Z[t] = [estimate_ZN(cfg, spec, N, sample=samples[N]) for N in N_list]
    applicable = theta < p
    bound = second_moment_bound(theta, C, p)
    rows = []
    for j, N in enumerate(N_list):
        z = Z[:, j]
        se = z.std(ddof=1) / math.sqrt(replicas) if replicas > 1 else 0.0
        z2 = z ** 2
        se2 = z2.std(ddof=1) / math.sqrt(replicas) if replicas > 1 else 0.0
        rows.append({"N": N, "mean": float(z.mean()), "se": float(se),
                     "mean_ok": bool(abs(z.mean() - 1) <= 3 * se + 1e-12),
                     "second_moment": float(z2.mean()), "second_se": float(se2),
                     "bound": bound,
                     "second_ok": bool(z2.mean() <= bound + 3 * se2) if applicable else None})
    drifts = []
    for j in range(len(N_list) - 1):
        x, y = Z[:, j], Z[:, j + 1] - Z[:, j]
        if np.ptp(x) == 0:
            # no spread in Z_N: the drift is just the mean increment
            se = y.std(ddof=1) / math.sqrt(replicas) if replicas > 1 else 0.0
            drifts.append({"from": N_list[j], "to": N_list[j + 1], "slope": float(y.mean()),
                           "se": float(se), "ok": bool(abs(y.mean()) <= 3 * se + 1e-12)})
            continue
        fit = stats.linregress(x, y)
        drifts.append({"from": N_list[j], "to": N_list[j + 1], "slope": float(fit.slope),
                       "se": float(fit.stderr), "ok": bool(abs(fit.slope) <= 3 * fit.stderr)})
    ok = all(r["mean_ok"] and r["second_ok"] is not False for r in rows) and all(r["ok"] for r in drifts)
    return {"p": p, "applicable": applicable, "rows": rows, "drift": drifts, "ok": ok, "Z": Z}


# --- effective resistance -------------------------------------------------

def graph_from_edges(n: int, edges) -> ClusterGraph:
    """Wrap an undirected edge list on vertices ``0..n-1`` as a cluster graph."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    dist = shortest_path(_adjacency(n, edges), directed=False, unweighted=True, indices=0)
    dist = np.where(np.isfinite(dist), dist, -1).astype(np.int64)
    return ClusterGraph(np.arange(n), np.zeros((n, 0), dtype=np.int64), edges,
                        np.zeros((len(edges), 2), dtype=np.int64), dist, dist.copy(), False)


def _adjacency(n: int, edges: np.ndarray) -> sparse.csr_matrix:
    rows = np.concatenate([edges[:, 0], edges[:, 1]])
    cols = np.concatenate([edges[:, 1], edges[:, 0]])
    return sparse.coo_matrix((np.ones(rows.size), (rows, cols)), shape=(n, n)).tocsr()


def laplacian(n: int, edges) -> sparse.csr_matrix:
    """Unit-conductance graph Laplacian (parallel edges add, loops ignored)."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    edges = edges[edges[:, 0] != edges[:, 1]]
    A = _adjacency(n, edges)
    return (sparse.diags(np.asarray(A.sum(axis=1)).ravel()) - A).tocsr()


def effective_resistance(g: ClusterGraph, v0: int, sink_set, *, rtol: float = 1e-10) -> float:
    """Resistance between ``v0`` and the shorted ``sink_set`` (unit resistors).

    Solves the grounded Laplacian system by Jacobi-preconditioned conjugate
    gradients; infinite if no sink is connected to ``v0``.
    """
    n = g.n_vertices
    sinks = np.zeros(n, dtype=bool)
    sinks[np.asarray(list(sink_set), dtype=np.int64)] = True
    if sinks[v0]:
        return 0.0
    edges = np.asarray(g.edges, dtype=np.int64).reshape(-1, 2)
    _, label = connected_components(_adjacency(n, edges), directed=False)
    comp = label == label[v0]
    if not np.any(sinks & comp):
        return math.inf
    free = comp & ~sinks
    Lap = laplacian(n, edges)
    idx = np.flatnonzero(free)
    A = Lap[idx][:, idx]
    rhs = np.zeros(idx.size)
    src = int(np.searchsorted(idx, v0))
    rhs[src] = 1.0
    M = sparse.diags(1.0 / A.diagonal())
    x, info = cg(A, rhs, rtol=rtol, atol=0.0, M=M, maxiter=50 * max(idx.size, 1))
    if info != 0:
        raise SolverError(f"CG did not converge (info={info}) on {idx.size} unknowns")
    return float(x[src])


def dense_resistance(n: int, edges, v0: int, sink_set) -> float:
    """Direct dense solve of the grounded Laplacian (reference implementation)."""
    L = laplacian(n, edges).toarray()
    sinks = set(int(s) for s in sink_set)
    if v0 in sinks:
        return 0.0
    keep = [i for i in range(n) if i not in sinks]
    A = L[np.ix_(keep, keep)]
    rhs = np.zeros(len(keep))
    rhs[keep.index(v0)] = 1.0
    x = np.linalg.solve(A, rhs)
    return float(x[keep.index(v0)])


def _induced(g: ClusterGraph, keep: np.ndarray) -> ClusterGraph:
    local = np.full(g.n_vertices, -1, dtype=np.int64)
    local[keep] = np.arange(keep.size)
    e = g.edges
    ok = (local[e[:, 0]] >= 0) & (local[e[:, 1]] >= 0)
    return ClusterGraph(g.vertices[keep], g.coords[keep], local[e[ok]], g.edge_ids[ok],
                        g.dist[keep], g.level[keep], g.truncated)


def sphere_resistance(g: ClusterGraph, r: int, **kw) -> float:
    """Resistance from the source to the cluster's level-r vertices."""
    sub = _induced(g, np.flatnonzero(g.level <= r))
    sinks = np.flatnonzero(sub.level == r)
    if sinks.size == 0:
        return math.inf
    return effective_resistance(sub, 0, sinks, **kw)


@dataclass
class ResistanceProfile:
    d: int
    p: float
    radii: list
    medians: list
    increments: list         # R(r_{i+1}) - R(r_i)
    slopes: list             # increments per unit radius
    survivors: int
    replicas: int
    flag: str
    per_replica: np.ndarray

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("radius,median_R,increment,slope,survivors\n")
        for i, (r, m) in enumerate(zip(self.radii, self.medians)):
            inc = repr(self.increments[i - 1]) if i else ""
            slope = repr(self.slopes[i - 1]) if i else ""
            buf.write(f"{r},{m!r},{inc},{slope},{self.survivors}\n")
        return buf.getvalue()


def _diagnose(radii, medians):
    increments = [b - a for a, b in zip(medians, medians[1:])]
    slopes = [inc / (r1 - r0) for inc, r0, r1 in zip(increments, radii, radii[1:])]
    decreasing = all(b < a for a, b in zip(increments, increments[1:]))
    return increments, slopes, "transient-like" if decreasing else "recurrent-like"


def resistance_growth_profile(d: int, p: float, spec: PathMeasureSpec | None, radii: Sequence[int],
                              replicas: int, seed=0, *, oriented: bool = True,
                              theta: float | None = None, min_survivors: int = 10
                              ) -> ResistanceProfile:
    """Median ``R(v0 -> level r)`` over clusters reaching the largest radius.

    ``spec`` is the path measure whose theta justifies the experiment; pass
    its fitted ``theta`` to enforce ``p > theta``.  The flag is
    ``transient-like`` iff the increments ``R(r_{i+1}) - R(r_i)`` strictly
    decrease; transience itself is never asserted.
    """
    radii = list(radii)
    if any(b <= a for a, b in zip(radii, radii[1:])):
        raise ValueError("radii must be increasing")
    if theta is not None and p <= theta:
        raise ValueError(f"hypothesis p > theta fails (p={p}, theta={theta})")
    R = radii[-1]
    rows = []
    n_rep = 1 if p == 1 else replicas
    for t in range(n_rep):
        cfg = sample_config(d, R, p, oriented, "bond", (seed, "resistance", t))
        g = oriented_cluster(cfg)
        if g.level.max() < R:
            continue
        rows.append([sphere_resistance(g, r) for r in radii])
    if p < 1 and len(rows) < min_survivors:
        raise ValueError(f"only {len(rows)} surviving clusters (< {min_survivors})")
    per = np.array(rows, dtype=float).reshape(-1, len(radii))
    medians = [float(m) for m in np.median(per, axis=0)]
    increments, slopes, flag = _diagnose(radii, medians)
    return ResistanceProfile(d, p, radii, medians, increments, slopes, len(rows), n_rep, flag, per)


def path_graph_profile(radii: Sequence[int]) -> ResistanceProfile:
    """Series-law sanity input: a path graph, R(r) = r."""
    radii = list(radii)
    n = radii[-1] + 1
    g = graph_from_edges(n, np.stack([np.arange(n - 1), np.arange(1, n)], axis=1))
    medians = [sphere_resistance(g, r) for r in radii]
    increments, slopes, flag = _diagnose(radii, medians)
    return ResistanceProfile(1, 1.0, radii, medians, increments, slopes, 1, 1, flag,
                             np.array([medians]))
