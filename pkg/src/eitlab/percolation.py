"""Finite-box bond/site percolation on Z^d and open-cluster extraction.

Oriented experiments live in the forward box ``{x >= 0, sum(x) <= depth}``
with edges ``x -> x + e_i``; ordinary percolation lives in the L-infinity
ball ``[-R, R]^d``.  Each edge (or site) carries a keyed-hash uniform that
depends only on the seed and its lattice coordinates, and is open iff the
uniform is below p.  The same seed therefore couples all p monotonically and
agrees across box sizes.
"""
from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass
from functools import cached_property
from itertools import product

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import breadth_first_order, shortest_path

from .keyed import derive_key, keyed_hash, to_uniform
from .spin_tree import BudgetExceededError

MAX_EDGES = 50_000_000


@dataclass(frozen=True)
class Box:
    d: int
    extent: int
    oriented: bool

    @cached_property
    def coords(self) -> np.ndarray:
        """Vertex coordinates in lexicographic order, shape ``(V, d)``."""
        if self.oriented:
            axis = np.arange(self.extent + 1)
        else:
            axis = np.arange(-self.extent, self.extent + 1)
        grid = np.array(list(product(axis, repeat=self.d)), dtype=np.int64).reshape(-1, self.d)
        if self.oriented:
            grid = grid[grid.sum(axis=1) <= self.extent]
        return grid

    @property
    def n_vertices(self) -> int:
        return len(self.coords)

    @cached_property
    def _lookup(self) -> np.ndarray:
        side = self.extent + 1 if self.oriented else 2 * self.extent + 1
        table = np.full((side,) * self.d, -1, dtype=np.int64)
        table[tuple((self.coords - self._shift).T)] = np.arange(self.n_vertices)
        return table

    @property
    def _shift(self) -> int:
        return 0 if self.oriented else -self.extent

    def index(self, x) -> np.ndarray:
        """Vertex indices of coordinates ``x`` (shape ``(..., d)``); -1 if outside."""
        x = np.asarray(x, dtype=np.int64)
        shifted = x - self._shift
        side = self._lookup.shape[0]
        inside = np.all((shifted >= 0) & (shifted < side), axis=-1)
        out = np.full(x.shape[:-1], -1, dtype=np.int64)
        if np.any(inside):
            out[inside] = self._lookup[tuple(shifted[inside].T)]
        return out

    def level(self) -> np.ndarray:
        """Graph distance from the base point: L1 depth (oriented) or L-inf norm."""
        if self.oriented:
            return self.coords.sum(axis=1)
        return np.abs(self.coords).max(axis=1)

    @cached_property
    def heads(self) -> np.ndarray:
        """``heads[v, i]``: index of ``v + e_i`` or -1 if it leaves the box."""
        eye = np.eye(self.d, dtype=np.int64)
        return self.index(self.coords[:, None, :] + eye[None, :, :])

    @property
    def origin(self) -> int:
        return int(self.index(np.zeros(self.d, dtype=np.int64)))


@dataclass(frozen=True)
class PercConfig:
    d: int
    extent: int
    p: float
    oriented: bool = True
    mode: str = "bond"
    seed: object = 0

    def __post_init__(self):
        if not 0 < self.p <= 1:
            raise ValueError("p must lie in (0, 1]")
        if self.mode not in ("bond", "site"):
            raise ValueError(f"unknown percolation mode {self.mode!r}")
        if self.extent < 0:
            raise ValueError("extent must be nonnegative")

    @cached_property
    def box(self) -> Box:
        return Box(self.d, self.extent, self.oriented)

    @cached_property
    def uniforms(self) -> np.ndarray:
        """Per-edge ``(V, d)`` or per-site ``(V,)`` uniforms."""
        key = derive_key(self.seed, "perc", self.mode)
        c = self.box.coords
        if self.mode == "site":
            return to_uniform(keyed_hash(key, *c.T))
        dirs = np.arange(self.d, dtype=np.int64)[None, :]
        return to_uniform(keyed_hash(key, dirs, *(c[:, i:i + 1] for i in range(self.d))))

    @cached_property
    def site_open(self) -> np.ndarray:
        if self.mode == "site":
            return self.uniforms < self.p
        return np.ones(self.box.n_vertices, dtype=bool)

    @cached_property
    def edge_open(self) -> np.ndarray:
        """``(V, d)`` indicator of open edges ``v -> v + e_i`` inside the box."""
        heads = self.box.heads
        valid = heads >= 0
        if self.mode == "bond":
            return valid & (self.uniforms < self.p)
        so = self.site_open
        return valid & so[:, None] & so[np.where(valid, heads, 0)]

    @property
    def open_set(self) -> np.ndarray:
        return self.site_open if self.mode == "site" else self.edge_open

    def edge_list(self) -> np.ndarray:
        """All in-box edges ``(tail, dir)`` in lexicographic order."""
        v, i = np.nonzero(self.box.heads >= 0)
        return np.stack([v, i], axis=1)

    def to_bytes(self) -> bytes:
        """Header (d, extent, p, oriented, mode, seed) then the open bitset.

        The bitset lists in-box edges in lexicographic (tail, direction)
        order, or sites in lexicographic order in site mode.
        """
        seed = repr(self.seed).encode()
        header = struct.pack("<4sHIdBB", b"PERC", self.d, self.extent, self.p,
                             int(self.oriented), 0 if self.mode == "bond" else 1)
        header += struct.pack("<H", len(seed)) + seed
        if self.mode == "site":
            bits = self.site_open
        else:
            e = self.edge_list()
            bits = self.edge_open[e[:, 0], e[:, 1]]
        body = np.packbits(bits.astype(np.uint8), bitorder="little").tobytes()
        return header + struct.pack("<Q", bits.size) + body


def read_config_bytes(blob: bytes) -> dict:
    """Parse ``PercConfig.to_bytes`` output into header fields and a bit array."""
    magic, d, extent, p, oriented, mode = struct.unpack_from("<4sHIdBB", blob, 0)
    if magic != b"PERC":
        raise ValueError("not a percolation config blob")
    off = struct.calcsize("<4sHIdBB")
    (slen,) = struct.unpack_from("<H", blob, off)
    off += 2
    seed = blob[off:off + slen].decode()
    off += slen
    (nbits,) = struct.unpack_from("<Q", blob, off)
    off += 8
    bits = np.unpackbits(np.frombuffer(blob[off:], dtype=np.uint8), bitorder="little")[:nbits]
    return {"d": d, "extent": extent, "p": p, "oriented": bool(oriented),
            "mode": "bond" if mode == 0 else "site", "seed": seed, "bits": bits.astype(bool)}


def sample_config(d: int, extent: int, p: float, oriented: bool = True, mode: str = "bond",
                  seed=0) -> PercConfig:
    """Percolation sample on the finite box; deterministic in ``seed``."""
    cfg = PercConfig(d, extent, p, oriented, mode, seed)
    n_edges = math.comb(extent + d, d) * d if oriented else (2 * extent + 1) ** d * d
    if n_edges > MAX_EDGES:
        raise BudgetExceededError(f"{n_edges} edges exceed the budget of {MAX_EDGES}")
    cfg.edge_open  # materialize
    return cfg


@dataclass
class ClusterGraph:
    """Open cluster of ``source``; local vertex 0 is the source."""

    vertices: np.ndarray       # box vertex indices
    coords: np.ndarray
    edges: np.ndarray          # (E, 2) local indices, undirected view
    edge_ids: np.ndarray       # (E, 2) box (tail, dir) of each edge
    dist: np.ndarray           # graph distance from the source along open paths
    level: np.ndarray          # box level: L1 depth (oriented) or L-inf norm
    truncated: bool
    source: int = 0

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("u,v\n")
        for a, b in self.edges:
            buf.write(f"{int(a)},{int(b)}\n")
        return buf.getvalue()


def _open_adjacency(cfg: PercConfig, directed: bool):
    tails, dirs = np.nonzero(cfg.edge_open)
    heads = cfg.box.heads[tails, dirs]
    V = cfg.box.n_vertices
    if directed:
        rows, cols = tails, heads
    else:
        rows, cols = np.concatenate([tails, heads]), np.concatenate([heads, tails])
    A = coo_matrix((np.ones(rows.size, dtype=np.int8), (rows, cols)), shape=(V, V)).tocsr()
    return A, tails, dirs, heads


def oriented_cluster(cfg: PercConfig, v0=None) -> ClusterGraph:
    """Cluster of ``v0`` (default: the origin).

    Oriented configs follow open edges forward only (the union of directed
    open paths from ``v0``); ordinary configs use undirected open edges.  The
    returned edge set is the undirected view used for resistances.
    """
    box = cfg.box
    src = box.origin if v0 is None else int(box.index(np.asarray(v0)))
    if src < 0:
        raise ValueError("v0 is outside the box")
    A, tails, dirs, heads = _open_adjacency(cfg, directed=cfg.oriented)
    if cfg.mode == "site" and not cfg.site_open[src]:
        order = np.array([src])
    else:
        order = breadth_first_order(A, src, directed=True, return_predecessors=False)
    local = np.full(box.n_vertices, -1, dtype=np.int64)
    local[order] = np.arange(order.size)
    keep = (local[tails] >= 0) & (local[heads] >= 0)
    edges = np.stack([local[tails[keep]], local[heads[keep]]], axis=1)
    if cfg.oriented:
        dist = box.level()[order] - box.level()[src]
    else:
        sub = A[order][:, order]
        dist = shortest_path(sub, directed=False, unweighted=True, indices=0).astype(np.int64)
    lev = box.level()[order]
    truncated = bool(np.any(lev == box.extent))
    return ClusterGraph(order, box.coords[order], edges,
                        np.stack([tails[keep], dirs[keep]], axis=1), dist, lev, truncated)


def survival_lower_bound_check(spec, p: float, theta: float, C: float, N: int, trials: int, *,
                               seed=0, path_samples: int = 512, d: int = 3) -> dict:
    """Compare ``P[Z_N > 0]`` with the second-moment bound ``(1 - theta/p) / C``."""
    from .network_flows import estimate_ZN, path_sample

    if p <= theta:
        raise ValueError(f"hypothesis p > theta fails (p={p}, theta={theta})")
    sample = path_sample(spec, N, path_samples)
    hits = 0
    for t in range(trials):
        cfg = sample_config(d, N, p, True, "bond", (seed, "survival", t))
        hits += estimate_ZN(cfg, spec, N, sample=sample) > 0
    freq = hits / trials
    se = math.sqrt(freq * (1 - freq) / trials)
    bound = (1 - theta / p) / C
    return {"p": p, "N": N, "trials": trials, "frequency": freq, "se": se,
            "bound": bound, "ok": bool(freq >= bound - 3 * se)}
