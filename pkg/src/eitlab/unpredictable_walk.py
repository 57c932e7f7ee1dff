"""Nearest-neighbour walks built by summing spins along a level of the spin tree.

The walk ``S_m`` is the sum of the first ``m`` level-N spins in left-to-right
order.  Spins are random-access: the fresh spin of a vertex reached through an
independent child is the sign of a keyed hash of the vertex, and every other
vertex copies its parent.

Vertices are keyed by ``(height above the leaf level, index at that height)``.
A tree of height N embeds in one of height N+1 as the leftmost (copy) subtree
of the new root, and that embedding leaves these keys unchanged, so the walk
does not depend on which level N is used to produce it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterator, Sequence

import numpy as np
from scipy.stats import binomtest

from .keyed import derive_key, keyed_hash, to_index, to_sign
from .spin_tree import BudgetExceededError, SpinParams, lemma_bound_constant

DEFAULT_PARAMS = SpinParams(3, 1)
ENUMERATION_BUDGET = 1 << 24

_TAG_J, _TAG_CHAIN, _TAG_SUB = 1, 2, 3


@dataclass(frozen=True)
class VertexAddress:
    """Child-index digits from the root; digit ``j < ell`` is a copy child."""

    digits: tuple = ()

    @property
    def level(self) -> int:
        return len(self.digits)

    def index(self, b: int) -> int:
        """Left-to-right index within its level (base-b value of the digits)."""
        v = 0
        for d in self.digits:
            v = v * b + d
        return v

    @classmethod
    def from_index(cls, index: int, level: int, b: int) -> "VertexAddress":
        if not 0 <= index < b ** level:
            raise ValueError(f"index {index} out of range for level {level}")
        digits = []
        for _ in range(level):
            index, d = divmod(index, b)
            digits.append(d)
        return cls(tuple(reversed(digits)))


@dataclass
class WalkPath:
    start: int
    steps: np.ndarray

    def __post_init__(self):
        self.steps = np.asarray(self.steps, dtype=np.int64)
        if self.steps.size and not np.all(np.abs(self.steps) == 1):
            raise ValueError("walk increments must be +/-1")

    @property
    def values(self) -> np.ndarray:
        return self.start + np.concatenate(([0], np.cumsum(self.steps)))

    def __len__(self):
        return len(self.steps)

    def to_csv(self) -> str:
        lines = ["n,S_n"]
        lines += [f"{i},{v}" for i, v in enumerate(self.values)]
        return "\n".join(lines) + "\n"


def _spin_key(seed) -> int:
    return derive_key(seed, "spin")


def tree_height(params: SpinParams, n: int) -> int:
    """Smallest N with b^N >= n."""
    N, size = 0, 1
    while size < n:
        N += 1
        size *= params.b
    return N


def spin_at(params: SpinParams, seed, v: VertexAddress, leaf_level: int | None = None) -> int:
    """Spin of vertex ``v`` (plain tree, root spin +1).

    ``leaf_level`` is the tree height used to key vertices; it defaults to
    ``v.level`` (``v`` is a leaf).  Internal vertices of a taller tree are
    queried by passing that tree's height.
    """
    b, ell = params.b, params.ell
    if leaf_level is None:
        leaf_level = v.level
    if leaf_level < v.level:
        raise ValueError("leaf_level must be at least the vertex level")
    if any(not 0 <= d < b for d in v.digits):
        raise ValueError(f"digits must lie in [0, {b})")
    key = _spin_key(seed)
    prefix = v.index(b)
    for depth in range(v.level, 0, -1):
        d = prefix % b
        if d >= ell:
            height = leaf_level - depth
            return int(to_sign(keyed_hash(key, _vertex_id(height, prefix)))[0])
        prefix //= b
    return 1


def _vertex_id(height, index):
    return np.asarray(index, dtype=np.int64) * 64 + np.asarray(height, dtype=np.int64)


def _resolving_vertices(params: SpinParams, idx: np.ndarray, N: int):
    """For each leaf index, the nearest ancestor-or-self reached via a fresh digit.

    Returns ``(vertex_id, is_root)``; leaves whose chain copies all the way to
    the root get ``is_root = True``.
    """
    b, ell = params.b, params.ell
    idx = np.asarray(idx, dtype=np.int64)
    vid = np.zeros(idx.shape, dtype=np.int64)
    resolved = np.zeros(idx.shape, dtype=bool)
    anc = idx.copy()
    for h in range(N):
        fresh = (anc % b >= ell) & ~resolved
        vid[fresh] = _vertex_id(h, anc[fresh])
        resolved |= fresh
        anc //= b
    return vid, ~resolved


def leaf_spins(params: SpinParams, keys, idx) -> np.ndarray:
    """Spins of leaves ``idx`` for each key in ``keys``; shape ``(len(keys), len(idx))``."""
    idx = np.asarray(idx, dtype=np.int64)
    keys = np.atleast_1d(np.asarray(keys, dtype=np.uint64))
    N = tree_height(params, int(idx.max()) + 1) if idx.size else 0
    vid, at_root = _resolving_vertices(params, idx, N)
    uniq, inv = np.unique(vid[~at_root], return_inverse=True)
    out = np.ones((keys.size, idx.size), dtype=np.int64)
    if uniq.size:
        fresh = to_sign(keyed_hash(keys[:, None], uniq[None, :]))
        out[:, ~at_root] = fresh[:, inv]
    return out


def sample_path(params: SpinParams, seed, n: int, level: int | None = None) -> WalkPath:
    """``S_0..S_n`` from the level-N left-to-right enumeration.

    ``level`` defaults to ``ceil(log_b n)``; any larger level gives the same path.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    N = tree_height(params, n) if level is None else level
    if params.b ** N < n:
        raise ValueError(f"level {N} has fewer than {n} leaves")
    idx = np.arange(n, dtype=np.int64)
    vid, at_root = _resolving_vertices(params, idx, N)
    steps = np.ones(n, dtype=np.int64)
    if (~at_root).any():
        steps[~at_root] = to_sign(keyed_hash(_spin_key(seed), vid[~at_root]))
    return WalkPath(0, steps)


def sample_paths(params: SpinParams, seeds: Sequence, n: int) -> np.ndarray:
    """Batch of walks, one per seed; returns ``S`` with shape ``(len(seeds), n+1)``.

    Row ``i`` equals ``sample_path(params, seeds[i], n).values``.
    """
    keys = np.array([_spin_key(s) for s in seeds], dtype=np.uint64)
    steps = leaf_spins(params, keys, np.arange(n))
    out = np.zeros((len(seeds), n + 1), dtype=np.int64)
    np.cumsum(steps, axis=1, out=out[:, 1:])
    return out


def iter_increments(params: SpinParams, seed) -> Iterator[int]:
    """Stream the increments of ``sample_path`` keeping only the ancestor chain."""
    b, ell = params.b, params.ell
    key = _spin_key(seed)
    digits: list[int] = []   # little-endian digits of the current leaf index
    spins: list[int] = []    # spins[h]: spin of the ancestor at height h

    def refresh(top: int):
        # recompute spins for heights top..0 after the digits below top changed
        index = 0
        for h in range(len(digits) - 1, -1, -1):
            index = index * b + digits[h]
        for h in range(top, -1, -1):
            anc = index // b ** h
            if digits[h] >= ell:
                spins[h] = int(to_sign(keyed_hash(key, _vertex_id(h, anc)))[0])
            else:
                spins[h] = spins[h + 1] if h + 1 < len(spins) else 1

    yield 1  # leaf 0 sits on the root's copy chain
    digits.append(0)
    spins.append(1)
    while True:
        h = 0
        while h < len(digits) and digits[h] == b - 1:
            digits[h] = 0
            h += 1
        if h == len(digits):
            digits.append(1)
            spins.append(1)
        else:
            digits[h] += 1
        refresh(h)
        yield spins[0]


def half_coordinate(path: WalkPath) -> np.ndarray:
    """``W_n = (n + S_n) / 2``: the number of up-steps among the first n."""
    if path.start != 0:
        raise ValueError("half_coordinate needs a path started at 0")
    s = path.values
    twice = np.arange(len(s)) + s
    if np.any(twice % 2):
        raise ValueError("parity violation")
    return twice // 2


# -- stationary version --------------------------------------------------------

def _stationary_spins(params: SpinParams, keys: np.ndarray, pos: np.ndarray) -> np.ndarray:
    """Spins at offsets ``pos`` (>= 0) from the uniformly placed start leaf, per key.

    The start leaf is the original root rho_0 (a single vertex).  Re-rooting
    step t attaches rho_{t-1} as child ``d_t`` of a new root rho_t; the start
    then sits at ``u_t = sum_{s<=t} d_s b^(s-1)`` inside the tree of rho_t.
    Re-rooting continues until every window fits, ``u_H + max(pos) < b^H``;
    re-rooting further never changes a spin already inside the tree.
    Returns shape ``(len(keys), len(pos))``.
    """
    b, ell = params.b, params.ell
    keys = np.atleast_1d(np.asarray(keys, dtype=np.uint64))
    pos = np.asarray(pos, dtype=np.int64)
    need = int(pos.max()) + 1 if pos.size else 1
    max_height = int(62 / math.log2(b))
    u = np.zeros(keys.size, dtype=np.int64)
    chain = [to_sign(keyed_hash(keys, _TAG_CHAIN, 0))]   # spins of rho_0..rho_H
    H, width = 0, 1
    while np.any(u + need > width):
        H += 1
        if H > max_height:
            raise BudgetExceededError("re-rooting exceeded the 64-bit index range")
        d = to_index(keyed_hash(keys, _TAG_J, H), b)
        u += d * width
        width *= b
        chain.append(np.where(d < ell, chain[-1], to_sign(keyed_hash(keys, _TAG_CHAIN, H))))
    chain = np.stack(chain, axis=1)
    x = u[:, None] + pos[None, :]
    # t*: smallest t with x in the subtree of rho_t
    tstar = np.full(x.shape, -1, dtype=np.int64)
    for t in range(H + 1):
        inside = (x // b ** t == (u // b ** t)[:, None]) & (tstar < 0)
        tstar[inside] = t
    out = np.take_along_axis(chain, tstar, axis=1)
    rel = x % (np.int64(b) ** tstar)
    resolved = np.zeros(x.shape, dtype=bool)
    kk = np.broadcast_to(keys[:, None], x.shape)
    for h in range(H):
        anc = rel // b ** h
        fresh = (h < tstar) & (anc % b >= ell) & ~resolved
        if fresh.any():
            out[fresh] = to_sign(keyed_hash(kk[fresh], _TAG_SUB, tstar[fresh], h, anc[fresh]))
        resolved |= fresh
    return out


def stationary_increments(params: SpinParams, seed, positions) -> np.ndarray:
    """Random access to the stationary increments ``S~_{m+1} - S~_m``."""
    return _stationary_spins(params, derive_key(seed, "stationary"), positions)[0]


def stationary_batch(params: SpinParams, seeds: Sequence, positions) -> np.ndarray:
    """``stationary_increments`` for many seeds at once, shape ``(len(seeds), len(positions))``."""
    keys = np.array([derive_key(s, "stationary") for s in seeds], dtype=np.uint64)
    return _stationary_spins(params, keys, positions)


def sample_stationary(params: SpinParams, seed, n: int) -> WalkPath:
    """``S~_0..S~_n`` with stationary increments (uniform root spin, re-rooting)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return WalkPath(0, stationary_increments(params, seed, np.arange(n)))


# -- predictability profile ----------------------------------------------------

def profile_bound(params: SpinParams, k, C: float | None = None):
    """``(2b)^alpha * C * k^-alpha`` with ``C`` the lemma constant by default."""
    if C is None:
        C = lemma_bound_constant(params)
    a = params.alpha
    return (2 * params.b) ** a * C * np.asarray(k, dtype=np.float64) ** (-a)


@dataclass
class ProfileEstimate:
    k: int
    bound_kind: str          # "exact-conditional" | "unconditional-mc"
    value: object            # Fraction for exact estimates
    ci_halfwidth: float = 0.0
    bound: float = math.inf
    flag: bool = False
    n: int | None = None
    extra: dict = field(default_factory=dict)

    CSV_HEADER = "k,value,ci,bound,flag"   # ci: interval half-width

    def csv_row(self) -> str:
        return f"{self.k},{float(self.value)!r},{self.ci_halfwidth!r},{self.bound!r},{int(self.flag)}"


def enumerate_level_spins(params: SpinParams, N: int,
                          budget: int = ENUMERATION_BUDGET) -> np.ndarray:
    """All equally likely level-N spin vectors, shape ``(2^K, b^N)``."""
    K = params.independent_spins(N)
    if (1 << K) > budget:
        raise BudgetExceededError(f"{1 << K} spin configurations exceed budget {budget}")
    idx = np.arange(params.b ** N, dtype=np.int64)
    vid, at_root = _resolving_vertices(params, idx, N)
    uniq, inv = np.unique(vid[~at_root], return_inverse=True)
    if uniq.size != K:
        raise AssertionError("fresh-vertex count mismatch")
    configs = np.arange(1 << K, dtype=np.int64)
    bits = (configs[:, None] >> np.arange(K, dtype=np.int64)[None, :]) & 1
    spins = np.ones((configs.size, idx.size), dtype=np.int8)
    spins[:, ~at_root] = (1 - 2 * bits[:, inv]).astype(np.int8)
    return spins


def exact_conditional_profile(params: SpinParams, N: int, n: int, k: int, *,
                              spins: np.ndarray | None = None,
                              budget: int = ENUMERATION_BUDGET) -> ProfileEstimate:
    """``max P[S_{n+k} = x | S_0..S_n]`` over histories and targets, exactly.

    Histories are grouped over all enumerated configurations of the height-N
    tree.  The profile bound from the lemma constant is attached for reference.
    """
    if n + k > params.b ** N:
        raise ValueError("need n + k <= b^N")
    if spins is None:
        spins = enumerate_level_spins(params, N, budget)
    up = (spins[:, :n] > 0).astype(np.int64)
    hist = up @ (np.int64(1) << np.arange(n, dtype=np.int64)) if n else np.zeros(len(spins), np.int64)
    target = spins[:, :n + k].sum(axis=1, dtype=np.int64) + (n + k)
    joint = hist * (2 * (n + k) + 1) + target
    j_codes, j_counts = np.unique(joint, return_counts=True)
    h_codes, h_counts = np.unique(hist, return_counts=True)
    totals = h_counts[np.searchsorted(h_codes, j_codes // (2 * (n + k) + 1))]
    i = int(np.argmax(j_counts / totals))
    value = Fraction(int(j_counts[i]), int(totals[i]))
    bound = float(profile_bound(params, k))
    return ProfileEstimate(k, "exact-conditional", value, 0.0, bound, value > bound, n=n)


def _wilson(count: int, total: int, confidence: float):
    ci = binomtest(count, total).proportion_ci(confidence_level=confidence, method="wilson")
    return ci.low, ci.high


def _concentration(samples_at_k: dict, bound_fn, confidence: float) -> list:
    out = []
    for k, vals in samples_at_k.items():
        _, counts = np.unique(vals, return_counts=True)
        top = int(counts.max())
        lo, hi = _wilson(top, vals.size, confidence)
        bound = float(bound_fn(k))
        est = ProfileEstimate(k, "unconditional-mc", top / vals.size, float(hi - lo) / 2, bound,
                              bool(lo > bound))
        est.extra["ci"] = (float(lo), float(hi))
        out.append(est)
    return out


def unconditional_concentration(params: SpinParams, seed, ks: Sequence[int], samples: int, *,
                                confidence: float = 0.9973, chunk: int = 2048) -> list:
    """Monte Carlo ``max_x P[S_k = x]`` (a lower proxy for the profile) per k.

    Each estimate carries a Wilson interval; ``flag`` is raised when the
    lower confidence limit exceeds the profile bound.
    """
    if samples < 1000:
        raise ValueError("need at least 1000 samples")
    ks = sorted(int(k) for k in ks)
    n = ks[-1]
    base = derive_key(seed, "concentration")
    keys = keyed_hash(base, np.arange(samples, dtype=np.int64))
    idx = np.arange(n, dtype=np.int64)
    collected = {k: [] for k in ks}
    for lo in range(0, samples, chunk):
        S = np.cumsum(leaf_spins(params, keys[lo:lo + chunk], idx), axis=1)
        for k in ks:
            collected[k].append(S[:, k - 1])
    C = lemma_bound_constant(params)
    return _concentration({k: np.concatenate(v) for k, v in collected.items()},
                          lambda k: profile_bound(params, k, C), confidence)


def srw_concentration(seed, ks: Sequence[int], samples: int, *, confidence: float = 0.9973) -> list:
    """Reference process: simple random walk, ``max_x P[S_k = x]`` per k."""
    ks = sorted(int(k) for k in ks)
    rng = np.random.Generator(np.random.Philox(key=derive_key(seed, "srw")))
    S = np.zeros(samples, dtype=np.int64)
    prev, collected = 0, {}
    for k in ks:
        S = S + 2 * rng.binomial(k - prev, 0.5, size=samples) - (k - prev)
        collected[k] = S.copy()
        prev = k
    return _concentration(collected, lambda k: math.inf, confidence)
