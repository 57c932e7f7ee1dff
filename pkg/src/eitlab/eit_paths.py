"""Oriented path measures on Z^d and their intersection statistics.

Two measures are provided:

* ``uniform``: i.i.d. uniform basis increments in Z^d.
* ``z3``: the path in Z^3 assembled from two independent unpredictable walks
  S, S# through W_n = (n + S_n)/2 as
  ``Gamma_n = (W_{floor(n/2)}, W#_{ceil(n/2)}, n - W_{floor(n/2)} - W#_{ceil(n/2)})``.

Both are unit speed, so two paths from the origin can only share an edge at
the same index, and shared edges never exceed collisions.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np
from scipy import integrate

from .keyed import derive_key, keyed_hash, to_index
from .spin_tree import SpinParams, lemma_bound_constant
from .unpredictable_walk import DEFAULT_PARAMS, _spin_key, leaf_spins, sample_path, _wilson


@dataclass(frozen=True)
class PathMeasureSpec:
    kind: str = "z3"
    d: int = 3
    params: SpinParams | None = None
    seed: object = 0

    def __post_init__(self):
        if self.kind == "uniform":
            if self.d < 2:
                raise ValueError("uniform oriented paths need d >= 2")
        elif self.kind == "z3":
            if self.d != 3:
                raise ValueError("the z3 measure lives in d = 3")
            if self.params is None:
                object.__setattr__(self, "params", DEFAULT_PARAMS)
            if self.params.alpha <= 0.5:
                raise ValueError(f"z3 measure needs alpha > 1/2, got {self.params.alpha:.4f}")
        else:
            raise ValueError(f"unknown path measure kind {self.kind!r}")

    def with_seed(self, seed) -> "PathMeasureSpec":
        return PathMeasureSpec(self.kind, self.d, self.params, seed)


@dataclass
class LatticePath:
    d: int
    increments: np.ndarray

    def __post_init__(self):
        self.increments = np.asarray(self.increments, dtype=np.int64)
        if self.increments.size and (self.increments.min() < 0 or self.increments.max() >= self.d):
            raise ValueError("increments must be basis indices in [0, d)")

    @property
    def L(self) -> int:
        return len(self.increments)

    def positions(self) -> np.ndarray:
        pos = np.zeros((self.L + 1, self.d), dtype=np.int64)
        np.cumsum(np.eye(self.d, dtype=np.int64)[self.increments], axis=0, out=pos[1:])
        return pos

    def edges(self) -> set:
        pos = self.positions()
        return {(tuple(pos[i]), int(self.increments[i])) for i in range(self.L)}


def _z3_increments(s: np.ndarray, s_sharp: np.ndarray, L: int) -> np.ndarray:
    """Increment directions of Gamma given the step arrays of S and S#.

    Step n -> n+1 moves coordinate 1 (if n even) or 0 (if n odd) when the
    corresponding walk steps up, and coordinate 2 otherwise.
    """
    n = np.arange(L)
    m = n // 2
    even = n % 2 == 0
    up = np.where(even, s_sharp[..., m] > 0, s[..., m] > 0)
    return np.where(up, np.where(even, 1, 0), 2).astype(np.int8)


def sample_oriented(spec: PathMeasureSpec, L: int) -> LatticePath:
    """One oriented unit-speed path of length L from the origin."""
    if L < 1:
        raise ValueError("L must be >= 1")
    if spec.kind == "uniform":
        key = derive_key(spec.seed, "uniform", spec.d)
        inc = to_index(keyed_hash(key, np.arange(L, dtype=np.int64)), spec.d)
    else:
        half = (L + 1) // 2
        s = sample_path(spec.params, (spec.seed, "W"), half).steps
        s_sharp = sample_path(spec.params, (spec.seed, "W#"), half).steps
        inc = _z3_increments(s, s_sharp, L)
    path = LatticePath(spec.d, inc)
    _check_oriented(path)
    return path


def _check_oriented(path: LatticePath):
    pos = path.positions()
    if not np.array_equal(pos.sum(axis=1), np.arange(path.L + 1)):
        raise AssertionError("path is not unit speed")
    if np.any(np.diff(pos, axis=0) < 0):
        raise AssertionError("path is not oriented")


def sample_increments(spec: PathMeasureSpec, L: int, seeds: Sequence) -> np.ndarray:
    """Batch of increment arrays, shape ``(len(seeds), L)``.

    Row ``i`` equals ``sample_oriented(spec.with_seed(seeds[i]), L).increments``.
    """
    if spec.kind == "uniform":
        keys = np.array([derive_key(s, "uniform", spec.d) for s in seeds], dtype=np.uint64)
        return to_index(keyed_hash(keys[:, None], np.arange(L, dtype=np.int64)[None, :]),
                        spec.d).astype(np.int8)
    half = (L + 1) // 2
    idx = np.arange(half)
    kw = np.array([_spin_key((s, "W")) for s in seeds], dtype=np.uint64)
    ks = np.array([_spin_key((s, "W#")) for s in seeds], dtype=np.uint64)
    return _z3_increments(leaf_spins(spec.params, kw, idx), leaf_spins(spec.params, ks, idx), L)


def collision_count(phi: LatticePath, psi: LatticePath) -> int:
    """``#{n : phi_n = psi_n}`` over ``0 <= n <= min(L_phi, L_psi)``."""
    if phi.d != psi.d:
        raise ValueError("dimension mismatch")
    L = min(phi.L, psi.L)
    a, b = phi.positions()[:L + 1], psi.positions()[:L + 1]
    return int(np.all(a == b, axis=1).sum())


def shared_edge_count(phi: LatticePath, psi: LatticePath) -> int:
    """Number of edges common to both paths, at any indices."""
    if phi.d != psi.d:
        raise ValueError("dimension mismatch")
    return len(phi.edges() & psi.edges())


def batch_collisions(inc_a: np.ndarray, inc_b: np.ndarray, d: int,
                     horizons: Sequence[int] | None = None) -> np.ndarray:
    """Collision counts of paired rows, optionally at several prefix lengths.

    Returns shape ``(rows,)`` or ``(len(horizons), rows)``.
    """
    L = inc_a.shape[1]
    dtype = np.int16 if L < 32767 else np.int32
    hit = np.ones((inc_a.shape[0], L), dtype=bool)
    # unit speed: the last coordinate difference is implied by the others
    for c in range(d - 1):
        diff = np.cumsum((inc_a == c).astype(dtype) - (inc_b == c).astype(dtype), axis=1, dtype=dtype)
        hit &= diff == 0
    if horizons is None:
        return 1 + hit.sum(axis=1)
    csum = np.cumsum(hit, axis=1)
    return np.stack([1 + csum[:, h - 1] if h > 0 else np.ones(len(hit), dtype=np.int64)
                     for h in horizons])


def pair_collisions(spec: PathMeasureSpec, L: int, pairs: int, *,
                    horizons: Sequence[int] | None = None, chunk: int = 2000) -> np.ndarray:
    """Collision counts for ``pairs`` independent pairs drawn from ``spec``."""
    out = []
    for lo in range(0, pairs, chunk):
        ids = range(lo, min(pairs, lo + chunk))
        a = sample_increments(spec, L, [(spec.seed, "pair", i, 0) for i in ids])
        b = sample_increments(spec, L, [(spec.seed, "pair", i, 1) for i in ids])
        out.append(batch_collisions(a, b, spec.d, horizons))
    return np.concatenate(out, axis=-1)


# -- tail fitting --------------------------------------------------------------

def survival_curve(counts: np.ndarray) -> np.ndarray:
    """``surv[l] = P[count >= l]`` for ``l = 0..max``."""
    hist = np.bincount(counts)
    tail = np.cumsum(hist[::-1])[::-1]
    return tail / counts.size


def _fit_log_linear(surv: np.ndarray, ells: np.ndarray):
    slope, intercept = np.polyfit(ells, np.log(surv[ells]), 1)
    return math.exp(slope), math.exp(intercept)


@dataclass
class TailFit:
    counts: np.ndarray
    theta_hat: float
    C_hat: float
    fit_range: tuple
    lo: float = math.nan
    hi: float = math.nan
    C_envelope: float = math.nan
    degenerate: bool = False
    curvature: float = math.nan
    residual_rms: float = math.nan
    L: int = 0
    sweep: dict = field(default_factory=dict)
    non_exponential: bool = False

    @property
    def survival(self) -> np.ndarray:
        return survival_curve(self.counts)

    def survival_csv(self) -> str:
        hist = np.bincount(self.counts)
        rows = ["ell,survival,count"]
        for ell, (s, c) in enumerate(zip(self.survival, hist)):
            rows.append(f"{ell},{float(s)!r},{int(c)}")
        return "\n".join(rows) + "\n"

    def fit_csv(self) -> str:
        a, b = self.fit_range
        return ("theta_hat,C_hat,lo,hi,range\n"
                + ",".join(repr(float(v)) for v in (self.theta_hat, self.C_hat, self.lo, self.hi))
                + f",{a}-{b}\n")


def fit_range_for(surv: np.ndarray, upper: float = 1e-1, lower: float = 1e-3) -> np.ndarray:
    ells = np.arange(surv.size)
    return ells[(surv <= upper) & (surv >= lower)]


def fit_counts(counts: np.ndarray, *, upper: float = 1e-1, lower: float = 1e-3,
               bootstrap: int = 200, seed=0, confidence: float = 0.95) -> TailFit:
    """Least-squares fit of ``log P[count >= l]`` against ``l`` over a survival window."""
    counts = np.asarray(counts, dtype=np.int64)
    surv = survival_curve(counts)
    ells = fit_range_for(surv, upper, lower)
    if ells.size < 3:
        warnings.warn(f"degenerate tail fit: {ells.size} usable points", RuntimeWarning, stacklevel=2)
        return TailFit(counts, math.nan, math.nan, (int(ells.min(initial=0)), int(ells.max(initial=0))),
                       degenerate=True)
    theta, C = _fit_log_linear(surv, ells)
    resid = np.log(surv[ells]) - (math.log(C) + ells * math.log(theta))
    curv = np.polyfit(ells, np.log(surv[ells]), 2)[0] if ells.size >= 4 else math.nan
    envelope = float(np.max(surv / theta ** np.arange(surv.size)))
    rng = np.random.Generator(np.random.Philox(key=derive_key(seed, "bootstrap")))
    hist = np.bincount(counts)
    probs = hist / counts.size
    boot = []
    for _ in range(bootstrap):
        h = rng.multinomial(counts.size, probs)
        s = np.cumsum(h[::-1])[::-1] / counts.size
        if np.all(s[ells] > 0):
            boot.append(_fit_log_linear(s, ells)[0])
    a = (1 - confidence) / 2
    lo, hi = (np.quantile(boot, [a, 1 - a]) if boot else (math.nan, math.nan))
    return TailFit(counts, theta, C, (int(ells[0]), int(ells[-1])), float(lo), float(hi),
                   envelope, False, float(curv), float(np.sqrt(np.mean(resid ** 2))))


def tail_fit(spec: PathMeasureSpec, L: int, pairs: int, *, sweep_factor: int = 4,
             upper: float = 1e-1, lower: float = 1e-3, bootstrap: int = 200,
             chunk: int = 2000) -> TailFit:
    """Sample ``pairs`` path pairs of length L and fit the collision-number tail.

    The same pairs are also truncated at ``L / sweep_factor``; a tail whose
    fitted ratio keeps growing with L (no L-independent exponential rate) is
    flagged ``non_exponential``.
    """
    if pairs < 1000:
        raise ValueError("need at least 1000 pairs")
    short = max(1, L // sweep_factor)
    both = pair_collisions(spec, L, pairs, horizons=[short, L], chunk=chunk)
    fit = fit_counts(both[1], upper=upper, lower=lower, bootstrap=bootstrap, seed=spec.seed)
    fit.L = L
    if fit.degenerate:
        return fit
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        fit_short = fit_counts(both[0], upper=upper, lower=lower, bootstrap=bootstrap, seed=spec.seed)
    fit.sweep = {short: fit_short, L: fit}
    fit.non_exponential = _tail_drifts(both, fit, fit_short, spec.seed, bootstrap)
    if fit.survival.size and fit.survival[-1] > lower:
        warnings.warn("survival curve does not reach the lower fit bound; tail truncated by L",
                      RuntimeWarning, stacklevel=2)
    return fit


def _tail_drifts(both: np.ndarray, fit: TailFit, fit_short: TailFit, seed, bootstrap: int,
                 rel_tol: float = 0.05) -> bool:
    """True when ``-log theta`` shrinks by more than ``rel_tol`` from L/4 to L, significantly.

    A geometric tail keeps its decay rate as L grows; the d = 3 uniform
    collision count has a rate that drifts to 0 like 1/log L.
    """
    if fit_short.degenerate:
        return True
    lo_short, hi_short = fit_short.fit_range
    lo_long, hi_long = fit.fit_range
    ells_short = np.arange(lo_short, hi_short + 1)
    ells_long = np.arange(lo_long, hi_long + 1)
    rng = np.random.Generator(np.random.Philox(key=derive_key(seed, "drift")))
    n = both.shape[1]
    drops = []
    for _ in range(bootstrap):
        pick = rng.integers(0, n, size=n)
        s0, s1 = survival_curve(both[0, pick]), survival_curve(both[1, pick])
        if s0.size <= ells_short[-1] or s1.size <= ells_long[-1]:
            continue
        if np.any(s0[ells_short] == 0) or np.any(s1[ells_long] == 0):
            continue
        r0 = -math.log(_fit_log_linear(s0, ells_short)[0])
        r1 = -math.log(_fit_log_linear(s1, ells_long)[0])
        drops.append(1 - r1 / r0)
    if not drops:
        return True
    return bool(np.quantile(drops, 0.025) > rel_tol)


# -- theta_d --------------------------------------------------------------------

@dataclass
class ThetaEstimate:
    d: int
    value: float
    lo: float
    hi: float
    walks: int
    horizon: int
    returned: int
    note: str = "truncated at horizon: underestimates the return probability"


MIN_HORIZON = 10_000


def theta_d_estimate(d: int, seed, walks: int, horizon: int, *,
                     confidence: float = 0.95, chunk: int | None = None) -> ThetaEstimate:
    """Monte Carlo return probability of the difference of two uniform oriented paths.

    The difference walk has increments ``e_i - e_j`` with ``i, j`` uniform
    (a zero increment counts as an immediate return).  Walks are keyed by
    (walk, step), so a longer horizon only adds returns.
    """
    if d <= 3:
        raise ValueError(f"d = {d}: the difference walk is recurrent (theta_d = 1); need d >= 4")
    if horizon < MIN_HORIZON:
        raise ValueError(f"horizon must be >= {MIN_HORIZON}")
    key = derive_key(seed, "theta_d", d)
    if chunk is None:
        chunk = max(1, 20_000_000 // (horizon * d))
    steps = np.arange(horizon, dtype=np.int64)
    dtype = np.int16 if horizon < 32767 else np.int32
    returned = 0
    for lo in range(0, walks, chunk):
        w = np.arange(lo, min(walks, lo + chunk), dtype=np.int64)
        h = keyed_hash(key, w[:, None], steps[None, :])
        i = ((h >> np.uint64(32)) * np.uint64(d)) >> np.uint64(32)
        j = ((h & np.uint64(0xFFFFFFFF)) * np.uint64(d)) >> np.uint64(32)
        hit = np.ones(h.shape, dtype=bool)
        for c in range(d - 1):
            diff = np.cumsum((i == c).astype(dtype) - (j == c).astype(dtype), axis=1, dtype=dtype)
            hit &= diff == 0
        returned += int(hit.any(axis=1).sum())
    lo_ci, hi_ci = _wilson(returned, walks, confidence)
    return ThetaEstimate(d, returned / walks, float(lo_ci), float(hi_ci), walks, horizon, returned)


# -- summable profile -> EIT constants --------------------------------------------

class Lemma31Constants(NamedTuple):
    m: int
    beta: float
    theta: float
    C: float

    @property
    def degenerate(self) -> bool:
        return self.beta == 0.0


def _vector_eval(f: Callable, k: np.ndarray) -> np.ndarray:
    try:
        out = np.asarray(f(k), dtype=np.float64)
        if out.shape == k.shape:
            return out
    except Exception:
        pass
    return np.array([float(f(int(x))) for x in k])


def _spaced_sum(f: Callable, m: int, head: int) -> float:
    """Upper bound on ``sum_{k>=1} f(k m)`` for nonincreasing f."""
    k = np.arange(1, head + 1, dtype=np.int64)
    vals = _vector_eval(f, k * m)
    if not np.all(np.isfinite(vals)):
        return math.inf
    s = math.fsum(vals)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        tail, err = integrate.quad(lambda x: float(f(x * m)), head, np.inf, limit=200)
    if not math.isfinite(tail) or tail > 1e6:
        return math.inf
    return s + tail + abs(err)


def lemma31_constants(profile_bound: Callable, *, max_m: int = 1 << 20,
                      head: int = 4096) -> Lemma31Constants:
    """Constants ``(m, beta, theta, C)`` turning a summable profile into an EIT bound.

    ``m`` is the smallest spacing with ``beta = sum_k bound(k m) < 1``; then
    ``P[#collisions >= l] <= C theta^l`` with ``theta = beta^(1/m)`` and
    ``C = m / beta``.  ``profile_bound`` must be nonincreasing.
    """
    def beta_at(m):
        return _spaced_sum(profile_bound, m, head)

    m = 1
    b = beta_at(m)
    while b >= 1:
        if m >= max_m:
            raise ValueError(f"profile not summable below 1 for any m <= {max_m}")
        m = min(2 * m, max_m)
        b = beta_at(m)
    lo = m // 2
    hi = m
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if beta_at(mid) < 1:
            hi = mid
        else:
            lo = mid
    m, b = hi, beta_at(hi)
    if b == 0.0:
        return Lemma31Constants(m, 0.0, 0.0, math.inf)
    return Lemma31Constants(m, b, b ** (1.0 / m), m / b)


def gamma_profile_bound(params: SpinParams = DEFAULT_PARAMS) -> Callable:
    """Profile bound of the z3 path, ``min(1, C_a^2 floor(k/2)^(-2 alpha))``."""
    c_alpha = (2 * params.b) ** params.alpha * lemma_bound_constant(params)
    two_alpha = 2 * params.alpha

    def bound(k):
        half = np.floor(np.asarray(k, dtype=np.float64) / 2)
        with np.errstate(divide="ignore"):
            val = np.where(half > 0, c_alpha ** 2 * half ** (-two_alpha), 1.0)
        out = np.minimum(1.0, val)
        return float(out) if out.ndim == 0 else out

    return bound
