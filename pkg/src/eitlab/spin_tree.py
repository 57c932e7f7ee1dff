"""Exact laws for the (ell, r) spin tree.

Every vertex of the b-ary tree (b = ell + r) carries a spin in {-1, +1}.  The
first ``ell`` children of a vertex copy its spin, the remaining ``r`` children
draw fresh uniform spins.  ``Y_N`` is the sum of the spins at level N, started
from a root spin of +1.

The law of ``Y_N`` satisfies the distributional recursion

    Y_{N+1} = sum_{j < ell} Y_N^(j) + sum_{j >= ell} sigma_j * Y_N^(j)

with i.i.d. copies ``Y_N^(j)`` and uniform signs ``sigma_j``.  ``exact_pmf``
folds that recursion by convolution.  Masses are dyadic rationals, so exact
mode keeps integer counts over the common denominator ``2**K`` and multiplies
count vectors as big integers (Kronecker substitution through GMP).
"""
from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property
from typing import NamedTuple

import gmpy2
import numpy as np
from scipy.signal import fftconvolve


class BudgetExceededError(RuntimeError):
    """A requested computation would exceed its configured size budget."""


@dataclass(frozen=True)
class SpinParams:
    ell: int
    r: int

    def __post_init__(self):
        if int(self.ell) != self.ell or int(self.r) != self.r:
            raise ValueError("ell and r must be integers")
        if self.ell < 2 or self.r < 1:
            raise ValueError(f"need ell >= 2 and r >= 1, got ell={self.ell}, r={self.r}")

    @property
    def b(self) -> int:
        return self.ell + self.r

    @property
    def alpha(self) -> float:
        return math.log(self.ell) / math.log(self.b)

    @property
    def xi(self) -> float:
        return math.cos(math.pi / (2 * self.ell))

    def independent_spins(self, N: int) -> int:
        """Number of fresh spins in a tree of height N."""
        return self.r * (self.b ** N - 1) // (self.b - 1)


DEFAULT_SUPPORT_BUDGET = 10 ** 7
EXACT_SUPPORT_LIMIT = 10 ** 5
# support * log2(denominator) bound for exact mode; keeps GMP operands < ~32 MB
EXACT_BITS_LIMIT = 1 << 27


@dataclass(frozen=True)
class ExactPmf:
    """Law of ``Y_N`` on the lattice ``offset + 2*i``.

    In ``"exact"`` mode ``data`` holds integer counts over ``2**denom_log2``;
    in ``"float"`` mode it holds float64 masses.
    """

    level: int
    offset: int
    data: object
    mode: str
    denom_log2: int = 0

    step = 2

    def __len__(self):
        return len(self.data)

    @cached_property
    def masses(self):
        if self.mode == "exact":
            den = 1 << self.denom_log2
            return tuple(Fraction(c, den) for c in self.data)
        return np.asarray(self.data, dtype=np.float64)

    @cached_property
    def float_masses(self) -> np.ndarray:
        if self.mode == "exact":
            den = 1 << self.denom_log2
            return np.array([c / den for c in self.data], dtype=np.float64)
        return np.asarray(self.data, dtype=np.float64)

    @property
    def support(self) -> np.ndarray:
        return self.offset + 2 * np.arange(len(self.data), dtype=np.int64)

    def prob(self, x: int):
        i, rem = divmod(x - self.offset, 2)
        if rem or i < 0 or i >= len(self.data):
            return Fraction(0) if self.mode == "exact" else 0.0
        return self.masses[i]

    def as_dict(self) -> dict:
        return {int(x): m for x, m in zip(self.support, self.masses) if m != 0}

    def max_mass(self):
        if self.mode == "exact":
            return Fraction(max(self.data), 1 << self.denom_log2)
        return float(np.max(self.data))

    def total(self):
        if self.mode == "exact":
            return Fraction(sum(self.data), 1 << self.denom_log2)
        return math.fsum(self.data)

    def mean(self):
        if self.mode == "exact":
            s = sum(c * (self.offset + 2 * i) for i, c in enumerate(self.data))
            return Fraction(s, 1 << self.denom_log2)
        return math.fsum(np.asarray(self.data) * self.support)

    def dft(self, lam):
        """``sum_x P[Y=x] exp(i*lam*x)``, vectorized over ``lam``."""
        lam = np.asarray(lam, dtype=np.float64)
        idx = np.arange(len(self.data), dtype=np.float64)
        body = np.exp(1j * np.multiply.outer(lam, 2 * idx)) @ self.float_masses
        return np.exp(1j * lam * self.offset) * body

    def to_csv(self, fh=None) -> str:
        buf = fh if fh is not None else io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["x", "prob"])
        for x, m in zip(self.support, self.masses):
            if m == 0:
                continue
            if self.mode == "exact":
                w.writerow([int(x), f"{m.numerator}/{m.denominator}"])
            else:
                w.writerow([int(x), repr(float(m))])
        return buf.getvalue() if fh is None else ""


def _support_bounds(params: SpinParams, N: int) -> tuple[int, int]:
    lo, hi = 1, 1
    for _ in range(N):
        lo, hi = params.ell * lo - params.r * hi, params.b * hi
    return lo, hi


def support_size(params: SpinParams, N: int) -> int:
    lo, hi = _support_bounds(params, N)
    return (hi - lo) // 2 + 1


# -- exact big-integer convolution -------------------------------------------

def _kron_convolve(a: list[int], b: list[int], bits: int) -> list[int]:
    """Convolve nonnegative integer sequences whose products fit in ``bits``."""
    w = (bits + 7) // 8
    pa = gmpy2.mpz.from_bytes(b"".join(x.to_bytes(w, "little") for x in a), "little")
    if a is b:
        prod = pa * pa
    else:
        prod = pa * gmpy2.mpz.from_bytes(
            b"".join(x.to_bytes(w, "little") for x in b), "little")
    n = len(a) + len(b) - 1
    raw = prod.to_bytes(n * w, "little")
    return [int.from_bytes(raw[i * w:(i + 1) * w], "little") for i in range(n)]


class _Law:
    """Working representation: lattice offset, data, log2 denominator (exact)."""

    __slots__ = ("offset", "data", "k", "exact")

    def __init__(self, offset, data, k, exact):
        self.offset, self.data, self.k, self.exact = offset, data, k, exact

    def conv(self, other: "_Law") -> "_Law":
        if self.exact:
            data = _kron_convolve(self.data, other.data, self.k + other.k + 1)
        elif len(self.data) * len(other.data) < 250_000:
            data = np.convolve(self.data, other.data)
        else:
            data = np.clip(fftconvolve(self.data, other.data), 0.0, None)
        return _Law(self.offset + other.offset, data, self.k + other.k, self.exact)

    def power(self, m: int) -> "_Law":
        result, base = None, self
        while m:
            if m & 1:
                result = base if result is None else result.conv(base)
            m >>= 1
            if m:
                base = base.conv(base)
        return result

    def symmetrized(self) -> "_Law":
        """Law of sigma*Y with sigma a uniform sign."""
        n = len(self.data)
        top = self.offset + 2 * (n - 1)
        lo = min(self.offset, -top)
        size = (max(top, -self.offset) - lo) // 2 + 1
        i0 = (self.offset - lo) // 2
        j0 = (-top - lo) // 2
        if self.exact:
            out = [0] * size
            for i, c in enumerate(self.data):
                out[i0 + i] += c
            for i, c in enumerate(reversed(self.data)):
                out[j0 + i] += c
            return _Law(lo, out, self.k + 1, True)
        out = np.zeros(size)
        out[i0:i0 + n] += 0.5 * self.data
        out[j0:j0 + n] += 0.5 * self.data[::-1]
        return _Law(lo, out, 0, False)

    def trimmed(self) -> "_Law":
        data = self.data
        lo, hi = 0, len(data)
        while lo < hi and data[lo] == 0:
            lo += 1
        while hi > lo and data[hi - 1] == 0:
            hi -= 1
        return _Law(self.offset + 2 * lo, data[lo:hi], self.k, self.exact)

    def to_float(self) -> "_Law":
        den = 1 << self.k
        return _Law(self.offset, np.array([c / den for c in self.data]), 0, False)


def exact_pmf(params: SpinParams, N: int, *, budget: int = DEFAULT_SUPPORT_BUDGET,
              exact_support_limit: int = EXACT_SUPPORT_LIMIT,
              exact_bits_limit: int = EXACT_BITS_LIMIT) -> ExactPmf:
    """Exact law of ``Y_N`` by iterated convolution.

    Levels whose support is at most ``exact_support_limit`` points (and whose
    big-integer operands stay under ``exact_bits_limit`` bits) are computed
    with exact dyadic rationals; larger levels switch to float64.
    """
    if N < 0:
        raise ValueError("N must be nonnegative")
    size = support_size(params, N)
    if size > budget:
        raise BudgetExceededError(
            f"Y_{N} for (ell={params.ell}, r={params.r}) has {size} support points; "
            f"budget is {budget}")
    law = _Law(1, [1], 0, True)
    for n in range(1, N + 1):
        k_next = params.independent_spins(n)
        sz = support_size(params, n)
        if law.exact and (sz > exact_support_limit or sz * k_next > exact_bits_limit):
            law = law.to_float()
        copies = law.power(params.ell)
        flipped = law.symmetrized().power(params.r)
        law = copies.conv(flipped).trimmed()
    if law.exact:
        return ExactPmf(N, law.offset, tuple(law.data), "exact", law.k)
    return ExactPmf(N, law.offset, np.asarray(law.data), "float")


# -- characteristic functions -------------------------------------------------

def log_charfn_abs(params: SpinParams, N: int, lam) -> np.ndarray:
    """``log |E exp(i*lam*Y_N)|`` from the product formula."""
    lam = np.asarray(lam, dtype=np.float64)
    acc = np.zeros_like(lam)
    with np.errstate(divide="ignore"):
        for k in range(1, N + 1):
            c = np.abs(np.cos(params.ell ** (N - k) * lam))
            acc = acc + (params.r * params.b ** (k - 1)) * np.log(c)
    return acc


def charfn_abs(params: SpinParams, N: int, lam):
    """``|E exp(i*lam*Y_N)| = prod_k |cos(ell^(N-k) lam)|^(r b^(k-1))``.

    Accumulated in log space and exponentiated once; a ``-inf`` log is an
    exact zero.
    """
    out = np.exp(log_charfn_abs(params, N, lam))
    return float(out) if out.ndim == 0 else out


def charfn(params: SpinParams, N: int, lam):
    """Signed form ``exp(i ell^N lam) prod_k cos(ell^(N-k) lam)^(r b^(k-1))``."""
    lam = np.asarray(lam, dtype=np.float64)
    sign = np.ones_like(lam)
    for k in range(1, N + 1):
        if (params.r * params.b ** (k - 1)) % 2:
            sign = sign * np.sign(np.cos(params.ell ** (N - k) * lam))
    out = np.exp(1j * params.ell ** N * lam) * sign * np.exp(log_charfn_abs(params, N, lam))
    return complex(out) if out.ndim == 0 else out


def lemma_bound_constant(params: SpinParams) -> float:
    """Upper bound ``C`` with ``int_{-pi}^{pi} |E e^{i lam Y_N}| dlam <= C ell^-N``.

    ``C = 4 (pi/2 + sum_{k>=1} (ell^k pi/2) xi^(r b^(k-1)))``.  The series is
    truncated once terms fall below 1e-18 of the partial sum and the
    remainder is bounded by a geometric majorant; the result never
    underestimates the infinite sum.
    """
    ell, r, b = params.ell, params.r, params.b
    log_xi = math.log(params.xi)
    half_pi = math.pi / 2

    def log_term(k):
        return math.log(half_pi) + k * math.log(ell) + r * b ** (k - 1) * log_xi

    terms = [half_pi]
    k = 1
    while True:
        lt = log_term(k)
        terms.append(math.exp(lt))
        # successive term ratios ell * xi^(r b^(k-1) (b-1)) decrease in k
        log_q = math.log(ell) + r * b ** (k - 1) * (b - 1) * log_xi
        if log_q < 0 and terms[-1] < 1e-18 * math.fsum(terms):
            q = math.exp(log_q)
            tail = terms[-1] * q / (1 - q)
            break
        k += 1
    total = math.fsum(terms) + tail
    # summation/rounding slack, so the returned float is a true upper bound
    total *= 1 + 1e-14
    return 4 * total


class LemmaRow(NamedTuple):
    N: int
    mode: str
    max_mass: object
    ratio: object  # max_mass * ell^N
    bound: float   # lemma_bound_constant / (2 pi)
    ok: bool


@dataclass
class LemmaReport:
    params: SpinParams
    constant: float
    rows: list

    @property
    def violations(self) -> list:
        return [row for row in self.rows if not row.ok]

    @property
    def ok(self) -> bool:
        return not self.violations


def verify_lemma_bound(params: SpinParams, N_max: int, **pmf_kw) -> LemmaReport:
    """Check ``max_x P[Y_N = x] * ell^N <= C / (2 pi)`` for ``N = 0..N_max``.

    The Fourier-inversion bound carries the ``1/(2 pi)`` factor, so this is
    stronger than ``P[Y_N = x] <= C ell^-N``.  Exact-mode levels are compared
    in rational arithmetic.
    """
    C = lemma_bound_constant(params)
    bound = C / (2 * math.pi)
    rows = []
    for N in range(N_max + 1):
        pmf = exact_pmf(params, N, **pmf_kw)
        m = pmf.max_mass()
        if pmf.mode == "exact":
            ratio = m * params.ell ** N
            ok = ratio <= Fraction(bound)
        else:
            ratio = m * params.ell ** N
            ok = ratio <= bound
        rows.append(LemmaRow(N, pmf.mode, m, ratio, bound, bool(ok)))
    return LemmaReport(params, C, rows)


def limit_charfn(params: SpinParams, s: float) -> complex:
    """Characteristic function of the limit of ``Y_N / ell^N``.

    ``e^{is} prod_{k>=1} cos(ell^-k s)^(r b^(k-1))``, truncated once
    ``ell^-k |s| < 1e-8`` with the remainder replaced by its quadratic
    (log cos x ~ -x^2/2) sum.  Meaningful only for ``ell^2 > b``.
    """
    ell, r, b = params.ell, params.r, params.b
    supercritical = ell * ell > b
    if not supercritical:
        warnings.warn("ell^2 <= b: the rescaled sums have a Gaussian regime; "
                      "the infinite product degenerates", RuntimeWarning, stacklevel=2)
    log_mod, sign = 0.0, 1.0
    k = 1
    while abs(s) * ell ** (-k) >= 1e-8:
        x = s * ell ** (-k)
        c = math.cos(x)
        if c == 0.0:
            return 0j
        e = r * b ** (k - 1)
        if c < 0 and e % 2:
            sign = -sign
        log_mod += e * math.log1p(-2.0 * math.sin(x / 2) ** 2) if abs(x) < 1 else e * math.log(abs(c))
        k += 1
    if supercritical and s != 0:
        q = b / ell ** 2
        # sum_{j>=k} r b^(j-1) (s ell^-j)^2 / 2
        log_mod -= (r * s * s / (2 * b)) * q ** k / (1 - q)
    return complex(np.exp(1j * s) * sign * math.exp(log_mod))


class Moments(NamedTuple):
    mean: object
    variance: object
    skewness: float | None
    excess_kurtosis: float | None


def normalized_moments(params: SpinParams, N: int, **pmf_kw) -> Moments:
    """Mean, variance, skewness and excess kurtosis of ``Y_N``.

    Exact mode returns ``Fraction`` mean/variance; skewness and kurtosis are
    ``None`` for a point mass.  Skewness and kurtosis are scale invariant, so
    they also describe ``Y_N / b^(N/2)``.
    """
    pmf = exact_pmf(params, N, **pmf_kw)
    if pmf.mode == "exact":
        den = 1 << pmf.denom_log2
        xs = [pmf.offset + 2 * i for i in range(len(pmf.data))]
        mean = Fraction(sum(c * x for c, x in zip(pmf.data, xs)), den)
        central = []
        for j in (2, 3, 4):
            num = sum(c * (x * mean.denominator - mean.numerator) ** j for c, x in zip(pmf.data, xs))
            central.append(Fraction(num, den * mean.denominator ** j))
        var, m3, m4 = central
    else:
        m = pmf.float_masses
        x = pmf.support.astype(np.float64)
        mean = math.fsum(m * x)
        d = x - mean
        var, m3, m4 = (math.fsum(m * d ** j) for j in (2, 3, 4))
    if var == 0:
        return Moments(mean, var, None, None)
    skew = float(m3) / float(var) ** 1.5
    kurt = float(m4) / float(var) ** 2 - 3.0
    return Moments(mean, var, skew, kurt)
