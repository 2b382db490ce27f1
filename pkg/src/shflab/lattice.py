"""Walk kernels, disorder laws and the counter-based disorder field."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import stats

from . import _kernels as K


class DomainError(ValueError):
    """Parameter outside the domain where a quantity is defined."""


class UsageError(ValueError):
    """Operation applied to an object of the wrong kind."""


# ---------------------------------------------------------------------------
# walk kernels


@dataclass(frozen=True)
class WalkKernel:
    """Nearest-neighbour random walk on Z^2.

    ``simple`` moves to one of the four neighbours uniformly.  ``lazy`` stays
    put with probability ``p_stay`` and otherwise takes a simple step, which
    makes it aperiodic.
    """

    kind: str = "simple"
    p_stay: float = 0.0

    def __post_init__(self):
        if self.kind == "simple":
            if self.p_stay != 0.0:
                raise DomainError("simple walk has p_stay = 0")
        elif self.kind == "lazy":
            if not 0.0 < self.p_stay < 1.0:
                raise DomainError("lazy walk needs 0 < p_stay < 1")
        else:
            raise DomainError(f"unknown walk kind {self.kind!r}")

    @classmethod
    def simple(cls):
        return cls("simple", 0.0)

    @classmethod
    def lazy(cls, p_stay=0.5):
        return cls("lazy", float(p_stay))

    @property
    def steps(self):
        """Support as ``(offsets (m, 2) int array, probabilities (m,))``."""
        off = [(1, 0), (-1, 0), (0, 1), (0, -1)]
        p = [(1.0 - self.p_stay) / 4.0] * 4
        if self.kind == "lazy":
            off.append((0, 0))
            p.append(self.p_stay)
        return np.array(off, dtype=np.int64), np.array(p)

    @property
    def coordinate_variance(self) -> float:
        """Per-step variance of one Cartesian coordinate."""
        return (1.0 - self.p_stay) / 2.0

    @property
    def difference_index(self) -> int:
        """Index in Z^2 of the lattice reachable by the difference of two walks."""
        return 2 if self.kind == "simple" else 1

    def to_dict(self):
        return {"kind": self.kind, "p_stay": self.p_stay}


# ---------------------------------------------------------------------------
# disorder laws


_LAW_CODES = {
    "gaussian": K.LAW_GAUSSIAN,
    "rademacher": K.LAW_RADEMACHER,
    "shifted_exponential": K.LAW_EXPONENTIAL,
}


@dataclass(frozen=True)
class DisorderLaw:
    """Centred unit-variance law of the site disorder.

    ``shifted_exponential(rate)`` is the exponential law standardised to mean 0
    and variance 1, i.e. ``rate * E - 1`` with ``E ~ Exp(rate)``; after the
    standardisation the rate drops out, it is kept only as a label.
    """

    kind: str = "gaussian"
    rate: float = 1.0

    def __post_init__(self):
        if self.kind not in _LAW_CODES:
            raise DomainError(f"unknown disorder law {self.kind!r}")
        if self.kind == "shifted_exponential" and not self.rate > 0:
            raise DomainError("rate must be positive")

    @classmethod
    def gaussian(cls):
        return cls("gaussian")

    @classmethod
    def rademacher(cls):
        return cls("rademacher")

    @classmethod
    def shifted_exponential(cls, rate=1.0):
        return cls("shifted_exponential", float(rate))

    @property
    def code(self) -> int:
        return _LAW_CODES[self.kind]

    @property
    def beta_max(self) -> float:
        """Supremum of the inverse temperatures with a finite moment generating function."""
        return 1.0 if self.kind == "shifted_exponential" else math.inf

    def to_dict(self):
        d = {"kind": self.kind}
        if self.kind == "shifted_exponential":
            d["rate"] = self.rate
        return d


def log_mgf(law: DisorderLaw, beta: float) -> float:
    """Log moment generating function ``log E exp(beta * omega)``.

    Raises DomainError outside the finite range of the law.
    """
    beta = float(beta)
    if law.kind == "gaussian":
        return 0.5 * beta * beta
    if law.kind == "rademacher":
        a = abs(beta)
        return a + math.log1p(math.exp(-2.0 * a)) - math.log(2.0)
    if beta >= 1.0:
        raise DomainError("shifted exponential has no exponential moment at beta >= 1")
    return -beta - math.log1p(-beta)


def sigma2_pair(law: DisorderLaw, beta: float) -> float:
    """Pair-overlap weight ``exp(lambda(2 beta) - 2 lambda(beta)) - 1``."""
    if law.kind == "shifted_exponential" and 2.0 * beta >= 1.0:
        raise DomainError("pair weight needs 2 beta < 1 for the exponential law")
    return math.expm1(log_mgf(law, 2.0 * beta) - 2.0 * log_mgf(law, beta))


# ---------------------------------------------------------------------------
# disorder field


@dataclass(frozen=True)
class DisorderField:
    """Reproducible i.i.d. disorder on a space-time window.

    Values are a pure function of ``(seed, n, x)``: a SplitMix64-style hash of
    a packed site counter feeds the sampler of ``law`` (Box-Muller for the
    Gaussian, the sign bit for Rademacher, inversion for the exponential).  ``time_range`` is the
    inclusive range of admissible times and ``box_radius`` bounds ``|x_i|``.
    """

    seed: int
    time_range: tuple = (1, K.TIME_LIMIT - 1)
    box_radius: int = K.COORD_LIMIT - 1
    law: DisorderLaw = field(default_factory=DisorderLaw.gaussian)

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2**64:
            raise DomainError("seed must be an unsigned 64-bit integer")
        lo, hi = self.time_range
        if not (0 <= lo <= hi < K.TIME_LIMIT):
            raise DomainError(f"time range must lie in [0, {K.TIME_LIMIT})")
        if not 0 <= self.box_radius < K.COORD_LIMIT:
            raise DomainError(f"box radius must be below {K.COORD_LIMIT}")

    @property
    def key(self):
        return _key(int(self.seed))

    def check_window(self, n, corners):
        lo, hi = self.time_range
        if not lo <= n <= hi:
            raise IndexError(f"time {n} outside disorder window [{lo}, {hi}]")
        c = np.abs(np.asarray(corners))
        if c.size and c.max() > self.box_radius:
            raise IndexError(f"site outside disorder box of radius {self.box_radius}")

    def omega_block(self, n, origin, e1, e2, shape, out=None, scratch=None):
        """Disorder at the sites ``origin + i*e1 + j*e2``, ``i < shape[0]``, ``j < shape[1]``.

        Returns a flat array of length ``shape[0] * shape[1]`` (C order).
        """
        n1, n2 = int(shape[0]), int(shape[1])
        size = n1 * n2
        x0 = np.asarray(origin, dtype=np.int64)
        e1 = np.asarray(e1, dtype=np.int64)
        e2 = np.asarray(e2, dtype=np.int64)
        if size:
            far = x0 + (n1 - 1) * e1 + (n2 - 1) * e2
            self.check_window(n, [x0, x0 + (n1 - 1) * e1, x0 + (n2 - 1) * e2, far])
        a = np.empty(size) if out is None else out[:size]
        if self.law.kind == "gaussian":
            s = np.empty(size) if scratch is None else scratch[:size]
        else:
            s = a
        K.draw_block(self.key, self.law.code, int(n), int(x0[0]), int(x0[1]),
                     int(e1[0]), int(e1[1]), int(e2[0]), int(e2[1]), n1, n2, a, s)
        return _transform(self.law, a, s)

    def to_dict(self):
        return {"seed": int(self.seed), "time_range": list(self.time_range),
                "box_radius": int(self.box_radius), "law": self.law.to_dict()}


@dataclass(frozen=True)
class ConstantField:
    """Disorder identically equal to ``value``; a test double for the engines."""

    value: float = 0.0
    law: DisorderLaw = field(default_factory=DisorderLaw.gaussian)
    time_range: tuple = (1, K.TIME_LIMIT - 1)
    box_radius: int = K.COORD_LIMIT - 1

    def check_window(self, n, corners):
        DisorderField.check_window(self, n, corners)

    def omega_block(self, n, origin, e1, e2, shape, out=None, scratch=None):
        size = int(shape[0]) * int(shape[1])
        a = np.empty(size) if out is None else out[:size]
        a.fill(self.value)
        return a


@lru_cache(maxsize=256)
def _key(seed):
    return np.uint64(K.seed_key(np.uint64(seed)))


def _transform(law, a, s):
    """Turn raw draws into disorder values (elementwise numpy ops only).

    Gaussian: Box-Muller ``sqrt(-2 log U) * cos(2 pi U')`` with ``U`` in ``a``
    and the cosine in ``s``.  The result overwrites ``a``.
    """
    if law.kind == "gaussian":
        np.log(a, out=a)
        a *= -2.0
        np.sqrt(a, out=a)
        a *= s
    elif law.kind == "shifted_exponential":
        np.log(a, out=a)
        np.negative(a, out=a)
        a -= 1.0
    return a


def disorder_value(field_, n: int, x) -> float:
    """Disorder ``omega(n, x)`` at a single site."""
    return float(field_.omega_block(n, (int(x[0]), int(x[1])), (1, 0), (0, 1), (1, 1))[0])


# ---------------------------------------------------------------------------
# return probabilities


def binomial_line(m: int, j):
    """P(a 1-d +-1 walk after ``m`` steps sits at ``j``)."""
    j = np.asarray(j)
    k2 = m + j
    out = np.zeros(j.shape)
    ok = (k2 % 2 == 0) & (np.abs(j) <= m)
    if np.any(ok):
        out[ok] = stats.binom.pmf(k2[ok] // 2, m, 0.5)
    return out


def simple_walk_pmf(m: int, w1, w2):
    """P(simple walk after ``m`` steps sits at ``(w1, w2)``), via rotated coordinates."""
    w1 = np.asarray(w1)
    w2 = np.asarray(w2)
    return binomial_line(m, w1 + w2) * binomial_line(m, w1 - w2)


def difference_pmf(kernel: WalkKernel, k: int, w1, w2):
    """P(S_k - S'_k = w) for two independent walks of ``kernel``.

    Simple walk: the difference is a simple walk with ``2k`` steps.  Lazy walk:
    condition on the number of moving steps, which is Binomial(2k, 1 - p_stay).
    """
    if kernel.kind == "simple":
        return simple_walk_pmf(2 * k, w1, w2)
    w1 = np.asarray(w1)
    w2 = np.asarray(w2)
    q = 1.0 - kernel.p_stay
    n = 2 * k
    mean, sd = n * q, math.sqrt(n * q * kernel.p_stay)
    lo = max(0, int(mean - 12 * sd - 2))
    hi = min(n, int(mean + 12 * sd + 2))
    m = np.arange(lo, hi + 1)
    wts = stats.binom.pmf(m, n, q)
    out = np.zeros(np.broadcast(w1, w2).shape)
    for mm, pw in zip(m, wts):
        out = out + pw * simple_walk_pmf(int(mm), w1, w2)
    return out


def difference_pmf_dp(kernel: WalkKernel, k: int) -> np.ndarray:
    """Full distribution of the difference walk after ``k`` steps by plain 2-d DP.

    Returns a (4k+1, 4k+1) array indexed by ``w + 2k``.  Slow; meant as an
    independent check of :func:`difference_pmf`.
    """
    off, p = kernel.steps
    R = 2 * k
    grid = np.zeros((2 * R + 1, 2 * R + 1))
    grid[R, R] = 1.0
    # one difference step = step of the first walk minus step of the second
    dsteps = {}
    for (a, pa) in zip(off, p):
        for (b, pb) in zip(off, p):
            d = (int(a[0] - b[0]), int(a[1] - b[1]))
            dsteps[d] = dsteps.get(d, 0.0) + pa * pb
    for _ in range(k):
        new = np.zeros_like(grid)
        for (d1, d2), pd in dsteps.items():
            new += pd * np.roll(np.roll(grid, d1, axis=0), d2, axis=1)
        grid = new
    return grid


def return_probabilities(kernel: WalkKernel, n_max: int) -> np.ndarray:
    """Array ``q`` with ``q[n] = P(S_n = S'_n)`` for n = 0..n_max (``q[0] = 1``)."""
    return _return_table(kernel, int(n_max)).copy()


def return_probability(kernel: WalkKernel, n: int) -> float:
    """Probability that two independent walks started together meet at time ``n``."""
    if n < 1:
        raise DomainError("n must be >= 1")
    return float(_return_table(kernel, int(n))[n])


_RT_CACHE: dict = {}


def _return_table(kernel, n_max):
    tab = _RT_CACHE.get(kernel)
    if tab is not None and tab.shape[0] > n_max:
        return tab
    size = max(n_max, 64, 0 if tab is None else 2 * (tab.shape[0] - 1))
    n = np.arange(1, size + 1)
    if kernel.kind == "simple":
        # (C(2n, n) / 4^n)^2
        c = np.cumprod(1.0 - 0.5 / n)
        q = np.concatenate([[1.0], c * c])
    else:
        # mix over the number m of moving steps among 2n; a simple walk of
        # m steps is back at the origin with probability (C(m, m/2) / 2^m)^2
        mm = np.arange(0, 2 * size + 1)
        half = np.concatenate([[1.0], np.cumprod(1.0 - 0.5 / np.arange(1, size + 1))])
        back = np.zeros(2 * size + 1)
        back[0::2] = half ** 2
        qv = 1.0 - kernel.p_stay
        q = np.empty(size + 1)
        q[0] = 1.0
        for k in range(1, size + 1):
            nn = 2 * k
            mean, sd = nn * qv, math.sqrt(nn * qv * kernel.p_stay)
            lo = max(0, int(mean - 14 * sd - 2))
            hi = min(nn, int(mean + 14 * sd + 2))
            m = mm[lo:hi + 1]
            q[k] = float(np.dot(stats.binom.pmf(m, nn, qv), back[lo:hi + 1]))
    _RT_CACHE[kernel] = q
    return q
