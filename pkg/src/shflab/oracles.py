"""Exact and brute-force reference computations.

These are deliberately independent of the transfer-matrix engines: partition
functions by explicit path sums, the polynomial chaos expansion in the centred
weights, and second moments through the renewal structure of the overlap.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import signal, stats

from . import _kernels as K
from .lattice import (DomainError, WalkKernel, _return_table, disorder_value, log_mgf,
                      sigma2_pair)
from .schedule import CouplingSchedule, resolve_beta
from .testfunctions import TestFunction

PATH_BUDGET = 2_000_000
MAX_PATH_HORIZON = 6
MAX_CHAOS_HORIZON = 4
CHAOS_TERM_BUDGET = 200_000
FLAT_BUDGET = 5e11  # multiply-adds


class BudgetError(RuntimeError):
    """Refused because the requested exact computation is too large."""


def _kernel_law(coupling, kernel, law):
    if isinstance(coupling, CouplingSchedule):
        return coupling.kernel, coupling.law
    return kernel or WalkKernel.simple(), law


# ---------------------------------------------------------------------------
# path enumeration


def enumerate_partition(field_, coupling, M: int, N: int, x, y=None,
                        kernel: WalkKernel | None = None, scale: int | None = None) -> float:
    """Partition function by summing over every path.

    ``y is None``: point-to-plane ``Z_N(M, x)`` (weights at ``M+1 .. N``).
    Otherwise point-to-point ``Z_{M,N}(x, y)`` (weights at ``M+1 .. N-1``).
    """
    kern = kernel if kernel is not None else (
        coupling.kernel if isinstance(coupling, CouplingSchedule) else WalkKernel.simple())
    beta = resolve_beta(coupling, scale or N)
    T = N - M
    if T < 0:
        raise DomainError("terminal time before start time")
    off, p = kern.steps
    if T > MAX_PATH_HORIZON:
        raise BudgetError(f"{len(p)}^{T} paths: enumeration is limited to "
                          f"{MAX_PATH_HORIZON} steps")
    lam = log_mgf(field_.law, beta)
    if T == 0:
        return 1.0 if y is None or tuple(y) == tuple(x) else 0.0
    off = np.asarray(off, dtype=np.int64)
    p = np.asarray(p, dtype=float)
    # one row per path: step choices, then positions after each step
    choice = np.array(list(itertools.product(range(len(p)), repeat=T)), dtype=np.int64)
    pos = np.cumsum(off[choice], axis=1) + np.asarray(x, dtype=np.int64)
    prob = np.prod(p[choice], axis=1)
    last = T if y is None else T - 1
    w = np.ones(len(choice))
    for k in range(last):
        sites, inv = np.unique(pos[:, k], axis=0, return_inverse=True)
        wk = np.array([math.exp(beta * disorder_value(field_, M + k + 1, (int(a), int(b))) - lam)
                       for a, b in sites])
        w *= wk[inv.ravel()]
    keep = np.ones(len(choice), bool) if y is None else np.all(pos[:, -1] == np.asarray(y), axis=1)
    return math.fsum((prob * w)[keep].tolist())


# ---------------------------------------------------------------------------
# chaos expansion


@lru_cache(maxsize=64)
def _kstep_pmf(kernel: WalkKernel, k: int):
    off, p = kernel.steps
    g = np.zeros((2 * k + 1, 2 * k + 1))
    g[k, k] = 1.0
    for _ in range(k):
        new = np.zeros_like(g)
        for (a, b), pe in zip(off, p):
            new += pe * np.roll(np.roll(g, a, axis=0), b, axis=1)
        g = new
    return g


def _pmf(kernel, k, d):
    if abs(d[0]) + abs(d[1]) > k:
        return 0.0
    if k == 0:
        return 1.0 if d == (0, 0) else 0.0
    return float(_kstep_pmf(kernel, k)[d[0] + k, d[1] + k])


@dataclass
class ChaosExpansion:
    """``Z = sum_A coeff[A] prod_{(n, x) in A} (exp(beta w(n, x) - lambda) - 1)``.

    ``terms`` maps a time-ordered tuple of sites ``(n, x1, x2)`` to its
    coefficient, the probability that the walk visits all of them (and ends
    at ``y`` for a point-to-point expansion).  Subsets holding two sites at the
    same time have coefficient zero and are not stored.
    """

    beta: float
    lam: float
    start: tuple
    terms: dict

    @property
    def max_order(self) -> int:
        return max(len(a) for a in self.terms)

    def coefficient(self, sites) -> float:
        return self.terms.get(tuple(sites), 0.0)


def chaos_expand(field_, coupling, M: int, horizon: int, x, y=None,
                 kernel: WalkKernel | None = None, scale: int | None = None) -> ChaosExpansion:
    """Chaos expansion of ``Z_{M+horizon}(M, x)`` or of ``Z_{M,M+horizon}(x, y)``."""
    if horizon < 1:
        raise DomainError("horizon must be at least 1")
    if horizon > MAX_CHAOS_HORIZON:
        raise BudgetError(f"chaos expansion is limited to {MAX_CHAOS_HORIZON} steps")
    kern = kernel if kernel is not None else (
        coupling.kernel if isinstance(coupling, CouplingSchedule) else WalkKernel.simple())
    N = M + horizon
    beta = resolve_beta(coupling, scale or N)
    x = (int(x[0]), int(x[1]))
    last = N if y is None else N - 1
    times = list(range(M + 1, last + 1))
    layers = []
    for n in times:
        k = n - M
        layers.append([(x[0] + a, x[1] + b) for a in range(-k, k + 1) for b in range(-k, k + 1)
                       if abs(a) + abs(b) <= k and _pmf(kern, k, (a, b)) > 0])
    count = 1
    for lay in layers:
        count *= 1 + len(lay)
    if count > CHAOS_TERM_BUDGET:
        raise BudgetError(f"{count} chaos terms exceed the budget")
    end = None if y is None else (int(y[0]), int(y[1]))
    terms = {}

    def rec(i, prev_t, prev_x, prob, acc):
        if i == len(times):
            if end is not None:
                prob = prob * _pmf(kern, N - prev_t, (end[0] - prev_x[0], end[1] - prev_x[1]))
            if prob > 0:
                terms[tuple(acc)] = prob
            return
        rec(i + 1, prev_t, prev_x, prob, acc)
        n = times[i]
        for s in layers[i]:
            pr = _pmf(kern, n - prev_t, (s[0] - prev_x[0], s[1] - prev_x[1]))
            if pr > 0:
                rec(i + 1, n, s, prob * pr, acc + [(n, s[0], s[1])])

    rec(0, M, x, 1.0, [])
    return ChaosExpansion(beta, log_mgf(field_.law, beta), (M, x), terms)


def evaluate(expansion: ChaosExpansion, field_) -> float:
    """Sum the expansion against the disorder of ``field_``."""
    eta = {}
    for a in expansion.terms:
        for s in a:
            if s not in eta:
                om = disorder_value(field_, s[0], (s[1], s[2]))
                eta[s] = math.expm1(expansion.beta * om - expansion.lam)
    parts = []
    for a, c in expansion.terms.items():
        v = c
        for s in a:
            v *= eta[s]
        parts.append(v)
    return math.fsum(parts)


# ---------------------------------------------------------------------------
# second moments


_V_CACHE: dict = {}


def renewal_mass(kernel: WalkKernel, sigma2: float, T: int) -> np.ndarray:
    """``V[M] = E[(1 + sigma2)^{L_M}]`` for M = 0..T, ``L_M`` the number of
    meetings of two walks started together up to time M."""
    key = (kernel, float(sigma2))
    V = _V_CACHE.get(key)
    if V is None or V.shape[0] <= T:
        q = _return_table(kernel, max(T, 1))
        V = K.renewal_table(np.ascontiguousarray(q[:T + 1]), float(sigma2), int(T))
        if len(_V_CACHE) > 64:
            _V_CACHE.clear()
        _V_CACHE[key] = V
    return V[:T + 1]


def _line_table(mmax, U):
    """``B[m, u + U] = P(1-d +-1 walk after m steps is at u)`` for ``|u| <= U``."""
    u = np.arange(-U, U + 1)
    m = np.arange(mmax + 1)[:, None]
    k2 = m + u[None, :]
    ok = (k2 % 2 == 0) & (np.abs(u)[None, :] <= m)
    B = np.zeros((mmax + 1, 2 * U + 1))
    mm = np.broadcast_to(m, k2.shape)
    B[ok] = stats.binom.pmf(k2[ok] // 2, mm[ok], 0.5)
    return B


def _difference_weights(kernel, V, T):
    """Coefficients ``c_m`` with ``sum_k V[T-k] p_k(w) = sum_m c_m P(S_m = w)``.

    ``S_m`` is a simple walk with ``m`` steps; the difference of two walks of
    the kernel after ``k`` steps is such a walk with a random number of steps.
    """
    c = np.zeros(2 * T + 1)
    if kernel.kind == "simple":
        c[2 * np.arange(1, T + 1)] = V[T - np.arange(1, T + 1)]
        return c
    q = 1.0 - kernel.p_stay
    for k in range(1, T + 1):
        n = 2 * k
        mean, sd = n * q, math.sqrt(n * q * kernel.p_stay)
        lo = max(0, int(mean - 14 * sd - 2))
        hi = min(n, int(mean + 14 * sd + 2))
        m = np.arange(lo, hi + 1)
        c[lo:hi + 1] += V[T - k] * stats.binom.pmf(m, n, q)
    return c


def overlap_kernel(kernel: WalkKernel, sigma2: float, T: int, W: int) -> np.ndarray:
    """``h(w) = sigma2 * sum_{k=1}^{T} p_k(w) V[T-k]`` for ``|w_i| <= W``.

    Returned as an array indexed by ``(w1 + W, w2 + W)``; the second moment of
    two partition functions started ``w`` apart is ``1 + h(w)``.  In rotated
    coordinates ``p_k`` factorises, so ``h`` is the matrix product
    ``B^T diag(c) B`` evaluated on ``u = w1 + w2``, ``v = w1 - w2``.
    """
    U = 2 * W
    mmax = 2 * T
    if (mmax + 1) * (2 * U + 1) ** 2 > FLAT_BUDGET:
        raise BudgetError("overlap kernel too large")
    V = renewal_mass(kernel, sigma2, T)
    c = _difference_weights(kernel, V, T)
    keep = np.nonzero(c)[0]
    B = _line_table(mmax, U)[keep]
    H = sigma2 * (B.T * c[keep]) @ B
    w = np.arange(-W, W + 1)
    u = w[:, None] + w[None, :] + U
    v = w[:, None] - w[None, :] + U
    return H[u, v]


def second_moment_exact(kernel: WalkKernel, law, beta: float, N: int, offset=(0, 0)) -> float:
    """``E[Z_N(0, 0) Z_N(0, offset)]`` for the point-to-plane partition function."""
    if N < 0:
        raise DomainError("N must be nonnegative")
    if N == 0:
        return 1.0
    s2 = sigma2_pair(law, beta)
    w1, w2 = int(offset[0]), int(offset[1])
    V = renewal_mass(kernel, s2, N)
    c = _difference_weights(kernel, V, N)
    m = np.nonzero(c)[0]
    from .lattice import binomial_line
    pu = np.array([binomial_line(int(mm), w1 + w2) for mm in m])
    pv = np.array([binomial_line(int(mm), w1 - w2) for mm in m])
    return float(1.0 + s2 * np.dot(c[m], pu * pv))


def second_moment_pairs(kernel: WalkKernel, law, beta: float, N: int, offset=(0, 0)) -> float:
    """Same quantity as :func:`second_moment_exact` by summing over path pairs."""
    off, p = kernel.steps
    if len(p) ** (2 * N) > PATH_BUDGET:
        raise BudgetError("too many path pairs")
    pair = 1.0 + sigma2_pair(law, beta)
    paths = []
    for steps in itertools.product(range(len(p)), repeat=N):
        pos = []
        s = (0, 0)
        pr = 1.0
        for e in steps:
            s = (s[0] + int(off[e][0]), s[1] + int(off[e][1]))
            pos.append(s)
            pr *= p[e]
        paths.append((pr, pos))
    w = (int(offset[0]), int(offset[1]))
    terms = []
    for pa, xa in paths:
        for pb, xb in paths:
            meet = sum(1 for a, b in zip(xa, xb) if a == (b[0] + w[0], b[1] + w[1]))
            terms.append(pa * pb * pair ** meet)
    return math.fsum(terms)


@dataclass
class FlatMoments:
    mean: float
    second_moment: float
    sigma2: float
    beta: float

    @property
    def variance(self) -> float:
        return self.second_moment - self.mean ** 2


def flat_moments(kernel: WalkKernel, law, coupling, N: int, phi: TestFunction,
                 t: float = 1.0) -> FlatMoments:
    """Exact mean and second moment of ``(1/N) sum_z phi(z/sqrt N) Z_{[Nt]}(0, z)``."""
    from .engine import lattice_region
    T = int(math.floor(N * t))
    if T < 1:
        raise DomainError("macroscopic time shorter than one step")
    if isinstance(coupling, CouplingSchedule):
        kernel, law = coupling.kernel, coupling.law
    beta = resolve_beta(coupling, N)
    s2 = sigma2_pair(law, beta)
    (a1, b1), (a2, b2) = lattice_region(phi, N)
    sq = math.sqrt(N)
    z1 = np.arange(a1, b1 + 1)[:, None] / sq
    z2 = np.arange(a2, b2 + 1)[None, :] / sq
    F = phi(z1, z2)
    W = max(F.shape) - 1
    cost = (2 * T + 1) * (4 * W + 1) ** 2
    if cost > FLAT_BUDGET:
        raise BudgetError(f"exact flat second moment needs about {cost:.2e} operations")
    A = signal.correlate(F, F, mode="full", method="fft")
    h = overlap_kernel(kernel, s2, T, W)
    # correlate(F, F)[W1 + d] = sum_z F(z + d) F(z); pad to the symmetric window
    A_full = np.zeros((2 * W + 1, 2 * W + 1))
    c1, c2 = F.shape[0] - 1, F.shape[1] - 1
    A_full[W - c1:W + c1 + 1, W - c2:W + c2 + 1] = A
    mean = float(F.sum()) / N
    second = mean ** 2 + float(np.sum(A_full * h)) / N ** 2
    return FlatMoments(mean, second, s2, beta)


def second_moment_flat(kernel: WalkKernel, law, coupling, N: int, phi: TestFunction,
                       t: float = 1.0) -> float:
    """Exact ``E[Z_{N;t}(phi)^2]`` for the smeared point-to-plane field."""
    return flat_moments(kernel, law, coupling, N, phi, t).second_moment
