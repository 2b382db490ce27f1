"""Continuum kernels: heat kernel, Volterra function, SHF covariance, EW kernels.

All heat kernels use the generator ``(1/2) Laplacian``: ``g_t`` is the centred
normal density on R^2 with covariance ``t I``.

Near ``u = 0`` the Volterra function behaves like ``1 / (u log^2 u)``: it is
integrable, but its mass near zero decays only like ``1 / log(1/u)``.  Every
integral against it is therefore done in the variable ``y = 1 / log(1/u)``,
in which ``G(u) du = H(y) dy`` with ``H`` smooth and ``H(0) = 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import mpmath
import numpy as np
from numpy.polynomial import chebyshev as C
from scipy import integrate, special

from .lattice import DomainError, WalkKernel
from .schedule import EULER_GAMMA
from .testfunctions import TestFunction

QUAD_REL = 1e-12


@dataclass(frozen=True)
class KernelEvaluation:
    """A quadrature result with its error estimate.

    ``singular`` marks points where the density diverges (``value`` is inf);
    ``flagged`` marks results whose error estimate exceeds the requested budget.
    """

    value: float
    abs_error_estimate: float
    method: str
    singular: bool = False
    flagged: bool = False

    def __float__(self):
        return float(self.value)

    def agrees(self, other: "KernelEvaluation", rel: float = 0.0) -> bool:
        tol = self.abs_error_estimate + other.abs_error_estimate + rel * abs(self.value)
        return abs(self.value - other.value) <= tol


def _singular(method):
    return KernelEvaluation(math.inf, math.inf, method, singular=True)


# ---------------------------------------------------------------------------
# heat kernel


def heat_kernel(t: float, x) -> float:
    """``g_t(x) = exp(-|x|^2 / 2t) / (2 pi t)``; ``x`` is a point or a distance."""
    if not t > 0:
        raise DomainError("heat kernel needs t > 0")
    x = np.asarray(x, dtype=float)
    r2 = float(np.sum(x * x)) if x.ndim else float(x) ** 2
    return math.exp(-r2 / (2 * t)) / (2 * math.pi * t)


def heat_semigroup_residual(s: float, t: float, x, y) -> float:
    """Relative residual of ``int g_s(x - z) g_t(z - y) dz = g_{s+t}(x - y)``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    c = (t * x + s * y) / (s + t)  # the integrand is centred here
    w = 10.0 * math.sqrt(s * t / (s + t))

    def f(z2, z1):
        z = np.array([z1, z2])
        return heat_kernel(s, x - z) * heat_kernel(t, z - y)

    val, _ = integrate.dblquad(f, c[0] - w, c[0] + w, c[1] - w, c[1] + w,
                               epsabs=0, epsrel=1e-12)
    ref = heat_kernel(s + t, x - y)
    return abs(val - ref) / ref


# ---------------------------------------------------------------------------
# Volterra function


def _log_integrand(s, a, logt):
    # log of e^{(theta-gamma)s} s t^{s-1} / Gamma(s+1), with a = theta - gamma
    return a * s + math.log(s) + (s - 1.0) * logt - math.lgamma(s + 1.0)


def _log_integrand_cum(s, a, logt):
    # log of e^{(theta-gamma)s} t^s / Gamma(s+1)
    return a * s + s * logt - math.lgamma(s + 1.0)


def _range(a, logt, cumulative=False):
    """Peak of the (log-concave) integrand in s and a cut-off with a rigorous tail bound."""
    if cumulative:
        lf = lambda s: _log_integrand_cum(s, a, logt)
        dlf = lambda s: a + logt - special.digamma(s + 1.0)
    else:
        lf = lambda s: _log_integrand(s, a, logt)
        dlf = lambda s: a + 1.0 / s + logt - special.digamma(s + 1.0)
    lo, hi = 1e-300, 1.0
    while dlf(hi) > 0:
        hi *= 2.0
    if dlf(lo) <= 0 or (cumulative and dlf(0.0) <= 0):
        peak = 0.0
    else:
        from scipy.optimize import brentq
        peak = brentq(dlf, lo if not cumulative else 0.0, hi, xtol=1e-14)
    top = lf(peak) if peak > 0 else lf(max(peak, 1e-300)) if not cumulative else lf(0.0)
    if peak > 0:
        S = 2.0 * peak
    else:
        S = 1.0 / max(abs(dlf(0.0)), 1e-3)
    # log-concavity: int_S^inf f <= f(S) / |(log f)'(S)| once the slope is negative
    while True:
        slope = dlf(S)
        if slope < 0 and lf(S) - math.log(-slope) < top - 40.0:
            break
        S *= 1.5
    return peak, S, top


def _volterra_gk(a, logt, cumulative=False):
    peak, S, top = _range(a, logt, cumulative)
    lf = _log_integrand_cum if cumulative else _log_integrand

    def f(s):
        if s <= 0.0:
            return 1.0 * math.exp(-top) if cumulative else 0.0
        return math.exp(lf(s, a, logt) - top)

    pts = sorted({p for p in (0.25 * peak, peak, 4.0 * peak) if 0.0 < p < S})
    val, err = integrate.quad(f, 0.0, S, points=pts or None, epsabs=0.0,
                              epsrel=QUAD_REL, limit=1000)
    if top > 700.0:
        raise DomainError("Volterra function overflows double precision here")
    scale = math.exp(top)
    return val * scale, (err + 1e-16 * abs(val)) * scale


def _volterra_ts(a, logt, cumulative=False):
    peak, S, top = _range(a, logt, cumulative)
    if top > 700.0:
        raise DomainError("Volterra function overflows double precision here")
    with mpmath.workdps(25):
        A, L, T = mpmath.mpf(a), mpmath.mpf(logt), mpmath.mpf(top)
        if cumulative:
            f = lambda s: mpmath.exp(A * s + s * L - mpmath.loggamma(s + 1) - T)
        else:
            f = lambda s: (mpmath.exp(A * s + mpmath.log(s) + (s - 1) * L
                                      - mpmath.loggamma(s + 1) - T) if s > 0 else mpmath.mpf(0))
        pts = [0] + [p for p in (0.25 * peak, peak, 4.0 * peak) if 0.0 < p < S] + [S]
        val, err = mpmath.quad(f, pts, method="tanh-sinh", error=True, maxdegree=10)
        scale = math.exp(top)
        return float(val) * scale, (float(err) + 1e-16 * abs(float(val))) * scale


def volterra_G(theta: float, t: float, method: str = "gauss_kronrod") -> KernelEvaluation:
    """``G_theta(t) = int_0^inf e^{(theta - gamma) s} s t^{s-1} / Gamma(s+1) ds``.

    ``method`` is ``gauss_kronrod`` (adaptive QUADPACK) or ``tanh_sinh``
    (double-exponential nodes, extended precision).
    """
    if not t > 0:
        raise DomainError("Volterra function needs t > 0")
    a, logt = theta - EULER_GAMMA, math.log(t)
    if method == "gauss_kronrod":
        v, e = _volterra_gk(a, logt)
    elif method == "tanh_sinh":
        v, e = _volterra_ts(a, logt)
    else:
        raise DomainError(f"unknown method {method!r}")
    return KernelEvaluation(v, e, method, flagged=not (e <= 1e-8 * abs(v)))


def volterra_G_integral(theta: float, t: float, method: str = "gauss_kronrod") -> KernelEvaluation:
    """``int_0^t G_theta(u) du = int_0^inf e^{(theta - gamma) s} t^s / Gamma(s+1) ds``."""
    if t < 0:
        raise DomainError("need t >= 0")
    if t == 0:
        return KernelEvaluation(0.0, 0.0, method)
    a, logt = theta - EULER_GAMMA, math.log(t)
    if method == "gauss_kronrod":
        v, e = _volterra_gk(a, logt, cumulative=True)
    elif method == "tanh_sinh":
        v, e = _volterra_ts(a, logt, cumulative=True)
    else:
        raise DomainError(f"unknown method {method!r}")
    return KernelEvaluation(v, e, method, flagged=not (e <= 1e-8 * abs(v)))


def volterra_laplace(theta: float, mu: float) -> float:
    """Closed form ``int_0^inf e^{-mu t} G_theta(t) dt = 1 / (log mu + gamma - theta)``
    valid for ``log mu > theta - gamma``."""
    d = math.log(mu) + EULER_GAMMA - theta
    if d <= 0:
        raise DomainError("Laplace transform diverges")
    return 1.0 / d


class _Piecewise:
    """Chebyshev interpolant on consecutive panels."""

    def __init__(self, f, edges, deg):
        self.edges = np.asarray(edges, dtype=float)
        vf = np.vectorize(f)
        self.parts = [C.Chebyshev.interpolate(vf, deg, domain=[a, b])
                      for a, b in zip(self.edges[:-1], self.edges[1:])]

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        k = np.clip(np.searchsorted(self.edges, y, side="right") - 1, 0, len(self.parts) - 1)
        out = np.empty(y.shape)
        for i, p in enumerate(self.parts):
            m = k == i
            if np.any(m):
                out[m] = p(y[m])
        return out


class VolterraTable:
    """Fast interpolant of ``G_theta`` and of its integral on ``(0, t_max]``.

    Below ``u_c`` the functions are tabulated in ``y = 1 / log(1/u)`` as
    ``H(y) = u log^2(u) G(u)`` and ``log(1/u) int_0^u G``, both smooth with
    value 1 at ``y = 0``; above ``u_c`` they are tabulated in ``log u``.
    """

    DEG = 40

    def __init__(self, theta: float, t_max: float):
        self.theta = float(theta)
        self.t_max = float(t_max)
        self.u_c = min(math.exp(-1.0), 0.5 * self.t_max)
        self.y_c = 1.0 / math.log(1.0 / self.u_c)
        a = self.theta - EULER_GAMMA

        def G(u):
            return _volterra_gk(a, math.log(u))[0]

        def Gi(u):
            return _volterra_gk(a, math.log(u), cumulative=True)[0]

        # u G(u) and Gint(u) depend on u only through theta + log u
        def H(y):
            if y <= 0:
                return 1.0
            L = 1.0 / y
            return L * L * _volterra_gk(a - L, 0.0)[0]

        def Hi(y):
            if y <= 0:
                return 1.0
            L = 1.0 / y
            return L * _volterra_gk(a - L, 0.0, cumulative=True)[0]

        # H is smooth but not analytic at y = 0: use panels graded towards 0
        edges = self.y_c * np.array([0.0, 2.0 ** -12, 2.0 ** -8, 2.0 ** -5, 2.0 ** -3, 0.5, 1.0])
        self._h = _Piecewise(H, edges, self.DEG)
        self._hi = _Piecewise(Hi, edges, self.DEG)
        lc, lt = math.log(self.u_c), math.log(self.t_max)
        if lt > lc:
            self._g = C.Chebyshev.interpolate(np.vectorize(lambda x: math.log(G(math.exp(x)))),
                                              self.DEG, domain=[lc, lt])
            self._gi = C.Chebyshev.interpolate(np.vectorize(lambda x: math.log(Gi(math.exp(x)))),
                                               self.DEG, domain=[lc, lt])
        else:
            self._g = self._gi = None

    def H(self, y):
        """Smooth density of ``G(u) du`` in the variable ``y``."""
        return self._h(np.asarray(y, dtype=float))

    def G(self, u):
        u = np.asarray(u, dtype=float)
        out = np.empty(u.shape)
        small = u <= self.u_c
        L = -np.log(u[small])
        out[small] = self._h(1.0 / L) / (u[small] * L * L)
        if np.any(~small):
            out[~small] = np.exp(self._g(np.log(u[~small])))
        return out

    def uG_log(self, L):
        """``u G(u)`` at ``u = exp(-L)``; finite as ``L -> inf``."""
        L = np.asarray(L, dtype=float)
        out = np.empty(L.shape)
        small = L >= -math.log(self.u_c)
        out[small] = self._h(1.0 / L[small]) / (L[small] ** 2)
        big = ~small
        if np.any(big):
            out[big] = np.exp(self._g(-L[big]) - L[big])
        return out

    def G_integral(self, u):
        u = np.asarray(u, dtype=float)
        out = np.zeros(u.shape)
        pos = u > 0
        small = pos & (u <= self.u_c)
        L = -np.log(u[small])
        out[small] = self._hi(1.0 / L) / L
        big = u > self.u_c
        if np.any(big):
            out[big] = np.exp(self._gi(np.log(u[big])))
        return out

    def integrate_against(self, f, U: float) -> tuple:
        """``int_0^U G(u) f(u) du`` for smooth bounded ``f``; returns (value, error)."""
        if U <= 0:
            return 0.0, 0.0
        uc = min(self.u_c, U)
        yc = 1.0 / math.log(1.0 / uc)

        def fy(y):
            if y <= 0:
                return float(self._h(0.0)) * f(0.0)
            u = math.exp(-1.0 / y)
            return float(self._h(y)) * f(u)

        v1, e1 = integrate.quad(fy, 0.0, yc, epsabs=0.0, epsrel=QUAD_REL, limit=400)
        v2 = e2 = 0.0
        if U > uc:
            v2, e2 = integrate.quad(lambda u: float(self.G(u)) * f(u), uc, U,
                                    epsabs=0.0, epsrel=QUAD_REL, limit=400)
        return v1 + v2, e1 + e2


@lru_cache(maxsize=32)
def volterra_table(theta: float, t_max: float) -> VolterraTable:
    return VolterraTable(theta, t_max)


# ---------------------------------------------------------------------------
# SHF covariance


def covariance_kernel(theta: float, t: float, x, xp, y, yp) -> KernelEvaluation:
    """Covariance density ``K_t^theta(x, x'; y, y')`` of the flow.

    ``4 pi g_{t/2}(mean(y) - mean(x)) int int_{0<a<b<t} g_{2a}(x'-x) G(b-a) g_{2(t-b)}(y'-y)``,
    computed as ``int_0^t G(u) M(t - u) du`` where the heat-kernel time
    convolution ``M(s) = int_0^s g_{2a}(x'-x) g_{2(s-a)}(y'-y) da`` is smooth.
    The density diverges when ``x = x'`` or ``y = y'``; those points return
    the singular flag.
    """
    if not t > 0:
        raise DomainError("need t > 0")
    x, xp, y, yp = (np.asarray(v, dtype=float) for v in (x, xp, y, yp))
    r1 = float(np.hypot(*(xp - x)))
    r2 = float(np.hypot(*(yp - y)))
    if r1 == 0.0 or r2 == 0.0:
        return _singular("nested_quad")
    pref = 4 * math.pi * heat_kernel(t / 2, 0.5 * (y + yp) - 0.5 * (x + xp))
    tab = volterra_table(theta, t)
    errs = [0.0]

    def M(s):
        if s <= 0:
            return 0.0
        v, e = integrate.quad(lambda a: heat_kernel(2 * a, r1) * heat_kernel(2 * (s - a), r2)
                              if 0 < a < s else 0.0, 0.0, s, epsabs=0.0, epsrel=1e-12, limit=200)
        errs[0] = max(errs[0], e)
        return v

    val, err = tab.integrate_against(lambda u: M(t - u), t)
    # G integrates to Gint(t) over (0, t): bound the propagated inner error by it
    e_in = errs[0] * float(tab.G_integral(t))
    return KernelEvaluation(pref * val, pref * (err + e_in), "nested_quad")


def covariance_kernel_mc(theta: float, t: float, x, xp, y, yp, samples: int = 200_000,
                         seed: int = 0) -> tuple:
    """Plain Monte Carlo estimate of :func:`covariance_kernel`; returns (mean, standard error).

    Samples ``a`` uniformly on ``(0, t)`` and ``u = t * exp(1 - 1/y)`` with ``y``
    uniform on ``(0, 1)``, which makes ``G(u) du`` bounded.
    """
    x, xp, y, yp = (np.asarray(v, dtype=float) for v in (x, xp, y, yp))
    r1 = float(np.hypot(*(xp - x)))
    r2 = float(np.hypot(*(yp - y)))
    rng = np.random.default_rng(seed)
    a = rng.uniform(0.0, t, samples)
    yy = rng.uniform(0.0, 1.0, samples)
    with np.errstate(divide="ignore"):
        L = 1.0 / yy - 1.0 - math.log(t)  # u = exp(-L)
    u = np.exp(-L)
    ok = (yy > 0) & (u < t - a)
    tab = volterra_table(theta, t)
    vals = np.zeros(samples)
    uo, ao, yo, Lo = u[ok], a[ok], yy[ok], L[ok]
    s = t - ao - uo
    g1 = np.exp(-r1 ** 2 / (4 * ao)) / (4 * np.pi * ao)
    g2 = np.exp(-r2 ** 2 / (4 * s)) / (4 * np.pi * s)
    vals[ok] = g1 * tab.uG_log(Lo) / yo ** 2 * g2 * t
    pref = 4 * math.pi * heat_kernel(t / 2, 0.5 * (y + yp) - 0.5 * (x + xp))
    vals *= pref
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(samples))


def variance_flat(theta: float, t: float, r: float, method: str = "cumulative") -> KernelEvaluation:
    """Covariance density of the flat-initial-condition marginal at distance ``r``.

    ``4 pi int int_{0<a<b<t} g_{2a}(r) G(b-a) da db = int_0^t e^{-r^2/4a} / a * Gint(t-a) da``.
    ``method="cumulative"`` uses the closed-form integral of ``G``;
    ``method="double"`` integrates ``G`` itself over ``(a, u)``.
    """
    if not t > 0:
        raise DomainError("need t > 0")
    if r < 0:
        raise DomainError("need r >= 0")
    if r == 0:
        return _singular(method)
    tab = volterra_table(theta, t)
    if method == "cumulative":
        def f(a):
            if a <= 0:
                return 0.0
            return math.exp(-r * r / (4 * a)) / a * float(tab.G_integral(t - a))
        # substitute a = t - s to resolve the 1/log behaviour of Gint at s -> 0
        v, e = integrate.quad(f, 0.0, t, epsabs=0.0, epsrel=1e-11, limit=400,
                              points=[0.5 * t, t * (1 - 1e-3)])
        return KernelEvaluation(v, e + 1e-12 * abs(v), method)
    if method == "double":
        def inner_u(a):
            w = math.exp(-r * r / (4 * a)) / a
            v, _ = tab.integrate_against(lambda u: 1.0, t - a)
            return w * v
        v, e = integrate.quad(lambda a: inner_u(a) if a > 0 else 0.0, 0.0, t,
                              epsabs=0.0, epsrel=1e-10, limit=400)
        return KernelEvaluation(v, e + 1e-11 * abs(v), method)
    raise DomainError(f"unknown method {method!r}")


def smoothed_gaussian_mean(phi: TestFunction, a: float) -> float:
    """``S(a) = int A(h) g_{2a}(h) dh`` with ``A`` the autocorrelation of ``phi``."""
    if a <= 0:
        return float(phi.autocorrelation(0.0, 0.0))
    if phi.kind == "gaussian":
        _, var, mass = phi.params
        return mass * mass / (4 * math.pi * (a + var))
    # polar coordinates: int_0^inf r e^{-r^2/4a} / (4 pi a) Abar(r) dr
    Rmax = phi.radius
    f = lambda r: r * math.exp(-r * r / (4 * a)) / (4 * math.pi * a) * _angular_autocorr(phi, r)
    v, _ = integrate.quad(f, 0.0, Rmax, epsabs=0.0, epsrel=1e-11, limit=400,
                          points=_radial_kinks(phi, Rmax) or None)
    return v


def _angular_autocorr(phi: TestFunction, r: float) -> float:
    """``int_0^{2 pi} A(r cos t, r sin t) dt``."""
    if phi.kind in ("gaussian", "ball"):
        return 2 * math.pi * float(phi.autocorrelation(r, 0.0))
    if phi.kind == "box":
        # A = h^2 (w1 - r cos t)(w2 - r sin t) where both factors are positive;
        # integrate the product in closed form over that arc of the quarter turn
        (a1, a2), (b1, b2), ht = phi.params
        w1, w2 = b1 - a1, b2 - a2
        lo = math.acos(min(1.0, w1 / r)) if r > 0 else 0.0
        hi = math.asin(min(1.0, w2 / r)) if r > 0 else 0.5 * math.pi
        if hi <= lo:
            return 0.0
        F = lambda t: (w1 * w2 * t + w1 * r * math.cos(t) - w2 * r * math.sin(t)
                       + 0.5 * r * r * math.sin(t) ** 2)
        return 4 * ht * ht * (F(hi) - F(lo))
    # A is symmetric under reflections of either coordinate: integrate a quarter
    v, _ = integrate.quad(lambda th: float(phi.autocorrelation(r * math.cos(th), r * math.sin(th))),
                          0.0, 0.5 * math.pi, epsabs=0.0, epsrel=1e-11, limit=200)
    return 4 * v


def _radial_kinks(phi: TestFunction, rmax: float) -> list:
    """Radii where the angular autocorrelation loses smoothness."""
    if phi.kind != "box":
        return []
    (a1, a2), (b1, b2), _ = phi.params
    w1, w2 = b1 - a1, b2 - a2
    return sorted(p for p in (w1, w2) if 0 < p < rmax)


def smeared_variance_flat(theta: float, t: float, phi: TestFunction) -> KernelEvaluation:
    """``int int phi(x) phi(x') variance_flat(theta, t, |x - x'|) dx dx'``.

    Integrating the heat kernel against the autocorrelation first leaves the
    regular one-dimensional integral ``4 pi int_0^t Gint(t - a) S(a) da``.
    """
    tab = volterra_table(theta, t)
    f = lambda a: float(tab.G_integral(t - a)) * smoothed_gaussian_mean(phi, a)
    v, e = integrate.quad(f, 0.0, t, epsabs=0.0, epsrel=1e-11, limit=400,
                          points=[t * (1 - 1e-3)])
    return KernelEvaluation(4 * math.pi * v, 4 * math.pi * e + 1e-12 * abs(v), "time_first")


# ---------------------------------------------------------------------------
# limit parameters


def subcritical_sigma2(b: float) -> float:
    """Variance ``log(1 / (1 - b^2))`` of the log-normal subcritical limit."""
    if not 0.0 <= b < 1.0:
        raise DomainError("reduced coupling must lie in [0, 1)")
    return -math.log1p(-b * b)


def smallball_sigma2(rho: float) -> float:
    """Variance ``log(1 + rho)`` of the small-ball log-normal limit."""
    if not rho > 0:
        raise DomainError("rho must be positive")
    return math.log1p(rho)


# ---------------------------------------------------------------------------
# Edwards-Wilkinson kernels


def exp1_series(z: float, tol: float = 1e-17) -> float:
    """``E_1(z) = -gamma - log z - sum_{k>=1} (-z)^k / (k k!)`` (convergent series).

    Cancellation limits the series to moderate arguments; it refuses ``z > 20``.
    """
    if not 0 < z <= 20:
        raise DomainError("series evaluation needs 0 < z <= 20")
    s = 0.0
    term = 1.0
    k = 1
    while True:
        term *= -z / k
        add = term / k
        s += add
        if abs(add) < tol * max(1.0, abs(s)) and k > z:
            break
        k += 1
        if k > 10_000:
            raise ArithmeticError("series did not converge")
    return -EULER_GAMMA - math.log(z) - s


def ew_kernel(t: float, r: float, method: str = "closed_form") -> KernelEvaluation:
    """``K_t(r) = int_0^t e^{-r^2/(2u)} / (2u) du = E_1(r^2 / 2t) / 2``."""
    if not t > 0:
        raise DomainError("need t > 0")
    if r < 0:
        raise DomainError("need r >= 0")
    if r == 0:
        return _singular(method)
    if method == "closed_form":
        v = 0.5 * float(special.exp1(r * r / (2 * t)))
        return KernelEvaluation(v, 4e-16 * v, method)
    if method == "quadrature":
        # u = t e^{-s}: du / u = -ds, integrand e^{-r^2 e^{s} / 2t} / 2 on (0, inf)
        c = r * r / (2 * t)
        f = lambda s: 0.5 * math.exp(-c * math.exp(s))
        smax = max(1.0, math.log(800.0 / c)) if c < 800 else 1.0
        v, e = integrate.quad(f, 0.0, smax, epsabs=0.0, epsrel=1e-13, limit=400)
        return KernelEvaluation(v, e, method)
    raise DomainError(f"unknown method {method!r}")


def additive_she_kernel(t: float, r: float, method: str = "closed_form") -> KernelEvaluation:
    """``C_t(r) = int_0^t g_{2s}(r) ds = E_1(r^2 / 4t) / (4 pi)``."""
    if not t > 0:
        raise DomainError("need t > 0")
    if r <= 0:
        if r < 0:
            raise DomainError("need r >= 0")
        return _singular(method)
    if method == "closed_form":
        v = float(special.exp1(r * r / (4 * t))) / (4 * math.pi)
        return KernelEvaluation(v, 4e-16 * v, method)
    if method == "quadrature":
        c = r * r / (4 * t)
        f = lambda s: math.exp(-c * math.exp(s)) / (4 * math.pi)
        smax = max(1.0, math.log(800.0 / c)) if c < 800 else 1.0
        v, e = integrate.quad(f, 0.0, smax, epsabs=0.0, epsrel=1e-13, limit=400)
        return KernelEvaluation(v, e, method)
    raise DomainError(f"unknown method {method!r}")


@dataclass(frozen=True)
class EWRegime:
    """``theta_limit`` (the theta -> -infinity kernel) or ``subcritical`` with coupling ``b``."""

    kind: str
    b: float = 0.0

    @classmethod
    def theta_limit(cls):
        return cls("theta_limit")

    @classmethod
    def subcritical(cls, b):
        if not 0.0 <= b < 1.0:
            raise DomainError("reduced coupling must lie in [0, 1)")
        return cls("subcritical", float(b))


def ew_variance(t: float, phi: TestFunction, regime: EWRegime,
                method: str = "time_first") -> KernelEvaluation:
    """Variance of the Gaussian limit tested against ``phi``.

    ``theta_limit``: ``int int phi phi' K_t``.  ``subcritical(b)``:
    ``(1 / (1 - b^2)) int int phi phi' C_t`` (noise strength squared times the
    additive-SHE covariance).

    ``time_first`` integrates the heat kernels against the autocorrelation of
    ``phi`` first; ``polar`` integrates the closed-form radial kernel against
    the angular average of the autocorrelation, in polar coordinates (the
    ``log r`` singularity at the origin is tamed by the Jacobian ``r``).
    """
    if not t > 0:
        raise DomainError("need t > 0")
    if regime.kind == "subcritical":
        if regime.b >= 1.0:
            raise DomainError("supercritical coupling")
        pref = 1.0 / (1.0 - regime.b ** 2)
    else:
        pref = 1.0
    if method == "time_first":
        if regime.kind == "subcritical":
            # C_t: int_0^t S(s) ds
            f = lambda s: smoothed_gaussian_mean(phi, s)
        else:
            # K_t = pi int_0^t g_u du, and g_u = g_{2 (u/2)}
            f = lambda u: math.pi * smoothed_gaussian_mean(phi, 0.5 * u)
        v, e = integrate.quad(f, 0.0, t, epsabs=0.0, epsrel=1e-11, limit=400)
    elif method == "polar":
        kern = (lambda r: additive_she_kernel(t, r).value) if regime.kind == "subcritical" \
            else (lambda r: ew_kernel(t, r).value)
        f = lambda r: r * kern(r) * _angular_autocorr(phi, r) if r > 0 else 0.0
        Rmax = phi.radius
        if phi.kind == "gaussian":
            Rmax = 2 * 7.0 * math.sqrt(2 * phi.params[1])
        v, e = integrate.quad(f, 0.0, Rmax, epsabs=0.0, epsrel=1e-11, limit=400,
                              points=_radial_kinks(phi, Rmax) or None)
    else:
        raise DomainError(f"unknown method {method!r}")
    return KernelEvaluation(pref * v, pref * (e + 1e-12 * abs(v)), method)


# ---------------------------------------------------------------------------
# lattice to continuum


@dataclass(frozen=True)
class LatticeMap:
    """How lattice macroscopic quantities map onto the continuum kernels.

    With ``kappa`` the per-step covariance of the difference of two walks and
    ``index`` the index of the lattice it lives on, macroscopic lattice time
    ``t`` corresponds to continuum time ``kappa t / 2``, the window parameter
    shifts by ``log(2 / kappa)``, the flat covariance density carries the
    factor ``1 / index`` and the Edwards-Wilkinson covariance the factor
    ``2 / kappa``.
    """

    kappa: float
    index: int

    @classmethod
    def of(cls, kernel: WalkKernel):
        return cls(2.0 * kernel.coordinate_variance, kernel.difference_index)

    @property
    def time_factor(self) -> float:
        return 0.5 * self.kappa

    @property
    def theta_shift(self) -> float:
        return math.log(2.0 / self.kappa)

    @property
    def flat_factor(self) -> float:
        return 1.0 / self.index

    @property
    def ew_factor(self) -> float:
        return 2.0 / self.kappa


def lattice_flat_variance_limit(kernel: WalkKernel, theta: float, t: float,
                                phi: TestFunction) -> KernelEvaluation:
    """Continuum limit of ``Var[Z_{N;t}(phi)]`` for the lattice model of ``kernel``."""
    m = LatticeMap.of(kernel)
    ev = smeared_variance_flat(theta + m.theta_shift, m.time_factor * t, phi)
    return KernelEvaluation(m.flat_factor * ev.value, m.flat_factor * ev.abs_error_estimate,
                            ev.method)


def lattice_ew_variance_limit(kernel: WalkKernel, b: float, t: float,
                              phi: TestFunction) -> KernelEvaluation:
    """Continuum limit of the variance of ``(Z_{N;t}(phi) - E) / beta_N`` at coupling ``b``."""
    m = LatticeMap.of(kernel)
    ev = ew_variance(m.time_factor * t, phi, EWRegime.subcritical(b))
    return KernelEvaluation(m.ew_factor * ev.value, m.ew_factor * ev.abs_error_estimate,
                            ev.method)
