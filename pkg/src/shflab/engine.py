"""Transfer-matrix evaluation of polymer partition functions.

Two evaluators share the same disorder field:

* the rotated engine (simple walk only) works in ``u = x1 + x2``,
  ``v = x1 - x2`` where the walk is a pair of independent +-1 walks.  Only the
  sublattice of the right parity is stored, which halves memory and work;
* the grid engine works on the full ``Z^2`` grid for any nearest-neighbour
  kernel, forward (measures) or backward (fields of starting points).

Conventions.  ``Z_N(m, z)`` carries the weights of times ``m+1 .. N``.  The
point-to-point ``Z_{M,N}(x, y)`` carries the weights of times ``M+1 .. N-1``
and the endpoint indicator.  Backward steps apply the weight of time ``n`` and
then average over the kernel; forward steps average first and then apply the
weight of the time they arrive at.  Both orders give the same polymer.

Truncation.  A run of duration ``T`` is confined to a box of radius
``c * sd * sqrt(T)`` around its starting region, ``sd`` being the per-step
standard deviation of one grid coordinate and ``c = box_radius_factor``; mass
leaving the box is dropped.  ``box_radius_factor=None`` means no truncation
(the light cone is used instead, which is exact).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property, lru_cache

import numpy as np

from . import _kernels as K
from .lattice import DisorderField, DomainError, UsageError, WalkKernel, log_mgf
from .schedule import CouplingSchedule, resolve_beta
from .testfunctions import TestFunction


class NumericError(ArithmeticError):
    """Overflow, underflow or a non-finite value inside a run."""


class TruncationWarning(UserWarning):
    """The truncation box is narrower than one diffusive standard deviation."""


class ParityWarning(UserWarning):
    """The endpoint is unreachable for the simple walk; the value is exactly 0."""


# ---------------------------------------------------------------------------
# result containers


@dataclass(eq=False)
class PartitionSlice:
    """Partition values on a box of the lattice at one polymer time.

    ``kind == "endpoint"``: the unnormalised endpoint measure ``y -> q(y)`` at
    time ``time`` of polymers started at ``origin = (m, z)``; its total mass is
    the point-to-plane partition function.

    ``kind == "field"``: the map ``z -> Z_horizon(time, z)`` over a box of
    starting points.

    ``values[i, j]`` sits at the lattice site ``(lo[0] + i, lo[1] + j)``.
    ``lost_mass`` is the expected mass removed by the truncation box (for a
    field, the worst starting point).
    """

    kind: str
    time: int
    origin: tuple
    grid_lo: tuple | None
    lost_mass: float
    beta: float
    scale: int
    horizon: int
    _values: np.ndarray | None = None
    _rotated: tuple | None = None  # (compressed array, lo offset, (u0, v0))
    meta: dict = field(default_factory=dict)

    @cached_property
    def _grid(self):
        if self._values is not None:
            return self._values, tuple(self.grid_lo)
        return _rotated_to_grid(*self._rotated)

    @property
    def values(self) -> np.ndarray:
        return self._grid[0]

    @property
    def lo(self) -> tuple:
        return self._grid[1]

    @property
    def shape(self):
        return self.values.shape

    @property
    def total(self) -> float:
        if self._values is None:
            return float(self._rotated[0].sum())
        return float(self._values.sum())

    @property
    def partition_function(self) -> float:
        if self.kind != "endpoint":
            raise UsageError("a field slice has no single partition function")
        return self.total

    def sites(self):
        """Lattice coordinates of the grid as two broadcastable arrays."""
        n1, n2 = self.values.shape
        return (self.lo[0] + np.arange(n1))[:, None], (self.lo[1] + np.arange(n2))[None, :]

    def support_min(self) -> float:
        """Smallest value on the reachable support (zero would break positivity)."""
        if self._values is None:
            return float(self._rotated[0].min())
        return float(self._values.min())

    def at(self, y) -> float:
        i = int(y[0]) - self.lo[0]
        j = int(y[1]) - self.lo[1]
        v = self.values
        if 0 <= i < v.shape[0] and 0 <= j < v.shape[1]:
            return float(v[i, j])
        return 0.0


@dataclass(eq=False)
class RescaledMeasure:
    """Discretised random measure on ``R^2 x R^2`` between macroscopic times s < t.

    ``masses[a, b, c, d]`` is the mass of ``cell_x(a, b) x cell_y(c, d)``.
    x-cells tile ``macro_box``; y-cells cover the whole evolved window, so the
    x-marginal is complete up to ``lost_mass``.  Cells are squares of
    ``cell`` lattice sites per side, i.e. of macroscopic side ``cell / sqrt(N)``.
    """

    s: float
    t: float
    scale: int
    cell: int
    x_lo: tuple  # lattice coordinates of the first x-cell corner
    y_lo: tuple
    masses: np.ndarray
    lost_mass: float

    @property
    def cell_side(self) -> float:
        return self.cell / math.sqrt(self.scale)

    def centers(self, which="x"):
        lo = self.x_lo if which == "x" else self.y_lo
        n1, n2 = (self.masses.shape[:2] if which == "x" else self.masses.shape[2:])
        h = self.cell
        c1 = (lo[0] + h * np.arange(n1) + 0.5 * (h - 1)) / math.sqrt(self.scale)
        c2 = (lo[1] + h * np.arange(n2) + 0.5 * (h - 1)) / math.sqrt(self.scale)
        return c1[:, None], c2[None, :]

    @property
    def total(self) -> float:
        return float(self.masses.sum())


# ---------------------------------------------------------------------------
# helpers


def _kernel_of(coupling, kernel):
    if isinstance(coupling, CouplingSchedule):
        if kernel is not None and kernel != coupling.kernel:
            raise UsageError("kernel differs from the schedule's kernel")
        return coupling.kernel
    return kernel if kernel is not None else WalkKernel.simple()


def _check_law(coupling, field_):
    if isinstance(coupling, CouplingSchedule) and coupling.law != field_.law:
        raise UsageError("schedule and disorder field use different laws")


def box_margin(kernel: WalkKernel, T: int, factor, rotated=False) -> int:
    """Truncation radius in grid units for a run of duration ``T``."""
    if factor is None:
        return T
    if factor <= 0:
        raise DomainError("box radius factor must be positive")
    if factor < 1:
        warnings.warn(f"box radius factor {factor} < 1 truncates severely",
                      TruncationWarning, stacklevel=3)
    sd = 1.0 if rotated else math.sqrt(kernel.coordinate_variance)
    return max(1, min(T, int(math.ceil(factor * sd * math.sqrt(T)))))


class _Weights:
    """Scratch buffers turning disorder blocks into weights exp(beta w - lambda)."""

    def __init__(self, field_, beta, size):
        self.field = field_
        self.beta = beta
        self.lam = log_mgf(field_.law, beta) if beta > 0 else 0.0
        self.a = np.empty(size)
        self.b = np.empty(size)

    def block(self, n, origin, e1, e2, shape):
        size = shape[0] * shape[1]
        if self.beta == 0.0:
            self.field.check_window(n, [origin])
            w = self.a[:size]
            w.fill(1.0)
            return w
        w = self.field.omega_block(n, origin, e1, e2, shape, out=self.a, scratch=self.b)
        w *= self.beta
        w -= self.lam
        # overflow surfaces as a NumericError from the run loop
        with np.errstate(over="ignore"):
            np.exp(w, out=w)
        return w


def _parity_lo(k, R):
    r = min(k, R)
    if (k - r) % 2:
        r -= 1
    return -r


def _rotated_to_grid(arr, lo, uv0):
    """Expand a compressed rotated array into a dense x-grid (zeros off the sublattice)."""
    n = arr.shape[0]
    u0, v0 = uv0
    i = np.arange(n)
    u = u0 + lo + 2 * i[:, None]
    v = v0 + lo + 2 * i[None, :]
    x1 = (u + v) // 2
    x2 = (u - v) // 2
    a1, a2 = x1.min(), x2.min()
    out = np.zeros((x1.max() - a1 + 1, x2.max() - a2 + 1))
    out[x1 - a1, x2 - a2] = arr
    return out, (int(a1), int(a2))


# ---------------------------------------------------------------------------
# expected truncation loss (beta = 0 runs, cached by geometry)


@lru_cache(maxsize=512)
def _line_survival(T: int, R: int) -> float:
    """P(a +-1 walk stays within [-R, R] for T steps)."""
    p = np.zeros(2 * R + 3)
    p[R + 1] = 1.0
    for _ in range(T):
        q = np.zeros_like(p)
        q[1:-1] = 0.5 * (p[:-2] + p[2:])
        p = q
    return float(p[1:-1].sum())


def rotated_lost_mass(T: int, R: int) -> float:
    s = _line_survival(T, R)
    return max(0.0, 1.0 - s * s)


@lru_cache(maxsize=128)
def _grid_field_deficit(kernel, T, R, n1, n2):
    ones = _ConstantWeights()
    F = _grid_backward_run(ones, kernel, 0, T, (0, 0), (n1, n2), R)
    return float(np.max(1.0 - F))


@lru_cache(maxsize=128)
def _grid_forward_deficit(kernel, T, R, shape):
    ones = _ConstantWeights()
    mu = np.full(shape, 1.0)
    out, _ = _grid_forward_run(ones, kernel, 0, T, (0, 0), mu, R, weight_last=True)
    return float(max(0.0, 1.0 - out.sum() / mu.sum()))


class _ConstantWeights:
    beta = 0.0

    def block(self, n, origin, e1, e2, shape):
        return np.ones(shape[0] * shape[1])



# ---------------------------------------------------------------------------
# run loops


def _rotated_run(weights, m, z, T, R, weight_last=True):
    """Forward run of the simple walk from ``(m, z)``; returns (array, lo)."""
    nmax = R + 1
    P = np.zeros((nmax + 2, nmax + 2))
    Q = np.zeros((nmax + 2, nmax + 2))
    P[1, 1] = 1.0
    lo_prev, n_prev = 0, 1
    z1, z2 = int(z[0]), int(z[1])
    for k in range(1, T + 1):
        n = m + k
        lo = _parity_lo(k, R)
        n_next = 1 - lo
        if k == T and not weight_last:
            w = np.ones(n_next * n_next)
        else:
            w = weights.block(n, (z1 + lo, z2), (1, 1), (1, -1), (n_next, n_next))
        tot = K.rotated_forward(P, Q, n_next, (lo - lo_prev + 1) // 2, w)
        if not math.isfinite(tot):
            raise NumericError(f"non-finite partition value at time {n}")
        P, Q = Q, P
        lo_prev, n_prev = lo, n_next
    out = P[1:n_prev + 1, 1:n_prev + 1].copy()
    if weights.beta and not out.min() > 0.0:
        raise NumericError("partition value underflowed to zero")
    return out, lo_prev


def _padded(arr, offset, shape):
    P = np.zeros((shape[0] + 2, shape[1] + 2))
    o1, o2 = offset
    P[o1:o1 + arr.shape[0], o2:o2 + arr.shape[1]] = arr
    return P


def _kernel_weights(kernel):
    return 1.0 - kernel.p_stay, kernel.p_stay


def _grid_forward_run(weights, kernel, m, T, lo0, mu, R, weight_last=True):
    """Forward run from the measure ``mu`` placed at ``lo0``; returns (array, lo)."""
    pm, ps = _kernel_weights(kernel)
    a1, a2 = lo0
    s1, s2 = mu.shape
    prev = np.array(mu, dtype=float)
    p_lo = (a1, a2)
    none = np.empty(0)
    for k in range(1, T + 1):
        n = m + k
        r = min(k, R)
        lo = (a1 - r, a2 - r)
        shape = (s1 + 2 * r, s2 + 2 * r)
        P = _padded(prev, (p_lo[0] - lo[0] + 1, p_lo[1] - lo[1] + 1), shape)
        nxt = np.empty(shape)
        if k == T and not weight_last:
            w = none
        else:
            w = weights.block(n, lo, (1, 0), (0, 1), shape)
        tot = K.grid_step(P, nxt, shape[0], shape[1], pm, ps, w)
        if not math.isfinite(tot):
            raise NumericError(f"non-finite partition value at time {n}")
        prev, p_lo = nxt, lo
    return prev, p_lo


def _grid_backward_run(weights, kernel, m, T, lo0, shape0, R):
    """Backward run: field ``z -> Z_{m+T}(m, z)`` on the box at ``lo0`` of ``shape0``."""
    pm, ps = _kernel_weights(kernel)
    a1, a2 = lo0
    s1, s2 = shape0
    r = min(T, R)
    cur = np.ones((s1 + 2 * r, s2 + 2 * r))
    c_lo = (a1 - r, a2 - r)
    none = np.empty(0)
    for n in range(m + T, m, -1):
        w = weights.block(n, c_lo, (1, 0), (0, 1), cur.shape)
        cur *= w.reshape(cur.shape)
        r = min(n - 1 - m, R)
        lo = (a1 - r, a2 - r)
        shape = (s1 + 2 * r, s2 + 2 * r)
        P = _padded(cur, (c_lo[0] - lo[0] + 1, c_lo[1] - lo[1] + 1), shape)
        nxt = np.empty(shape)
        tot = K.grid_step(P, nxt, shape[0], shape[1], pm, ps, none)
        if not math.isfinite(tot):
            raise NumericError(f"non-finite partition value at time {n}")
        cur, c_lo = nxt, lo
    if weights.beta and not cur.min() > 0.0:
        raise NumericError("partition value underflowed to zero")
    return cur


# ---------------------------------------------------------------------------
# public operations


def point_to_plane(field_: DisorderField, coupling, N: int, start=(0, (0, 0)),
                   box_radius_factor=6.0, kernel: WalkKernel | None = None,
                   scale: int | None = None, engine: str = "auto") -> PartitionSlice:
    """Endpoint slice at time ``N`` of polymers started at ``start = (m, z)``.

    The total mass of the slice is ``Z_N(m, z)``.  ``coupling`` is a fixed
    beta or a :class:`CouplingSchedule` evaluated at ``scale`` (default ``N``).
    """
    m, z = int(start[0]), (int(start[1][0]), int(start[1][1]))
    T = N - m
    if T < 0:
        raise DomainError("terminal time before start time")
    kern = _kernel_of(coupling, kernel)
    _check_law(coupling, field_)
    beta = resolve_beta(coupling, scale or N)
    eng = _pick_engine(kern, engine)
    if T == 0:
        vals = np.ones((1, 1))
        return PartitionSlice("endpoint", N, (m, z), z, 0.0, beta, scale or N, N, _values=vals)
    if eng == "rotated":
        R = box_margin(kern, T, box_radius_factor, rotated=True)
        w = _Weights(field_, beta, (R + 1) ** 2)
        arr, lo = _rotated_run(w, m, z, T, R)
        lost = rotated_lost_mass(T, R) if R < T else 0.0
        return PartitionSlice("endpoint", N, (m, z), None, lost, beta, scale or N, N,
                              _rotated=(arr, lo, (z[0] + z[1], z[0] - z[1])))
    R = box_margin(kern, T, box_radius_factor)
    w = _Weights(field_, beta, (2 * R + 1) ** 2)
    out, lo = _grid_forward_run(w, kern, m, T, z, np.ones((1, 1)), R)
    lost = _grid_forward_deficit(kern, T, R, (1, 1)) if R < T else 0.0
    return PartitionSlice("endpoint", N, (m, z), lo, lost, beta, scale or N, N, _values=out)


def _pick_engine(kern, engine):
    if engine == "auto":
        return "rotated" if kern.kind == "simple" else "grid"
    if engine == "rotated" and kern.kind != "simple":
        raise UsageError("the rotated engine handles the simple walk only")
    if engine not in ("rotated", "grid"):
        raise UsageError(f"unknown engine {engine!r}")
    return engine


def point_to_plane_field(field_: DisorderField, coupling, N: int, m: int, region,
                         box_radius_factor=6.0, kernel: WalkKernel | None = None,
                         scale: int | None = None) -> PartitionSlice:
    """Field ``z -> Z_N(m, z)`` for ``z`` in ``region = ((lo1, hi1), (lo2, hi2))`` (inclusive)."""
    (a1, b1), (a2, b2) = region
    if b1 < a1 or b2 < a2:
        raise DomainError("empty region")
    T = N - m
    if T < 0:
        raise DomainError("terminal time before start time")
    kern = _kernel_of(coupling, kernel)
    _check_law(coupling, field_)
    beta = resolve_beta(coupling, scale or N)
    shape = (b1 - a1 + 1, b2 - a2 + 1)
    R = box_margin(kern, max(T, 1), box_radius_factor)
    big = (shape[0] + 2 * min(T, R)) * (shape[1] + 2 * min(T, R))
    w = _Weights(field_, beta, big)
    F = _grid_backward_run(w, kern, m, T, (a1, a2), shape, R)
    lost = _grid_field_deficit(kern, T, R, *shape) if R < T else 0.0
    return PartitionSlice("field", m, (m, None), (a1, a2), lost, beta, scale or N, N,
                          _values=F)


def point_to_point(field_: DisorderField, coupling, M: int, N: int, x, y,
                   box_radius_factor=None, kernel: WalkKernel | None = None,
                   scale: int | None = None) -> float:
    """``Z_{M,N}(x, y)``: weights at times ``M+1 .. N-1`` and endpoint ``y`` at ``N``.

    For the simple walk an endpoint of the wrong parity gives exactly 0 and a
    :class:`ParityWarning`.
    """
    kern = _kernel_of(coupling, kernel)
    if kern.kind == "simple" and (int(y[0]) - int(x[0]) + int(y[1]) - int(x[1]) + N - M) % 2:
        warnings.warn(f"{y} is not reachable from {x} in {N - M} steps", ParityWarning,
                      stacklevel=2)
        return 0.0
    sl = point_to_point_slice(field_, coupling, M, N, x, box_radius_factor, kernel, scale)
    return sl.at(y)


def point_to_point_slice(field_, coupling, M, N, x, box_radius_factor=None, kernel=None,
                         scale=None) -> PartitionSlice:
    """All endpoints at once: ``y -> Z_{M,N}(x, y)``."""
    T = N - M
    if T < 0:
        raise DomainError("terminal time before start time")
    kern = _kernel_of(coupling, kernel)
    _check_law(coupling, field_)
    beta = resolve_beta(coupling, scale or N)
    x = (int(x[0]), int(x[1]))
    if T == 0:
        return PartitionSlice("endpoint", N, (M, x), x, 0.0, beta, scale or N, N,
                              _values=np.ones((1, 1)))
    if kern.kind == "simple":
        R = box_margin(kern, T, box_radius_factor, rotated=True)
        w = _Weights(field_, beta, (R + 1) ** 2)
        arr, lo = _rotated_run(w, M, x, T, R, weight_last=False)
        lost = rotated_lost_mass(T, R) if R < T else 0.0
        return PartitionSlice("endpoint", N, (M, x), None, lost, beta, scale or N, N,
                              _rotated=(arr, lo, (x[0] + x[1], x[0] - x[1])))
    R = box_margin(kern, T, box_radius_factor)
    w = _Weights(field_, beta, (2 * R + 1) ** 2)
    out, lo = _grid_forward_run(w, kern, M, T, x, np.ones((1, 1)), R, weight_last=False)
    lost = _grid_forward_deficit(kern, T, R, (1, 1)) if R < T else 0.0
    return PartitionSlice("endpoint", N, (M, x), lo, lost, beta, scale or N, N, _values=out)


def chapman_kolmogorov_check(field_, coupling, M: int, K_: int, N: int, x, y,
                             kernel: WalkKernel | None = None) -> float:
    """Relative residual of ``Z_{M,N}(x,y) = sum_z Z_{M,K}(x,z) w(K,z) Z_{K,N}(z,y)``.

    All runs are untruncated.
    """
    if not M < K_ < N:
        raise DomainError("need M < K < N")
    kern = _kernel_of(coupling, kernel)
    beta = resolve_beta(coupling, N)
    lhs = point_to_point(field_, beta, M, N, x, y, kernel=kern)
    left = point_to_point_slice(field_, beta, M, K_, x, kernel=kern)
    lam = log_mgf(field_.law, beta)
    s1, s2 = left.sites()
    vals = left.values
    acc = 0.0
    for (i, j) in zip(*np.nonzero(vals)):
        z = (int(s1[i, 0]), int(s2[0, j]))
        om = field_.omega_block(K_, z, (1, 0), (0, 1), (1, 1))[0]
        acc += vals[i, j] * math.exp(beta * om - lam) * point_to_point(
            field_, beta, K_, N, z, y, kernel=kern)
    scale = max(abs(lhs), abs(acc), 1e-300)
    return abs(lhs - acc) / scale


def rescaled_measure(field_, coupling, N: int, s: float, t: float,
                     macro_box=((-0.5, 0.5), (-0.5, 0.5)), cell: int = 2,
                     box_radius_factor=6.0, kernel: WalkKernel | None = None) -> RescaledMeasure:
    """Cell masses of ``N Z_{[Ns],[Nt]}(sqrt(N) x, sqrt(N) y) dx dy``.

    Each x-cell is evolved as one forward run from the indicator of its lattice
    sites (the cell mass is additive), and the endpoint field is binned into
    y-cells of the same size.  A cell of even side holds both parity classes of
    the simple walk, which removes the sublattice oscillation.
    """
    if not 0 <= s < t:
        raise DomainError("need 0 <= s < t")
    if cell < 1:
        raise DomainError("cell must be a positive number of lattice sites")
    kern = _kernel_of(coupling, kernel)
    _check_law(coupling, field_)
    beta = resolve_beta(coupling, N)
    M, Nt = int(math.floor(N * s)), int(math.floor(N * t))
    T = Nt - M
    if T < 1:
        raise DomainError("time window shorter than one step")
    sq = math.sqrt(N)
    (p1, q1), (p2, q2) = macro_box
    x_lo = (int(math.ceil(p1 * sq)), int(math.ceil(p2 * sq)))
    n1 = max(1, int(math.floor(q1 * sq)) - x_lo[0] + 1) // cell
    n2 = max(1, int(math.floor(q2 * sq)) - x_lo[1] + 1) // cell
    if n1 < 1 or n2 < 1:
        raise DomainError("macro box smaller than one cell")
    R = box_margin(kern, T, box_radius_factor)
    span1, span2 = n1 * cell, n2 * cell
    far = max(abs(x_lo[0] - R), abs(x_lo[0] + span1 + R), abs(x_lo[1] - R), abs(x_lo[1] + span2 + R))
    if far > field_.box_radius:
        raise DomainError("macro box plus truncation margin exceeds the disorder window")
    # y-cells cover [x_lo - R - pad, x_lo + span + R + pad], aligned with the x-cells
    pad = (-R) % cell
    y_lo = (x_lo[0] - R - pad, x_lo[1] - R - pad)
    ny1 = (span1 + 2 * (R + pad) + cell - 1) // cell + 1
    ny2 = (span2 + 2 * (R + pad) + cell - 1) // cell + 1
    masses = np.zeros((n1, n2, ny1, ny2))
    w = _Weights(field_, beta, (cell + 2 * R + 2) ** 2)
    mu = np.ones((cell, cell))
    for a in range(n1):
        for b in range(n2):
            lo0 = (x_lo[0] + a * cell, x_lo[1] + b * cell)
            out, lo = _grid_forward_run(w, kern, M, T, lo0, mu, R, weight_last=False)
            masses[a, b] = _bin_cells(out, lo, y_lo, cell, (ny1, ny2))
    masses /= N
    lost = _grid_forward_deficit(kern, T, R, (cell, cell)) if R < T else 0.0
    return RescaledMeasure(s, t, N, cell, x_lo, y_lo, masses, lost)


def _bin_cells(arr, lo, y_lo, cell, shape):
    out = np.zeros((shape[0] * cell, shape[1] * cell))
    o1, o2 = lo[0] - y_lo[0], lo[1] - y_lo[1]
    if o1 < 0 or o2 < 0 or o1 + arr.shape[0] > out.shape[0] or o2 + arr.shape[1] > out.shape[1]:
        raise RuntimeError("endpoint field outside the y-cell grid")
    out[o1:o1 + arr.shape[0], o2:o2 + arr.shape[1]] = arr
    return out.reshape(shape[0], cell, shape[1], cell).sum(axis=(1, 3))


def average_against(measure, phi: TestFunction, psi: TestFunction | None = None) -> float:
    """Riemann sum of ``phi`` (``x`` variable) and ``psi`` (``y``) against a measure.

    * :class:`RescaledMeasure`: ``sum phi(x_a) psi(y_c) mass[a, c]`` at cell centres;
    * field slice: ``(1/N) sum_z phi(z / sqrt N) Z(z)``;
    * endpoint slice: ``sum_y phi(y / sqrt N) q(y)``.

    ``phi`` must vanish outside the region covered by the measure.
    """
    if isinstance(measure, RescaledMeasure):
        c1, c2 = measure.centers("x")
        _check_support(phi, measure.x_lo, measure.masses.shape[:2], measure.cell, measure.scale)
        fx = phi(c1, c2)
        if psi is None:
            return float(np.einsum("ab,abcd->", fx, measure.masses))
        d1, d2 = measure.centers("y")
        _check_support(psi, measure.y_lo, measure.masses.shape[2:], measure.cell, measure.scale)
        return float(np.einsum("ab,abcd,cd->", fx, measure.masses, psi(d1, d2)))
    if not isinstance(measure, PartitionSlice):
        raise UsageError("unsupported measure type")
    if psi is not None:
        raise UsageError("a slice is a measure in one variable")
    sq = math.sqrt(measure.scale)
    s1, s2 = measure.sites()
    _check_support(phi, measure.lo, measure.values.shape, 1, measure.scale)
    f = phi(s1 / sq, s2 / sq)
    tot = float(np.sum(f * measure.values))
    return tot / measure.scale if measure.kind == "field" else tot


def _check_support(phi, lo, shape, cell, N):
    sq = math.sqrt(N)
    (a1, b1), (a2, b2) = phi.support
    lo1, hi1 = lo[0] / sq, (lo[0] + shape[0] * cell - 1) / sq
    lo2, hi2 = lo[1] / sq, (lo[1] + shape[1] * cell - 1) / sq
    eps = 1.0 / sq
    if a1 < lo1 - eps or b1 > hi1 + eps or a2 < lo2 - eps or b2 > hi2 + eps:
        raise DomainError("test function support extends beyond the measure's window")


def log_field(sl: PartitionSlice) -> np.ndarray:
    """Elementwise log of a field slice; requires strictly positive values."""
    v = sl.values
    if sl.kind == "endpoint" and sl._rotated is not None:
        raise UsageError("endpoint slices of the simple walk vanish off the sublattice; "
                         "use a field slice")
    if not np.all(v > 0) or not np.all(np.isfinite(v)):
        raise DomainError("log of a non-positive partition value")
    return np.log(v)


def lattice_region(phi: TestFunction, N: int):
    """Inclusive lattice box containing ``sqrt(N) * support(phi)``."""
    sq = math.sqrt(N)
    (a1, b1), (a2, b2) = phi.support
    return ((int(math.floor(a1 * sq)), int(math.ceil(b1 * sq))),
            (int(math.floor(a2 * sq)), int(math.ceil(b2 * sq))))


def flat_field(field_, coupling, N: int, phi: TestFunction, t: float = 1.0,
               box_radius_factor=6.0, kernel=None) -> PartitionSlice:
    """Field slice of ``z -> Z_{[Nt]}(0, z)`` over the lattice support of ``phi``."""
    T = int(math.floor(N * t))
    if T < 1:
        raise DomainError("macroscopic time shorter than one step")
    return point_to_plane_field(field_, coupling, T, 0, lattice_region(phi, N),
                                box_radius_factor, kernel, scale=N)


def smeared(sl: PartitionSlice, phi: TestFunction, log: bool = False) -> float:
    """``(1/N) sum_z phi(z/sqrt N) Z(z)`` or, with ``log``, the same sum of ``log Z``."""
    sq = math.sqrt(sl.scale)
    s1, s2 = sl.sites()
    f = phi(s1 / sq, s2 / sq)
    v = log_field(sl) if log else sl.values
    return float(np.sum(f * v)) / sl.scale


def estimate_site_updates(kind: str, T: int, R: int, region=(1, 1)) -> float:
    """Number of site updates of a run; ``kind`` is ``rotated`` or ``grid``."""
    tot = 0.0
    for k in range(1, T + 1):
        r = min(k, R)
        if kind == "rotated":
            tot += (r + 1) ** 2
        else:
            tot += (region[0] + 2 * r) * (region[1] + 2 * r)
    return tot
