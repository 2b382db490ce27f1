"""Compiled inner loops: counter-based hashing and transfer-matrix stencils.

Everything here is low level and array oriented.  The public wrappers live in
:mod:`shflab.lattice` and :mod:`shflab.engine`.
"""

import numba as nb
import numpy as np

# Law codes shared with lattice.DisorderLaw
LAW_GAUSSIAN = 0
LAW_RADEMACHER = 1
LAW_EXPONENTIAL = 2

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)

# counter layout: time in bits 44..63, x1 in 24..43, x2 in 4..23, slot in 0..3
TIME_LIMIT = 1 << 20
COORD_LIMIT = 1 << 19
_COORD_SHIFT = 1 << 19
_INV53 = 1.0 / 9007199254740992.0


@nb.njit(inline="always", cache=True)
def mix64(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


@nb.njit(cache=True)
def seed_key(seed):
    return mix64(np.uint64(seed) + GOLDEN)


@nb.njit(inline="always", cache=True)
def _counter(n, x1, x2):
    return (
        (np.uint64(n) << np.uint64(44))
        | (np.uint64(x1 + _COORD_SHIFT) << np.uint64(24))
        | (np.uint64(x2 + _COORD_SHIFT) << np.uint64(4))
    )


@nb.njit(inline="always", cache=True)
def _hash(key, c, slot):
    return mix64(key + (c | np.uint64(slot)) * GOLDEN)


def _sin_coefficients():
    import math
    # Taylor coefficients of sin(2 pi y) in odd powers of y; |y| <= 1/4 keeps the
    # truncation error below 1e-17
    return tuple((-1) ** k * (2 * math.pi) ** (2 * k + 1) / math.factorial(2 * k + 1)
                 for k in range(12))


(_S0, _S1, _S2, _S3, _S4, _S5, _S6, _S7, _S8, _S9, _S10, _S11) = _sin_coefficients()


@nb.njit(inline="always", cache=True)
def cos2pi(u):
    """cos(2 pi u) by range reduction and an odd polynomial; branch free."""
    a = abs(u - np.floor(u + 0.5))
    y = 0.25 - a
    z = y * y
    p = _S11
    p = p * z + _S10
    p = p * z + _S9
    p = p * z + _S8
    p = p * z + _S7
    p = p * z + _S6
    p = p * z + _S5
    p = p * z + _S4
    p = p * z + _S3
    p = p * z + _S2
    p = p * z + _S1
    p = p * z + _S0
    return p * y


@nb.njit(inline="always", cache=True)
def _unit_open(h):
    # uniform on (0, 1] with 53 bits
    return (np.float64(np.int64(h >> np.uint64(11))) + 1.0) * _INV53


@nb.njit(inline="always", cache=True)
def _unit(h):
    # uniform on [0, 1) with 53 bits
    return np.float64(np.int64(h >> np.uint64(11))) * _INV53


@nb.njit(cache=True)
def draw_block(key, law, n, x1_0, x2_0, e1x, e1y, e2x, e2y, n1, n2, out_a, out_b):
    """Raw counter draws for sites ``x0 + i*e1 + j*e2`` at time ``n``.

    gaussian: Box-Muller pair, a uniform on (0, 1] in ``out_a`` and
    ``cos(2 pi U')`` in ``out_b``; rademacher: +-1 in ``out_a``; exponential:
    uniform on (0, 1] in ``out_a``.  Flat C order.
    """
    key = np.uint64(key)
    for i in range(n1):
        bx = x1_0 + i * e1x
        by = x2_0 + i * e1y
        base = i * n2
        if law == LAW_GAUSSIAN:
            for j in range(n2):
                c = _counter(n, bx + j * e2x, by + j * e2y)
                out_a[base + j] = _unit_open(_hash(key, c, 0))
                out_b[base + j] = cos2pi(_unit(_hash(key, c, 1)))
        elif law == LAW_RADEMACHER:
            for j in range(n2):
                c = _counter(n, bx + j * e2x, by + j * e2y)
                h = _hash(key, c, 0)
                out_a[base + j] = np.float64(np.int64(h >> np.uint64(63))) * 2.0 - 1.0
        else:
            for j in range(n2):
                c = _counter(n, bx + j * e2x, by + j * e2y)
                out_a[base + j] = _unit_open(_hash(key, c, 0))


@nb.njit(cache=True)
def rotated_forward(P, Q, n_next, d, w):
    """Forward step on the compressed rotated sublattice (zero-padded buffers).

    Array index ``i`` of the old grid lives at ``P[i + 1]``.  The new grid
    starts one rotated unit below (``d = 0``) or above (``d = 1``) the old one,
    so new site ``i`` averages old sites ``i - 1 + d`` and ``i + d``.  Writes
    ``Q[1:n_next+1, 1:n_next+1]``, zeroes its border ring and returns the sum.
    """
    tot = 0.0
    for i in range(n_next):
        a = i + d
        base = i * n_next
        for j in range(n_next):
            b = j + d
            v = 0.25 * (P[a, b] + P[a, b + 1] + P[a + 1, b] + P[a + 1, b + 1]) * w[base + j]
            Q[i + 1, j + 1] = v
            tot += v
    for k in range(n_next + 2):
        Q[0, k] = 0.0
        Q[n_next + 1, k] = 0.0
        Q[k, 0] = 0.0
        Q[k, n_next + 1] = 0.0
    return tot


@nb.njit(cache=True)
def grid_step(P, Q, n1, n2, p_move, p_stay, w):
    """Nearest-neighbour averaging on a zero-padded grid.

    ``Q[i, j] = (p_move/4 * (four neighbours) + p_stay * centre) * w[i, j]``
    where the neighbours of ``Q[i, j]`` are read around ``P[i + 1, j + 1]``.
    The kernel is symmetric so the same step serves forward and backward runs.
    ``w`` of length 0 means unit weights.  Returns the sum of ``Q``.
    """
    a = 0.25 * p_move
    tot = 0.0
    use_w = w.shape[0] > 0
    for i in range(n1):
        base = i * n2
        for j in range(n2):
            v = a * (P[i, j + 1] + P[i + 2, j + 1] + P[i + 1, j] + P[i + 1, j + 2])
            if p_stay != 0.0:
                v += p_stay * P[i + 1, j + 1]
            if use_w:
                v *= w[base + j]
            Q[i, j] = v
            tot += v
    return tot


@nb.njit(cache=True)
def renewal_table(q, sigma2, T):
    """``V[M] = 1 + sigma2 * sum_{k=1}^{M} q[k] V[M-k]`` for M = 0..T."""
    V = np.empty(T + 1)
    V[0] = 1.0
    for M in range(1, T + 1):
        acc = 0.0
        for k in range(1, M + 1):
            acc += q[k] * V[M - k]
        V[M] = 1.0 + sigma2 * acc
    return V
