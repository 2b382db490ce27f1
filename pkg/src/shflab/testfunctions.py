"""Macroscopic test functions phi : R^2 -> R used to smear partition fields."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import signal

from .lattice import DomainError

# Gaussian bumps are treated as supported on center +- GAUSS_CUT standard deviations
GAUSS_CUT = 7.0


@dataclass(frozen=True, eq=False)
class TestFunction:
    """Bounded, compactly supported function on R^2.

    Build with :meth:`box`, :meth:`gaussian`, :meth:`ball` or
    :meth:`tabulated`.  ``params`` holds the kind-specific parameters.
    """

    __test__ = False  # keep pytest from collecting the class

    kind: str
    params: tuple
    table: np.ndarray | None = None

    # -- constructors -----------------------------------------------------
    @classmethod
    def box(cls, lo=(-0.5, -0.5), hi=(0.5, 0.5), height=1.0):
        lo = tuple(float(v) for v in lo)
        hi = tuple(float(v) for v in hi)
        if not (hi[0] > lo[0] and hi[1] > lo[1]):
            raise DomainError("empty box")
        return cls("box", (lo, hi, float(height)))

    @classmethod
    def gaussian(cls, center=(0.0, 0.0), var=0.1, mass=1.0):
        """``mass`` times the centred normal density with covariance ``var * I``."""
        if not var > 0:
            raise DomainError("variance must be positive")
        return cls("gaussian", (tuple(float(c) for c in center), float(var), float(mass)))

    @classmethod
    def ball(cls, center=(0.0, 0.0), radius=0.5, mass=1.0):
        """Uniform density of total ``mass`` on a disc."""
        if not radius > 0:
            raise DomainError("radius must be positive")
        return cls("ball", (tuple(float(c) for c in center), float(radius), float(mass)))

    @classmethod
    def tabulated(cls, values, lo=(0.0, 0.0), spacing=0.1):
        """Piecewise constant on square cells of side ``spacing`` starting at ``lo``."""
        v = np.array(values, dtype=float)
        if v.ndim != 2 or not np.all(np.isfinite(v)):
            raise DomainError("table must be a finite 2-d array")
        v.setflags(write=False)
        return cls("tabulated", (tuple(float(c) for c in lo), float(spacing)), v)

    # -- evaluation ---------------------------------------------------------
    def __call__(self, x1, x2):
        x1 = np.asarray(x1, dtype=float)
        x2 = np.asarray(x2, dtype=float)
        if self.kind == "box":
            (a1, a2), (b1, b2), h = self.params
            return np.where((x1 >= a1) & (x1 < b1) & (x2 >= a2) & (x2 < b2), h, 0.0)
        if self.kind == "gaussian":
            (c1, c2), var, mass = self.params
            r2 = (x1 - c1) ** 2 + (x2 - c2) ** 2
            out = mass * np.exp(-r2 / (2 * var)) / (2 * np.pi * var)
            return np.where(r2 <= (GAUSS_CUT ** 2) * var, out, 0.0)
        if self.kind == "ball":
            (c1, c2), r, mass = self.params
            inside = (x1 - c1) ** 2 + (x2 - c2) ** 2 <= r * r
            return np.where(inside, mass / (np.pi * r * r), 0.0)
        (l1, l2), h = self.params
        x1, x2 = np.broadcast_arrays(x1, x2)
        i = np.floor((x1 - l1) / h).astype(np.int64)
        j = np.floor((x2 - l2) / h).astype(np.int64)
        n1, n2 = self.table.shape
        ok = (i >= 0) & (i < n1) & (j >= 0) & (j < n2)
        out = np.zeros(x1.shape)
        out[ok] = self.table[i[ok], j[ok]]
        return out

    @property
    def support(self):
        """Bounding box ``((lo1, hi1), (lo2, hi2))`` outside which phi vanishes."""
        if self.kind == "box":
            (a1, a2), (b1, b2), _ = self.params
            return (a1, b1), (a2, b2)
        if self.kind in ("gaussian", "ball"):
            (c1, c2), s, _ = self.params
            r = GAUSS_CUT * math.sqrt(s) if self.kind == "gaussian" else s
            return (c1 - r, c1 + r), (c2 - r, c2 + r)
        (l1, l2), h = self.params
        n1, n2 = self.table.shape
        return (l1, l1 + n1 * h), (l2, l2 + n2 * h)

    @property
    def integral(self) -> float:
        if self.kind == "box":
            (a1, a2), (b1, b2), h = self.params
            return h * (b1 - a1) * (b2 - a2)
        if self.kind in ("gaussian", "ball"):
            return self.params[2]
        return float(self.table.sum()) * self.params[1] ** 2

    def autocorrelation(self, h1, h2):
        """``A(h) = int phi(x) phi(x + h) dx``."""
        h1 = np.abs(np.asarray(h1, dtype=float))
        h2 = np.abs(np.asarray(h2, dtype=float))
        if self.kind == "box":
            (a1, a2), (b1, b2), h = self.params
            return h * h * np.clip(b1 - a1 - h1, 0, None) * np.clip(b2 - a2 - h2, 0, None)
        if self.kind == "gaussian":
            _, var, mass = self.params
            return mass * mass * np.exp(-(h1 ** 2 + h2 ** 2) / (4 * var)) / (4 * np.pi * var)
        if self.kind == "ball":
            _, r, mass = self.params
            d = np.minimum(np.hypot(h1, h2), 2 * r)
            lens = 2 * r * r * np.arccos(d / (2 * r)) - 0.5 * d * np.sqrt(4 * r * r - d * d)
            return (mass / (np.pi * r * r)) ** 2 * lens
        # piecewise constant table: exact correlation on the grid of shifts,
        # bilinear in between
        (_, _), hs = self.params
        c = signal.correlate(self.table, self.table, mode="full", method="auto") * hs * hs
        n1, n2 = self.table.shape
        g1 = h1 / hs + (n1 - 1)
        g2 = h2 / hs + (n2 - 1)
        from scipy.ndimage import map_coordinates
        return map_coordinates(c, [np.atleast_1d(g1).ravel(), np.atleast_1d(g2).ravel()],
                               order=1, mode="constant").reshape(np.broadcast(h1, h2).shape)

    @property
    def radius(self) -> float:
        """Largest distance between two points of the support."""
        (a, b), (c, d) = self.support
        return math.hypot(b - a, d - c)

    def rescaled(self, a: float) -> "TestFunction":
        """Diffusive rescaling ``x -> phi(x / sqrt(a))``."""
        s = math.sqrt(a)
        if self.kind == "box":
            (a1, a2), (b1, b2), h = self.params
            return TestFunction.box((a1 * s, a2 * s), (b1 * s, b2 * s), h)
        if self.kind == "gaussian":
            (c1, c2), var, mass = self.params
            return TestFunction.gaussian((c1 * s, c2 * s), var * a, mass * a)
        if self.kind == "ball":
            (c1, c2), r, mass = self.params
            return TestFunction.ball((c1 * s, c2 * s), r * s, mass * a)
        (l1, l2), h = self.params
        return TestFunction.tabulated(self.table, (l1 * s, l2 * s), h * s)

    def to_dict(self):
        d = {"kind": self.kind, "params": _plain(self.params)}
        if self.table is not None:
            d["table"] = self.table.tolist()
        return d

    @classmethod
    def from_dict(cls, d):
        k = d["kind"]
        p = d.get("params", {})
        if isinstance(p, dict):
            if k == "box":
                return cls.box(**p)
            if k == "gaussian":
                return cls.gaussian(**p)
            if k == "ball":
                return cls.ball(**p)
            return cls.tabulated(d["table"], **p)
        if k == "tabulated":
            return cls.tabulated(d["table"], *p)
        return getattr(cls, k)(*p)


def _plain(x):
    if isinstance(x, tuple):
        return [_plain(v) for v in x]
    return x
