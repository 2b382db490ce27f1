"""Expected overlap and the inverse-temperature schedules beta_N."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .lattice import (DisorderLaw, DomainError, UsageError, WalkKernel,
                      _return_table, sigma2_pair)

EULER_GAMMA = 0.57721566490153286061


def overlap_sum(kernel: WalkKernel, N: int) -> float:
    """Expected number of meetings ``R_N = sum_{n=1}^{N} q_n`` of two walks."""
    if N < 1:
        raise DomainError("N must be >= 1")
    return float(_overlap_cumsum(kernel, int(N))[N])


_OV_CACHE: dict = {}


def _overlap_cumsum(kernel, N):
    c = _OV_CACHE.get(kernel)
    if c is None or c.shape[0] <= N:
        q = _return_table(kernel, N).copy()
        q[0] = 0.0
        c = np.cumsum(q)
        _OV_CACHE[kernel] = c
    return c


_REGIMES = ("fixed", "subcritical", "critical")
_TUNINGS = ("beta", "sigma2")


@dataclass(frozen=True)
class CouplingSchedule:
    """Map from the scale ``N`` to an inverse temperature.

    regime ``fixed``: ``value`` is beta itself.
    regime ``subcritical``: ``value`` is the reduced coupling ``b >= 0``
    (``b < 1`` is the subcritical phase proper).
    regime ``critical``: ``value`` is the window parameter ``theta``.

    ``tuning`` selects what the window prescribes.  With ``"beta"`` the square
    of beta is set to ``(b^2 or 1 + theta/log N) / R_N``.  With ``"sigma2"``
    the same right-hand side is imposed on the pair weight
    ``sigma2_pair(law, beta)`` and beta is recovered by root finding; this
    removes the law-dependent constant shift of theta coming from the
    fourth-order terms of the pair weight.
    """

    regime: str
    value: float
    kernel: WalkKernel = field(default_factory=WalkKernel.simple)
    law: DisorderLaw = field(default_factory=DisorderLaw.gaussian)
    tuning: str = "beta"

    def __post_init__(self):
        if self.regime not in _REGIMES:
            raise DomainError(f"unknown regime {self.regime!r}")
        if self.tuning not in _TUNINGS:
            raise DomainError(f"unknown tuning {self.tuning!r}")
        # reduced couplings at or above 1 are allowed: the phase-transition
        # experiment needs them, and b = 1 coincides with the window centre
        if self.regime == "subcritical" and not (0.0 <= self.value < math.inf):
            raise DomainError("reduced coupling must be a finite number >= 0")
        if self.regime == "fixed" and not 0.0 <= self.value < self.law.beta_max:
            raise DomainError("fixed beta outside the admissible range of the law")

    @classmethod
    def fixed(cls, beta, **kw):
        return cls("fixed", float(beta), **kw)

    @classmethod
    def subcritical(cls, b, **kw):
        return cls("subcritical", float(b), **kw)

    @classmethod
    def critical(cls, theta, **kw):
        return cls("critical", float(theta), **kw)

    def target(self, N: int) -> float:
        """Right-hand side of the window relation at scale ``N``."""
        R = overlap_sum(self.kernel, N)
        if self.regime == "subcritical":
            return self.value ** 2 / R
        if self.regime == "critical":
            if N < 2:
                raise DomainError("critical window needs N >= 2")
            t = (1.0 + self.value / math.log(N)) / R
            if t < 0:
                raise DomainError(f"theta = {self.value} too negative for N = {N}; "
                                  "use a larger N")
            return t
        raise UsageError("fixed schedule has no window")

    def beta(self, N: int) -> float:
        if self.regime == "fixed":
            return self.value
        t = self.target(int(N))
        if self.tuning == "beta":
            b = math.sqrt(t)
        else:
            b = _invert_sigma2(self.law, t)
        if b >= self.law.beta_max / 2.0 and self.law.kind == "shifted_exponential":
            raise DomainError("coupling beyond the second-moment range of the law")
        return b

    def sigma2(self, N: int) -> float:
        return sigma2_pair(self.law, self.beta(N))

    def to_dict(self):
        return {"regime": self.regime, "value": self.value, "kernel": self.kernel.to_dict(),
                "law": self.law.to_dict(), "tuning": self.tuning}


def _invert_sigma2(law, target):
    cap = law.beta_max / 2.0 * (1 - 1e-12)
    hi = min(1.0, cap)
    while sigma2_pair(law, hi) < target:
        if hi >= cap:
            raise DomainError("pair weight target not reachable for this law")
        hi = min(2.0 * hi, cap)
    return optimize.brentq(lambda b: sigma2_pair(law, b) - target, 0.0, hi,
                           xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)


def beta_subcritical(schedule: CouplingSchedule, N: int) -> float:
    """Inverse temperature of a subcritical schedule at scale ``N``."""
    if schedule.regime != "subcritical":
        raise UsageError("schedule is not subcritical")
    return schedule.beta(N)


def beta_critical(schedule: CouplingSchedule, N: int) -> float:
    """Inverse temperature of a critical-window schedule at scale ``N``."""
    if schedule.regime != "critical":
        raise UsageError("schedule is not critical")
    return schedule.beta(N)


def resolve_beta(coupling, scale: int) -> float:
    """Accept a bare float or a schedule evaluated at ``scale``."""
    if isinstance(coupling, CouplingSchedule):
        return coupling.beta(scale)
    b = float(coupling)
    if b < 0:
        raise DomainError("beta must be nonnegative")
    return b
