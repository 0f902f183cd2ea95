"""Bracketed root finding for monotone decreasing profiles in tau^2."""

from __future__ import annotations

import enum
from typing import Callable, NamedTuple

from scipy.optimize import brentq

BRACKET_HI = 5.0
BRACKET_CAP = 100.0
XTOL = 1e-10


class RootStatus(enum.Enum):
    FOUND = "found"
    BELOW_ZERO = "below_zero"  # profile already under the target at tau2 = 0
    ABOVE_CAP = "above_cap"  # profile still above the target at the bracket cap


class ProfileRoot(NamedTuple):
    value: float | None
    status: RootStatus
    evaluations: int = 0

    @property
    def found(self) -> bool:
        return self.status is RootStatus.FOUND


def decreasing_root(f: Callable[[float], float], target: float, *, f0: float | None = None,
                    bracket_hi: float = BRACKET_HI, cap: float = BRACKET_CAP,
                    xtol: float = XTOL) -> ProfileRoot:
    """Solve ``f(t) = target`` for t >= 0 with ``f`` nonincreasing.

    The upper bracket starts at ``bracket_hi`` and doubles up to ``cap``.
    """
    calls = 0

    def g(t):
        nonlocal calls
        calls += 1
        return f(t) - target

    g0 = g(0.0) if f0 is None else f0 - target
    if g0 < 0:
        return ProfileRoot(None, RootStatus.BELOW_ZERO, calls)
    if g0 == 0:
        return ProfileRoot(0.0, RootStatus.FOUND, calls)
    lo, hi = 0.0, min(bracket_hi, cap)
    ghi = g(hi)
    while ghi > 0:
        if hi >= cap:
            return ProfileRoot(None, RootStatus.ABOVE_CAP, calls)
        lo, hi = hi, min(2.0 * hi, cap)
        ghi = g(hi)
    if ghi == 0:
        return ProfileRoot(hi, RootStatus.FOUND, calls)
    root = brentq(g, lo, hi, xtol=xtol, rtol=8.9e-16, maxiter=200)
    return ProfileRoot(float(root), RootStatus.FOUND, calls)
