"""Confidence intervals for tau^2.

``fpc`` / ``fpu`` invert the quadratic-form distribution of Q_F,
{tau2 >= 0 : F(Q_F | tau2) in [alpha/2, 1 - alpha/2]}, with conditional or
unconditional study variances.  ``qp`` is the Q-profile interval and ``pl``
the ML profile-likelihood interval; both use inverse-variance weights.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.optimize import brentq, minimize_scalar
from scipy.stats import chi2

from ._roots import BRACKET_CAP, ProfileRoot, RootStatus, decreasing_root
from .effects import NAIVE, PitEstimationMode
from .estimators import UnsupportedEstimator
from .qstat import MetaSample, WeightScheme, q_generalized, q_statistic, weights
from .quadform import VarianceLaw, profile_root


@dataclass(frozen=True)
class TauInterval:
    lower: float
    upper: float
    level: float
    method_tag: str = ""
    degenerate: bool = False
    capped: bool = False
    converged: bool = True

    def __post_init__(self):
        if not 0 <= self.lower <= self.upper:
            raise ValueError(f"invalid interval [{self.lower}, {self.upper}]")
        if not 0 < self.level < 1:
            raise ValueError("level must lie in (0, 1)")
        if self.degenerate and self.upper != 0:
            raise ValueError("a degenerate interval must be {0}")

    def covers(self, tau2: float) -> bool:
        return self.lower <= tau2 <= self.upper


def _check(sample: MetaSample, level: float):
    if sample.k < 3:
        raise ValueError(f"interval needs at least 3 studies, got {sample.k}")
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")


def _tag(name: str, sample: MetaSample) -> str:
    return name if sample.policy is None else f"{name}-{sample.policy.value}"


def _from_roots(lower: ProfileRoot, upper: ProfileRoot, level: float, tag: str) -> TauInterval:
    """Assemble an interval from the roots for the upper and lower band edges.

    ``lower`` solves profile = upper band edge, ``upper`` solves profile =
    lower band edge.  A profile starting below the lower edge gives {0}.
    """
    if upper.status is RootStatus.BELOW_ZERO:
        return TauInterval(0.0, 0.0, level, tag, degenerate=True)
    capped = upper.status is RootStatus.ABOVE_CAP
    hi = BRACKET_CAP if capped else upper.value
    if lower.status is RootStatus.BELOW_ZERO:
        lo = 0.0
    elif lower.status is RootStatus.ABOVE_CAP:
        lo = BRACKET_CAP
    else:
        lo = lower.value
    return TauInterval(lo, max(lo, hi), level, tag, capped=capped)


def _farebrother(name, sample, law, level, mode=None):
    _check(sample, level)
    alpha = 1.0 - level
    w = weights(sample, WeightScheme.ESS)
    q = q_statistic(sample, w)
    lower = profile_root(sample, w, law, q, 1.0 - alpha / 2, mode=mode)
    upper = profile_root(sample, w, law, q, alpha / 2, mode=mode)
    return _from_roots(lower, upper, level, _tag(name, sample))


def fpc(sample: MetaSample, level: float = 0.95) -> TauInterval:
    """Q_F profile interval with conditional variances v_i^2 + tau2."""
    return _farebrother("fpc", sample, VarianceLaw.CONDITIONAL, level)


def fpu(sample: MetaSample, mode: PitEstimationMode | str = "model", level: float = 0.95) -> TauInterval:
    """Q_F profile interval with unconditional variances v_i^2 + tau2 C_i."""
    mode = sample.resolve_mode(mode)
    if mode.is_naive:
        return _farebrother("fpu-naive", sample, VarianceLaw.UNCONDITIONAL_NAIVE, level)
    return _farebrother("fpu-model", sample, VarianceLaw.UNCONDITIONAL_MODEL, level, mode)


def qp(sample: MetaSample, level: float = 0.95) -> TauInterval:
    """Q-profile interval: Q_IV(tau2) between the chi-square(K-1) quantiles."""
    _check(sample, level)
    alpha = 1.0 - level
    df = sample.k - 1
    q_hi = chi2.ppf(1.0 - alpha / 2, df)
    q_lo = chi2.ppf(alpha / 2, df)
    q0 = q_generalized(sample, 0.0)
    f = lambda t: q_generalized(sample, t)  # noqa: E731
    lower = decreasing_root(f, q_hi, f0=q0)
    upper = decreasing_root(f, q_lo, f0=q0)
    return _from_roots(lower, upper, level, _tag("qp", sample))


def ml_profile_loglik(sample: MetaSample, tau2: float) -> float:
    """ML log-likelihood with the overall effect profiled out (up to a constant)."""
    var = sample.v2 + tau2
    w = 1.0 / var
    mu = np.dot(w, sample.theta) / w.sum()
    return float(-0.5 * (np.sum(np.log(var)) + np.dot(w, (sample.theta - mu) ** 2)))


def ml_tau2(sample: MetaSample, cap: float = BRACKET_CAP) -> tuple[float, bool]:
    """Maximiser of the profile log-likelihood on [0, cap] and a convergence flag."""
    res = minimize_scalar(lambda t: -ml_profile_loglik(sample, t), bounds=(0.0, cap),
                          method="bounded", options={"xatol": 1e-10, "maxiter": 500})
    t = float(res.x)
    # the bounded search never lands exactly on the boundary
    if ml_profile_loglik(sample, 0.0) >= ml_profile_loglik(sample, t):
        t = 0.0
    return t, bool(res.success)


def pl(sample: MetaSample, level: float = 0.95) -> TauInterval:
    """Profile-likelihood interval {tau2 : 2 (l(ML) - l(tau2)) <= chi2_1(level)}."""
    _check(sample, level)
    tag = _tag("pl", sample)
    t_ml, ok = ml_tau2(sample)
    crit = chi2.ppf(level, 1)
    l_max = ml_profile_loglik(sample, t_ml)
    dev = lambda t: 2.0 * (l_max - ml_profile_loglik(sample, t)) - crit  # noqa: E731

    if t_ml == 0.0 or dev(0.0) <= 0:
        lower = 0.0
    else:
        lower = float(brentq(dev, 0.0, t_ml, xtol=1e-12))

    hi, capped = max(t_ml, 1.0), False
    while dev(hi) < 0:
        if hi >= BRACKET_CAP:
            capped = True
            break
        hi = min(2.0 * hi, BRACKET_CAP)
    upper = BRACKET_CAP if capped else float(brentq(dev, t_ml, hi, xtol=1e-12))
    return TauInterval(lower, upper, level, tag, capped=capped, converged=ok)


_REGISTRY: dict[str, Callable[[MetaSample, float], TauInterval]] = {}


def register_interval(name: str, fn: Callable[[MetaSample, float], TauInterval] | None) -> None:
    if fn is None:
        _REGISTRY.pop(name, None)
    else:
        _REGISTRY[name] = fn


def is_registered(name: str) -> bool:
    return name in _REGISTRY


def kd_interval(sample: MetaSample, level: float = 0.95) -> TauInterval:
    """Slot for the KD (corrected-moment gamma) interval; no implementation ships."""
    try:
        fn = _REGISTRY["kd"]
    except KeyError:
        raise UnsupportedEstimator("no implementation registered for interval 'kd'") from None
    return fn(sample, level)


INTERVALS: dict[str, Callable[[MetaSample, float], TauInterval]] = {
    "fpc": fpc,
    "fpu-model": lambda s, level: fpu(s, "model", level),
    "fpu-naive": lambda s, level: fpu(s, NAIVE, level),
    "qp": qp,
    "pl": pl,
    "kd": kd_interval,
}


def get_interval(name: str) -> Callable[[MetaSample, float], TauInterval]:
    try:
        return INTERVALS[name]
    except KeyError:
        raise ValueError(f"unknown interval {name!r}; choose from {', '.join(INTERVALS)}") from None

