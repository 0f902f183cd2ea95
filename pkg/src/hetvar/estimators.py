"""Point estimators of the between-study variance tau^2.

Effective-sample-size (ESS) weighted estimators:

* ``ssc`` / ``ssu``: moment estimators equating Q_F to its expectation,
  with conditional (v_i^2 + tau2) or unconditional (v_i^2 + tau2 C_i)
  study variances.
* ``smc`` / ``smu``: median-unbiased estimators solving F(Q_F | tau2) = 1/2
  with the quadratic-form distribution of Q_F.

Inverse-variance comparators: ``dl``, ``mp`` and ``reml``.  A ``kd`` slot is
available through :func:`register_estimator`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ._roots import BRACKET_CAP, RootStatus, decreasing_root
from .effects import NAIVE, PitEstimationMode
from .qstat import MetaSample, WeightScheme, q_generalized, q_statistic, qf_moment_terms, weights
from .quadform import VarianceLaw, profile_root

REML_TOL = 1e-8
REML_MAX_ITER = 200


class UnsupportedEstimator(LookupError):
    """Raised when an estimator slot has no registered implementation."""


@dataclass(frozen=True)
class TauPointResult:
    tau2_hat: float
    truncated: bool = False
    iterations: int = 0
    method_tag: str = ""
    converged: bool = True
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not self.tau2_hat >= 0:
            raise ValueError(f"tau2_hat must be non-negative, got {self.tau2_hat}")
        if self.truncated and self.tau2_hat != 0:
            raise ValueError("a truncated estimate must be 0")


def _require_k(sample: MetaSample, k_min: int = 3):
    if sample.k < k_min:
        raise ValueError(f"estimator needs at least {k_min} studies, got {sample.k}")


def _tag(name: str, sample: MetaSample) -> str:
    return name if sample.policy is None else f"{name}-{sample.policy.value}"


def _moment(name, sample, mode):
    _require_k(sample)
    qw, sum_hv, sum_hc = qf_moment_terms(sample, mode)
    raw = (qw - sum_hv) / sum_hc
    if raw <= 0:
        return TauPointResult(0.0, truncated=True, method_tag=_tag(name, sample))
    return TauPointResult(float(raw), method_tag=_tag(name, sample))


def ssu(sample: MetaSample, mode: PitEstimationMode | str = "model") -> TauPointResult:
    """Moment estimator from E(Q_F) with unconditional variances v_i^2 + tau2 C_i."""
    mode = sample.resolve_mode(mode)
    return _moment(f"ssu-{mode.label}", sample, mode)


def ssc(sample: MetaSample) -> TauPointResult:
    """Moment estimator from E(Q_F) with conditional variances (C_i = 1)."""
    return _moment("ssc", sample, None)


def _median(name, sample, law, mode=None):
    _require_k(sample)
    w = weights(sample, WeightScheme.ESS)
    q = q_statistic(sample, w)
    root = profile_root(sample, w, law, q, 0.5, mode=mode)
    tag = _tag(name, sample)
    if root.status is RootStatus.BELOW_ZERO:
        return TauPointResult(0.0, truncated=True, iterations=root.evaluations, method_tag=tag)
    if root.status is RootStatus.ABOVE_CAP:
        return TauPointResult(BRACKET_CAP, iterations=root.evaluations, method_tag=tag, converged=False)
    return TauPointResult(root.value, iterations=root.evaluations, method_tag=tag)


def smc(sample: MetaSample) -> TauPointResult:
    """Median-unbiased estimator with conditional variances in the Q_F distribution."""
    return _median("smc", sample, VarianceLaw.CONDITIONAL)


def smu(sample: MetaSample, mode: PitEstimationMode | str = "model") -> TauPointResult:
    """Median-unbiased estimator with unconditional variances in the Q_F distribution."""
    mode = sample.resolve_mode(mode)
    if mode.is_naive:
        return _median("smu-naive", sample, VarianceLaw.UNCONDITIONAL_NAIVE)
    return _median("smu-model", sample, VarianceLaw.UNCONDITIONAL_MODEL, mode)


def dl(sample: MetaSample) -> TauPointResult:
    """DerSimonian-Laird: max(0, (Q_IV - (K-1)) / (S1 - S2/S1))."""
    _require_k(sample)
    w = 1.0 / sample.v2
    s1 = w.sum()
    raw = (q_statistic(sample, w) - (sample.k - 1)) / (s1 - np.dot(w, w) / s1)
    if raw <= 0:
        return TauPointResult(0.0, truncated=True, method_tag=_tag("dl", sample))
    return TauPointResult(float(raw), method_tag=_tag("dl", sample))


def mp(sample: MetaSample) -> TauPointResult:
    """Mandel-Paule: root of the generalized Q_IV(tau2) = K - 1."""
    _require_k(sample)
    tag = _tag("mp", sample)
    root = decreasing_root(lambda t: q_generalized(sample, t), sample.k - 1.0, cap=1e6)
    if root.status is RootStatus.BELOW_ZERO:
        return TauPointResult(0.0, truncated=True, iterations=root.evaluations, method_tag=tag)
    if root.status is RootStatus.ABOVE_CAP:
        return TauPointResult(1e6, iterations=root.evaluations, method_tag=tag, converged=False)
    return TauPointResult(root.value, iterations=root.evaluations, method_tag=tag)


def reml_loglik(sample: MetaSample, tau2: float) -> float:
    """Restricted log-likelihood of the effects (up to a constant)."""
    var = sample.v2 + tau2
    w = 1.0 / var
    mu = np.dot(w, sample.theta) / w.sum()
    return float(-0.5 * (np.sum(np.log(var)) + np.log(w.sum()) + np.dot(w, (sample.theta - mu) ** 2)))


def reml(sample: MetaSample, tol: float = REML_TOL, max_iter: int = REML_MAX_ITER) -> TauPointResult:
    """REML by the fixed-point update projected onto tau2 >= 0.

    tau2 <- sum w^2 ((y - mu)^2 - v^2) / sum w^2 + 1 / sum w, with
    w = 1 / (v^2 + tau2), starting from DerSimonian-Laird.
    """
    _require_k(sample)
    tag = _tag("reml", sample)
    y, v2 = sample.theta, sample.v2
    tau2 = dl(sample).tau2_hat
    for it in range(1, max_iter + 1):
        w = 1.0 / (v2 + tau2)
        mu = np.dot(w, y) / w.sum()
        w2 = w * w
        new = max(0.0, float(np.dot(w2, (y - mu) ** 2 - v2) / w2.sum() + 1.0 / w.sum()))
        done = abs(new - tau2) < tol
        tau2 = new
        if done:
            return TauPointResult(tau2, truncated=tau2 == 0.0, iterations=it, method_tag=tag)
    return TauPointResult(tau2, truncated=tau2 == 0.0, iterations=max_iter, method_tag=tag, converged=False)


_REGISTRY: dict[str, Callable[[MetaSample], TauPointResult]] = {}


def register_estimator(name: str, fn: Callable[[MetaSample], TauPointResult] | None) -> None:
    """Register (or with ``None`` remove) an extension estimator such as ``kd``."""
    if fn is None:
        _REGISTRY.pop(name, None)
    else:
        _REGISTRY[name] = fn


def is_registered(name: str) -> bool:
    return name in _REGISTRY


def kd(sample: MetaSample) -> TauPointResult:
    """Slot for the KD (corrected-moment gamma) estimator; no implementation ships."""
    try:
        fn = _REGISTRY["kd"]
    except KeyError:
        raise UnsupportedEstimator("no implementation registered for estimator 'kd'") from None
    return fn(sample)


# identifier -> callable taking a MetaSample
ESTIMATORS: dict[str, Callable[[MetaSample], TauPointResult]] = {
    "dl": dl,
    "reml": reml,
    "mp": mp,
    "ssc": ssc,
    "ssu-model": lambda s: ssu(s, "model"),
    "ssu-naive": lambda s: ssu(s, NAIVE),
    "smc": smc,
    "smu-model": lambda s: smu(s, "model"),
    "smu-naive": lambda s: smu(s, NAIVE),
    "kd": kd,
}


def get_estimator(name: str) -> Callable[[MetaSample], TauPointResult]:
    try:
        return ESTIMATORS[name]
    except KeyError:
        raise ValueError(f"unknown estimator {name!r}; choose from {', '.join(ESTIMATORS)}") from None
