"""Distribution of Q_F as a quadratic form in normal variables.

Under the random-effects model the centred effects are approximately
N(0, Sigma(tau2)) with Sigma diagonal, and Q_F = x' A x with
A = diag(w) - w w' / W.  Q_F is then distributed as sum_j lambda_j Z_j^2
where lambda_j are the eigenvalues of Sigma^1/2 A Sigma^1/2.

The CDF of a positive combination of chi-square(1) variables is evaluated
with Ruben's mixture-of-chi-squares series (the series behind Farebrother's
algorithm).  With beta = min lambda all mixture weights are positive, so the
neglected mass times the next chi-square CDF bounds the truncation error.
Interlacing keeps the nonzero eigenweights within [min w s^2, max w s^2],
so the series stays short for meta-analytic inputs.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammainc

from ._roots import BRACKET_CAP, BRACKET_HI, ProfileRoot, decreasing_root
from .effects import NAIVE, PitEstimationMode
from .qstat import MetaSample, WeightScheme, q_statistic, weights

DEFAULT_ACCURACY = 1e-8
EIGEN_DROP = 1e-12
MAX_SERIES_TERMS = 20000


class ConvergenceError(RuntimeError):
    """The CDF evaluation could not reach the requested accuracy."""


class VarianceLaw(enum.Enum):
    CONDITIONAL = "conditional"  # v_i^2 + tau2
    UNCONDITIONAL_MODEL = "unconditional-model"  # v_i^2 + tau2 C_i, model-based p_T
    UNCONDITIONAL_NAIVE = "unconditional-naive"  # v_i^2 + tau2 C_i, naive p_T


@dataclass(frozen=True, eq=False)
class QuadFormSpec:
    lambdas: np.ndarray
    accuracy: float = DEFAULT_ACCURACY

    def __post_init__(self):
        lam = np.asarray(self.lambdas, dtype=float).ravel()
        if lam.size == 0 or np.any(lam < 0) or not np.any(lam > 0) or not np.all(np.isfinite(lam)):
            raise ValueError("eigenweights must be finite, non-negative and not all zero")
        if not self.accuracy > 0:
            raise ValueError("accuracy must be positive")
        lam = np.sort(lam[lam > 0])
        lam.setflags(write=False)
        object.__setattr__(self, "lambdas", lam)

    @property
    def mean(self) -> float:
        return float(self.lambdas.sum())


def study_variances(sample: MetaSample, tau2: float, law: VarianceLaw,
                    mode: PitEstimationMode | None = None) -> np.ndarray:
    """Per-study variances of the effects at ``tau2`` under ``law``.

    For the model-based law, ``mode`` may carry a precomputed overall LOR;
    otherwise it is taken from the sample's ESS-weighted mean.
    """
    law = VarianceLaw(law)
    if law is VarianceLaw.CONDITIONAL:
        return sample.v2 + tau2
    if law is VarianceLaw.UNCONDITIONAL_NAIVE:
        return sample.v2 + tau2 * sample.c_mult(NAIVE)
    if mode is None or mode.is_naive:
        mode = sample.model_mode()
    return sample.v2 + tau2 * sample.c_mult(mode)


def eigenweights(w, s2) -> np.ndarray:
    """Eigenvalues of diag(s) A diag(s) for A = diag(w) - w w'/W, numerical zeros dropped."""
    w = np.asarray(w, dtype=float)
    s = np.sqrt(np.asarray(s2, dtype=float))
    ws = w * s
    m = np.diag(w * s * s) - np.outer(ws, ws) / w.sum()
    try:
        lam = np.linalg.eigvalsh(m)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceError(f"eigen-decomposition failed: {exc}") from exc
    top = lam.max()
    if not top > 0:
        raise ValueError("quadratic form is identically zero (all variances zero?)")
    lam = lam[lam > EIGEN_DROP * top]
    trace = np.dot(w, s * s) - np.dot(w * w, s * s) / w.sum()
    if abs(lam.sum() - trace) > 1e-10 * abs(trace):
        raise ConvergenceError(f"eigenweight sum {lam.sum()!r} disagrees with trace {trace!r}")
    return lam


def build_spec(sample: MetaSample, w, tau2: float, law: VarianceLaw | str,
               mode: PitEstimationMode | None = None,
               accuracy: float = DEFAULT_ACCURACY) -> QuadFormSpec:
    if tau2 < 0:
        raise ValueError("tau2 must be non-negative")
    return QuadFormSpec(eigenweights(w, study_variances(sample, tau2, VarianceLaw(law), mode)), accuracy)


def _ruben_cdf(lam: np.ndarray, q: float, accuracy: float, max_terms: int) -> float | None:
    """Ruben's series with beta = min lambda; None if ``max_terms`` is not enough."""
    m = lam.size
    beta = lam[0]
    c = 1.0 - beta / lam
    c = c[c > 0]
    y = 0.5 * q / beta
    a0 = math.exp(0.5 * float(np.sum(np.log(beta / lam))))
    half_m = 0.5 * m
    p = float(gammainc(half_m, y))
    total = a0 * p
    mass = a0
    if c.size == 0 or (1.0 - mass) * p <= accuracy:
        return total + 0.5 * (1.0 - mass) * p

    # chi-square(df+2) cdf from chi-square(df) by subtracting a Poisson-type term
    log_y = math.log(y) if y > 0 else -math.inf
    log_term = half_m * log_y - y - math.lgamma(half_m + 1.0)
    size = min(max_terms, 256) + 1
    a = np.empty(size)
    g = np.empty(size)
    a[0] = a0
    cp = np.ones_like(c)
    for k in range(1, max_terms + 1):
        if k == size:
            size = min(2 * size, max_terms + 1)
            a = np.resize(a, size)
            g = np.resize(g, size)
        cp *= c
        g[k] = 0.5 * cp.sum()
        a[k] = np.dot(g[k:0:-1], a[:k]) / k
        p -= math.exp(log_term)
        if p < 0.0:
            p = 0.0
        log_term += log_y - math.log(half_m + k)
        total += a[k] * p
        mass += a[k]
        # the neglected terms contribute between 0 and (1 - mass) * p
        if (1.0 - mass) * p <= accuracy:
            return total + 0.5 * (1.0 - mass) * p
    return None


def cdf(spec: QuadFormSpec, q: float) -> float:
    """P(sum lambda_j Z_j^2 <= q), absolute error at most ``spec.accuracy``."""
    if q < 0:
        raise ValueError("q must be non-negative")
    if q == 0:
        return 0.0
    val = _ruben_cdf(spec.lambdas, float(q), spec.accuracy, MAX_SERIES_TERMS)
    if val is None:
        raise ConvergenceError(
            f"series did not reach accuracy {spec.accuracy:g} within {MAX_SERIES_TERMS} terms "
            f"(eigenweight ratio {spec.lambdas[-1] / spec.lambdas[0]:.3g})")
    return min(max(val, 0.0), 1.0)


def cdf_at(sample: MetaSample, w, law: VarianceLaw, q_obs: float, tau2: float,
           mode: PitEstimationMode | None = None, accuracy: float = DEFAULT_ACCURACY) -> float:
    """F(q_obs | tau2) for the sample's quadratic form."""
    return cdf(build_spec(sample, w, tau2, law, mode, accuracy), q_obs)


def profile_root(sample: MetaSample, w, law: VarianceLaw | str, q_obs: float, target_prob: float,
                 bracket_hi: float = BRACKET_HI, cap: float = BRACKET_CAP,
                 mode: PitEstimationMode | None = None) -> ProfileRoot:
    """tau2 >= 0 solving F(q_obs | tau2) = target_prob.

    F is nonincreasing in tau2, so the root is unique when it exists.
    Status ``BELOW_ZERO`` means the root would be negative (callers truncate
    to 0); ``ABOVE_CAP`` means no root below ``cap``.
    """
    if not 0 < target_prob < 1:
        raise ValueError("target_prob must lie in (0, 1)")
    if q_obs < 0:
        raise ValueError("q_obs must be non-negative")
    law = VarianceLaw(law)
    if law is VarianceLaw.UNCONDITIONAL_MODEL and (mode is None or mode.is_naive):
        mode = sample.model_mode()
    w = np.asarray(w, dtype=float)
    return decreasing_root(lambda t: cdf_at(sample, w, law, q_obs, t, mode), target_prob,
                           bracket_hi=bracket_hi, cap=cap)


def qf_profile(sample: MetaSample, tau2: float, law: VarianceLaw | str = VarianceLaw.CONDITIONAL,
               mode: PitEstimationMode | None = None) -> float:
    """F(Q_F | tau2) at the sample's own ESS-weighted Q_F."""
    w = weights(sample, WeightScheme.ESS)
    return cdf_at(sample, w, VarianceLaw(law), q_statistic(sample, w), tau2, mode)
