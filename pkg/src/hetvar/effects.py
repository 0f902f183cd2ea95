"""Study-level log-odds-ratio estimation from 2x2 tables.

Each study reports event counts ``x`` out of ``n`` subjects in a Treatment
and a Control arm.  Tables are continuity-corrected according to an
:class:`AdjustmentPolicy`, after which the log-odds-ratio, its delta-method
variance and the unconditional-variance multiplier ``C_i`` are computed.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import expit, logit
from scipy.stats import binom


class AdjustmentPolicy(enum.Enum):
    """When to add 1/2 to the four cells of a table."""

    ONLY = "only"
    ALWAYS = "always"

    @classmethod
    def parse(cls, value: "str | AdjustmentPolicy") -> "AdjustmentPolicy":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ValueError(f"unknown adjustment policy {value!r}; expected 'only' or 'always'") from None


@dataclass(frozen=True)
class Study2x2:
    """Counts for one study.  After adjustment the counts may be half-integers."""

    x_t: float
    n_t: float
    x_c: float
    n_c: float
    adjusted: bool = False

    def __post_init__(self):
        for x, n, arm in ((self.x_t, self.n_t, "treatment"), (self.x_c, self.n_c, "control")):
            if not n > 0:
                raise ValueError(f"{arm} arm size must be positive, got {n}")
            if not 0 <= x <= n:
                raise ValueError(f"{arm} events {x} outside [0, {n}]")

    @property
    def is_double_zero(self) -> bool:
        return self.x_t == 0 and self.x_c == 0

    @property
    def is_double_n(self) -> bool:
        return self.x_t == self.n_t and self.x_c == self.n_c

    @property
    def has_zero_cell(self) -> bool:
        return min(self.x_t, self.n_t - self.x_t, self.x_c, self.n_c - self.x_c) == 0

    @property
    def ess(self) -> float:
        """Effective sample size n_C n_T / (n_C + n_T)."""
        return self.n_t * self.n_c / (self.n_t + self.n_c)

    def swapped(self) -> "Study2x2":
        return replace(self, x_t=self.x_c, n_t=self.n_c, x_c=self.x_t, n_c=self.n_t)


@dataclass(frozen=True)
class PitEstimationMode:
    """How the treatment-arm probability entering ``C_i`` is estimated.

    ``theta_overall is None`` is the naive mode (use the study's own
    adjusted p_T).  A finite ``theta_overall`` gives the model-based mode,
    p_T = expit(logit(p_C) + theta_overall).
    """

    theta_overall: float | None = None

    def __post_init__(self):
        if self.theta_overall is not None and not np.isfinite(self.theta_overall):
            raise ValueError("model-based mode needs a finite overall LOR")

    @property
    def is_naive(self) -> bool:
        return self.theta_overall is None

    @property
    def label(self) -> str:
        return "naive" if self.is_naive else "model"


NAIVE = PitEstimationMode()


def model_based(theta_overall: float) -> PitEstimationMode:
    return PitEstimationMode(float(theta_overall))


@dataclass(frozen=True)
class EffectEstimate:
    theta_hat: float
    v2_hat: float
    c_mult: float
    p_t_hat: float
    p_c_hat: float


def adjust_counts(raw: Study2x2, policy: AdjustmentPolicy | str) -> Study2x2:
    """Apply the 1/2 continuity correction under ``policy``.

    Double-zero and double-n tables are rejected; they have to be dropped
    before analysis.
    """
    policy = AdjustmentPolicy.parse(policy)
    if raw.is_double_zero:
        raise ValueError("double-zero study must be discarded before adjustment")
    if raw.is_double_n:
        raise ValueError("double-n study must be discarded before adjustment")
    if raw.adjusted:
        return raw
    if policy is AdjustmentPolicy.ALWAYS or raw.has_zero_cell:
        return Study2x2(raw.x_t + 0.5, raw.n_t + 1, raw.x_c + 0.5, raw.n_c + 1, adjusted=True)
    return raw


def c_multiplier(p_star, n_t):
    """Unconditional-variance multiplier 1 + ([p(1-p)]^-1 - 2) / (2 n_T)."""
    p_star = np.asarray(p_star, dtype=float)
    return 1.0 + (1.0 / (p_star * (1.0 - p_star)) - 2.0) / (2.0 * np.asarray(n_t, dtype=float))


def lor_and_variance(x_t, n_t, x_c, n_c):
    """Vectorised LOR and delta-method variance on (already adjusted) counts."""
    p_t = np.asarray(x_t, dtype=float) / n_t
    p_c = np.asarray(x_c, dtype=float) / n_c
    with np.errstate(divide="ignore", invalid="ignore"):
        # difference of logits: swapping arms negates theta exactly
        theta = logit(p_t) - logit(p_c)
        v2 = 1.0 / (n_t * p_t * (1 - p_t)) + 1.0 / (n_c * p_c * (1 - p_c))
    return theta, v2, p_t, p_c


def estimate_effect(s: Study2x2, mode: PitEstimationMode = NAIVE) -> EffectEstimate:
    """LOR, conditional variance and ``C_i`` for one adjusted study."""
    theta, v2, p_t, p_c = (float(a) for a in lor_and_variance(s.x_t, s.n_t, s.x_c, s.n_c))
    if not (np.isfinite(theta) and np.isfinite(v2)):
        raise ValueError(f"non-finite LOR for {s}; an unadjusted zero cell reached estimation")
    p_star = p_t if mode.is_naive else float(expit(logit(p_c) + mode.theta_overall))
    return EffectEstimate(theta, v2, float(c_multiplier(p_star, s.n_t)), p_t, p_c)


def exact_lor_moments(n_t: int, n_c: int, p_t: float, p_c: float,
                      policy: AdjustmentPolicy | str = AdjustmentPolicy.ALWAYS):
    """Exact mean and variance of the LOR estimator over the binomial support.

    Every outcome (X_T, X_C) in {0..n_t} x {0..n_c} is enumerated.  Under
    ``ALWAYS`` each table gets p = (X + 1/2)/(n + 1); under ``ONLY`` the
    correction is applied only to tables with a zero cell, so that the
    remaining tables use the ML estimate X/n.
    """
    if n_t < 1 or n_c < 1:
        raise ValueError("arm sizes must be at least 1")
    if not (0 < p_t < 1 and 0 < p_c < 1):
        raise ValueError("probabilities must lie in (0, 1)")
    policy = AdjustmentPolicy.parse(policy)

    xt = np.arange(n_t + 1, dtype=float)[:, None]
    xc = np.arange(n_c + 1, dtype=float)[None, :]
    prob = binom.pmf(xt, n_t, p_t) * binom.pmf(xc, n_c, p_c)

    if policy is AdjustmentPolicy.ALWAYS:
        add = np.ones_like(prob)
    else:
        zero = (xt == 0) | (xt == n_t) | (xc == 0) | (xc == n_c)
        add = zero.astype(float)
    theta, _, _, _ = lor_and_variance(xt + 0.5 * add, n_t + add, xc + 0.5 * add, n_c + add)
    mean = float(np.sum(prob * theta))
    var = float(np.sum(prob * (theta - mean) ** 2))
    return mean, var
