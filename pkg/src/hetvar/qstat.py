"""Meta-analytic samples, weights and Cochran's Q."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import expit, logit

from .effects import (
    NAIVE,
    AdjustmentPolicy,
    PitEstimationMode,
    Study2x2,
    adjust_counts,
    c_multiplier,
    lor_and_variance,
    model_based,
)


@dataclass(frozen=True, eq=False)
class MetaSample:
    """K studies reduced to the quantities every estimator needs.

    Arrays are aligned by study.  ``n_t`` is the (possibly adjusted)
    treatment-arm size used in ``C_i``; ``ess`` is the effective sample size
    from the raw arm sizes.
    """

    theta: np.ndarray
    v2: np.ndarray
    ess: np.ndarray
    p_t: np.ndarray
    p_c: np.ndarray
    n_t: np.ndarray
    policy: AdjustmentPolicy | None = None

    def __post_init__(self):
        arrays = [np.asarray(a, dtype=float) for a in
                  (self.theta, self.v2, self.ess, self.p_t, self.p_c, self.n_t)]
        if len({a.shape for a in arrays}) != 1 or arrays[0].ndim != 1:
            raise ValueError("MetaSample arrays must be 1-d and of equal length")
        if arrays[0].size < 2:
            raise ValueError("a MetaSample needs at least 2 studies")
        if not np.all(np.isfinite(arrays[0])):
            raise ValueError("study effects must be finite")
        if not (np.all(arrays[1] > 0) and np.all(arrays[2] > 0)):
            raise ValueError("variances and effective sample sizes must be positive")
        for name, a in zip(("theta", "v2", "ess", "p_t", "p_c", "n_t"), arrays):
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @property
    def k(self) -> int:
        return self.theta.size

    @classmethod
    def from_tables(cls, tables: Sequence[Study2x2], policy: AdjustmentPolicy | str) -> "MetaSample":
        """Adjust raw tables under ``policy`` and estimate per-study effects."""
        policy = AdjustmentPolicy.parse(policy)
        ess = np.array([t.ess for t in tables])
        adj = [adjust_counts(t, policy) for t in tables]
        return cls._from_counts(
            np.array([t.x_t for t in adj]), np.array([t.n_t for t in adj]),
            np.array([t.x_c for t in adj]), np.array([t.n_c for t in adj]), ess, policy)

    @classmethod
    def from_counts(cls, x_t, n_t, x_c, n_c, policy: AdjustmentPolicy | str) -> "MetaSample":
        """Vectorised :meth:`from_tables` for integer count arrays (no double-zero/double-n rows)."""
        policy = AdjustmentPolicy.parse(policy)
        x_t, n_t, x_c, n_c = (np.asarray(a, dtype=float) for a in (x_t, n_t, x_c, n_c))
        if np.any((x_t == 0) & (x_c == 0)) or np.any((x_t == n_t) & (x_c == n_c)):
            raise ValueError("double-zero and double-n studies must be discarded first")
        ess = n_t * n_c / (n_t + n_c)
        if policy is AdjustmentPolicy.ALWAYS:
            add = np.ones_like(x_t)
        else:
            add = ((x_t == 0) | (x_t == n_t) | (x_c == 0) | (x_c == n_c)).astype(float)
        return cls._from_counts(x_t + 0.5 * add, n_t + add, x_c + 0.5 * add, n_c + add, ess, policy)

    @classmethod
    def _from_counts(cls, x_t, n_t, x_c, n_c, ess, policy):
        theta, v2, p_t, p_c = lor_and_variance(x_t, n_t, x_c, n_c)
        return cls(theta, v2, ess, p_t, p_c, n_t, policy)

    @classmethod
    def from_effects(cls, theta, v2, ess=None, c_mult=None) -> "MetaSample":
        """Build a sample straight from effects and variances (no 2x2 tables).

        ``c_mult`` fixes the naive multipliers by backing out a treatment
        probability; the model-based mode is then unavailable in a
        meaningful sense.  Mostly useful for tests and synthetic fixtures.
        """
        theta = np.asarray(theta, dtype=float)
        v2 = np.asarray(v2, dtype=float)
        ess = np.ones_like(theta) if ess is None else np.asarray(ess, dtype=float)
        n_t = np.full_like(theta, 1e12)
        p_t = np.full_like(theta, 0.5)
        if c_mult is not None:
            # choose n_T with p_T = 1/2 so that 1 + 1/n_T = C
            c = np.broadcast_to(np.asarray(c_mult, dtype=float), theta.shape)
            if np.any(c <= 1):
                raise ValueError("c_mult must exceed 1")
            n_t = 1.0 / (c - 1.0)
        return cls(theta, v2, ess, p_t, np.full_like(theta, 0.5), n_t)

    def c_mult(self, mode: PitEstimationMode = NAIVE) -> np.ndarray:
        if mode.is_naive:
            p_star = self.p_t
        else:
            p_star = expit(logit(self.p_c) + mode.theta_overall)
        return c_multiplier(p_star, self.n_t)

    def model_mode(self) -> PitEstimationMode:
        """Model-based mode anchored at the ESS-weighted mean effect."""
        return model_based(weighted_mean(self, self.ess))

    def resolve_mode(self, mode: "PitEstimationMode | str") -> PitEstimationMode:
        if isinstance(mode, PitEstimationMode):
            return mode
        mode = str(mode).lower()
        if mode == "naive":
            return NAIVE
        if mode == "model":
            return self.model_mode()
        raise ValueError(f"unknown p_T estimation mode {mode!r}; expected 'model' or 'naive'")


class WeightScheme(enum.Enum):
    ESS = "ess"
    IV = "iv"


def weights(sample: MetaSample, scheme: WeightScheme | str = WeightScheme.ESS, tau2: float = 0.0) -> np.ndarray:
    """Study weights: ESS, or inverse variance 1/(v_i^2 + tau2) (``tau2=0`` gives plain IV)."""
    scheme = WeightScheme(scheme)
    if scheme is WeightScheme.ESS:
        return np.array(sample.ess)
    if not (np.isfinite(tau2) and tau2 >= 0):
        raise ValueError(f"tau2 must be finite and non-negative, got {tau2}")
    return 1.0 / (sample.v2 + tau2)


def weighted_mean(sample: MetaSample, w) -> float:
    w = np.asarray(w, dtype=float)
    return float(np.dot(w, sample.theta) / w.sum())


def q_statistic(sample: MetaSample, w) -> float:
    """Cochran's Q = sum w_i (theta_i - mean_w)^2, computed in two passes."""
    w = np.asarray(w, dtype=float)
    if w.shape != sample.theta.shape:
        raise ValueError("weight vector length does not match the sample")
    dev = sample.theta - np.dot(w, sample.theta) / w.sum()
    return float(np.dot(w, dev * dev))


def q_generalized(sample: MetaSample, tau2: float) -> float:
    """Q with weights 1/(v_i^2 + tau2), the weighted mean re-estimated at each tau2."""
    return q_statistic(sample, weights(sample, WeightScheme.IV, tau2))


def qf_moment_terms(sample: MetaSample, mode: PitEstimationMode | None = None):
    """Return (Q_F/W, sum q(1-q) v^2, sum q(1-q) C) under ESS weights.

    With ``mode=None`` the last term uses C_i = 1 (conditional variances).
    """
    w = sample.ess
    W = w.sum()
    q = w / W
    h = q * (1.0 - q)
    c = np.ones_like(h) if mode is None else sample.c_mult(mode)
    return q_statistic(sample, w) / W, float(np.dot(h, sample.v2)), float(np.dot(h, c))


def expected_qf(sample: MetaSample, tau2: float, mode: PitEstimationMode = NAIVE) -> float:
    """First moment of Q_F: W sum q_i (1 - q_i) (v_i^2 + tau2 C_i)."""
    if tau2 < 0:
        raise ValueError("tau2 must be non-negative")
    w = sample.ess
    W = w.sum()
    q = w / W
    return float(W * np.dot(q * (1 - q), sample.v2 + tau2 * sample.c_mult(mode)))
