"""Estimators and confidence intervals for the heterogeneity variance of log-odds-ratios."""

from .effects import (
    NAIVE,
    AdjustmentPolicy,
    EffectEstimate,
    PitEstimationMode,
    Study2x2,
    adjust_counts,
    estimate_effect,
    exact_lor_moments,
    model_based,
)
from .estimators import (
    ESTIMATORS,
    TauPointResult,
    UnsupportedEstimator,
    dl,
    kd,
    mp,
    register_estimator,
    reml,
    smc,
    smu,
    ssc,
    ssu,
)
from .intervals import INTERVALS, TauInterval, fpc, fpu, kd_interval, pl, qp, register_interval
from .qstat import MetaSample, WeightScheme, expected_qf, q_generalized, q_statistic, weighted_mean, weights
from .quadform import ConvergenceError, QuadFormSpec, VarianceLaw, build_spec, cdf, profile_root
from .simulation import GridConfig, MetricsRow, ScenarioConfig, full_grid, generate_replicate, run_scenario

__version__ = "0.1.0"
