import numpy as np
import pytest

from conftest import random_sample
from oracles import dl_oracle, grid_argmax, grid_root, ssc_oracle, ssu_oracle
from hetvar import estimators as est
from hetvar.effects import NAIVE, Study2x2
from hetvar.estimators import (
    TauPointResult,
    UnsupportedEstimator,
    dl,
    kd,
    mp,
    register_estimator,
    reml,
    reml_loglik,
    smc,
    smu,
    ssc,
    ssu,
)
from hetvar.qstat import MetaSample, WeightScheme, q_generalized, q_statistic, qf_moment_terms, weights
from hetvar.quadform import VarianceLaw, cdf_at
from hetvar.simulation import ConfigError, resolve_methods

# three studies with visible heterogeneity
FIXTURE_TABLES = [Study2x2(15, 50, 5, 50), Study2x2(8, 40, 9, 40), Study2x2(30, 60, 10, 60)]


@pytest.fixture
def fixture3():
    return MetaSample.from_tables(FIXTURE_TABLES, "always")


def test_result_invariants():
    with pytest.raises(ValueError):
        TauPointResult(-0.1)
    with pytest.raises(ValueError):
        TauPointResult(0.2, truncated=True)


@pytest.mark.parametrize("fn", [ssc, ssu, smc, smu, dl, mp, reml])
def test_equal_effects_truncate(fn):
    s = MetaSample.from_tables([Study2x2(5, 20, 3, 20)] * 4, "only")
    r = fn(s)
    assert r.tau2_hat == 0.0
    if fn is not reml:
        assert r.truncated


def test_needs_three_studies():
    s = MetaSample.from_effects([0.0, 1.0], [0.1, 0.1])
    for fn in (ssc, dl, mp, smc):
        with pytest.raises(ValueError):
            fn(s)


def test_ssu_synthetic_construction():
    rng = np.random.default_rng(3)
    theta = rng.normal(size=6)
    ess = rng.uniform(5, 50, 6)
    c = rng.uniform(1.05, 1.6, 6)
    u = rng.uniform(0.5, 1.5, 6)
    probe = MetaSample.from_effects(theta, u, ess=ess, c_mult=c)
    qw, sum_hu, sum_hc = qf_moment_terms(probe, NAIVE)
    # scale the variances so the moment equation is solved by tau2 = 0.4
    scale = (qw - 0.4 * sum_hc) / sum_hu
    assert scale > 0
    s = MetaSample.from_effects(theta, u * scale, ess=ess, c_mult=c)
    assert ssu(s, NAIVE).tau2_hat == pytest.approx(0.4, abs=1e-10)


def test_closed_forms_match_oracles(rng):
    for _ in range(200):
        s = random_sample(rng)
        assert ssu(s, "model").tau2_hat == pytest.approx(ssu_oracle(s, model=True), rel=1e-12, abs=1e-300)
        assert ssu(s, "naive").tau2_hat == pytest.approx(ssu_oracle(s, model=False), rel=1e-12, abs=1e-300)
        assert ssc(s).tau2_hat == pytest.approx(ssc_oracle(s), rel=1e-12, abs=1e-300)
        assert dl(s).tau2_hat == pytest.approx(dl_oracle(s), rel=1e-12, abs=1e-300)


def test_ssu_never_exceeds_ssc(rng):
    for _ in range(1000):
        s = random_sample(rng)
        c = ssc(s).tau2_hat
        if c > 0:
            assert ssu(s, "model").tau2_hat <= c
            assert ssu(s, "naive").tau2_hat <= c


def test_ssc_ssu_gap_is_order_one_over_n():
    probs = [(0.6, 0.2), (0.3, 0.3), (0.5, 0.1), (0.4, 0.35), (0.7, 0.2)]
    gaps = []
    scales = [1, 2, 4, 8, 16, 32]
    for s in scales:
        n = 20 * s
        tables = [Study2x2(round(pt * n), n, round(pc * n), n) for pt, pc in probs]
        sample = MetaSample.from_tables(tables, "always")
        gaps.append(ssc(sample).tau2_hat - ssu(sample, "model").tau2_hat)
    assert all(g > 0 for g in gaps)
    assert all(b < a for a, b in zip(gaps, gaps[1:]))
    scaled = [g * s for g, s in zip(gaps, scales)]
    # s * gap settles to a finite limit; the shared numerator still grows at
    # small s as the v^2 terms vanish, so the approach is from below
    steps = np.diff(scaled)
    assert all(b < a for a, b in zip(steps, steps[1:]))
    assert scaled[-1] == pytest.approx(scaled[-2], rel=0.05)


def test_smc_smu_round_trip(rng):
    hits = 0
    while hits < 5:
        s = random_sample(rng, k_choices=(10,), tau2_max=3.0)
        w = weights(s, WeightScheme.ESS)
        q = q_statistic(s, w)
        for r, law, mode in ((smc(s), VarianceLaw.CONDITIONAL, None),
                             (smu(s, "model"), VarianceLaw.UNCONDITIONAL_MODEL, s.model_mode()),
                             (smu(s, NAIVE), VarianceLaw.UNCONDITIONAL_NAIVE, None)):
            if r.truncated:
                continue
            hits += 1
            assert cdf_at(s, w, law, q, r.tau2_hat, mode) == pytest.approx(0.5, abs=1e-6)


def test_median_estimators_match_grid(fixture3):
    s = fixture3
    w = weights(s, WeightScheme.ESS)
    q = q_statistic(s, w)
    mode = s.model_mode()
    for r, law, m in ((smc(s), VarianceLaw.CONDITIONAL, None),
                      (smu(s, "model"), VarianceLaw.UNCONDITIONAL_MODEL, mode),
                      (smu(s, "naive"), VarianceLaw.UNCONDITIONAL_NAIVE, None)):
        assert r.tau2_hat > 0
        ref = grid_root(lambda t: cdf_at(s, w, law, q, t, m), 0.5, hi=5.0)
        assert r.tau2_hat == pytest.approx(ref, abs=2e-4)


def test_median_estimator_method_tags(fixture3):
    assert smc(fixture3).method_tag == "smc-always"
    assert smu(fixture3, "naive").method_tag == "smu-naive-always"
    assert ssu(fixture3).method_tag == "ssu-model-always"


def test_dl_equal_variance_closed_form():
    theta = np.array([0.1, 0.9, -0.4, 1.3, 0.5])
    v = 0.05
    s = MetaSample.from_effects(theta, np.full(5, v))
    # with equal variances DL reduces to max(0, sample variance - v)
    assert dl(s).tau2_hat == pytest.approx(max(0.0, theta.var(ddof=1) - v), rel=1e-12)
    s_small = MetaSample.from_effects(theta * 0.1, np.full(5, v))
    assert dl(s_small).truncated


def test_mp_round_trip(rng):
    s = random_sample(rng, k_choices=(10,))
    target = q_generalized(s, 0.3)
    # the MP root search with K - 1 replaced by Q_gen(0.3)
    ref = est.decreasing_root(lambda t: q_generalized(s, t), target)
    assert ref.value == pytest.approx(0.3, abs=1e-6)


def test_mp_solves_moment_equation(rng):
    for _ in range(50):
        s = random_sample(rng)
        r = mp(s)
        if not r.truncated:
            assert q_generalized(s, r.tau2_hat) == pytest.approx(s.k - 1, abs=1e-4)
        else:
            assert q_generalized(s, 0.0) <= s.k - 1


def test_mp_matches_grid(fixture3):
    r = mp(fixture3)
    assert r.tau2_hat > 0
    ref = grid_root(lambda t: q_generalized(fixture3, t), fixture3.k - 1, hi=5.0)
    assert r.tau2_hat == pytest.approx(ref, abs=2e-4)


def test_reml_matches_grid_symmetric_fixture():
    s = MetaSample.from_effects([-0.8, 0.0, 0.8], [0.1, 0.1, 0.1])
    r = reml(s)
    assert r.converged
    ref = grid_argmax(lambda t: reml_loglik(s, t), 0.0, 5.0)
    assert r.tau2_hat == pytest.approx(ref, abs=1e-4)
    # equal variances: REML has the closed form sample variance - v
    assert r.tau2_hat == pytest.approx(0.64 - 0.1, abs=1e-7)


def test_reml_location_invariance(rng):
    for _ in range(20):
        s = random_sample(rng)
        shifted = MetaSample.from_effects(s.theta + 2.5, s.v2)
        base = MetaSample.from_effects(s.theta, s.v2)
        assert reml(shifted).tau2_hat == pytest.approx(reml(base).tau2_hat, abs=1e-8)


def test_reml_flags_non_convergence(rng):
    s = random_sample(rng, k_choices=(10,), tau2_max=2.0)
    r = reml(s, max_iter=1, tol=0.0)
    assert not r.converged and r.iterations == 1


def test_estimators_nonnegative(rng):
    for _ in range(100):
        s = random_sample(rng)
        for name, fn in est.ESTIMATORS.items():
            if name == "kd":
                continue
            r = fn(s)
            assert r.tau2_hat >= 0
            assert not r.truncated or r.tau2_hat == 0


def test_kd_slot():
    s = MetaSample.from_effects([0.0, 0.5, 1.0], [0.1, 0.1, 0.1])
    with pytest.raises(UnsupportedEstimator):
        kd(s)
    with pytest.raises(ConfigError, match="kd"):
        resolve_methods(["kd"])
    register_estimator("kd", lambda sample: TauPointResult(0.0, truncated=True, method_tag="kd"))
    try:
        assert kd(s).tau2_hat == 0.0
        assert resolve_methods(["kd"])[0].name == "kd"
    finally:
        register_estimator("kd", None)
    assert not est.is_registered("kd")


def test_unknown_estimator():
    with pytest.raises(ValueError, match="unknown estimator"):
        est.get_estimator("hedges")
