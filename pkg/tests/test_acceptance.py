"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Simulation results are computed once per module and shared with the
accounting/determinism check.
"""

import math
import time

import numpy as np
import pytest
from scipy.stats import chi2

from conftest import ACCEPTANCE_LINES, random_sample
from oracles import dl_oracle, grid_argmax, grid_root, mc_quadform_cdf, ssc_oracle, ssu_oracle
from hetvar import estimators as est
from hetvar import intervals as iv
from hetvar.effects import exact_lor_moments
from hetvar.qstat import WeightScheme, q_generalized, q_statistic, weights
from hetvar.quadform import QuadFormSpec, VarianceLaw, cdf, cdf_at
from hetvar.simulation import ScenarioConfig, run_scenario, write_rows

SEED = 1
REPS = 2000
POINT_METHODS = [n for n in est.ESTIMATORS if n != "kd"]


def record(number, ok, detail):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} | {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


# ---------------------------------------------------------------- criterion 1

def test_criterion_1_quadform_cdf_exactness():
    t0 = time.perf_counter()
    worst_chi = 0.0
    for m in (1, 2, 4, 9, 29):
        spec = QuadFormSpec(np.ones(m))
        for p in np.linspace(0.01, 0.99, 50):
            q = chi2.ppf(p, m)
            worst_chi = max(worst_chi, abs(cdf(spec, q) - chi2.cdf(q, m)))
    rng = np.random.default_rng(SEED)
    worst_mc = 0.0
    for i in range(20):
        lam = rng.uniform(0.05, 5.0, int(rng.integers(2, 11)))
        q = float(rng.uniform(0.3, 1.7) * lam.sum())
        worst_mc = max(worst_mc, abs(cdf(QuadFormSpec(lam), q) - mc_quadform_cdf(lam, q, seed=i)))
    elapsed = time.perf_counter() - t0
    ok = worst_chi <= 1e-8 and worst_mc <= 0.003 and elapsed < 30
    record(1, ok, f"max |F - chi2| = {worst_chi:.2e} (<= 1e-8), max |F - MC| = {worst_mc:.4f} (<= 0.003), "
                  f"{elapsed:.1f} s (< 30 s)")
    assert ok


# ---------------------------------------------------------------- criterion 2

def _grid_checks(s):
    """(name, library value, grid value) triples for one fixture; capped endpoints skipped."""
    out = []
    alpha = 0.05
    hi = 30.0
    w = weights(s, WeightScheme.ESS)
    q = q_statistic(s, w)
    model = s.model_mode()

    def root(g, target):
        return grid_root(g, target, hi=hi, coarse=0.05)

    out.append(("mp", est.mp(s).tau2_hat, root(lambda t: q_generalized(s, t), s.k - 1.0)))
    profiles = {
        "smc/fpc": (est.smc(s), iv.fpc(s), VarianceLaw.CONDITIONAL, None),
        "smu-model/fpu-model": (est.smu(s, "model"), iv.fpu(s, "model"), VarianceLaw.UNCONDITIONAL_MODEL, model),
        "smu-naive/fpu-naive": (est.smu(s, "naive"), iv.fpu(s, "naive"), VarianceLaw.UNCONDITIONAL_NAIVE, None),
    }
    for name, (point, ci, law, mode) in profiles.items():
        g = lambda t, law=law, mode=mode: cdf_at(s, w, law, q, t, mode)  # noqa: E731
        pname, iname = name.split("/")
        if point.tau2_hat < hi:
            out.append((pname, point.tau2_hat, root(g, 0.5)))
        out.append((iname + ".lower", ci.lower, root(g, 1 - alpha / 2)))
        if not ci.capped and ci.upper < hi:
            out.append((iname + ".upper", ci.upper, root(g, alpha / 2)))

    ci = iv.qp(s)
    gq = lambda t: q_generalized(s, t)  # noqa: E731
    out.append(("qp.lower", ci.lower, root(gq, chi2.ppf(1 - alpha / 2, s.k - 1))))
    if not ci.capped and ci.upper < hi:
        out.append(("qp.upper", ci.upper, root(gq, chi2.ppf(alpha / 2, s.k - 1))))

    ci = iv.pl(s)
    t_ml = grid_argmax(lambda t: iv.ml_profile_loglik(s, t), 0.0, hi)
    l_max = iv.ml_profile_loglik(s, t_ml)
    dev = lambda t: 2 * (l_max - iv.ml_profile_loglik(s, t))  # noqa: E731
    crit = chi2.ppf(0.95, 1)
    # deviance decreases on [0, t_ml]; the first crossing on the grid is the lower end
    lower = grid_root(dev, crit, hi=math.ceil(t_ml / 1e-2) * 1e-2 + 1e-2) if dev(0.0) > crit else 0.0
    out.append(("pl.lower", ci.lower, lower))
    if not ci.capped and ci.upper < hi:
        out.append(("pl.upper", ci.upper, t_ml + grid_root(lambda u: -dev(t_ml + u), -crit, hi=hi)))
    return out


def test_criterion_2_estimator_oracles():
    t0 = time.perf_counter()
    rng = np.random.default_rng(SEED)
    worst_rel = 0.0
    for _ in range(1000):
        s = random_sample(rng)
        for lib, ref in ((est.ssu(s, "model").tau2_hat, ssu_oracle(s, True)),
                         (est.ssu(s, "naive").tau2_hat, ssu_oracle(s, False)),
                         (est.ssc(s).tau2_hat, ssc_oracle(s)),
                         (est.dl(s).tau2_hat, dl_oracle(s))):
            if lib != ref:
                worst_rel = max(worst_rel, abs(lib - ref) / max(abs(ref), 1e-300))
    worst_grid, worst_name, checks = 0.0, "", 0
    for _ in range(20):
        s = random_sample(rng, k_choices=(3, 5, 10), tau2_max=1.0)
        for name, lib, ref in _grid_checks(s):
            checks += 1
            if abs(lib - ref) > worst_grid:
                worst_grid, worst_name = abs(lib - ref), name
    elapsed = time.perf_counter() - t0
    ok = worst_rel <= 1e-12 and worst_grid <= 2e-4 and elapsed < 120
    record(2, ok, f"closed forms max rel err {worst_rel:.1e} (<= 1e-12); grid oracles max abs err "
                  f"{worst_grid:.1e} at {worst_name or '-'} over {checks} checks (<= 2e-4); {elapsed:.1f} s (< 120 s)")
    assert ok


# ---------------------------------------------------------------- criterion 3

@pytest.mark.parametrize("theta", [0.0, 1.0])
def test_criterion_3_half_correction_bias(theta):
    p_c = 0.5
    p_t = 1.0 / (1.0 + math.exp(-(math.log(p_c / (1 - p_c)) + theta)))
    m_always, _ = exact_lor_moments(20, 20, p_t, p_c, "always")
    m_only, _ = exact_lor_moments(20, 20, p_t, p_c, "only")
    b_always, b_only = abs(m_always - theta), abs(m_only - theta)
    ok = b_always < b_only
    record(3, ok, f"theta={theta:g}: |bias| always {b_always:.3e} vs only {b_only:.3e} (strict <)")
    assert ok


# ---------------------------------------------------------- criteria 4 to 7

def _cells(k, sizes, p_c, tau2s):
    return [ScenarioConfig(k, sizes, p_c, 0.0, t, reps=REPS, seed=SEED) for t in tau2s]


CRITERIA = {
    4: dict(cells=_cells(5, "250", 0.1, (0.0, 0.5, 1.0)), estimators=["mp-only", "ssu-model", "ssc-always"]),
    5: dict(cells=_cells(10, "20", 0.2, (0.0,)), estimators=POINT_METHODS,
            policy={n: ["only", "always"] for n in POINT_METHODS}),
    6: dict(cells=_cells(10, "100", 0.5, (0.2, 0.6, 1.0)), estimators=["smc-always", "smu-model"]),
    7: dict(cells=_cells(10, "100", 0.2, (0.4,)), intervals=["fpc-only", "qp-only"]),
}


def simulate(number):
    spec = CRITERIA[number]
    rows = []
    for cell in spec["cells"]:
        rows += run_scenario(cell, spec.get("estimators", ()), spec.get("intervals", ()), spec.get("policy"))
    return rows


@pytest.fixture(scope="module")
def sim():
    cache = {}

    def get(number):
        if number not in cache:
            t0 = time.perf_counter()
            cache[number] = (simulate(number), time.perf_counter() - t0)
        return cache[number]
    return get


def _label(r):
    return f"{r.method}-{r.policy}@tau2={r.tau2:g}"


def test_criterion_4_bias_at_large_n(sim):
    rows, elapsed = sim(4)
    worst = max(rows, key=lambda r: abs(r.bias))
    ok = all(abs(r.bias) <= 0.06 for r in rows) and elapsed < 300
    record(4, ok, f"max |bias| {abs(worst.bias):.4f} ({_label(worst)}) over {len(rows)} rows (<= 0.06); "
                  f"{elapsed:.0f} s (< 300 s)")
    assert ok


def test_criterion_5_positive_bias_small_n(sim):
    rows, _ = sim(5)
    worst = min(rows, key=lambda r: r.bias)
    ok = all(r.bias > 0 for r in rows) and len(rows) == 2 * len(POINT_METHODS)
    record(5, ok, f"min bias {worst.bias:.4f} ({_label(worst)}) over {len(rows)} estimator/policy rows (> 0)")
    assert ok


def test_criterion_6_median_unbiased(sim):
    rows, _ = sim(6)
    worst = max(rows, key=lambda r: abs(r.median_bias))
    ok = all(abs(r.median_bias) <= 0.10 for r in rows)
    record(6, ok, f"max |median bias| {abs(worst.median_bias):.4f} ({_label(worst)}) (<= 0.10)")
    assert ok


def test_criterion_7_coverage(sim):
    rows, _ = sim(7)
    cov = {r.method: r.coverage for r in rows}
    ok = 0.93 <= cov["fpc"] <= 0.97 and 0.92 <= cov["qp"] <= 0.97
    record(7, ok, f"fpc-only coverage {cov['fpc']:.4f} in [0.93, 0.97]; qp-only {cov['qp']:.4f} in [0.92, 0.97]")
    assert ok


def test_criterion_8_accounting_and_determinism(sim, tmp_path):
    worst = 0.0
    n_rows = 0
    for number in CRITERIA:
        for r in sim(number)[0]:
            n_rows += 1
            assert r.effective_reps + r.discarded_reps == REPS
            if r.kind == "interval":
                worst = max(worst, abs(r.coverage + r.miss_left + r.miss_right - 1.0))
    # rerun the cheaper criteria from scratch and compare the CSV bytes
    same = True
    for number in (4, 7):
        first = tmp_path / f"c{number}_a.csv"
        second = tmp_path / f"c{number}_b.csv"
        write_rows(first, sim(number)[0])
        write_rows(second, simulate(number))
        same &= first.read_bytes() == second.read_bytes()
    ok = worst <= 1e-12 and same
    record(8, ok, f"max |coverage + miss_left + miss_right - 1| = {worst:.1e} over interval rows of "
                  f"{n_rows} rows; rerun CSV byte-identical: {same}")
    assert ok


# ---------------------------------------------------------------- criterion 9

def test_criterion_9_property_suite():
    t0 = time.perf_counter()
    rng = np.random.default_rng(SEED)
    fails = {"a": 0, "b": 0, "c": 0, "d": 0}
    grid = np.linspace(0.0, 2.0, 20)
    for _ in range(500):
        s = random_sample(rng, tau2_max=1.5)
        fails["a"] += sum(est.ESTIMATORS[n](s).tau2_hat < 0 for n in POINT_METHODS)
        c = est.ssc(s).tau2_hat
        if c > 0:
            fails["b"] += est.ssu(s, "model").tau2_hat > c
            fails["b"] += est.ssu(s, "naive").tau2_hat > c
        w = weights(s, WeightScheme.ESS)
        q = q_statistic(s, w)
        for law in VarianceLaw:
            vals = [cdf_at(s, w, law, q, t) for t in grid]
            # allow the engine's stated accuracy between neighbours
            fails["c"] += any(b > a + 2e-8 for a, b in zip(vals, vals[1:]))
        for name in ("fpc", "fpu-model", "fpu-naive", "qp", "pl"):
            narrow, wide = iv.INTERVALS[name](s, 0.90), iv.INTERVALS[name](s, 0.95)
            fails["d"] += not (wide.lower - 1e-8 <= narrow.lower and narrow.upper <= wide.upper + 1e-8)
    elapsed = time.perf_counter() - t0
    ok = not any(fails.values()) and elapsed < 120
    record(9, ok, "violations " + ", ".join(f"({k}) {v}" for k, v in fails.items()) + f"; {elapsed:.1f} s (< 120 s)")
    assert ok
