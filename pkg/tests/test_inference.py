import numpy as np
import pytest
from numpy.testing import assert_allclose

from conftest import small_scenario
from tsihosp.inference import (
    block_bootstrap,
    cori_baseline,
    default_block_length,
    format_summary_table,
    make_pseudo_series,
    quantile_bounds,
    run_replication_study,
    select_model,
    study_params,
    study_scenario,
    _estimate_once,
)
from tsihosp.mcem import MCEMConfig, default_initial_params, run_mcem
from tsihosp.model import (
    EpidemicSeries,
    InfectiousnessFunction,
    ModelParams,
    RegressionSpec,
    param_values,
)
from tsihosp.simulate import simulate
from tsihosp import rng as rngmod


# ---------------------------------------------------------------------------
# quantiles and pseudo-series
# ---------------------------------------------------------------------------


def test_quantile_bounds_order_statistics():
    draws = np.arange(1.0, 21.0).reshape(-1, 1)  # 1..20
    lo, hi = quantile_bounds(draws, level=0.90)
    assert lo[0] == 2.0 and hi[0] == 19.0  # 2nd smallest / 2nd largest


def test_quantile_bounds_nested_levels():
    rng = np.random.default_rng(0)
    draws = rng.normal(size=(200, 3))
    lo90, hi90 = quantile_bounds(draws, 0.90)
    lo95, hi95 = quantile_bounds(draws, 0.95)
    assert np.all(lo95 <= lo90) and np.all(hi90 <= hi95)


def test_full_length_block_is_a_rotation():
    series = EpidemicSeries(
        np.arange(11, dtype=np.int64), np.arange(11, dtype=np.int64) // 2,
        np.zeros((11, 0)),
    )
    pseudo = make_pseudo_series(series, block_len=10, rng=rngmod.substream(1, 2))
    assert pseudo.incidence[0] == series.incidence[0]  # day 0 pinned
    body = pseudo.incidence[1:]
    start = int(np.where(series.incidence[1:] == body[0])[0][0])
    expected = np.roll(series.incidence[1:], -start)
    np.testing.assert_array_equal(body, expected)


def test_default_block_length_cube_root():
    assert default_block_length(120) == 5
    assert default_block_length(27) == 3


# ---------------------------------------------------------------------------
# bootstrap
# ---------------------------------------------------------------------------


def known_setup(series, config):
    cfg = MCEMConfig(mode="known_omega")
    init = default_initial_params(series, config.spec, config.params.omega.eta,
                                  config.params.omega_tilde.eta_tilde,
                                  config.params.r_init)
    init = ModelParams(
        regression=init.regression, omega=config.params.omega,
        omega_tilde=config.params.omega_tilde, r_init=config.params.r_init,
    )
    return cfg, init


def test_bootstrap_deterministic_and_nested(small_sim):
    config, series, _, _ = small_sim
    cfg, init = known_setup(series, config)
    a = block_bootstrap(series, config.spec, cfg, init, replicates=40, level=0.90, seed=9)
    b = block_bootstrap(series, config.spec, cfg, init, replicates=40, level=0.90, seed=9)
    assert np.array_equal(a.lower, b.lower) and np.array_equal(a.upper, b.upper)
    wide = block_bootstrap(series, config.spec, cfg, init, replicates=40, level=0.95, seed=9)
    assert np.all(wide.lower <= a.lower + 1e-12) and np.all(a.upper <= wide.upper + 1e-12)


def test_bootstrap_rotation_blocks_are_tighter():
    # refit mode: length-T blocks give rotations of the original series,
    # which perturb the estimate far less than length-5 patchworks
    config = small_scenario(horizon=40, seed_infections=20)
    series, _, _ = simulate(config, seed=17)
    cfg, init = known_setup(series, config)
    full = block_bootstrap(series, config.spec, cfg, init, block_len=40,
                           replicates=24, level=0.90, seed=3, method="refit")
    short = block_bootstrap(series, config.spec, cfg, init, block_len=5,
                            replicates=24, level=0.90, seed=3, method="refit")
    i = full.names.index("theta_0")
    width_full = full.upper[i] - full.lower[i]
    width_short = short.upper[i] - short.lower[i]
    assert width_full < width_short


def test_bootstrap_rt_bands_cover_point(small_sim):
    config, series, _, _ = small_sim
    cfg, init = known_setup(series, config)
    boot = block_bootstrap(series, config.spec, cfg, init, replicates=50, level=0.95, seed=2)
    inside = (boot.rt_lower - 1e-9 <= boot.rt_point) & (boot.rt_point <= boot.rt_upper + 1e-9)
    assert inside.mean() > 0.9


def test_bootstrap_validates_arguments(small_sim):
    config, series, _, _ = small_sim
    cfg, init = known_setup(series, config)
    with pytest.raises(ValueError):
        block_bootstrap(series, config.spec, cfg, init, replicates=5)
    with pytest.raises(ValueError):
        block_bootstrap(series, config.spec, cfg, init, block_len=0)
    with pytest.raises(ValueError):
        block_bootstrap(series, config.spec, cfg, init, method="jackknife")


# ---------------------------------------------------------------------------
# sliding-window baseline
# ---------------------------------------------------------------------------


def test_cori_flat_prior_moment_ratio():
    omega = InfectiousnessFunction([1.0])
    series = EpidemicSeries(np.array([10, 20]), np.array([0, 0]), np.zeros((2, 0)))
    out = cori_baseline(series, omega, window=1, prior=(0.0, np.inf))
    assert_allclose(out[1], 2.0, rtol=1e-12)


def test_cori_constant_series_goes_to_one():
    omega = InfectiousnessFunction([0.4, 0.3, 0.3])
    inc = np.full(80, 50, dtype=np.int64)
    series = EpidemicSeries(inc, np.zeros(80, dtype=np.int64), np.zeros((80, 0)))
    out = cori_baseline(series, omega, window=3, prior=(1.0, 1e8))
    assert abs(out[70] - 1.0) < 0.01


def test_cori_reporting_conventions():
    omega = InfectiousnessFunction([1.0])
    inc = np.array([5, 5, 10, 20, 40], dtype=np.int64)
    series = EpidemicSeries(inc, np.zeros(5, dtype=np.int64), np.zeros((5, 0)))
    end = cori_baseline(series, omega, window=3, report_at="endpoint", prior=(0.0, np.inf))
    mid = cori_baseline(series, omega, window=3, report_at="midpoint", prior=(0.0, np.inf))
    # same window sums, shifted one day back for the midpoint convention
    assert_allclose(mid[3], end[4], rtol=1e-12)
    assert np.isnan(end[2]) and not np.isnan(end[3])


def test_cori_translation_covariance():
    rng = np.random.default_rng(5)
    omega = InfectiousnessFunction(rng.dirichlet(np.ones(4)))
    inc = rng.integers(5, 40, size=30)
    shifted = np.concatenate([[7], inc])
    s1 = EpidemicSeries(inc, np.zeros_like(inc), np.zeros((inc.size, 0)))
    s2 = EpidemicSeries(shifted, np.zeros_like(shifted), np.zeros((shifted.size, 0)))
    a = cori_baseline(s1, omega, window=3)
    b = cori_baseline(s2, omega, window=3)
    # once windows clear the prepended day (and the kernel), estimates shift by one
    for t in range(6, 30):
        assert_allclose(b[t + 1], a[t], rtol=1e-12)


def test_cori_flags_undefined_days():
    omega = InfectiousnessFunction([1.0])
    inc = np.array([0, 0, 0, 5], dtype=np.int64)
    series = EpidemicSeries(inc, np.zeros(4, dtype=np.int64), np.zeros((4, 0)))
    with pytest.warns(RuntimeWarning, match="undefined"):
        out = cori_baseline(series, omega, window=1, prior=(0.0, np.inf))
    assert np.isnan(out[1])


# ---------------------------------------------------------------------------
# model selection
# ---------------------------------------------------------------------------


def test_select_model_single_candidate(small_sim):
    config, series, _, _ = small_sim
    cfg = MCEMConfig(mode="known_omega", max_iter=30)
    result = select_model(
        series, [1], [8], [3], cfg, r_init=1.5, seed=4,
        known_delays=(config.params.omega, config.params.omega_tilde),
    )
    assert result.spec.ar_order == 1
    assert (result.eta, result.eta_tilde) == (8, 3)
    assert len(result.scores) == 1


@pytest.mark.slow
def test_select_model_prefers_ar1_on_ar1_data():
    scenario = study_scenario("correct")
    truth = study_params()
    hits = 0
    reps = 50
    for rep in range(reps):
        series, _, _ = simulate(scenario, seed=5000 + rep)
        cfg = MCEMConfig(mode="known_omega", max_iter=60)
        result = select_model(
            series, [1, 2], [25], [5], cfg, r_init=2.5, seed=rep,
            known_delays=(truth.omega, truth.omega_tilde),
        )
        hits += result.spec.ar_order == 1
    assert hits >= 0.8 * reps


@pytest.mark.slow
def test_select_model_recovers_propensity_support():
    scenario = study_scenario("correct")
    hits = 0
    reps = 50
    for rep in range(reps):
        series, _, _ = simulate(scenario, seed=6000 + rep)
        cfg = MCEMConfig(mode="free_omega", max_iter=40)
        result = select_model(series, [1], [25], [2, 4, 5, 6], cfg, r_init=2.5, seed=rep)
        hits += result.eta_tilde in (4, 5, 6)
    assert hits >= 0.8 * reps


# ---------------------------------------------------------------------------
# replication harness
# ---------------------------------------------------------------------------


def test_replication_theta1_bias_small():
    report = run_replication_study("correct", mode="known_omega", reps=50, seed=21, threads=2)
    assert abs(report.row("theta_1")["bias"]) < 0.02
    assert report.failed == 0


def test_replication_deterministic_and_degenerate_se():
    # identical per-replicate seeds produce identical estimates and zero SE
    vecs = [
        _estimate_once("correct", "known_omega", seed=9, rep=4, bootstrap_B=0, level=0.95)[0]
        for _ in range(3)
    ]
    assert np.array_equal(vecs[0], vecs[1]) and np.array_equal(vecs[1], vecs[2])
    stacked = np.asarray([vecs[0]] * 10)
    assert np.allclose(stacked.std(axis=0, ddof=1), 0.0, atol=1e-12)


def test_replication_scheduling_independence():
    a = run_replication_study("correct", mode="known_omega", reps=10, seed=33, threads=1)
    b = run_replication_study("correct", mode="known_omega", reps=10, seed=33, threads=2)
    assert np.array_equal(a.mean, b.mean)
    assert np.array_equal(a.se, b.se)


def test_replication_report_table_layout():
    report = run_replication_study("correct", mode="known_omega", reps=10, seed=2, threads=2)
    table = format_summary_table(report)
    assert "Empirical bias" in table and "Coverage" in table
    assert "theta_0" in table and "omega_tilde_0" in table


def test_replication_rejects_tiny_reps():
    with pytest.raises(ValueError):
        run_replication_study("correct", reps=3, seed=1)


def test_study_scenario_variants():
    assert study_scenario("correct").underreport is None
    ur = study_scenario("underreport_incidence").underreport
    assert ur.mean == 0.15 and ur.sd == 0.05 and ur.targets == "incidence"
    both = study_scenario("underreport_both").underreport
    assert both.targets == "both"
    with pytest.raises(ValueError):
        study_scenario("nonsense")
