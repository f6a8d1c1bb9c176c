import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import stats

from conftest import small_scenario
from tsihosp.model import EpidemicSeries, ModelParams
from tsihosp.simulate import (
    ScenarioConfig,
    SyntheticCovariates,
    UnderreportSpec,
    corrupt_underreport,
    simulate,
    synth_covariates,
)
from tsihosp import rng as rngmod


def test_zero_seed_infections_is_absorbing():
    config = small_scenario(horizon=20)
    # the config guard rejects I_0 = 0, so bypass it for this degenerate check
    object.__setattr__(config, "seed_infections", 0)
    series, latents, rt = simulate(config, seed=1)
    assert np.all(series.incidence == 0)
    assert np.all(series.hospitalizations == 0)
    assert np.all(latents.counts == 0)


def test_config_rejects_extinct_start():
    with pytest.raises(ValueError):
        small_scenario(seed_infections=0)


def test_never_admitted_means_no_hospitalizations():
    config = small_scenario(horizon=25)
    params = config.params
    from tsihosp.model import HospitalizationPropensity

    omt = HospitalizationPropensity(never=1.0, weights=np.zeros(params.omega_tilde.eta_tilde + 1))
    config = ScenarioConfig(
        params=ModelParams(
            regression=params.regression, omega=params.omega, omega_tilde=omt,
            r_init=params.r_init,
        ),
        spec=config.spec, horizon=config.horizon,
        seed_infections=config.seed_infections, covariates=config.covariates,
    )
    series, latents, _ = simulate(config, seed=5)
    assert np.all(series.hospitalizations == 0)
    # every infection sits in the never-admitted column
    np.testing.assert_array_equal(latents.counts[:, 0], series.incidence)
    assert np.all(latents.counts[:, 1:] == 0)


def test_structural_identities_and_total_admissions(small_sim):
    _, series, latents, _ = small_sim
    np.testing.assert_array_equal(latents.row_sums(), series.incidence)
    np.testing.assert_array_equal(latents.admissions_by_day(), series.hospitalizations)
    assert series.hospitalizations.sum() <= series.incidence.sum()


def test_simulate_is_deterministic():
    config = small_scenario()
    a = simulate(config, seed=9)
    b = simulate(config, seed=9)
    assert np.array_equal(a[0].incidence, b[0].incidence)
    assert np.array_equal(a[0].hospitalizations, b[0].hospitalizations)
    assert np.array_equal(a[0].covariates, b[0].covariates)
    assert np.array_equal(a[1].counts, b[1].counts)
    assert np.array_equal(a[2], b[2])


def test_poisson_mean_calibration():
    # sample mean of I_t / (R_t Lambda_t) over informative days is ~1
    from tsihosp.model import infection_potential

    config = small_scenario(horizon=60, seed_infections=50, theta0=0.5, theta1=0.4)
    ratios = []
    for seed in range(8):
        series, _, rt = simulate(config, seed=seed)
        for t in range(1, 61):
            lam = infection_potential(config.params.omega, series.incidence, t)
            mu = rt[t] * lam
            if mu > 50:
                ratios.append(series.incidence[t] / mu)
    n = len(ratios)
    assert n > 100
    assert abs(np.mean(ratios) - 1.0) < 3.0 / np.sqrt(n)


def test_conditional_split_mean():
    # E(h_{t,s} | I_t) = w_s I_t, checked within 4 standard errors
    config = small_scenario(horizon=1, seed_infections=400)
    w_full = np.concatenate(
        [[config.params.omega_tilde.never], config.params.omega_tilde.weights]
    )
    draws = np.array([simulate(config, seed=s)[1].counts[0] for s in range(3000)])
    n_inf = config.seed_infections
    for j, w in enumerate(w_full):
        se = np.sqrt(n_inf * w * (1 - w) / draws.shape[0])
        assert abs(draws[:, j].mean() - w * n_inf) < 4 * se + 1e-9


def test_lemma_thinning_goodness_of_fit():
    # given a fixed history, day-t split counts are Poisson(w_s R_t Lambda_t)
    from tsihosp.model import infection_potential

    config = small_scenario(horizon=1, seed_infections=30)
    params = config.params
    draws = np.array([simulate(config, seed=s)[1].counts[1] for s in range(10_000)])
    lam = infection_potential(params.omega, np.array([config.seed_infections]), 1)
    _, _, rt = simulate(config, seed=0)
    mu = rt[1] * lam
    w_full = np.concatenate([[params.omega_tilde.never], params.omega_tilde.weights])
    for j in (0, 1, 2):  # never, same-day, one-day columns
        rate = w_full[j] * mu
        upper = int(stats.poisson(rate).ppf(0.999)) + 1
        edges = np.arange(0, upper + 1)
        expected = stats.poisson(rate).pmf(edges) * draws.shape[0]
        observed = np.array([(draws[:, j] == k).sum() for k in edges])
        # lump the tail so every bin has mass
        expected = np.append(expected, draws.shape[0] - expected.sum())
        observed = np.append(observed, draws.shape[0] - observed.sum())
        keep = expected > 5
        chi2 = float(((observed[keep] - expected[keep]) ** 2 / expected[keep]).sum())
        pval = stats.chi2(df=keep.sum() - 1).sf(chi2)
        assert pval > 0.001


def test_corrupt_identity():
    series = EpidemicSeries(np.array([5, 10]), np.array([1, 2]), np.zeros((2, 0)))
    out = corrupt_underreport(series, mean=0.0, sd=0.0, targets="both", seed=3)
    np.testing.assert_array_equal(out.incidence, series.incidence)
    np.testing.assert_array_equal(out.hospitalizations, series.hospitalizations)


def test_corrupt_deterministic_scaling():
    series = EpidemicSeries(np.array([100, 100]), np.array([40, 40]), np.zeros((2, 0)))
    out = corrupt_underreport(series, mean=0.5, sd=0.0, targets="incidence", seed=3)
    np.testing.assert_array_equal(out.incidence, [50, 50])
    np.testing.assert_array_equal(out.hospitalizations, [40, 40])


def test_corrupt_mean_fraction():
    n = 10_000
    true = np.full(n, 10**6, dtype=np.int64)
    series = EpidemicSeries(true, np.zeros(n, dtype=np.int64), np.zeros((n, 0)))
    out = corrupt_underreport(series, mean=0.15, sd=0.05, targets="incidence", seed=11)
    fractions = 1.0 - out.incidence / true
    assert np.all(fractions >= -1e-9) and np.all(fractions <= 0.30 + 1e-9)
    assert abs(fractions.mean() - 0.15) < 0.005


def test_corrupt_untargeted_stream_passthrough():
    series = EpidemicSeries(
        np.array([100, 200]), np.array([30, 60]), np.zeros((2, 0))
    )
    out = corrupt_underreport(series, mean=0.2, sd=0.1, targets="hospitalizations", seed=5)
    np.testing.assert_array_equal(out.incidence, series.incidence)
    assert np.any(out.hospitalizations != series.hospitalizations)


def test_synth_covariates_empty_and_deterministic():
    assert synth_covariates(10, 0, seed=1).shape == (11, 0)
    a = synth_covariates(50, 3, seed=2)
    b = synth_covariates(50, 3, seed=2)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, synth_covariates(50, 3, seed=3))


def test_synth_covariates_autocorrelation():
    x = synth_covariates(100_000, 1, seed=7)[:, 0]
    x = x - x.mean()
    rho = float(np.dot(x[1:], x[:-1]) / np.dot(x, x))
    assert abs(rho - 0.9) < 0.01


def test_synth_covariates_mean_scale():
    z = synth_covariates(100_000, 1, seed=8, means=(15.0,), scales=(7.0,), ar_coef=0.5)
    assert abs(z.mean() - 15.0) < 0.2
    assert abs(z.std() - 7.0) < 0.2


def test_underreport_spec_validation():
    with pytest.raises(ValueError):
        UnderreportSpec(mean=1.2, sd=0.1)
    with pytest.raises(ValueError):
        UnderreportSpec(mean=0.1, sd=-0.1)
    with pytest.raises(ValueError):
        UnderreportSpec(mean=0.1, sd=0.1, targets="deaths")


def test_overflow_guard():
    # explosive reproduction number exceeds the count range quickly
    config = small_scenario(horizon=500, seed_infections=1000, theta0=3.0, theta1=0.5)
    with pytest.raises(OverflowError):
        simulate(config, seed=1)
