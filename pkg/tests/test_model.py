import math

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import integrate, stats

from tsihosp.model import (
    EpidemicSeries,
    HospitalizationPropensity,
    InfectiousnessFunction,
    LatentAdmissions,
    ModelParams,
    RegressionParams,
    RegressionSpec,
    discretize_gamma,
    infection_potential,
    infection_potential_series,
    params_from_unconstrained,
    params_to_unconstrained,
    rt_trajectory,
)


def make_params(beta, theta0, theta, omega_w, never, omtilde_w, r_init=1.0):
    return ModelParams(
        regression=RegressionParams(beta=np.asarray(beta, float), theta0=theta0,
                                    theta=np.asarray(theta, float)),
        omega=InfectiousnessFunction(np.asarray(omega_w, float)),
        omega_tilde=HospitalizationPropensity(never=never, weights=np.asarray(omtilde_w, float)),
        r_init=r_init,
    )


# ---------------------------------------------------------------------------
# infection potential
# ---------------------------------------------------------------------------


def test_infection_potential_zero_history():
    omega = InfectiousnessFunction([0.4, 0.6])
    assert infection_potential(omega, np.zeros(6), 5) == 0.0


def test_infection_potential_identity_weight():
    omega = InfectiousnessFunction([1.0])
    incidence = [3, 7, 10]
    assert infection_potential(omega, incidence, 3) == 10.0


def test_infection_potential_hand_convolution():
    # 0.5*1 + 0.3*2 + 0.2*4 = 1.9, with I_{t-1}=1, I_{t-2}=2, I_{t-3}=4
    omega = InfectiousnessFunction([0.5, 0.3, 0.2])
    incidence = [4, 2, 1]
    assert_allclose(infection_potential(omega, incidence, 3), 1.9, rtol=0, atol=1e-15)


def test_infection_potential_truncates_short_history():
    omega = InfectiousnessFunction([0.5, 0.3, 0.2])
    # t=1: only s=1 available
    assert_allclose(infection_potential(omega, [4.0], 1), 0.5 * 4)


def test_infection_potential_rejects_day_zero():
    omega = InfectiousnessFunction([1.0])
    with pytest.raises(ValueError):
        infection_potential(omega, [1.0], 0)


def test_infection_potential_linear_in_history():
    rng = np.random.default_rng(7)
    omega = InfectiousnessFunction(rng.dirichlet(np.ones(6)))
    for _ in range(50):
        t = int(rng.integers(1, 12))
        hist1 = rng.integers(0, 50, size=t).astype(float)
        hist2 = rng.integers(0, 50, size=t).astype(float)
        a, b = rng.integers(1, 5, size=2)
        lhs = infection_potential(omega, a * hist1 + b * hist2, t)
        rhs = a * infection_potential(omega, hist1, t) + b * infection_potential(omega, hist2, t)
        assert_allclose(lhs, rhs, rtol=1e-12)


def test_infection_potential_series_matches_scalar():
    rng = np.random.default_rng(3)
    omega = InfectiousnessFunction(rng.dirichlet(np.ones(4)))
    incidence = rng.integers(0, 30, size=15).astype(float)
    lam = infection_potential_series(omega, incidence)
    assert lam[0] == 0.0
    for t in range(1, incidence.size):
        assert_allclose(lam[t], infection_potential(omega, incidence, t), rtol=1e-12)


# ---------------------------------------------------------------------------
# R_t trajectory
# ---------------------------------------------------------------------------


def ar1_params(theta0, theta1, r_init, k=0):
    return make_params(np.zeros(k), theta0, [theta1], [1.0], 0.5, [0.25, 0.25], r_init)


def test_rt_first_step():
    spec = RegressionSpec(ar_order=1, covariate_dim=0)
    r = rt_trajectory(ar1_params(0.7, 0.5, 1.0), spec, np.zeros((11, 0)), 10)
    assert_allclose(r[0], math.exp(0.7), rtol=1e-14)


def test_rt_fixed_point_at_one():
    spec = RegressionSpec(ar_order=1, covariate_dim=0)
    r = rt_trajectory(ar1_params(0.0, 0.5, 1.0), spec, np.zeros((21, 0)), 20)
    assert_allclose(r, np.ones(20), rtol=0, atol=1e-14)


def test_rt_converges_to_fixed_point():
    # log R* = theta0 / (1 - theta1) = 1.4
    spec = RegressionSpec(ar_order=1, covariate_dim=0)
    r = rt_trajectory(ar1_params(0.7, 0.5, 1.0), spec, np.zeros((201, 0)), 200)
    assert_allclose(r[-1], math.exp(1.4), rtol=1e-10)
    assert np.all(r > 0)


def test_rt_is_pure():
    spec = RegressionSpec(ar_order=1, covariate_dim=1)
    z = np.random.default_rng(5).normal(size=(31, 1))
    params = make_params([0.3], 0.2, [0.4], [1.0], 0.5, [0.25, 0.25], 2.0)
    first = rt_trajectory(params, spec, z, 30)
    second = rt_trajectory(params, spec, z, 30)
    assert np.array_equal(first, second)


def test_rt_ar2_pins_two_initial_days():
    spec = RegressionSpec(ar_order=2, covariate_dim=0)
    params = make_params([], 0.1, [0.3, 0.2], [1.0], 0.5, [0.25, 0.25], 2.0)
    r = rt_trajectory(params, spec, np.zeros((6, 0)), 5)
    assert_allclose(r[0], 2.0)  # day 1 still an initial condition
    expected2 = math.exp(0.1 + (0.3 + 0.2) * math.log(2.0))
    assert_allclose(r[1], expected2, rtol=1e-14)


def test_rt_rejects_nonfinite_covariates():
    spec = RegressionSpec(ar_order=1, covariate_dim=1)
    z = np.zeros((11, 1))
    z[4, 0] = np.nan
    with pytest.raises(ValueError):
        rt_trajectory(ar1_params(0.0, 0.5, 1.0, k=1), spec, z, 10)


# ---------------------------------------------------------------------------
# reparameterization
# ---------------------------------------------------------------------------


def test_uniform_simplex_maps_to_zero_logits():
    spec = RegressionSpec(ar_order=1, covariate_dim=0)
    eta = 5
    params = make_params([], 0.0, [0.3], np.full(eta, 1 / eta), 0.5, [0.25, 0.25])
    x = params_to_unconstrained(params, spec)
    # omega block: eta - 1 logits right after [theta0, u_theta, log r_init]
    omega_block = x[3 : 3 + eta - 1]
    assert_allclose(omega_block, np.zeros(eta - 1), atol=1e-15)
    back = params_from_unconstrained(x, spec, eta, 1)
    assert_allclose(back.omega.weights, params.omega.weights, atol=1e-12)


def test_gamma_discretized_roundtrip():
    spec = RegressionSpec(ar_order=1, covariate_dim=2)
    omega = discretize_gamma(2.5, 3.0, "infectiousness", 25)
    omt = discretize_gamma(1.6, 1.5, "propensity", 5)
    params = ModelParams(
        regression=RegressionParams(beta=np.array([-0.02, -0.125]), theta0=0.7,
                                    theta=np.array([0.5])),
        omega=omega, omega_tilde=omt, r_init=2.5,
    )
    x = params_to_unconstrained(params, spec)
    back = params_from_unconstrained(x, spec, omega.eta, omt.eta_tilde)
    assert np.max(np.abs(back.omega.weights - omega.weights)) < 1e-10
    assert np.max(np.abs(back.omega_tilde.full_simplex() - omt.full_simplex())) < 1e-10
    assert abs(back.omega_tilde.never - 0.5) < 1e-10
    assert abs(back.r_init - 2.5) < 1e-10


def test_roundtrip_many_random_params():
    rng = np.random.default_rng(11)
    spec = RegressionSpec(ar_order=1, covariate_dim=2)
    worst = 0.0
    for _ in range(1000):
        eta = int(rng.integers(2, 12))
        eta_tilde = int(rng.integers(1, 6))
        full = rng.dirichlet(np.ones(eta_tilde + 2))
        params = make_params(
            rng.normal(size=2),
            rng.normal(),
            [rng.uniform(-0.95, 0.95)],
            rng.dirichlet(np.ones(eta)),
            float(full[0]),
            full[1:],
            r_init=float(rng.uniform(0.1, 8.0)),
        )
        x = params_to_unconstrained(params, spec)
        back = params_from_unconstrained(x, spec, eta, eta_tilde)
        x2 = params_to_unconstrained(back, spec)
        worst = max(worst, float(np.max(np.abs(x2 - x))))
        err = [
            np.max(np.abs(back.regression.beta - params.regression.beta)),
            abs(back.regression.theta0 - params.regression.theta0),
            np.max(np.abs(back.regression.theta - params.regression.theta)),
            abs(back.r_init - params.r_init),
            np.max(np.abs(back.omega.weights - params.omega.weights)),
            np.max(np.abs(back.omega_tilde.full_simplex() - params.omega_tilde.full_simplex())),
        ]
        assert max(err) < 1e-10
    assert worst < 1e-10


def test_unconstrained_dimension_mismatch():
    spec = RegressionSpec(ar_order=1, covariate_dim=0)
    with pytest.raises(ValueError):
        params_from_unconstrained(np.zeros(4), spec, eta=5, eta_tilde=2)


# ---------------------------------------------------------------------------
# Gamma discretization
# ---------------------------------------------------------------------------


def gamma_bin_mass_by_quadrature(shape, scale, lo, hi):
    pdf = stats.gamma(a=shape, scale=scale).pdf
    val, _ = integrate.quad(pdf, lo, hi, limit=200)
    return val


def test_infectiousness_bins_match_quadrature():
    omega = discretize_gamma(2.5, 3.0, "infectiousness", 25)
    for s in (1, 2, 7, 24):
        assert_allclose(
            omega.weights[s - 1],
            gamma_bin_mass_by_quadrature(2.5, 3.0, s - 1, s),
            rtol=1e-9,
        )
    assert_allclose(
        omega.weights[24],
        1.0 - gamma_bin_mass_by_quadrature(2.5, 3.0, 0, 24),
        rtol=1e-9,
    )


def test_infectiousness_mean_near_continuous_mean():
    omega = discretize_gamma(2.5, 3.0, "infectiousness", 25)
    mean = float(np.dot(np.arange(1, 26), omega.weights))
    # binning [s-1, s) onto s shifts the 7.5-day continuous mean up by < 1 day
    assert abs(mean - 7.5) < 0.6
    assert mean > 7.5


def test_propensity_never_is_half():
    omt = discretize_gamma(1.6, 1.5, "propensity", 5)
    assert omt.never == 0.5
    assert_allclose(
        2 * omt.weights[2], gamma_bin_mass_by_quadrature(1.6, 1.5, 2, 3), rtol=1e-9
    )


def test_discretize_sums_to_one():
    omega = discretize_gamma(2.5, 3.0, "infectiousness", 25)
    omt = discretize_gamma(1.6, 1.5, "propensity", 5)
    assert abs(omega.weights.sum() - 1.0) < 1e-12
    assert abs(omt.never + omt.weights.sum() - 1.0) < 1e-12


def test_discretize_tail_monotone_beyond_mode():
    for shape, scale, mode, support in [
        (2.5, 3.0, "infectiousness", 25),
        (1.6, 1.5, "propensity", 8),
    ]:
        obj = discretize_gamma(shape, scale, mode, support)
        w = obj.weights
        peak = int(np.argmax(w))
        tail = w[peak:-1]  # final entry is a lumped tail, exempt
        assert np.all(np.diff(tail) <= 1e-15)


def test_discretize_rejects_bad_inputs():
    with pytest.raises(ValueError):
        discretize_gamma(-1.0, 3.0, "infectiousness", 25)
    with pytest.raises(ValueError):
        discretize_gamma(2.5, 0.0, "propensity", 5)
    with pytest.raises(ValueError):
        discretize_gamma(2.5, 3.0, "nonsense", 5)


# ---------------------------------------------------------------------------
# type invariants
# ---------------------------------------------------------------------------


def test_type_validation_errors():
    with pytest.raises(ValueError):
        InfectiousnessFunction([0.5, 0.4])  # sums to 0.9
    with pytest.raises(ValueError):
        HospitalizationPropensity(never=0.5, weights=[0.3, 0.3])
    with pytest.raises(ValueError):
        RegressionParams(beta=np.array([0.0]), theta0=0.0, theta=np.array([1.0]))
    with pytest.raises(ValueError):
        RegressionSpec(ar_order=3)
    with pytest.raises(ValueError):
        EpidemicSeries(np.array([1, -2]), np.array([0, 0]), np.zeros((2, 0)))
    with pytest.raises(ValueError):
        make_params([], 0.0, [0.5], [1.0], 0.5, [0.5], r_init=-1.0)


def test_types_are_immutable():
    omega = InfectiousnessFunction([0.5, 0.5])
    with pytest.raises(ValueError):
        omega.weights[0] = 0.9
    series = EpidemicSeries(np.array([1, 2]), np.array([0, 1]), np.zeros((2, 1)))
    with pytest.raises(ValueError):
        series.incidence[0] = 5


def test_latent_admissions_identities_on_hand_case():
    # day 0: 3 infections -> (never=1, s0=1, s1=1); day 1: 2 -> (0, 1, 1)
    counts = np.array([[1, 1, 1], [0, 1, 1], [0, 0, 0]])
    latents = LatentAdmissions(counts)
    assert latents.eta_tilde == 1
    np.testing.assert_array_equal(latents.row_sums(), [3, 2, 0])
    # H_0 = h[0,0]; H_1 = h[1,0] + h[0,1]; H_2 = h[2,0] + h[1,1]
    np.testing.assert_array_equal(latents.admissions_by_day(), [1, 2, 1])
