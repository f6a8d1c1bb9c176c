import numpy as np
import pytest

from tsihosp.model import (
    HospitalizationPropensity,
    InfectiousnessFunction,
    ModelParams,
    RegressionParams,
    RegressionSpec,
    discretize_gamma,
)
from tsihosp.simulate import ScenarioConfig, SyntheticCovariates, simulate


def small_params(eta=8, eta_tilde=3, beta=(-0.1,), theta0=0.4, theta1=0.4, r_init=1.5):
    return ModelParams(
        regression=RegressionParams(
            beta=np.asarray(beta, float), theta0=theta0, theta=np.array([theta1])
        ),
        omega=discretize_gamma(2.5, 3.0, "infectiousness", eta),
        omega_tilde=discretize_gamma(1.6, 1.5, "propensity", eta_tilde),
        r_init=r_init,
    )


def small_scenario(horizon=30, seed_infections=20, **kw):
    params = small_params(**kw)
    spec = RegressionSpec(ar_order=1, covariate_dim=params.regression.beta.size)
    return ScenarioConfig(
        params=params,
        spec=spec,
        horizon=horizon,
        seed_infections=seed_infections,
        covariates=SyntheticCovariates(
            dims=spec.covariate_dim,
            means=(1.0,) * spec.covariate_dim,
            scales=(0.3,) * spec.covariate_dim,
        ),
    )


@pytest.fixture
def small_sim():
    config = small_scenario()
    series, latents, rt = simulate(config, seed=42)
    return config, series, latents, rt


def constant_rate_params(omega_weights, never, tilde_weights, rate):
    """Parameters with a flat R_t == rate (theta1 = 0, covariate-free)."""
    return ModelParams(
        regression=RegressionParams(
            beta=np.zeros(0), theta0=float(np.log(rate)), theta=np.array([0.0])
        ),
        omega=InfectiousnessFunction(np.asarray(omega_weights, float)),
        omega_tilde=HospitalizationPropensity(
            never=never, weights=np.asarray(tilde_weights, float)
        ),
        r_init=rate,
    )
