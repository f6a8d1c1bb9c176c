#!/usr/bin/env python3
"""Forward simulation walkthrough.

Builds a 120-day scenario where log R_t follows an AR(1) with two synthetic
risk-factor series (a temperature-like path and a mobility-like path),
infectiousness and admission delays discretized from Gamma distributions,
and draws one epidemic: daily infections, the latent infection-to-admission
split, and the daily admission counts assembled from it.
"""

import numpy as np

from tsihosp import (
    ModelParams,
    RegressionParams,
    RegressionSpec,
    ScenarioConfig,
    SyntheticCovariates,
    discretize_gamma,
    simulate,
)

omega = discretize_gamma(2.5, 3.0, "infectiousness", support=25)
omega_tilde = discretize_gamma(1.6, 1.5, "propensity", support=5)
print("infectiousness mean delay:", float(np.arange(1, 26) @ omega.weights).__round__(2), "days")
print("P(never admitted):", omega_tilde.never)

params = ModelParams(
    regression=RegressionParams(beta=np.array([-0.02, -0.125]), theta0=0.7, theta=np.array([0.5])),
    omega=omega,
    omega_tilde=omega_tilde,
    r_init=2.5,
)
config = ScenarioConfig(
    params=params,
    spec=RegressionSpec(ar_order=1, covariate_dim=2),
    horizon=120,
    seed_infections=50,
    covariates=SyntheticCovariates(dims=2, means=(15.0, 1.2), scales=(7.0, 1.0), ar_coef=(0.5, 0.7)),
)

series, latents, r_path = simulate(config, seed=20240301)

print("\nday   incidence  admissions   R_t")
for t in (1, 30, 60, 90, 120):
    print(f"{t:4d}  {series.incidence[t]:9d}  {series.hospitalizations[t]:10d}   {r_path[t]:.3f}")

# the split counts reproduce both observed series exactly
assert np.array_equal(latents.row_sums(), series.incidence)
assert np.array_equal(latents.admissions_by_day(), series.hospitalizations)
print("\nlatent split identities hold exactly (row sums and anti-diagonals).")
print("fraction admitted overall:", round(series.hospitalizations.sum() / series.incidence.sum(), 4))
