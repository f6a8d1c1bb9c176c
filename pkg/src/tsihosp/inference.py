"""Inference utilities around the estimator.

Block-bootstrap confidence intervals, the sliding-window Gamma-posterior
baseline for R_t, composite-likelihood model selection, and the replication
harness that simulates, estimates and aggregates bias/coverage summaries
across many replicates (in parallel, with derived seeds, so results do not
depend on the worker count).
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import rng as rngmod
from .likelihood import LikelihoodContext, composite_loglik
from .mcem import (
    EstimationError,
    MCEMConfig,
    default_initial_params,
    run_mcem,
)
from .model import (
    EpidemicSeries,
    InfectiousnessFunction,
    HospitalizationPropensity,
    ModelParams,
    RegressionParams,
    RegressionSpec,
    discretize_gamma,
    infection_potential_series,
    param_names,
    param_values,
)
from .simulate import ScenarioConfig, SyntheticCovariates, UnderreportSpec, corrupt_underreport, simulate


# ---------------------------------------------------------------------------
# block bootstrap
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BootstrapResult:
    """Point estimate with percentile confidence bounds.

    ``lower``/``upper`` align with ``names``; ``rt_lower``/``rt_upper`` are
    per-day bands for the reproduction-number path on the original series.
    """

    names: list
    point: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    level: float
    rt_point: np.ndarray
    rt_lower: np.ndarray
    rt_upper: np.ndarray
    replicates: int
    failed: int
    warnings_: tuple = ()


def quantile_bounds(draws: np.ndarray, level: float):
    """Order-statistic interval: with k = floor(alpha * B) the bounds are
    the (k+1)-th smallest and (k+1)-th largest draws (so B = 20 at the 0.90
    level gives the 2nd-smallest and 2nd-largest order statistics)."""
    draws = np.sort(np.asarray(draws, dtype=float), axis=0)
    B = draws.shape[0]
    # guard the floor against float dust, e.g. (1 - 0.9)/2 * 20 = 0.999...
    k = int(math.floor((1.0 - level) / 2.0 * B + 1e-9))
    k = min(k, (B - 1) // 2)
    return draws[k], draws[B - 1 - k]


def make_pseudo_series(series: EpidemicSeries, block_len: int, rng) -> EpidemicSeries:
    """Circular moving-block resample of the joint (I, H, Z) series over
    days 1..T; day 0 stays fixed as the initial condition."""
    T = series.horizon
    idx = np.empty(T, dtype=np.int64)
    pos = 0
    while pos < T:
        start = int(rng.integers(1, T + 1))
        take = min(block_len, T - pos)
        idx[pos : pos + take] = (start - 1 + np.arange(take)) % T + 1
        pos += take
    full = np.concatenate([[0], idx])
    return EpidemicSeries(
        series.incidence[full], series.hospitalizations[full], series.covariates[full]
    )


def default_block_length(T: int) -> int:
    return int(math.ceil(T ** (1.0 / 3.0)))


def _refit_one(j, series, spec, refit_config, warm, block_len, seed):
    rng = rngmod.substream(seed, rngmod.BOOTSTRAP, j)
    pseudo = make_pseudo_series(series, block_len, rng)
    fit = run_mcem(pseudo, spec, refit_config, warm, seed=int(rng.integers(2**62)))
    return param_values(fit.params), fit.params


def block_bootstrap(
    series: EpidemicSeries,
    spec: RegressionSpec,
    config: MCEMConfig,
    init: ModelParams,
    block_len: int | None = None,
    replicates: int = 200,
    level: float = 0.95,
    seed: int = 0,
    threads: int = 1,
    refit_config: MCEMConfig | None = None,
    method: str = "score",
) -> BootstrapResult:
    """Percentile confidence intervals by circular block resampling.

    ``method="score"`` (default) resamples contiguous day-blocks of the
    per-day estimating-function contributions and re-estimates through a
    one-step update with the observed information (Louis' identity); this
    is the block approach for M-estimators and stays calibrated on growing
    epidemics, where resampling the raw counts breaks the renewal
    convolution and inflates the refits.  ``method="refit"`` resamples the
    joint (I, H, Z) day rows themselves and fully re-estimates on each
    pseudo-series; failed refits are dropped and counted, with more than
    20% failures an error.
    """
    if replicates < 20:
        raise ValueError("need at least 20 bootstrap replicates")
    if method not in ("score", "refit"):
        raise ValueError("method must be score or refit")
    T = series.horizon
    block_len = default_block_length(T) if block_len is None else int(block_len)
    if not 1 <= block_len <= T:
        raise ValueError("block length must lie in 1..T")
    point_fit = run_mcem(series, spec, config, init, seed=seed)
    warm = point_fit.params
    notes = []
    failed = 0

    from .mcem import observed_information
    from .model import log_rt_trajectory, params_from_unconstrained, params_to_unconstrained

    def rt_of(p):
        return np.exp(
            log_rt_trajectory(p.regression, p.r_init, spec, series.covariates, T)
        )

    eta, eta_tilde = warm.omega.eta, warm.omega_tilde.eta_tilde
    if method == "score":
        scores, info, free, layout = observed_information(series, spec, warm, config, seed)
        # scores at the fitted optimum are deflated by the estimating-equation
        # count; the usual T/(T - p) small-sample correction restores scale
        dof = math.sqrt(T / max(T - free.size, 1))
        centered = (scores - scores.mean(axis=0)) * dof
        info_inv = np.linalg.pinv(info, rcond=1e-12)
        x_hat = params_to_unconstrained(warm, spec)
        draws, fitted = [], []
        n_blocks = math.ceil(T / block_len)
        for b in range(replicates):
            rng = rngmod.substream(seed, rngmod.BOOTSTRAP, b)
            starts = rng.integers(0, T, size=n_blocks)
            idx = (starts[:, None] + np.arange(block_len)[None, :]).reshape(-1) % T
            pseudo_score = centered[idx[:T]].sum(axis=0)
            x_star = x_hat.copy()
            x_star[free] = x_hat[free] + info_inv @ pseudo_score
            p_star = params_from_unconstrained(x_star, spec, eta, eta_tilde)
            draws.append(param_values(p_star))
            fitted.append(p_star)
    else:
        refit_config = refit_config or replace(config, max_iter=min(config.max_iter, 40))
        jobs = [
            (j, series, spec, refit_config, warm, block_len, seed)
            for j in range(replicates)
        ]
        if threads > 1:
            with ProcessPoolExecutor(max_workers=threads) as pool:
                results = list(pool.map(_refit_star, jobs, chunksize=4))
        else:
            results = [_refit_star(job) for job in jobs]
        draws, fitted = [], []
        for j, outcome in enumerate(results):
            if isinstance(outcome, Exception):
                failed += 1
                notes.append(f"replicate {j}: {outcome}")
                continue
            vec, params_j = outcome
            draws.append(vec)
            fitted.append(params_j)
        if failed > 0.2 * replicates:
            raise EstimationError(
                f"{failed}/{replicates} bootstrap refits failed: " + "; ".join(notes[:5])
            )
    draws = np.asarray(draws)
    lower, upper = quantile_bounds(draws, level)
    point = param_values(warm)
    if np.any(point < lower) or np.any(point > upper):
        notes.append("point estimate outside some bootstrap bounds")
    rt_draws = np.asarray([rt_of(p) for p in fitted])
    rt_lower, rt_upper = quantile_bounds(rt_draws, level)
    return BootstrapResult(
        names=param_names(spec, eta, eta_tilde),
        point=point,
        lower=lower,
        upper=upper,
        level=level,
        rt_point=rt_of(warm),
        rt_lower=rt_lower,
        rt_upper=rt_upper,
        replicates=replicates - failed,
        failed=failed,
        warnings_=tuple(notes),
    )


def _refit_star(job):
    (j, series, spec, refit_config, warm, block_len, seed) = job
    try:
        return _refit_one(j, series, spec, refit_config, warm, block_len, seed)
    except (EstimationError, ValueError, OverflowError) as exc:
        return exc


# ---------------------------------------------------------------------------
# sliding-window baseline
# ---------------------------------------------------------------------------


def cori_baseline(
    series: EpidemicSeries,
    omega: InfectiousnessFunction,
    window: int = 3,
    report_at: str = "endpoint",
    prior: tuple = (1.0, 5.0),
) -> np.ndarray:
    """Sliding-window Gamma-posterior mean of R_t from incidence alone:
    (a + sum of window incidence) / (1/b + sum of window potentials),
    assigned to the window's endpoint or midpoint.  Days the window cannot
    cover are NaN; days with an undefined posterior (zero potential under a
    flat prior) are NaN and flagged with a warning.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    if report_at not in ("endpoint", "midpoint"):
        raise ValueError("report_at must be endpoint or midpoint")
    a, b = prior
    T = series.horizon
    lam = infection_potential_series(omega, series.incidence)
    inc = series.incidence.astype(float)
    out = np.full(T + 1, np.nan)
    undefined = []
    inv_b = 1.0 / b if b != np.inf else 0.0
    for t in range(window, T + 1):
        s_i = float(inc[t - window + 1 : t + 1].sum())
        s_l = float(lam[t - window + 1 : t + 1].sum())
        where = t if report_at == "endpoint" else t - (window - 1) // 2
        if s_l + inv_b <= 0.0:
            undefined.append(where)
            continue
        out[where] = (a + s_i) / (inv_b + s_l)
    if undefined:
        warnings.warn(
            f"baseline undefined on days {undefined} (zero potential, flat prior)",
            RuntimeWarning,
            stacklevel=2,
        )
    return out


# ---------------------------------------------------------------------------
# model selection
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SelectionResult:
    spec: RegressionSpec
    eta: int
    eta_tilde: int
    scores: list  # records: (ar_order, eta, eta_tilde, loglik, aic)


def _fit_candidate(series, ar_order, eta, eta_tilde, config, r_init, seed, known_delays):
    spec = RegressionSpec(ar_order=ar_order, covariate_dim=series.covariates.shape[1])
    init = default_initial_params(series, spec, eta, eta_tilde, r_init)
    if config.mode == "known_omega":
        if known_delays is None:
            raise ValueError("known_omega selection requires known delay distributions")
        omega, omt = known_delays
        if omega.eta != eta or omt.eta_tilde != eta_tilde:
            raise ValueError("known delay distributions do not match the grid point")
        init = ModelParams(
            regression=init.regression, omega=omega, omega_tilde=omt, r_init=r_init
        )
    fit = run_mcem(series, spec, config, init, seed=seed)
    ctx = LikelihoodContext.from_params(series, fit.params, spec)
    loglik = composite_loglik(ctx, method="thinning")
    dim_reg = spec.covariate_dim + 1 + spec.ar_order
    aic = 2.0 * dim_reg - 2.0 * loglik
    return loglik, aic


def select_model(
    series: EpidemicSeries,
    candidate_ar_orders,
    eta_grid,
    eta_tilde_grid,
    config: MCEMConfig,
    r_init: float,
    seed: int = 0,
    known_delays: tuple | None = None,
) -> SelectionResult:
    """Two-stage selection: the AR order minimizes AIC = 2 dim(reg) - 2 l̂_C
    (each order scored at its best delay supports), then (eta, eta_tilde)
    maximize the fitted composite log-likelihood; ties break toward the
    smaller model.  Failed candidates are dropped with a warning.
    """
    orders = sorted(set(int(q) for q in candidate_ar_orders))
    etas = sorted(set(int(e) for e in eta_grid))
    eta_tildes = sorted(set(int(e) for e in eta_tilde_grid))
    if not orders or not etas or not eta_tildes:
        raise ValueError("selection grids must be non-empty")
    scores = []
    for q in orders:
        for eta in etas:
            for eta_tilde in eta_tildes:
                try:
                    loglik, aic = _fit_candidate(
                        series, q, eta, eta_tilde, config, r_init, seed, known_delays
                    )
                except (EstimationError, ValueError, OverflowError) as exc:
                    warnings.warn(
                        f"candidate (ar={q}, eta={eta}, eta_tilde={eta_tilde}) "
                        f"dropped: {exc}",
                        RuntimeWarning,
                        stacklevel=2,
                    )
                    continue
                scores.append((q, eta, eta_tilde, loglik, aic))
    if not scores:
        raise EstimationError("every selection candidate failed")
    # ties break toward the smaller model: sort keys put smaller first
    best_by_order = {}
    for q, eta, eta_tilde, loglik, aic in scores:
        cur = best_by_order.get(q)
        if cur is None or loglik > cur[2] + 1e-12:
            best_by_order[q] = (eta, eta_tilde, loglik, aic)
    best_q = min(best_by_order, key=lambda q: (best_by_order[q][3], q))
    in_order = [s for s in scores if s[0] == best_q]
    best = max(in_order, key=lambda s: (s[3], -s[1], -s[2]))
    _, eta, eta_tilde, _, _ = best
    return SelectionResult(
        spec=RegressionSpec(ar_order=best_q, covariate_dim=series.covariates.shape[1]),
        eta=eta,
        eta_tilde=eta_tilde,
        scores=scores,
    )


# ---------------------------------------------------------------------------
# replication harness
# ---------------------------------------------------------------------------

STUDY_HORIZON = 120
STUDY_ETA = 25
STUDY_ETA_TILDE = 5
STUDY_R_INIT = 2.5
STUDY_SEED_INFECTIONS = 50
STUDY_GAMMA_INFECTIOUSNESS = (2.5, 3.0)
STUDY_GAMMA_PROPENSITY = (1.6, 1.5)
STUDY_THETA = (0.7, 0.5)
STUDY_BETA = (-0.02, -0.125)
# stationary AR(1) paths mimicking a daily temperature series and a
# (transformed) mobility index; roughness chosen so the delay distributions
# are as well identified as with real risk-factor series
STUDY_COVARIATES = SyntheticCovariates(
    dims=2, means=(15.0, 1.2), scales=(7.0, 1.0), ar_coef=(0.5, 0.7)
)
SCENARIOS = ("correct", "underreport_incidence", "underreport_both")


def study_params() -> ModelParams:
    return ModelParams(
        regression=RegressionParams(
            beta=np.asarray(STUDY_BETA), theta0=STUDY_THETA[0],
            theta=np.asarray([STUDY_THETA[1]]),
        ),
        omega=discretize_gamma(*STUDY_GAMMA_INFECTIOUSNESS, "infectiousness", STUDY_ETA),
        omega_tilde=discretize_gamma(*STUDY_GAMMA_PROPENSITY, "propensity", STUDY_ETA_TILDE),
        r_init=STUDY_R_INIT,
    )


def study_scenario(kind: str = "correct") -> ScenarioConfig:
    """The fixed synthetic-study configuration used by the replication
    harness (T = 120, AR(1) with two exogenous covariates, Gamma delay
    distributions, I_0 = 50, R_0 = 2.5)."""
    if kind not in SCENARIOS:
        raise ValueError(f"scenario must be one of {SCENARIOS}")
    underreport = None
    if kind == "underreport_incidence":
        underreport = UnderreportSpec(mean=0.15, sd=0.05, targets="incidence")
    elif kind == "underreport_both":
        underreport = UnderreportSpec(mean=0.15, sd=0.05, targets="both")
    return ScenarioConfig(
        params=study_params(),
        spec=RegressionSpec(ar_order=1, covariate_dim=2),
        horizon=STUDY_HORIZON,
        seed_infections=STUDY_SEED_INFECTIONS,
        covariates=STUDY_COVARIATES,
        underreport=underreport,
    )


@dataclass(frozen=True)
class ReplicationReport:
    names: list
    truth: np.ndarray
    mean: np.ndarray
    bias: np.ndarray
    rel_bias: np.ndarray
    se: np.ndarray
    coverage: np.ndarray  # NaN when intervals were not computed
    replicates: int
    failed: int
    level: float
    flags: tuple = ()

    def row(self, name: str) -> dict:
        i = self.names.index(name)
        return {
            "truth": float(self.truth[i]),
            "mean": float(self.mean[i]),
            "bias": float(self.bias[i]),
            "rel_bias": float(self.rel_bias[i]),
            "se": float(self.se[i]),
            "coverage": float(self.coverage[i]),
        }


def _estimate_once(scenario_kind, mode, seed, rep, bootstrap_B, level, accelerate=True):
    """Simulate-corrupt-estimate one replicate; returns (estimate vector,
    coverage indicator vector or None)."""
    scenario = study_scenario(scenario_kind)
    sim_seed = int(rngmod.substream(seed, rngmod.REPLICATION, rep, 0).integers(2**62))
    series, _, _ = simulate(scenario, sim_seed)
    if scenario.underreport is not None:
        ur = scenario.underreport
        series = corrupt_underreport(series, ur.mean, ur.sd, ur.targets, sim_seed)
    spec = scenario.spec
    config = MCEMConfig(mode=mode, accelerate=accelerate)
    init = default_initial_params(series, spec, STUDY_ETA, STUDY_ETA_TILDE, STUDY_R_INIT)
    if mode in ("known_omega",):
        truth = study_params()
        init = ModelParams(
            regression=init.regression, omega=truth.omega,
            omega_tilde=truth.omega_tilde, r_init=STUDY_R_INIT,
        )
    est_seed = int(rngmod.substream(seed, rngmod.REPLICATION, rep, 1).integers(2**62))
    if bootstrap_B > 0:
        boot = block_bootstrap(
            series, spec, config, init,
            replicates=bootstrap_B, level=level, seed=est_seed,
        )
        truth_vec = param_values(study_params())
        covered = ((boot.lower <= truth_vec) & (truth_vec <= boot.upper)).astype(float)
        # parameters held fixed have zero-width intervals; coverage is
        # meaningless there
        covered[boot.upper - boot.lower == 0] = np.nan
        return boot.point, covered
    fit = run_mcem(series, spec, config, init, seed=est_seed)
    return param_values(fit.params), None


def _replicate_star(job):
    try:
        return _estimate_once(*job)
    except (EstimationError, ValueError, OverflowError) as exc:
        return exc


def run_replication_study(
    scenario: str,
    mode: str = "known_omega",
    reps: int = 50,
    seed: int = 0,
    bootstrap_B: int = 0,
    level: float = 0.95,
    threads: int = 1,
) -> ReplicationReport:
    """Simulate, estimate and aggregate ``reps`` replicates of the fixed
    synthetic study: per-parameter empirical bias, relative bias, standard
    error, and (when ``bootstrap_B > 0``) block-bootstrap coverage at
    ``level``.  Replicates run in parallel with derived seeds; failures are
    dropped and counted."""
    if reps < 10:
        raise ValueError("need at least 10 replicates")
    jobs = [(scenario, mode, seed, rep, bootstrap_B, level) for rep in range(reps)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_replicate_star, jobs, chunksize=1))
    else:
        results = [_replicate_star(job) for job in jobs]
    estimates, covers, flags = [], [], []
    failed = 0
    for rep, outcome in enumerate(results):
        if isinstance(outcome, Exception):
            failed += 1
            flags.append(f"replicate {rep} failed: {outcome}")
            continue
        vec, covered = outcome
        estimates.append(vec)
        if covered is not None:
            covers.append(covered)
    if not estimates:
        raise EstimationError("every replicate failed")
    est = np.asarray(estimates)
    truth = param_values(study_params())
    names = param_names(RegressionSpec(ar_order=1, covariate_dim=2), STUDY_ETA, STUDY_ETA_TILDE)
    mean = est.mean(axis=0)
    bias = mean - truth
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(truth != 0, bias / truth, np.nan)
    se = est.std(axis=0, ddof=1) if est.shape[0] > 1 else np.zeros(est.shape[1])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)  # all-NaN columns
        coverage = (
            np.nanmean(np.asarray(covers), axis=0) if covers else np.full(truth.size, np.nan)
        )
    return ReplicationReport(
        names=names, truth=truth, mean=mean, bias=bias, rel_bias=rel, se=se,
        coverage=coverage, replicates=est.shape[0], failed=failed, level=level,
        flags=tuple(flags),
    )


TABLE_COLUMNS = ("theta_0", "theta_1", "beta_1", "beta_2", "omega_5", "omega_6", "omega_tilde_0")


def format_summary_table(report: ReplicationReport, columns=TABLE_COLUMNS) -> str:
    """Render the study summary in the conventional layout: empirical bias,
    relative bias and standard error in thousandths, coverage in percent."""
    rows = [
        ("Empirical bias (x10^-3)", lambda r: f"{1e3 * r['bias']:.2f}"),
        ("Relative bias (x10^-3)", lambda r: f"{1e3 * r['rel_bias']:.2f}"),
        ("Standard error (x10^-3)", lambda r: f"{1e3 * r['se']:.2f}"),
        ("95% Coverage probability", lambda r: "-" if math.isnan(r["coverage"]) else f"{100 * r['coverage']:.1f}%"),
    ]
    width = max(len(r[0]) for r in rows)
    header = " " * width + "  " + "  ".join(f"{c:>14}" for c in columns)
    lines = [header]
    for label, fmt in rows:
        cells = [fmt(report.row(c)) for c in columns]
        lines.append(f"{label:<{width}}  " + "  ".join(f"{v:>14}" for v in cells))
    return "\n".join(lines)
