"""Monte Carlo EM estimation of the joint incidence/hospitalization model.

Each iteration draws the unobserved lagged admission counts day by day with
an acceptance-rejection sampler whose proposal is the product of binomial
lag distributions and whose acceptance probability is the product of the two
Poisson split factors (optionally rescaled by a Stirling factor at large
counts), then maximizes the Monte Carlo Q-function over the unconstrained
parameter coordinates with a quasi-Newton step.  The loop stops when the
sup-norm change of the free coordinates falls below the configured
threshold.

A prior-weighted variant fits one model per candidate delay-distribution
prior and returns the weight-averaged parameters.
"""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize
from scipy.special import gammaln, logsumexp, xlog1py, xlogy

from . import rng as rngmod
from .likelihood import (
    EnumerationTooLarge,
    LikelihoodContext,
    binom_logpmf,
    enumerate_lattice,
    joint_logpmf_with_missing_batch,
    lattice_size,
    marginal_pair_logpmf,
    poisson_logpmf,
)
from .model import (
    AR_COEF_BOX,
    EpidemicSeries,
    HospitalizationPropensity,
    InfectiousnessFunction,
    ModelParams,
    ParamLayout,
    RegressionParams,
    RegressionSpec,
    discretize_gamma,
    infection_potential_series,
    logits_to_simplex,
    params_from_unconstrained,
    params_to_unconstrained,
    propensity_stack,
)

MODES = ("known_omega", "free_omega", "gamma_parameterized")


class RejectionBudgetExhausted(Exception):
    """The acceptance-rejection sampler ran out of proposals for a day."""


class OptimizerStalled(Exception):
    """The M-step found no ascent direction."""


class EstimationError(Exception):
    """An E- or M-step failure that run_mcem cannot recover from."""


ADJUSTMENTS = ("exact_bound", "stirling", "none")


@dataclass(frozen=True)
class MCEMConfig:
    """Tuning knobs of the MCEM loop.

    ``n0`` is the per-day Monte Carlo sample size, grown geometrically by
    ``n0_growth_factor`` every ``n0_growth_every`` iterations up to
    ``n0_max`` to damp Monte Carlo noise near convergence.  ``delta0`` is
    the sup-norm stopping threshold on the unconstrained coordinates.
    ``acceptance_adjustment`` rescales the raw acceptance probability:
    "exact_bound" divides by its exact supremum (never clamps, keeps the
    sampled law exact at any count scale), "stirling" applies the classical
    2*pi*R*Lambda*sqrt(w0(1-w0)) factor clamped at 1 for days with at least
    ``stirling_threshold`` admissions, "none" uses the raw probability.
    """

    n0: int = 100
    delta0: float = 1e-3
    max_iter: int = 200
    max_rejections: int = 10_000
    mode: str = "free_omega"
    stirling_threshold: int = 25
    acceptance_adjustment: str = "exact_bound"
    n0_growth_every: int = 25
    n0_growth_factor: float = 2.0
    n0_max: int = 1600
    enumeration_cap: int = 10**6
    exact_e_step: bool = False
    accelerate: bool = True

    def __post_init__(self):
        if self.n0 < 1 or self.max_iter < 1 or self.delta0 <= 0:
            raise ValueError("require n0 >= 1, max_iter >= 1, delta0 > 0")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.acceptance_adjustment not in ADJUSTMENTS:
            raise ValueError(f"acceptance_adjustment must be one of {ADJUSTMENTS}")

    def sample_size(self, iteration: int) -> int:
        growth = self.n0_growth_factor ** (iteration // self.n0_growth_every)
        return int(min(self.n0 * growth, self.n0_max))


@dataclass
class MCEMTrace:
    """Per-iteration diagnostics: parameter snapshots, the acceptance-rate
    estimate of the composite log-likelihood, E-step acceptance rate, and
    wall time."""

    params: list = field(default_factory=list)
    loglik: list = field(default_factory=list)
    acceptance_rate: list = field(default_factory=list)
    wall_time: list = field(default_factory=list)

    def append(self, params, loglik, acceptance_rate, wall_time):
        self.params.append(params)
        self.loglik.append(loglik)
        self.acceptance_rate.append(acceptance_rate)
        self.wall_time.append(wall_time)

    def __len__(self):
        return len(self.params)


@dataclass(frozen=True)
class PriorCandidate:
    """Gamma shape/scale pairs (infectiousness, admission delay) reported by
    one prior study, with its probability weight."""

    k1: float
    mu1: float
    k2: float
    mu2: float
    weight: float

    def __post_init__(self):
        if min(self.k1, self.mu1, self.k2, self.mu2) <= 0:
            raise ValueError("Gamma shape/scale parameters must be positive")
        if self.weight < 0:
            raise ValueError("weights must be non-negative")


@dataclass(frozen=True)
class MCEMResult:
    params: ModelParams
    trace: MCEMTrace
    rt: np.ndarray  # R̂_0..R̂_T from the final parameters
    flags: tuple = ()
    converged: bool = True
    iterations: int = 0


# ---------------------------------------------------------------------------
# E step
# ---------------------------------------------------------------------------


def stirling_adjusted_acceptance(p: float, r_lambda: float, omega_tilde0: float) -> float:
    """Acceptance probability rescaled by the Stirling factor
    2*pi*R*Lambda*sqrt(w0(1-w0)) and clamped at 1; used at large daily
    counts where the raw Poisson product is uniformly tiny."""
    return min(1.0, 2.0 * math.pi * r_lambda * math.sqrt(omega_tilde0 * (1.0 - omega_tilde0)) * p)


def _stirling_log_factor(ctx: LikelihoodContext, r: int) -> float:
    w0 = ctx.params.omega_tilde.weights[0]
    mu = ctx.rt[r] * ctx.lam[r]
    return math.log(2.0 * math.pi * mu * math.sqrt(w0 * (1.0 - w0)))


@dataclass(frozen=True)
class DaySample:
    """Accepted lagged-admission draws for one day plus sampler statistics.

    ``mean_h`` is the day's conditional-mean estimate of the lagged counts:
    every proposal enters, weighted by its (known) acceptance probability,
    which is a self-normalized importance estimate with many times the
    effective sample size of the accepted draws alone — and smooth in the
    parameters, so common random numbers let the EM updates settle.
    """

    h: np.ndarray  # (n, eta_tilde) accepted exact draws
    proposals: int
    log_adjust: float  # log of the acceptance rescaling applied (0 when off)
    clamped: bool  # some adjusted probabilities hit the clamp at 1
    mean_h: np.ndarray = None  # importance-weighted conditional mean
    exact_loglik: float | None = None  # set by the exact (non-rejection) samplers

    def __post_init__(self):
        if self.mean_h is None:
            object.__setattr__(
                self,
                "mean_h",
                self.h.mean(axis=0) if self.h.size else np.zeros(self.h.shape[1]),
            )

    @property
    def acceptance_rate(self) -> float:
        return self.h.shape[0] / self.proposals if self.proposals else float("nan")

    def loglik_estimate(self) -> float:
        """The day's log pair likelihood: exact when an exact sampler ran,
        otherwise the acceptance-rate estimate (the mean raw acceptance
        probability IS that likelihood)."""
        if self.exact_loglik is not None:
            return self.exact_loglik
        return math.log(self.acceptance_rate) - self.log_adjust


def _split_total_logpmf(H: int, I: int, w0: float, mu: float, total) -> np.ndarray:
    """log of the two Poisson split factors as a function of the lagged-
    admission total (the raw acceptance probability of Algorithm-style
    rejection sampling)."""
    total = np.asarray(total)
    return poisson_logpmf(H - total, w0 * mu) + poisson_logpmf(
        I - H + total, (1.0 - w0) * mu
    )


def _acceptance_log_bound(ctx: LikelihoodContext, r: int) -> float:
    """Exact supremum of the raw acceptance probability over all proposals,
    so dividing by it keeps every adjusted probability in (0, 1]."""
    sources = ctx.lag_sources(r)
    w = ctx.params.omega_tilde.weights
    mu = ctx.rt[r] * ctx.lam[r]
    H = int(ctx.series.hospitalizations[r])
    I = int(ctx.series.incidence[r])
    k_hi = min(H, int(sources.sum()))
    k = np.arange(0, k_hi + 1)
    vals = _split_total_logpmf(H, I, w[0], mu, k)
    return float(np.max(vals)) if vals.size else -np.inf


def sample_latents_day(
    ctx: LikelihoodContext,
    r: int,
    n: int,
    rng: np.random.Generator,
    stirling_threshold: int = 25,
    max_rejections: int = 10_000,
    adjustment: str = "exact_bound",
) -> DaySample:
    """Draw ``n`` exact samples of the day-r lagged admission counts given
    the observed pair, by acceptance-rejection from the binomial proposal.

    The acceptance probability is the product of the two Poisson split
    factors, rescaled per ``adjustment`` (see :class:`MCEMConfig`).  Raises
    :class:`RejectionBudgetExhausted` after ``n * max_rejections`` proposals
    (immediately when the observation is infeasible).
    """
    if r < 1 or r > ctx.horizon:
        raise ValueError(f"day {r} is not a modeled day (1..{ctx.horizon})")
    sources = ctx.lag_sources(r)
    w = ctx.params.omega_tilde.weights
    mu = ctx.rt[r] * ctx.lam[r]
    H = int(ctx.series.hospitalizations[r])
    I = int(ctx.series.incidence[r])
    k = sources.size

    if H - I > int(sources.sum()):
        raise RejectionBudgetExhausted(
            f"day {r}: observation infeasible (H - I exceeds available lag "
            "sources), acceptance probability is zero for every proposal"
        )

    if adjustment == "exact_bound":
        log_adjust = -_acceptance_log_bound(ctx, r)
        if not np.isfinite(log_adjust):
            raise RejectionBudgetExhausted(
                f"day {r}: acceptance probability is zero for every proposal"
            )
    elif adjustment == "stirling" and H >= stirling_threshold and mu > 0 and 0.0 < w[0] < 1.0:
        log_adjust = _stirling_log_factor(ctx, r)
    else:
        log_adjust = 0.0

    def acceptance_logp(total):
        return _split_total_logpmf(H, I, w[0], mu, total) + log_adjust

    h_all, proposals, clamped, mean_h = _chunked_rejection(
        rng, sources, w[1:], acceptance_logp, n, n * max_rejections, r
    )
    return DaySample(
        h=h_all, proposals=proposals, log_adjust=log_adjust, clamped=clamped,
        mean_h=mean_h,
    )


CHUNK = 4096  # fixed proposal chunk so random-number positions never shift


def _chunked_rejection(rng, sources, probs, acceptance_logp, n, budget, day):
    """Run the accept/reject scan in fixed-size chunks.

    ``rng`` is either a Generator (single stream) or a callable mapping the
    chunk index to a Generator; with per-chunk keyed streams the proposal
    at any position is independent of how earlier chunks were consumed, so
    successive EM iterations replay the same randomness (common random
    numbers) and the parameter updates settle instead of jittering.
    """
    k = sources.size
    accepted = []
    got, proposals, chunk_idx = 0, 0, 0
    clamped = False
    wsum = 0.0
    whsum = np.zeros(k)
    while got < n:
        if proposals >= budget:
            raise RejectionBudgetExhausted(
                f"day {day}: {proposals} proposals produced only {got}/{n} samples"
            )
        gen = rng(chunk_idx) if callable(rng) else rng
        batch = int(min(CHUNK, budget - proposals))
        if k:
            h = np.empty((batch, k), dtype=np.int64)
            for j in range(k):  # scalar (n, p) hits numpy's fast path
                h[:, j] = gen.binomial(int(sources[j]), float(probs[j]), size=batch)
            total = h.sum(axis=1)
        else:
            h = np.zeros((batch, 0), dtype=np.int64)
            total = np.zeros(batch, dtype=np.int64)
        logp = acceptance_logp(total)
        if np.any(logp > 1e-9):
            clamped = True
        logp = np.minimum(logp, 0.0)
        with np.errstate(under="ignore"):
            weight = np.exp(logp)
        wsum += float(weight.sum())
        if k:
            whsum += weight @ h
        accept = np.log(gen.random(batch)) < logp
        proposals += batch
        chunk_idx += 1
        if np.any(accept):
            accepted.append(h[accept])
            got += int(accept.sum())
    h_all = np.concatenate(accepted)[:n] if accepted else np.zeros((0, k), dtype=np.int64)
    mean_h = whsum / wsum if wsum > 0 else h_all.mean(axis=0)
    return h_all, proposals, clamped, mean_h


def e_step_sample(
    ctx: LikelihoodContext,
    r: int,
    rng: np.random.Generator,
    stirling_threshold: int = 25,
    max_rejections: int = 10_000,
) -> np.ndarray:
    """One exact draw of the day-r lagged admission counts (column s-1 holds
    the day-(r-s) infections admitted on day r)."""
    day = sample_latents_day(ctx, r, 1, rng, stirling_threshold, max_rejections)
    return day.h[0]


def sample_latents_day_exact(
    ctx: LikelihoodContext, r: int, n: int, rng: np.random.Generator, cap: int = 10**6
) -> DaySample:
    """Sample the day-r latents by enumerating the exact conditional
    (fallback when rejection sampling is impractical)."""
    lattice = enumerate_lattice(ctx, r, int(ctx.series.hospitalizations[r]), cap)
    logp = joint_logpmf_with_missing_batch(ctx, r, lattice)
    with np.errstate(under="ignore"):
        probs = np.exp(logp - logp.max()) if np.any(np.isfinite(logp)) else np.zeros(logp.size)
    total = probs.sum()
    if not np.isfinite(total) or total <= 0:
        raise EstimationError(f"day {r}: observation has probability zero, cannot sample")
    idx = rng.choice(lattice.shape[0], size=n, p=probs / total)
    return DaySample(h=lattice[idx], proposals=n, log_adjust=0.0, clamped=False)


def _solve_tilt(logits: np.ndarray, sizes: np.ndarray, target: float) -> float:
    """Common exponential tilt t such that sum_s n_s * sigmoid(logit_s + t)
    equals ``target`` (bisection; the map is monotone in t)."""
    lo, hi = -45.0, 45.0

    def total(t):
        return float(sizes @ (1.0 / (1.0 + np.exp(-(logits + t)))))

    if total(lo) >= target:
        return lo
    if total(hi) <= target:
        return hi
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if total(mid) < target:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-13:
            break
    return 0.5 * (lo + hi)


def sample_latents_day_tilted(
    ctx: LikelihoodContext,
    r: int,
    n: int,
    rng: np.random.Generator,
    max_rejections: int = 10_000,
) -> DaySample:
    """Exact acceptance-rejection sampling of the day-r latents with an
    exponentially tilted binomial proposal.

    A common tilt of every lag's binomial (and of the implicit same-day
    split) leaves the conditional law unchanged but relocates the proposal
    so the lag total lands where the observed pair requires it; the
    acceptance ratio then depends on the total alone and is normalized by
    its exact maximum.  Keeps O(1) acceptance at any count scale, however
    far the current parameters sit from the data.
    """
    if r < 1 or r > ctx.horizon:
        raise ValueError(f"day {r} is not a modeled day (1..{ctx.horizon})")
    sources = ctx.lag_sources(r)
    w = ctx.params.omega_tilde.weights
    w0 = float(w[0])
    mu = ctx.rt[r] * ctx.lam[r]
    H = int(ctx.series.hospitalizations[r])
    I = int(ctx.series.incidence[r])
    k = sources.size
    if H - I > int(sources.sum()):
        raise EstimationError(f"day {r}: observation has probability zero")
    if k == 0:
        ll = float(_split_total_logpmf(H, I, w0, mu, 0))
        if ll == -np.inf:
            raise EstimationError(f"day {r}: observation has probability zero")
        return DaySample(
            h=np.zeros((n, 0), dtype=np.int64), proposals=n, log_adjust=0.0,
            clamped=False, exact_loglik=ll,
        )

    # tilt the lag binomials and the same-day Binom(I, w0) jointly so the
    # expected grand total matches H
    probs = np.clip(w[1:], 1e-12, 1.0 - 1e-12)
    logits = np.log(probs) - np.log1p(-probs)
    logit0 = math.log(max(w0, 1e-12)) - math.log1p(-min(w0, 1.0 - 1e-12))
    t = _solve_tilt(
        np.concatenate([logits, [logit0]]),
        np.concatenate([sources, [I]]).astype(float),
        float(H),
    )
    q = 1.0 / (1.0 + np.exp(-(logits + t)))

    # acceptance depends on the lag total alone; normalize by its exact sup
    k_lo, k_hi = max(0, H - I), min(H, int(sources.sum()))
    grid = np.arange(k_lo, k_hi + 1)
    log_f = -t * grid + _split_total_logpmf(H, I, w0, mu, grid)
    log_fmax = float(np.max(log_f))
    if log_fmax == -np.inf:
        raise EstimationError(f"day {r}: observation has probability zero")
    # P(H, I | history) = C_tilt * fmax * acceptance rate
    log_c_tilt = float(sources @ (np.log1p(-probs) - np.log1p(-q)))
    log_adjust = -(log_fmax + log_c_tilt)

    def acceptance_logp(total):
        return -t * total + _split_total_logpmf(H, I, w0, mu, total) - log_fmax

    h_all, proposals, _, mean_h = _chunked_rejection(
        rng, sources, q, acceptance_logp, n, n * max_rejections, r
    )
    return DaySample(
        h=h_all, proposals=proposals, log_adjust=log_adjust, clamped=False,
        mean_h=mean_h,
    )


def latent_conditional_stats(ctx: LikelihoodContext, r: int, cap: int = 10**6):
    """Exact conditional mean of the day-r latents and of the parameter-free
    complete-data terms, plus the exact day log-likelihood."""
    lattice = enumerate_lattice(ctx, r, int(ctx.series.hospitalizations[r]), cap)
    logp = joint_logpmf_with_missing_batch(ctx, r, lattice)
    norm = logsumexp(logp)
    if not np.isfinite(norm):
        raise EstimationError(f"day {r}: observation has probability zero")
    feasible = np.isfinite(logp)
    lattice = lattice[feasible]
    with np.errstate(under="ignore"):
        post = np.exp(logp[feasible] - norm)
    h_mean = post @ lattice if lattice.size else np.zeros(0)
    const = float(post @ _gamma_free_terms(ctx, r, lattice))
    return h_mean, const, float(norm)


def _gamma_free_terms(ctx: LikelihoodContext, r: int, h: np.ndarray) -> np.ndarray:
    """Parameter-free part of the complete-data log pmf: binomial
    coefficients of the lag terms and the two split factorials."""
    sources = ctx.lag_sources(r)
    H = int(ctx.series.hospitalizations[r])
    I = int(ctx.series.incidence[r])
    total = h.sum(axis=1) if h.size else np.zeros(h.shape[0])
    coef = (
        gammaln(sources + 1.0)[None, :]
        - gammaln(h + 1.0)
        - gammaln(sources[None, :] - h + 1.0)
    ).sum(axis=1)
    return coef - gammaln(H - total + 1.0) - gammaln(I - H + total + 1.0)


# ---------------------------------------------------------------------------
# Q function
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QStats:
    """Sufficient statistics of the Monte Carlo Q-function.

    The complete-data log pmf is linear in the latent counts apart from
    parameter-free factorial terms, so E-step averages enter only through
    per-lag totals (`sum_h`, admitted s days after infection), the same-day
    split totals (`a_total` admitted immediately, `b_total` not), and the
    averaged parameter-free constant.
    """

    sum_h: np.ndarray  # per lag s = 1..eta_tilde
    sum_sources: np.ndarray
    a_total: float
    b_total: float
    const: float


def q_stats_from_samples(ctx: LikelihoodContext, samples: dict) -> QStats:
    k = ctx.eta_tilde
    sum_h = np.zeros(k)
    sum_sources = np.zeros(k)
    a_total = b_total = const = 0.0
    for r in range(1, ctx.horizon + 1):
        h = np.atleast_2d(samples[r])
        h_mean = h.mean(axis=0) if h.size else np.zeros(k)
        sum_h += h_mean
        sum_sources += ctx.lag_sources(r)
        a_total += ctx.series.hospitalizations[r] - h_mean.sum()
        b_total += (
            ctx.series.incidence[r] - ctx.series.hospitalizations[r] + h_mean.sum()
        )
        const += float(_gamma_free_terms(ctx, r, h).mean())
    return QStats(sum_h, sum_sources, a_total, b_total, const)


def q_stats_exact(ctx: LikelihoodContext, cap: int = 10**6):
    """Exact-EM variant of :func:`q_stats_from_samples` (enumeration E-step);
    also returns the exact composite log-likelihood at the current params."""
    k = ctx.eta_tilde
    sum_h = np.zeros(k)
    sum_sources = np.zeros(k)
    a_total = b_total = const = loglik = 0.0
    for r in range(1, ctx.horizon + 1):
        h_mean, c, ll = latent_conditional_stats(ctx, r, cap)
        sum_h += h_mean
        sum_sources += ctx.lag_sources(r)
        a_total += ctx.series.hospitalizations[r] - h_mean.sum()
        b_total += ctx.series.incidence[r] - ctx.series.hospitalizations[r] + h_mean.sum()
        const += c
        loglik += ll
    return QStats(sum_h, sum_sources, a_total, b_total, const), loglik


def q_function(samples: dict, params: ModelParams, ctx: LikelihoodContext) -> float:
    """Monte Carlo Q-function: per-day average complete-data log pmf of the
    fixed E-step samples, evaluated at ``params`` (reference implementation;
    the M-step optimizes the algebraically identical sufficient-statistic
    form)."""
    eval_ctx = LikelihoodContext.from_params(ctx.series, params, ctx.spec)
    total = 0.0
    for r in range(1, ctx.horizon + 1):
        h = np.atleast_2d(samples[r])
        if h.shape[0] < 1:
            raise ValueError(f"day {r} has no samples")
        logp = joint_logpmf_with_missing_batch(eval_ctx, r, h)
        if not np.all(np.isfinite(logp)):
            warnings.warn(
                f"day {r}: sample infeasible under the evaluated parameters",
                RuntimeWarning,
                stacklevel=2,
            )
            return -np.inf
        total += float(logp.mean())
    return total


# ---------------------------------------------------------------------------
# Q objective on unconstrained coordinates (value + analytic gradient)
# ---------------------------------------------------------------------------


def _q_objective(x, layout, spec, incidence, covariates, stats):
    """Q(params(x)) and its gradient on the unconstrained coordinates."""
    T = incidence.size - 1
    I = incidence.astype(float)
    beta = x[layout.beta]
    theta0 = float(x[layout.theta0][0])
    u_theta = x[layout.theta]
    theta = AR_COEF_BOX * np.tanh(u_theta)
    log_r0 = float(x[layout.r_init][0])
    omega = logits_to_simplex(x[layout.omega])
    stack = logits_to_simplex(x[layout.omega_tilde])  # (w0, .., w_eta~, never)
    w0, ws = stack[0], stack[1:-1]

    grad = np.zeros_like(x)

    # Lambda path
    lam = np.convolve(I, np.concatenate([[0.0], omega]))[: T + 1]
    lam[0] = 0.0

    # log R path
    q = spec.ar_order
    drive = covariates[1:] @ beta + theta0
    L = np.empty(T + 1)
    L[: min(q, T + 1)] = log_r0
    for t in range(q, T + 1):
        acc = drive[t - 1]
        for j in range(1, q + 1):
            acc += theta[j - 1] * L[t - j]
        L[t] = acc
    with np.errstate(over="ignore"):
        R = np.exp(L)
    if not np.all(np.isfinite(R)):
        return -np.inf, grad

    bad = (lam[1:] == 0.0) & (I[1:] > 0)
    if np.any(bad):
        return -np.inf, grad
    term1 = float(np.sum(I[1:] * L[1:] + xlogy(I[1:], lam[1:]) - R[1:] * lam[1:]))
    term2 = float(
        xlogy(stats.a_total, w0)
        + xlog1py(stats.b_total, -w0)
        + np.sum(xlogy(stats.sum_h, ws))
        + np.sum(xlog1py(stats.sum_sources - stats.sum_h, -ws))
    )
    value = term1 + term2 + stats.const
    if not np.isfinite(value):
        return -np.inf, grad

    # --- gradient ---
    g = I - R * lam  # dterm1/dL_r (direct), day 0 entry unused below
    g[0] = 0.0
    lam_adj = np.zeros(T + 1)  # dterm1/dLambda_r
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(I[1:] > 0, I[1:] / lam[1:], 0.0)
    lam_adj[1:] = ratio - R[1:]

    # adjoint pass through the AR recursion
    lam_bar = np.zeros(T + 1)
    for t in range(T, q - 1, -1):
        acc = g[t]
        for j in range(1, q + 1):
            if t + j <= T:
                acc += theta[j - 1] * lam_bar[t + j]
        lam_bar[t] = acc
    grad[layout.theta0] = lam_bar[q:].sum()
    grad[layout.beta] = lam_bar[1:] @ covariates[1:] if covariates.shape[1] else np.zeros(0)
    dtheta = np.array([float(lam_bar[q:] @ L[q - j : T + 1 - j]) for j in range(1, q + 1)])
    grad[layout.theta] = dtheta * (AR_COEF_BOX - theta**2 / AR_COEF_BOX)
    d_log_r0 = 0.0
    for t in range(min(q, T + 1)):  # pinned initial days all equal log r0
        acc = g[t] if t >= 1 else 0.0
        for j in range(1, q + 1):
            if q <= t + j <= T:
                acc += theta[j - 1] * lam_bar[t + j]
        d_log_r0 += acc
    grad[layout.r_init] = d_log_r0

    # omega block: dterm1/domega_s = sum_r lam_adj_r I_{r-s}
    eta = omega.size
    domega = np.array(
        [float(lam_adj[s:] @ I[: T + 1 - s]) for s in range(1, eta + 1)]
    )
    grad[layout.omega] = _softmax_chain(omega, domega)[:-1]

    # omega-tilde block on (w0, ..., w_eta~, never)
    dstack = np.zeros(stack.size)
    with np.errstate(divide="ignore", invalid="ignore"):
        dstack[0] = _safe_ratio(stats.a_total, w0) - _safe_ratio(stats.b_total, 1.0 - w0)
        dstack[1:-1] = _safe_ratio(stats.sum_h, ws) - _safe_ratio(
            stats.sum_sources - stats.sum_h, 1.0 - ws
        )
    grad[layout.omega_tilde] = _softmax_chain(stack, dstack)[:-1]
    return value, grad


def _safe_ratio(num, den):
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    out = np.where(num == 0.0, 0.0, num / np.where(den == 0.0, 1.0, den))
    return out if out.ndim else float(out)


def _softmax_chain(probs, dprobs):
    """Gradient wrt softmax logits from the gradient wrt probabilities."""
    return probs * (dprobs - float(probs @ dprobs))


# ---------------------------------------------------------------------------
# M step
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MStepResult:
    params: ModelParams
    q_before: float
    q_after: float
    stalled: bool


def _fd_hessian(fun_jac, x, step=1e-6):
    """Hessian by forward differences of the analytic gradient."""
    _, g0 = fun_jac(x)
    H = np.empty((x.size, x.size))
    for i in range(x.size):
        xp = x.copy()
        xp[i] += step
        H[i] = (fun_jac(xp)[1] - g0) / step
    return 0.5 * (H + H.T)


def _maximize(fun_jac, x0, gtol=1e-7):
    """Quasi-Newton ascent (trust-region Newton-CG on an FD Hessian of the
    analytic gradient; the badly scaled delay-weight logits make plain
    L-BFGS crawl).  Falls back to L-BFGS-B if the trust region fails."""
    try:
        res = minimize(
            fun_jac,
            x0,
            jac=True,
            hess=lambda x: _fd_hessian(fun_jac, x),
            method="trust-ncg",
            options={"gtol": gtol, "maxiter": 500},
        )
        if np.all(np.isfinite(res.x)):
            return res.x
    except (np.linalg.LinAlgError, ValueError):
        pass
    res = minimize(
        fun_jac, x0, jac=True, method="L-BFGS-B",
        options={"maxiter": 4000, "ftol": 1e-16, "gtol": 1e-9},
    )
    return res.x


def _free_indices(layout: ParamLayout, mode: str) -> np.ndarray:
    blocks = [layout.beta, layout.theta0, layout.theta]
    if mode == "free_omega":
        blocks += [layout.omega, layout.omega_tilde]
    return np.concatenate([np.arange(s.start, s.stop) for s in blocks])


def _closed_form_warm_start(x, layout, stats):
    """Replace the propensity block with its per-coordinate maximizers
    (binomial ratios, and the same-day split ratio), which are the exact
    block optimum whenever they fit inside the simplex; the optimizer
    polishes from there."""
    w0 = stats.a_total / max(stats.a_total + stats.b_total, 1.0)
    ws = np.where(stats.sum_sources > 0, stats.sum_h / np.maximum(stats.sum_sources, 1.0), 0.0)
    w = np.concatenate([[w0], ws])
    w = np.clip(w, 1e-9, None)
    never = 1.0 - w.sum()
    if never < 1e-6:
        w *= (1.0 - 1e-6) / w.sum()
        never = 1.0 - w.sum()
    stack = np.concatenate([w, [never]])
    out = x.copy()
    out[layout.omega_tilde] = np.log(stack[:-1]) - math.log(stack[-1])
    return out


def m_step(
    samples: dict,
    params_k: ModelParams,
    ctx: LikelihoodContext,
    spec: RegressionSpec,
    config: MCEMConfig,
    stats: QStats | None = None,
    on_stall: str = "return",
) -> MStepResult:
    """Maximize the Monte Carlo Q-function over the mode's free coordinates.

    Quasi-Newton (L-BFGS-B) ascent on the unconstrained reparameterization,
    warm-started at the closed-form propensity ratios; guaranteed never to
    return a point with a lower Q value than the current one (ties keep the
    current parameters).
    """
    if config.mode == "gamma_parameterized":
        raise NotImplementedError(
            "gamma_parameterized runs through run_mcem's dedicated path"
        )
    if stats is None:
        stats = q_stats_from_samples(ctx, samples)
    layout = ParamLayout.for_dims(spec, params_k.omega.eta, ctx.eta_tilde)
    x_k = params_to_unconstrained(params_k, spec)
    free = _free_indices(layout, config.mode)
    incidence = ctx.series.incidence
    covariates = ctx.series.covariates

    def split_objective(x_free):
        x = x_k.copy()
        x[free] = x_free
        val, grad = _q_objective(x, layout, spec, incidence, covariates, stats)
        return -val, -grad[free]

    def q_at(x):
        return _q_objective(x, layout, spec, incidence, covariates, stats)[0]

    q_before = q_at(x_k)
    if not np.isfinite(q_before):
        raise EstimationError("Q-function is not finite at the current parameters")

    x0, q0 = x_k, q_before
    if config.mode == "free_omega":
        # the closed-form ratios are the exact propensity-block optimum
        # whenever they fit inside the simplex, so start there
        x_ws = _closed_form_warm_start(x_k, layout, stats)
        q_ws = q_at(x_ws)
        if q_ws > q0:
            x0, q0 = x_ws, q_ws

    res = _maximize(split_objective, x0[free])
    x_new = x_k.copy()
    x_new[free] = res
    q_after = q_at(x_new)
    # keep the best of current / warm start / optimized so Q never regresses
    if not np.isfinite(q_after) or q_after < q0:
        x_new, q_after = x0, q0
    if q_after <= q_before and np.array_equal(x_new, x_k):
        if on_stall == "raise":
            raise OptimizerStalled(f"no ascent direction found at Q = {q_before}")
        return MStepResult(params_k, q_before, q_before, stalled=True)
    params_new = params_from_unconstrained(x_new, spec, params_k.omega.eta, ctx.eta_tilde)
    return MStepResult(params_new, q_before, q_after, stalled=False)


# ---------------------------------------------------------------------------
# outer loop
# ---------------------------------------------------------------------------


def default_initial_params(
    series: EpidemicSeries,
    spec: RegressionSpec,
    eta: int,
    eta_tilde: int,
    r_init: float,
) -> ModelParams:
    """Uninformed starting point: zero covariate effects, a crude intercept
    from the incidence/potential ratio under uniform weights, mild
    autocorrelation, uniform delay distributions with half never admitted."""
    uniform = InfectiousnessFunction(np.full(eta, 1.0 / eta))
    lam = infection_potential_series(uniform, series.incidence)
    num = float(series.incidence[1:].sum())
    den = float(lam[1:].sum())
    crude = num / den if num > 0 and den > 0 else 1.0
    theta = np.concatenate([[0.3], np.zeros(spec.ar_order - 1)])
    return ModelParams(
        regression=RegressionParams(
            beta=np.zeros(spec.covariate_dim), theta0=math.log(crude), theta=theta
        ),
        omega=uniform,
        omega_tilde=HospitalizationPropensity(
            never=0.5, weights=np.full(eta_tilde + 1, 0.5 / (eta_tilde + 1))
        ),
        r_init=r_init,
    )


def extinct_tail(series: EpidemicSeries, eta: int) -> bool:
    tail = series.incidence[-eta:] if eta <= series.horizon else series.incidence
    return bool(series.horizon >= 1 and np.all(tail == 0))


SMALL_LATTICE = 10_000
MISMATCH_Z_SKIP = 3.0  # predicted slow acceptance: route straight to the tilted sampler


def _day_mismatch(ctx, r, adjustment):
    """Gaussian z-score predicting rejection-sampler stalling: distance
    between the proposal law of the lag total and the allocation the
    observed pair requires (plus the count-level mismatch, which matters
    unless the exact-bound rescaling cancels it)."""
    sources = ctx.lag_sources(r)
    w = ctx.params.omega_tilde.weights
    mu = ctx.rt[r] * ctx.lam[r]
    H = int(ctx.series.hospitalizations[r])
    I = int(ctx.series.incidence[r])
    m_d = float(sources @ w[1:])
    v_d = max(float(sources @ (w[1:] * (1.0 - w[1:]))), 1.0)
    v_b = max(I * w[0] * (1.0 - w[0]), 1.0)
    z = abs(m_d - (H - w[0] * I)) / math.sqrt(v_d + v_b)
    if adjustment != "exact_bound":
        z = max(z, abs(I - mu) / math.sqrt(max(mu, 1.0)))
    return z


def _sample_day_exact(ctx, r, n, day_rng, config):
    """Fallback day sampler: lattice enumeration when small (with the exact
    conditional mean), otherwise the tilted rejection sampler."""
    if lattice_size(ctx, r) <= min(SMALL_LATTICE, config.enumeration_cap):
        gen = day_rng(0) if callable(day_rng) else day_rng
        day = sample_latents_day_exact(ctx, r, n, gen, config.enumeration_cap)
        h_mean, _, loglik = latent_conditional_stats(ctx, r, config.enumeration_cap)
        return replace(day, mean_h=h_mean, exact_loglik=loglik)
    return sample_latents_day_tilted(ctx, r, n, day_rng, config.max_rejections)


def _e_step(ctx, config, seed, iteration):
    """Sample every modeled day; returns (samples, Q-function statistics,
    acceptance rate, estimated composite log-likelihood, flags)."""
    samples = {}
    k = ctx.eta_tilde
    stats_sum_h = np.zeros(k)
    stats_sources = np.zeros(k)
    a_total = b_total = const = 0.0
    accepted = proposals = 0
    loglik = 0.0
    flags = []
    fallback_days = 0
    n = config.sample_size(iteration)
    for r in range(1, ctx.horizon + 1):
        # (seed, day, chunk)-keyed streams: scheduling-independent, and
        # common random numbers across iterations make the EM map a
        # deterministic fixed-point iteration whose steps truly settle
        def day_rng(chunk, _r=r):
            return rngmod.substream(seed, rngmod.E_STEP, _r, chunk)

        try:
            if _day_mismatch(ctx, r, config.acceptance_adjustment) > MISMATCH_Z_SKIP:
                day = _sample_day_exact(ctx, r, n, day_rng, config)
                fallback_days += 1
            else:
                try:
                    day = sample_latents_day(
                        ctx,
                        r,
                        n,
                        day_rng,
                        config.stirling_threshold,
                        config.max_rejections,
                        config.acceptance_adjustment,
                    )
                except RejectionBudgetExhausted:
                    day = _sample_day_exact(ctx, r, n, day_rng, config)
                    fallback_days += 1
        except (EnumerationTooLarge, EstimationError) as exc:
            raise EstimationError(f"iteration {iteration}, day {r}: {exc}") from exc
        loglik += day.loglik_estimate()
        samples[r] = day
        accepted += day.h.shape[0]
        proposals += day.proposals
        stats_sum_h += day.mean_h
        stats_sources += ctx.lag_sources(r)
        a_total += ctx.series.hospitalizations[r] - day.mean_h.sum()
        b_total += (
            ctx.series.incidence[r] - ctx.series.hospitalizations[r] + day.mean_h.sum()
        )
        const += float(_gamma_free_terms(ctx, r, day.h).mean())
    if fallback_days:
        flags.append(
            f"iteration {iteration}: exact-sampler fallback on {fallback_days} days"
        )
    rate = accepted / proposals if proposals else float("nan")
    stats = QStats(stats_sum_h, stats_sources, a_total, b_total, const)
    return samples, stats, rate, loglik, flags


def run_mcem(
    series: EpidemicSeries,
    spec: RegressionSpec,
    config: MCEMConfig,
    init: ModelParams,
    seed: int,
) -> MCEMResult:
    """Full estimation loop (E step, M step, sup-norm stopping rule).

    Deterministic for fixed inputs and seed; the estimate is the last
    iterate.  In ``known_omega`` mode the delay distributions of ``init``
    are held fixed; in ``gamma_parameterized`` mode they are constrained to
    discretized Gamma families whose shape/scale parameters are estimated.
    """
    flags = []
    if extinct_tail(series, init.omega.eta):
        flags.append("extinct tail — asymptotics unreliable")

    if config.mode == "gamma_parameterized":
        return _run_mcem_gamma(series, spec, config, init, seed, flags)

    params = init
    layout = ParamLayout.for_dims(spec, init.omega.eta, init.omega_tilde.eta_tilde)
    free = _free_indices(layout, config.mode)
    trace = MCEMTrace()
    converged = False
    accel = _Accelerator(enabled=config.accelerate and not config.exact_e_step)
    for iteration in range(config.max_iter):
        tic = time.perf_counter()
        ctx = LikelihoodContext.from_params(series, params, spec)
        try:
            if config.exact_e_step:
                stats, loglik = q_stats_exact(ctx, config.enumeration_cap)
                samples, rate = {}, float("nan")
                step = m_step({}, params, ctx, spec, config, stats=stats)
            else:
                samples, stats, rate, loglik, day_flags = _e_step(
                    ctx, config, seed, iteration
                )
                flags.extend(day_flags)
                step = m_step(samples, params, ctx, spec, config, stats=stats)
        except EstimationError as exc:
            raise EstimationError(f"iteration {iteration}: {exc}") from exc
        x_old = params_to_unconstrained(params, spec)
        x_new = params_to_unconstrained(step.params, spec)
        delta = float(np.max(np.abs((x_new - x_old)[free])))
        params = step.params
        trace.append(params, loglik, rate, time.perf_counter() - tic)
        if step.stalled:
            flags.append(f"iteration {iteration}: M-step stalled, kept current params")
        if delta <= config.delta0 and not accel.just_jumped:
            converged = True
            break
        x_jump = accel.propose(x_new, (x_new - x_old)[free], free)
        if x_jump is not None:
            params = params_from_unconstrained(
                x_jump, spec, init.omega.eta, init.omega_tilde.eta_tilde
            )
    rt_path = np.exp(_log_rt(params, spec, series))
    return MCEMResult(
        params=params,
        trace=trace,
        rt=rt_path,
        flags=tuple(flags),
        converged=converged,
        iterations=len(trace),
    )


class _Accelerator:
    """Guarded Aitken extrapolation of the EM fixed-point iteration.

    The propensity split mixes slowly (high missing information), so the EM
    map contracts at a rate close to 1 along one stable direction.  When
    two consecutive steps are nearly parallel with a stable contraction
    ratio, jump by the geometric-series factor (capped); a jump that fails
    to shrink the next step triggers a backoff.  Plain EM steps in between
    keep their ascent property, so a bad jump only costs iterations, never
    correctness.
    """

    CAP = 50.0
    COS_MIN = 0.9

    def __init__(self, enabled: bool):
        self.enabled = enabled
        self.prev_step = None
        self.prev_norm = 0.0
        self.backoff = 0
        self.just_jumped = False
        self.pre_jump_norm = np.inf

    def propose(self, x_new, step, free):
        norm = float(np.linalg.norm(step))
        if not self.enabled:
            return None
        if self.just_jumped:
            # did the jump shrink the residual? otherwise back off a while
            self.just_jumped = False
            if norm >= self.pre_jump_norm:
                self.backoff = 10
            self.prev_step, self.prev_norm = step, norm
            return None
        if self.backoff > 0:
            self.backoff -= 1
            self.prev_step, self.prev_norm = step, norm
            return None
        out = None
        if self.prev_step is not None and norm > 1e-12 and self.prev_norm > 1e-12:
            cos = float(step @ self.prev_step) / (norm * self.prev_norm)
            ratio = norm / self.prev_norm
            if cos > self.COS_MIN and 0.3 < ratio < 0.9995:
                mult = min(ratio / (1.0 - ratio), self.CAP)
                out = x_new.copy()
                out[free] = x_new[free] + mult * step
                self.just_jumped = True
                self.pre_jump_norm = norm
                self.prev_step, self.prev_norm = None, 0.0
        if out is None:
            self.prev_step, self.prev_norm = step, norm
        return out


def _log_rt(params, spec, series):
    from .model import log_rt_trajectory

    return log_rt_trajectory(
        params.regression, params.r_init, spec, series.covariates, series.horizon
    )


def _gamma_moment_match(support_points, weights) -> tuple:
    """Gamma (shape, scale) matching the mean/variance of a discrete law."""
    w = np.asarray(weights, dtype=float)
    w = w / w.sum()
    pts = np.asarray(support_points, dtype=float)
    mean = float(pts @ w)
    var = float(((pts - mean) ** 2) @ w)
    mean = max(mean, 0.5)
    var = max(var, 0.25)
    return mean * mean / var, var / mean


def _run_mcem_gamma(series, spec, config, init, seed, flags):
    """MCEM with the delay distributions constrained to discretized Gamma
    families; the four shape/scale parameters ride along in log space with
    numeric gradients (the regression block keeps analytic ones)."""
    eta, eta_tilde = init.omega.eta, init.omega_tilde.eta_tilde
    layout = ParamLayout.for_dims(spec, eta, eta_tilde)
    reg_free = _free_indices(layout, "known_omega")

    def build(gamma_log):
        k1, mu1, k2, mu2 = np.exp(gamma_log)
        omega = discretize_gamma(k1, mu1, "infectiousness", eta)
        omt = discretize_gamma(k2, mu2, "propensity", eta_tilde)
        return omega, omt

    k1, mu1 = _gamma_moment_match(np.arange(1, eta + 1), init.omega.weights)
    k2, mu2 = _gamma_moment_match(
        np.arange(0, eta_tilde + 1), init.omega_tilde.weights
    )
    gamma_log = np.log([k1, mu1, k2, mu2])
    omega0, omt0 = build(gamma_log)
    params = ModelParams(
        regression=init.regression, omega=omega0, omega_tilde=omt0, r_init=init.r_init
    )
    trace = MCEMTrace()
    converged = False
    incidence, covariates = series.incidence, series.covariates
    for iteration in range(config.max_iter):
        tic = time.perf_counter()
        ctx = LikelihoodContext.from_params(series, params, spec)
        samples, stats, rate, loglik, day_flags = _e_step(ctx, config, seed, iteration)
        flags.extend(day_flags)
        x_k = params_to_unconstrained(params, spec)

        def objective(z):
            x = x_k.copy()
            x[reg_free] = z[: reg_free.size]
            glog = z[reg_free.size :]
            try:
                omega, omt = build(glog)
            except ValueError:
                return np.inf, np.zeros_like(z)
            x[layout.omega] = np.log(omega.weights[:-1]) - np.log(omega.weights[-1])
            stack = propensity_stack(omt)
            x[layout.omega_tilde] = np.log(stack[:-1]) - np.log(stack[-1])
            val, grad = _q_objective(x, layout, spec, incidence, covariates, stats)
            g = np.empty_like(z)
            g[: reg_free.size] = -grad[reg_free]
            eps = 1e-5
            for i in range(4):
                zp, zm = z.copy(), z.copy()
                zp[reg_free.size + i] += eps
                zm[reg_free.size + i] -= eps
                g[reg_free.size + i] = -(
                    _objective_value(zp) - _objective_value(zm)
                ) / (2 * eps)
            return -val, g

        def _objective_value(z):
            x = x_k.copy()
            x[reg_free] = z[: reg_free.size]
            try:
                omega, omt = build(z[reg_free.size :])
            except ValueError:
                return -np.inf
            x[layout.omega] = np.log(omega.weights[:-1]) - np.log(omega.weights[-1])
            stack = propensity_stack(omt)
            x[layout.omega_tilde] = np.log(stack[:-1]) - np.log(stack[-1])
            return _q_objective(x, layout, spec, incidence, covariates, stats)[0]

        z0 = np.concatenate([x_k[reg_free], gamma_log])
        res = minimize(objective, z0, jac=True, method="L-BFGS-B",
                       options={"maxiter": 300, "ftol": 1e-12})
        if _objective_value(res.x) < _objective_value(z0):
            res_x = z0
            flags.append(f"iteration {iteration}: M-step stalled, kept current params")
        else:
            res_x = res.x
        delta = float(np.max(np.abs(res_x - z0)))
        gamma_log = res_x[reg_free.size :]
        x_new = x_k.copy()
        x_new[reg_free] = res_x[: reg_free.size]
        omega, omt = build(gamma_log)
        new_reg = params_from_unconstrained(x_new, spec, eta, eta_tilde).regression
        params = ModelParams(
            regression=new_reg, omega=omega, omega_tilde=omt, r_init=params.r_init
        )
        trace.append(params, loglik, rate, time.perf_counter() - tic)
        if delta <= config.delta0:
            converged = True
            break
    return MCEMResult(
        params=params,
        trace=trace,
        rt=np.exp(_log_rt(params, spec, series)),
        flags=tuple(flags),
        converged=converged,
        iterations=len(trace),
    )


# ---------------------------------------------------------------------------
# observed scores and information (for estimating-equation bootstraps)
# ---------------------------------------------------------------------------


def day_scores(
    series: EpidemicSeries,
    spec: RegressionSpec,
    params: ModelParams,
    day_means: dict,
) -> tuple:
    """Per-day observed-score vectors on the unconstrained coordinates.

    The regression and infectiousness parts come from the day's pair
    log-likelihood directly; the propensity part uses Fisher's identity
    (the observed score equals the conditional mean of the complete-data
    score), fed by the per-day conditional means in ``day_means``.
    Returns (scores with shape (T, layout.size), layout).
    """
    layout = ParamLayout.for_dims(spec, params.omega.eta, params.omega_tilde.eta_tilde)
    T = series.horizon
    I = series.incidence.astype(float)
    Z = series.covariates
    reg = params.regression
    omega_w = params.omega.weights
    stack = propensity_stack(params.omega_tilde)
    w0, ws = stack[0], stack[1:-1]
    q = spec.ar_order

    from .model import log_rt_trajectory

    L = log_rt_trajectory(reg, params.r_init, spec, Z, T)
    R = np.exp(L)
    lam = infection_potential_series(params.omega, I)

    # forward sensitivities of L_t wrt (beta, theta0, u_theta, log r0)
    d_reg = spec.covariate_dim + 1 + q + 1
    dtheta_du = AR_COEF_BOX - reg.theta**2 / AR_COEF_BOX
    sens = np.zeros((T + 1, d_reg))
    sens[: min(q, T + 1), -1] = 1.0
    for t in range(q, T + 1):
        base = np.concatenate([Z[t], [1.0], dtheta_du * L[t - q : t][::-1], [0.0]])
        acc = base
        for j in range(1, q + 1):
            acc = acc + reg.theta[j - 1] * sens[t - j]
        sens[t] = acc

    scores = np.zeros((T, layout.size))
    g = I - R * lam  # dlogpmf_r / dL_r
    with np.errstate(divide="ignore", invalid="ignore"):
        lam_adj = np.where(I > 0, I / np.where(lam > 0, lam, 1.0), 0.0) - R
    reg_cols = np.concatenate(
        [
            np.arange(layout.beta.start, layout.beta.stop),
            np.arange(layout.theta0.start, layout.theta0.stop),
            np.arange(layout.theta.start, layout.theta.stop),
            np.arange(layout.r_init.start, layout.r_init.stop),
        ]
    )
    for r in range(1, T + 1):
        row = np.zeros(layout.size)
        row[reg_cols] = g[r] * sens[r]
        domega = np.zeros(omega_w.size)
        depth = min(r, omega_w.size)
        domega[:depth] = lam_adj[r] * I[r - depth : r][::-1]
        row[layout.omega] = _softmax_chain(omega_w, domega)[:-1]
        h_mean = day_means[r]
        a_r = series.hospitalizations[r] - h_mean.sum()
        b_r = I[r] - series.hospitalizations[r] + h_mean.sum()
        sources = np.zeros(ws.size)
        depth_t = min(r, ws.size)
        sources[:depth_t] = I[r - depth_t : r][::-1][:depth_t]
        row[layout.omega_tilde] = _propensity_score(stack, a_r, b_r, h_mean, sources)
        scores[r - 1] = row
    return scores, layout


def _propensity_score(stack, a_r, b_r, h_mean, sources):
    dstack = np.zeros(stack.size)
    w0, ws = stack[0], stack[1:-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        dstack[0] = _safe_ratio(a_r, w0) - _safe_ratio(b_r, 1.0 - w0)
        dstack[1:-1] = _safe_ratio(h_mean, ws) - _safe_ratio(sources - h_mean, 1.0 - ws)
    return _softmax_chain(stack, dstack)[:-1]


def observed_information(
    series: EpidemicSeries,
    spec: RegressionSpec,
    params: ModelParams,
    config: MCEMConfig,
    seed: int,
):
    """Observed-information matrix and per-day scores at ``params``.

    Louis' identity: the observed information equals the conditional
    expectation of the complete-data curvature minus the summed conditional
    covariance of the per-day complete-data scores (only the propensity
    block has conditional variance; the other blocks are latent-free).
    Returns (scores (T, n_free), info (n_free, n_free), free indices, layout).
    """
    ctx = LikelihoodContext.from_params(series, params, spec)
    days, stats, _, _, _ = _e_step(ctx, config, seed, iteration=0)
    day_means = {r: d.mean_h for r, d in days.items()}
    scores, layout = day_scores(series, spec, params, day_means)
    free = _free_indices(layout, config.mode if config.mode != "gamma_parameterized" else "free_omega")

    x_hat = params_to_unconstrained(params, spec)

    def fun_jac(x):
        val, grad = _q_objective(x, layout, spec, series.incidence, series.covariates, stats)
        return -val, -grad

    complete_info = _fd_hessian(lambda x: fun_jac(x), x_hat)
    # Louis correction: conditional covariance of the propensity-block score
    stack = propensity_stack(params.omega_tilde)
    missing = np.zeros((layout.size, layout.size))
    sl = layout.omega_tilde
    for r, d in days.items():
        if d.h.shape[0] < 2:
            continue
        sources = ctx.lag_sources(r)
        H_r = series.hospitalizations[r]
        I_r = series.incidence[r]
        rows = np.empty((d.h.shape[0], stack.size - 1))
        for m in range(d.h.shape[0]):
            h = d.h[m].astype(float)
            rows[m] = _propensity_score(
                stack, H_r - h.sum(), I_r - H_r + h.sum(), h, sources.astype(float)
            )
        cov = np.cov(rows, rowvar=False, ddof=1)
        missing[sl, sl] += np.atleast_2d(cov)
    info = complete_info - missing
    return scores[:, free], info[np.ix_(free, free)], free, layout


def run_mcem_weighted(
    series: EpidemicSeries,
    spec: RegressionSpec,
    config: MCEMConfig,
    candidates: list,
    seed: int,
    eta: int,
    eta_tilde: int,
    r_init: float,
) -> ModelParams:
    """Prior-weighted estimation: fit once per candidate delay prior (its
    discretized Gamma pair held fixed) and average the fitted parameters by
    the candidate weights.  Failed candidates are dropped with a warning and
    the weights renormalized."""
    if not candidates or sum(c.weight for c in candidates) <= 0:
        raise ValueError("need at least one candidate with positive weight")
    fits, weights = [], []
    per_candidate = replace(config, mode="known_omega")
    for i, cand in enumerate(candidates):
        if cand.weight == 0:
            continue
        init = default_initial_params(series, spec, eta, eta_tilde, r_init)
        init = ModelParams(
            regression=init.regression,
            omega=discretize_gamma(cand.k1, cand.mu1, "infectiousness", eta),
            omega_tilde=discretize_gamma(cand.k2, cand.mu2, "propensity", eta_tilde),
            r_init=r_init,
        )
        try:
            fit = run_mcem(series, spec, per_candidate, init, seed=seed + i)
        except EstimationError as exc:
            warnings.warn(
                f"candidate {i} dropped after estimation failure: {exc}",
                RuntimeWarning,
                stacklevel=2,
            )
            continue
        fits.append(fit.params)
        weights.append(cand.weight)
    if not fits:
        raise EstimationError("every prior candidate failed")
    w = np.asarray(weights, dtype=float)
    w = w / w.sum()

    def avg(extract):
        return sum(wi * np.asarray(extract(p), dtype=float) for wi, p in zip(w, fits))

    reg = RegressionParams(
        beta=avg(lambda p: p.regression.beta),
        theta0=float(avg(lambda p: p.regression.theta0)),
        theta=avg(lambda p: p.regression.theta),
    )
    omega = InfectiousnessFunction(avg(lambda p: p.omega.weights))
    full = avg(lambda p: p.omega_tilde.full_simplex())
    return ModelParams(
        regression=reg,
        omega=omega,
        omega_tilde=HospitalizationPropensity(never=float(full[0]), weights=full[1:]),
        r_init=r_init,
    )
