"""Command-line interface binding simulation, estimation and inference into
reproducible file-based workflows.

Commands: ``simulate``, ``estimate``, ``bootstrap``, ``compare``,
``replicate``.  Every run writes a ``manifest.json`` echoing the fully
resolved configuration and seed; identical inputs and seed reproduce
byte-identical outputs.  Exit codes: 0 success, 2 configuration/validation
error, 3 I/O failure, 4 estimation failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

try:
    import tomllib  # Python >= 3.11
except ModuleNotFoundError:  # pragma: no cover - depends on interpreter
    import tomli as tomllib

from . import io as tio
from .inference import (
    ReplicationReport,
    block_bootstrap,
    cori_baseline,
    default_block_length,
    format_summary_table,
    run_replication_study,
    study_scenario,
)
from .mcem import (
    EstimationError,
    MCEMConfig,
    default_initial_params,
    run_mcem,
    run_mcem_weighted,
)
from .model import (
    EpidemicSeries,
    HospitalizationPropensity,
    InfectiousnessFunction,
    ModelParams,
    RegressionParams,
    RegressionSpec,
    discretize_gamma,
)
from .simulate import ScenarioConfig, SyntheticCovariates, UnderreportSpec, corrupt_underreport, simulate

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_ESTIMATION = 4

OUTDIR_ENV = "TSIHOSP_OUTDIR"


class ConfigError(Exception):
    pass


def _outdir(args) -> Path:
    out = args.out or os.environ.get(OUTDIR_ENV)
    if not out:
        raise ConfigError("no output directory: pass --out or set " + OUTDIR_ENV)
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_manifest(outdir: Path, command: str, resolved: dict) -> None:
    tio.write_json(outdir / "manifest.json", {"command": command, **resolved})


def _load_toml(path) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML in {path}: {exc}") from exc


def _delays_from_config(cfg: dict):
    try:
        inf = cfg["infectiousness"]
        prop = cfg["propensity"]
        if inf.get("kind", "gamma") == "gamma":
            omega = discretize_gamma(inf["shape"], inf["scale"], "infectiousness", inf["support"])
        else:
            omega = InfectiousnessFunction(np.asarray(inf["weights"], dtype=float))
        if prop.get("kind", "gamma") == "gamma":
            omega_tilde = discretize_gamma(prop["shape"], prop["scale"], "propensity", prop["support"])
        else:
            omega_tilde = HospitalizationPropensity(
                never=float(prop["never"]), weights=np.asarray(prop["weights"], dtype=float)
            )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid delay-distribution config: {exc}") from exc
    return omega, omega_tilde


def _scenario_from_config(cfg: dict) -> ScenarioConfig:
    try:
        sc = cfg["scenario"]
        reg = cfg["regression"]
        cov = cfg["covariates"]
        omega, omega_tilde = _delays_from_config(cfg)
        params = ModelParams(
            regression=RegressionParams(
                beta=np.asarray(reg.get("beta", []), dtype=float),
                theta0=float(reg["theta0"]),
                theta=np.asarray(reg["theta"], dtype=float),
            ),
            omega=omega,
            omega_tilde=omega_tilde,
            r_init=float(sc["r_init"]),
        )
        spec = RegressionSpec(
            ar_order=int(reg.get("ar_order", len(reg["theta"]))),
            covariate_dim=len(reg.get("beta", [])),
        )
        if cov.get("kind", "synthetic") == "synthetic":
            covariates = SyntheticCovariates(
                dims=int(cov["dims"]),
                means=tuple(cov.get("means", ())),
                scales=tuple(cov.get("scales", ())),
                ar_coef=cov.get("ar_coef", 0.9),
            )
        else:
            covariates = np.loadtxt(cov["path"], delimiter=",", skiprows=1)[:, 1:]
        underreport = None
        if "underreport" in cfg:
            ur = cfg["underreport"]
            underreport = UnderreportSpec(
                mean=float(ur["mean"]), sd=float(ur["sd"]),
                targets=ur.get("targets", "incidence"),
            )
        return ScenarioConfig(
            params=params,
            spec=spec,
            horizon=int(sc["horizon"]),
            seed_infections=int(sc["seed_infections"]),
            covariates=covariates,
            underreport=underreport,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid scenario config: {exc}") from exc


def _scenario_manifest(config: ScenarioConfig, seed: int) -> dict:
    cov = config.covariates
    cov_desc = (
        {"kind": "synthetic", **asdict(cov)}
        if isinstance(cov, SyntheticCovariates)
        else {"kind": "matrix", "shape": list(np.asarray(cov).shape)}
    )
    return {
        "seed": int(seed),
        "horizon": config.horizon,
        "seed_infections": config.seed_infections,
        "r_init": config.params.r_init,
        "regression": {
            "ar_order": config.spec.ar_order,
            "beta": [float(b) for b in config.params.regression.beta],
            "theta0": float(config.params.regression.theta0),
            "theta": [float(t) for t in config.params.regression.theta],
        },
        "infectiousness": {
            "eta": config.params.omega.eta,
            "weights": [float(w) for w in config.params.omega.weights],
        },
        "propensity": {
            "eta_tilde": config.params.omega_tilde.eta_tilde,
            "never": float(config.params.omega_tilde.never),
            "weights": [float(w) for w in config.params.omega_tilde.weights],
        },
        "covariates": cov_desc,
        "underreport": (
            None
            if config.underreport is None
            else {
                "mean": config.underreport.mean,
                "sd": config.underreport.sd,
                "targets": config.underreport.targets,
            }
        ),
    }


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    config = _scenario_from_config(_load_toml(args.config))
    outdir = _outdir(args)
    series, latents, rt = simulate(config, args.seed)
    reported = series
    if config.underreport is not None:
        ur = config.underreport
        reported = corrupt_underreport(series, ur.mean, ur.sd, ur.targets, args.seed)
        tio.write_series_csv(outdir / "series_true.csv", series)
    tio.write_series_csv(outdir / "series.csv", reported)
    tio.write_latent_csv(outdir / "latent.csv", latents)
    tio.write_rt_csv(outdir / "rt_true.csv", rt, label="r_true")
    _write_manifest(outdir, "simulate", _scenario_manifest(config, args.seed))
    return EXIT_OK


def _read_count_csv(path, column):
    import csv as _csv

    with open(path, newline="") as fh:
        rows = list(_csv.reader(fh))
    header = rows[0]
    if header[0] != "day" or column not in header:
        raise ConfigError(f"{path}: expected day,{column} columns")
    j = header.index(column)
    days = [int(r[0]) for r in rows[1:]]
    if days != list(range(len(days))):
        raise ConfigError(f"{path}: days must be contiguous from 0")
    return np.array([int(float(r[j])) for r in rows[1:]])


def _read_covariates_csv(path):
    import csv as _csv

    with open(path, newline="") as fh:
        rows = list(_csv.reader(fh))
    header = rows[0]
    if header[0] != "day":
        raise ConfigError(f"{path}: expected a day column first")
    return np.array([[float(v) for v in r[1:]] for r in rows[1:]])


def _load_estimation_series(args) -> EpidemicSeries:
    if getattr(args, "series", None):
        return tio.read_series_csv(args.series)
    if not (args.incidence and args.hosp):
        raise ConfigError("pass --series, or both --incidence and --hosp")
    inc = _read_count_csv(args.incidence, "incidence")
    hosp = _read_count_csv(args.hosp, "hospitalizations")
    if inc.size != hosp.size:
        raise ConfigError(
            f"misaligned inputs: {inc.size} incidence days vs {hosp.size} hospitalization days"
        )
    cov = (
        _read_covariates_csv(args.covariates)
        if args.covariates
        else np.zeros((inc.size, 0))
    )
    if cov.shape[0] != inc.size:
        raise ConfigError(
            f"misaligned inputs: covariates cover {cov.shape[0]} days, counts {inc.size}"
        )
    return EpidemicSeries(inc, hosp, cov)


def _estimation_setup(args, series):
    spec = RegressionSpec(ar_order=args.ar_order, covariate_dim=series.covariates.shape[1])
    config = MCEMConfig(
        mode="known_omega" if args.mode == "known" else
             ("free_omega" if args.mode == "free" else args.mode),
        n0=args.n0,
        delta0=args.delta0,
        max_iter=args.max_iter,
    )
    if config.mode == "known_omega":
        if not args.omega_file:
            raise ConfigError("known_omega mode requires --omega-file")
        omega, omega_tilde = tio.read_delays_csv(args.omega_file)
        eta, eta_tilde = omega.eta, omega_tilde.eta_tilde
        init = default_initial_params(series, spec, eta, eta_tilde, args.r_init)
        init = ModelParams(
            regression=init.regression, omega=omega, omega_tilde=omega_tilde,
            r_init=args.r_init,
        )
    else:
        eta, eta_tilde = args.eta, args.eta_tilde
        init = default_initial_params(series, spec, eta, eta_tilde, args.r_init)
    return spec, config, init


def cmd_estimate(args) -> int:
    series = _load_estimation_series(args)
    outdir = _outdir(args)
    manifest = {
        "seed": args.seed,
        "mode": args.mode,
        "ar_order": args.ar_order,
        "r_init": args.r_init,
        "eta": args.eta,
        "eta_tilde": args.eta_tilde,
        "n0": args.n0,
        "delta0": args.delta0,
        "max_iter": args.max_iter,
        "inputs": {
            "series": args.series,
            "incidence": args.incidence,
            "hosp": args.hosp,
            "covariates": args.covariates,
            "omega_file": args.omega_file,
            "prior_file": args.prior_file,
        },
    }
    if args.mode == "prior":
        if not args.prior_file:
            raise ConfigError("prior mode requires --prior-file")
        candidates = tio.read_priors_csv(args.prior_file)
        spec = RegressionSpec(ar_order=args.ar_order, covariate_dim=series.covariates.shape[1])
        config = MCEMConfig(mode="known_omega", n0=args.n0, delta0=args.delta0, max_iter=args.max_iter)
        params = run_mcem_weighted(
            series, spec, config, candidates, args.seed, args.eta, args.eta_tilde, args.r_init
        )
        from .model import log_rt_trajectory

        rt = np.exp(
            log_rt_trajectory(params.regression, params.r_init, spec, series.covariates, series.horizon)
        )
        payload = {
            "schema_version": tio.RESULT_SCHEMA_VERSION,
            "mode": args.mode,
            "seed": int(args.seed),
            "params": tio.params_to_dict(params, spec),
            "eta": params.omega.eta,
            "eta_tilde": params.omega_tilde.eta_tilde,
            "rt": [float(v) for v in rt],
            "trace_summary": {"candidates": len(candidates)},
            "flags": [],
        }
        tio.write_json(outdir / "result.json", payload)
        tio.write_rt_csv(outdir / "rt_estimate.csv", rt, label="r_estimate")
    else:
        spec, config, init = _estimation_setup(args, series)
        fit = run_mcem(series, spec, config, init, args.seed)
        tio.write_json(outdir / "result.json", tio.result_to_dict(fit, spec, args.mode, args.seed))
        tio.write_trace_csv(outdir / "trace.csv", fit.trace, spec)
        tio.write_rt_csv(outdir / "rt_estimate.csv", fit.rt, label="r_estimate")
    _write_manifest(outdir, "estimate", manifest)
    return EXIT_OK


def cmd_bootstrap(args) -> int:
    series = _load_estimation_series(args)
    outdir = _outdir(args)
    spec, config, init = _estimation_setup(args, series)
    block_len = args.block_len or default_block_length(series.horizon)
    result = block_bootstrap(
        series, spec, config, init,
        block_len=block_len,
        replicates=args.replicates,
        level=args.level,
        seed=args.seed,
        threads=args.threads,
        method=args.method,
    )
    tio.write_json(outdir / "bootstrap.json", tio.bootstrap_to_dict(result))
    tio.write_bootstrap_csv(outdir / "bootstrap.csv", result)
    plotdata = outdir / "plotdata"
    plotdata.mkdir(exist_ok=True)
    tio.write_band_csv(plotdata / "rt_band.csv", result.rt_point, result.rt_lower, result.rt_upper)
    _write_manifest(
        outdir,
        "bootstrap",
        {
            "seed": args.seed,
            "mode": args.mode,
            "block_len": block_len,
            "replicates": args.replicates,
            "level": args.level,
            "method": args.method,
            "ar_order": args.ar_order,
            "r_init": args.r_init,
            "eta": args.eta,
            "eta_tilde": args.eta_tilde,
            "threads": args.threads,
        },
    )
    return EXIT_OK


def cmd_compare(args) -> int:
    series = _load_estimation_series(args)
    outdir = _outdir(args)
    spec, config, init = _estimation_setup(args, series)
    fit = run_mcem(series, spec, config, init, args.seed)
    omega = fit.params.omega
    cori_end = cori_baseline(series, omega, window=args.window, report_at="endpoint")
    cori_mid = cori_baseline(series, omega, window=args.window, report_at="midpoint")
    r_true = None
    if args.rt_true:
        import csv as _csv

        with open(args.rt_true, newline="") as fh:
            rows = list(_csv.reader(fh))
        r_true = np.array([float(r[1]) for r in rows[1:]])
    days = list(range(series.horizon + 1))
    tio.write_compare_csv(outdir / "compare.csv", days, r_true, fit.rt, cori_end, cori_mid)
    plotdata = outdir / "plotdata"
    plotdata.mkdir(exist_ok=True)
    if r_true is not None:
        bias = fit.rt - r_true
        tio.write_band_csv(plotdata / "rt_bias.csv", bias, bias, bias)
    _write_manifest(
        outdir,
        "compare",
        {
            "seed": args.seed,
            "mode": args.mode,
            "window": args.window,
            "report_at": args.report_at,
            "ar_order": args.ar_order,
            "r_init": args.r_init,
            "eta": args.eta,
            "eta_tilde": args.eta_tilde,
        },
    )
    return EXIT_OK


def cmd_replicate(args) -> int:
    outdir = _outdir(args)
    mode = {"known": "known_omega", "free": "free_omega"}.get(args.mode, args.mode)
    report = run_replication_study(
        scenario=args.scenario,
        mode=mode,
        reps=args.reps,
        seed=args.seed,
        bootstrap_B=args.bootstrap_replicates,
        level=args.level,
        threads=args.threads,
    )
    tio.write_json(outdir / "replication_report.json", tio.report_to_dict(report))
    tio.write_report_csv(outdir / "replication_report.csv", report)
    print(format_summary_table(report))
    _write_manifest(
        outdir,
        "replicate",
        {
            "seed": args.seed,
            "scenario": args.scenario,
            "mode": mode,
            "reps": args.reps,
            "bootstrap_replicates": args.bootstrap_replicates,
            "level": args.level,
            "threads": args.threads,
        },
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _add_estimation_args(p):
    p.add_argument("--series", help="combined series CSV (day,incidence,hospitalizations,z...)")
    p.add_argument("--incidence", help="incidence CSV (day,incidence)")
    p.add_argument("--hosp", help="hospitalizations CSV (day,hospitalizations)")
    p.add_argument("--covariates", help="covariates CSV (day,z1..zk)")
    p.add_argument("--mode", default="known", choices=["known", "free", "gamma_parameterized", "prior"],
                   help="estimation mode")
    p.add_argument("--omega-file", help="delay distributions CSV (kind,index,value)")
    p.add_argument("--prior-file", help="prior candidates CSV (k1,mu1,k2,mu2,weight)")
    p.add_argument("--ar-order", type=int, default=1)
    p.add_argument("--r-init", type=float, default=1.0, help="initial reproduction number R_0")
    p.add_argument("--eta", type=int, default=25, help="infectiousness support length")
    p.add_argument("--eta-tilde", type=int, default=5, help="admission-delay support length")
    p.add_argument("--n0", type=int, default=100, help="Monte Carlo samples per day")
    p.add_argument("--delta0", type=float, default=1e-3, help="stopping threshold")
    p.add_argument("--max-iter", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help=f"output directory (default ${OUTDIR_ENV})")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tsihosp",
        description="Joint incidence/hospitalization epidemic modeling: "
        "simulation, composite-likelihood MCEM estimation, and inference.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic epidemic")
    p.add_argument("--config", required=True, help="scenario TOML file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help=f"output directory (default ${OUTDIR_ENV})")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="fit the model to count series")
    _add_estimation_args(p)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("bootstrap", help="block-bootstrap confidence intervals")
    _add_estimation_args(p)
    p.add_argument("--block-len", type=int, default=None)
    p.add_argument("--replicates", type=int, default=200)
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--method", default="score", choices=["score", "refit"])
    p.set_defaults(func=cmd_bootstrap)

    p = sub.add_parser("compare", help="compare the fitted R_t to the sliding-window baseline")
    _add_estimation_args(p)
    p.add_argument("--window", type=int, default=3)
    p.add_argument("--report-at", default="midpoint", choices=["endpoint", "midpoint"])
    p.add_argument("--rt-true", help="optional oracle R_t CSV (day,r_true)")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("replicate", help="run the synthetic replication study")
    p.add_argument("--scenario", default="correct",
                   choices=["correct", "underreport_incidence", "underreport_both"])
    p.add_argument("--mode", default="known", choices=["known", "free", "gamma_parameterized"])
    p.add_argument("--reps", type=int, default=50)
    p.add_argument("--bootstrap-replicates", type=int, default=0)
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    p.add_argument("--out", help=f"output directory (default ${OUTDIR_ENV})")
    p.set_defaults(func=cmd_replicate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except EstimationError as exc:
        print(f"estimation failed: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
