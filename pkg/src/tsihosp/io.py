"""CSV/JSON serialization with byte-reproducible output.

All writers format floats with ``repr`` (shortest round-trip) and emit JSON
with sorted keys, so re-running a command with identical inputs and seed
reproduces identical bytes.
"""

from __future__ import annotations

import csv
import json
import math

import numpy as np

from .inference import BootstrapResult, ReplicationReport
from .mcem import MCEMTrace, PriorCandidate
from .model import (
    EpidemicSeries,
    HospitalizationPropensity,
    InfectiousnessFunction,
    LatentAdmissions,
    ModelParams,
    RegressionSpec,
    param_names,
    param_values,
)

RESULT_SCHEMA_VERSION = 1


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


# ---------------------------------------------------------------------------
# epidemic series
# ---------------------------------------------------------------------------


def write_series_csv(path, series: EpidemicSeries) -> None:
    """Columns: day,incidence,hospitalizations,z1..zk."""
    k = series.covariates.shape[1]
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["day", "incidence", "hospitalizations"] + [f"z{j + 1}" for j in range(k)])
        for t in range(series.horizon + 1):
            row = [t, int(series.incidence[t]), int(series.hospitalizations[t])]
            row += [_fmt(series.covariates[t, j]) for j in range(k)]
            out.writerow(row)


def read_series_csv(path) -> EpidemicSeries:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    if header[:3] != ["day", "incidence", "hospitalizations"]:
        raise ValueError(f"{path}: expected day,incidence,hospitalizations,z... header")
    k = len(header) - 3
    days, inc, hosp, z = [], [], [], []
    for row in rows[1:]:
        days.append(int(row[0]))
        inc.append(int(row[1]))
        hosp.append(int(row[2]))
        z.append([float(v) for v in row[3 : 3 + k]])
    if days != list(range(len(days))):
        raise ValueError(f"{path}: days must be the contiguous range 0..T")
    return EpidemicSeries(np.array(inc), np.array(hosp), np.array(z).reshape(len(days), k))


def write_latent_csv(path, latents: LatentAdmissions) -> None:
    """Columns: day,delay,count with delay -1 meaning never admitted."""
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["day", "delay", "count"])
        for t in range(latents.counts.shape[0]):
            for s in range(-1, latents.eta_tilde + 1):
                out.writerow([t, s, int(latents.counts[t, 1 + s])])


def read_latent_csv(path) -> LatentAdmissions:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if rows[0] != ["day", "delay", "count"]:
        raise ValueError(f"{path}: expected day,delay,count header")
    entries = [(int(d), int(s), int(c)) for d, s, c in rows[1:]]
    n_days = max(e[0] for e in entries) + 1
    eta_tilde = max(e[1] for e in entries)
    counts = np.zeros((n_days, eta_tilde + 2), dtype=np.int64)
    for d, s, c in entries:
        counts[d, 1 + s] = c
    return LatentAdmissions(counts)


def write_rt_csv(path, rt, label: str = "r") -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["day", label])
        for t, value in enumerate(np.asarray(rt, dtype=float)):
            out.writerow([t, _fmt(value)])


def write_band_csv(path, value, lower, upper, start_day: int = 0) -> None:
    """Plot-data band: day,value,lower,upper."""
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["day", "value", "lower", "upper"])
        for i, (v, lo, hi) in enumerate(zip(value, lower, upper)):
            out.writerow([start_day + i, _fmt(v), _fmt(lo), _fmt(hi)])


def write_compare_csv(path, days, r_true, r_mcem, r_cori_end, r_cori_mid) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["day", "r_true", "r_mcem", "r_cori_end", "r_cori_mid"])
        for i, t in enumerate(days):
            row = [t]
            for arr in (r_true, r_mcem, r_cori_end, r_cori_mid):
                v = float(arr[i]) if arr is not None else math.nan
                row.append("" if math.isnan(v) else _fmt(v))
            out.writerow(row)


# ---------------------------------------------------------------------------
# delay distributions and priors
# ---------------------------------------------------------------------------


def write_delays_csv(path, omega: InfectiousnessFunction, omega_tilde: HospitalizationPropensity) -> None:
    """Columns: kind,index,value (index -1 holds the never-admitted mass)."""
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["kind", "index", "value"])
        for s, v in enumerate(omega.weights, start=1):
            out.writerow(["omega", s, _fmt(v)])
        out.writerow(["omega_tilde", -1, _fmt(omega_tilde.never)])
        for s, v in enumerate(omega_tilde.weights):
            out.writerow(["omega_tilde", s, _fmt(v)])


def read_delays_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if rows[0] != ["kind", "index", "value"]:
        raise ValueError(f"{path}: expected kind,index,value header")
    omega_entries, tilde_entries = {}, {}
    for kind, idx, value in rows[1:]:
        (omega_entries if kind == "omega" else tilde_entries)[int(idx)] = float(value)
    eta = max(omega_entries)
    weights = np.array([omega_entries.get(s, 0.0) for s in range(1, eta + 1)])
    eta_tilde = max(tilde_entries)
    never = tilde_entries.get(-1, 0.0)
    tilde = np.array([tilde_entries.get(s, 0.0) for s in range(eta_tilde + 1)])
    return InfectiousnessFunction(weights), HospitalizationPropensity(never=never, weights=tilde)


def read_priors_csv(path) -> list:
    """Columns: k1,mu1,k2,mu2,weight (one prior study per row)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if rows[0] != ["k1", "mu1", "k2", "mu2", "weight"]:
        raise ValueError(f"{path}: expected k1,mu1,k2,mu2,weight header")
    return [
        PriorCandidate(
            k1=float(r[0]), mu1=float(r[1]), k2=float(r[2]), mu2=float(r[3]),
            weight=float(r[4]),
        )
        for r in rows[1:]
    ]


def write_priors_csv(path, candidates) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["k1", "mu1", "k2", "mu2", "weight"])
        for c in candidates:
            out.writerow([_fmt(c.k1), _fmt(c.mu1), _fmt(c.k2), _fmt(c.mu2), _fmt(c.weight)])


# ---------------------------------------------------------------------------
# traces, results, reports
# ---------------------------------------------------------------------------


def write_trace_csv(path, trace: MCEMTrace, spec: RegressionSpec) -> None:
    """Columns: iteration,loglik,<parameter columns>,acceptance_rate."""
    if not trace.params:
        raise ValueError("empty trace")
    p0 = trace.params[0]
    names = param_names(spec, p0.omega.eta, p0.omega_tilde.eta_tilde)
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["iteration", "loglik"] + names + ["acceptance_rate"])
        for i, params in enumerate(trace.params):
            row = [i, _fmt(trace.loglik[i])]
            row += [_fmt(v) for v in param_values(params)]
            row.append(_fmt(trace.acceptance_rate[i]))
            out.writerow(row)


def params_to_dict(params: ModelParams, spec: RegressionSpec) -> dict:
    names = param_names(spec, params.omega.eta, params.omega_tilde.eta_tilde)
    return {name: float(v) for name, v in zip(names, param_values(params))}


def result_to_dict(fit, spec: RegressionSpec, mode: str, seed: int) -> dict:
    """result.json payload for an estimation run."""
    return {
        "schema_version": RESULT_SCHEMA_VERSION,
        "mode": mode,
        "seed": int(seed),
        "params": params_to_dict(fit.params, spec),
        "eta": fit.params.omega.eta,
        "eta_tilde": fit.params.omega_tilde.eta_tilde,
        "rt": [float(v) for v in fit.rt],
        "trace_summary": {
            "iterations": int(fit.iterations),
            "converged": bool(fit.converged),
            "final_loglik_estimate": float(fit.trace.loglik[-1]) if len(fit.trace) else None,
            "final_acceptance_rate": float(fit.trace.acceptance_rate[-1]) if len(fit.trace) else None,
        },
        "flags": list(fit.flags),
    }


def bootstrap_to_dict(result: BootstrapResult) -> dict:
    return {
        "schema_version": RESULT_SCHEMA_VERSION,
        "level": result.level,
        "replicates": result.replicates,
        "failed": result.failed,
        "params": {
            name: {
                "point": float(p),
                "lower": float(lo),
                "upper": float(hi),
            }
            for name, p, lo, hi in zip(result.names, result.point, result.lower, result.upper)
        },
        "warnings": list(result.warnings_),
    }


def report_to_dict(report: ReplicationReport) -> dict:
    return {
        "schema_version": RESULT_SCHEMA_VERSION,
        "replicates": report.replicates,
        "failed": report.failed,
        "level": report.level,
        "parameters": {
            name: report.row(name) for name in report.names
        },
        "flags": list(report.flags),
    }


def write_bootstrap_csv(path, result: BootstrapResult) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["parameter", "point", "lower", "upper"])
        for name, p, lo, hi in zip(result.names, result.point, result.lower, result.upper):
            out.writerow([name, _fmt(p), _fmt(lo), _fmt(hi)])


def write_report_csv(path, report: ReplicationReport) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["parameter", "truth", "mean", "bias", "rel_bias", "se", "coverage"])
        for name in report.names:
            row = report.row(name)
            out.writerow(
                [name] + [_fmt(row[k]) for k in ("truth", "mean", "bias", "rel_bias", "se", "coverage")]
            )


def write_json(path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)
