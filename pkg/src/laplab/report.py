"""CSV, JSON and gnuplot emission for sweep, trace and smoothness results.

Floats are written with ``repr`` so files round-trip exactly and are
byte-identical across reruns.  Every file carries the config hash: CSV and
gnuplot files on a leading ``#`` line, JSON under ``config_hash``.
"""
from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Optional

import numpy as np

from .resolvent import LapSweepResult, RegularizedTrace, SmoothnessReport

CSV_COLUMNS = ("kind", "lambda", "mu", "epsilon", "branch", "vector", "re_F", "im_F",
               "normalized", "exponent", "stderr", "tag")


def _f(x) -> str:
    if x is None:
        return ""
    x = float(x)
    if math.isnan(x):
        return "nan"
    return repr(x)


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (complex, np.complexfloating)):
        return [_jsonable(x.real), _jsonable(x.imag)]
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    return x


def write_json(path, payload: dict, config_hash: str) -> None:
    body = dict(payload)
    body["config_hash"] = config_hash
    Path(path).write_text(json.dumps(_jsonable(body), sort_keys=True, indent=2) + "\n")


def _write_csv(path, rows, config_hash: str) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(f"# config_hash={config_hash}\n")
        fh.write(",".join(CSV_COLUMNS) + "\n")
        for row in rows:
            fh.write(",".join(row) + "\n")


def _row(kind, lam="", mu="", eps="", branch="", vector="", re="", im="", norm="",
         exponent="", stderr="", tag=""):
    return [kind, lam, mu, eps, branch, vector, re, im, norm, exponent, stderr, tag]


def sweep_rows(res: LapSweepResult) -> list:
    rows = []
    for i, lam in enumerate(res.lambda_grid):
        tag = "" if res.in_scope[i] else "outside theorem scope"
        for j, mu in enumerate(res.mu_schedule):
            for k, label in enumerate(res.vector_labels):
                v = res.values[i, j, k]
                rows.append(_row("cell", _f(lam), _f(mu), _f(0.0), "+", label, _f(v.real),
                                 _f(v.imag), _f(res.normalized[i, j, k]), tag=tag))
    for i, lam in enumerate(res.lambda_grid):
        tag = "" if res.in_scope[i] else "outside theorem scope"
        for k, label in enumerate(res.vector_labels):
            rows.append(_row("exponent", _f(lam), vector=label, exponent=_f(res.exponents[i, k]),
                             stderr=_f(res.exponent_stderr[i, k]), tag=tag))
        flag = "flat" if res.lambda_exponents[i] < res.flat_threshold else "growth"
        rows.append(_row("exponent_max", _f(lam), exponent=_f(res.lambda_exponents[i]),
                         tag=tag or flag))
    return rows


def write_sweep_csv(path, res: LapSweepResult, config_hash: str) -> None:
    _write_csv(path, sweep_rows(res), config_hash)


def sweep_payload(res: LapSweepResult, meta: dict,
                  lambda_min_H: Optional[float] = None) -> dict:
    return {
        "kind": "lap_sweep",
        "meta": meta,
        "lambda_grid": res.lambda_grid,
        "mu_schedule": res.mu_schedule,
        "vector_labels": res.vector_labels,
        "surrogate_norms": res.surrogate_norms,
        "exponents": res.exponents,
        "exponent_stderr": res.exponent_stderr,
        "lambda_exponents": res.lambda_exponents,
        "in_scope": res.in_scope,
        "floor": res.floor,
        "spacing": res.spacing,
        "flat": res.flat,
        "flagged_lambdas": res.flagged,
        "sup_normalized": res.sup_normalized,
        "lambda_min_H": lambda_min_H,
        "summary": res.summary_line(lambda_min_H),
        "notes": res.notes,
    }


def trace_rows(tr: RegularizedTrace) -> list:
    rows = []
    for b in "+-":
        for k, e in enumerate(tr.epsilon_schedule):
            F = tr.F[b][k]
            rows.append(_row("trace", _f(tr.lam), _f(tr.mu), _f(e), b, "f", _f(F.real),
                             _f(F.imag), _f(abs(F) / tr.surrogate_norm ** 2 if tr.surrogate_norm else math.nan)))
        for k, e in enumerate(tr.epsilon_schedule):
            d = tr.derivative_estimates[b][k]
            rows.append(_row("derivative", _f(tr.lam), _f(tr.mu), _f(e), b, "f", _f(d.real), _f(d.imag)))
        for k, e in enumerate(tr.epsilon_schedule):
            rows.append(_row("slack_differential", _f(tr.lam), _f(tr.mu), _f(e), b, "f",
                             _f(tr.inequality_residuals[b][k])))
            rows.append(_row("slack_snorm", _f(tr.lam), _f(tr.mu), _f(e), b, "f",
                             _f(tr.snorm_slack[b][k])))
        lim = tr.limits[b]
        rows.append(_row("limit", _f(tr.lam), _f(tr.mu), _f(0.0), b, "f", _f(lim.real), _f(lim.imag)))
    for k, e in enumerate(tr.epsilon_schedule):
        rows.append(_row("ratio_op", _f(tr.lam), _f(tr.mu), _f(e), "+", "samples",
                         _f(tr.op_ratio[k]), tag=_f(tr.op_constant[k])))
        rows.append(_row("ratio_smoothing", _f(tr.lam), _f(tr.mu), _f(e), "", "f", _f(tr.smoothing_ratio[k])))
        rows.append(_row("identity", _f(tr.lam), _f(tr.mu), _f(e), "", "f", _f(tr.identity_residual[k])))
    return rows


def write_trace_csv(path, tr: RegularizedTrace, config_hash: str, convergence=None) -> None:
    rows = trace_rows(tr)
    if convergence is not None:
        rows.append(_row("window", _f(tr.lam), _f(tr.mu), _f(0.0), "+", "f", _f(convergence.zero_difference)))
        for e, d in zip(convergence.epsilons, convergence.differences):
            rows.append(_row("window", _f(tr.lam), _f(tr.mu), _f(e), "+", "f", _f(d)))
        rows.append(_row("window_slope", _f(tr.lam), _f(tr.mu), exponent=_f(convergence.slope),
                         stderr=_f(convergence.stderr)))
    _write_csv(path, rows, config_hash)


def trace_payload(tr: RegularizedTrace, meta: dict, convergence=None) -> dict:
    out = {
        "kind": "regularized_trace",
        "meta": meta,
        "lambda": tr.lam,
        "mu": tr.mu,
        "c1": tr.c1,
        "eps0": tr.eps0,
        "eps1": tr.eps1,
        "epsilon_schedule": tr.epsilon_schedule,
        "F_plus": tr.F_plus,
        "F_minus": tr.F_minus,
        "limits": tr.limits,
        "direct_value": tr.direct_value,
        "form_norm_BA": tr.form_norm_BA,
        "surrogate_norm": tr.surrogate_norm,
        "gronwall_constant": tr.gronwall_constant,
        "max_identity_residual": tr.max_identity_residual,
        "snorm_bound": tr.snorm_bound_holds(),
        "op_bound": tr.op_bound_holds(),
        "differential_inequality": tr.differential_inequality_holds(),
        "notes": tr.notes,
    }
    if convergence is not None:
        out["window"] = {
            "eps2": convergence.eps2,
            "epsilons": convergence.epsilons,
            "differences": convergence.differences,
            "slope": convergence.slope,
            "stderr": convergence.stderr,
            "contraction_max": convergence.contraction_max,
            "passed": convergence.passed,
        }
    return out


def smooth_rows(rep: SmoothnessReport) -> list:
    rows = []
    for i, lam in enumerate(rep.lambda_grid):
        for j, mu in enumerate(rep.mu_schedule):
            rows.append(_row("cell", _f(lam), _f(mu), vector="L", norm=_f(rep.values[i, j])))
        rows.append(_row("exponent_max", _f(lam), exponent=_f(rep.exponents[i])))
    return rows


def write_smooth_csv(path, rep: SmoothnessReport, config_hash: str) -> None:
    _write_csv(path, smooth_rows(rep), config_hash)


def smooth_payload(rep: SmoothnessReport, meta: dict) -> dict:
    return {
        "kind": "smoothness",
        "meta": meta,
        "lambda_grid": rep.lambda_grid,
        "mu_schedule": rep.mu_schedule,
        "exponents": rep.exponents,
        "domination_constant": rep.domination_constant,
        "overridden": rep.overridden,
        "floor": rep.floor,
        "sup": rep.sup,
        "flat": rep.flat,
        "growth": rep.growth,
    }


def gnuplot_sweep(csv_name: str, res: LapSweepResult, config_hash: str) -> str:
    """Script plotting ``|F|`` against ``mu`` per ``lambda`` and the exponent summary."""
    lines = [
        f"# config_hash={config_hash}",
        "set datafile separator ','",
        "set key outside right",
        "set logscale xy",
        "set xlabel 'mu'",
        "set ylabel '|F| / surrogate norm^2'",
        "set terminal pngcairo size 1000,700",
        "set output 'lap_abs.png'",
    ]
    label = res.vector_labels[0] if res.vector_labels else ""
    parts = []
    for lam in res.lambda_grid:
        parts.append(f"'{csv_name}' using ($2=={float(lam)!r} && strcol(1) eq 'cell' && "
                     f"strcol(6) eq '{label}' ? $3 : 1/0):9 with linespoints title 'lambda={lam:g}'")
    lines.append("plot " + ", \\\n     ".join(parts))
    lines += [
        "unset logscale",
        "set output 'lap_exponents.png'",
        "set xlabel 'lambda'",
        "set ylabel 'growth exponent'",
        f"set arrow from graph 0, first {res.flat_threshold!r} to graph 1, first "
        f"{res.flat_threshold!r} nohead dt 2",
        f"plot '{csv_name}' using (strcol(1) eq 'exponent_max' ? $2 : 1/0):10 "
        "with linespoints title 'max over vectors'",
        "",
    ]
    return "\n".join(lines)


def gnuplot_trace(csv_name: str, config_hash: str) -> str:
    return "\n".join([
        f"# config_hash={config_hash}",
        "set datafile separator ','",
        "set logscale x",
        "set xlabel 'epsilon'",
        "set terminal pngcairo size 1000,700",
        "set output 'trace_F.png'",
        f"plot '{csv_name}' using (strcol(1) eq 'trace' && strcol(5) eq '+' ? $4 : 1/0):7 "
        "with linespoints title 'Re F+', \\",
        f"     '{csv_name}' using (strcol(1) eq 'trace' && strcol(5) eq '+' ? $4 : 1/0):8 "
        "with linespoints title 'Im F+'",
        "set output 'trace_slack.png'",
        "set logscale y",
        f"plot '{csv_name}' using (strcol(1) eq 'slack_differential' && strcol(5) eq '+' ? $4 : 1/0):7 "
        "with linespoints title 'slack of the differential inequality'",
        "",
    ])


def gnuplot_smooth(csv_name: str, config_hash: str) -> str:
    return "\n".join([
        f"# config_hash={config_hash}",
        "set datafile separator ','",
        "set logscale xy",
        "set xlabel 'mu'",
        "set ylabel 'sup <Lg, Im R Lg>'",
        "set terminal pngcairo size 1000,700",
        "set output 'smooth.png'",
        f"plot '{csv_name}' using (strcol(1) eq 'cell' ? $3 : 1/0):9 with points title 'cells'",
        "",
    ])
