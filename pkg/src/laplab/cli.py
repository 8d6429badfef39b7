"""Command-line front end.

Exit codes: 0 pass, 1 scientific failure (a hypothesis or a tested property
does not hold), 2 usage or configuration error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import contextlib
import io
import json
import sys
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import report as rp
from .config import RunConfig, apply_overrides, config_hash, dump_config, load_config
from .errors import ConfigError, NumericalFailure, RefusedError
from .hypotheses import HypothesisReport, evaluate, min_eig_sym
from .lattice import (Grid, OperatorSet, assemble_operators, build_grid, commutator_consistency,
                      write_coo)
from .normspace import NormContext, smoothness_weight, write_weights_csv
from .potentials import PotentialSpec, calibrate_resonant_well, from_id, parse_potential_id
from .resolvent import (dense_resolvent, eps_window_convergence, gaussian_test_vectors,
                        kato_smoothness_probe, lap_sweep, lowest_eigenvalue,
                        regularized_trace, shifted_solve, sweep_floor)

EXIT_PASS, EXIT_FAIL, EXIT_USAGE, EXIT_NUMERICAL = 0, 1, 2, 3
IDENTITY_TOL = 1e-10
DENSE_ORACLE_LIMIT = 500
MANIFEST = "manifest.json"
ARCHIVED_CONFIG = "config.ini"


@dataclass
class Setup:
    cfg: RunConfig
    grid: Grid
    potential: PotentialSpec
    report: HypothesisReport
    ops: Optional[OperatorSet]
    ctx: Optional[NormContext]
    calibration: Optional[object] = None

    @property
    def hash(self) -> str:
        return config_hash(self.cfg)

    def meta(self) -> dict:
        out = {
            "grid": self.grid.to_dict(),
            "potential_id": self.potential.id,
            "c1": self.ops.c1 if self.ops is not None else self.report.c1,
            "delta": self.cfg.potential.delta,
            "seed": self.cfg.run.seed,
            "solve_tol": self.cfg.run.solve_tol,
            "eig_tol": self.cfg.run.eig_tol,
        }
        if self.calibration is not None:
            out["calibration"] = vars(self.calibration)
        return out


def setup(cfg: RunConfig, force: bool = False) -> Setup:
    """Grid, potential, hypothesis report and operators for ``cfg``.

    With ``force`` the operators are assembled even when no ``c1`` can be
    selected, using the configured override or ``c1 = 0``; ``H`` does not
    depend on ``c1``.
    """
    g = cfg.grid
    grid = build_grid(g.dims, g.half_extent, g.points_per_axis, g.max_unknowns)
    potential = from_id(cfg.potential.id)
    calibration = None
    if cfg.potential.calibrate:
        name, params = parse_potential_id(cfg.potential.id)
        if name != "resonant_well":
            raise ConfigError("calibrate = true only applies to resonant_well")
        lo = params.get("height", 0.0)
        potential, calibration = calibrate_resonant_well(
            grid, params.get("eps", 1.0), params.get("mu", 1.0), params.get("width", 2.0),
            (lo, cfg.potential.calibrate_hi))
    report, ops = evaluate(potential, grid, cfg.potential.c1, cfg.run.eig_tol)
    ctx = None
    if ops is not None and report.lambda_min_S is not None and report.lambda_min_S > 0:
        ctx = NormContext(ops, cfg.potential.delta)
    elif ops is None and force:
        c1 = cfg.potential.c1 or 0.0
        ops = assemble_operators(grid, potential, c1)
        report.notes.append(f"forced: operators assembled with c1 = {c1} without a valid c1")
        try:
            ctx = NormContext(ops, cfg.potential.delta)
        except NumericalFailure:
            ctx = None
    return Setup(cfg, grid, potential, report, ops, ctx, calibration)


def _lambda_grid(cfg: RunConfig) -> np.ndarray:
    return np.linspace(cfg.lam.start, cfg.lam.stop, cfg.lam.count)


def _mu_schedule(cfg: RunConfig, floor: float) -> np.ndarray:
    end = floor if cfg.mu.floor is None else cfg.mu.floor
    if cfg.mu.count == 1:
        return np.array([cfg.mu.start])
    return np.geomspace(cfg.mu.start, end, cfg.mu.count)


def _prepare_out(cfg: RunConfig, command: str, options: dict) -> Path:
    out = Path(cfg.run.output)
    out.mkdir(parents=True, exist_ok=True)
    (out / ARCHIVED_CONFIG).write_text(dump_config(cfg))
    manifest = {"command": command, "options": options, "config_hash": config_hash(cfg)}
    (out / MANIFEST).write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    return out


def _gate(s: Setup, force: bool) -> bool:
    if s.report.passed:
        return True
    print(f"hypotheses not satisfied for {s.potential.id}: {s.report.conditions}", file=sys.stderr)
    return force


def cmd_check(cfg: RunConfig, export_coo: bool = False) -> int:
    out = _prepare_out(cfg, "check", {"export_coo": export_coo})
    s = setup(cfg)
    rp.write_json(out / "check.json", s.report.to_dict() | {"meta": s.meta()}, s.hash)
    if export_coo and s.ops is not None:
        for name in ("H", "K", "B", "S"):
            write_coo(out / f"{name}.coo", getattr(s.ops, name), s.grid.dims)
    if s.ctx is not None and s.ctx.weights is not None:
        write_weights_csv(s.ctx, out / "weights.csv")
    print(s.report.to_json())
    return EXIT_PASS if s.report.passed else EXIT_FAIL


def cmd_lap(cfg: RunConfig, force: bool = False) -> int:
    out = _prepare_out(cfg, "lap", {"force": force})
    s = setup(cfg, force)
    if not _gate(s, force) or s.ops is None:
        return EXIT_FAIL
    lams = _lambda_grid(cfg)
    spacing = sweep_floor(s.ops, lams)
    mus = _mu_schedule(cfg, spacing.floor)
    vecs, labels = gaussian_test_vectors(s.grid, s.ctx)
    res = lap_sweep(s.ops, s.ctx, vecs, lams, mus, labels=labels, spacing=spacing,
                    threads=cfg.run.threads)
    lam_min = lowest_eigenvalue(s.ops)
    rp.write_sweep_csv(out / "lap.csv", res, s.hash)
    rp.write_json(out / "lap.json", rp.sweep_payload(res, s.meta(), lam_min), s.hash)
    (out / "lap.gp").write_text(rp.gnuplot_sweep("lap.csv", res, s.hash))
    print(res.summary_line(lam_min))
    return EXIT_PASS if res.flat else EXIT_FAIL


def cmd_proof_trace(cfg: RunConfig, force: bool = False) -> int:
    out = _prepare_out(cfg, "proof-trace", {"force": force})
    s = setup(cfg, force)
    if not _gate(s, force) or s.ops is None or s.ctx is None:
        return EXIT_FAIL
    f, _ = gaussian_test_vectors(s.grid, s.ctx, sigmas=(1.0,), offsets=(0.0,))
    f = f[:, 0]
    e = cfg.epsilon
    trace = regularized_trace(s.ops, s.ctx, f, e.lam, e.mu,
                              _trace_schedule(s.ops, e.count), substeps=e.substeps,
                              seed=cfg.run.seed)
    conv = eps_window_convergence(s.ops, f, e.lam, e.mu, s.report.c2 or 0.0, seed=cfg.run.seed)
    rp.write_trace_csv(out / "trace.csv", trace, s.hash, conv)
    rp.write_json(out / "trace.json", rp.trace_payload(trace, s.meta(), conv), s.hash)
    (out / "trace.gp").write_text(rp.gnuplot_trace("trace.csv", s.hash))
    print(f"identity residual {trace.max_identity_residual:.3g}; S-norm bound "
          f"{trace.snorm_bound_holds()}; operator bound {trace.op_bound_holds()}; differential inequality "
          f"{trace.differential_inequality_holds()}; window slope {conv.slope:.4f}")
    if trace.max_identity_residual > IDENTITY_TOL:
        return EXIT_NUMERICAL
    ok = trace.snorm_bound_holds() and trace.op_bound_holds() and trace.differential_inequality_holds() and conv.passed
    return EXIT_PASS if ok else EXIT_FAIL


def _trace_schedule(ops: OperatorSet, count: int) -> np.ndarray:
    from .resolvent import default_schedule, eps0_bound
    return default_schedule(min(eps0_bound(ops), 1.0), count)


def cmd_smooth(cfg: RunConfig, force: bool = False) -> int:
    out = _prepare_out(cfg, "smooth", {"force": force})
    s = setup(cfg, force)
    if not _gate(s, force) or s.ops is None or s.ctx is None:
        return EXIT_FAIL
    if s.ctx.weights is None:
        print("refused: the smoothing weights need V(x) < 0 at every grid point", file=sys.stderr)
        return EXIT_FAIL
    weight = cfg.smooth.weight
    if weight == "L_max":
        L = smoothness_weight(s.ctx)
    elif weight == "one":
        L = np.ones(s.grid.size)
    else:
        L = np.zeros(s.grid.size)
    lams = _lambda_grid(cfg)
    spacing = sweep_floor(s.ops, lams)
    mus = _mu_schedule(cfg, spacing.floor)
    try:
        rep = kato_smoothness_probe(s.ops, s.ctx, L, lams, mus, cfg.smooth.samples,
                                    cap=cfg.smooth.cap, override=force, seed=cfg.run.seed,
                                    spacing=spacing, threads=cfg.run.threads)
    except RefusedError as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return EXIT_FAIL
    rp.write_smooth_csv(out / "smooth.csv", rep, s.hash)
    rp.write_json(out / "smooth.json", rp.smooth_payload(rep, s.meta()), s.hash)
    (out / "smooth.gp").write_text(rp.gnuplot_smooth("smooth.csv", s.hash))
    print(f"domination constant {rep.domination_constant:.6g}, sup {rep.sup:.6g}, "
          f"flat: {str(rep.flat).lower()}, growth: {str(rep.growth).lower()}")
    return EXIT_PASS if rep.flat else EXIT_FAIL


def cmd_oracle_test(cfg: RunConfig, cells: int = 50) -> int:
    out = _prepare_out(cfg, "oracle-test", {"cells": cells})
    s = setup(cfg)
    if s.grid.size > DENSE_ORACLE_LIMIT:
        raise RefusedError(f"dense oracle limited to {DENSE_ORACLE_LIMIT} unknowns, "
                           f"grid has {s.grid.size}")
    if s.ops is None:
        return EXIT_FAIL
    rng = np.random.default_rng(cfg.run.seed)
    worst = 0.0
    for _ in range(cells):
        lam = rng.uniform(cfg.lam.start - 1.0, cfg.lam.stop + 1.0)
        mu = 10 ** rng.uniform(-2, 0)
        branch = "+" if rng.random() < 0.5 else "-"
        f = rng.standard_normal(s.grid.size)
        g = shifted_solve(s.ops, lam, mu, 0.0, branch, f, cfg.run.solve_tol)
        ref = dense_resolvent(s.ops.H, lam, mu, branch, f)
        worst = max(worst, float(np.linalg.norm(g - ref) / np.linalg.norm(ref)))
    lam_sparse, _ = min_eig_sym(s.ops.S, cfg.run.eig_tol)
    lam_dense = float(np.linalg.eigvalsh(s.ops.S.toarray())[0])
    eig_rel = abs(lam_sparse - lam_dense) / max(abs(lam_dense), 1e-300)
    passed = worst <= 1e-8 and eig_rel <= 1e-8
    rp.write_json(out / "oracle.json", {"cells": cells, "max_relative_error": worst,
                                        "lambda_min_S_relative_error": eig_rel,
                                        "passed": passed, "meta": s.meta()}, s.hash)
    print(f"resolvent oracle max relative error {worst:.3g}; lambda_min(S) relative error "
          f"{eig_rel:.3g}; passed: {str(passed).lower()}")
    return EXIT_PASS if passed else EXIT_FAIL


def cmd_commutator_test(cfg: RunConfig, sigma: float = 1.0) -> int:
    out = _prepare_out(cfg, "commutator-test", {"sigma": sigma})
    g = cfg.grid
    grid = build_grid(g.dims, g.half_extent, g.points_per_axis, g.max_unknowns)
    potential = from_id(cfg.potential.id)
    c1 = cfg.potential.c1 or 0.0
    rep = commutator_consistency(grid, potential,
                                 lambda p: np.exp(-np.sum(p * p, axis=1) / (2 * sigma * sigma)), c1)
    passed = rep.boundary_clear and 3.0 <= rep.ratio <= 5.0
    rp.write_json(out / "commutator.json", {"residual_h": rep.residual_h, "residual_h2": rep.residual_h2,
                                            "ratio": rep.ratio, "boundary_clear": rep.boundary_clear,
                                            "passed": passed, "potential_id": potential.id,
                                            "grid": grid.to_dict()}, config_hash(cfg))
    print(f"r(h) = {rep.residual_h:.6g}, r(h/2) = {rep.residual_h2:.6g}, ratio {rep.ratio:.4f}, "
          f"boundary clear: {str(rep.boundary_clear).lower()}")
    return EXIT_PASS if passed else EXIT_FAIL


COMMANDS = {
    "check": lambda cfg, a: cmd_check(cfg, a.get("export_coo", False)),
    "lap": lambda cfg, a: cmd_lap(cfg, a.get("force", False)),
    "proof-trace": lambda cfg, a: cmd_proof_trace(cfg, a.get("force", False)),
    "smooth": lambda cfg, a: cmd_smooth(cfg, a.get("force", False)),
    "oracle-test": lambda cfg, a: cmd_oracle_test(cfg, a.get("cells", 50)),
    "commutator-test": lambda cfg, a: cmd_commutator_test(cfg, a.get("sigma", 1.0)),
}


def _embedded_hashes(path: Path) -> list:
    found = []
    for p in sorted(path.iterdir()):
        if p.suffix in (".csv", ".gp"):
            first = p.read_text().splitlines()[:1]
            found.append((p.name, first[0].partition("=")[2] if first and
                          first[0].startswith("# config_hash=") else None))
        elif p.suffix == ".json" and p.name != MANIFEST:
            found.append((p.name, json.loads(p.read_text()).get("config_hash")))
    return found


def cmd_reproduce(directory) -> int:
    """Rerun the archived config of ``directory`` and compare CSV outputs byte for byte."""
    d = Path(directory)
    if not (d / ARCHIVED_CONFIG).is_file() or not (d / MANIFEST).is_file():
        print(f"rejected: {d} has no archived {ARCHIVED_CONFIG} and {MANIFEST}", file=sys.stderr)
        return EXIT_USAGE
    cfg = load_config(d / ARCHIVED_CONFIG)
    manifest = json.loads((d / MANIFEST).read_text())
    h = config_hash(cfg)
    if manifest.get("config_hash") != h:
        print("rejected: manifest hash does not match the archived config", file=sys.stderr)
        return EXIT_USAGE
    for name, embedded in _embedded_hashes(d):
        if embedded != h:
            print(f"rejected: {name} carries hash {embedded}, archived config hashes to {h}",
                  file=sys.stderr)
            return EXIT_USAGE
    with tempfile.TemporaryDirectory() as tmp:
        cfg.run.output = tmp
        with contextlib.redirect_stdout(io.StringIO()):
            COMMANDS[manifest["command"]](cfg, manifest.get("options", {}))
        mismatched = []
        originals = sorted(p.name for p in d.glob("*.csv"))
        for name in originals:
            fresh = Path(tmp) / name
            if not fresh.is_file() or fresh.read_bytes() != (d / name).read_bytes():
                mismatched.append(name)
    if mismatched:
        print(f"not reproduced: {', '.join(mismatched)}")
        return EXIT_FAIL
    print(f"reproduced {len(originals)} CSV file(s) byte for byte (config {h})")
    return EXIT_PASS


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="laplab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp_):
        sp_.add_argument("--config", help="INI run configuration")
        sp_.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                         help="override one config entry (repeatable)")
        sp_.add_argument("--potential", help="potential id, e.g. inverse_power:eps=1,mu=1")
        sp_.add_argument("--out", help="output directory")
        sp_.add_argument("--threads", type=int, help="worker threads (LAPLAB_THREADS wins)")
        return sp_

    c = common(sub.add_parser("check", help="verify the hypotheses and write the report"))
    c.add_argument("--export-coo", action="store_true", help="also write H, K, B, S as COO text")
    for name, text in (("lap", "resolvent sweep over (lambda, mu)"),
                       ("proof-trace", "regularized-resolvent trace along an eps schedule"),
                       ("smooth", "sandwiched imaginary resolvent sweep")):
        c = common(sub.add_parser(name, help=text))
        c.add_argument("--force", action="store_true",
                       help="run even when the gate fails (smooth: skip the domination cap)")
    c = common(sub.add_parser("oracle-test", help="sparse solves against a dense eigendecomposition"))
    c.add_argument("--cells", type=int, default=50)
    c = common(sub.add_parser("commutator-test", help="two-grid check of the matrix commutator"))
    c.add_argument("--sigma", type=float, default=1.0)
    r = sub.add_parser("reproduce", help="rerun an output directory and compare CSVs")
    r.add_argument("directory")
    return p


def _resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    sets = list(args.set)
    if args.potential:
        sets.append(f"potential.id={args.potential}")
    if args.out:
        sets.append(f"run.output={args.out}")
    if args.threads is not None:
        sets.append(f"run.threads={args.threads}")
    return apply_overrides(cfg, sets)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "reproduce":
            return cmd_reproduce(args.directory)
        cfg = _resolve_config(args)
        options = {k: v for k, v in vars(args).items()
                   if k in ("export_coo", "force", "cells", "sigma")}
        return COMMANDS[args.command](cfg, options)
    except (ConfigError, RefusedError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
