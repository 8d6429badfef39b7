"""Acceptance criteria, one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -v``; each test writes its line to
the terminal even when output capture is on.  Tolerances are pinned here.
"""
import time

import numpy as np
import pytest

from conftest import gaussian
from laplab import hypotheses as hy
from laplab import potentials as pl
from laplab.cli import main
from laplab.lattice import assemble_operators, build_grid, commutator_consistency
from laplab.normspace import CayleyFlow, NormContext, smoothness_weight
from laplab.resolvent import (BLOWUP_THRESHOLD, FLAT_THRESHOLD, bou_identity_check,
                              dense_resolvent, eps0_bound, eps_window_convergence,
                              gaussian_test_vectors, kato_smoothness_probe, lap_sweep,
                              lowest_eigenvalue, regularized_trace, shifted_solve, sweep_floor)

IDENTITY_TOL = 1e-10
ORACLE_TOL = 1e-8
RATIO_RANGE = (3.0, 5.0)
C_TILDE_TOL = 1e-6
SLOPE_RANGE = (0.9, 1.1)
LAMBDA_MIN_TARGET = -0.05
DECADES = 5.0
SUP_STABILITY = 2.0
DRIFT_TOL = 1e-12
COMPOSITION_TOL = 1e-8

# headline sweep protocol
DEEP_WELL = pl.inverse_power(20.0, 0.5)
SWEEP_R = 100.0
SWEEP_N = (1001, 2001)
SWEEP_LAMBDAS = np.linspace(0.0, 2.0, 21)
SWEEP_MU_COUNT = 8


def verdict(capsys, k, passed, detail, elapsed):
    with capsys.disabled():
        print(f"\ncriterion {k}: {'PASS' if passed else 'FAIL'} ({elapsed:.1f} s) {detail}")


def sweep(spec, N, lambdas=SWEEP_LAMBDAS, mu_count=SWEEP_MU_COUNT):
    grid = build_grid(1, SWEEP_R, N)
    report, ops = hy.evaluate(spec, grid)
    if ops is None:
        # no admissible c1; H does not depend on it, and c1 = 0 keeps every cell in scope
        ops = assemble_operators(grid, spec, 0.0)
    ctx = NormContext(ops)
    F, labels = gaussian_test_vectors(grid, ctx)
    spacing = sweep_floor(ops, SWEEP_LAMBDAS)
    mus = np.geomspace(1.0, spacing.floor, mu_count)
    res = lap_sweep(ops, ctx, F, lambdas, mus, labels=labels, spacing=spacing)
    return res, report, ops, ctx, spacing


def test_criterion_1_identity(capsys):
    t0 = time.perf_counter()
    report, ops = hy.evaluate(pl.inverse_power(1.0, 1.0), build_grid(1, 20.0, 401))
    eps0 = eps0_bound(ops)
    rng = np.random.default_rng(0)
    worst, margin_ok = 0.0, True
    for _ in range(200):
        f = rng.standard_normal(ops.n) + 1j * rng.standard_normal(ops.n)
        lam = rng.uniform(-2.0, 3.0)
        mu = 10 ** rng.uniform(-3, 1)
        eps = rng.uniform(0.01, 0.99) * eps0
        chk = bou_identity_check(ops, f, lam, mu, eps, rng.choice(["+", "-"]))
        worst = max(worst, chk.residual)
        if chk.in_scope:
            margin_ok &= chk.margin >= chk.s_form - 1e-10
    elapsed = time.perf_counter() - t0
    passed = worst <= IDENTITY_TOL and margin_ok and elapsed < 10
    verdict(capsys, 1, passed, f"max residual {worst:.2e}, margin dominates <f,Sf>: {margin_ok}",
            elapsed)
    assert passed


def test_criterion_2_oracle(capsys):
    t0 = time.perf_counter()
    worst = 0.0
    rng = np.random.default_rng(1)
    for N in (201, 401):
        report, ops = hy.evaluate(pl.inverse_power(1.0, 1.0), build_grid(1, 20.0, N))
        H = ops.H.toarray()
        vals, vecs = np.linalg.eigh(H)
        for _ in range(50):
            lam, mu = rng.uniform(-1.0, 3.0), 10 ** rng.uniform(-2, 0)
            branch = rng.choice(["+", "-"])
            f = rng.standard_normal(ops.n)
            g = shifted_solve(ops, lam, mu, 0.0, branch, f)
            s = 1.0 if branch == "+" else -1.0
            ref = vecs @ ((vecs.T @ f) / (vals - lam - 1j * s * mu))
            worst = max(worst, np.linalg.norm(g - ref) / np.linalg.norm(ref))
    elapsed = time.perf_counter() - t0
    passed = worst <= ORACLE_TOL and elapsed < 30
    verdict(capsys, 2, passed, f"max relative error {worst:.2e} over 100 cells, N = 201 and 401",
            elapsed)
    assert passed


def test_criterion_3_commutator(capsys):
    t0 = time.perf_counter()
    ratios = []
    for spec in (pl.zero(), pl.inverse_power(1.0, 1.0)):
        for sigma in (0.75, 1.0):
            rep = commutator_consistency(build_grid(1, 10.0, 201), spec,
                                         lambda p, s=sigma: np.exp(-p[:, 0] ** 2 / (2 * s * s)))
            ratios.append(rep.ratio if rep.boundary_clear else np.nan)
    elapsed = time.perf_counter() - t0
    passed = all(RATIO_RANGE[0] <= r <= RATIO_RANGE[1] for r in ratios) and elapsed < 20
    verdict(capsys, 3, passed, "ratios " + ", ".join(f"{r:.4f}" for r in ratios), elapsed)
    assert passed


def test_criterion_4_constants(capsys):
    t0 = time.perf_counter()
    R = 20.0
    grid = build_grid(1, R, 401)
    errs, tails = [], []
    for mu_exp in (0.5, 1.0, 1.5):
        rep = hy.check_conditions(pl.inverse_power(1.0, mu_exp), grid)
        errs.append(abs(rep.c_tilde - mu_exp * R * R / (1 + R * R)))
        tails.append(rep.c_tilde_tail == mu_exp)
    g = hy.check_conditions(pl.gaussian_well(1.0), grid)
    elapsed = time.perf_counter() - t0
    passed = max(errs) <= C_TILDE_TOL and all(tails) and not g.conditions["ii"] and elapsed < 10
    verdict(capsys, 4, passed, f"max c_tilde error {max(errs):.2e}, tails exact: {all(tails)}, "
            f"gaussian fails (ii): {not g.conditions['ii']}", elapsed)
    assert passed


def test_criterion_5_trace_bounds(capsys):
    t0 = time.perf_counter()
    report, ops = hy.evaluate(pl.inverse_power(1.0, 1.0), build_grid(1, 20.0, 401))
    ctx = NormContext(ops)
    f = gaussian(ops.grid)
    ok = []
    for lam, mu in ((1.0, 0.5), (0.0, 0.1), (2.0, 0.05)):
        tr = regularized_trace(ops, ctx, f, lam, mu)
        ok.append((tr.snorm_bound_holds(), tr.op_bound_holds(), tr.differential_inequality_holds()))
    elapsed = time.perf_counter() - t0
    passed = all(all(x) for x in ok) and elapsed < 120
    verdict(capsys, 5, passed, "(S-norm, operator, differential) per point: " + str(ok), elapsed)
    assert passed


def test_criterion_6_window(capsys):
    t0 = time.perf_counter()
    grid = build_grid(1, 20.0, 401)
    slopes = []
    for spec, c1 in ((pl.zero(), 0.0), (pl.inverse_power(1.0, 1.0), None),
                     (pl.inverse_power(1.0, 1.9), None)):
        report, ops = hy.evaluate(spec, grid, c1=c1)
        rep = eps_window_convergence(ops, gaussian(grid), 1.0, 0.5, report.c2)
        slopes.append(rep.slope)
    elapsed = time.perf_counter() - t0
    passed = all(SLOPE_RANGE[0] <= s <= SLOPE_RANGE[1] for s in slopes) and elapsed < 60
    verdict(capsys, 6, passed, "slopes " + ", ".join(f"{s:.4f}" for s in slopes), elapsed)
    assert passed


@pytest.fixture(scope="module")
def headline():
    t0 = time.perf_counter()
    out = {N: sweep(DEEP_WELL, N) for N in SWEEP_N}
    return out, time.perf_counter() - t0


def test_criterion_7_headline_flatness(capsys, headline):
    runs, elapsed = headline
    fine, report, ops, _, spacing = runs[SWEEP_N[1]]
    coarse = runs[SWEEP_N[0]][0]
    lam_min = lowest_eigenvalue(ops)
    decades = float(np.log10(fine.mu_schedule[0] / fine.mu_schedule[-1]))
    max_exp = float(np.nanmax(fine.exponents))
    ratio = max(fine.sup_normalized, coarse.sup_normalized) / min(fine.sup_normalized,
                                                                  coarse.sup_normalized)
    checks = {
        "lambda_min_H": lam_min <= LAMBDA_MIN_TARGET,
        "exponents": max_exp < FLAT_THRESHOLD,
        "sup_stable": ratio <= SUP_STABILITY,
        "decades": decades >= DECADES,
        "runtime": elapsed < 600,
    }
    passed = all(checks.values())
    failed = [k for k, v in checks.items() if not v]
    verdict(capsys, 7, passed,
            f"lambda_min(H) {lam_min:.4g}, max exponent {max_exp:.4f}, sup ratio {ratio:.3f}, "
            f"mu decades {decades:.2f} (floor {spacing.floor:.3g})"
            + (f"; failed: {', '.join(failed)}" if failed else ""), elapsed)
    assert passed


def test_criterion_8_negative_control(capsys):
    t0 = time.perf_counter()
    grid = build_grid(1, SWEEP_R, SWEEP_N[1])
    spec, cal = pl.calibrate_resonant_well(grid, 20.0, 0.5, 1.0)
    res = sweep(spec, SWEEP_N[1], lambdas=SWEEP_LAMBDAS)[0]
    growth = res.exponent_at(0.0)
    elapsed = time.perf_counter() - t0
    passed = growth >= BLOWUP_THRESHOLD and elapsed < 300
    verdict(capsys, 8, passed, f"exponent at lambda=0 {growth:.4f} (eigenvalue "
            f"{cal.eigenvalue:.3g}, spacing {cal.spacing:.3g}, floor {res.floor:.3g})", elapsed)
    assert passed


def test_criterion_9_smoothness(capsys):
    t0 = time.perf_counter()
    grid = build_grid(1, SWEEP_R, SWEEP_N[1])
    report, ops = hy.evaluate(DEEP_WELL, grid)
    ctx = NormContext(ops)
    spacing = sweep_floor(ops, SWEEP_LAMBDAS)
    mus = np.geomspace(1.0, spacing.floor, SWEEP_MU_COUNT)
    lams = np.linspace(0.0, 2.0, 5)
    lmax = kato_smoothness_probe(ops, ctx, smoothness_weight(ctx), lams, mus, spacing=spacing)
    one = kato_smoothness_probe(ops, ctx, np.ones(ops.n), lams, mus, override=True,
                                spacing=spacing)
    elapsed = time.perf_counter() - t0
    passed = lmax.flat and one.growth and elapsed < 300
    verdict(capsys, 9, passed, f"L_max max exponent {np.nanmax(lmax.exponents):.4f}, "
            f"L=1 max exponent {np.nanmax(one.exponents):.4f}", elapsed)
    assert passed


def test_criterion_10_cayley(capsys):
    t0 = time.perf_counter()
    report, ops = hy.evaluate(pl.inverse_power(1.0, 1.0), build_grid(1, 20.0, 401))
    flow = CayleyFlow(ops)
    rng = np.random.default_rng(3)
    drift, defect = 0.0, 0.0
    for _ in range(4):
        f = rng.standard_normal(ops.n)
        nf = np.linalg.norm(f)
        drift = max(drift, abs(np.linalg.norm(flow(f, 1.0)) - nf) / nf)
    # composition on the standard test vectors; grid-scale noise is not a dilation-smooth input
    F, _ = gaussian_test_vectors(ops.grid)
    for k in range(F.shape[1]):
        for _ in range(10):
            s, t = rng.uniform(-1, 1, 2)
            composed = flow(flow(F[:, k], t), s)
            defect = max(defect, np.linalg.norm(composed - flow(F[:, k], s + t)))
    elapsed = time.perf_counter() - t0
    passed = drift <= DRIFT_TOL and defect <= COMPOSITION_TOL and elapsed < 10
    verdict(capsys, 10, passed, f"norm drift per unit time {drift:.2e}, composition defect "
            f"{defect:.2e}", elapsed)
    assert passed


def test_criterion_11_determinism(capsys, tmp_path):
    t0 = time.perf_counter()
    codes = []
    for cmd in (["lap", "--set", "lambda.count=5", "--set", "mu.count=5"], ["proof-trace"]):
        out = tmp_path / cmd[0]
        main(cmd + ["--set", "grid.points_per_axis=201", "--out", str(out)])
        codes.append(main(["reproduce", str(out)]))
    capsys.readouterr()
    elapsed = time.perf_counter() - t0
    passed = codes == [0, 0]
    verdict(capsys, 11, passed, f"reproduce exit codes {codes}", elapsed)
    assert passed
