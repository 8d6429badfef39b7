import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from laplab import hypotheses as hy
from laplab import potentials as pl
from laplab.errors import RefusedError
from laplab.lattice import assemble_operators, build_grid
from laplab.normspace import (CayleyFlow, NormContext, dominated_bound_check, dilation_flow,
                              e_surrogate_norm, e_surrogate_weight, s_norm, s_star_norm,
                              smoothness_weight, weights_table, write_weights_csv)

CONST = pl.PotentialSpec("const:-1", lambda p: -np.ones(len(p)), None,
                         lambda p: np.zeros(len(p)), lambda p: np.zeros(len(p)),
                         0.0, 0.0, "compliant")


@pytest.fixture(scope="module")
def const_ctx():
    g = build_grid(1, 8.0, 33)
    ops = assemble_operators(g, CONST, 1.0)
    return NormContext(ops), g


def _at(grid, x):
    return int(np.argmin(np.abs(grid.points()[:, 0] - x)))


def test_surrogate_weight_constant_potential(const_ctx):
    ctx, g = const_ctx
    w = e_surrogate_weight(ctx)
    assert w[_at(g, 4.0)] == pytest.approx(4 ** 0.6, rel=1e-14)
    assert w[_at(g, 4.0)] == pytest.approx(2.29739670999407, rel=1e-12)
    assert w[_at(g, 0.5)] == pytest.approx(1.0, rel=1e-14)


def test_smoothness_weight_constant_potential(const_ctx):
    ctx, g = const_ctx
    L = smoothness_weight(ctx)
    assert L[_at(g, 2.0)] == pytest.approx(0.659753955386447, rel=1e-12)
    assert L[_at(g, 0.5)] == pytest.approx(1.0, rel=1e-14)


def test_lambda_at_least_one(compliant201):
    ctx = compliant201[2]
    assert np.all(ctx.Lambda >= 1.0)
    assert np.all(ctx.M > 0)


@given(st.integers(0, 10_000))
def test_surrogate_dominates_m_norm(seed):
    g = build_grid(1, 8.0, 33)
    ctx = NormContext(assemble_operators(g, CONST, 1.0))
    f = np.random.default_rng(seed).standard_normal(g.size)
    m_norm = np.linalg.norm(f / np.sqrt(-ctx.weights.V))
    assert m_norm <= e_surrogate_norm(ctx, f) * (1 + 1e-14)


def test_weights_refused_for_nonnegative_potential(free201):
    ctx = free201[2]
    assert ctx.weights is None
    with pytest.raises(RefusedError):
        smoothness_weight(ctx)


def test_s_norm_summation_by_parts(free201):
    # V = 0, c1 = 0 gives S = 2(-Delta_h), so <f, S f> = 2 sum |D_+ f|^2 / h^2 with zero ends
    _, ops, ctx = free201
    h = ops.grid.spacing
    f = np.sin(np.linspace(0, 3, ops.n)) + 0.1
    padded = np.concatenate([[0.0], f, [0.0]])
    expected = 2.0 * np.sum(np.diff(padded) ** 2) / h ** 2
    assert s_norm(ctx, f) ** 2 == pytest.approx(expected, rel=1e-12)


def test_norms_against_dense(compliant201):
    _, ops, ctx = compliant201
    S = ops.S.toarray()
    f = np.random.default_rng(1).standard_normal(ops.n)
    assert s_norm(ctx, f) == pytest.approx(math.sqrt(f @ S @ f), rel=1e-12)
    assert s_star_norm(ctx, f) == pytest.approx(math.sqrt(f @ np.linalg.solve(S, f)), rel=1e-9)


@given(st.integers(0, 10_000))
def test_duality_and_riesz(seed):
    rep, ops = hy.evaluate(pl.inverse_power(1, 1), build_grid(1, 10.0, 101))
    ctx = NormContext(ops)
    rng = np.random.default_rng(seed)
    f, g = rng.standard_normal(ops.n), rng.standard_normal(ops.n)
    assert abs(np.vdot(f, g)) <= s_norm(ctx, f) * s_star_norm(ctx, g) * (1 + 1e-10)
    assert s_star_norm(ctx, ops.S @ f) == pytest.approx(s_norm(ctx, f), rel=1e-9)


def test_complex_norms(compliant201):
    _, ops, ctx = compliant201
    rng = np.random.default_rng(2)
    a, b = rng.standard_normal(ops.n), rng.standard_normal(ops.n)
    assert s_norm(ctx, a + 1j * b) ** 2 == pytest.approx(s_norm(ctx, a) ** 2 + s_norm(ctx, b) ** 2)
    assert s_star_norm(ctx, a + 1j * b) ** 2 == pytest.approx(
        s_star_norm(ctx, a) ** 2 + s_star_norm(ctx, b) ** 2)


def test_dominated_bound_holds(compliant201):
    report, _, ctx = compliant201
    rep = dominated_bound_check(ctx, report.c1, report.c_effective, samples=30)
    assert rep.passed and rep.offending is None and rep.worst_margin >= 0


def test_dominated_margin_shrinks_with_understated_c_tilde():
    g = build_grid(1, 20.0, 201)
    spec = pl.inverse_power(1, 1.9)
    ops = assemble_operators(g, spec, 1.95)
    ctx = NormContext(ops)
    rep = dominated_bound_check(ctx, 1.95, 0.5 * 1.9, samples=30)
    honest = dominated_bound_check(ctx, 1.95, 1.9 * 400 / 401, samples=30)
    assert honest.passed
    assert rep.worst_margin < honest.worst_margin


def test_dominated_bound_refuses_c1_below_c_tilde(compliant201):
    with pytest.raises(RefusedError):
        dominated_bound_check(compliant201[2], 0.5, 1.0, samples=1)


def test_weights_csv(tmp_path, compliant201):
    ctx = compliant201[2]
    path = tmp_path / "w.csv"
    write_weights_csv(ctx, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "x0,M,Lambda,L_max"
    assert len(lines) == ctx.ops.n + 1
    assert set(weights_table(ctx)) == {"x0", "M", "Lambda", "L_max"}


def test_cayley_unitary(compliant201):
    _, ops, _ = compliant201
    f = np.random.default_rng(0).standard_normal(ops.n)
    g = dilation_flow(ops, f, 0.7)
    assert np.linalg.norm(g) == pytest.approx(np.linalg.norm(f), rel=1e-12)


def test_cayley_group_property(compliant201):
    _, ops, _ = compliant201
    flow = CayleyFlow(ops, dt_max=0.01)
    f = np.exp(-ops.grid.points()[:, 0] ** 2)
    tau = 0.01
    two = flow.step(flow.step(f, tau, 30), tau, 20)
    one = flow.step(f, tau, 50)
    assert np.max(np.abs(two - one)) < 1e-13
    back = flow.step(flow.step(f, tau, 25), -tau, 25)
    assert np.max(np.abs(back - f)) < 1e-12


def test_cayley_refuses_too_few_steps(compliant201):
    flow = CayleyFlow(compliant201[1])
    with pytest.raises(RefusedError):
        flow(np.ones(compliant201[1].n), 1.0, steps=1)


@pytest.mark.parametrize("t", [-1.0, -0.5, 0.25, 1.0])
def test_cayley_gronwall_envelope(compliant201, t):
    report, ops, ctx = compliant201
    d = hy.quadratic_form_inequalities(ops, report, samples=20).d_emp["SA"]
    rng = np.random.default_rng(5)
    x = ops.grid.points()[:, 0]
    for _ in range(3):
        f = np.exp(-(x - rng.uniform(-3, 3)) ** 2 / rng.uniform(0.5, 4))
        lhs = s_norm(ctx, dilation_flow(ops, f, t))
        assert lhs <= math.exp(0.5 * d * abs(t)) * s_norm(ctx, f)
