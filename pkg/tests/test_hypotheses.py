import json
import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, strategies as st

from laplab import hypotheses as hy
from laplab import potentials as pl
from laplab.errors import RefusedError
from laplab.lattice import assemble_laplacian, assemble_operators, build_grid

# dense eigvalsh values, inverse_power(1, 1), R = 20, N = 201, c1 = 1.5
C2_DENSE_201 = 0.2152729854841764
LAMBDA_MIN_S_DENSE_201 = 0.06037796688342781


def test_c_tilde_inverse_power_mu1():
    rep = hy.check_conditions(pl.inverse_power(1, 1), build_grid(1, 20.0, 401))
    assert 0.99 <= rep.c_tilde <= 1.0
    assert rep.d_effective == 1.0


@pytest.mark.parametrize("mu", [0.5, 1.0, 1.5])
@pytest.mark.parametrize("R,N", [(10.0, 201), (20.0, 401), (7.5, 31)])
def test_c_tilde_closed_form(mu, R, N):
    rep = hy.check_conditions(pl.inverse_power(2.0, mu), build_grid(1, R, N))
    assert abs(rep.c_tilde - mu * R * R / (1 + R * R)) <= 1e-10
    assert rep.c_tilde_tail == mu


def test_gaussian_fails_ii_and_refuses_c1():
    rep, ops = hy.evaluate(pl.gaussian_well(1.0), build_grid(1, 5.0, 101))
    assert rep.c_tilde >= 2 and not rep.conditions["ii"] and rep.conditions["i"]
    assert rep.c1 is None and ops is None and not rep.passed


def test_zero_potential_conditions():
    rep = hy.check_conditions(pl.zero(), build_grid(1, 5.0, 51))
    assert rep.c_tilde == 0 and rep.d_tilde == 0
    assert hy.select_c1(rep) == 1.0 and hy.select_c1(rep, 0.0) == 0.0


def test_ratio_undefined_where_v_vanishes():
    # V = x^2 - 1 vanishes at |x| = 1 with nonzero Euler derivative and is positive outside
    spec = pl.PotentialSpec("bump", lambda p: p[:, 0] ** 2 - 1, None, lambda p: 2 * p[:, 0] ** 2,
                            lambda p: 4 * p[:, 0] ** 2, 0.0, 0.0, "fails-(i)")
    rep = hy.check_conditions(spec, build_grid(1, 2.0, 9))
    assert not rep.conditions["i"] and not rep.conditions["iii"] and math.isinf(rep.c_tilde)


@pytest.mark.parametrize("c,expected", [(1.0, 1.5), (0.0, 1.0), (1.9, 1.95)])
def test_select_c1_midpoint(c, expected):
    rep = hy.HypothesisReport("x", {}, c, 0.0, c, 0.0, {"i": True, "ii": True, "iii": True})
    assert hy.select_c1(rep) == pytest.approx(expected, abs=1e-15)


def test_select_c1_override_range():
    rep = hy.HypothesisReport("x", {}, 1.0, 0.0, 1.0, 0.0, {"i": True, "ii": True, "iii": True})
    with pytest.raises(RefusedError):
        hy.select_c1(rep, 2.0)
    assert hy.select_c1(rep, 0.5) == 0.5
    assert any("does not exceed" in n for n in rep.notes)


@given(st.floats(0.01, 1.0))
def test_scale_covariance(alpha):
    g = build_grid(1, 10.0, 101)
    base = pl.inverse_power(1.3, 0.9)
    scaled = pl.inverse_power(1.3 * alpha, 0.9)
    a, b = hy.check_conditions(base, g), hy.check_conditions(scaled, g)
    assert abs(a.c_tilde - b.c_tilde) <= 1e-12 and abs(a.d_tilde - b.d_tilde) <= 1e-12


def test_min_eig_laplacian():
    lam, res = hy.min_eig_sym(assemble_laplacian(build_grid(1, 10.0, 401)))
    assert abs(lam - math.pi ** 2 / 400) / (math.pi ** 2 / 400) < 0.01
    assert lam == pytest.approx(0.0244289848539621, rel=1e-9)


def test_min_eig_diagonal():
    lam, _ = hy.min_eig_sym(sp.diags([1.0, 2.0, 3.0]))
    assert lam == pytest.approx(1.0, abs=1e-12)


@given(st.integers(3, 60), st.integers(0, 10_000))
def test_min_eig_matches_dense(n, seed):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((n, n))
    m = a + a.T
    lam, _ = hy.min_eig_sym(sp.csr_matrix(m), seed=seed)
    ref = np.linalg.eigvalsh(m)[0]
    assert abs(lam - ref) <= 1e-8 * max(1.0, abs(ref))


def test_lambda_min_S_and_c2_against_dense(compliant201):
    report, ops, _ = compliant201
    assert report.c1 == 1.5
    assert report.lambda_min_S == pytest.approx(LAMBDA_MIN_S_DENSE_201, rel=1e-8)
    assert report.c2 == pytest.approx(C2_DENSE_201, rel=1e-8)
    assert report.passed


def test_lambda_min_S_positive_at_801():
    report, _ = hy.evaluate(pl.inverse_power(1, 1), build_grid(1, 20.0, 801))
    assert report.lambda_min_S > 0 and report.lambda_min_S_residual < 1e-9 * 1e3


def test_c2_free_is_zero(free201):
    assert free201[0].c2 == 0.0


def test_c2_shift():
    g = build_grid(1, 20.0, 201)
    ops = assemble_operators(g, pl.inverse_power(1, 1), 1.5)
    c2 = hy.c2_bound(ops)
    shifted = ops.B + 5.0 * sp.identity(ops.n)
    lam, _ = hy.min_eig_sym(shifted)
    assert max(0.0, -lam) == pytest.approx(max(0.0, c2 - 5.0), abs=1e-12)


def test_form_inequalities_free_exact(free201):
    _, ops, _ = free201
    rep = hy.quadratic_form_inequalities(ops, samples=20)
    assert rep.d_emp["B"] == pytest.approx(1.0, rel=1e-12)


def test_form_inequalities_stable_under_refinement():
    vals = []
    for N in (201, 401):
        rep, ops = hy.evaluate(pl.inverse_power(1, 1), build_grid(1, 20.0, N))
        vals.append(hy.quadratic_form_inequalities(ops, rep))
    for k in ("B", "BA", "SA"):
        assert abs(vals[0].d_emp[k] - vals[1].d_emp[k]) / vals[1].d_emp[k] < 0.10
    assert all(v.passed for v in vals)


def test_form_inequalities_detect_perturbation(compliant201):
    report, ops, _ = compliant201
    rng = np.random.default_rng(3)
    a = rng.standard_normal((ops.n, ops.n))
    bad = ops.B + sp.csr_matrix(50.0 * (a + a.T))
    from dataclasses import replace
    rep = hy.quadratic_form_inequalities(replace(ops, B=bad), report, samples=20, cap=5.0)
    assert not rep.passed


def test_form_inequalities_refuse_nonpositive_S():
    g = build_grid(1, 20.0, 201)
    ops = assemble_operators(g, pl.gaussian_well(5.0), 1.9)
    with pytest.raises(RefusedError):
        hy.quadratic_form_inequalities(ops, samples=4)


def test_form_bound_dense_vs_lanczos(compliant201):
    _, ops, _ = compliant201
    dense = hy.form_bound(ops.commutator_BA(), ops.S)
    sparse = hy.form_bound(ops.commutator_BA(), ops.S, dense_limit=10)
    assert sparse == pytest.approx(dense, rel=1e-6)


def test_report_json_keys(compliant201):
    d = json.loads(compliant201[0].to_json())
    for key in ("c_tilde", "d_tilde", "c1", "lambda_min_S", "c2", "conditions"):
        assert key in d
    assert set(d["conditions"]) == {"i", "ii", "iii", "S_positive"}
