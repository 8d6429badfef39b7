"""Checks of the positivity hypotheses on a concrete grid.

Covers the three pointwise conditions on ``V``, the constants built from them,
the choice of ``c1``, and the spectral facts ``S > 0`` and ``B >= -c2``.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import NumericalFailure, RefusedError
from .lattice import Grid, OperatorSet, assemble_operators
from .potentials import PotentialSpec, euler_derivatives

__all__ = [
    "HypothesisReport", "euler_derivatives", "check_conditions", "select_c1",
    "min_eig_sym", "c2_bound", "form_bound", "quadratic_form_inequalities",
    "evaluate",
]

DEFAULT_EIG_TOL = 1e-9


@dataclass
class HypothesisReport:
    """Constants and pass/fail flags for one potential on one grid.

    ``c_tilde``/``d_tilde`` are grid suprema; the ``*_tail`` fields are the
    closed-form limits at infinity, and the gates use the larger of the two.
    """

    potential_id: str
    grid: dict
    c_tilde: float
    d_tilde: float
    c_tilde_tail: float
    d_tilde_tail: float
    conditions: dict
    c1: Optional[float] = None
    lambda_min_S: Optional[float] = None
    lambda_min_S_residual: Optional[float] = None
    c2: Optional[float] = None
    euler_analytic: bool = True
    notes: list = field(default_factory=list)

    @property
    def c_effective(self) -> float:
        return max(self.c_tilde, self.c_tilde_tail)

    @property
    def d_effective(self) -> float:
        return max(self.d_tilde, self.d_tilde_tail)

    @property
    def lambda_scope(self) -> str:
        """Energies covered by the estimate: all of R when ``c1 = 0``, else ``[0, inf)``."""
        if self.c1 is None:
            return "none"
        return "R" if self.c1 == 0 else "[0,inf)"

    @property
    def passed(self) -> bool:
        return all(self.conditions.get(k) is True for k in ("i", "ii", "iii", "S_positive"))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["c_effective"] = _finite_or_str(self.c_effective)
        d["d_effective"] = _finite_or_str(self.d_effective)
        d["lambda_scope"] = self.lambda_scope
        d["passed"] = self.passed
        for key in ("c_tilde", "d_tilde", "c_tilde_tail", "d_tilde_tail"):
            d[key] = _finite_or_str(d[key])
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _finite_or_str(x):
    return x if x is None or math.isfinite(x) else "inf"


def _ratio_sup(num: np.ndarray, v: np.ndarray) -> float:
    """``sup |num| / (-v)`` with 0/0 = 0 and +inf where ``v >= 0`` but the ratio is undefined."""
    num = np.abs(num)
    neg = v < 0
    sup = float(np.max(num[neg] / -v[neg])) if np.any(neg) else 0.0
    zero = v == 0
    if np.any(zero & (num > 0)) or np.any(v > 0):
        return math.inf
    return sup


def check_conditions(potential: PotentialSpec, grid: Grid) -> HypothesisReport:
    """Evaluate conditions (i)-(iii) and the constants ``c_tilde``, ``d_tilde``."""
    pts = grid.points()
    v = np.asarray(potential.V(pts), dtype=float)
    vt, w, analytic = euler_derivatives(potential, pts)
    c_grid = _ratio_sup(vt, v)
    d_grid = _ratio_sup(w, v)
    c_eff = max(c_grid, potential.tail_c)
    d_eff = max(d_grid, potential.tail_d)
    conditions = {
        "i": bool(np.all(v <= 0)),
        "ii": bool(c_eff < 2.0),
        "iii": bool(math.isfinite(d_eff)),
        "S_positive": None,
    }
    report = HypothesisReport(potential.id, grid.to_dict(), c_grid, d_grid,
                              potential.tail_c, potential.tail_d, conditions,
                              euler_analytic=analytic)
    if potential.expected and potential.expected not in ("compliant", "degenerate"):
        report.notes.append(f"declared classification: {potential.expected}")
    return report


def select_c1(report: HypothesisReport, override: Optional[float] = None) -> Optional[float]:
    """Midpoint of ``(c_tilde, 2)``, or ``override``; ``None`` when condition (ii) fails."""
    if not report.conditions["ii"]:
        return None
    if override is not None:
        if not 0.0 <= override < 2.0:
            raise RefusedError(f"c1 override {override} outside [0, 2)")
        if override <= report.c_effective and report.c_effective > 0:
            report.notes.append(f"c1 override {override} does not exceed c_tilde "
                                f"{report.c_effective}")
        return float(override)
    return 0.5 * (report.c_effective + 2.0)


def _gershgorin(m: sp.spmatrix) -> tuple[float, float]:
    m = sp.csr_matrix(m)
    diag = m.diagonal()
    radius = np.asarray(abs(m).sum(axis=1)).ravel() - np.abs(diag)
    return float(np.min(diag - radius)), float(np.max(diag + radius))


def min_eig_sym(matrix, tolerance: float = DEFAULT_EIG_TOL, seed: int = 0,
                maxiter: Optional[int] = None) -> tuple[float, float]:
    """Smallest eigenvalue of a real symmetric sparse matrix.

    Shift-invert Lanczos about a point just below the Gershgorin lower bound.
    Returns ``(lambda_min, residual)`` where ``residual = ||Mv - lambda v||``
    for the unit eigenvector.  Raises :class:`NumericalFailure` if ARPACK
    does not converge or the residual exceeds ``tolerance * ||M||_est``.
    """
    m = sp.csc_matrix(matrix, dtype=float)
    n = m.shape[0]
    lo, hi = _gershgorin(m)
    norm_est = max(abs(lo), abs(hi), 1e-300)
    if n < 3:
        vals, vecs = np.linalg.eigh(m.toarray())
        lam, vec = float(vals[0]), vecs[:, 0]
    else:
        sigma = lo - 1e-3 * norm_est
        v0 = np.random.default_rng(seed).standard_normal(n)
        try:
            vals, vecs = spla.eigsh(m, k=1, sigma=sigma, which="LM", v0=v0,
                                    maxiter=maxiter, tol=0)
        except spla.ArpackNoConvergence as exc:
            raise NumericalFailure(f"shift-invert Lanczos did not converge: {exc}") from None
        lam, vec = float(vals[0]), vecs[:, 0]
    vec = vec / np.linalg.norm(vec)
    residual = float(np.linalg.norm(m @ vec - lam * vec))
    if residual > tolerance * norm_est:
        raise NumericalFailure(f"eigenvalue {lam:.6g} has residual {residual:.3g} "
                               f"> {tolerance:g} * {norm_est:.3g}")
    return lam, residual


def c2_bound(ops: OperatorSet, tolerance: float = DEFAULT_EIG_TOL) -> float:
    lam, _ = min_eig_sym(ops.B, tolerance)
    return max(0.0, -lam)


def form_bound(T, S, dense_limit: int = 2500) -> float:
    """``||T||_{S -> S*}``: the largest ``|theta|`` with ``T v = theta S v``.

    Dense generalized eigensolver up to ``dense_limit`` unknowns, generalized
    Lanczos above it.
    """
    n = T.shape[0]
    if n <= dense_limit:
        vals = la.eigh(sp.csr_matrix(T).toarray(), sp.csr_matrix(S).toarray(), eigvals_only=True)
        return float(max(abs(vals[0]), abs(vals[-1])))
    S = sp.csc_matrix(S)
    T = sp.csc_matrix(T)
    out = 0.0
    for which in ("LA", "SA"):
        try:
            vals = spla.eigsh(T, k=1, M=S, which=which, return_eigenvectors=False)
        except spla.ArpackNoConvergence as exc:
            raise NumericalFailure(f"generalized Lanczos did not converge: {exc}") from None
        out = max(out, abs(float(vals[0])))
    return out


def _sample_vectors(grid: Grid, count: int, seed: int) -> np.ndarray:
    """Half white noise, half smooth random Gaussian mixtures."""
    rng = np.random.default_rng(seed)
    pts = grid.points()
    R = grid.half_extent
    out = []
    for k in range(count):
        if k % 2 == 0:
            out.append(rng.standard_normal(len(pts)))
        else:
            f = np.zeros(len(pts))
            for _ in range(3):
                c = rng.uniform(-0.5 * R, 0.5 * R, size=grid.dims)
                s = rng.uniform(0.5, 0.25 * R)
                r2 = np.sum((pts - c) ** 2, axis=1)
                f += rng.standard_normal() * np.exp(-r2 / (2 * s * s))
            out.append(f)
    return np.array(out)


@dataclass
class FormReport:
    d_emp: dict
    d_max: float
    cap: float
    passed: bool
    worst_margin: float


def quadratic_form_inequalities(ops: OperatorSet, report: Optional[HypothesisReport] = None,
                                samples: int = 100, cap: float = 50.0,
                                seed: int = 0) -> FormReport:
    """Smallest ``d`` with ``-dS <= T <= dS`` on sampled vectors for the three commutators.

    ``T`` ranges over ``B``, ``[iB, A]`` and ``[iS, A]``; each contributes two
    one-sided inequalities.  ``worst_margin`` is the smallest value of
    ``cap <f,Sf> - |<f,Tf>|`` over samples and operators, normalized by
    ``<f,Sf>``.
    """
    lam = report.lambda_min_S if report is not None else None
    if lam is None:
        lam, _ = min_eig_sym(ops.S)
    if lam <= 0:
        raise RefusedError(f"S is not positive (lambda_min = {lam:.6g}); form bounds are vacuous")
    F = _sample_vectors(ops.grid, samples, seed)
    s_form = np.einsum("ij,ij->i", F, (ops.S @ F.T).T)
    ops_map = {"B": ops.B, "BA": ops.commutator_BA(), "SA": ops.commutator_SA()}
    d_emp = {}
    worst = math.inf
    for name, T in ops_map.items():
        t_form = np.einsum("ij,ij->i", F, (T @ F.T).T)
        ratio = np.abs(t_form) / s_form
        d_emp[name] = float(np.max(ratio))
        worst = min(worst, float(np.min(cap - ratio)))
    d_max = max(d_emp.values())
    return FormReport(d_emp, d_max, cap, d_max <= cap, worst)


def evaluate(potential: PotentialSpec, grid: Grid, c1: Optional[float] = None,
             tolerance: float = DEFAULT_EIG_TOL) -> tuple[HypothesisReport, Optional[OperatorSet]]:
    """Full hypothesis pass: constants, ``c1``, assembly, ``lambda_min(S)`` and ``c2``.

    Returns the report and the assembled operators, or ``None`` for the
    operators when condition (ii) fails and no ``c1`` can be chosen.
    """
    report = check_conditions(potential, grid)
    report.c1 = select_c1(report, c1)
    if report.c1 is None:
        report.conditions["S_positive"] = False
        report.notes.append("c1 selection refused: c_tilde >= 2")
        return report, None
    ops = assemble_operators(grid, potential, report.c1)
    lam, res = min_eig_sym(ops.S, tolerance)
    report.lambda_min_S = lam
    report.lambda_min_S_residual = res
    report.conditions["S_positive"] = bool(lam > 0)
    report.c2 = c2_bound(ops, tolerance)
    return report, ops
