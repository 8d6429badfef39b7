"""Regularized resolvents, the differential-inequality trace and LAP sweeps.

The central object is ``G_eps^(+/-) = (H - lambda -/+ i mu -/+ i eps B)^-1``
with ``B = [iH, A]``.  At ``eps = 0`` it is the ordinary resolvent of ``H``
at ``lambda +/- i mu``.  Everything here works on the Euclidean inner product
of grid vectors, antilinear in the first slot.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy import stats

from .errors import NumericalFailure, RefusedError
from .hypotheses import _sample_vectors, form_bound
from .lattice import Grid, OperatorSet
from .normspace import (CayleyFlow, NormContext, e_surrogate_norm, s_norm, s_star_norm,
                        smoothness_weight)

SOLVE_TOL = 1e-10
FLAT_THRESHOLD = 0.1
BLOWUP_THRESHOLD = 0.4
FLOOR_FACTOR = 3.0
THREADS_ENV = "LAPLAB_THREADS"

_SIGN = {"+": 1.0, "-": -1.0}


def _sign(branch: str) -> float:
    try:
        return _SIGN[branch]
    except KeyError:
        raise RefusedError(f"branch must be '+' or '-', got {branch!r}") from None


def resolve_threads(requested: Optional[int] = None) -> int:
    """Worker count: ``LAPLAB_THREADS`` wins over ``requested``, default 1."""
    env = os.environ.get(THREADS_ENV)
    if env is not None and env.strip():
        try:
            n = int(env)
        except ValueError:
            raise RefusedError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
    else:
        n = 1 if requested is None else int(requested)
    if n < 1:
        raise RefusedError(f"thread count must be >= 1, got {n}")
    return n


def _map(fn, items, threads: int):
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------- solves


class RegularizedResolvent:
    """Factorized ``T = H - lambda -/+ i(mu + eps B)`` for one branch.

    :meth:`solve` returns ``T^-1 f`` after iterative refinement and refuses
    to return anything whose residual exceeds ``tol * ||f||``.
    """

    def __init__(self, ops: OperatorSet, lam: float, mu: float, eps: float = 0.0,
                 branch: str = "+", tol: float = SOLVE_TOL):
        if not mu > 0:
            raise RefusedError(f"mu must be positive, got {mu}")
        if eps < 0:
            raise RefusedError(f"eps must be nonnegative, got {eps}")
        s = _sign(branch)
        self.lam, self.mu, self.eps, self.branch, self.tol = float(lam), float(mu), float(eps), branch, tol
        n = ops.n
        eye = sp.identity(n, format="csr")
        T = ops.H - lam * eye - 1j * s * (mu * eye + eps * ops.B) if eps else \
            ops.H - (lam + 1j * s * mu) * eye
        self.T = sp.csc_matrix(T, dtype=complex)
        try:
            self._lu = spla.splu(self.T)
        except RuntimeError as exc:
            raise NumericalFailure(
                f"factorization of H - lambda -/+ i(mu + eps B) failed ({exc}); "
                f"1-norm of the matrix {spla.norm(self.T, 1):.3g}") from None

    def solve(self, f: np.ndarray) -> np.ndarray:
        f = np.asarray(f, dtype=complex)
        x = self._lu.solve(f)
        fnorm = np.linalg.norm(f, axis=0)
        for _ in range(3):
            r = f - self.T @ x
            rnorm = np.linalg.norm(r, axis=0)
            if np.all(rnorm <= self.tol * fnorm):
                return x
            x = x + self._lu.solve(r)
        rnorm = np.linalg.norm(f - self.T @ x, axis=0)
        if np.all(rnorm <= self.tol * fnorm):
            return x
        est = spla.onenormest(spla.aslinearoperator(self.T)) * np.max(
            np.linalg.norm(x, axis=0) / np.maximum(fnorm, 1e-300))
        raise NumericalFailure(f"shifted solve residual {float(np.max(rnorm / np.maximum(fnorm, 1e-300))):.3g} "
                               f"> {self.tol:g}; condition estimate >= {est:.3g}")


def shifted_solve(ops: OperatorSet, lam: float, mu: float, eps: float, branch: str,
                  f: np.ndarray, tol: float = SOLVE_TOL) -> np.ndarray:
    """Solve ``(H - lambda -/+ i mu -/+ i eps B) g = f``.

    ``f`` may hold several right-hand sides as columns.
    """
    return RegularizedResolvent(ops, lam, mu, eps, branch, tol).solve(f)


def dense_resolvent(H, lam: float, mu: float, branch: str, f: np.ndarray) -> np.ndarray:
    """``sum_j <v_j, f> / (lambda_j - lambda -/+ i mu) v_j`` from a dense eigendecomposition."""
    vals, vecs = la.eigh(sp.csr_matrix(H).toarray() if sp.issparse(H) else np.asarray(H))
    coef = vecs.T @ f
    denom = vals - lam - 1j * _sign(branch) * mu
    return vecs @ (coef / denom if coef.ndim == 1 else coef / denom[:, None])


def operator_norm_sym(matrix, seed: int = 0, tol: float = 1e-8) -> float:
    """Largest ``|eigenvalue|`` of a real symmetric matrix (Lanczos, dense below 3 unknowns)."""
    m = sp.csr_matrix(matrix, dtype=float)
    n = m.shape[0]
    if n < 3:
        return float(np.max(np.abs(np.linalg.eigvalsh(m.toarray()))))
    v0 = np.random.default_rng(seed).standard_normal(n)
    try:
        val = spla.eigsh(m, k=1, which="LM", v0=v0, tol=tol, return_eigenvectors=False)
    except spla.ArpackNoConvergence as exc:
        raise NumericalFailure(f"operator-norm iteration did not converge: {exc}") from None
    return float(abs(val[0]))


def eps0_bound(ops_or_B, safety: float = 1.05) -> float:
    """``1 / (safety * ||B||)``; accepts an :class:`OperatorSet` or the matrix ``B``."""
    B = ops_or_B.B if isinstance(ops_or_B, OperatorSet) else ops_or_B
    norm = operator_norm_sym(B)
    if norm == 0:
        return math.inf
    return 1.0 / (safety * norm)


@dataclass
class IdentityCheck:
    residual: float
    margin: float
    s_form: float
    in_scope: bool

    @property
    def inequality_holds(self) -> bool:
        return self.margin >= self.s_form - 1e-10 * max(1.0, abs(self.s_form))


def bou_identity_check(ops: OperatorSet, f: np.ndarray, lam: float, mu: float, eps: float,
                       branch: str = "+") -> IdentityCheck:
    """Check ``-c1 Re<f,Tf> -/+ (1/eps) Im<f,Tf> = <f,Sf> + (c1 lambda + mu/eps) ||f||^2``.

    ``T = H - lambda -/+ i mu -/+ i eps B``.  ``residual`` is relative to the
    sum of the absolute values of the four terms; ``margin`` is the left side,
    which must dominate ``<f,Sf>`` whenever ``c1 lambda >= 0``.
    """
    if not eps > 0:
        raise RefusedError("the identity divides by eps; need eps > 0")
    s = _sign(branch)
    f = np.asarray(f)
    nf2 = float(np.vdot(f, f).real)
    if nf2 == 0:
        raise RefusedError("f must be nonzero")
    Tf = ops.H @ f - lam * f - 1j * s * (mu * f + eps * (ops.B @ f))
    q = np.vdot(f, Tf)
    sf = float(np.vdot(f, ops.S @ f).real)
    c1 = ops.c1
    a = -c1 * q.real
    b = -s * q.imag / eps
    shift = (c1 * lam + mu / eps) * nf2
    lhs = a + b
    scale = abs(a) + abs(b) + abs(sf) + abs(shift)
    residual = abs(lhs - sf - shift) / scale if scale > 0 else 0.0
    return IdentityCheck(float(residual), float(lhs), sf, bool(c1 * lam >= 0))


# ---------------------------------------------------------------- exponents


@dataclass(frozen=True)
class ExponentFit:
    slope: float
    stderr: float

    @property
    def growth(self) -> float:
        """Minus the slope: positive when ``|F|`` grows as ``mu`` shrinks."""
        return -self.slope


def fit_exponent(mu_values, abs_values) -> ExponentFit:
    """Least-squares slope of ``log|F|`` against ``log mu`` with its standard error."""
    mu = np.asarray(mu_values, dtype=float)
    y = np.asarray(abs_values, dtype=float)
    if mu.size < 4 or mu.size != y.size:
        raise RefusedError(f"need at least 4 matching points, got {mu.size} and {y.size}")
    if np.any(mu <= 0) or np.any(y <= 0) or not np.all(np.isfinite(y)):
        raise RefusedError("exponent fit needs positive finite data")
    fit = stats.linregress(np.log(mu), np.log(y))
    return ExponentFit(float(fit.slope), float(fit.stderr))


# ---------------------------------------------------------------- spacing


@dataclass
class SpacingEstimate:
    spacing: float
    floor: float
    window: tuple
    probes: int
    eigenvalues: np.ndarray


def level_spacing(H, lo: float, hi: float, probes: Optional[int] = None, k: int = 12,
                  factor: float = FLOOR_FACTOR, seed: int = 0) -> SpacingEstimate:
    """Mean level spacing of ``H`` on ``[lo, hi]`` from shift-invert probes.

    Each probe finds the ``k`` eigenvalues nearest an evenly placed center and
    contributes ``(max - min) / (k - 1)``; the spacing is the mean of these
    local values.  ``floor = factor * spacing``.
    """
    H = sp.csc_matrix(H, dtype=float)
    n = H.shape[0]
    if hi < lo:
        lo, hi = hi, lo
    k = min(k, n - 2)
    if k < 2:
        vals = np.linalg.eigvalsh(H.toarray())
        gaps = np.diff(vals)
        spacing = float(np.mean(gaps)) if gaps.size else math.inf
        return SpacingEstimate(spacing, factor * spacing, (lo, hi), 0, vals)
    if probes is None:
        probes = 5 if hi > lo else 1
    centers = np.linspace(lo, hi, probes) if probes > 1 else np.array([0.5 * (lo + hi)])
    rng = np.random.default_rng(seed)
    local, found = [], []
    for c in centers:
        try:
            vals = spla.eigsh(H, k=k, sigma=float(c), which="LM", v0=rng.standard_normal(n),
                              return_eigenvectors=False)
        except spla.ArpackNoConvergence as exc:
            raise NumericalFailure(f"spacing probe at {c:g} did not converge: {exc}") from None
        except RuntimeError:
            # sigma exactly on an eigenvalue; nudge it
            vals = spla.eigsh(H, k=k, sigma=float(c) + 1e-7 * (1 + abs(c)), which="LM",
                              v0=rng.standard_normal(n), return_eigenvectors=False)
        vals = np.sort(vals)
        local.append((vals[-1] - vals[0]) / (len(vals) - 1))
        found.append(vals)
    spacing = float(np.mean(local))
    return SpacingEstimate(spacing, factor * spacing, (lo, hi), len(centers),
                           np.unique(np.concatenate(found)))


def level_spacing_exact_1d(H, lo: float, hi: float, factor: float = FLOOR_FACTOR) -> SpacingEstimate:
    """Exact-count spacing ``(hi - lo) / #{eigenvalues in [lo, hi]}`` for tridiagonal ``H``."""
    H = sp.csr_matrix(H)
    vals = la.eigvalsh_tridiagonal(H.diagonal(), H.diagonal(1), select="v",
                                   select_range=(lo, hi))
    spacing = (hi - lo) / len(vals) if len(vals) else math.inf
    return SpacingEstimate(spacing, factor * spacing, (lo, hi), 0, vals)


# ---------------------------------------------------------------- test vectors


def gaussian_test_vectors(grid: Grid, ctx: Optional[NormContext] = None,
                          sigmas: Sequence[float] = (1.0, 2.0),
                          offsets: Optional[Sequence[float]] = None) -> tuple[np.ndarray, list]:
    """Gaussians ``exp(-|x - x0|^2 / 2 sigma^2)`` with ``x0`` on the first axis.

    Normalized to unit surrogate norm when ``ctx`` carries weights, to unit
    Euclidean norm otherwise.  Returns an ``(n_points, n_vectors)`` array and
    labels.
    """
    if offsets is None:
        offsets = (0.0, grid.half_extent / 4.0)
    pts = grid.points()
    cols, labels = [], []
    for s in sigmas:
        for x0 in offsets:
            shift = np.zeros(grid.dims)
            shift[0] = x0
            f = np.exp(-np.sum((pts - shift) ** 2, axis=1) / (2.0 * s * s))
            if ctx is not None and ctx.weights is not None:
                f = f / e_surrogate_norm(ctx, f)
            else:
                f = f / np.linalg.norm(f)
            cols.append(f)
            labels.append(f"sigma={s:g},x0={x0:g}")
    return np.array(cols).T, labels


# ---------------------------------------------------------------- LAP sweep


@dataclass
class LapSweepResult:
    """Resolvent matrix elements on a ``(lambda, mu)`` lattice.

    ``values[i, j, k] = <f_k, (H - lambda_i - i mu_j)^-1 f_k>``.
    ``exponents[i, k]`` is the growth exponent (minus the fitted slope of
    ``log|F|`` against ``log mu``); a cell is flat when it is below
    ``flat_threshold``.  Cells with ``c1 lambda < 0`` are outside the scope of
    the estimate and excluded from ``sup_normalized`` and the verdict.
    """

    lambda_grid: np.ndarray
    mu_schedule: np.ndarray
    values: np.ndarray
    surrogate_norms: np.ndarray
    normalized: np.ndarray
    exponents: np.ndarray
    exponent_stderr: np.ndarray
    in_scope: np.ndarray
    vector_labels: list
    floor: float
    spacing: float
    c1: float
    flat_threshold: float = FLAT_THRESHOLD
    notes: list = field(default_factory=list)

    @property
    def lambda_exponents(self) -> np.ndarray:
        return np.max(self.exponents, axis=1)

    @property
    def sup_normalized(self) -> float:
        if not np.any(self.in_scope):
            return math.nan
        return float(np.max(self.normalized[self.in_scope]))

    @property
    def flagged(self) -> np.ndarray:
        """In-scope lambdas whose exponent reaches the flatness threshold."""
        bad = (self.lambda_exponents >= self.flat_threshold) & self.in_scope
        return self.lambda_grid[bad]

    @property
    def flat(self) -> bool:
        return self.flagged.size == 0

    def exponent_at(self, lam: float) -> float:
        i = int(np.argmin(np.abs(self.lambda_grid - lam)))
        return float(self.lambda_exponents[i])

    def summary_line(self, lambda_min_H: Optional[float] = None) -> str:
        if self.flat:
            line = f"flat: true, sup_normalized = {self.sup_normalized:.6g}"
        else:
            where = ", ".join(f"{x:g}" for x in self.flagged)
            line = f"flat: false at lambda={where}, sup_normalized = {self.sup_normalized:.6g}"
        if lambda_min_H is not None:
            line += f", lambda_min_H = {lambda_min_H:.6g}"
        return line


def _mu_schedule_check(mu_schedule, floor: float, spacing: float) -> np.ndarray:
    mus = np.asarray(mu_schedule, dtype=float)
    if mus.ndim != 1 or mus.size == 0 or np.any(mus <= 0):
        raise RefusedError("mu schedule must be a nonempty list of positive numbers")
    if np.any(np.diff(mus) >= 0):
        raise RefusedError("mu schedule must be strictly decreasing")
    if mus[-1] < floor * (1 - 1e-12):
        raise RefusedError(f"mu = {mus[-1]:.6g} is below the floor {floor:.6g} "
                           f"(3 x mean level spacing {spacing:.6g})")
    return mus


def sweep_floor(ops: OperatorSet, lambda_grid) -> SpacingEstimate:
    lams = np.asarray(lambda_grid, dtype=float)
    return level_spacing(ops.H, float(np.min(lams)), float(np.max(lams)))


def lap_sweep(ops: OperatorSet, ctx: Optional[NormContext], test_vectors: np.ndarray,
              lambda_grid, mu_schedule, *, labels: Optional[list] = None,
              spacing: Optional[SpacingEstimate] = None, threads: Optional[int] = None,
              flat_threshold: float = FLAT_THRESHOLD) -> LapSweepResult:
    """``F(lambda, mu) = <f, (H - lambda - i mu)^-1 f>`` on the full lattice.

    ``test_vectors`` holds one vector per column.  The smallest ``mu`` must
    not undercut the spacing floor; pass ``spacing`` to reuse an estimate.
    """
    lams = np.asarray(lambda_grid, dtype=float)
    F = np.asarray(test_vectors)
    if F.ndim == 1:
        F = F[:, None]
    if spacing is None:
        spacing = sweep_floor(ops, lams)
    mus = _mu_schedule_check(mu_schedule, spacing.floor, spacing.spacing)
    if labels is None:
        labels = [f"v{k}" for k in range(F.shape[1])]
    if ctx is not None and ctx.weights is not None:
        norms = np.array([e_surrogate_norm(ctx, F[:, k]) for k in range(F.shape[1])])
    else:
        norms = np.linalg.norm(F, axis=0)
    Fc = F.astype(complex)
    cells = [(i, j) for i in range(lams.size) for j in range(mus.size)]

    def work(cell):
        i, j = cell
        u = RegularizedResolvent(ops, lams[i], mus[j]).solve(Fc)
        return np.einsum("ij,ij->j", Fc.conj(), u)

    out = _map(work, cells, resolve_threads(threads))
    values = np.empty((lams.size, mus.size, F.shape[1]), dtype=complex)
    for (i, j), v in zip(cells, out):
        values[i, j] = v
    normalized = np.abs(values) / norms ** 2
    exps = np.full((lams.size, F.shape[1]), np.nan)
    errs = np.full_like(exps, np.nan)
    notes = []
    if mus.size >= 4:
        for i in range(lams.size):
            for k in range(F.shape[1]):
                fit = fit_exponent(mus, np.abs(values[i, :, k]))
                exps[i, k], errs[i, k] = fit.growth, fit.stderr
    else:
        notes.append("fewer than 4 mu values: exponents not fitted")
    in_scope = ops.c1 * lams >= 0
    if not np.all(in_scope):
        notes.append("cells with c1*lambda < 0 are outside the scope of the estimate")
    if np.any(values.imag <= 0):
        notes.append("Im F <= 0 in some cell")
    return LapSweepResult(lams, mus, values, norms, normalized, exps, errs, in_scope, list(labels),
                          spacing.floor, spacing.spacing, ops.c1, flat_threshold, notes)


# ---------------------------------------------------------------- smoothness


@dataclass
class SmoothnessReport:
    """Sandwiched imaginary resolvent ``<Lg, Im(H - lambda - i mu)^-1 Lg>`` over unit ``g``.

    ``values[i, j]`` is the largest value found at ``(lambda_i, mu_j)``: the
    top eigenvalue of ``L Im R L`` by Lanczos, or a larger sampled value.
    """

    lambda_grid: np.ndarray
    mu_schedule: np.ndarray
    values: np.ndarray
    exponents: np.ndarray
    domination_constant: float
    overridden: bool
    floor: float
    flat_threshold: float = FLAT_THRESHOLD
    growth_threshold: float = BLOWUP_THRESHOLD

    @property
    def sup(self) -> float:
        return float(np.max(self.values)) if self.values.size else 0.0

    @property
    def flat(self) -> bool:
        e = self.exponents[np.isfinite(self.exponents)]
        return bool(np.all(e < self.flat_threshold))

    @property
    def growth(self) -> bool:
        e = self.exponents[np.isfinite(self.exponents)]
        return bool(e.size and np.max(e) >= self.growth_threshold)


def domination_constant(ctx: NormContext, L: np.ndarray) -> tuple[float, int]:
    """``max |L| / L_max`` and the index where it is attained."""
    ratio = np.abs(L) / smoothness_weight(ctx)
    i = int(np.argmax(ratio))
    return float(ratio[i]), i


def kato_smoothness_probe(ops: OperatorSet, ctx: NormContext, L_diag: np.ndarray,
                          lambda_grid, mu_schedule, sample_count: int = 8, *,
                          cap: float = 10.0, override: bool = False, seed: int = 0,
                          spacing: Optional[SpacingEstimate] = None,
                          threads: Optional[int] = None) -> SmoothnessReport:
    """Sup of the sandwiched imaginary resolvent on a ``(lambda, mu)`` lattice.

    Refuses when ``|L| > cap * L_max`` somewhere unless ``override`` is set.
    """
    L = np.asarray(L_diag, dtype=float)
    dom, where = domination_constant(ctx, L)
    if dom > cap and not override:
        x = ops.grid.points()[where]
        raise RefusedError(f"|L| / L_max reaches {dom:.6g} > {cap:g} at x = {np.array2string(x)}")
    lams = np.asarray(lambda_grid, dtype=float)
    if spacing is None:
        spacing = sweep_floor(ops, lams)
    mus = _mu_schedule_check(mu_schedule, spacing.floor, spacing.spacing)
    n = ops.n
    if not np.any(L):
        return SmoothnessReport(lams, mus, np.zeros((lams.size, mus.size)),
                                np.full(lams.size, np.nan), dom, override, spacing.floor)
    G = np.random.default_rng(seed).standard_normal((n, sample_count))
    G /= np.linalg.norm(G, axis=0)
    v0 = np.random.default_rng(seed + 1).standard_normal(n)
    cells = [(i, j) for i in range(lams.size) for j in range(mus.size)]

    def work(cell):
        i, j = cell
        res = RegularizedResolvent(ops, lams[i], mus[j])

        def mv(v):
            v = np.asarray(v).reshape(n, -1)
            return (L[:, None] * np.imag(res.solve(L[:, None] * v.astype(complex)))).reshape(v.shape)

        best = 0.0
        if sample_count:
            best = float(np.max(np.einsum("ij,ij->j", G, mv(G))))
        if n >= 3:
            op = spla.LinearOperator((n, n), matvec=lambda v: mv(v).ravel(), dtype=float)
            try:
                top = spla.eigsh(op, k=1, which="LA", v0=v0, tol=1e-8,
                                 return_eigenvectors=False)[0]
            except spla.ArpackNoConvergence as exc:
                raise NumericalFailure(f"Lanczos for L Im R L did not converge: {exc}") from None
            best = max(best, float(top))
        return best

    out = _map(work, cells, resolve_threads(threads))
    values = np.empty((lams.size, mus.size))
    for (i, j), v in zip(cells, out):
        values[i, j] = v
    exps = np.full(lams.size, np.nan)
    if mus.size >= 4:
        for i in range(lams.size):
            if np.all(values[i] > 0):
                exps[i] = fit_exponent(mus, values[i]).growth
    return SmoothnessReport(lams, mus, values, exps, dom, override, spacing.floor)


# ---------------------------------------------------------------- proof trace


def default_schedule(eps1: float, count: int = 12) -> np.ndarray:
    """``eps1 / 2, eps1 / 4, ..., eps1 / 2^count``."""
    return eps1 / 2.0 ** np.arange(1, count + 1)


def smoothing_average(flow: CayleyFlow, f: np.ndarray, eps: float,
                      substeps: int = 16) -> tuple[np.ndarray, np.ndarray]:
    """``f_eps = (1/eps) int_0^eps W_t f dt`` by the composite midpoint rule.

    Returns ``(f_eps, W_eps f)``.  The flow is advanced half a substep to the
    first midpoint, then a full substep at a time.
    """
    if substeps < 16:
        raise RefusedError(f"need at least 16 substeps, got {substeps}")
    d = eps / substeps
    half_steps = flow.steps_for(0.5 * d)
    full_steps = 2 * half_steps
    g = flow.step(f, 0.5 * d / half_steps, half_steps)
    acc = g.copy()
    for _ in range(substeps - 1):
        g = flow.step(g, d / full_steps, full_steps)
        acc += g
    end = flow.step(g, 0.5 * d / half_steps, half_steps)
    return acc / substeps, end


@dataclass
class RegularizedTrace:
    """Per-``eps`` record of the regularized construction for one ``f``.

    Keys of the dict fields are the branches ``'+'`` and ``'-'``.  Inequality
    slacks are right side minus left side, so nonnegative means satisfied;
    the endpoints of the schedule carry ``nan`` for the centered-difference
    derivative check.
    """

    lam: float
    mu: float
    c1: float
    epsilon_schedule: np.ndarray
    F: dict
    derivative_estimates: dict
    derivative_exact: dict
    inequality_residuals: dict
    snorm_slack: dict
    op_ratio: np.ndarray
    op_constant: np.ndarray
    smoothing_ratio: np.ndarray
    identity_residual: np.ndarray
    limits: dict
    eps0: float
    eps1: float
    form_norm_BA: float
    direct_value: complex
    surrogate_norm: Optional[float]
    gronwall_constant: dict
    notes: list = field(default_factory=list)

    @property
    def F_plus(self) -> np.ndarray:
        return self.F["+"]

    @property
    def F_minus(self) -> np.ndarray:
        return self.F["-"]

    @property
    def max_identity_residual(self) -> float:
        return float(np.max(self.identity_residual))

    def snorm_bound_holds(self) -> bool:
        return all(bool(np.all(v >= 0)) for v in self.snorm_slack.values())

    def op_bound_holds(self) -> bool:
        ok = np.all(self.op_ratio <= self.op_constant / self.epsilon_schedule)
        c = self.op_constant
        return bool(ok and np.max(c) < 2.0 * np.min(c))

    def differential_inequality_holds(self) -> bool:
        return all(bool(np.all(v[1:-1] >= 0)) for v in self.inequality_residuals.values())


def regularized_trace(ops: OperatorSet, ctx: NormContext, f: np.ndarray, lam: float, mu: float,
                      schedule: Optional[Sequence[float]] = None, *, substeps: int = 16,
                      samples: int = 4, seed: int = 0, form_norm_BA: Optional[float] = None,
                      flow: Optional[CayleyFlow] = None) -> RegularizedTrace:
    """Run the regularized construction along a decreasing ``eps`` schedule.

    For each ``eps``: the smoothed vector ``f_eps`` and its ``eps``-derivative
    ``(W_eps f - f_eps)/eps``, both branches of ``F_eps = <f_eps, G_eps f_eps>``,
    the exact derivative, the bounds on ``||G f||_S``, the identity for
    ``T = G^-1`` and the slack of the differential inequality.  The last four
    points are extrapolated to ``eps = 0`` with a cubic.
    """
    f = np.asarray(f, dtype=float)
    eps0 = eps0_bound(ops)
    eps1 = min(eps0, 1.0)
    eps = default_schedule(eps1) if schedule is None else np.asarray(schedule, dtype=float)
    if eps.ndim != 1 or eps.size < 3:
        raise RefusedError("schedule needs at least 3 points")
    if np.any(eps <= 0) or np.any(eps >= eps1):
        raise RefusedError(f"schedule must lie in (0, eps1) with eps1 = {eps1:.6g}")
    if np.any(np.diff(eps) >= 0):
        raise RefusedError("schedule must be strictly decreasing")
    if form_norm_BA is None:
        form_norm_BA = form_bound(ops.commutator_BA(), ops.S)
    flow = CayleyFlow(ops) if flow is None else flow
    c1 = ops.c1
    m = eps.size
    F = {b: np.empty(m, complex) for b in "+-"}
    dex = {b: np.empty(m, complex) for b in "+-"}
    slack_s = {b: np.empty(m) for b in "+-"}
    rhs_diff = {b: np.empty(m) for b in "+-"}
    ratio_op = np.empty(m)
    ratio_sm = np.empty(m)
    ident = np.empty(m)
    sur = e_surrogate_norm(ctx, f) if ctx.weights is not None else None
    probes = _sample_vectors(ops.grid, samples, seed).T if samples else None
    for k, e in enumerate(eps):
        fe, end = smoothing_average(flow, f, e, substeps)
        fp = (end - fe) / e
        Af = ops.apply_A(fe)
        shared = s_star_norm(ctx, fp) + s_star_norm(ctx, Af)
        ratio_sm[k] = math.sqrt(e) * shared / sur if sur else math.nan
        c = 1.0 + c1 * e
        u = {}
        res = {}
        for b in "+-":
            res[b] = RegularizedResolvent(ops, lam, mu, e, b)
            u[b] = res[b].solve(fe)
            F[b][k] = np.vdot(fe, u[b])
        for b, other in (("+", "-"), ("-", "+")):
            s = _SIGN[b]
            dex[b][k] = (np.vdot(fp, u[b]) + np.vdot(u[other], fp)
                         + s * 1j * np.vdot(u[other], ops.B @ u[b]))
            aF = abs(F[b][k])
            slack_s[b][k] = math.sqrt(c / e * aF) - s_norm(ctx, u[b])
            rhs_diff[b][k] = 2.0 * c * (shared * math.sqrt(aF / e) + form_norm_BA * aF)
        ident[k] = max(bou_identity_check(ops, fe, lam, mu, e, b).residual for b in "+-")
        if probes is not None:
            G = res["+"].solve(probes.astype(complex))
            ratio_op[k] = max(s_norm(ctx, G[:, j]) / s_star_norm(ctx, probes[:, j])
                             for j in range(probes.shape[1]))
        else:
            ratio_op[k] = math.nan
    dfd = {b: np.gradient(F[b], eps) for b in "+-"}
    resid_diff = {}
    for b in "+-":
        r = rhs_diff[b] - np.abs(dfd[b])
        r[0] = r[-1] = np.nan
        resid_diff[b] = r
    limits = {}
    for b in "+-":
        tail = slice(m - 4, m)
        pr = np.polyfit(eps[tail], F[b][tail].real, 3)
        pi = np.polyfit(eps[tail], F[b][tail].imag, 3)
        limits[b] = complex(pr[-1], pi[-1])
    direct = complex(np.vdot(f, shifted_solve(ops, lam, mu, 0.0, "+", f)))
    gron = {}
    for b in "+-":
        denom = abs(F[b][0]) + (sur ** 2 if sur else 0.0)
        gron[b] = abs(limits[b]) / denom if denom > 0 else math.nan
    notes = ["normalizations use the computable surrogate weight norm, an upper "
             "bound for the interpolation norm; the empirical constants may be pessimistic"]
    if c1 * lam < 0:
        notes.append("c1*lambda < 0: the bounds on ||G f||_S are not guaranteed here")
    return RegularizedTrace(float(lam), float(mu), c1, eps, F, dfd, dex, resid_diff, slack_s,
                            ratio_op, 1.0 + c1 * eps, ratio_sm, ident, limits, eps0, eps1,
                            float(form_norm_BA), direct, sur, gron, notes)


@dataclass
class ConvergenceReport:
    eps2: float
    epsilons: np.ndarray
    differences: np.ndarray
    slope: float
    stderr: float
    contraction_max: float
    zero_difference: float

    @property
    def slope_ok(self) -> bool:
        return 0.9 <= self.slope <= 1.1

    @property
    def contraction_ok(self) -> bool:
        return self.contraction_max <= 1.0 + 1e-10

    @property
    def passed(self) -> bool:
        return self.slope_ok and self.contraction_ok and self.zero_difference == 0.0


def eps_window_convergence(ops: OperatorSet, f: np.ndarray, lam: float, mu: float, c2: float,
                           *, branch: str = "+", points: int = 8, samples: int = 4,
                           seed: int = 0, eps1: Optional[float] = None) -> ConvergenceReport:
    """Linear convergence of ``G_eps f`` to ``G_0 f`` inside ``(0, eps2]``.

    ``eps2 = min(eps1, mu / (2 c2))`` (just ``eps1`` when ``c2 = 0``).  Also
    checks ``||(H - lambda -/+ i mu/2) G_eps g|| <= ||g||`` on sampled ``g``.
    """
    if not mu > 0:
        raise RefusedError(f"mu must be positive, got {mu}")
    if eps1 is None:
        eps1 = min(eps0_bound(ops), 1.0)
    eps2 = eps1 if c2 <= 0 else min(eps1, mu / (2.0 * c2))
    epsilons = eps2 / 2.0 ** np.arange(points)
    s = _sign(branch)
    f = np.asarray(f, dtype=complex)
    g0 = shifted_solve(ops, lam, mu, 0.0, branch, f)
    zero = float(np.linalg.norm(shifted_solve(ops, lam, mu, 0.0, branch, f) - g0))
    probes = _sample_vectors(ops.grid, samples, seed).T.astype(complex)
    half = ops.H - (lam + 0.5j * s * mu) * sp.identity(ops.n, format="csr")
    diffs = np.empty(points)
    worst = 0.0
    for k, e in enumerate(epsilons):
        res = RegularizedResolvent(ops, lam, mu, e, branch)
        diffs[k] = np.linalg.norm(res.solve(f) - g0)
        if samples:
            out = half @ res.solve(probes)
            worst = max(worst, float(np.max(np.linalg.norm(out, axis=0)
                                            / np.linalg.norm(probes, axis=0))))
    fit = fit_exponent(epsilons, diffs)
    return ConvergenceReport(eps2, epsilons, diffs, fit.slope, fit.stderr, worst, zero)


def lowest_eigenvalue(ops: OperatorSet) -> float:
    from .hypotheses import min_eig_sym
    return min_eig_sym(ops.H)[0]
