"""Computable norms attached to ``S`` and the weights built from ``V``.

``||f||_S = <f, S f>^(1/2)`` and its dual ``||g||_S* = <g, S^-1 g>^(1/2)``,
the weights ``M = min(-V, |x|^-2)`` and ``Lambda = (-V/M)^(1/2)``, the
interpolation-norm surrogate ``||Lambda^(1/2 + 2 delta) (-V)^(-1/2) f||`` and
the maximal admissible smoothing weight.  Also the Cayley discretization of
the dilation group.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import NumericalFailure, RefusedError
from .lattice import OperatorSet

DEFAULT_DELTA = 0.05


def _dot(f, g) -> complex:
    """``<f, g>``, antilinear in the first slot."""
    return np.vdot(f, g)


@dataclass(frozen=True)
class Weights:
    V: np.ndarray
    M: np.ndarray
    Lambda: np.ndarray


def weight_fields(ops: OperatorSet) -> Weights:
    """``M`` and ``Lambda`` on the grid.  Requires ``V < 0`` at every node."""
    v = ops.potential_diag
    if np.any(v >= 0):
        raise RefusedError("the weights need V(x) < 0 at every node; "
                           f"max V on the grid is {float(np.max(v)):.6g}")
    r2 = np.einsum("ij,ij->i", ops.grid.points(), ops.grid.points())
    with np.errstate(divide="ignore"):
        inv_r2 = np.where(r2 > 0, 1.0 / np.where(r2 > 0, r2, 1.0), np.inf)
    M = np.minimum(-v, inv_r2)
    Lam = np.maximum(1.0, np.sqrt(r2 * -v))
    return Weights(v, M, Lam)


class NormContext:
    """Norms attached to one :class:`OperatorSet`.

    The sparse LU factorization of ``S`` is computed once; every dual-norm
    evaluation does one solve plus iterative refinement to ``1e-12``.
    Weights are ``None`` when ``V`` is not strictly negative.
    """

    def __init__(self, ops: OperatorSet, delta: float = DEFAULT_DELTA,
                 refine_tol: float = 1e-12):
        if not 0.0 < delta < 0.25:
            raise RefusedError(f"delta must lie in (0, 1/4), got {delta}")
        self.ops = ops
        self.S = sp.csc_matrix(ops.S)
        self.delta = float(delta)
        self.refine_tol = refine_tol
        try:
            self._lu = spla.splu(self.S)
        except RuntimeError as exc:
            raise NumericalFailure(f"factorization of S failed ({exc}); "
                                   "check lambda_min(S)") from None
        try:
            self.weights: Optional[Weights] = weight_fields(ops)
        except RefusedError:
            self.weights = None

    def _require_weights(self) -> Weights:
        if self.weights is None:
            raise RefusedError("V(x) < 0 must hold everywhere for these weights")
        return self.weights

    def solve_S(self, g: np.ndarray) -> np.ndarray:
        if np.iscomplexobj(g):
            return self.solve_S(g.real) + 1j * self.solve_S(g.imag)
        x = self._lu.solve(g)
        gnorm = np.linalg.norm(g)
        for _ in range(5):
            r = g - self.S @ x
            if np.linalg.norm(r) <= self.refine_tol * gnorm:
                break
            x = x + self._lu.solve(r)
        return x

    @property
    def M(self) -> np.ndarray:
        return self._require_weights().M

    @property
    def Lambda(self) -> np.ndarray:
        return self._require_weights().Lambda


def _lambda_min_hint(ctx: NormContext) -> str:
    from .hypotheses import min_eig_sym
    try:
        lam, _ = min_eig_sym(ctx.S)
        return f"lambda_min(S) = {lam:.6g}"
    except NumericalFailure:
        return "lambda_min(S) unavailable"


def s_norm(ctx: NormContext, f: np.ndarray) -> float:
    q = _dot(f, ctx.S @ f).real
    if q < 0:
        if q > -1e-14 * max(1.0, np.vdot(f, f).real):
            return 0.0
        raise NumericalFailure(f"<f, S f> = {q:.6g} < 0: S is not positive ({_lambda_min_hint(ctx)})")
    return math.sqrt(q)


def s_star_norm(ctx: NormContext, g: np.ndarray) -> float:
    q = _dot(g, ctx.solve_S(g)).real
    if q < 0:
        if q > -1e-14 * max(1.0, np.vdot(g, g).real):
            return 0.0
        raise NumericalFailure(f"<g, S^-1 g> = {q:.6g} < 0 ({_lambda_min_hint(ctx)})")
    return math.sqrt(q)


@dataclass
class DominationReport:
    worst_margin: float
    passed: bool
    offending: Optional[np.ndarray]


def dominated_bound_check(ctx: NormContext, c1: float, c_tilde: float, samples: int = 100,
                          seed: int = 0, support: float = 0.5) -> DominationReport:
    """Check ``<f, S^-1 f> <= (c1 - c_tilde)^-1 <f, (-V)^-1 f>`` on random vectors.

    Vectors are random on ``|x|_inf <= support * R`` and zero elsewhere.  The
    margin is the right side minus the left side divided by the right side.
    """
    w = ctx._require_weights()
    if not c1 > c_tilde:
        raise RefusedError(f"need c1 > c_tilde, got c1={c1}, c_tilde={c_tilde}")
    rng = np.random.default_rng(seed)
    pts = ctx.ops.grid.points()
    mask = np.max(np.abs(pts), axis=1) <= support * ctx.ops.grid.half_extent
    worst, offending = math.inf, None
    for _ in range(samples):
        f = np.zeros(len(pts))
        f[mask] = rng.standard_normal(int(mask.sum()))
        lhs = _dot(f, ctx.solve_S(f)).real
        rhs = float(np.sum(f * f / -w.V)) / (c1 - c_tilde)
        margin = (rhs - lhs) / rhs if rhs > 0 else 0.0
        if margin < worst:
            worst = margin
            if margin < 0:
                offending = f.copy()
    if samples == 0:
        worst = 0.0
    return DominationReport(worst, worst >= -1e-12, offending)


def e_surrogate_weight(ctx: NormContext) -> np.ndarray:
    w = ctx._require_weights()
    return w.Lambda ** (0.5 + 2.0 * ctx.delta) / np.sqrt(-w.V)


def e_surrogate_norm(ctx: NormContext, f: np.ndarray) -> float:
    """``||Lambda^(1/2 + 2 delta) (-V)^(-1/2) f||``."""
    return float(np.linalg.norm(e_surrogate_weight(ctx) * f))


def smoothness_weight(ctx: NormContext) -> np.ndarray:
    """``L_max = M^(1/4 + delta) (-V)^(1/4 - delta)``."""
    w = ctx._require_weights()
    return w.M ** (0.25 + ctx.delta) * (-w.V) ** (0.25 - ctx.delta)


def weights_table(ctx: NormContext) -> dict:
    pts = ctx.ops.grid.points()
    out = {f"x{j}": pts[:, j] for j in range(pts.shape[1])}
    out["M"] = ctx.M
    out["Lambda"] = ctx.Lambda
    out["L_max"] = smoothness_weight(ctx)
    return out


def write_weights_csv(ctx: NormContext, path) -> None:
    table = weights_table(ctx)
    keys = list(table)
    with open(path, "w") as fh:
        fh.write(",".join(keys) + "\n")
        for row in zip(*(table[k] for k in keys)):
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


class CayleyFlow:
    """Cayley discretization of ``W_t = exp(i t A)`` with ``A = iK``.

    One step of size ``tau`` is ``(I + tau K/2)^-1 (I - tau K/2)``, an exactly
    orthogonal real matrix.  Factorizations are cached per step size.
    """

    def __init__(self, ops: OperatorSet, dt_max: Optional[float] = None):
        self.K = sp.csc_matrix(ops.K)
        self.dt_max = 0.01 * ops.grid.spacing if dt_max is None else float(dt_max)
        self._eye = sp.identity(self.K.shape[0], format="csc")
        self._cache: dict[float, tuple] = {}

    def _step_ops(self, tau: float):
        if tau not in self._cache:
            plus = sp.csc_matrix(self._eye + 0.5 * tau * self.K)
            minus = sp.csr_matrix(self._eye - 0.5 * tau * self.K)
            try:
                self._cache[tau] = (spla.splu(plus), minus)
            except RuntimeError as exc:
                raise NumericalFailure(f"Cayley step factorization failed: {exc}") from None
        return self._cache[tau]

    def step(self, f: np.ndarray, tau: float, count: int = 1) -> np.ndarray:
        if tau == 0 or count == 0:
            return np.array(f, copy=True)
        if np.iscomplexobj(f):
            return self.step(f.real, tau, count) + 1j * self.step(f.imag, tau, count)
        lu, minus = self._step_ops(tau)
        out = np.array(f, dtype=float, copy=True)
        for _ in range(count):
            out = lu.solve(minus @ out)
        return out

    def steps_for(self, t: float) -> int:
        return max(1, math.ceil(abs(t) / self.dt_max - 1e-9))

    def __call__(self, f: np.ndarray, t: float, steps: Optional[int] = None) -> np.ndarray:
        """``W_t f``.

        Without ``steps``: whole steps of ``dt_max`` then one remainder step.
        All Cayley factors commute, so ``W_s W_t`` and ``W_(s+t)`` then differ
        only by the local error of the remainder steps.  With ``steps``: that
        many equal steps.
        """
        if t == 0:
            return np.array(f, copy=True)
        if steps is None:
            sign = 1.0 if t > 0 else -1.0
            full = int(math.floor(abs(t) / self.dt_max))
            rest = abs(t) - full * self.dt_max
            out = self.step(f, sign * self.dt_max, full)
            if rest > 1e-15 * abs(t):
                out = self.step(out, sign * rest)
            return out
        n = int(steps)
        if n < self.steps_for(t):
            raise RefusedError(f"{n} steps is fewer than ceil(|t|/dt_max) = {self.steps_for(t)}")
        return self.step(f, t / n, n)


def dilation_flow(ops: OperatorSet, f: np.ndarray, t: float, steps: Optional[int] = None,
                  dt_max: Optional[float] = None) -> np.ndarray:
    """``W_t f`` by the Cayley scheme; see :class:`CayleyFlow`."""
    return CayleyFlow(ops, dt_max)(f, t, steps)
