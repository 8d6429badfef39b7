"""Uniform Dirichlet grids and the discrete operators built on them.

All matrices act on nodal values with the plain Euclidean inner product.  The
quadrature factor ``h**n`` is left out everywhere; every ratio the package
reports is invariant under it.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import RefusedError
from .potentials import PotentialSpec, euler_derivatives

MAX_UNKNOWNS = 250_000


@dataclass(frozen=True)
class Grid:
    """Cartesian lattice on ``[-R, R]^n`` with ``N`` nodes per axis (``N`` odd)."""

    dims: int
    half_extent: float
    points_per_axis: int

    @property
    def spacing(self) -> float:
        return 2.0 * self.half_extent / (self.points_per_axis - 1)

    @property
    def size(self) -> int:
        return self.points_per_axis ** self.dims

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.points_per_axis,) * self.dims

    @cached_property
    def axis(self) -> np.ndarray:
        n = self.points_per_axis
        half = (n - 1) // 2
        # integer offsets keep the coordinates exactly symmetric
        return np.arange(-half, half + 1) * self.spacing

    @property
    def coords(self) -> tuple[np.ndarray, ...]:
        return (self.axis,) * self.dims

    def points(self) -> np.ndarray:
        """All nodes as an ``(N**n, n)`` array, C order (axis 0 slowest)."""
        mesh = np.meshgrid(*self.coords, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def radius(self) -> np.ndarray:
        return np.sqrt(np.einsum("ij,ij->i", self.points(), self.points()))

    def refined(self) -> "Grid":
        """Same box, half the spacing."""
        return Grid(self.dims, self.half_extent, 2 * self.points_per_axis - 1)

    def to_dict(self) -> dict:
        return {"dims": self.dims, "half_extent": self.half_extent,
                "points_per_axis": self.points_per_axis, "spacing": self.spacing}


def build_grid(dims: int, half_extent: float, points_per_axis: int,
               max_unknowns: int = MAX_UNKNOWNS) -> Grid:
    if dims not in (1, 2, 3):
        raise RefusedError(f"dims must be 1, 2 or 3, got {dims}")
    if not half_extent > 0:
        raise RefusedError(f"half_extent must be positive, got {half_extent}")
    if points_per_axis < 3 or points_per_axis % 2 == 0:
        raise RefusedError(f"points_per_axis must be odd and >= 3 so the origin is a node, "
                           f"got {points_per_axis}")
    if points_per_axis ** dims > max_unknowns:
        raise RefusedError(f"{points_per_axis}^{dims} unknowns exceeds the cap {max_unknowns}")
    return Grid(int(dims), float(half_extent), int(points_per_axis))


def _kron_axis(op1d: sp.spmatrix, axis: int, grid: Grid) -> sp.csr_matrix:
    eye = sp.identity(grid.points_per_axis, format="csr")
    mats = [eye] * grid.dims
    mats[axis] = op1d
    out = mats[0]
    for m in mats[1:]:
        out = sp.kron(out, m, format="csr")
    return sp.csr_matrix(out)


def _second_difference(grid: Grid) -> sp.csr_matrix:
    n, h = grid.points_per_axis, grid.spacing
    main = np.full(n, 2.0 / h**2)
    off = np.full(n - 1, -1.0 / h**2)
    return sp.diags([off, main, off], [-1, 0, 1], format="csr")


def central_difference(grid: Grid, axis: int) -> sp.csr_matrix:
    """Central-difference gradient along ``axis`` with zero Dirichlet ghosts."""
    n, h = grid.points_per_axis, grid.spacing
    off = np.full(n - 1, 1.0 / (2.0 * h))
    d1 = sp.diags([-off, off], [-1, 1], format="csr")
    return _kron_axis(d1, axis, grid)


def coordinate(grid: Grid, axis: int) -> sp.dia_matrix:
    return sp.diags(grid.points()[:, axis])


def assemble_laplacian(grid: Grid) -> sp.csr_matrix:
    """Matrix of ``-Delta_h``: (2n+1)-point stencil, ``2n/h^2`` on the diagonal."""
    t = _second_difference(grid)
    lap = sum(_kron_axis(t, ax, grid) for ax in range(grid.dims))
    return sp.csr_matrix(lap)


def assemble_dilation(grid: Grid) -> sp.csr_matrix:
    """Real antisymmetric ``K`` with ``A = iK = (P.Q + Q.P)/2``.

    ``K = -(X D + D X)/2`` summed over axes.
    """
    k = None
    for ax in range(grid.dims):
        x = coordinate(grid, ax)
        d = central_difference(grid, ax)
        term = -0.5 * (x @ d + d @ x)
        k = term if k is None else k + term
    k = sp.csr_matrix(k)
    # exact antisymmetry regardless of summation order
    return sp.csr_matrix(0.5 * (k - k.T))


@dataclass(frozen=True)
class OperatorSet:
    """Assembled operators for ``H = -Delta + V`` and the dilation generator.

    ``B`` is ``[iH, A] = -2 Delta - Vt`` and ``S = -c1 H + B``.  ``euler1`` and
    ``euler2`` hold ``Vt`` and ``W`` on the grid so the higher commutators can
    be assembled from the same data.
    """

    grid: Grid
    potential_id: str
    laplacian: sp.csr_matrix
    potential_diag: np.ndarray
    euler1: np.ndarray
    euler2: np.ndarray
    H: sp.csr_matrix
    K: sp.csr_matrix
    B: sp.csr_matrix
    S: sp.csr_matrix
    c1: float

    @property
    def n(self) -> int:
        return self.H.shape[0]

    def apply_A(self, f: np.ndarray) -> np.ndarray:
        return 1j * (self.K @ f)

    def commutator_BA(self) -> sp.csr_matrix:
        """``[iB, A] = -4 Delta - W`` from the analytic formula."""
        return sp.csr_matrix(4.0 * self.laplacian - sp.diags(self.euler2))

    def commutator_SA(self) -> sp.csr_matrix:
        """``[iS, A] = -c1 B + [iB, A]``."""
        return sp.csr_matrix(-self.c1 * self.B + self.commutator_BA())

    def discrete_commutator(self) -> sp.csr_matrix:
        """``i(HA - AH) = KH - HK`` computed as a matrix commutator."""
        return sp.csr_matrix(self.K @ self.H - self.H @ self.K)


def _symmetrize(m) -> sp.csr_matrix:
    m = sp.csr_matrix(m)
    return sp.csr_matrix(0.5 * (m + m.T))


def assemble_operators(grid: Grid, potential: PotentialSpec, c1: float) -> OperatorSet:
    if not 0.0 <= c1 < 2.0:
        raise RefusedError(f"c1 must lie in [0, 2), got {c1}")
    pts = grid.points()
    v = np.asarray(potential.V(pts), dtype=float)
    vt, w, _ = euler_derivatives(potential, pts)
    lap = assemble_laplacian(grid)
    H = _symmetrize(lap + sp.diags(v))
    B = _symmetrize(2.0 * lap - sp.diags(vt))
    S = _symmetrize((2.0 - c1) * lap - sp.diags(c1 * v + vt))
    return OperatorSet(grid, potential.id, lap, v, np.asarray(vt, float), np.asarray(w, float),
                       H, assemble_dilation(grid), B, S, float(c1))


@dataclass
class CommutatorReport:
    residual_h: float
    residual_h2: float
    ratio: float
    boundary_clear: bool


def commutator_residual(ops: OperatorSet, f: np.ndarray) -> float:
    """``|| (KH - HK) f - B f || / ||f||`` (zero for ``f = 0``)."""
    norm = np.linalg.norm(f)
    if norm == 0.0:
        return 0.0
    return float(np.linalg.norm(ops.discrete_commutator() @ f - ops.B @ f) / norm)


def commutator_consistency(grid: Grid, potential: PotentialSpec, test_function,
                           c1: float = 0.0, margin_nodes: int = 10,
                           support_tol: float = 1e-12) -> CommutatorReport:
    """Two-grid consistency of the matrix commutator with the analytic ``B``.

    ``test_function`` maps an ``(m, n)`` array of points to values.  The
    result is only meaningful when the function is negligible within
    ``margin_nodes`` nodes of the boundary; ``boundary_clear`` records that.
    """
    fine = grid.refined()
    residuals = []
    clear = True
    for g in (grid, fine):
        ops = assemble_operators(g, potential, c1)
        pts = g.points()
        f = np.asarray(test_function(pts), dtype=float)
        edge = np.max(np.abs(pts), axis=1) > g.half_extent - margin_nodes * grid.spacing
        peak = np.max(np.abs(f)) if f.size else 0.0
        if peak > 0 and np.max(np.abs(f[edge]), initial=0.0) > support_tol * peak:
            clear = False
        residuals.append(commutator_residual(ops, f))
    r1, r2 = residuals
    ratio = r1 / r2 if r2 > 0 else float("nan")
    return CommutatorReport(r1, r2, ratio, clear)


def write_coo(path, matrix, dims: int) -> None:
    """Write ``matrix`` as ``row col value`` lines under ``# n rows cols nnz``."""
    coo = sp.coo_matrix(matrix)
    order = np.lexsort((coo.col, coo.row))
    with open(path, "w") as fh:
        fh.write(f"# {dims} {coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
        for i in order:
            fh.write(f"{int(coo.row[i])} {int(coo.col[i])} {float(coo.data[i])!r}\n")


def read_coo(path) -> tuple[int, sp.csr_matrix]:
    lines = Path(path).read_text().splitlines()
    _, dims, rows, cols, nnz = lines[0].split()
    body = np.loadtxt(lines[1:], ndmin=2) if int(nnz) else np.zeros((0, 3))
    m = sp.coo_matrix((body[:, 2], (body[:, 0].astype(int), body[:, 1].astype(int))),
                      shape=(int(rows), int(cols)))
    return int(dims), sp.csr_matrix(m)
