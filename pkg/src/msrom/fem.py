"""Bilinear (Q1) finite elements on the structured fine mesh.

All fields are nodal coefficient vectors.  Dirichlet conditions are imposed
by elimination: solvers work on the free (interior) unknowns and the
constrained values are re-inserted afterwards.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import Callable, NamedTuple

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .field import PermeabilityField
from .grid import FineMesh, Patch

_GAUSS = np.array([-1.0, 1.0]) / np.sqrt(3.0)
_REF_NODES = np.array([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]])


class NotSPDError(np.linalg.LinAlgError):
    pass


def _shape_gradients(xi, eta, hx, hy):
    """(4, 2) physical gradients of the Q1 shape functions at (xi, eta)."""
    sx, sy = _REF_NODES[:, 0], _REF_NODES[:, 1]
    dxi = sx * (1 + eta * sy) / 4.0
    deta = sy * (1 + xi * sx) / 4.0
    return np.column_stack([dxi * 2.0 / hx, deta * 2.0 / hy])


def _shape_values(xi, eta):
    sx, sy = _REF_NODES[:, 0], _REF_NODES[:, 1]
    return (1 + xi * sx) * (1 + eta * sy) / 4.0


@lru_cache(maxsize=32)
def element_matrices(hx: float, hy: float) -> tuple[np.ndarray, np.ndarray]:
    """Unit-coefficient stiffness and mass of one hx-by-hy cell (2x2 Gauss)."""
    K = np.zeros((4, 4))
    Me = np.zeros((4, 4))
    detJ = hx * hy / 4.0
    for xi in _GAUSS:
        for eta in _GAUSS:
            G = _shape_gradients(xi, eta, hx, hy)
            N = _shape_values(xi, eta)
            K += G @ G.T * detJ
            Me += np.outer(N, N) * detJ
    K.setflags(write=False)
    Me.setflags(write=False)
    return K, Me


def connectivity(ncx: int, ncy: int) -> np.ndarray:
    ci, cj = np.meshgrid(np.arange(ncx), np.arange(ncy))
    ll = cj.ravel() * (ncx + 1) + ci.ravel()
    return np.column_stack([ll, ll + 1, ll + ncx + 2, ll + ncx + 1])


def _assemble(cells, coef, Ke, n):
    rows = np.broadcast_to(cells[:, :, None], (len(cells), 4, 4)).ravel()
    cols = np.broadcast_to(cells[:, None, :], (len(cells), 4, 4)).ravel()
    data = (np.asarray(coef, dtype=float)[:, None, None] * Ke[None]).ravel()
    return sp.csr_matrix((data, (rows, cols)), shape=(n, n))


def _cell_values(kappa, n_cells):
    if kappa is None:
        return np.ones(n_cells)
    v = kappa.values if isinstance(kappa, PermeabilityField) else np.asarray(kappa, dtype=float)
    if v.shape != (n_cells,):
        raise ValueError(f"coefficient has {v.size} cell values, mesh has {n_cells} cells")
    return v


def assemble_stiffness(fine: FineMesh, kappa=None) -> sp.csr_matrix:
    """Global matrix of the form  a(u, v) = int kappa grad u . grad v."""
    if isinstance(kappa, PermeabilityField) and not kappa.matches(fine):
        raise ValueError("permeability field does not match mesh")
    K, _ = element_matrices(fine.hx, fine.hy)
    return _assemble(fine.cells, _cell_values(kappa, fine.n_cells), K, fine.n_nodes)


def assemble_mass(fine: FineMesh, weight=None) -> sp.csr_matrix:
    """Global (optionally cellwise-weighted) mass matrix."""
    _, Me = element_matrices(fine.hx, fine.hy)
    return _assemble(fine.cells, _cell_values(weight, fine.n_cells), Me, fine.n_nodes)


def patch_stiffness(patch: Patch, cell_coef) -> sp.csr_matrix:
    """Stiffness over the cells of ``patch`` only, in local node numbering."""
    K, _ = element_matrices(patch.mesh.hx, patch.mesh.hy)
    return _assemble(connectivity(patch.ncx, patch.ncy), cell_coef, K, patch.n_nodes)


def patch_mass(patch: Patch, cell_coef=None) -> sp.csr_matrix:
    _, Me = element_matrices(patch.mesh.hx, patch.mesh.hy)
    coef = np.ones(patch.n_cells) if cell_coef is None else cell_coef
    return _assemble(connectivity(patch.ncx, patch.ncy), coef, Me, patch.n_nodes)


@dataclass
class ConstrainedSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    free: np.ndarray
    fixed: np.ndarray
    values: np.ndarray

    def expand(self, x_free: np.ndarray) -> np.ndarray:
        x_free = np.asarray(x_free)
        u = np.zeros((len(self.free) + len(self.fixed),) + x_free.shape[1:])
        u[self.free] = x_free
        u[self.fixed] = self.values if self.values.ndim == u.ndim else self.values[:, None]
        return u


def apply_dirichlet(A, rhs, boundary_nodes, values=None) -> ConstrainedSystem:
    """Eliminate prescribed nodes; the free equations are left unchanged."""
    A = sp.csr_matrix(A)
    n = A.shape[0]
    fixed = np.asarray(boundary_nodes, dtype=int)
    if len(np.unique(fixed)) != len(fixed):
        raise ValueError("duplicate constrained node ids")
    mask = np.ones(n, dtype=bool)
    mask[fixed] = False
    free = np.flatnonzero(mask)
    g = np.zeros(len(fixed)) if values is None else np.asarray(values, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    if g.ndim == 2 and rhs.ndim == 1:
        rhs = np.repeat(rhs[:, None], g.shape[1], axis=1)
    b = rhs[free] - A[free][:, fixed] @ g
    return ConstrainedSystem(A[free][:, free].tocsr(), b, free, fixed, g)


class SPDSolver:
    """Factorize a symmetric positive definite matrix once, solve many times."""

    def __init__(self, A):
        self.n = A.shape[0]
        if self.n == 0:
            self._solve = lambda b: np.zeros_like(b, dtype=float)
            return
        if sp.issparse(A):
            lu = spla.splu(
                sp.csc_matrix(A),
                permc_spec="MMD_AT_PLUS_A",
                diag_pivot_thresh=0.0,
                options={"SymmetricMode": True},
            )
            d = lu.U.diagonal()
            if not np.all(d > 0):
                raise NotSPDError("sparse factorization found a non-positive pivot; matrix is not SPD")
            self._solve = lu.solve
        else:
            try:
                c = sla.cho_factor(np.asarray(A, dtype=float))
            except np.linalg.LinAlgError as exc:
                raise NotSPDError(f"Cholesky factorization failed: {exc}") from None
            self._solve = lambda b: sla.cho_solve(c, b)

    def __call__(self, b):
        return self._solve(np.asarray(b, dtype=float))


def solve_spd(A, b) -> np.ndarray:
    return SPDSolver(A)(b)


def eig_sym_generalized(A, B) -> tuple[np.ndarray, np.ndarray]:
    """Ascending eigenpairs of A v = lam B v with B-orthonormal vectors."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    try:
        sla.cholesky(B, lower=True)
    except np.linalg.LinAlgError:
        raise NotSPDError("right-hand matrix of the eigenproblem is not positive definite") from None
    lam, V = sla.eigh(A, B)
    return lam, V


class Norms(NamedTuple):
    energy: float
    l2: float
    kappa_energy: float


def _quad(A, u):
    return float(max(u @ (A @ u), 0.0))


def norms(u, A_unit, A_kappa, M) -> Norms:
    """Unweighted energy, L2 and kappa-weighted energy norms of ``u``."""
    u = np.asarray(u, dtype=float)
    return Norms(np.sqrt(_quad(A_unit, u)), np.sqrt(_quad(M, u)), np.sqrt(_quad(A_kappa, u)))


class FineDiscretization:
    """Assembled fine-scale operators for one mesh/permeability pair.

    ``A``, ``A1`` and ``M`` are full node-indexed matrices; the ``*_in``
    variants are restricted to interior nodes (homogeneous Dirichlet data
    eliminated) and are what all solvers and reduced models use.
    """

    def __init__(self, mesh: FineMesh, kappa: PermeabilityField):
        if not kappa.matches(mesh):
            raise ValueError("permeability field does not match mesh")
        self.mesh = mesh
        self.kappa = kappa
        self.A = assemble_stiffness(mesh, kappa)
        self.A1 = assemble_stiffness(mesh)
        self.M = assemble_mass(mesh)
        self.interior = mesh.interior_nodes

    def _restrict_matrix(self, A):
        idx = self.interior
        return A[idx][:, idx].tocsr()

    @cached_property
    def A_in(self):
        return self._restrict_matrix(self.A)

    @cached_property
    def A1_in(self):
        return self._restrict_matrix(self.A1)

    @cached_property
    def M_in(self):
        return self._restrict_matrix(self.M)

    @property
    def n_free(self) -> int:
        return len(self.interior)

    def restrict(self, u_full):
        return np.asarray(u_full)[self.interior]

    def extend(self, u_in):
        u = np.zeros((self.mesh.n_nodes,) + np.shape(u_in)[1:])
        u[self.interior] = u_in
        return u

    def interpolate(self, func: Callable) -> np.ndarray:
        """Nodal interpolant of ``func(x, y)`` on interior nodes."""
        xy = self.mesh.coordinates[self.interior]
        return np.asarray(func(xy[:, 0], xy[:, 1]), dtype=float)

    def norms(self, u_in) -> Norms:
        return norms(u_in, self.A1_in, self.A_in, self.M_in)
