"""Residual-driven online enrichment of the reduced space.

After each reduced solve the local residual functionals R_i (one per coarse
neighborhood D_i) are represented in the local space of fine functions
vanishing on the boundary of D_i.  Their Riesz representatives are the
online basis functions and their kappa-energy norms measure the residual.

Modes:

``uniform``    every neighborhood receives a function at each level;
``adaptive1``  a non-overlapping subset carrying a fraction ``theta`` of the
               squared residual is enriched; online functions are discarded
               at the end of the time step;
``adaptive2``  as adaptive1, but online functions are kept for later steps.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .fem import SPDSolver
from .grid import CoarseMesh
from .msbasis import free_index
from .rom import ReducedOperator
from .stepper import Nonlinearity, StepperConfig, etd_weight

log = logging.getLogger(__name__)

MODES = ("uniform", "adaptive1", "adaptive2")
PRESET_TOLERANCES = (1e-2, 1e-3, 1e-4)


@dataclass
class EnrichmentPolicy:
    mode: str = "adaptive1"
    tol: float = 1e-3
    max_levels: int = 1
    theta: float = 0.7
    dof_budget: int | None = None  # cap on online columns added per time step

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown enrichment mode {self.mode!r}; expected one of {MODES}")
        if not self.tol >= 0:
            raise ValueError("tol must be non-negative")
        if not 0 < self.theta <= 1:
            raise ValueError("theta must lie in (0, 1]")
        if self.max_levels < 0:
            raise ValueError("max_levels must be >= 0")
        if self.dof_budget is not None and self.dof_budget < 0:
            raise ValueError("dof_budget must be >= 0")

    @property
    def keeps_online(self) -> bool:
        return self.mode == "adaptive2"


@dataclass
class ResidualReport:
    norms: np.ndarray  # dual norm per neighborhood
    n: int
    level: int

    @property
    def aggregate(self) -> float:
        return float(np.sqrt(np.sum(self.norms**2)))


def residual_vector(A, M, f: Nonlinearity, config: StepperConfig, u_prev, u_cur, load=None):
    """r_k = R(gamma_k) for every free fine basis function gamma_k.

    Implicit Euler:  M (u_prev/dt + S(u_cur)) - (M/dt + A) u_cur.
    ETD: the explicit right-hand side w/dt replaces u_prev/dt + S(u_cur).
    """
    dt = config.dt
    if config.scheme == "etd":
        w, _ = etd_weight(u_prev, f, dt)
        src = w / dt
    else:
        src = u_prev / dt + f(u_cur)
    if load is not None:
        src = src + load
    return M @ (src - u_cur / dt) - A @ u_cur


def select_neighborhoods(report: ResidualReport, policy: EnrichmentPolicy, coarse: CoarseMesh,
                         budget: int | None = None) -> list[int]:
    norms = report.norms
    if policy.mode == "uniform":
        picks = [int(i) for i in np.flatnonzero(norms > 0)]
    else:
        total = float(np.sum(norms**2))
        order = np.argsort(-norms, kind="stable")
        picks, acc = [], 0.0
        for i in order:
            if acc >= policy.theta * total or norms[i] == 0:
                break
            if any(coarse.overlaps(int(i), j) for j in picks):
                continue  # deferred to the next level
            picks.append(int(i))
            acc += norms[i] ** 2
    if budget is not None:
        picks = sorted(picks, key=lambda i: -norms[i])[:budget]
    return sorted(picks)


class Enricher:
    """Online enrichment bound to one fine discretization and coarse grid."""

    def __init__(self, A, M, coarse: CoarseMesh, f: Nonlinearity, config: StepperConfig,
                 policy: EnrichmentPolicy, dependence_tol: float = 1e-10):
        self.A, self.M = A, M
        self.coarse = coarse
        self.f = f
        self.config = config
        self.policy = policy
        self.dependence_tol = dependence_tol
        fidx = free_index(coarse.fine)
        self.local_dofs = [fidx[p.interior_nodes] for p in coarse.neighborhoods]
        self._solvers: dict[int, SPDSolver] = {}
        self._blocks: dict[int, sp.csr_matrix] = {}
        self.log: list[tuple] = []

    def __len__(self):
        return len(self.local_dofs)

    def local_block(self, i: int):
        if i not in self._blocks:
            idx = self.local_dofs[i]
            self._blocks[i] = self.A[idx][:, idx].tocsr()
        return self._blocks[i]

    def _solver(self, i: int) -> SPDSolver:
        if i not in self._solvers:
            self._solvers[i] = SPDSolver(self.local_block(i))
        return self._solvers[i]

    def local_residual(self, i: int, u_prev, u_cur, load=None, r_global=None) -> np.ndarray:
        if r_global is None:
            r_global = residual_vector(self.A, self.M, self.f, self.config, u_prev, u_cur, load)
        return r_global[self.local_dofs[i]]

    def online_basis(self, i: int, r_local) -> tuple[np.ndarray, float]:
        """Riesz representative on D_i (interior DOFs) and its kappa-energy norm."""
        r_local = np.asarray(r_local, dtype=float)
        if not np.any(r_local):
            return np.zeros_like(r_local), 0.0
        phi = self._solver(i)(r_local)
        return phi, float(np.sqrt(max(phi @ r_local, 0.0)))

    def residual_report(self, u_prev, u_cur, n: int = 0, level: int = 0, load=None):
        r = residual_vector(self.A, self.M, self.f, self.config, u_prev, u_cur, load)
        phis, norms = [], np.zeros(len(self))
        for i in range(len(self)):
            phi, norms[i] = self.online_basis(i, r[self.local_dofs[i]])
            phis.append(phi)
        return ResidualReport(norms, n, level), phis

    def _global_column(self, i, phi, nrm):
        n = self.A.shape[0]
        idx = self.local_dofs[i]
        return sp.csc_matrix((phi / nrm, (idx, np.zeros(len(idx), dtype=int))), shape=(n, 1))

    def append(self, ops: ReducedOperator, i: int, phi, nrm) -> ReducedOperator | None:
        """Add one online function unless it is (numerically) in span(V)."""
        w = self._global_column(i, phi, nrm)
        b = np.asarray((ops.V.T @ (self.A @ w)).todense()).ravel()
        if ops.rank:
            y = sla.cho_solve(sla.cho_factor(ops.A_r), b)
            if 1.0 - b @ y < self.dependence_tol:
                return None
        return ops.extend(w)

    def enrich(self, integ, u_prev, res, n: int, load=None):
        """Enrichment levels at step n; returns (result, levels, aggregate, extra iterations)."""
        pol = self.policy
        levels = extra = added = 0
        agg = float("nan")
        while True:
            u_cur = integ.ops.reconstruct(res.value)
            report, phis = self.residual_report(u_prev, u_cur, n, levels, load)
            agg = report.aggregate
            budget = None if pol.dof_budget is None else pol.dof_budget - added
            stop = agg < pol.tol or levels >= pol.max_levels or budget == 0
            picks = [] if stop else select_neighborhoods(report, pol, self.coarse, budget)
            ops = integ.ops
            accepted = set()
            for i in picks:
                new = self.append(ops, i, phis[i], report.norms[i])
                if new is not None:
                    ops = new
                    accepted.add(i)
            for i in range(len(self)):
                self.log.append((n, levels, i, float(report.norms[i]), int(i in accepted), ops.rank))
            if not accepted:
                break
            added += len(accepted)
            integ.set_operator(ops)
            res = integ.step(u_prev, load)
            extra += res.iterations
            levels += 1
        log.debug("step %d: %d levels, residual %.3e, dof %d", n, levels, agg, integ.ops.rank)
        return res, levels, agg, extra

    def carryover(self, ops: ReducedOperator, base_rank: int) -> ReducedOperator:
        if self.policy.keeps_online or ops.rank == base_rank:
            return ops
        return ops.truncate(base_rank)
