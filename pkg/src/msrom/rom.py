"""Galerkin projection onto a basis of fine-grid vectors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .fem import NotSPDError


class RankDeficiencyError(NotSPDError):
    pass


def _as_basis(V):
    return sp.csc_matrix(V) if not sp.issparse(V) else V.tocsc()


def _dense(X):
    return X.toarray() if sp.issparse(X) else np.asarray(X)


def _sym(X):
    return (X + X.T) / 2


@dataclass
class ReducedState:
    coefficients: np.ndarray
    n: int = 0
    t: float = 0.0


class ReducedOperator:
    """Projected stiffness ``V^T A V`` and mass ``V^T M V`` for a basis ``V``.

    ``A`` and ``M`` are the Dirichlet-eliminated fine operators; ``V`` has one
    column per basis function in free-DOF numbering.
    """

    def __init__(self, V, A, M, A_r=None, M_r=None, check=True):
        self.V = _as_basis(V)
        self.A = A
        self.M = M
        self.A_r = _sym(_dense(self.V.T @ (A @ self.V))) if A_r is None else A_r
        self.M_r = _sym(_dense(self.V.T @ (M @ self.V))) if M_r is None else M_r
        if check and self.rank:
            try:
                sla.cholesky(self.M_r)
            except np.linalg.LinAlgError:
                raise RankDeficiencyError(
                    f"reduced mass matrix of rank-{self.rank} basis is not positive definite"
                ) from None

    @property
    def rank(self) -> int:
        return self.V.shape[1]

    @property
    def n_fine(self) -> int:
        return self.V.shape[0]

    def extend(self, W) -> "ReducedOperator":
        """Append columns ``W``; only the new blocks are projected."""
        W = _as_basis(W)
        AW, MW = self.A @ W, self.M @ W
        a12 = _dense(self.V.T @ AW)
        m12 = _dense(self.V.T @ MW)
        A_r = np.block([[self.A_r, a12], [a12.T, _sym(_dense(W.T @ AW))]])
        M_r = np.block([[self.M_r, m12], [m12.T, _sym(_dense(W.T @ MW))]])
        return ReducedOperator(sp.hstack([self.V, W], format="csc"), self.A, self.M, A_r, M_r)

    def truncate(self, r: int) -> "ReducedOperator":
        """Keep the first ``r`` columns."""
        return ReducedOperator(self.V[:, :r], self.A, self.M, self.A_r[:r, :r].copy(),
                               self.M_r[:r, :r].copy(), check=False)

    def load(self, w) -> np.ndarray:
        """``V^T M w`` for a fine vector ``w``."""
        return self.V.T @ (self.M @ w)

    def reconstruct(self, c) -> np.ndarray:
        return reconstruct(self.V, c)

    def l2_projection(self, w) -> ReducedState:
        """M-orthogonal projection of ``w`` onto span(V)."""
        try:
            c = sla.cho_solve(sla.cho_factor(self.M_r), self.load(w))
        except np.linalg.LinAlgError:
            raise RankDeficiencyError("reduced mass matrix is not positive definite") from None
        return ReducedState(c)


def project(basis, A, M) -> ReducedOperator:
    return ReducedOperator(basis, A, M)


def reconstruct(basis, c) -> np.ndarray:
    if isinstance(c, ReducedState):
        c = c.coefficients
    c = np.asarray(c, dtype=float)
    if c.shape[0] != basis.shape[1]:
        raise ValueError(f"coefficient length {c.shape[0]} does not match basis rank {basis.shape[1]}")
    return basis @ c


def reduced_l2_projection(basis, M, w) -> ReducedState:
    """Coefficients c with (V^T M V) c = V^T M w."""
    V = _as_basis(basis)
    M_r = _sym(_dense(V.T @ (M @ V)))
    try:
        c = sla.cho_solve(sla.cho_factor(M_r), V.T @ (M @ w))
    except np.linalg.LinAlgError:
        raise RankDeficiencyError("reduced mass matrix is not positive definite") from None
    return ReducedState(c)
