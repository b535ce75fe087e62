"""POD compression and discrete empirical interpolation of nonlinear terms."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla

log = logging.getLogger(__name__)

SNAPSHOT_SOURCES = ("same_equation", "different_epsilon", "different_ic", "different_field",
                    "earlier_time_window")


class DeimError(RuntimeError):
    pass


@dataclass
class PodBasis:
    Phi: np.ndarray  # (n, m) orthonormal columns
    singular_values: np.ndarray  # all singular values of the snapshot matrix, descending

    @property
    def m(self) -> int:
        return self.Phi.shape[1]


def pod(snapshots, energy_cutoff: float | None = 1 - 1e-8, m: int | None = None,
        normalize: bool = False) -> PodBasis:
    """Left singular vectors of the (uncentered) snapshot matrix.

    ``snapshots`` is a sequence of vectors (or an array whose first axis
    indexes the snapshots).  ``m`` fixes the rank; otherwise the smallest rank capturing
    ``energy_cutoff`` of the squared singular values is used.  Either way the
    rank is capped at the numerical rank of the snapshots.  ``normalize``
    scales every nonzero snapshot to unit length first, which keeps late
    snapshots of a decaying trajectory from being ignored.
    """
    S = np.asarray(snapshots if isinstance(snapshots, np.ndarray) else list(snapshots), dtype=float)
    if S.size == 0:
        raise ValueError("no snapshots")
    S = S.reshape(len(S), -1).T  # one column per snapshot
    if normalize:
        norms = np.linalg.norm(S, axis=0)
        S = S[:, norms > 0] / norms[norms > 0]
        if S.size == 0:
            raise ValueError("all snapshots are zero")
    U, s, _ = np.linalg.svd(S, full_matrices=False)
    if s[0] == 0.0:
        raise ValueError("all snapshots are zero")
    rank = int(np.count_nonzero(s > s[0] * max(S.shape) * np.finfo(float).eps))
    if m is None:
        if energy_cutoff is None or not 0 < energy_cutoff <= 1:
            raise ValueError("energy_cutoff must lie in (0, 1]")
        energy = np.cumsum(s**2) / np.sum(s**2)
        m = int(np.searchsorted(energy, energy_cutoff * (1 - 1e-15)) + 1)
    m = max(1, min(int(m), rank))
    return PodBasis(U[:, :m].copy(), s)


def deim_index_selection(Phi: np.ndarray) -> np.ndarray:
    """Greedy interpolation indices; ties go to the lowest index."""
    Phi = np.asarray(Phi, dtype=float)
    n, m = Phi.shape
    idx = [int(np.argmax(np.abs(Phi[:, 0])))]
    for i in range(1, m):
        w = np.linalg.solve(Phi[idx, :i], Phi[idx, i])
        r = Phi[:, i] - Phi[:, :i] @ w
        k = int(np.argmax(np.abs(r)))
        if np.abs(r[k]) <= 1e-13 * max(1.0, np.abs(Phi[:, i]).max()):
            raise DeimError(f"basis vector {i} is interpolated exactly by the previous {i} vectors at "
                            f"the selected rows; POD basis is rank deficient at the DEIM points")
        idx.append(k)
    return np.array(idx, dtype=int)


@dataclass
class DeimModel:
    pod: PodBasis
    indices: np.ndarray
    provenance: str = ""
    _lu: tuple = field(default=None, repr=False)
    _projector: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=int)
        if len(np.unique(self.indices)) != len(self.indices):
            raise DeimError("interpolation indices are not distinct")
        PtPhi = self.pod.Phi[self.indices]
        self._lu = sla.lu_factor(PtPhi)
        self.condition = float(np.linalg.cond(PtPhi))
        if not np.isfinite(self.condition):
            raise DeimError("P^T Phi is singular")
        log.info("DEIM model m=%d, cond(P^T Phi)=%.3e", self.m, self.condition)

    @property
    def m(self) -> int:
        return len(self.indices)

    @property
    def Phi(self) -> np.ndarray:
        return self.pod.Phi

    def coefficients(self, f_at_indices):
        f_at_indices = np.asarray(f_at_indices, dtype=float)
        if f_at_indices.shape[0] != self.m:
            raise ValueError(f"expected {self.m} sampled values, got {f_at_indices.shape[0]}")
        return sla.lu_solve(self._lu, f_at_indices)

    def apply(self, f_at_indices) -> np.ndarray:
        """Full-length interpolant Phi (P^T Phi)^{-1} f_p."""
        return self.Phi @ self.coefficients(f_at_indices)

    def register_test_basis(self, V, M) -> None:
        """Precompose V^T M Phi (P^T Phi)^{-1} for a Galerkin test basis V."""
        VtMPhi = np.asarray(V.T @ (M @ self.Phi))
        self._projector = sla.lu_solve(self._lu, VtMPhi.T, trans=1).T

    def apply_projected(self, f_at_indices) -> np.ndarray:
        if self._projector is None:
            raise DeimError("no test basis registered")
        f_at_indices = np.asarray(f_at_indices, dtype=float)
        if f_at_indices.shape[0] != self.m:
            raise ValueError(f"expected {self.m} sampled values, got {f_at_indices.shape[0]}")
        return self._projector @ f_at_indices


def deim_indices(basis: PodBasis, provenance: str = "") -> DeimModel:
    return DeimModel(basis, deim_index_selection(basis.Phi), provenance)


def deim_apply(model: DeimModel, f_at_indices, projected: bool = False) -> np.ndarray:
    return model.apply_projected(f_at_indices) if projected else model.apply(f_at_indices)


@dataclass
class SnapshotSet:
    vectors: list[np.ndarray]
    source: str
    steps: list[int]
    note: str = ""

    @property
    def provenance(self) -> str:
        return f"{self.source}: {len(self.vectors)} snapshots" + (f" ({self.note})" if self.note else "")


def collect_snapshots(trajectory, source: str = "same_equation", *, t_max: float | None = None,
                      dt: float | None = None, every: int = 1, note: str = "") -> SnapshotSet:
    """Nonlinear vectors recorded by a source run, optionally only for t < t_max."""
    if source not in SNAPSHOT_SOURCES:
        raise ValueError(f"unknown snapshot source {source!r}")
    items = trajectory.nonlinear if hasattr(trajectory, "nonlinear") else list(trajectory)
    if t_max is not None:
        if dt is None:
            raise ValueError("t_max needs dt")
        items = [(n, v) for n, v in items if n * dt < t_max + 1e-12 * dt]
    items = items[::every]
    if not items:
        raise ValueError("source trajectory recorded no nonlinear snapshots")
    return SnapshotSet([v for _, v in items], source, [n for n, _ in items], note)


def build_deim(snapshots: SnapshotSet, energy_cutoff: float | None = 1 - 1e-8, m: int | None = None,
               normalize: bool = True) -> DeimModel:
    return deim_indices(pod(snapshots.vectors, energy_cutoff, m, normalize), snapshots.provenance)


def save_deim(model: DeimModel, path) -> None:
    np.savez(Path(path), Phi=model.Phi, singular_values=model.pod.singular_values,
             indices=model.indices, provenance=np.array(json.dumps(model.provenance)))


def load_deim(path) -> DeimModel:
    with np.load(Path(path)) as z:
        return DeimModel(PodBasis(z["Phi"], z["singular_values"]), z["indices"],
                         json.loads(str(z["provenance"])))
