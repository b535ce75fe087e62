"""Snapshot spaces, partition of unity and the offline multiscale space.

For every interior coarse node x_i the neighborhood D_i carries

* snapshots: kappa-harmonic extensions of each Kronecker boundary datum,
* chi_i: the kappa-harmonic extension of the bilinear coarse hat, cell by cell,
* a spectral problem in the snapshot space whose lowest modes, multiplied by
  chi_i, become the offline basis functions.

Local objects are stored in the node numbering of their patch; global basis
matrices use interior-node (free DOF) numbering of the fine mesh.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .fem import (
    SPDSolver,
    apply_dirichlet,
    connectivity,
    eig_sym_generalized,
    element_matrices,
    patch_mass,
    patch_stiffness,
)
from .field import PermeabilityField
from .grid import CoarseMesh, Patch

log = logging.getLogger(__name__)


class SpectralError(RuntimeError):
    pass


@dataclass
class LocalSnapshots:
    patch: Patch
    vectors: np.ndarray  # (patch.n_nodes, L_i)
    stiffness: sp.csr_matrix  # kappa-stiffness over D_i, local numbering

    @property
    def size(self) -> int:
        return self.vectors.shape[1]


def _harmonic_extension(A_local, patch: Patch, boundary_values):
    sys_ = apply_dirichlet(A_local, np.zeros(patch.n_nodes), patch.local_boundary, boundary_values)
    x = SPDSolver(sys_.matrix)(sys_.rhs) if len(sys_.free) else np.zeros_like(sys_.rhs)
    return sys_.expand(x)


def build_snapshots(patch: Patch, kappa: PermeabilityField) -> LocalSnapshots:
    """kappa-harmonic extensions of every Kronecker datum on the patch boundary."""
    A = patch_stiffness(patch, kappa.values[patch.cell_ids])
    L = len(patch.local_boundary)
    psi = _harmonic_extension(A, patch, np.eye(L))
    return LocalSnapshots(patch, psi, A)


def _corner_hats(patch: Patch) -> np.ndarray:
    """(n_nodes, 4) bilinear hats of the patch corners (ll, lr, ur, ul)."""
    a, b = np.meshgrid(np.arange(patch.ncx + 1) / patch.ncx, np.arange(patch.ncy + 1) / patch.ncy)
    s, t = a.ravel(), b.ravel()
    return np.column_stack([(1 - s) * (1 - t), s * (1 - t), s * t, (1 - s) * t])


@dataclass
class PartitionOfUnity:
    coarse: CoarseMesh = field(repr=False)
    chi: list[np.ndarray]  # per interior coarse node, on its neighborhood patch
    gradient_factor: np.ndarray  # per fine cell: sum_i H^2 |grad chi_i|^2 (cell average)

    def global_vector(self, i: int) -> np.ndarray:
        u = np.zeros(self.coarse.fine.n_nodes)
        u[self.coarse.neighborhoods[i].nodes] = self.chi[i]
        return u

    def kappa_hat(self, kappa: PermeabilityField) -> np.ndarray:
        return kappa.values * self.gradient_factor


def element_corner_functions(element: Patch, kappa: PermeabilityField) -> np.ndarray:
    """kappa-harmonic extensions of the four corner hats of one coarse element."""
    A = patch_stiffness(element, kappa.values[element.cell_ids])
    hats = _corner_hats(element)
    return _harmonic_extension(A, element, hats[element.local_boundary])


def build_partition_of_unity(coarse: CoarseMesh, kappa: PermeabilityField) -> PartitionOfUnity:
    fine = coarse.fine
    K1, _ = element_matrices(fine.hx, fine.hy)
    cell_area = fine.hx * fine.hy
    conn_cache = {}
    grad_factor = np.zeros(fine.n_cells)
    # corner solutions per element, keyed by global coarse node (I, J)
    pieces: dict[tuple[int, int], list[tuple[Patch, np.ndarray]]] = {}
    for e, elem in enumerate(coarse.elements):
        I0, J0 = e % coarse.NX, e // coarse.NX
        funcs = element_corner_functions(elem, kappa)
        key = (elem.ncx, elem.ncy)
        if key not in conn_cache:
            conn_cache[key] = connectivity(*key)
        conn = conn_cache[key]
        for c, (dI, dJ) in enumerate([(0, 0), (1, 0), (1, 1), (0, 1)]):
            I, J = I0 + dI, J0 + dJ
            if not (0 < I < coarse.NX and 0 < J < coarse.NY):
                continue
            vals = funcs[:, c][conn]  # (cells, 4)
            grad_factor[elem.cell_ids] += np.einsum("ca,ab,cb->c", vals, K1, vals) / cell_area
            pieces.setdefault((I, J), []).append((elem, funcs[:, c]))
    grad_factor *= coarse.H**2

    chi = []
    for k, (I, J) in enumerate(coarse.interior_coarse_nodes):
        patch = coarse.neighborhoods[k]
        v = np.zeros(patch.n_nodes)
        for elem, vals in pieces[(int(I), int(J))]:
            v[patch.to_local(elem.nodes)] = vals
        chi.append(v)
    return PartitionOfUnity(coarse, chi, grad_factor)


@dataclass
class LocalSpectrum:
    patch: Patch
    eigenvalues: np.ndarray  # ascending, length l
    modes: np.ndarray  # (patch.n_nodes, l) fine-grid eigenfunctions on D_i


def spectral_select(snapshots: LocalSnapshots, pou: PartitionOfUnity, kappa: PermeabilityField, l: int) -> LocalSpectrum:
    """Lowest ``l`` modes of  a_kappa(phi, v) = lam (kappa_hat phi, v)  in the snapshot space."""
    patch = snapshots.patch
    L = snapshots.size
    if not 1 <= l <= L:
        raise ValueError(f"requested {l} modes from a snapshot space of dimension {L}")
    psi = snapshots.vectors
    khat = pou.kappa_hat(kappa)[patch.cell_ids]
    A = psi.T @ (snapshots.stiffness @ psi)
    B = psi.T @ (patch_mass(patch, khat) @ psi)
    A = (A + A.T) / 2
    B = (B + B.T) / 2
    try:
        lam, vec = eig_sym_generalized(A, B)
    except np.linalg.LinAlgError as exc:
        raise SpectralError(
            f"weighted mass matrix on neighborhood at cells ({patch.i0}, {patch.j0}) is not "
            f"positive definite (min kappa_hat {khat.min():.3e}); check the partition of unity"
        ) from exc
    return LocalSpectrum(patch, lam[:l], psi @ vec[:, :l])


@dataclass
class OfflineSpace:
    """Global offline basis in free-DOF numbering.

    ``owner[k] = (neighborhood, rank)`` for column k.  Columns belonging to
    one neighborhood are orthonormal in the kappa-energy inner product.
    """

    basis: sp.csc_matrix
    owner: np.ndarray  # (r, 2) int
    eigenvalues: list[np.ndarray]
    mesh_dims: tuple[int, int, int, int]  # nx, ny, NX, NY

    @property
    def dim(self) -> int:
        return self.basis.shape[1]

    @property
    def counts(self) -> np.ndarray:
        """Number of retained columns per neighborhood."""
        return np.bincount(self.owner[:, 0], minlength=len(self.eigenvalues))


def free_index(fine) -> np.ndarray:
    """Map from global node id to free-DOF index (-1 on the boundary)."""
    idx = np.full(fine.n_nodes, -1)
    idx[fine.interior_nodes] = np.arange(len(fine.interior_nodes))
    return idx


def _energy_gram_schmidt(W, A, rtol=1e-10):
    kept, drop = [], []
    for j in range(W.shape[1]):
        w = W[:, j].copy()
        n0 = np.sqrt(max(w @ (A @ w), 0.0))
        for q in kept:
            w -= (q @ (A @ w)) * q
        n1 = np.sqrt(max(w @ (A @ w), 0.0))
        if n0 == 0.0 or n1 <= rtol * n0:
            drop.append(j)
            continue
        kept.append(w / n1)
    return (np.column_stack(kept) if kept else np.zeros((W.shape[0], 0))), drop


def assemble_offline(spectra: list[LocalSpectrum], snapshots: list[LocalSnapshots], pou: PartitionOfUnity,
                     orthonormalize: bool = True) -> OfflineSpace:
    coarse = pou.coarse
    fidx = free_index(coarse.fine)
    rows, cols, vals, owner = [], [], [], []
    col = 0
    for i, (spec, snap) in enumerate(zip(spectra, snapshots)):
        patch = spec.patch
        W = pou.chi[i][:, None] * spec.modes
        ranks = np.arange(W.shape[1])
        if orthonormalize:
            W, dropped = _energy_gram_schmidt(W, snap.stiffness)
            if dropped:
                warnings.warn(f"neighborhood {i}: dropped {len(dropped)} dependent offline vectors",
                              RuntimeWarning, stacklevel=2)
            ranks = np.delete(ranks, dropped)
        inner = patch.local_interior
        g = fidx[patch.nodes[inner]]
        for j in range(W.shape[1]):
            w = W[inner, j]
            nz = np.flatnonzero(w)
            rows.append(g[nz])
            cols.append(np.full(len(nz), col))
            vals.append(w[nz])
            owner.append((i, ranks[j]))
            col += 1
    n = len(coarse.fine.interior_nodes)
    V = sp.csc_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, col)
    ) if col else sp.csc_matrix((n, 0))
    dims = (coarse.fine.nx, coarse.fine.ny, coarse.NX, coarse.NY)
    return OfflineSpace(V, np.array(owner, dtype=int).reshape(-1, 2),
                        [s.eigenvalues for s in spectra], dims)


class MultiscaleBuilder:
    """Caches snapshots, partition of unity and local spectra for one problem.

    Spectra are computed once for ``l_max`` modes, so offline spaces for
    any ``l <= l_max`` are nested and cheap to produce.
    """

    def __init__(self, coarse: CoarseMesh, kappa: PermeabilityField, l_max: int = 4):
        self.coarse = coarse
        self.kappa = kappa
        self.l_max = l_max
        self.pou = build_partition_of_unity(coarse, kappa)
        self.snapshots = [build_snapshots(p, kappa) for p in coarse.neighborhoods]
        self.spectra = [spectral_select(s, self.pou, kappa, min(l_max, s.size)) for s in self.snapshots]

    def offline_space(self, l: int | list[int], orthonormalize: bool = True) -> OfflineSpace:
        ls = [l] * len(self.spectra) if np.isscalar(l) else list(l)
        if max(ls) > self.l_max:
            raise ValueError(f"l={max(ls)} exceeds cached l_max={self.l_max}")
        cut = [LocalSpectrum(s.patch, s.eigenvalues[:k], s.modes[:, :k]) for s, k in zip(self.spectra, ls)]
        return assemble_offline(cut, self.snapshots, self.pou, orthonormalize)


def build_offline_space(coarse: CoarseMesh, kappa: PermeabilityField, l: int) -> OfflineSpace:
    return MultiscaleBuilder(coarse, kappa, l_max=l).offline_space(l)


def save_offline(space: OfflineSpace, path) -> None:
    V = space.basis.tocsc()
    V.sort_indices()
    np.savez(
        Path(path),
        mesh_dims=np.array(space.mesh_dims),
        counts=space.counts,
        owner=space.owner,
        shape=np.array(V.shape),
        data=V.data,
        indices=V.indices,
        indptr=V.indptr,
        eig_lengths=np.array([len(e) for e in space.eigenvalues]),
        eigenvalues=np.concatenate(space.eigenvalues) if space.eigenvalues else np.zeros(0),
    )


def load_offline(path) -> OfflineSpace:
    with np.load(Path(path)) as z:
        V = sp.csc_matrix((z["data"], z["indices"], z["indptr"]), shape=tuple(z["shape"]))
        eig = np.split(z["eigenvalues"], np.cumsum(z["eig_lengths"])[:-1]) if len(z["eig_lengths"]) else []
        return OfflineSpace(V, z["owner"], list(eig), tuple(int(x) for x in z["mesh_dims"]))
