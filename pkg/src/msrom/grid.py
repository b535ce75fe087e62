"""Structured fine/coarse meshes on the unit square and coarse neighborhoods.

Nodes and cells are numbered lexicographically with x running fastest:
node ``(i, j)`` has id ``j * (nx + 1) + i`` and cell ``(ci, cj)`` has id
``cj * nx + ci``.  Cell corners are listed counter-clockwise starting at
the lower-left node.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np


class ConfigurationError(ValueError):
    """Inconsistent mesh or experiment parameters."""


@dataclass(frozen=True)
class FineMesh:
    nx: int
    ny: int

    def __post_init__(self):
        if self.nx < 2 or self.ny < 2:
            raise ConfigurationError(f"fine mesh needs nx, ny >= 2, got ({self.nx}, {self.ny})")

    @property
    def hx(self) -> float:
        return 1.0 / self.nx

    @property
    def hy(self) -> float:
        return 1.0 / self.ny

    @property
    def h(self) -> float:
        return max(self.hx, self.hy)

    @property
    def n_nodes(self) -> int:
        return (self.nx + 1) * (self.ny + 1)

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    def node_id(self, i, j):
        return np.asarray(j) * (self.nx + 1) + np.asarray(i)

    @cached_property
    def coordinates(self) -> np.ndarray:
        """(n_nodes, 2) array of node coordinates."""
        x = np.linspace(0.0, 1.0, self.nx + 1)
        y = np.linspace(0.0, 1.0, self.ny + 1)
        X, Y = np.meshgrid(x, y)
        return np.column_stack([X.ravel(), Y.ravel()])

    @cached_property
    def cells(self) -> np.ndarray:
        """(n_cells, 4) corner node ids, counter-clockwise from lower-left."""
        ci, cj = np.meshgrid(np.arange(self.nx), np.arange(self.ny))
        ci, cj = ci.ravel(), cj.ravel()
        ll = self.node_id(ci, cj)
        cells = np.column_stack([ll, ll + 1, ll + self.nx + 2, ll + self.nx + 1])
        cells.setflags(write=False)
        return cells

    @cached_property
    def boundary_mask(self) -> np.ndarray:
        mask = np.zeros((self.ny + 1, self.nx + 1), dtype=bool)
        mask[0, :] = mask[-1, :] = True
        mask[:, 0] = mask[:, -1] = True
        mask = mask.ravel()
        mask.setflags(write=False)
        return mask

    @cached_property
    def boundary_nodes(self) -> np.ndarray:
        return np.flatnonzero(self.boundary_mask)

    @cached_property
    def interior_nodes(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary_mask)

    def whole(self) -> "Patch":
        return Patch(self, 0, 0, self.nx, self.ny)


@dataclass(frozen=True)
class Patch:
    """Axis-aligned block of fine cells ``[i0, i0+ncx) x [j0, j0+ncy)``.

    Coarse elements and coarse neighborhoods are both patches; a patch owns
    the conversion between its local lexicographic node numbering and the
    global fine-mesh numbering.
    """

    mesh: FineMesh = field(repr=False)
    i0: int
    j0: int
    ncx: int
    ncy: int

    @property
    def n_nodes(self) -> int:
        return (self.ncx + 1) * (self.ncy + 1)

    @property
    def n_cells(self) -> int:
        return self.ncx * self.ncy

    @cached_property
    def nodes(self) -> np.ndarray:
        """Global ids of the patch nodes in local lexicographic order."""
        a, b = np.meshgrid(np.arange(self.ncx + 1), np.arange(self.ncy + 1))
        return self.mesh.node_id(self.i0 + a.ravel(), self.j0 + b.ravel())

    @cached_property
    def cell_ids(self) -> np.ndarray:
        a, b = np.meshgrid(np.arange(self.ncx), np.arange(self.ncy))
        return (self.j0 + b.ravel()) * self.mesh.nx + self.i0 + a.ravel()

    @cached_property
    def local_boundary_mask(self) -> np.ndarray:
        mask = np.zeros((self.ncy + 1, self.ncx + 1), dtype=bool)
        mask[0, :] = mask[-1, :] = True
        mask[:, 0] = mask[:, -1] = True
        return mask.ravel()

    @cached_property
    def local_interior(self) -> np.ndarray:
        return np.flatnonzero(~self.local_boundary_mask)

    @cached_property
    def local_boundary(self) -> np.ndarray:
        return np.flatnonzero(self.local_boundary_mask)

    @property
    def interior_nodes(self) -> np.ndarray:
        return self.nodes[self.local_interior]

    @property
    def boundary_nodes(self) -> np.ndarray:
        return self.nodes[self.local_boundary]

    def to_local(self, g) -> np.ndarray:
        """Local node ids of global nodes ``g``; -1 where ``g`` is outside."""
        g = np.asarray(g)
        i = g % (self.mesh.nx + 1) - self.i0
        j = g // (self.mesh.nx + 1) - self.j0
        inside = (i >= 0) & (i <= self.ncx) & (j >= 0) & (j <= self.ncy)
        return np.where(inside, j * (self.ncx + 1) + i, -1)

    def local_coordinates(self) -> np.ndarray:
        return self.mesh.coordinates[self.nodes]

    def contains_cell(self, cell_id: int) -> bool:
        ci, cj = cell_id % self.mesh.nx, cell_id // self.mesh.nx
        return self.i0 <= ci < self.i0 + self.ncx and self.j0 <= cj < self.j0 + self.ncy


@dataclass(frozen=True)
class CoarseMesh:
    fine: FineMesh = field(repr=False)
    NX: int
    NY: int

    def __post_init__(self):
        if self.NX < 1 or self.NY < 1:
            raise ConfigurationError("coarse cell counts must be positive")
        if self.fine.nx % self.NX or self.fine.ny % self.NY:
            raise ConfigurationError(
                f"coarse grid {self.NX}x{self.NY} does not divide fine grid "
                f"{self.fine.nx}x{self.fine.ny}"
            )

    @property
    def mx(self) -> int:
        """Fine cells per coarse element along x."""
        return self.fine.nx // self.NX

    @property
    def my(self) -> int:
        return self.fine.ny // self.NY

    @property
    def H(self) -> float:
        return max(1.0 / self.NX, 1.0 / self.NY)

    @property
    def n_elements(self) -> int:
        return self.NX * self.NY

    @property
    def n_interior(self) -> int:
        return (self.NX - 1) * (self.NY - 1)

    @cached_property
    def elements(self) -> list[Patch]:
        return [
            Patch(self.fine, I * self.mx, J * self.my, self.mx, self.my)
            for J in range(self.NY)
            for I in range(self.NX)
        ]

    @cached_property
    def interior_coarse_nodes(self) -> np.ndarray:
        """(N_in, 2) integer coarse-node indices (I, J), lexicographic."""
        I, J = np.meshgrid(np.arange(1, self.NX), np.arange(1, self.NY))
        return np.column_stack([I.ravel(), J.ravel()])

    @cached_property
    def neighborhoods(self) -> list[Patch]:
        return [
            Patch(self.fine, (I - 1) * self.mx, (J - 1) * self.my, 2 * self.mx, 2 * self.my)
            for I, J in self.interior_coarse_nodes
        ]

    def neighborhood_elements(self, k: int) -> list[int]:
        """Ids of the coarse elements forming neighborhood ``k``."""
        I, J = self.interior_coarse_nodes[k]
        return [int(b * self.NX + a) for b in (J - 1, J) for a in (I - 1, I)]

    @cached_property
    def fine_cell_to_element(self) -> np.ndarray:
        ci = np.arange(self.fine.n_cells) % self.fine.nx
        cj = np.arange(self.fine.n_cells) // self.fine.nx
        return (cj // self.my) * self.NX + ci // self.mx

    def overlaps(self, a: int, b: int) -> bool:
        """Whether neighborhoods ``a`` and ``b`` share a coarse element."""
        Ia, Ja = self.interior_coarse_nodes[a]
        Ib, Jb = self.interior_coarse_nodes[b]
        return abs(int(Ia) - int(Ib)) <= 1 and abs(int(Ja) - int(Jb)) <= 1


def build_fine_mesh(nx: int, ny: int) -> FineMesh:
    return FineMesh(int(nx), int(ny))


def build_coarse_mesh(fine: FineMesh, NX: int, NY: int) -> CoarseMesh:
    return CoarseMesh(fine, int(NX), int(NY))


@dataclass(frozen=True)
class NeighborhoodIndexing:
    """Interior/boundary fine-node lists for every coarse neighborhood."""

    patches: tuple[Patch, ...]
    interior: tuple[np.ndarray, ...]
    boundary: tuple[np.ndarray, ...]

    @property
    def sizes(self) -> np.ndarray:
        """L_i: number of fine nodes on each neighborhood boundary."""
        return np.array([len(b) for b in self.boundary])

    def __len__(self):
        return len(self.patches)


def neighborhood_indexing(coarse: CoarseMesh) -> NeighborhoodIndexing:
    patches = tuple(coarse.neighborhoods)
    return NeighborhoodIndexing(
        patches,
        tuple(p.interior_nodes for p in patches),
        tuple(p.boundary_nodes for p in patches),
    )
