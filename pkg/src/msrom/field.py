"""High-contrast permeability fields, one positive value per fine cell."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .grid import FineMesh


class FieldFormatError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class PermeabilityField:
    nx: int
    ny: int
    values: np.ndarray  # length nx*ny, x fastest

    def __post_init__(self):
        v = np.array(self.values, dtype=float).ravel()
        if v.size != self.nx * self.ny:
            raise ValueError(f"expected {self.nx * self.ny} cell values, got {v.size}")
        if not np.all(v > 0):
            raise ValueError("non-positive permeability")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def contrast(self) -> float:
        return float(self.values.max() / self.values.min())

    def as_grid(self) -> np.ndarray:
        """Values reshaped to (ny, nx)."""
        return self.values.reshape(self.ny, self.nx)

    def matches(self, mesh: FineMesh) -> bool:
        return (self.nx, self.ny) == (mesh.nx, mesh.ny)

    def scaled(self, c: float) -> "PermeabilityField":
        return PermeabilityField(self.nx, self.ny, self.values * c)

    def __eq__(self, other):
        if not isinstance(other, PermeabilityField):
            return NotImplemented
        return (self.nx, self.ny) == (other.nx, other.ny) and np.array_equal(self.values, other.values)


def constant_field(mesh: FineMesh, value: float = 1.0) -> PermeabilityField:
    return PermeabilityField(mesh.nx, mesh.ny, np.full(mesh.n_cells, float(value)))


def _rows(lo: float, width: float, n: int) -> slice:
    # band [lo, lo+width) in physical units -> at least one cell row
    start = min(int(np.floor(lo * n)), n - 1)
    count = max(1, int(round(width * n)))
    return slice(start, min(n, start + count))


def generate_channelized(fine: FineMesh, contrast: float, layout_seed: int = 0) -> PermeabilityField:
    """Background 1 with channels and inclusions of value ``contrast``.

    The layout is drawn in physical coordinates, so a given seed gives the
    same geometry (up to pixelation) at every resolution.  At least one
    horizontal channel spans the full width of the domain.
    """
    if not contrast >= 1.0:
        raise ValueError(f"contrast must be >= 1, got {contrast}")
    rng = np.random.default_rng(layout_seed)
    k = np.ones((fine.ny, fine.nx))
    unit = 1.0 / 64.0

    # Long channels sit strictly inside strips of width 1/16, so they never
    # run along the lines of a dyadic coarse grid with H >= 1/16.
    def strip(lo, hi):
        return (4 * int(rng.integers(int(lo * 16), int(hi * 16))) + 1) * unit

    n_full = int(rng.integers(1, 3))
    slots = np.sort(rng.choice(np.arange(2, 14), size=n_full, replace=False))
    widths = np.full(n_full, unit)
    for m, w in zip(slots, widths):
        k[_rows((4 * m + 1) * unit, w, fine.ny), :] = contrast

    # Everything else stays out of the outer band of width 1/8: next to the
    # Dirichlet boundary the coarse partition of unity does not sum to one,
    # and a high-contrast feature crossing a coarse edge there is not
    # representable by the multiscale space.
    # partial-length horizontal and vertical channels
    for _ in range(int(rng.integers(1, 3))):
        vertical = bool(rng.integers(0, 2))
        length = rng.uniform(0.25, 0.6)
        pos, start = strip(0.125, 0.875), rng.uniform(0.125, 0.875 - length)
        w = unit
        if vertical:
            k[_rows(start, length, fine.ny), _rows(pos, w, fine.nx)] = contrast
        else:
            k[_rows(pos, w, fine.ny), _rows(start, length, fine.nx)] = contrast

    for _ in range(int(rng.integers(4, 9))):
        wx, wy = rng.integers(1, 4, size=2) * unit
        x0, y0 = rng.uniform(0.125, 0.875 - wx), rng.uniform(0.125, 0.875 - wy)
        k[_rows(y0, wy, fine.ny), _rows(x0, wx, fine.nx)] = contrast

    return PermeabilityField(fine.nx, fine.ny, k.ravel())


def save_field(field: PermeabilityField, path) -> None:
    """Write ``nx ny`` then one line of nx values per cell row."""
    lines = [f"{field.nx} {field.ny}"]
    for row in field.as_grid():
        lines.append(" ".join(repr(float(v)) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def load_field(path) -> PermeabilityField:
    text = Path(path).read_text().splitlines()
    if not text:
        raise FieldFormatError("line 1: empty file")
    header = text[0].split()
    try:
        nx, ny = (int(t) for t in header)
    except ValueError:
        raise FieldFormatError(f"line 1: malformed header {text[0]!r}, expected 'nx ny'") from None
    if nx < 1 or ny < 1:
        raise FieldFormatError(f"line 1: non-positive dimensions {nx} {ny}")
    values = []
    for lineno, line in enumerate(text[1:], start=2):
        for tok in line.split():
            try:
                v = float(tok)
            except ValueError:
                raise FieldFormatError(f"line {lineno}: cannot parse value {tok!r}") from None
            if not v > 0:
                raise FieldFormatError(f"line {lineno}: non-positive permeability {tok}")
            values.append(v)
    if len(values) != nx * ny:
        raise FieldFormatError(
            f"line {len(text)}: header declares {nx * ny} cells, found {len(values)} values"
        )
    return PermeabilityField(nx, ny, np.array(values))
