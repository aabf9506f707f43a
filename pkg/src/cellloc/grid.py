"""Virtual square grid over the area of interest."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from cellloc.domain import InvalidInput, PlanarPoint

# Points this far past the max edge still clamp into the last cell.
EDGE_EPS_M = 1e-9


class OutOfGrid(InvalidInput):
    pass


@dataclass(frozen=True)
class VirtualGrid:
    min_x: float
    min_y: float
    cell_length_m: float
    n_cols: int
    n_rows: int

    def __post_init__(self):
        if not self.cell_length_m > 0:
            raise InvalidInput("cell_length_m must be positive")
        if self.n_cols < 1 or self.n_rows < 1:
            raise InvalidInput("grid needs at least one row and one column")

    @property
    def K(self) -> int:
        return self.n_cols * self.n_rows

    @property
    def min_corner(self) -> PlanarPoint:
        return PlanarPoint(self.min_x, self.min_y)

    @property
    def max_x(self) -> float:
        return self.min_x + self.n_cols * self.cell_length_m

    @property
    def max_y(self) -> float:
        return self.min_y + self.n_rows * self.cell_length_m

    def to_dict(self) -> dict:
        return {
            "min_x": self.min_x,
            "min_y": self.min_y,
            "cell_length_m": self.cell_length_m,
            "n_cols": self.n_cols,
            "n_rows": self.n_rows,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "VirtualGrid":
        return cls(float(d["min_x"]), float(d["min_y"]), float(d["cell_length_m"]),
                   int(d["n_cols"]), int(d["n_rows"]))

    def centroids(self) -> np.ndarray:
        """(K, 2) array of cell centres in row-major order."""
        idx = np.arange(self.K)
        cols = idx % self.n_cols
        rows = idx // self.n_cols
        return np.column_stack([
            self.min_x + (cols + 0.5) * self.cell_length_m,
            self.min_y + (rows + 0.5) * self.cell_length_m,
        ])


def build_grid(locations: Sequence[PlanarPoint], cell_length_m: float) -> VirtualGrid:
    if not locations:
        raise InvalidInput("cannot build a grid over no locations")
    if not cell_length_m > 0:
        raise InvalidInput("cell_length_m must be positive")
    xs = [p.x for p in locations]
    ys = [p.y for p in locations]
    min_x, min_y = min(xs), min(ys)
    n_cols = max(1, math.ceil((max(xs) - min_x) / cell_length_m))
    n_rows = max(1, math.ceil((max(ys) - min_y) / cell_length_m))
    return VirtualGrid(min_x, min_y, float(cell_length_m), n_cols, n_rows)


def _axis_index(v: float, lo: float, n: int, g: float) -> int:
    i = math.floor((v - lo) / g)
    if i < 0:
        if lo - v > EDGE_EPS_M:
            raise OutOfGrid(f"coordinate {v} below grid start {lo}")
        return 0
    if i >= n:
        if v - (lo + n * g) > EDGE_EPS_M:
            raise OutOfGrid(f"coordinate {v} beyond grid end {lo + n * g}")
        return n - 1
    return i


def cell_of(p: PlanarPoint, grid: VirtualGrid) -> int:
    """Row-major cell index containing ``p`` (max edges clamp into the last cell)."""
    col = _axis_index(p.x, grid.min_x, grid.n_cols, grid.cell_length_m)
    row = _axis_index(p.y, grid.min_y, grid.n_rows, grid.cell_length_m)
    return row * grid.n_cols + col


def cells_of(xy: np.ndarray, grid: VirtualGrid) -> np.ndarray:
    """Vectorised :func:`cell_of` over an (N, 2) array."""
    xy = np.asarray(xy, dtype=float)
    g = grid.cell_length_m
    lo = np.array([grid.min_x, grid.min_y])
    hi = np.array([grid.max_x, grid.max_y])
    if np.any(xy < lo - EDGE_EPS_M) or np.any(xy > hi + EDGE_EPS_M):
        raise OutOfGrid("some points fall outside the grid extent")
    col = np.clip(np.floor((xy[:, 0] - grid.min_x) / g).astype(int), 0, grid.n_cols - 1)
    row = np.clip(np.floor((xy[:, 1] - grid.min_y) / g).astype(int), 0, grid.n_rows - 1)
    return row * grid.n_cols + col


def centroid(c: int, grid: VirtualGrid) -> PlanarPoint:
    if not 0 <= c < grid.K:
        raise InvalidInput(f"cell index {c} outside 0..{grid.K - 1}")
    row, col = divmod(int(c), grid.n_cols)
    g = grid.cell_length_m
    return PlanarPoint(grid.min_x + (col + 0.5) * g, grid.min_y + (row + 0.5) * g)


def one_hot(c: int, K: int) -> np.ndarray:
    if not 0 <= c < K:
        raise InvalidInput(f"cell index {c} outside 0..{K - 1}")
    v = np.zeros(K)
    v[c] = 1.0
    return v


def occupied_cells(cells: np.ndarray) -> np.ndarray:
    """Sorted unique cell ids; used when empty cells are pruned from the label space."""
    return np.unique(np.asarray(cells, dtype=int))
