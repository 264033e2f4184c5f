"""Grid products over the mapping square: a median height grid and a
majority-vote rock grid on 180 x 180 cells of 0.15 m.

Grid convention (shared with the scorer and the ground-truth exporter):
cell (i, j) covers the half-open square
[-half + i*res, -half + (i+1)*res) x [-half + j*res, -half + (j+1)*res),
so i indexes x and j indexes y, and (-13.5, -13.5) lands in cell (0, 0).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .cloud import LABEL_GROUND, LABEL_ROCK, PointBatch


@dataclass(frozen=True)
class GridSpec:
    cells: int = 180
    resolution: float = 0.15
    center: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.cells <= 0 or self.resolution <= 0:
            raise ValueError("grid needs positive cell count and resolution")

    @property
    def side(self) -> float:
        return self.cells * self.resolution

    @property
    def half_side(self) -> float:
        return self.side / 2.0


def project_cell(x: float, y: float, spec: GridSpec) -> Optional[tuple[int, int]]:
    """Cell indices for a point, or None outside the mapping square.

    The upper edge is exclusive: a point exactly on +half_side is outside.
    """
    i = int(np.floor((x - spec.center[0] + spec.half_side) / spec.resolution))
    j = int(np.floor((y - spec.center[1] + spec.half_side) / spec.resolution))
    if 0 <= i < spec.cells and 0 <= j < spec.cells:
        return i, j
    return None


def project_cells(xy: np.ndarray, spec: GridSpec):
    """Vectorized projection: (indices (N, 2) int, inside mask (N,))."""
    xy = np.asarray(xy, dtype=float).reshape(-1, 2)
    ij = np.floor(
        (xy - np.asarray(spec.center) + spec.half_side) / spec.resolution
    ).astype(int)
    inside = (ij >= 0).all(axis=1) & (ij < spec.cells).all(axis=1)
    return ij, inside


class HeightGrid:
    """Per-cell median height of ground-labeled points; NaN marks no data.

    The contributing samples are retained (sorted per cell) for auditing.
    """

    def __init__(self, spec: GridSpec, values: np.ndarray, counts: np.ndarray,
                 sample_values: Optional[np.ndarray] = None,
                 sample_cells: Optional[np.ndarray] = None):
        self.spec = spec
        self.values = values
        self.counts = counts
        self._sample_values = sample_values
        self._sample_cells = sample_cells

    @staticmethod
    def from_values(spec: GridSpec, values: np.ndarray) -> "HeightGrid":
        values = np.asarray(values, dtype=float)
        counts = np.where(np.isnan(values), 0, 1).astype(int)
        return HeightGrid(spec, values, counts)

    def mapped_mask(self) -> np.ndarray:
        return ~np.isnan(self.values)

    def mapped_cells(self) -> int:
        return int(self.mapped_mask().sum())

    def samples(self, i: int, j: int) -> np.ndarray:
        """Sorted height samples recorded for one cell."""
        if self._sample_values is None:
            raise ValueError("this grid was not built from point samples")
        key = i * self.spec.cells + j
        lo = np.searchsorted(self._sample_cells, key, side="left")
        hi = np.searchsorted(self._sample_cells, key, side="right")
        return np.sort(self._sample_values[lo:hi])


class RockGrid:
    """Per-cell rock/ground vote counts; label is 1 iff rock votes strictly win."""

    def __init__(self, spec: GridSpec, n_rock: np.ndarray, n_ground: np.ndarray):
        self.spec = spec
        self.n_rock = n_rock
        self.n_ground = n_ground

    @staticmethod
    def from_labels(spec: GridSpec, labels: np.ndarray) -> "RockGrid":
        labels = np.asarray(labels).astype(np.uint8)
        n_rock = labels.astype(int)
        n_ground = (1 - labels).astype(int)
        return RockGrid(spec, n_rock, n_ground)

    @property
    def labels(self) -> np.ndarray:
        return (self.n_rock > self.n_ground).astype(np.uint8)


def build_height_grid(points: PointBatch, spec: GridSpec = GridSpec()) -> HeightGrid:
    """Median of ground-point heights per cell; rock/lander points are ignored.

    An even sample count takes the mean of the two middle values.
    """
    ground = points.labels == LABEL_GROUND
    pos = points.positions[ground]
    ij, inside = project_cells(pos[:, :2], spec)
    pos = pos[inside]
    ij = ij[inside]
    n = spec.cells
    values = np.full((n, n), np.nan)
    counts = np.zeros((n, n), dtype=int)
    if len(pos):
        keys = ij[:, 0] * n + ij[:, 1]
        order = np.argsort(keys, kind="stable")
        keys_s = keys[order]
        z_s = pos[order, 2]
        starts = np.flatnonzero(np.concatenate([[True], keys_s[1:] != keys_s[:-1]]))
        group_keys = keys_s[starts]
        sizes = np.diff(np.append(starts, len(keys_s)))
        medians = [float(np.median(z_s[s:s + c])) for s, c in zip(starts, sizes)]
        values[group_keys // n, group_keys % n] = medians
        counts[group_keys // n, group_keys % n] = sizes
        return HeightGrid(spec, values, counts, z_s, keys_s)
    return HeightGrid(spec, values, counts, np.zeros(0), np.zeros(0, dtype=int))


def build_rock_grid(points: PointBatch, spec: GridSpec = GridSpec()) -> RockGrid:
    """Rock vs ground vote counts per cell; lander points are excluded."""
    n = spec.cells
    n_rock = np.zeros((n, n), dtype=int)
    n_ground = np.zeros((n, n), dtype=int)
    relevant = points.labels != 2  # lander
    pos = points.positions[relevant]
    labels = points.labels[relevant]
    ij, inside = project_cells(pos[:, :2], spec)
    ij = ij[inside]
    labels = labels[inside]
    if len(labels):
        keys = ij[:, 0] * n + ij[:, 1]
        rock_counts = np.bincount(keys[labels == LABEL_ROCK], minlength=n * n)
        ground_counts = np.bincount(keys[labels == LABEL_GROUND], minlength=n * n)
        n_rock += rock_counts.reshape(n, n)
        n_ground += ground_counts.reshape(n, n)
    return RockGrid(spec, n_rock, n_ground)


# -- grid file format --------------------------------------------------------
#
# Line-oriented, bit-exact text format shared by the mapper, the scorer, and
# the ground-truth exporter:
#
#   # gridmap v1
#   kind height|rock
#   cells <n>
#   resolution <r>
#   center <cx> <cy>
#   <n> data rows of <n> columns, row i = x bin, column j = y bin
#
# Height cells print with 17 significant digits, "nan" for no data. Rock
# cells print as 0/1.


def write_height_grid(path, grid: HeightGrid) -> None:
    with open(path, "w") as fh:
        fh.write(_header("height", grid.spec))
        for row in grid.values:
            fh.write(" ".join("nan" if np.isnan(v) else f"{v:.17g}" for v in row) + "\n")


def write_rock_grid(path, grid: RockGrid) -> None:
    with open(path, "w") as fh:
        fh.write(_header("rock", grid.spec))
        for row in grid.labels:
            fh.write(" ".join(str(int(v)) for v in row) + "\n")


def _header(kind: str, spec: GridSpec) -> str:
    return (
        "# gridmap v1\n"
        f"kind {kind}\n"
        f"cells {spec.cells}\n"
        f"resolution {spec.resolution:.17g}\n"
        f"center {spec.center[0]:.17g} {spec.center[1]:.17g}\n"
    )


def _read_header(fh):
    magic = fh.readline().strip()
    if magic != "# gridmap v1":
        raise ValueError(f"not a gridmap file: {magic!r}")
    fields = {}
    for _ in range(4):
        key, _, value = fh.readline().strip().partition(" ")
        fields[key] = value
    cx, cy = (float(v) for v in fields["center"].split())
    spec = GridSpec(int(fields["cells"]), float(fields["resolution"]), (cx, cy))
    return fields["kind"], spec


def read_grid(path):
    """Read either grid kind; returns HeightGrid or RockGrid."""
    with open(path) as fh:
        kind, spec = _read_header(fh)
        rows = [line.split() for line in fh if line.strip()]
    if len(rows) != spec.cells or any(len(r) != spec.cells for r in rows):
        raise ValueError("grid data shape does not match header")
    if kind == "height":
        values = np.array([[float(v) for v in row] for row in rows])
        return HeightGrid.from_values(spec, values)
    if kind == "rock":
        labels = np.array([[int(v) for v in row] for row in rows], dtype=np.uint8)
        return RockGrid.from_labels(spec, labels)
    raise ValueError(f"unknown grid kind {kind!r}")
