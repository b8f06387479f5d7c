"""Watertight-mesh voxelization by ray parity, plus overlap scores.

Each voxel center is classified by counting crossings of a +x ray against the
mesh.  Crossings are gathered per (y, z) column, so every center in a column
shares one sorted crossing list.  Grazing hits (the ray meeting a triangle
edge or vertex within floating-point uncertainty) are resolved by nudging the
whole column deterministically and retrying, up to 8 times.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..flow_field import GridGeometry
from ..mesh import TriangleMesh, topology_report


class NotWatertightError(ValueError):
    """Voxelization requires a closed, edge-manifold mesh."""


class VoxelizationError(RuntimeError):
    """Ray-parity classification stayed degenerate after all jitter retries."""


@dataclass(frozen=True)
class OccupancyGrid:
    """Boolean occupancy over the supersampled cells of a grid domain.

    Axis i of the domain is split into (dims_i - 1) * supersample cells of
    size spacing_i / supersample; ``occupied`` marks cells whose center lies
    inside the surface.
    """

    geometry: GridGeometry
    supersample: int
    occupied: np.ndarray

    def __post_init__(self):
        occ = np.array(self.occupied, dtype=bool, order="C")  # copy, never alias
        if occ.shape != self.cell_counts:
            raise ValueError(
                f"occupancy shape {occ.shape} does not match cells {self.cell_counts}"
            )
        occ.flags.writeable = False
        object.__setattr__(self, "occupied", occ)
        object.__setattr__(self, "supersample", int(self.supersample))

    @property
    def cell_counts(self) -> tuple[int, int, int]:
        s = int(self.supersample)
        return tuple((n - 1) * s for n in self.geometry.dims)

    @property
    def cell_volume(self) -> float:
        s = int(self.supersample)
        d = self.geometry.spacing
        return (d[0] / s) * (d[1] / s) * (d[2] / s)

    @property
    def occupied_volume(self) -> float:
        return float(self.occupied.sum()) * self.cell_volume

    def same_grid(self, other: "OccupancyGrid") -> bool:
        return (
            self.geometry == other.geometry and self.supersample == other.supersample
        )


# Deterministic per-attempt column nudges, in units of the cell size.
_JITTER = [(0.0, 0.0)] + [
    (1.9e-5 * k, 3.1e-5 * k + 7e-6) for k in range(1, 9)
]


def _column_crossings(point_y, point_z, tri2d, tri_x):
    """Crossing x values of the vertical line through (y, z), or None if any
    candidate triangle yields an ambiguous (grazing) orientation."""
    crossings = []
    for t in range(len(tri2d)):
        (ay, az), (by, bz), (cy, cz) = tri2d[t]
        e0 = (by - ay) * (point_z - az) - (bz - az) * (point_y - ay)
        e1 = (cy - by) * (point_z - bz) - (cz - bz) * (point_y - by)
        e2 = (ay - cy) * (point_z - cz) - (az - cz) * (point_y - cy)
        b0 = 4e-16 * (abs((by - ay) * (point_z - az)) + abs((bz - az) * (point_y - ay)))
        b1 = 4e-16 * (abs((cy - by) * (point_z - bz)) + abs((cz - bz) * (point_y - by)))
        b2 = 4e-16 * (abs((ay - cy) * (point_z - cz)) + abs((az - cz) * (point_y - cy)))
        pos = int(e0 > b0) + int(e1 > b1) + int(e2 > b2)
        neg = int(e0 < -b0) + int(e1 < -b1) + int(e2 < -b2)
        if pos and neg:
            continue  # certainly outside
        if pos == 3 or neg == 3:
            area2 = e0 + e1 + e2
            x = (e1 * tri_x[t][0] + e2 * tri_x[t][1] + e0 * tri_x[t][2]) / area2
            crossings.append(x)
            continue
        return None  # grazing: some orientation is uncertain
    return crossings


def voxelize(mesh: TriangleMesh, geometry: GridGeometry, supersample: int = 1) -> OccupancyGrid:
    """Rasterize a watertight mesh onto the (supersampled) grid domain."""
    if int(supersample) < 1:
        raise ValueError("supersample must be a positive integer")
    report = topology_report(mesh)
    if not (report.closed and report.edge_manifold):
        raise NotWatertightError(
            "mesh is not watertight (closed + edge-manifold required)"
        )
    s = int(supersample)
    nx, ny, nz = ((n - 1) * s for n in geometry.dims)
    ox, oy, oz = geometry.origin
    cx = geometry.spacing[0] / s
    cy = geometry.spacing[1] / s
    cz = geometry.spacing[2] / s
    xs = ox + (np.arange(nx) + 0.5) * cx
    ys = oy + (np.arange(ny) + 0.5) * cy
    zs = oz + (np.arange(nz) + 0.5) * cz

    corners = mesh.triangle_corners()  # (F, 3, 3)
    occupied = np.zeros((nx, ny, nz), dtype=bool)

    # Bin triangles into the (y, z) columns their projection can touch.
    lo = corners.min(axis=1)
    hi = corners.max(axis=1)
    j0 = np.ceil((lo[:, 1] - oy) / cy - 0.5).astype(np.int64)
    j1 = np.floor((hi[:, 1] - oy) / cy - 0.5).astype(np.int64)
    k0 = np.ceil((lo[:, 2] - oz) / cz - 0.5).astype(np.int64)
    k1 = np.floor((hi[:, 2] - oz) / cz - 0.5).astype(np.int64)
    np.clip(j0, 0, ny - 1, out=j0)
    np.clip(j1, -1, ny - 1, out=j1)
    np.clip(k0, 0, nz - 1, out=k0)
    np.clip(k1, -1, nz - 1, out=k1)

    columns: dict[tuple[int, int], list[int]] = {}
    for t in range(len(corners)):
        if j1[t] < j0[t] or k1[t] < k0[t]:
            continue
        for j in range(j0[t], j1[t] + 1):
            for k in range(k0[t], k1[t] + 1):
                columns.setdefault((j, k), []).append(t)

    tri_yz = corners[:, :, 1:]  # (F, 3, 2)
    tri_x = corners[:, :, 0]  # (F, 3)
    for (j, k), tris in columns.items():
        tri2d = tri_yz[tris]
        txs = tri_x[tris]
        crossings = None
        for dy, dz in _JITTER:
            crossings = _column_crossings(
                ys[j] + dy * cy, zs[k] + dz * cz, tri2d, txs
            )
            if crossings is not None:
                break
        if crossings is None:
            raise VoxelizationError(
                f"column ({j}, {k}) stayed degenerate after {len(_JITTER) - 1} retries"
            )
        if not crossings:
            continue
        hits = np.sort(np.array(crossings))
        # Center is inside iff an odd number of crossings lie beyond it (+x ray).
        above = len(hits) - np.searchsorted(hits, xs, side="right")
        occupied[:, j, k] = (above % 2) == 1

    return OccupancyGrid(geometry=geometry, supersample=s, occupied=occupied)


def _check_same_grid(a: OccupancyGrid, b: OccupancyGrid) -> None:
    if not a.same_grid(b):
        raise ValueError("occupancy grids have mismatched geometry")


def dice(a: OccupancyGrid, b: OccupancyGrid) -> float:
    """Dice overlap 2|A&B| / (|A| + |B|); 1.0 when both grids are empty."""
    _check_same_grid(a, b)
    na = int(a.occupied.sum())
    nb = int(b.occupied.sum())
    if na + nb == 0:
        return 1.0
    inter = int(np.logical_and(a.occupied, b.occupied).sum())
    return 2.0 * inter / (na + nb)


def volume_similarity(a: OccupancyGrid, b: OccupancyGrid) -> float:
    """1 - ||A| - |B|| / (|A| + |B|); 1.0 when both grids are empty."""
    _check_same_grid(a, b)
    na = int(a.occupied.sum())
    nb = int(b.occupied.sum())
    if na + nb == 0:
        return 1.0
    return 1.0 - abs(na - nb) / (na + nb)
