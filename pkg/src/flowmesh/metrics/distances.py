"""Point-cloud distance metrics and the mesh edge loss.

Nearest neighbours come from a k-d tree (exact query), but every reported
distance is recomputed in plain numpy from the matched index pairs, so the
values are bit-identical to an O(n^2) brute-force evaluation.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from ..mesh import TriangleMesh, unique_edges
from .sampling import SampledCloud


def _points_of(cloud) -> np.ndarray:
    pts = cloud.points if isinstance(cloud, SampledCloud) else np.asarray(cloud)
    pts = np.asarray(pts, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"expected an (N, 3) cloud, got shape {pts.shape}")
    if len(pts) == 0:
        raise ValueError("point cloud is empty")
    return pts


def nearest_neighbor_indices(queries: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Index of the exact nearest target for each query point."""
    tree = cKDTree(targets)
    _, idx = tree.query(queries, k=1, workers=1)
    return np.asarray(idx, dtype=np.int64)


def _nn_distances(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    idx = nearest_neighbor_indices(a, b)
    return np.linalg.norm(a - b[idx], axis=1), idx


def chamfer(a, b, squared: bool = False) -> float:
    """Symmetric mean nearest-neighbour distance between two clouds.

    With ``squared`` the mean of squared distances is used instead (smooth
    near zero; this is the variant the fitting loss optimises).
    """
    pa, pb = _points_of(a), _points_of(b)
    d_ab, _ = _nn_distances(pa, pb)
    d_ba, _ = _nn_distances(pb, pa)
    if squared:
        return 0.5 * (float(np.mean(d_ab**2)) + float(np.mean(d_ba**2)))
    return 0.5 * (float(np.mean(d_ab)) + float(np.mean(d_ba)))


def hausdorff(a, b) -> float:
    """Symmetric maximum nearest-neighbour distance (sample-based)."""
    pa, pb = _points_of(a), _points_of(b)
    d_ab, _ = _nn_distances(pa, pb)
    d_ba, _ = _nn_distances(pb, pa)
    return max(float(d_ab.max()), float(d_ba.max()))


def chamfer_normals(a: SampledCloud, b: SampledCloud) -> float:
    """Mean |cos| of normal angles at chamfer correspondences, in [0, 1].

    Orientation-agnostic: the absolute cosine is averaged over both matching
    directions.  Higher is better.
    """
    if not isinstance(a, SampledCloud) or not isinstance(b, SampledCloud):
        raise TypeError("chamfer_normals needs SampledCloud inputs with normals")
    pa, pb = _points_of(a), _points_of(b)
    idx_ab = nearest_neighbor_indices(pa, pb)
    idx_ba = nearest_neighbor_indices(pb, pa)
    cos_ab = np.abs(np.einsum("nc,nc->n", a.normals, b.normals[idx_ab]))
    cos_ba = np.abs(np.einsum("nc,nc->n", b.normals, a.normals[idx_ba]))
    return 0.5 * (float(np.mean(cos_ab)) + float(np.mean(cos_ba)))


def edge_loss(mesh: TriangleMesh) -> float:
    """Mean squared length over the mesh's undirected edges (target length 0)."""
    edges = unique_edges(mesh.faces)
    if len(edges) == 0:
        raise ValueError("mesh has no edges")
    return mean_squared_edge_length(mesh.vertices, edges)


def mean_squared_edge_length(vertices: np.ndarray, edges: np.ndarray) -> float:
    delta = vertices[edges[:, 0]] - vertices[edges[:, 1]]
    return float(np.mean((delta * delta).sum(axis=1)))
