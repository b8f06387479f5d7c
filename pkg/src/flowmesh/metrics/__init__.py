"""Surface evaluation suite: sampling, cloud distances, intersection census,
voxel overlap scores and the aggregate report."""

from .distances import (
    chamfer,
    chamfer_normals,
    edge_loss,
    hausdorff,
    mean_squared_edge_length,
    nearest_neighbor_indices,
)
from .intersection import self_intersecting_faces, triangles_intersect
from .report import MetricReport
from .sampling import (
    SampledCloud,
    draw_surface_samples,
    face_unit_normals,
    points_from_draw,
    sample_surface,
    triangle_areas,
)
from .voxel import (
    NotWatertightError,
    OccupancyGrid,
    VoxelizationError,
    dice,
    volume_similarity,
    voxelize,
)

__all__ = [
    "MetricReport",
    "NotWatertightError",
    "OccupancyGrid",
    "SampledCloud",
    "VoxelizationError",
    "chamfer",
    "chamfer_normals",
    "dice",
    "draw_surface_samples",
    "edge_loss",
    "face_unit_normals",
    "hausdorff",
    "mean_squared_edge_length",
    "nearest_neighbor_indices",
    "points_from_draw",
    "sample_surface",
    "self_intersecting_faces",
    "triangle_areas",
    "triangles_intersect",
    "volume_similarity",
    "voxelize",
]
