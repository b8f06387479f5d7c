"""Area-uniform random sampling of triangle-mesh surfaces."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..mesh import TriangleMesh


@dataclass(frozen=True)
class SampledCloud:
    """Surface samples with the unit normal of each point's source triangle.

    ``face_indices`` and ``barycentric`` record how each point was drawn so
    that the same draw can be replayed against repositioned vertices.
    """

    points: np.ndarray
    normals: np.ndarray
    seed: int
    face_indices: np.ndarray
    barycentric: np.ndarray

    def __len__(self) -> int:
        return len(self.points)


def triangle_areas(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    corners = vertices[faces]
    cross = np.cross(corners[:, 1] - corners[:, 0], corners[:, 2] - corners[:, 0])
    return 0.5 * np.linalg.norm(cross, axis=1)


def face_unit_normals(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    corners = vertices[faces]
    cross = np.cross(corners[:, 1] - corners[:, 0], corners[:, 2] - corners[:, 0])
    norms = np.linalg.norm(cross, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    return cross / norms


def draw_surface_samples(
    mesh: TriangleMesh, n: int, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    """Draw (face index, barycentric coordinate) pairs for n surface points.

    Faces are chosen with probability proportional to area; the square-root
    trick maps two uniforms to barycentric coordinates that are uniform over
    the triangle.  Deterministic given the seed.
    """
    if n < 1:
        raise ValueError("sample count must be positive")
    areas = triangle_areas(mesh.vertices, mesh.faces)
    total = areas.sum()
    if mesh.face_count == 0 or total <= 0.0:
        raise ValueError("mesh has no face with positive area")
    rng = np.random.default_rng(seed)
    face_idx = rng.choice(mesh.face_count, size=n, p=areas / total)
    u = rng.random(n)
    v = rng.random(n)
    su = np.sqrt(u)
    bary = np.stack([1.0 - su, su * (1.0 - v), su * v], axis=1)
    return face_idx, bary


def points_from_draw(
    vertices: np.ndarray, faces: np.ndarray, face_idx: np.ndarray, bary: np.ndarray
) -> np.ndarray:
    corners = vertices[faces[face_idx]]  # (n, 3, 3)
    return np.einsum("nk,nkc->nc", bary, corners)


def sample_surface(mesh: TriangleMesh, n: int, seed: int = 0) -> SampledCloud:
    """Area-uniform surface samples with per-point source-face unit normals."""
    face_idx, bary = draw_surface_samples(mesh, n, seed)
    points = points_from_draw(mesh.vertices, mesh.faces, face_idx, bary)
    normals = face_unit_normals(mesh.vertices, mesh.faces)[face_idx]
    return SampledCloud(
        points=points,
        normals=normals,
        seed=int(seed),
        face_indices=face_idx,
        barycentric=bary,
    )
