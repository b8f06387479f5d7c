"""Discrete 3D flow fields on regular grids.

A flow field stores one 3-vector per grid node (float32) and is evaluated
everywhere in space by trilinear interpolation, with the convention that the
field is identically zero outside the grid domain.  Because all boundary
nodes of a valid field are zero, the interpolant is continuous across the
domain boundary and globally Lipschitz; the constants needed to gate explicit
integration are estimated from forward finite differences of the node data.
"""

from __future__ import annotations

import math
import struct
import warnings
from dataclasses import dataclass

import numpy as np

DFF1_MAGIC = b"DFF1"

_SQRT3 = math.sqrt(3.0)


class FlowFormatError(ValueError):
    """A DFF1 file could not be parsed or violates a field invariant.

    The ``code`` attribute identifies the failure: ``bad_magic``,
    ``bad_header``, ``truncated``, ``trailing_data``, ``non_finite`` or
    ``boundary``.
    """

    def __init__(self, message: str, code: str):
        super().__init__(message)
        self.code = code


class BoundaryRepairWarning(UserWarning):
    """Emitted when loading zeroes a nonzero boundary under the repair flag."""


@dataclass(frozen=True)
class GridGeometry:
    """Regular node grid; node (i,j,k) sits at ``origin + (i,j,k) * spacing``.

    The covered domain is the closed box
    ``prod_a [origin_a, origin_a + spacing_a * (dims_a - 1)]``.
    """

    dims: tuple[int, int, int]
    origin: tuple[float, float, float]
    spacing: tuple[float, float, float]

    def __post_init__(self):
        dims = tuple(int(n) for n in self.dims)
        origin = tuple(float(v) for v in self.origin)
        spacing = tuple(float(v) for v in self.spacing)
        if len(dims) != 3 or len(origin) != 3 or len(spacing) != 3:
            raise ValueError("dims, origin and spacing must each have 3 entries")
        if any(n < 2 for n in dims):
            raise ValueError(f"need at least 2 nodes per axis, got dims={dims}")
        if any(not math.isfinite(v) for v in origin + spacing):
            raise ValueError("origin and spacing must be finite")
        if any(d <= 0.0 for d in spacing):
            raise ValueError(f"spacing must be strictly positive, got {spacing}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "spacing", spacing)

    @property
    def lower(self) -> np.ndarray:
        return np.array(self.origin, dtype=np.float64)

    @property
    def upper(self) -> np.ndarray:
        d = np.array(self.spacing, dtype=np.float64)
        n = np.array(self.dims, dtype=np.float64)
        return self.lower + d * (n - 1.0)

    def node_position(self, i: int, j: int, k: int) -> np.ndarray:
        return self.lower + np.array([i, j, k], dtype=np.float64) * np.array(
            self.spacing, dtype=np.float64
        )

    def contains(self, points) -> np.ndarray:
        pts, single = _as_point_array(points)
        inside = np.all((pts >= self.lower) & (pts <= self.upper), axis=1)
        return bool(inside[0]) if single else inside


@dataclass(frozen=True)
class StabilityEstimate:
    """Constants bounding the trilinear interpolant of a flow field.

    ``lipschitz`` bounds every axis-directional derivative (max forward
    difference norm over spacing, per axis, maximised over axes); the
    Euclidean Lipschitz constant of the interpolant can exceed it by up to
    sqrt(3), so step-size gating uses ``lipschitz_safe = sqrt(3) * lipschitz``.
    ``max_speed`` is the largest node vector norm and bounds |v| everywhere.
    """

    per_axis_lipschitz: tuple[float, float, float]
    lipschitz: float
    max_speed: float
    lipschitz_safe: float

    def __post_init__(self):
        if self.lipschitz < 0 or self.max_speed < 0:
            raise ValueError("stability constants must be non-negative")


class FlowField:
    """Dense node data (H, W, D, 3) in float32 plus its grid geometry.

    Instances are immutable; ``data`` is read-only and a float64 copy is kept
    for interpolation arithmetic.  The zero-boundary invariant is *not*
    enforced at construction (so that repair tooling can operate on
    non-compliant data); use :func:`enforce_zero_boundary` or check
    :attr:`boundary_is_zero`.
    """

    __slots__ = ("geometry", "data", "_data64")

    def __init__(self, geometry: GridGeometry, data):
        # always copy: freezing must never alias the caller's array
        arr = np.array(data, dtype=np.float32, order="C")
        expected = geometry.dims + (3,)
        if arr.shape != expected:
            raise ValueError(f"data shape {arr.shape} does not match grid {expected}")
        if not np.isfinite(arr).all():
            raise ValueError("flow field data must be finite")
        arr.flags.writeable = False
        object.__setattr__(self, "geometry", geometry)
        object.__setattr__(self, "data", arr)
        d64 = arr.astype(np.float64)
        d64.flags.writeable = False
        object.__setattr__(self, "_data64", d64)

    def __setattr__(self, name, value):
        raise AttributeError("FlowField is immutable")

    @property
    def data64(self) -> np.ndarray:
        """Float64 view of the node data used for all arithmetic."""
        return self._data64

    @property
    def boundary_is_zero(self) -> bool:
        return not np.any(self.data[_boundary_mask(self.geometry.dims)])

    def sample(self, points):
        return sample(self, points)

    def __eq__(self, other):
        if not isinstance(other, FlowField):
            return NotImplemented
        return self.geometry == other.geometry and np.array_equal(self.data, other.data)


def _as_point_array(points) -> tuple[np.ndarray, bool]:
    pts = np.asarray(points, dtype=np.float64)
    single = pts.ndim == 1
    if single:
        pts = pts[None, :]
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"points must have shape (3,) or (N, 3), got {pts.shape}")
    return pts, single


def _boundary_mask(dims: tuple[int, int, int]) -> np.ndarray:
    mask = np.zeros(dims, dtype=bool)
    mask[0, :, :] = mask[-1, :, :] = True
    mask[:, 0, :] = mask[:, -1, :] = True
    mask[:, :, 0] = mask[:, :, -1] = True
    return mask


# Corner enumeration order for the 8-node stencil: bit 2 -> axis 0 offset,
# bit 1 -> axis 1, bit 0 -> axis 2.
_CORNERS = np.array(
    [[a, b, c] for a in (0, 1) for b in (0, 1) for c in (0, 1)], dtype=np.int64
)


def _cell_lookup(geometry: GridGeometry, pts: np.ndarray):
    """Cell base index and local coordinates for points known to be inside."""
    dims = np.array(geometry.dims, dtype=np.int64)
    rel = (pts - geometry.lower) / np.array(geometry.spacing, dtype=np.float64)
    base = np.floor(rel).astype(np.int64)
    np.clip(base, 0, dims - 2, out=base)
    local = np.clip(rel - base, 0.0, 1.0)
    return base, local


def _stencil_weights(local: np.ndarray) -> np.ndarray:
    """Trilinear weights, shape (N, 8), matching the _CORNERS order."""
    tx, ty, tz = local[:, 0], local[:, 1], local[:, 2]
    mx, my, mz = 1.0 - tx, 1.0 - ty, 1.0 - tz
    yz00, yz01, yz10, yz11 = my * mz, my * tz, ty * mz, ty * tz
    w = np.empty((local.shape[0], 8), dtype=np.float64)
    w[:, 0] = mx * yz00
    w[:, 1] = mx * yz01
    w[:, 2] = mx * yz10
    w[:, 3] = mx * yz11
    w[:, 4] = tx * yz00
    w[:, 5] = tx * yz01
    w[:, 6] = tx * yz10
    w[:, 7] = tx * yz11
    return w


def _corner_flat_offsets(geometry: GridGeometry) -> np.ndarray:
    _, W, D = geometry.dims
    return (_CORNERS[:, 0] * W + _CORNERS[:, 1]) * D + _CORNERS[:, 2]


def _stencil_flat_indices(geometry: GridGeometry, base: np.ndarray) -> np.ndarray:
    """Flat node indices of the 8 stencil corners, shape (N, 8)."""
    _, W, D = geometry.dims
    flat_base = (base[:, 0] * W + base[:, 1]) * D + base[:, 2]
    return flat_base[:, None] + _corner_flat_offsets(geometry)[None, :]


def _interpolate_inside(geometry: GridGeometry, data64: np.ndarray, pts: np.ndarray):
    base, local = _cell_lookup(geometry, pts)
    w = _stencil_weights(local)
    flat = _stencil_flat_indices(geometry, base)
    corners = data64.reshape(-1, 3)[flat]  # (n, 8, 3)
    return np.einsum("np,npc->nc", w, corners)


def sample_grid(geometry: GridGeometry, data64: np.ndarray, points) -> np.ndarray:
    """Trilinear interpolation of node vectors; exactly zero outside the grid.

    ``data64`` is the (H, W, D, 3) float64 node array.  Total function: any
    finite point is accepted.
    """
    pts, single = _as_point_array(points)
    inside = np.all((pts >= geometry.lower) & (pts <= geometry.upper), axis=1)
    if inside.all():
        out = _interpolate_inside(geometry, data64, pts)
    else:
        out = np.zeros_like(pts)
        if inside.any():
            out[inside] = _interpolate_inside(geometry, data64, pts[inside])
    return out[0] if single else out


def sample(field: FlowField, points) -> np.ndarray:
    """Evaluate the field's trilinear interpolant at one or many points."""
    return sample_grid(field.geometry, field.data64, points)


def grid_jacobians(geometry: GridGeometry, data64: np.ndarray, points) -> np.ndarray:
    """Spatial Jacobian dv/dx of the interpolant at each point, shape (N, 3, 3).

    Zero outside the grid.  Inside a cell the interpolant is trilinear, so the
    Jacobian is exact there; on cell boundaries the one-sided value of the
    containing cell (per `_cell_lookup` clamping) is returned.
    """
    pts, single = _as_point_array(points)
    jac = np.zeros((pts.shape[0], 3, 3), dtype=np.float64)
    inside = np.all((pts >= geometry.lower) & (pts <= geometry.upper), axis=1)
    if inside.any():
        p = pts[inside]
        base, local = _cell_lookup(geometry, p)
        flat = _stencil_flat_indices(geometry, base)
        corners = data64.reshape(-1, 3)[flat]  # (n, 8, 3)
        dw = _stencil_weight_gradients(geometry, local)  # (n, 8, 3)
        jac[inside] = np.einsum("npa,npc->nca", dw, corners)
    return jac[0] if single else jac


def _stencil_weight_gradients(geometry: GridGeometry, local: np.ndarray) -> np.ndarray:
    """d(weight)/d(world position) for the 8 stencil corners, shape (N, 8, 3)."""
    t = local
    spacing = np.array(geometry.spacing, dtype=np.float64)
    u = np.stack([1.0 - t, t], axis=2)  # (n, 3, 2): axis factors
    du = np.broadcast_to(np.array([-1.0, 1.0]), (t.shape[0], 3, 2))
    n = t.shape[0]
    grads = np.empty((n, 8, 3), dtype=np.float64)
    for p, (a, b, c) in enumerate(_CORNERS):
        fx, fy, fz = u[:, 0, a], u[:, 1, b], u[:, 2, c]
        grads[:, p, 0] = du[:, 0, a] * fy * fz / spacing[0]
        grads[:, p, 1] = fx * du[:, 1, b] * fz / spacing[1]
        grads[:, p, 2] = fx * fy * du[:, 2, c] / spacing[2]
    return grads


def stability_estimate(field: FlowField) -> StabilityEstimate:
    """Lipschitz and speed bounds from forward finite differences.

    Along each axis the difference at node i is ``U[i+1] - U[i]``; at the last
    index, where zero padding applies, it is the node value itself (the sign
    is immaterial under the norm).  The per-axis constant is the largest
    difference norm divided by the axis spacing.
    """
    return stability_from_grid(field.geometry, field.data64)


def stability_from_grid(geometry: GridGeometry, data64: np.ndarray) -> StabilityEstimate:
    """stability_estimate on a raw float64 node array (see that docstring)."""
    data = np.asarray(data64, dtype=np.float64)
    spacing = geometry.spacing
    per_axis = []
    for axis in range(3):
        diff = np.empty_like(data)
        moved = np.moveaxis(diff, axis, 0)
        src = np.moveaxis(data, axis, 0)
        moved[:-1] = src[1:] - src[:-1]
        moved[-1] = src[-1]
        norms = np.sqrt((diff * diff).sum(axis=-1))
        per_axis.append(float(norms.max()) / spacing[axis])
    lipschitz = max(per_axis)
    max_speed = float(np.sqrt((data * data).sum(axis=-1)).max())
    return StabilityEstimate(
        per_axis_lipschitz=(per_axis[0], per_axis[1], per_axis[2]),
        lipschitz=lipschitz,
        max_speed=max_speed,
        lipschitz_safe=_SQRT3 * lipschitz,
    )


def enforce_zero_boundary(field: FlowField) -> FlowField:
    """Return a copy of the field with every boundary node zeroed."""
    data = field.data.copy()
    data[_boundary_mask(field.geometry.dims)] = 0.0
    return FlowField(field.geometry, data)


_HEADER = struct.Struct("<4s3I3d3d")


def store_flow(field: FlowField, path) -> None:
    """Write a field in the DFF1 format (see module docs for the layout)."""
    geom = field.geometry
    header = _HEADER.pack(
        DFF1_MAGIC, *geom.dims, *geom.origin, *geom.spacing
    )
    payload = np.ascontiguousarray(field.data, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload.tobytes())


def load_flow(path, repair_boundary: bool = False) -> FlowField:
    """Read a DFF1 file; rejects nonzero boundaries unless repairing.

    With ``repair_boundary`` set, a nonzero boundary is zeroed and a
    :class:`BoundaryRepairWarning` is emitted instead of failing.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4 or raw[:4] != DFF1_MAGIC:
        raise FlowFormatError(f"bad magic in {path!r}: expected DFF1", code="bad_magic")
    if len(raw) < _HEADER.size:
        raise FlowFormatError(f"truncated header in {path!r}", code="truncated")
    _, h, w, d, o1, o2, o3, d1, d2, d3 = _HEADER.unpack_from(raw)
    try:
        geometry = GridGeometry((h, w, d), (o1, o2, o3), (d1, d2, d3))
    except ValueError as exc:
        raise FlowFormatError(f"bad header in {path!r}: {exc}", code="bad_header") from exc
    count = h * w * d * 3
    expected = _HEADER.size + 4 * count
    if len(raw) < expected:
        raise FlowFormatError(
            f"truncated payload in {path!r}: {len(raw)} bytes, need {expected}",
            code="truncated",
        )
    if len(raw) > expected:
        raise FlowFormatError(
            f"{len(raw) - expected} trailing bytes in {path!r}", code="trailing_data"
        )
    data = np.frombuffer(raw, dtype="<f4", count=count, offset=_HEADER.size)
    data = data.reshape(h, w, d, 3)
    if not np.isfinite(data).all():
        raise FlowFormatError(f"non-finite values in {path!r}", code="non_finite")
    boundary = _boundary_mask((h, w, d))
    if np.any(data[boundary]):
        if not repair_boundary:
            raise FlowFormatError(
                f"nonzero boundary nodes in {path!r} (pass repair to zero them)",
                code="boundary",
            )
        data = data.copy()
        data[boundary] = 0.0
        warnings.warn(
            f"zeroed nonzero boundary nodes while loading {path!r}",
            BoundaryRepairWarning,
            stacklevel=2,
        )
    return FlowField(geometry, data)
