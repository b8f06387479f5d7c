"""Vertex advection through stationary flow fields.

One deformation stage advances every point by n explicit Euler steps of size
h = 1/n (total integration time 1).  The step x -> x + h*v(x) is injective
whenever h * lipschitz_safe < 1, which also makes x -> y - h*v(x) a
contraction, so each step has an exact inverse reachable by fixed-point
iteration; a chain composes stages in order and can be applied forward or,
with every step inverted, backward.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field as dataclass_field
from typing import Literal

import numpy as np

from .flow_field import (
    FlowField,
    StabilityEstimate,
    _as_point_array,
    sample_grid,
    stability_estimate,
)
from .mesh import TriangleMesh

GatePolicy = Literal["strict", "warn", "off"]

_GATE_POLICIES = ("strict", "warn", "off")


class GateViolationError(RuntimeError):
    """The step-size gate h * lipschitz_safe < 1 is not satisfied."""

    def __init__(self, h, lipschitz, lipschitz_safe, stage_index=None):
        self.h = h
        self.lipschitz = lipschitz
        self.lipschitz_safe = lipschitz_safe
        self.suggested_steps = suggested_steps(lipschitz_safe)
        self.stage_index = stage_index
        where = "" if stage_index is None else f" at stage {stage_index}"
        super().__init__(
            f"step-size gate violated{where}: h={h:.6g}, L={lipschitz:.6g}, "
            f"L_safe={lipschitz_safe:.6g}, h*L_safe={h * lipschitz_safe:.6g} >= 1; "
            f"use steps >= {self.suggested_steps}"
        )


class GateWarning(UserWarning):
    """Emitted instead of failing when the gate policy is 'warn'."""


class InversionError(RuntimeError):
    """Fixed-point inversion did not reach the tolerance within max_iter."""

    def __init__(self, residual, max_iter):
        self.residual = residual
        self.max_iter = max_iter
        super().__init__(
            f"inverse step did not converge within {max_iter} iterations "
            f"(worst residual {residual:.3e})"
        )


def suggested_steps(lipschitz_safe: float) -> int:
    """Smallest advertised step count satisfying the gate: ceil(L_safe) + 1."""
    return int(math.ceil(lipschitz_safe)) + 1


@dataclass(frozen=True)
class DeformationStage:
    """A flow field with its step count; stability constants are cached."""

    field: FlowField
    steps: int
    stability: StabilityEstimate = dataclass_field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if int(self.steps) < 1:
            raise ValueError("steps must be a positive integer")
        object.__setattr__(self, "steps", int(self.steps))
        if self.stability is None:
            object.__setattr__(self, "stability", stability_estimate(self.field))

    @property
    def h(self) -> float:
        return 1.0 / self.steps

    @property
    def gate_margin(self) -> float:
        """1 - h * lipschitz_safe; positive iff the strict gate holds."""
        return 1.0 - self.h * self.stability.lipschitz_safe

    @property
    def gate_ok(self) -> bool:
        return self.gate_margin > 0.0


@dataclass(frozen=True)
class DeformationChain:
    """Ordered stages; stage i+1 acts on the output of stage i."""

    stages: tuple[DeformationStage, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(self.stages))

    def __len__(self) -> int:
        return len(self.stages)

    def __iter__(self):
        return iter(self.stages)


def _check_gate(stage: DeformationStage, gate: str, stage_index=None) -> None:
    if gate not in _GATE_POLICIES:
        raise ValueError(f"gate must be one of {_GATE_POLICIES}, got {gate!r}")
    if gate == "off" or stage.gate_ok:
        return
    if gate == "strict":
        raise GateViolationError(
            stage.h,
            stage.stability.lipschitz,
            stage.stability.lipschitz_safe,
            stage_index=stage_index,
        )
    warnings.warn(
        f"gate violated (h*L_safe={stage.h * stage.stability.lipschitz_safe:.6g} "
        f">= 1); integrating anyway under 'warn' policy",
        GateWarning,
        stacklevel=3,
    )


def euler_step(field: FlowField, x, h: float) -> np.ndarray:
    """One explicit step x + h * v(x); accepts a point or an (N, 3) array."""
    pts, single = _as_point_array(x)
    out = pts + h * sample_grid(field.geometry, field.data64, pts)
    return out[0] if single else out


def advect(
    geometry, data64: np.ndarray, points: np.ndarray, h: float, steps: int,
    record: bool = False,
):
    """Advance points through `steps` Euler steps of size h.

    With ``record`` the full trajectory [(N,3)] * (steps+1) is returned so a
    reverse pass can rebuild every interpolation stencil; this is the single
    integration kernel shared by the deformation and fitting code paths.
    """
    x = np.array(points, dtype=np.float64)
    trajectory = [x.copy()] if record else None
    for _ in range(steps):
        x = x + h * sample_grid(geometry, data64, x)
        if record:
            trajectory.append(x.copy())
    return (x, trajectory) if record else x


def integrate(stage: DeformationStage, points, gate: GatePolicy = "strict") -> np.ndarray:
    """Advance each point independently by n Euler steps of size 1/n."""
    _check_gate(stage, gate)
    pts, single = _as_point_array(points)
    out = advect(stage.field.geometry, stage.field.data64, pts, stage.h, stage.steps)
    return out[0] if single else out


def invert_step(
    field: FlowField,
    y,
    h: float,
    tol: float = 1e-12,
    max_iter: int = 100,
    stability: StabilityEstimate | None = None,
) -> np.ndarray:
    """Solve y = x + h*v(x) by the contraction x <- y - h*v(x), started at y.

    Requires h * lipschitz_safe < 1.  Each point iterates until its own
    residual ||y - x - h*v(x)|| is within tol and is then frozen, so results
    do not depend on how points are batched.
    """
    if tol <= 0 or max_iter < 1:
        raise ValueError("tol must be positive and max_iter >= 1")
    if stability is None:
        stability = stability_estimate(field)
    if h * stability.lipschitz_safe >= 1.0:
        raise GateViolationError(h, stability.lipschitz, stability.lipschitz_safe)
    ys, single = _as_point_array(y)
    x = ys.copy()
    result = np.empty_like(ys)
    active = np.arange(len(ys))
    geometry, data64 = field.geometry, field.data64
    for _ in range(max_iter):
        v = sample_grid(geometry, data64, x)
        residual = np.linalg.norm(ys[active] - x - h * v, axis=1)
        done = residual <= tol
        if done.any():
            result[active[done]] = x[done]
            keep = ~done
            active = active[keep]
            x = x[keep]
            v = v[keep]
            if len(active) == 0:
                break
        x = ys[active] - h * v
    else:
        v = sample_grid(geometry, data64, x)
        residual = np.linalg.norm(ys[active] - x - h * v, axis=1)
        raise InversionError(float(residual.max()), max_iter)
    return result[0] if single else result


def integrate_inverse(
    stage: DeformationStage,
    points,
    tol: float = 1e-12,
    max_iter: int = 100,
    gate: GatePolicy = "strict",
) -> np.ndarray:
    """Undo integrate() by inverting its n steps in reverse order."""
    _check_gate(stage, gate)
    pts, single = _as_point_array(points)
    x = np.array(pts, dtype=np.float64)
    for _ in range(stage.steps):
        x = invert_step(
            stage.field, x, stage.h, tol=tol, max_iter=max_iter,
            stability=stage.stability,
        )
    return x[0] if single else x


def apply_chain(
    chain: DeformationChain,
    mesh: TriangleMesh,
    gate: GatePolicy = "strict",
    inverse: bool = False,
    tol: float = 1e-12,
    max_iter: int = 100,
) -> TriangleMesh:
    """Transform mesh vertices by every stage in order; connectivity is reused.

    With ``inverse`` the stages are applied reversed and each one inverted,
    mapping points back through the chain.  Gate failures carry the index of
    the offending stage.
    """
    vertices = mesh.vertices
    stages = list(chain.stages)
    if inverse:
        stages = stages[::-1]
    for position, stage in enumerate(stages):
        index = len(stages) - 1 - position if inverse else position
        _check_gate(stage, gate, stage_index=index)
        if inverse:
            vertices = integrate_inverse(
                stage, vertices, tol=tol, max_iter=max_iter, gate="off"
            )
        else:
            vertices = integrate(stage, vertices, gate="off")
    return mesh.with_vertices(vertices)
