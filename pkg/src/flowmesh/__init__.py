"""flowmesh: diffeomorphic template-mesh deformation through gated
stationary flow fields, with surface-quality metrics and a direct
flow-field fitting optimiser."""

from .deform import (
    DeformationChain,
    DeformationStage,
    GateViolationError,
    GateWarning,
    InversionError,
    apply_chain,
    euler_step,
    integrate,
    integrate_inverse,
    invert_step,
    suggested_steps,
)
from .fit import (
    FitConfig,
    FitDivergedError,
    FitResult,
    LossReport,
    StageConfig,
    backward,
    fit_pipeline,
    fit_stage,
    forward_loss,
)
from .flow_field import (
    BoundaryRepairWarning,
    FlowField,
    FlowFormatError,
    GridGeometry,
    StabilityEstimate,
    enforce_zero_boundary,
    load_flow,
    sample,
    stability_estimate,
    store_flow,
)
from .mesh import (
    MeshFormatError,
    NonManifoldEdgeError,
    TopologyReport,
    TriangleMesh,
    icosphere,
    load_obj,
    midpoint_subdivide,
    store_obj,
    topology_report,
    unique_edges,
)

__version__ = "0.1.0"

__all__ = [
    "BoundaryRepairWarning",
    "DeformationChain",
    "DeformationStage",
    "FitConfig",
    "FitDivergedError",
    "FitResult",
    "FlowField",
    "FlowFormatError",
    "GateViolationError",
    "GateWarning",
    "GridGeometry",
    "InversionError",
    "LossReport",
    "MeshFormatError",
    "NonManifoldEdgeError",
    "StabilityEstimate",
    "StageConfig",
    "TopologyReport",
    "TriangleMesh",
    "apply_chain",
    "backward",
    "enforce_zero_boundary",
    "euler_step",
    "fit_pipeline",
    "fit_stage",
    "forward_loss",
    "icosphere",
    "integrate",
    "integrate_inverse",
    "invert_step",
    "load_flow",
    "load_obj",
    "midpoint_subdivide",
    "sample",
    "stability_estimate",
    "store_flow",
    "store_obj",
    "suggested_steps",
    "topology_report",
    "unique_edges",
]
