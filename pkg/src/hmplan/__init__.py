"""Voxel-based hybrid (additive + subtractive) manufacturing planner.

Primitives are computed from capabilities by lattice morphology, the
workspace is split into atoms of the Boolean algebra they generate, and a
best-first search finds low-cost action sequences that build the target.
"""

from .atoms import Classification, Decomposition, classify_target, decompose, manufacturability_test, refine, split_report
from .capability import Capability, Mode, Primitive, Variant, build_primitive, import_primitive, make_raw_stock
from .planner import Plan, enrich_and_match, equivalence, minimal_dnf, parse_expression, search, verify_plan_geometric
from .solid import GridSpec, VoxelSolid, voxelize

__version__ = "0.1.0"

__all__ = [
    "Capability", "Classification", "Decomposition", "GridSpec", "Mode", "Plan", "Primitive", "Variant",
    "VoxelSolid", "build_primitive", "classify_target", "decompose", "enrich_and_match", "equivalence",
    "import_primitive", "make_raw_stock", "manufacturability_test", "minimal_dnf", "parse_expression",
    "refine", "search", "split_report", "verify_plan_geometric", "voxelize",
]
