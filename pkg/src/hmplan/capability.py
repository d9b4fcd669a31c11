"""Manufacturing capabilities and the primitives they induce on a target."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import morphology as morph
from .solid import GridSpec, VoxelSolid, box_solid


class Mode(str, Enum):
    AM = "AM"
    SM = "SM"


class Variant(str, Enum):
    MAXIMAL_UNDER_FILL = "MaximalUnderFill"
    OVER_FILL_LAMBDA = "OverFillLambda"
    CONSERVATIVE_OVER_FILL = "ConservativeOverFill"
    MAXIMAL_OVER_CUT = "MaximalOverCut"
    CONSERVATIVE_UNDER_CUT = "ConservativeUnderCut"

    @property
    def mode(self) -> Mode:
        if self in (Variant.MAXIMAL_OVER_CUT, Variant.CONSERVATIVE_UNDER_CUT):
            return Mode.SM
        return Mode.AM


class CapabilityError(ValueError):
    pass


# ----------------------------------------------------------------------------
# Orientations: the 24 proper axis-aligned rotations
# ----------------------------------------------------------------------------

_AXIS_VECTORS = {"x": (1, 0, 0), "y": (0, 1, 0), "z": (0, 0, 1)}


def orientation_matrix(spec: str) -> np.ndarray:
    """Parse ``"+x+y+z"``-style specs: the world direction of the tool's local x, y, z axes."""
    s = spec.replace(" ", "").lower()
    if len(s) != 6:
        raise CapabilityError(f"orientation {spec!r} must look like '+x+y+z'")
    cols = []
    for k in range(3):
        sign, ax = s[2 * k], s[2 * k + 1]
        if sign not in "+-" or ax not in _AXIS_VECTORS:
            raise CapabilityError(f"orientation {spec!r} must look like '+x+y+z'")
        v = np.array(_AXIS_VECTORS[ax]) * (1 if sign == "+" else -1)
        cols.append(v)
    m = np.stack(cols, axis=1)
    if round(np.linalg.det(m)) != 1:
        raise CapabilityError(f"orientation {spec!r} is not a proper rotation")
    return m.astype(np.int64)


def axis_rotations() -> list[str]:
    out = []
    for perm in itertools.permutations("xyz"):
        for signs in itertools.product("+-", repeat=3):
            spec = "".join(s + a for s, a in zip(signs, perm))
            m = np.stack([np.array(_AXIS_VECTORS[a]) * (1 if s == "+" else -1) for s, a in zip(signs, perm)], axis=1)
            if round(np.linalg.det(m)) == 1:
                out.append(spec)
    return out


def orient_offsets(offsets, spec: str | None) -> np.ndarray:
    q = np.asarray(offsets, np.int64).reshape(-1, 3)
    if spec is None or spec.replace(" ", "").lower() == "+x+y+z":
        return q
    return q @ orientation_matrix(spec).T


# ----------------------------------------------------------------------------
# Data types
# ----------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Capability:
    variant: Variant
    mmn: VoxelSolid
    workspace: GridSpec
    assembly: VoxelSolid | None = None
    orientation: str = "+x+y+z"
    lam: float | None = None
    rate: float = 1.0
    name: str = ""
    revolve: dict | None = None

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if self.mmn.is_empty():
            raise CapabilityError("MMN shape is empty")
        if self.assembly is not None and self.assembly.grid != self.mmn.grid:
            raise CapabilityError("assembly must share the MMN's grid")
        if self.mmn.grid.spacing != self.workspace.spacing:
            raise CapabilityError("MMN grid spacing differs from the workspace spacing")
        if self.variant is Variant.OVER_FILL_LAMBDA:
            if self.lam is None or not (0.0 <= self.lam < 1.0):
                raise CapabilityError("OverFillLambda needs lambda in [0, 1)")
        elif self.lam is not None:
            raise CapabilityError(f"lambda is only meaningful for OverFillLambda, not {self.variant.value}")
        if self.revolve is not None and self.mode is Mode.AM:
            raise CapabilityError("revolve (turning) applies to SM capabilities only")
        if self.rate < 0:
            raise CapabilityError("rate must be non-negative")
        orientation_matrix(self.orientation)

    @property
    def mode(self) -> Mode:
        return self.variant.mode

    def mmn_offsets(self) -> np.ndarray:
        return orient_offsets(morph.structuring_offsets(self.mmn), self.orientation)

    def assembly_offsets(self) -> np.ndarray:
        if self.assembly is None:
            return np.zeros((0, 3), np.int64)
        return orient_offsets(morph.structuring_offsets(self.assembly), self.orientation)


@dataclass(frozen=True, eq=False)
class Primitive:
    id: int
    mode: Mode
    solid: VoxelSolid
    rate: float = 1.0
    is_raw_stock: bool = False
    name: str = ""
    provenance: Capability | None = field(default=None, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        if self.is_raw_stock and self.mode is not Mode.AM:
            raise CapabilityError("a raw stock must be an AM primitive")

    @property
    def label(self) -> str:
        return f"P{self.id}"

    def with_id(self, new_id: int) -> "Primitive":
        return Primitive(new_id, self.mode, self.solid, self.rate, self.is_raw_stock, self.name, self.provenance)


# ----------------------------------------------------------------------------
# Construction
# ----------------------------------------------------------------------------


def build_primitive(cap: Capability, target: VoxelSolid, id: int = 1, method: str = "auto") -> Primitive:
    """Region of influence of one capability, computed from the target alone."""
    if target.grid != cap.workspace:
        raise CapabilityError("target does not live on the capability's workspace grid")
    qb = cap.mmn_offsets()
    qc = cap.assembly_offsets()
    qd = morph._union_offsets(qb, qc)
    # Reference placement always belongs to the assembly so C = ∅ degenerates to a pure offset.
    qc0 = morph._union_offsets(qc, np.zeros((1, 3), np.int64))
    W = VoxelSolid.full(target.grid)
    v = cap.variant

    if cap.revolve is not None:
        rv = cap.revolve
        target = morph.revolve(target, rv.get("axis", "z"), rv.get("position", (0.0, 0.0, 0.0)), int(rv.get("samples", 360)))

    if v is Variant.MAXIMAL_UNDER_FILL:
        solid = morph.opening(target, qb, qc, method=method)
    elif v is Variant.OVER_FILL_LAMBDA:
        counts = morph.overlap_counts(~target, qd, method=method)
        placements = VoxelSolid(target.grid, counts <= cap.lam * len(qb) + 1e-9)
        solid = morph.minkowski_offsets(placements, "sum", qb, method=method)
    elif v is Variant.CONSERVATIVE_OVER_FILL:
        core = morph.minkowski_offsets(target, "difference", -qc0, method=method)
        solid = morph.minkowski_offsets(core, "sum", qb, method=method)
    elif v is Variant.MAXIMAL_OVER_CUT:
        solid = W - morph.closing(target, qb, qc, method=method)
    else:
        grown = morph.minkowski_offsets(target, "sum", -qc0, method=method)
        solid = W - morph.minkowski_offsets(grown, "difference", qb, method=method)
    return Primitive(id, cap.mode, solid, cap.rate, False, cap.name, cap)


def make_raw_stock(extent, grid: GridSpec, rate: float = 1.0, id: int = 1, name: str = "stock") -> Primitive:
    """AM primitive for a box of raw/bar stock given as ``(min_xyz, max_xyz)`` in mm."""
    lo = np.asarray(extent[0], float)
    hi = np.asarray(extent[1], float)
    if lo.shape != (3,) or hi.shape != (3,) or np.any(hi <= lo):
        raise CapabilityError("raw stock box is degenerate")
    gmin = np.array(grid.origin)
    gmax = gmin + np.array(grid.dims) * grid.spacing
    eps = 1e-9 * grid.spacing
    if np.any(lo < gmin - eps) or np.any(hi > gmax + eps):
        raise CapabilityError("raw stock box extends beyond the workspace grid")
    solid = box_solid(grid, lo, hi)
    if solid.is_empty():
        raise CapabilityError("raw stock box contains no voxel centres")
    return Primitive(id, Mode.AM, solid, rate, True, name)


def import_primitive(solid: VoxelSolid, mode: str, rate: float = 1.0, id: int = 1, name: str = "") -> Primitive:
    """Wrap a hand-made ROI (e.g. spot welds or drill holes) as a primitive."""
    return Primitive(id, Mode(mode), solid, rate, False, name)
