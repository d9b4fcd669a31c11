"""Voxel solids on a fixed lattice.

A :class:`VoxelSolid` is a boolean occupancy array indexed ``[i, j, k]`` =
``[x, y, z]``. Serialised data is always x-fastest (Fortran order of that
array). Complements are taken relative to the grid, which stands in for the
machine workspace.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np


class GridMismatchError(ValueError):
    """Raised when two solids do not live on the same grid."""


class SceneError(ValueError):
    """Raised for malformed scene trees."""


class GridFileError(ValueError):
    """Raised when a raw grid file cannot be decoded."""


@dataclass(frozen=True)
class GridSpec:
    dims: tuple[int, int, int]
    spacing: float = 1.0
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        origin = tuple(float(o) for o in self.origin)
        if len(dims) != 3 or any(d < 1 for d in dims):
            raise ValueError(f"grid dims must be three positive integers, got {self.dims!r}")
        if len(origin) != 3 or not all(math.isfinite(o) for o in origin):
            raise ValueError(f"grid origin must be three finite numbers, got {self.origin!r}")
        if not (math.isfinite(self.spacing) and self.spacing > 0):
            raise ValueError(f"grid spacing must be positive, got {self.spacing!r}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "spacing", float(self.spacing))

    @classmethod
    def centered(cls, dims, spacing: float = 1.0) -> "GridSpec":
        """Grid whose reference voxel sits at the middle (odd dims put the world
        origin exactly on a voxel centre)."""
        dims = tuple(int(d) for d in dims)
        origin = tuple(-(d // 2 + 0.5) * spacing for d in dims)
        return cls(dims, spacing, origin)

    @property
    def size(self) -> int:
        return self.dims[0] * self.dims[1] * self.dims[2]

    @property
    def voxel_volume(self) -> float:
        return self.spacing ** 3

    @property
    def reference_index(self) -> tuple[int, int, int]:
        """Index of the voxel containing the world origin (may lie off-grid)."""
        return tuple(int(math.floor(-o / self.spacing + 1e-9)) for o in self.origin)

    def centres(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        axes = [self.origin[a] + (np.arange(self.dims[a]) + 0.5) * self.spacing for a in range(3)]
        return tuple(np.meshgrid(*axes, indexing="ij"))

    def same_lattice(self, other: "GridSpec") -> bool:
        return self.spacing == other.spacing

    def to_json(self) -> dict:
        return {"dims": list(self.dims), "spacing": self.spacing, "origin": list(self.origin)}

    @classmethod
    def from_json(cls, data: dict) -> "GridSpec":
        return cls(tuple(data["dims"]), float(data.get("spacing", 1.0)), tuple(data.get("origin", (0.0, 0.0, 0.0))))


@dataclass(frozen=True, eq=False)
class VoxelSolid:
    grid: GridSpec
    occupancy: np.ndarray = field(repr=False)

    def __post_init__(self):
        occ = np.asarray(self.occupancy, dtype=bool)
        if occ.shape != self.grid.dims:
            raise ValueError(f"occupancy shape {occ.shape} does not match grid dims {self.grid.dims}")
        occ = occ.copy()
        occ.flags.writeable = False
        object.__setattr__(self, "occupancy", occ)

    @classmethod
    def empty(cls, grid: GridSpec) -> "VoxelSolid":
        return cls(grid, np.zeros(grid.dims, dtype=bool))

    @classmethod
    def full(cls, grid: GridSpec) -> "VoxelSolid":
        return cls(grid, np.ones(grid.dims, dtype=bool))

    @classmethod
    def from_indices(cls, grid: GridSpec, indices) -> "VoxelSolid":
        occ = np.zeros(grid.dims, dtype=bool)
        idx = np.asarray(indices, dtype=np.int64).reshape(-1, 3)
        if idx.size:
            occ[idx[:, 0], idx[:, 1], idx[:, 2]] = True
        return cls(grid, occ)

    @property
    def count(self) -> int:
        return int(np.count_nonzero(self.occupancy))

    @property
    def volume(self) -> float:
        return self.count * self.grid.voxel_volume

    def indices(self) -> np.ndarray:
        return np.argwhere(self.occupancy)

    def is_empty(self) -> bool:
        return not self.occupancy.any()

    def __eq__(self, other):
        if not isinstance(other, VoxelSolid):
            return NotImplemented
        return self.grid == other.grid and np.array_equal(self.occupancy, other.occupancy)

    def __hash__(self):
        return hash((self.grid, self.occupancy.tobytes()))

    def __or__(self, other):
        return boolean(self, "union", other)

    def __and__(self, other):
        return boolean(self, "intersect", other)

    def __sub__(self, other):
        return boolean(self, "subtract", other)

    def __invert__(self):
        return boolean(self, "complement")

    def issubset(self, other: "VoxelSolid") -> bool:
        _check_compatible(self, other)
        return not np.any(self.occupancy & ~other.occupancy)

    def flat(self) -> np.ndarray:
        """Occupancy flattened x-fastest."""
        return self.occupancy.ravel(order="F")


def _check_compatible(a: VoxelSolid, b: VoxelSolid) -> None:
    if a.grid != b.grid:
        raise GridMismatchError(f"grid mismatch: {a.grid} vs {b.grid}")


# ----------------------------------------------------------------------------
# Boolean algebra and measure
# ----------------------------------------------------------------------------


def boolean(a: VoxelSolid, op: str, b: VoxelSolid | None = None) -> VoxelSolid:
    if op == "complement":
        if b is not None:
            raise ValueError("complement is unary")
        return VoxelSolid(a.grid, ~a.occupancy)
    if b is None:
        raise ValueError(f"{op} needs two operands")
    _check_compatible(a, b)
    if op == "union":
        occ = a.occupancy | b.occupancy
    elif op == "intersect":
        occ = a.occupancy & b.occupancy
    elif op == "subtract":
        occ = a.occupancy & ~b.occupancy
    else:
        raise ValueError(f"unknown boolean op {op!r}")
    return VoxelSolid(a.grid, occ)


def measure(s: VoxelSolid) -> float:
    """Volume in mm^3."""
    return s.volume


def reflect(s: VoxelSolid) -> VoxelSolid:
    """Point reflection through the world origin, clipped to the grid.

    The reflection centre is the reference voxel (the voxel holding the world
    origin), so offset ``+d`` maps to ``-d`` exactly.
    """
    r = np.array(s.grid.reference_index)
    idx = s.indices()
    out = 2 * r - idx
    dims = np.array(s.grid.dims)
    keep = np.all((out >= 0) & (out < dims), axis=1)
    return VoxelSolid.from_indices(s.grid, out[keep])


def offset_ball(s: VoxelSolid, r: float, direction: str = "grow", method: str = "auto") -> VoxelSolid:
    """Grow or shrink by a discrete ball of radius ``r`` mm (rounded down to voxels)."""
    from . import morphology

    if r < 0:
        raise ValueError("offset radius must be non-negative")
    rv = int(math.floor(r / s.grid.spacing + 1e-9))
    if rv == 0:
        return s
    offsets = morphology.ball_offsets(rv)
    if direction == "grow":
        return morphology.minkowski_offsets(s, "sum", offsets, method=method)
    if direction == "shrink":
        return morphology.minkowski_offsets(s, "difference", offsets, method=method)
    raise ValueError(f"direction must be 'grow' or 'shrink', got {direction!r}")


# ----------------------------------------------------------------------------
# Scenes
# ----------------------------------------------------------------------------

_SHAPES = {"box", "sphere", "cylinder", "halfspace"}
_OPS = {"union", "intersect", "subtract", "complement"}


def _vec(node: dict, key: str, path: str, n: int = 3) -> np.ndarray:
    if key not in node:
        raise SceneError(f"{path}: missing field '{key}'")
    v = node[key]
    if not isinstance(v, (list, tuple)) or len(v) != n:
        raise SceneError(f"{path}.{key}: expected a list of {n} numbers")
    try:
        arr = np.array([float(x) for x in v])
    except (TypeError, ValueError):
        raise SceneError(f"{path}.{key}: expected numbers") from None
    if not np.all(np.isfinite(arr)):
        raise SceneError(f"{path}.{key}: non-finite value")
    return arr


def _num(node: dict, key: str, path: str) -> float:
    if key not in node:
        raise SceneError(f"{path}: missing field '{key}'")
    try:
        x = float(node[key])
    except (TypeError, ValueError):
        raise SceneError(f"{path}.{key}: expected a number") from None
    if not math.isfinite(x):
        raise SceneError(f"{path}.{key}: non-finite value")
    return x


def validate_scene(node: Any, path: str = "scene") -> None:
    """Check a scene tree; raises :class:`SceneError` with a field path."""
    if not isinstance(node, dict):
        raise SceneError(f"{path}: expected an object")
    if "shape" in node:
        kind = node["shape"]
        if kind not in _SHAPES:
            raise SceneError(f"{path}.shape: unknown shape {kind!r}")
        if kind == "box":
            lo, hi = _vec(node, "min", path), _vec(node, "max", path)
            if np.any(hi <= lo):
                raise SceneError(f"{path}: box must have positive extent")
        elif kind == "sphere":
            _vec(node, "center", path)
            if _num(node, "radius", path) <= 0:
                raise SceneError(f"{path}.radius: must be positive")
        elif kind == "cylinder":
            p0, p1 = _vec(node, "p0", path), _vec(node, "p1", path)
            if _num(node, "radius", path) <= 0:
                raise SceneError(f"{path}.radius: must be positive")
            if np.linalg.norm(p1 - p0) <= 0:
                raise SceneError(f"{path}: cylinder axis has zero length")
        else:
            n = _vec(node, "normal", path)
            _num(node, "offset", path)
            if np.linalg.norm(n) <= 0:
                raise SceneError(f"{path}.normal: must be nonzero")
        return
    op = node.get("op")
    if op not in _OPS:
        raise SceneError(f"{path}: node needs 'shape' or 'op' in {sorted(_OPS)}")
    children = node.get("children", [])
    if not isinstance(children, list):
        raise SceneError(f"{path}.children: expected a list")
    if op == "complement" and len(children) != 1:
        raise SceneError(f"{path}: complement takes exactly one child")
    if op in ("subtract", "intersect") and len(children) < 1:
        raise SceneError(f"{path}: {op} needs at least one child")
    for i, child in enumerate(children):
        validate_scene(child, f"{path}.children[{i}]")


def _classify(node: dict, x, y, z) -> np.ndarray:
    if "shape" in node:
        kind = node["shape"]
        if kind == "box":
            lo, hi = np.asarray(node["min"], float), np.asarray(node["max"], float)
            return (x >= lo[0]) & (x <= hi[0]) & (y >= lo[1]) & (y <= hi[1]) & (z >= lo[2]) & (z <= hi[2])
        if kind == "sphere":
            c = np.asarray(node["center"], float)
            r = float(node["radius"])
            return (x - c[0]) ** 2 + (y - c[1]) ** 2 + (z - c[2]) ** 2 <= r * r
        if kind == "cylinder":
            p0, p1 = np.asarray(node["p0"], float), np.asarray(node["p1"], float)
            r = float(node["radius"])
            d = p1 - p0
            length = float(np.linalg.norm(d))
            u = d / length
            rx, ry, rz = x - p0[0], y - p0[1], z - p0[2]
            t = rx * u[0] + ry * u[1] + rz * u[2]
            radial2 = rx * rx + ry * ry + rz * rz - t * t
            return (t >= 0) & (t <= length) & (radial2 <= r * r)
        n = np.asarray(node["normal"], float)
        return x * n[0] + y * n[1] + z * n[2] <= float(node["offset"])
    op = node["op"]
    parts = [_classify(c, x, y, z) for c in node.get("children", [])]
    if op == "union":
        out = np.zeros(x.shape, dtype=bool)
        for p in parts:
            out |= p
        return out
    if op == "intersect":
        out = parts[0].copy()
        for p in parts[1:]:
            out &= p
        return out
    if op == "subtract":
        out = parts[0].copy()
        for p in parts[1:]:
            out &= ~p
        return out
    return ~parts[0]


def voxelize(scene: dict, grid: GridSpec) -> VoxelSolid:
    """Set every voxel whose centre classifies inside the scene."""
    validate_scene(scene)
    x, y, z = grid.centres()
    return VoxelSolid(grid, _classify(scene, x, y, z))


def load_scene(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        scene = json.load(fh)
    validate_scene(scene)
    return scene


# ----------------------------------------------------------------------------
# Raw grid files
# ----------------------------------------------------------------------------

MAGIC = b"HPVX"
VERSION_OCCUPANCY = 1
VERSION_COUNTS = 2
_HEADER = struct.Struct("<4sH3I4d")


def _pack_header(grid: GridSpec, version: int) -> bytes:
    return _HEADER.pack(MAGIC, version, *grid.dims, grid.spacing, *grid.origin)


def _unpack_header(data: bytes) -> tuple[int, GridSpec]:
    if len(data) < _HEADER.size:
        raise GridFileError("truncated header")
    magic, version, nx, ny, nz, h, ox, oy, oz = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise GridFileError(f"bad magic bytes {magic!r}")
    try:
        grid = GridSpec((nx, ny, nz), h, (ox, oy, oz))
    except ValueError as exc:
        raise GridFileError(str(exc)) from None
    return version, grid


def to_bytes(s: VoxelSolid) -> bytes:
    bits = np.packbits(s.flat().astype(np.uint8), bitorder="little")
    return _pack_header(s.grid, VERSION_OCCUPANCY) + bits.tobytes()


def from_bytes(data: bytes, expect_grid: GridSpec | None = None) -> VoxelSolid:
    version, grid = _unpack_header(data)
    if version != VERSION_OCCUPANCY:
        raise GridFileError(f"expected occupancy payload (version {VERSION_OCCUPANCY}), got version {version}")
    if expect_grid is not None and grid != expect_grid:
        raise GridFileError(f"grid in file {grid} does not match expected {expect_grid}")
    nbytes = (grid.size + 7) // 8
    payload = data[_HEADER.size:]
    if len(payload) != nbytes:
        raise GridFileError(f"payload has {len(payload)} bytes, expected {nbytes}")
    bits = np.unpackbits(np.frombuffer(payload, dtype=np.uint8), bitorder="little", count=grid.size)
    occ = bits.astype(bool).reshape(grid.dims, order="F")
    return VoxelSolid(grid, occ)


def counts_to_bytes(grid: GridSpec, counts: np.ndarray) -> bytes:
    counts = np.asarray(counts)
    if counts.shape != grid.dims:
        raise ValueError("counts shape does not match grid")
    if counts.min(initial=0) < 0 or counts.max(initial=0) > np.iinfo(np.uint32).max:
        raise ValueError("counts out of u32 range")
    payload = counts.ravel(order="F").astype("<u4").tobytes()
    return _pack_header(grid, VERSION_COUNTS) + payload


def counts_from_bytes(data: bytes) -> tuple[GridSpec, np.ndarray]:
    version, grid = _unpack_header(data)
    if version != VERSION_COUNTS:
        raise GridFileError(f"expected count payload (version {VERSION_COUNTS}), got version {version}")
    payload = data[_HEADER.size:]
    if len(payload) != 4 * grid.size:
        raise GridFileError(f"payload has {len(payload)} bytes, expected {4 * grid.size}")
    counts = np.frombuffer(payload, dtype="<u4").astype(np.int64).reshape(grid.dims, order="F")
    return grid, counts


def save(s: VoxelSolid, path) -> None:
    Path(path).write_bytes(to_bytes(s))


def load(path, expect_grid: GridSpec | None = None) -> VoxelSolid:
    return from_bytes(Path(path).read_bytes(), expect_grid)


def box_solid(grid: GridSpec, lo: Sequence[float], hi: Sequence[float]) -> VoxelSolid:
    return voxelize({"shape": "box", "min": list(lo), "max": list(hi)}, grid)
