"""Translational configuration-space morphology on voxel lattices.

Everything reduces to one primitive, the lattice convolution
``out[z] = sum_{x + y = z} a[x] b[y]`` evaluated on a requested output box,
computed either by direct pair scattering or by zero-padded FFT.

Conventions
-----------
* ``tau B`` shifts ``B`` by the integer offset ``tau`` (voxel index shift).
* A structuring element (tool, MMN) is a set of offsets relative to the
  reference voxel of its own grid, i.e. the voxel holding the world origin.
* Erosion-like operations are exact duals of their dilation counterparts
  under grid-relative complement; voxels off the grid never constrain an
  erosion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .solid import GridMismatchError, GridSpec, VoxelSolid, boolean

METHODS = ("direct", "fft", "auto")
MAX_FFT_CELLS = 1 << 28
_AUTO_DIRECT_PAIRS = 1 << 21


# ----------------------------------------------------------------------------
# Lattice convolution
# ----------------------------------------------------------------------------


def _fft_conv_box(a, a_lo, b, b_lo, out_lo, out_shape):
    full = tuple(sa + sb - 1 for sa, sb in zip(a.shape, b.shape))
    if math.prod(full) > MAX_FFT_CELLS:
        raise MemoryError(f"FFT buffer of shape {full} exceeds the addressable limit of {MAX_FFT_CELLS} cells")
    fa = np.fft.rfftn(a.astype(np.float64), s=full, axes=(0, 1, 2))
    fb = np.fft.rfftn(b.astype(np.float64), s=full, axes=(0, 1, 2))
    conv = np.fft.irfftn(fa * fb, s=full, axes=(0, 1, 2))
    counts = np.rint(conv)
    np.maximum(counts, 0, out=counts)
    out = np.zeros(out_shape, dtype=np.int64)
    src, dst = [], []
    for ax in range(3):
        base = a_lo[ax] + b_lo[ax]
        f0 = out_lo[ax] - base
        f1 = f0 + out_shape[ax]
        c0, c1 = max(f0, 0), min(f1, full[ax])
        if c1 <= c0:
            return out
        src.append(slice(c0, c1))
        dst.append(slice(c0 - f0, c1 - f0))
    out[tuple(dst)] = counts[tuple(src)].astype(np.int64)
    return out


def lattice_conv(a: np.ndarray, a_lo, b: np.ndarray, b_lo, out_lo, out_shape, method: str = "auto") -> np.ndarray:
    """Integer convolution of two 0/1 arrays placed on the integer lattice.

    ``a[i]`` sits at lattice point ``a_lo + i`` (likewise ``b``); the result
    holds ``out[z - out_lo]`` for every ``z`` in the output box.
    """
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}, got {method!r}")
    a_lo = tuple(int(v) for v in a_lo)
    b_lo = tuple(int(v) for v in b_lo)
    out_lo = tuple(int(v) for v in out_lo)
    out_shape = tuple(int(v) for v in out_shape)
    a_idx = np.argwhere(a)
    b_idx = np.argwhere(b)
    if a_idx.shape[0] == 0 or b_idx.shape[0] == 0:
        return np.zeros(out_shape, dtype=np.int64)
    if method == "auto":
        method = "direct" if a_idx.shape[0] * b_idx.shape[0] <= _AUTO_DIRECT_PAIRS else "fft"
    if method == "fft":
        return _fft_conv_box(np.asarray(a, bool), a_lo, np.asarray(b, bool), b_lo, out_lo, out_shape)
    return _kernels.scatter_pairs(a_idx + np.array(a_lo), b_idx + np.array(b_lo), out_lo, out_shape)


# ----------------------------------------------------------------------------
# Offsets (structuring elements)
# ----------------------------------------------------------------------------


def structuring_offsets(s: VoxelSolid) -> np.ndarray:
    """Offsets of the occupied voxels relative to the grid's reference voxel."""
    return s.indices() - np.array(s.grid.reference_index)


def ball_offsets(radius_voxels: int) -> np.ndarray:
    r = int(radius_voxels)
    rng = np.arange(-r, r + 1)
    q = np.stack(np.meshgrid(rng, rng, rng, indexing="ij"), axis=-1).reshape(-1, 3)
    return q[(q * q).sum(axis=1) <= r * r]


def _offsets_array(offsets) -> tuple[np.ndarray, np.ndarray]:
    q = np.asarray(offsets, dtype=np.int64).reshape(-1, 3)
    if q.shape[0] == 0:
        return np.zeros((1, 1, 1), bool), np.zeros(3, np.int64)
    lo = q.min(axis=0)
    arr = np.zeros(tuple(q.max(axis=0) - lo + 1), dtype=bool)
    arr[tuple((q - lo).T)] = True
    return arr, lo


def _union_offsets(*sets) -> np.ndarray:
    parts = [np.asarray(s, np.int64).reshape(-1, 3) for s in sets]
    allq = np.concatenate(parts, axis=0) if parts else np.zeros((0, 3), np.int64)
    return np.unique(allq, axis=0)


def _solid_offsets(x) -> np.ndarray:
    if isinstance(x, VoxelSolid):
        return structuring_offsets(x)
    return np.asarray(x, np.int64).reshape(-1, 3)


def _check_lattice(a: VoxelSolid, b) -> None:
    if isinstance(b, VoxelSolid) and not a.grid.same_lattice(b.grid):
        raise GridMismatchError(f"spacing mismatch: {a.grid.spacing} vs {b.grid.spacing}")


def overlap_counts(a: VoxelSolid, offsets, method: str = "auto") -> np.ndarray:
    """``counts[x] = #{q in offsets : x + q in a}`` for every voxel ``x`` of ``a``'s grid.

    This is the correlation restricted to tool placements whose reference
    voxel lies on the grid.
    """
    neg, lo = _offsets_array(-np.asarray(offsets, np.int64).reshape(-1, 3))
    return lattice_conv(a.occupancy, (0, 0, 0), neg, lo, (0, 0, 0), a.grid.dims, method)


def minkowski_offsets(a: VoxelSolid, op: str, offsets, method: str = "auto") -> VoxelSolid:
    """``sum = {x + q}``; ``difference = {x : x - q in a for every q}`` (off-grid is free)."""
    q = np.asarray(offsets, np.int64).reshape(-1, 3)
    if q.shape[0] == 0:
        raise ValueError("structuring element is empty")
    karr, lo = _offsets_array(q)
    if op == "sum":
        c = lattice_conv(a.occupancy, (0, 0, 0), karr, lo, (0, 0, 0), a.grid.dims, method)
        return VoxelSolid(a.grid, c >= 1)
    if op == "difference":
        c = lattice_conv(~a.occupancy, (0, 0, 0), karr, lo, (0, 0, 0), a.grid.dims, method)
        return VoxelSolid(a.grid, c == 0)
    raise ValueError(f"op must be 'sum' or 'difference', got {op!r}")


def minkowski(a: VoxelSolid, op: str, b, method: str = "auto") -> VoxelSolid:
    _check_lattice(a, b)
    return minkowski_offsets(a, op, _solid_offsets(b), method)


def opening(s: VoxelSolid, b, c=None, method: str = "auto") -> VoxelSolid:
    """``(s ⊖ -D) ⊕ b`` with ``D = b ∪ c``: the sweep of ``b`` over placements where the whole tool fits."""
    _check_lattice(s, b)
    qb = _solid_offsets(b)
    qd = _union_offsets(qb, _solid_offsets(c)) if c is not None else qb
    placements = minkowski_offsets(s, "difference", -qd, method)
    return minkowski_offsets(placements, "sum", qb, method)


def closing(s: VoxelSolid, b, c=None, method: str = "auto") -> VoxelSolid:
    """``(s ⊕ -D) ⊖ b`` with ``D = b ∪ c``."""
    _check_lattice(s, b)
    qb = _solid_offsets(b)
    qd = _union_offsets(qb, _solid_offsets(c)) if c is not None else qb
    grown = minkowski_offsets(s, "sum", -qd, method)
    return minkowski_offsets(grown, "difference", qb, method)


# ----------------------------------------------------------------------------
# Translation sets and overlap fields over the full offset lattice
# ----------------------------------------------------------------------------


def offset_grid(grid: GridSpec) -> GridSpec:
    """Offset lattice of all relative shifts between two solids on ``grid``."""
    h = grid.spacing
    dims = tuple(2 * n - 1 for n in grid.dims)
    origin = tuple(-(n - 1) * h - 0.5 * h for n in grid.dims)
    return GridSpec(dims, h, origin)


@dataclass(frozen=True, eq=False)
class OverlapField:
    grid: GridSpec
    counts: np.ndarray = field(repr=False)

    @property
    def lo(self) -> tuple[int, int, int]:
        r = self.grid.reference_index
        return (-r[0], -r[1], -r[2])

    def at(self, tau) -> int:
        idx = tuple(int(t) - l for t, l in zip(tau, self.lo))
        return int(self.counts[idx])


@dataclass(frozen=True, eq=False)
class TranslationSet:
    grid: GridSpec
    members: np.ndarray = field(repr=False)

    def __post_init__(self):
        m = np.asarray(self.members, dtype=bool)
        if m.shape != self.grid.dims:
            raise ValueError("members shape does not match offset grid")
        object.__setattr__(self, "members", m)

    @property
    def lo(self) -> tuple[int, int, int]:
        r = self.grid.reference_index
        return (-r[0], -r[1], -r[2])

    @classmethod
    def from_offsets(cls, workspace: GridSpec, offsets) -> "TranslationSet":
        g = offset_grid(workspace)
        m = np.zeros(g.dims, bool)
        q = np.asarray(offsets, np.int64).reshape(-1, 3)
        if q.size:
            m[tuple((q - np.array(cls._lo_of(g))).T)] = True
        return cls(g, m)

    @staticmethod
    def _lo_of(g: GridSpec):
        r = g.reference_index
        return (-r[0], -r[1], -r[2])

    def offsets(self) -> np.ndarray:
        return np.argwhere(self.members) + np.array(self.lo)

    def __contains__(self, tau) -> bool:
        idx = tuple(int(t) - l for t, l in zip(tau, self.lo))
        if any(i < 0 or i >= n for i, n in zip(idx, self.members.shape)):
            return False
        return bool(self.members[idx])

    def __eq__(self, other):
        if not isinstance(other, TranslationSet):
            return NotImplemented
        return self.grid == other.grid and np.array_equal(self.members, other.members)

    def issubset(self, other: "TranslationSet") -> bool:
        return not np.any(self.members & ~other.members)

    def inverse(self) -> "TranslationSet":
        """``{-tau}``; the offset lattice is symmetric so the grid is unchanged."""
        return TranslationSet(self.grid, self.members[::-1, ::-1, ::-1])


def workspace_window(d: VoxelSolid) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """Offsets that keep the reference voxel of a tool on ``d``'s grid, as ``(lo, hi)`` exclusive."""
    r = d.grid.reference_index
    lo = tuple(-ri for ri in r)
    hi = tuple(n - ri for n, ri in zip(d.grid.dims, r))
    return lo, hi


def _window_mask(og: GridSpec, window) -> np.ndarray:
    if window is None:
        return np.ones(og.dims, bool)
    if isinstance(window, np.ndarray):
        if window.shape != og.dims:
            raise ValueError("window mask shape does not match offset grid")
        return window.astype(bool)
    lo, hi = window
    r = og.reference_index
    mask = np.zeros(og.dims, bool)
    sl = []
    for ax in range(3):
        a0 = max(int(lo[ax]) + r[ax], 0)
        a1 = min(int(hi[ax]) + r[ax], og.dims[ax])
        if a1 <= a0:
            return mask
        sl.append(slice(a0, a1))
    mask[tuple(sl)] = True
    return mask


def correlate(a: VoxelSolid, b: VoxelSolid, method: str = "auto") -> OverlapField:
    """``counts[tau] = |a ∩ tau b|`` for every relative shift with any possible overlap."""
    if a.grid != b.grid:
        raise GridMismatchError(f"grid mismatch: {a.grid} vs {b.grid}")
    og = offset_grid(a.grid)
    nb = b.grid.dims
    brev = b.occupancy[::-1, ::-1, ::-1]
    lo = tuple(-(n - 1) for n in nb)
    counts = lattice_conv(a.occupancy, (0, 0, 0), brev, lo, lo, og.dims, method)
    return OverlapField(og, counts)


def obstacle(s: VoxelSolid, d: VoxelSolid, method: str = "auto", window=None) -> TranslationSet:
    """Shifts that put ``d`` in collision with ``s`` (any shared voxel)."""
    f = correlate(s, d, method)
    return TranslationSet(f.grid, (f.counts >= 1) & _window_mask(f.grid, window))


def free_space(s: VoxelSolid, d: VoxelSolid, method: str = "auto", window=None) -> TranslationSet:
    f = correlate(s, d, method)
    return TranslationSet(f.grid, (f.counts == 0) & _window_mask(f.grid, window))


def lambda_motion(
    target_complement: VoxelSolid,
    d: VoxelSolid,
    mmn_volume: int,
    lam: float,
    method: str = "auto",
    window=None,
) -> TranslationSet:
    """Shifts whose overlap with ``target_complement`` is at most ``lam * mmn_volume`` voxels."""
    if not (0.0 <= lam < 1.0):
        raise ValueError(f"lambda must lie in [0, 1), got {lam}")
    if mmn_volume <= 0:
        raise ValueError("MMN volume must be positive")
    f = correlate(target_complement, d, method)
    thresh = lam * mmn_volume
    return TranslationSet(f.grid, (f.counts <= thresh + 1e-9) & _window_mask(f.grid, window))


def _check_tset(t: TranslationSet, b: VoxelSolid) -> None:
    if t.grid.spacing != b.grid.spacing:
        raise GridMismatchError("translation set and solid use different spacing")


def dilate(t: TranslationSet, b: VoxelSolid, method: str = "auto") -> VoxelSolid:
    """``∪_{tau in t} tau b`` clipped to ``b``'s grid."""
    _check_tset(t, b)
    c = lattice_conv(t.members, t.lo, b.occupancy, (0, 0, 0), (0, 0, 0), b.grid.dims, method)
    return VoxelSolid(b.grid, c >= 1)


def erode(t: TranslationSet, b: VoxelSolid, method: str = "auto") -> VoxelSolid:
    """``∩_{tau in t} tau b``; a shift that carries a voxel off the grid imposes nothing."""
    _check_tset(t, b)
    c = lattice_conv(t.members, t.lo, ~b.occupancy, (0, 0, 0), (0, 0, 0), b.grid.dims, method)
    return VoxelSolid(b.grid, c == 0)


# ----------------------------------------------------------------------------
# Axisymmetric revolve (turning)
# ----------------------------------------------------------------------------

_AXES = {"x": 0, "y": 1, "z": 2}


def revolve(b: VoxelSolid, axis: str, position=(0.0, 0.0, 0.0), angular_samples: int = 360) -> VoxelSolid:
    """Union of ``b`` rotated about an axis-parallel line at uniformly spaced angles.

    ``position`` is any world point on the axis. Rotation uses forward
    nearest-voxel resampling, so angle sets nest when ``angular_samples``
    is multiplied.
    """
    if axis not in _AXES:
        raise ValueError(f"axis must be one of x, y, z; got {axis!r}")
    if angular_samples < 4:
        raise ValueError("angular_samples must be at least 4")
    ax = _AXES[axis]
    g = b.grid
    centre = [(float(position[i]) - g.origin[i]) / g.spacing - 0.5 for i in range(3)]
    for i in range(3):
        if i != ax and not (-0.5 <= centre[i] <= g.dims[i] - 0.5):
            raise ValueError(f"revolve axis lies outside the grid along {'xyz'[i]}")
    angles = 2.0 * np.pi * (np.arange(angular_samples) / angular_samples)
    occ = _kernels.revolve_scatter(b.indices(), centre, ax, angles, g.dims)
    return VoxelSolid(g, occ | b.occupancy)


def reflect_offsets(offsets) -> np.ndarray:
    return -np.asarray(offsets, np.int64).reshape(-1, 3)


def complement(s: VoxelSolid) -> VoxelSolid:
    return boolean(s, "complement")
