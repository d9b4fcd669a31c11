"""Canonical atomic decomposition of the workspace induced by a primitive set.

Atom codes are n-bit integers with primitive ``P1`` in the most significant
bit, so code ``0b1100`` is the atom inside ``P1`` and ``P2`` and outside
``P3`` and ``P4``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from . import _kernels
from .capability import Primitive
from .solid import GridMismatchError, GridSpec, VoxelSolid, offset_ball

MAX_PRIMITIVES = 62


class Classification(str, Enum):
    INSIDE = "Inside"
    OUTSIDE = "Outside"
    PARTIAL = "Partial"
    PARTIAL_TOLERABLE = "PartialTolerable"


def code_str(code: int, n: int) -> str:
    return format(int(code), f"0{n}b") if n else ""


def parse_code(bits: str) -> int:
    bits = bits.strip()
    if bits.startswith("A_"):
        bits = bits[2:]
    if not bits or any(c not in "01" for c in bits):
        raise ValueError(f"not a binary atom code: {bits!r}")
    return int(bits, 2)


@dataclass(frozen=True)
class Atom:
    code: int
    width: int
    voxel_count: int
    volume: float
    classification: Classification | None = None
    inside_overlap: float = 0.0
    outside_overlap: float = 0.0
    included: bool = False

    @property
    def bits(self) -> str:
        return code_str(self.code, self.width)

    def member_of(self, i: int) -> bool:
        """Whether the atom lies inside primitive ``P_i`` (1-based)."""
        return bool((self.code >> (self.width - i)) & 1)


@dataclass(frozen=True, eq=False)
class Decomposition:
    grid: GridSpec
    primitives: tuple[Primitive, ...]
    codes: np.ndarray = field(repr=False)
    atoms: dict[int, Atom] = field(repr=False)
    target: VoxelSolid | None = field(default=None, repr=False)
    tolerance: float = 0.0
    target_mask: frozenset[int] | None = None
    violators: tuple[int, ...] = ()

    @property
    def n(self) -> int:
        return len(self.primitives)

    @property
    def m(self) -> int:
        return len(self.atoms)

    def nonempty_codes(self) -> list[int]:
        return sorted(self.atoms)

    def empty_codes(self) -> list[int]:
        present = set(self.atoms)
        return [c for c in range(1 << self.n) if c not in present]

    def depositable_codes(self) -> list[int]:
        """Nonempty atoms inside at least one primitive; the all-zeros atom can never be reached."""
        return [c for c in sorted(self.atoms) if c != 0]

    def atom_solid(self, code: int) -> VoxelSolid:
        return VoxelSolid(self.grid, self.codes == np.uint64(code))

    def union_of(self, codes: Iterable[int]) -> VoxelSolid:
        want = np.array(sorted(set(int(c) for c in codes)), dtype=np.uint64)
        return VoxelSolid(self.grid, np.isin(self.codes, want))

    def _atom_index(self) -> tuple[np.ndarray, np.ndarray]:
        keys = np.array(sorted(self.atoms), dtype=np.uint64)
        inv = np.searchsorted(keys, self.codes.ravel())
        return keys, inv

    def is_classified(self) -> bool:
        return self.target_mask is not None


def _atoms_from_counts(keys, counts, n, voxel_volume) -> dict[int, Atom]:
    return {
        int(k): Atom(int(k), n, int(c), int(c) * voxel_volume)
        for k, c in zip(keys, counts)
        if c > 0
    }


def decompose(primitives: Sequence[Primitive], workspace: GridSpec | None = None) -> Decomposition:
    """One pass over the voxels, giving each the code of its membership vector."""
    primitives = tuple(primitives)
    if workspace is None:
        if not primitives:
            raise ValueError("need a workspace grid or at least one primitive")
        workspace = primitives[0].solid.grid
    if len(primitives) > MAX_PRIMITIVES:
        raise ValueError(f"at most {MAX_PRIMITIVES} primitives are supported, got {len(primitives)}")
    for p in primitives:
        if p.solid.grid != workspace:
            raise GridMismatchError(f"primitive {p.label} is not on the workspace grid")
    n = len(primitives)
    if n:
        stack = np.stack([p.solid.occupancy.ravel() for p in primitives])
        codes = _kernels.encode_codes(stack).reshape(workspace.dims)
    else:
        codes = np.zeros(workspace.dims, dtype=np.uint64)
    keys, counts = np.unique(codes, return_counts=True)
    atoms = _atoms_from_counts(keys, counts, n, workspace.voxel_volume)
    return Decomposition(workspace, primitives, codes, atoms)


def refine(d: Decomposition, new_primitive: Primitive) -> Decomposition:
    """Split existing atoms against one more primitive, appended as ``P_{n+1}``."""
    if new_primitive.solid.grid != d.grid:
        raise GridMismatchError("new primitive is not on the workspace grid")
    if d.n + 1 > MAX_PRIMITIVES:
        raise ValueError(f"at most {MAX_PRIMITIVES} primitives are supported")
    keys, inv = d._atom_index()
    bit = new_primitive.solid.occupancy.ravel()
    ones = np.bincount(inv, weights=bit, minlength=len(keys)).astype(np.int64)
    totals = np.array([d.atoms[int(k)].voxel_count for k in keys], dtype=np.int64)
    n = d.n + 1
    vv = d.grid.voxel_volume
    atoms = {}
    for k, t, o in zip(keys, totals, ones):
        k = int(k)
        if t - o > 0:
            atoms[k << 1] = Atom(k << 1, n, int(t - o), int(t - o) * vv)
        if o > 0:
            atoms[(k << 1) | 1] = Atom((k << 1) | 1, n, int(o), int(o) * vv)
    atoms = dict(sorted(atoms.items()))
    codes = (d.codes << np.uint64(1)) | new_primitive.solid.occupancy.astype(np.uint64)
    prims = d.primitives + (new_primitive.with_id(n),)
    out = Decomposition(d.grid, prims, codes, atoms)
    if d.target is not None:
        out = classify_target(out, d.target, d.tolerance)
    return out


def tolerance_zone(target: VoxelSolid, tolerance: float, method: str = "auto") -> VoxelSolid:
    """``(target grown by t) - (target shrunk by t)``."""
    grown = offset_ball(target, tolerance, "grow", method)
    shrunk = offset_ball(target, tolerance, "shrink", method)
    return grown - shrunk


def classify_target(d: Decomposition, target: VoxelSolid, tolerance: float = 0.0, method: str = "auto") -> Decomposition:
    """Classify atoms against the target and choose the target atom set.

    A partial atom is included when its excess lies in the tolerance zone,
    excluded when its deficit does, and decided by the larger overlap when
    both do. Otherwise it is a violation.
    """
    if target.grid != d.grid:
        raise GridMismatchError("target is not on the workspace grid")
    if tolerance < 0:
        raise ValueError("tolerance must be non-negative")
    keys, inv = d._atom_index()
    t = target.occupancy.ravel()
    inside = np.bincount(inv, weights=t, minlength=len(keys)).astype(np.int64)
    totals = np.bincount(inv, minlength=len(keys)).astype(np.int64)
    outside = totals - inside
    if tolerance > 0:
        z = tolerance_zone(target, tolerance, method).occupancy.ravel()
    else:
        z = np.zeros_like(t)
    excess_off = np.bincount(inv, weights=(~t) & (~z), minlength=len(keys)).astype(np.int64)
    deficit_off = np.bincount(inv, weights=t & (~z), minlength=len(keys)).astype(np.int64)

    vv = d.grid.voxel_volume
    atoms = {}
    mask = set()
    violators = []
    for k, ins, out, ex, de in zip(keys, inside, outside, excess_off, deficit_off):
        k = int(k)
        if out == 0:
            cls, inc = Classification.INSIDE, True
        elif ins == 0:
            cls, inc = Classification.OUTSIDE, False
        else:
            ok_in, ok_out = ex == 0, de == 0
            if ok_in and ok_out:
                cls, inc = Classification.PARTIAL_TOLERABLE, bool(ins >= out)
            elif ok_in:
                cls, inc = Classification.PARTIAL_TOLERABLE, True
            elif ok_out:
                cls, inc = Classification.PARTIAL_TOLERABLE, False
            else:
                cls, inc = Classification.PARTIAL, False
                violators.append(k)
        if inc:
            if k == 0:
                # Outside every primitive: no plan can deposit it.
                violators.append(k)
                inc = False
            else:
                mask.add(k)
        atoms[k] = replace(
            d.atoms[k],
            classification=cls,
            inside_overlap=int(ins) * vv,
            outside_overlap=int(out) * vv,
            included=inc,
        )
    return replace(
        d,
        atoms=atoms,
        target=target,
        tolerance=float(tolerance),
        target_mask=frozenset(mask),
        violators=tuple(sorted(violators)),
    )


@dataclass(frozen=True)
class Verdict:
    manufacturable_candidate: bool
    violators: tuple[int, ...] = ()
    width: int = 0

    def __bool__(self):
        return self.manufacturable_candidate

    def violator_bits(self) -> list[str]:
        return [code_str(c, self.width) for c in self.violators]


def manufacturability_test(d: Decomposition) -> Verdict:
    """Necessary-condition test: every atom must be wholly in or out (up to tolerance)."""
    if not d.is_classified():
        raise ValueError("classify_target must run before the manufacturability test")
    return Verdict(not d.violators, d.violators, d.n)


@dataclass(frozen=True, eq=False)
class SplitEntry:
    code: int
    width: int
    subatom_in: VoxelSolid
    subatom_out: VoxelSolid

    @property
    def bits(self) -> str:
        return code_str(self.code, self.width)


def split_report(d: Decomposition, target: VoxelSolid | None = None) -> list[SplitEntry]:
    """For each violating atom, the inside/outside pieces a new primitive must separate."""
    if not d.is_classified():
        raise ValueError("classify_target must run before split_report")
    target = d.target if target is None else target
    out = []
    for c in d.violators:
        a = d.atom_solid(c)
        out.append(SplitEntry(c, d.n, a & target, a - target))
    return out


CSV_COLUMNS = ("code", "voxel_count", "volume_mm3", "classification", "inside_overlap_mm3", "outside_overlap_mm3")


def atoms_csv(d: Decomposition) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for code in sorted(d.atoms):
        a = d.atoms[code]
        w.writerow([
            a.bits,
            a.voxel_count,
            repr(a.volume),
            a.classification.value if a.classification else "",
            repr(a.inside_overlap),
            repr(a.outside_overlap),
        ])
    return buf.getvalue()
