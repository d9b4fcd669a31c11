"""Symbolic plan search over atom bitsets.

States are Python ints used as bitsets over a fixed atom universe (bit ``k``
is ``universe[k]``). An AM action ORs its mask in, an SM action clears it.
Plans are left-deep action sequences, so every emitted expression is
anti-balanced by construction.
"""

from __future__ import annotations

import heapq
import itertools
import math
import random
import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .atoms import Decomposition, code_str
from .capability import Mode, Primitive
from .solid import VoxelSolid


class PlanNotFound(RuntimeError):
    """No plan reaches the target."""


class NotFoundWithinBounds(PlanNotFound):
    """Search exhausted its depth or expansion budget without a plan."""


class ProvenImpossible(PlanNotFound):
    """The full (unbounded) search space holds no plan."""


# ----------------------------------------------------------------------------
# Expressions
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class Sym:
    i: int

    def __str__(self):
        return f"P{self.i}"


@dataclass(frozen=True)
class Not:
    arg: "Expr"

    def __str__(self):
        return f"~{self.arg}"


@dataclass(frozen=True)
class Union:
    args: tuple

    def __str__(self):
        return "(" + " ∪ ".join(str(a) for a in self.args) + ")"


@dataclass(frozen=True)
class Inter:
    args: tuple

    def __str__(self):
        return "(" + " ∩ ".join(str(a) for a in self.args) + ")"


@dataclass(frozen=True)
class Empty:
    def __str__(self):
        return "∅"


Expr = Sym | Not | Union | Inter | Empty

_TOKEN = re.compile(r"\s*(?:(P\d+)|(∪|\||\+|∩|&|\*|~|¬|!|\(|\)|∅))")


def parse_expression(text: str) -> Expr:
    """Parse ``"(((P1 ∩ ~P4) ∩ ~P3) ∪ P2)"``; ``|``/``&``/``!`` work as ASCII spellings.

    ``∩`` binds tighter than ``∪``; chains are left-associative.
    """
    tokens = []
    pos = 0
    text = text.strip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            raise ValueError(f"cannot parse expression at {text[pos:]!r}")
        tokens.append(m.group(1) or m.group(2))
        pos = m.end()
    tokens.append(None)
    k = 0

    def peek():
        return tokens[k]

    def take():
        nonlocal k
        t = tokens[k]
        k += 1
        return t

    def union():
        left = inter()
        while peek() in ("∪", "|", "+"):
            take()
            left = Union((left, inter()))
        return left

    def inter():
        left = unary()
        while peek() in ("∩", "&", "*"):
            take()
            left = Inter((left, unary()))
        return left

    def unary():
        t = take()
        if t in ("~", "¬", "!"):
            return Not(unary())
        if t == "(":
            e = union()
            if take() != ")":
                raise ValueError("unbalanced parentheses")
            return e
        if t == "∅":
            return Empty()
        if t and t.startswith("P"):
            return Sym(int(t[1:]))
        raise ValueError(f"unexpected token {t!r}")

    e = union()
    if peek() is not None:
        raise ValueError(f"trailing tokens after expression: {tokens[k:-1]}")
    return e


def symbols(expr: Expr) -> set[int]:
    if isinstance(expr, Sym):
        return {expr.i}
    if isinstance(expr, Not):
        return symbols(expr.arg)
    if isinstance(expr, (Union, Inter)):
        out = set()
        for a in expr.args:
            out |= symbols(a)
        return out
    return set()


def _eval_bits(expr: Expr, bits: np.ndarray) -> np.ndarray:
    if isinstance(expr, Sym):
        if expr.i < 1 or expr.i > bits.shape[0]:
            raise ValueError(f"unknown primitive symbol P{expr.i}")
        return bits[expr.i - 1]
    if isinstance(expr, Not):
        return ~_eval_bits(expr.arg, bits)
    if isinstance(expr, Union):
        out = _eval_bits(expr.args[0], bits).copy()
        for a in expr.args[1:]:
            out |= _eval_bits(a, bits)
        return out
    if isinstance(expr, Inter):
        out = _eval_bits(expr.args[0], bits).copy()
        for a in expr.args[1:]:
            out &= _eval_bits(a, bits)
        return out
    return np.zeros(bits.shape[1], dtype=bool)


def _code_bits(codes: np.ndarray, n: int) -> np.ndarray:
    codes = np.asarray(codes, dtype=np.uint64)
    return np.stack([((codes >> np.uint64(n - i)) & np.uint64(1)).astype(bool) for i in range(1, n + 1)]) if n else np.zeros((0, codes.size), bool)


def evaluate_codes(expr: Expr, codes, n: int) -> np.ndarray:
    """Truth of ``expr`` on each atom code (vectorised)."""
    if isinstance(expr, str):
        expr = parse_expression(expr)
    return _eval_bits(expr, _code_bits(np.atleast_1d(codes), n))


def evaluate_expression(expr: Expr, code: int, n: int) -> bool:
    return bool(evaluate_codes(expr, [code], n)[0])


def truth_table(expr: Expr, n: int) -> np.ndarray:
    return evaluate_codes(expr, np.arange(1 << n, dtype=np.uint64), n)


def equivalence(a: Expr, b: Expr, n: int | None = None, d: Decomposition | None = None, scope: str = "logical") -> bool:
    """Logical scope compares all ``2**n`` codes; conditional only the nonempty codes of ``d``."""
    if isinstance(a, str):
        a = parse_expression(a)
    if isinstance(b, str):
        b = parse_expression(b)
    if n is None:
        if d is None:
            raise ValueError("need n or a decomposition")
        n = d.n
    if scope == "logical":
        codes = np.arange(1 << n, dtype=np.uint64)
    elif scope == "conditional":
        if d is None:
            raise ValueError("conditional equivalence needs a decomposition")
        codes = np.array(d.nonempty_codes(), dtype=np.uint64)
    else:
        raise ValueError(f"scope must be 'logical' or 'conditional', got {scope!r}")
    return bool(np.array_equal(evaluate_codes(a, codes, n), evaluate_codes(b, codes, n)))


def evaluate_solid(expr: Expr, primitives: Sequence[Primitive]) -> VoxelSolid:
    """Evaluate with full voxel Booleans; complements are workspace-relative."""
    grid = primitives[0].solid.grid
    bits = np.stack([p.solid.occupancy.ravel() for p in primitives])
    return VoxelSolid(grid, _eval_bits(expr, bits).reshape(grid.dims))


# ----------------------------------------------------------------------------
# C1-C4 validity
# ----------------------------------------------------------------------------


class PlanLintError(ValueError):
    pass


def _is_leaf(e) -> bool:
    return isinstance(e, Sym) or (isinstance(e, Not) and isinstance(e.arg, Sym))


def _binary(e):
    if isinstance(e, (Union, Inter)) and len(e.args) > 2:
        cls = type(e)
        acc = e.args[0]
        for a in e.args[1:]:
            acc = cls((acc, a))
        return acc
    return e


def expression_to_sequence(expr: Expr, primitives: Sequence[Primitive]) -> list[int]:
    """Primitive ids in execution order; raises :class:`PlanLintError` on any C1-C4 breach."""
    by_id = {p.id: p for p in primitives}

    def prim(i):
        if i not in by_id:
            raise PlanLintError(f"unknown primitive symbol P{i}")
        return by_id[i]

    def walk(e) -> list[int]:
        e = _binary(e)
        if isinstance(e, Sym):
            p = prim(e.i)
            if p.mode is not Mode.AM:
                raise PlanLintError(f"C3: first primitive P{e.i} is not additive")
            return [e.i]
        if isinstance(e, Not):
            raise PlanLintError(f"C3: plan cannot start from a complement ({e})")
        if isinstance(e, Union):
            l, r = e.args
            for rest, leaf in ((l, r), (r, l)):
                if isinstance(leaf, Sym) and prim(leaf.i).mode is Mode.AM:
                    return walk(rest) + [leaf.i]
            if _is_leaf(l) or _is_leaf(r):
                raise PlanLintError(f"C2: union must add a positive AM primitive in {e}")
            raise PlanLintError(f"C1: node {e} has no leaf child")
        if isinstance(e, Inter):
            l, r = e.args
            for rest, leaf in ((l, r), (r, l)):
                if isinstance(leaf, Not) and isinstance(leaf.arg, Sym) and prim(leaf.arg.i).mode is Mode.SM:
                    return walk(rest) + [leaf.arg.i]
            if _is_leaf(l) or _is_leaf(r):
                raise PlanLintError(f"C2: intersection must remove a complemented SM primitive in {e}")
            raise PlanLintError(f"C1: node {e} has no leaf child")
        raise PlanLintError(f"unsupported node {e}")

    seq = walk(expr)
    for i in seq[1:]:
        if by_id[i].is_raw_stock:
            raise PlanLintError(f"C4: raw stock P{i} used after the first action")
    return seq


def lint_expression(expr: Expr, primitives: Sequence[Primitive]) -> list[str]:
    if isinstance(expr, str):
        expr = parse_expression(expr)
    try:
        expression_to_sequence(expr, primitives)
    except PlanLintError as exc:
        return [str(exc)]
    return []


def sequence_expression(ids: Sequence[int], modes: Sequence[Mode]) -> Expr:
    expr: Expr = Sym(ids[0])
    for i, m in zip(ids[1:], modes[1:]):
        expr = Union((expr, Sym(i))) if m is Mode.AM else Inter((expr, Not(Sym(i))))
    return expr


# ----------------------------------------------------------------------------
# Actions on bitset states
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class Action:
    primitive_id: int
    mode: Mode
    mask: int


def apply(state: int, a: Action) -> int:
    return state | a.mask if a.mode is Mode.AM else state & ~a.mask


def flipped(state: int, a: Action) -> int:
    return a.mask & ~state if a.mode is Mode.AM else a.mask & state


def _bits(x: int) -> Iterable[int]:
    while x:
        low = x & -x
        yield low.bit_length() - 1
        x ^= low


def action_cost(state: int, a: Action, volumes: Sequence[float], rate: float) -> float:
    """``rate`` times the volume this application deposits or removes."""
    return rate * sum(volumes[k] for k in _bits(flipped(state, a)))


def action_masks(d: Decomposition, universe: Sequence[int] | None = None) -> list[Action]:
    """One action per primitive; ``mask`` bit ``k`` is set when ``universe[k]`` lies in the primitive."""
    if universe is None:
        universe = d.depositable_codes()
    out = []
    n = d.n
    for p in d.primitives:
        shift = n - p.id
        m = 0
        for k, c in enumerate(universe):
            if (c >> shift) & 1:
                m |= 1 << k
        out.append(Action(p.id, p.mode, m))
    return out


def state_of(codes: Iterable[int], universe: Sequence[int]) -> int:
    pos = {c: k for k, c in enumerate(universe)}
    s = 0
    for c in codes:
        if c in pos:
            s |= 1 << pos[c]
    return s


def codes_of(state: int, universe: Sequence[int]) -> list[int]:
    return [universe[k] for k in _bits(state)]


# ----------------------------------------------------------------------------
# Plans
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class Plan:
    actions: tuple[Action, ...]
    states: tuple[int, ...]
    cost: float
    step_volumes: tuple[float, ...]
    step_costs: tuple[float, ...]
    universe: tuple[int, ...] = field(repr=False, default=())

    @property
    def ids(self) -> tuple[int, ...]:
        return tuple(a.primitive_id for a in self.actions)

    @property
    def expression(self) -> Expr:
        return sequence_expression(self.ids, [a.mode for a in self.actions])

    def __str__(self):
        return str(self.expression)

    @property
    def final_state(self) -> int:
        return self.states[-1]


@dataclass
class _Problem:
    universe: tuple[int, ...]
    voxels: tuple[int, ...]
    voxel_volume: float
    actions: tuple[Action, ...]
    rates: tuple[float, ...]
    raw: tuple[bool, ...]
    target: int
    # Ordering-only charge per action; keeps zero-volume flips (empty atoms) from looping.
    step_penalty: float = 0.0

    def volume(self, bits: int) -> float:
        vox = self.voxels
        return sum(vox[k] for k in _bits(bits)) * self.voxel_volume

    def __post_init__(self):
        nb = len(self.universe)
        inf = math.inf
        self._am_root = [inf] * nb
        self._am_later = [inf] * nb
        self._sm = [inf] * nb
        for a, r, raw in zip(self.actions, self.rates, self.raw):
            for k in _bits(a.mask):
                if a.mode is Mode.AM:
                    self._am_root[k] = min(self._am_root[k], r)
                    if not raw:
                        self._am_later[k] = min(self._am_later[k], r)
                else:
                    self._sm[k] = min(self._sm[k], r)

    def heuristic(self, state: int, started: bool) -> float:
        """Each wrong atom needs at least one toggle by a primitive of the right mode."""
        am = self._am_later if started else self._am_root
        vox = self.voxels
        h = 0.0
        for k in _bits(self.target & ~state):
            if am[k] == math.inf:
                return math.inf
            h += am[k] * vox[k]
        for k in _bits(state & ~self.target):
            if self._sm[k] == math.inf:
                return math.inf
            h += self._sm[k] * vox[k]
        return h * self.voxel_volume


def _problem(d: Decomposition, rates, universe, target_codes, volumes_from_atoms=True) -> _Problem:
    acts = action_masks(d, universe)
    if rates is None:
        rates = [p.rate for p in d.primitives]
    rates = tuple(float(r) for r in rates)
    if len(rates) != d.n:
        raise ValueError(f"expected {d.n} rates, got {len(rates)}")
    voxels = tuple(d.atoms[c].voxel_count if c in d.atoms else 0 for c in universe)
    target = state_of(target_codes, universe)
    return _Problem(tuple(universe), voxels, d.grid.voxel_volume, tuple(acts), rates,
                    tuple(p.is_raw_stock for p in d.primitives), target)


def _commutes(prev_state: int, a: Action, b: Action) -> bool:
    """Adjacent same-mode actions whose swap leaves every flip (hence cost) unchanged."""
    if a.mode is not b.mode:
        return False
    if a.mode is Mode.AM:
        return (a.mask & b.mask & ~prev_state) == 0
    return (a.mask & b.mask & prev_state) == 0


def _search(prob: _Problem, k_best: int, max_depth: int | None, reuse: bool, max_expansions: int) -> tuple[list[Plan], str]:
    acts = prob.actions
    order = sorted(range(len(acts)), key=lambda i: acts[i].primitive_id)
    counter = itertools.count()
    h0 = prob.heuristic(0, False)
    if h0 == math.inf:
        return [], "impossible"
    # entry: (f, ids, tiebreak, g, state, prev_state, last_index, path_states, vols, costs, used)
    heap = [(h0, (), next(counter), 0.0, 0, 0, -1, (), (), (), frozenset())]
    pops: dict = {}
    plans: list[Plan] = []
    bounded = False
    expansions = 0
    while heap and len(plans) < k_best:
        f, ids, _, g, s, prev, last, states, vols, costs, used = heapq.heappop(heap)
        key = (s, last, used if not reuse else None)
        c = pops.get(key, 0)
        if c >= k_best:
            continue
        pops[key] = c + 1
        if last >= 0 and s == prob.target:
            plans.append(Plan(tuple(acts[_idx] for _idx in _ids_to_idx(ids, acts)), states, math.fsum(costs), vols, costs, prob.universe))
            continue
        if max_depth is not None and len(ids) >= max_depth:
            bounded = True
            continue
        expansions += 1
        if expansions > max_expansions:
            bounded = True
            break
        started = last >= 0
        for i in order:
            a = acts[i]
            if not started:
                if a.mode is not Mode.AM:
                    continue
            else:
                if prob.raw[i] or i == last:
                    continue
                if not reuse and i in used:
                    continue
            fl = flipped(s, a)
            if fl == 0:
                continue
            if started and a.primitive_id < acts[last].primitive_id and _commutes(prev, acts[last], a):
                # The swapped order is cheaper-or-equal and identical; only the ascending one is kept.
                if not (len(ids) == 1 and prob.raw[last]):
                    continue
            ns = apply(s, a)
            vol = prob.volume(fl)
            step = prob.rates[i] * vol
            h = prob.heuristic(ns, True)
            if h == math.inf:
                continue
            ng = g + step + prob.step_penalty
            heapq.heappush(heap, (ng + h, ids + (a.primitive_id,), next(counter), ng, ns, s, i,
                                  states + (ns,), vols + (vol,), costs + (step,), used | {i}))
    if plans:
        return plans, "ok"
    return [], ("bounds" if bounded else "impossible")


def _ids_to_idx(ids, acts):
    pos = {a.primitive_id: k for k, a in enumerate(acts)}
    return [pos[i] for i in ids]


def search(
    d: Decomposition,
    rates: Sequence[float] | None = None,
    k_best: int = 1,
    max_depth: int | None = 8,
    reuse: bool = True,
    max_expansions: int = 2_000_000,
    target_codes: Iterable[int] | None = None,
    override: bool = False,
) -> list[Plan]:
    """Up to ``k_best`` cheapest valid plans whose final state equals the target atom set.

    Ties break on primitive ids (lexicographic), then length. Plans that
    differ only by swapping adjacent same-mode actions with disjoint
    effects are reported once, in ascending-id order.
    """
    if target_codes is None:
        if not d.is_classified():
            raise ValueError("classify_target must run before search")
        if d.violators and not override:
            raise PlanNotFound(f"target is not manufacturable; violating atoms {[code_str(c, d.n) for c in d.violators]}")
        target_codes = d.target_mask
    universe = d.depositable_codes()
    prob = _problem(d, rates, universe, target_codes)
    plans, status = _search(prob, k_best, max_depth, reuse, max_expansions)
    if not plans:
        if status == "bounds":
            raise NotFoundWithinBounds(f"no plan within max_depth={max_depth}")
        raise ProvenImpossible("no valid plan reaches the target atom set")
    return plans


def logical_search(
    d: Decomposition,
    target_codes: Iterable[int],
    rates: Sequence[float] | None = None,
    k_best: int = 10,
    max_depth: int | None = 8,
    reuse: bool = True,
    max_expansions: int = 500_000,
) -> list[Plan]:
    """Plans whose truth table over all ``2**n`` codes equals ``target_codes`` exactly."""
    if d.n > 16:
        raise ValueError("logical search enumerates 2**n codes; n must be at most 16")
    universe = list(range(1, 1 << d.n))
    prob = _problem(d, rates, universe, target_codes)
    prob.step_penalty = 1e-9 * max(1.0, prob.volume((1 << len(universe)) - 1) * max(prob.rates))
    plans, _ = _search(prob, k_best, max_depth, reuse, max_expansions)
    return plans


# ----------------------------------------------------------------------------
# DNF, verification, enrichment
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class DNF:
    codes: tuple[int, ...]
    n: int

    def clause(self, code: int) -> Expr:
        lits = [Sym(i) if (code >> (self.n - i)) & 1 else Not(Sym(i)) for i in range(1, self.n + 1)]
        return Inter(tuple(lits)) if len(lits) > 1 else lits[0]

    @property
    def expression(self) -> Expr:
        if not self.codes:
            return Empty()
        cl = [self.clause(c) for c in self.codes]
        return Union(tuple(cl)) if len(cl) > 1 else cl[0]

    def atoms_str(self) -> str:
        return " ∪ ".join(f"A_{code_str(c, self.n)}" for c in self.codes)

    def __str__(self):
        return str(self.expression)


def minimal_dnf(d: Decomposition, target_codes: Iterable[int] | None = None) -> DNF:
    if target_codes is None:
        if not d.is_classified():
            raise ValueError("classify_target must run before minimal_dnf")
        target_codes = d.target_mask
    return DNF(tuple(sorted(target_codes)), d.n)


def plan_solid(plan: Plan, primitives: Sequence[Primitive]) -> VoxelSolid:
    by_id = {p.id: p for p in primitives}
    grid = primitives[0].solid.grid
    s = VoxelSolid.empty(grid)
    for a in plan.actions:
        p = by_id[a.primitive_id]
        s = s | p.solid if a.mode is Mode.AM else s - p.solid
    return s


def verify_plan_geometric(plan: Plan, primitives: Sequence[Primitive], target_mask: Iterable[int], d: Decomposition) -> bool:
    """Evaluate the plan with voxel Booleans and compare with the target atoms, bit for bit."""
    return plan_solid(plan, primitives) == d.union_of(target_mask)


@dataclass
class EnrichmentReport:
    empty_codes: list[int]
    minimal: list[Plan]
    enrichments: list[tuple[tuple[int, ...], list[Plan]]]
    exhaustive: bool
    examined: int
    width: int

    @property
    def new_plans(self) -> int:
        return sum(len(p) for _, p in self.enrichments)

    def to_dict(self) -> dict:
        n = self.width
        return {
            "empty_codes": [code_str(c, n) for c in self.empty_codes],
            "minimal_dnf_plans": [str(p) for p in self.minimal],
            "enrichments_examined": self.examined,
            "exhaustive": self.exhaustive,
            "enrichments_with_plans": [
                {"added": [code_str(c, n) for c in codes], "plans": [str(p) for p in plans]}
                for codes, plans in self.enrichments if plans
            ],
            "new_plans": self.new_plans,
        }


def enrich_and_match(
    d: Decomposition,
    budget: int = 256,
    rates: Sequence[float] | None = None,
    k_best: int = 10,
    max_depth: int | None = 8,
    seed: int = 0,
    reuse: bool = True,
) -> EnrichmentReport:
    """Search for plans logically equivalent to the minimal DNF and to its enrichments by empty atoms.

    Only action sequences not already produced by an earlier search count
    as new, so ``new_plans == 0`` means enrichment added nothing.
    """
    if not d.is_classified():
        raise ValueError("classify_target must run before enrichment")
    base = sorted(d.target_mask)
    # The all-zeros code lies outside every primitive, so no plan can deposit it.
    empties = [c for c in d.empty_codes() if c != 0]
    minimal = logical_search(d, base, rates, k_best, max_depth, reuse)
    total = (1 << len(empties)) - 1
    if total <= budget:
        subsets = [tuple(c for j, c in enumerate(empties) if (mask >> j) & 1) for mask in range(1, total + 1)]
        exhaustive = True
    else:
        rng = random.Random(seed)
        picks = sorted(rng.sample(range(1, total + 1), budget))
        subsets = [tuple(c for j, c in enumerate(empties) if (mask >> j) & 1) for mask in picks]
        exhaustive = False
    seen = {p.ids for p in minimal}
    found = []
    for extra in subsets:
        plans = [p for p in logical_search(d, base + list(extra), rates, k_best, max_depth, reuse) if p.ids not in seen]
        seen.update(p.ids for p in plans)
        found.append((extra, plans))
    return EnrichmentReport(empties, minimal, found, exhaustive, len(subsets), d.n)


# ----------------------------------------------------------------------------
# Reports
# ----------------------------------------------------------------------------


def plan_to_dict(plan: Plan, primitives: Sequence[Primitive], stock_volume: float | None = None) -> dict:
    by_id = {p.id: p for p in primitives}
    steps = []
    for a, v, c in zip(plan.actions, plan.step_volumes, plan.step_costs):
        p = by_id[a.primitive_id]
        steps.append({
            "primitive": f"P{a.primitive_id}",
            "name": p.name,
            "mode": a.mode.value,
            "volume_mm3": v,
            "cost": c,
        })
    out = {"expression": str(plan), "actions": steps, "total_cost": plan.cost}
    if stock_volume:
        out["normalized_cost"] = plan.cost / stock_volume
    return out


def plans_table(plans: Sequence[Plan], primitives: Sequence[Primitive]) -> str:
    lines = []
    for rank, plan in enumerate(plans, 1):
        lines.append(f"#{rank}  cost={plan.cost:.6g}  {plan}")
        for a, v, c in zip(plan.actions, plan.step_volumes, plan.step_costs):
            verb = "deposit" if a.mode is Mode.AM else "remove"
            lines.append(f"    P{a.primitive_id:<3} {a.mode.value}  {verb:<7} {v:>14.6g} mm3  cost {c:.6g}")
    return "\n".join(lines) + "\n"
