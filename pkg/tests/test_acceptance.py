"""Acceptance suite: each test checks one criterion and prints a PASS/FAIL line."""

import heapq
import itertools
import json
import time

import numpy as np
import pytest

from hmplan import atoms as A
from hmplan import morphology as M
from hmplan import planner as P
from hmplan.capability import Mode, Primitive
from hmplan.cli import main
from hmplan.solid import GridSpec, VoxelSolid

import rects_fixture as rx
from conftest import write_lattice_job
from lattice_fixture import RATES
from oracles import (correlate_loops, correlate_slabs, random_boxes_solid, random_primitives, random_solid,
                     run_sequence, sequence_cost, valid_sequences)


@pytest.fixture
def verdict(capsys):
    def emit(label, ok, detail=""):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} {label}" + (f" ({detail})" if detail else ""))
        assert ok, f"{label}: {detail}"

    return emit


# -- 1 -------------------------------------------------------------------------------------------


def test_morphology_duality_and_exact_correlation(verdict):
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    bad = []
    pairs = 0
    for k in range(100):
        side = 24 if k % 10 == 0 else int(rng.integers(2, 25))
        dims = (side, int(rng.integers(2, side + 1)), int(rng.integers(2, side + 1)))
        g = GridSpec(dims)
        b = random_boxes_solid(rng, g, 2) if k % 2 else random_solid(rng, dims, rng.uniform(0.02, 0.2))
        og = M.offset_grid(g)
        t = M.TranslationSet(og, rng.random(og.dims) < rng.uniform(0.001, 0.05))
        for method in ("direct", "fft"):
            if ~M.dilate(t, b, method) != M.erode(t, ~b, method):
                bad.append(("duality", k, method))
        a = random_solid(rng, dims, rng.uniform(0.05, 0.5))
        b2 = random_solid(rng, tuple(int(rng.integers(1, n + 1)) for n in dims), rng.uniform(0.02, 0.3))
        fft = M.correlate(a, VoxelSolid(GridSpec(b2.grid.dims), b2.occupancy), "fft").counts if b2.grid.dims == dims else None
        # Full correlation of two differently sized arrays goes through the kernel directly.
        oracle = correlate_loops if max(dims) <= 6 else correlate_slabs
        want = oracle(a.occupancy, b2.occupancy)
        for method in ("fft", "direct"):
            got = M.lattice_conv(a.occupancy, (0, 0, 0), b2.occupancy[::-1, ::-1, ::-1],
                                 tuple(1 - n for n in b2.grid.dims), tuple(1 - n for n in b2.grid.dims),
                                 want.shape, method)
            if not np.array_equal(got, want):
                bad.append(("correlation", k, method))
        if fft is not None and not np.array_equal(fft, want):
            bad.append(("correlate", k))
        pairs += 1
    dt = time.perf_counter() - t0
    verdict("1 morphology duality and exact FFT correlation", not bad and pairs >= 100,
            f"{pairs} pairs up to 24^3, {len(bad)} mismatches, {dt:.1f} s")


# -- 2 -------------------------------------------------------------------------------------------


def test_opening_closing_laws(verdict):
    rng = np.random.default_rng(202)
    violations = 0
    cases = 0
    for _ in range(120):
        g = GridSpec(tuple(int(x) for x in rng.integers(4, 17, size=3)))
        s = random_solid(rng, g.dims, rng.uniform(0.2, 0.8)) if rng.random() < 0.5 else random_boxes_solid(rng, g, 4)
        b = np.unique(rng.integers(-2, 3, size=(int(rng.integers(1, 10)), 3)), axis=0)
        method = "fft" if rng.random() < 0.5 else "direct"
        op, cl = M.opening(s, b, method=method), M.closing(s, b, method=method)
        ok = op.issubset(s) and s.issubset(cl)
        ok &= M.opening(op, b, method=method) == op and M.closing(cl, b, method=method) == cl
        # With a non-empty assembly the laws weaken to monotonicity.
        c = np.unique(rng.integers(-3, 4, size=(int(rng.integers(1, 4)), 3)), axis=0)
        opc, clc = M.opening(s, b, c, method), M.closing(s, b, c, method)
        ok &= opc.issubset(op) and cl.issubset(clc)
        ok &= M.opening(opc, b, c, method).issubset(opc) and clc.issubset(M.closing(clc, b, c, method))
        violations += not ok
        cases += 1
    verdict("2 opening/closing laws", violations == 0 and cases >= 100, f"{cases} solids, {violations} violations")


# -- 3 -------------------------------------------------------------------------------------------


def test_rects_logic_fixture(verdict):
    t0 = time.perf_counter()
    prims = rx.primitives()
    d = A.classify_target(A.decompose(prims), rx.target(prims))
    brute = {}
    for x in itertools.product(*(range(n) for n in rx.GRID.dims)):
        code = sum(int(p.solid.occupancy[x]) << (4 - p.id) for p in prims)
        brute[code] = brute.get(code, 0) + 1
    checks = {
        "P2 ∩ P4 = ∅": (prims[1].solid & prims[3].solid).is_empty(),
        "11 atoms": d.m == 11 and {c: a.voxel_count for c, a in d.atoms.items()} == brute,
        "E1 ≡ E2": P.equivalence(rx.E1, rx.E2, n=4),
        "E1 ≡ E3 conditionally only": P.equivalence(rx.E1, rx.E3, d=d, scope="conditional")
        and not P.equivalence(rx.E1, rx.E3, n=4),
        "E4 not conditional": not P.equivalence(rx.E1, rx.E4, d=d, scope="conditional"),
    }
    plans = {str(p) for p in P.search(d, k_best=10)}
    checks["planner plans"] = {rx.E1, rx.E2, "(((P2 ∪ P1) ∩ ~P3) ∩ ~P4)", "(((P2 ∪ P1) ∩ ~P4) ∩ ~P3)"} <= plans
    rep = P.enrich_and_match(d, budget=64)
    found = plans | {str(p) for _, ps in rep.enrichments for p in ps}
    checks["E3 recovered"] = rx.E3 in found and all(
        P.equivalence(p, rx.E1, d=d, scope="conditional") for p in found)
    checks["empty codes"] = [A.code_str(c, 4) for c in rep.empty_codes] == list(rx.EMPTY_CODES)
    dt = time.perf_counter() - t0
    checks["< 1 s"] = dt < 1.0
    failed = [k for k, v in checks.items() if not v]
    verdict("3 four-rectangle logic fixture", not failed, f"{dt:.2f} s" + (f"; failed {failed}" if failed else ""))


# -- 4 -------------------------------------------------------------------------------------------


def _random_valid_plan(rng, prims, max_len=8):
    am = [p.id for p in prims if p.mode is Mode.AM]
    later = [p.id for p in prims if not p.is_raw_stock]
    ids = [int(rng.choice(am))]
    for _ in range(int(rng.integers(0, max_len))):
        choices = [i for i in later if i != ids[-1]]
        if not choices:
            break
        ids.append(int(rng.choice(choices)))
    return ids


def _symbolic_final(d, prims, ids):
    acts = {a.primitive_id: a for a in P.action_masks(d)}
    state = 0
    for i in ids:
        state = P.apply(state, acts[i])
    return d.union_of(P.codes_of(state, d.depositable_codes()))


def test_plan_soundness(verdict):
    rng = np.random.default_rng(404)
    plans = 0
    bad = 0
    while plans < 1000:
        g = GridSpec(tuple(int(x) for x in rng.integers(2, 17, size=3)))
        prims = random_primitives(rng, g, int(rng.integers(1, 6)), boxes=bool(rng.random() < 0.7))
        if rng.random() < 0.3:
            p1 = prims[0]
            prims[0] = Primitive(1, Mode.AM, p1.solid, p1.rate, True)
        d = A.decompose(prims)
        for _ in range(10):
            ids = _random_valid_plan(rng, prims)
            expr = P.sequence_expression(ids, [prims[i - 1].mode for i in ids])
            assert P.lint_expression(expr, prims) == []
            geo = run_sequence(prims, ids)
            inside = np.unique(d.codes[geo.occupancy])
            outside = np.unique(d.codes[~geo.occupancy])
            whole = not (set(inside.tolist()) & set(outside.tolist()))
            ok = whole and geo == _symbolic_final(d, prims, ids) and geo == P.evaluate_solid(expr, prims)
            bad += not ok
            plans += 1
    verdict("4 plan soundness (whole atoms, symbolic equals geometric)", bad == 0, f"{plans} random valid plans, {bad} failures")


# -- 5 -------------------------------------------------------------------------------------------


def test_unimodal_permutation_invariance(verdict):
    rng = np.random.default_rng(505)
    perms = 0
    bad = 0
    while perms < 240:
        g = GridSpec(tuple(int(x) for x in rng.integers(3, 13, size=3)))
        n = int(rng.integers(3, 6))
        prims = [Primitive(i, Mode.AM if i == 1 else Mode(rng.choice(["AM", "SM"])), random_boxes_solid(rng, g, 2))
                 for i in range(1, n + 1)]
        d = A.decompose(prims)
        acts = {a.primitive_id: a for a in P.action_masks(d)}
        for mode in (Mode.AM, Mode.SM):
            ids = [p.id for p in prims if p.mode is mode and p.id != 1]
            if len(ids) < 2:
                continue
            start = P.apply(0, acts[1])
            finals = set()
            for _ in range(6):
                order = [int(i) for i in rng.permutation(ids)]
                state, counts = start, [bin(start).count("1")]
                for i in order:
                    state = P.apply(state, acts[i])
                    counts.append(bin(state).count("1"))
                steps = np.diff(counts)
                mono = np.all(steps >= 0) if mode is Mode.AM else np.all(steps <= 0)
                geo = run_sequence(prims, [1] + order)
                finals.add(geo.occupancy.tobytes())
                bad += not (mono and geo == d.union_of(P.codes_of(state, d.depositable_codes())))
                perms += 1
            bad += len(finals) != 1
    verdict("5 unimodal permutation invariance and monotonicity", bad == 0, f"{perms} permutations, {bad} violations")


# -- 6 -------------------------------------------------------------------------------------------


def _state_bits(d, occ):
    codes = [int(c) for c in np.unique(d.codes[occ]) if c != 0]
    return P.state_of(codes, d.depositable_codes())


def _dijkstra_to_target(prims, target_occ):
    """Exact cost-to-go from every reachable post-start state, by reverse Dijkstra over voxel grids."""
    later = [p for p in prims if not p.is_raw_stock]
    edges = {}
    frontier = []
    for p in prims:
        if p.mode is Mode.AM:
            frontier.append(p.solid.occupancy.copy())
    seen = {}
    while frontier:
        occ = frontier.pop()
        key = occ.tobytes()
        if key in seen:
            continue
        seen[key] = occ
        out = []
        for p in later:
            if p.mode is Mode.AM:
                new, changed = occ | p.solid.occupancy, p.solid.occupancy & ~occ
            else:
                new, changed = occ & ~p.solid.occupancy, p.solid.occupancy & occ
            if changed.any():
                out.append((new.tobytes(), p.rate * int(changed.sum())))
                frontier.append(new)
        edges[key] = out
    rev = {}
    for u, out in edges.items():
        for v, c in out:
            rev.setdefault(v, []).append((u, c))
    dist = {}
    tkey = target_occ.tobytes()
    heap = [(0.0, tkey)]
    while heap:
        du, u = heapq.heappop(heap)
        if u in dist:
            continue
        dist[u] = du
        for v, c in rev.get(u, []):
            if v not in dist:
                heapq.heappush(heap, (du + c, v))
    return seen, dist


def test_planner_optimality(verdict):
    rng = np.random.default_rng(606)
    t0 = time.perf_counter()
    instances = 0
    bad_cost = []
    bad_h = 0
    lengths = []
    while instances < 300:
        g = GridSpec(tuple(int(x) for x in rng.integers(3, 6, size=3)))
        prims = random_primitives(rng, g, int(rng.choice([2, 3, 4, 4])), boxes=bool(rng.random() < 0.3))
        if rng.random() < 0.4:
            p1 = prims[0]
            prims[0] = Primitive(1, Mode.AM, p1.solid, p1.rate, True)
        seqs = valid_sequences(prims, 6)
        if not seqs:
            continue
        # Favour targets that need long plans; short ones are easy.
        longest = max(len(s) for s in seqs)
        pool = [s for s in seqs if len(s) >= max(1, longest - 1)]
        target = run_sequence(prims, pool[int(rng.integers(len(pool)))])
        optimum = min(sequence_cost(prims, s) for s in seqs if np.array_equal(run_sequence(prims, s).occupancy, target.occupancy))
        d = A.classify_target(A.decompose(prims), target)
        plans = P.search(d, max_depth=6, k_best=3)
        best = plans[0]
        if any(p.cost < best.cost or not np.isclose(p.cost, sequence_cost(prims, p.ids)) for p in plans):
            bad_cost.append((instances, "k-best"))
        lengths.append(len(best.ids))
        if not np.isclose(best.cost, optimum) or run_sequence(prims, best.ids) != target:
            bad_cost.append((instances, best.cost, optimum))
        prob = P._problem(d, None, d.depositable_codes(), d.target_mask)
        states, dist = _dijkstra_to_target(prims, target.occupancy)
        root = min(
            (p.rate * p.solid.count + dist.get(p.solid.occupancy.tobytes(), np.inf) for p in prims if p.mode is Mode.AM),
        )
        bad_h += prob.heuristic(0, False) > root + 1e-9
        for key, occ in states.items():
            if key in dist:
                bad_h += prob.heuristic(_state_bits(d, occ), True) > dist[key] + 1e-9
        instances += 1
    dt = time.perf_counter() - t0
    ok = not bad_cost and bad_h == 0 and dt < 60
    verdict("6 planner optimality and admissibility", ok,
            f"{instances} instances, best plan lengths {min(lengths)}-{max(lengths)} (mean {np.mean(lengths):.1f}), {len(bad_cost)} cost mismatches, {bad_h} overestimates, {dt:.1f} s")


# -- 7 -------------------------------------------------------------------------------------------


def test_lattice_structure(verdict, tmp_path):
    cfg = write_lattice_job(tmp_path)
    job = tmp_path / "job"
    assert main(["all", "--config", str(cfg), "--job-dir", str(job), "--no-timestamp"]) == 0
    plans = json.loads((job / "plans.json").read_text())["plans"]
    meta = json.loads((job / "primitives.json").read_text())["primitives"]
    from hmplan import solid

    prims = [Primitive(e["id"], Mode(e["mode"]), solid.load(job / e["file"]), e["rate"], e["raw_stock"], e["name"])
             for e in meta]
    full = A.decompose([prims[i] for i in (0, 2, 3, 4, 1)])
    refined = A.refine(A.decompose([prims[i] for i in (0, 2, 3, 4)]), prims[1])
    same = np.array_equal(full.codes, refined.codes) and full.atoms == refined.atoms
    best, second = plans[0], plans[1]
    b_ids = [int(a["primitive"][1:]) for a in best["actions"]]
    s_ids = [int(a["primitive"][1:]) for a in second["actions"]]
    diff = [k for k, (x, y) in enumerate(zip(b_ids, s_ids)) if x != y]
    swap = (len(b_ids) == len(s_ids) and len(diff) == 2 and b_ids[diff[0]] == s_ids[diff[1]]
            and b_ids[diff[1]] == s_ids[diff[0]] and all(prims[b_ids[k] - 1].mode is Mode.SM for k in diff))
    shape = b_ids[0] == 1 and b_ids[-1] == 2 and best["expression"].endswith("∪ P2)")
    rates_ok = tuple(e["rate"] for e in meta) == RATES
    ok = same and swap and shape and rates_ok and best["total_cost"] <= second["total_cost"]
    d = A.decompose(prims)
    verdict("7 lattice structural reproduction", ok,
            f"{d.m} atoms, {len(plans)} plans, best {best['expression']} cost={best['total_cost']:.6g}, "
            f"second cost={second['total_cost']:.6g}")


# -- 8 -------------------------------------------------------------------------------------------


def test_incremental_refinement(verdict):
    rng = np.random.default_rng(808)
    bad = 0
    cases = 0
    for _ in range(60):
        g = GridSpec(tuple(int(x) for x in rng.integers(2, 17, size=3)))
        prims = random_primitives(rng, g, int(rng.integers(2, 9)), boxes=bool(rng.random() < 0.5))
        target = random_boxes_solid(rng, g, 2)
        full = A.classify_target(A.decompose(prims), target)
        part = A.classify_target(A.decompose(prims[:-1]), target)
        ref = A.refine(part, prims[-1])
        ok = np.array_equal(full.codes, ref.codes) and full.atoms == ref.atoms
        ok &= full.target_mask == ref.target_mask and full.violators == ref.violators
        bad += not ok
        cases += 1
    verdict("8 incremental refinement", bad == 0 and cases >= 50, f"{cases} cases, {bad} mismatches")


# -- 9 -------------------------------------------------------------------------------------------


def test_cli_determinism(verdict, tmp_path):
    cfg = write_lattice_job(tmp_path)
    for j in ("run1", "run2"):
        assert main(["all", "--config", str(cfg), "--job-dir", str(tmp_path / j), "--no-timestamp"]) == 0
    names = ("report.json", "report.txt", "plans.json", "plans.txt", "check.json", "verify.json", "atoms.csv")
    differ = [n for n in names if (tmp_path / "run1" / n).read_bytes() != (tmp_path / "run2" / n).read_bytes()]
    verdict("9 CLI determinism", not differ, "byte-identical" if not differ else f"differ: {differ}")
