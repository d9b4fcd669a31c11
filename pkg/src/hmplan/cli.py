"""Batch front door: ``hmplan <stage> --config job.json --job-dir out/``.

Stages run in order voxelize → primitive → decompose → check → plan →
verify → report; each reads the previous stage's artifacts from the job
directory. Artifact names carry a content hash of their inputs, so an
unchanged stage is a cache hit and appending a capability refines the
cached decomposition instead of recomputing it.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import atoms as atoms_mod
from . import planner
from . import solid as solid_mod
from .capability import Capability, build_primitive, import_primitive, make_raw_stock, Primitive, Mode
from .config import ConfigError, JobConfig, load_config

log = logging.getLogger("hmplan")

STAGES = ("voxelize", "primitive", "decompose", "check", "plan", "verify", "report")

EXIT_OK = 0
EXIT_VERIFY_MISMATCH = 1
EXIT_USAGE = 2
EXIT_NOT_MANUFACTURABLE = 3
EXIT_NO_PLAN = 4


class StageError(RuntimeError):
    pass


def _digest(*parts) -> str:
    h = hashlib.sha256()
    for p in parts:
        if isinstance(p, bytes):
            h.update(p)
        else:
            h.update(json.dumps(p, sort_keys=True, default=str).encode())
        h.update(b"\0")
    return h.hexdigest()[:16]


def _dump(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")


def _read(path: Path, stage: str):
    if not path.exists():
        raise StageError(f"missing artifact {path.name}; run the '{stage}' stage first")
    return json.loads(path.read_text(encoding="utf-8"))


class Job:
    def __init__(self, cfg: JobConfig, job_dir: Path, timestamp: bool = True):
        self.cfg = cfg
        self.dir = Path(job_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.timestamp = timestamp

    def _stamp(self, payload: dict) -> dict:
        if self.timestamp:
            payload["generated_at"] = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
        return payload

    # -- voxelize ---------------------------------------------------------

    def voxelize(self) -> int:
        cfg = self.cfg
        if cfg.target_file is not None:
            data = cfg.target_file.read_bytes()
            key = _digest("file", data, cfg.workspace.to_json())
        else:
            key = _digest("scene", cfg.target, cfg.workspace.to_json())
        path = self.dir / f"target-{key}.hpvx"
        if path.exists():
            log.info("voxelize: cached %s", path.name)
        else:
            if cfg.target_file is not None:
                s = solid_mod.from_bytes(data, cfg.workspace)
            else:
                s = solid_mod.voxelize(cfg.target, cfg.workspace)
            solid_mod.save(s, path)
            log.info("voxelize: wrote %s (%d voxels)", path.name, s.count)
        _dump(self.dir / "voxelize.json", {"target": path.name, "key": key})
        return EXIT_OK

    def target(self) -> tuple[solid_mod.VoxelSolid, str]:
        meta = _read(self.dir / "voxelize.json", "voxelize")
        return solid_mod.load(self.dir / meta["target"], self.cfg.workspace), meta["key"]

    # -- primitive --------------------------------------------------------

    def _build(self, i: int, block, target) -> Primitive:
        ws = self.cfg.workspace
        if block.raw_stock:
            return make_raw_stock(block.extent, ws, block.rate, i, block.name)
        if block.file is not None:
            s = solid_mod.load(block.file, ws)
            return import_primitive(s, block.mode.value, block.rate, i, block.name)
        mmn = solid_mod.voxelize(block.mmn, block.tool_grid)
        asm = solid_mod.voxelize(block.assembly, block.tool_grid) if block.assembly is not None else None
        cap = Capability(block.variant, mmn, ws, asm, block.orientation, block.lam, block.rate, block.name, block.revolve)
        # A reference scene lets a capability be analysed against an earlier design stage.
        ref = solid_mod.voxelize(block.reference, ws) if block.reference is not None else target
        return build_primitive(cap, ref, i, method=self.cfg.method)

    def primitive(self) -> int:
        target, tkey = self.target()
        (self.dir / "primitives").mkdir(exist_ok=True)
        entries = []
        for i, block in enumerate(self.cfg.capabilities, 1):
            extra = block.file.read_bytes() if block.file is not None else b""
            # Rates and names do not change geometry, so they stay out of the key.
            geo = {k: v for k, v in block.raw.items() if k not in ("rate", "name")}
            key = _digest("primitive", geo, extra, tkey, self.cfg.workspace.to_json())
            path = self.dir / "primitives" / f"{key}.hpvx"
            if path.exists():
                log.info("primitive P%d: cached", i)
                s = solid_mod.load(path, self.cfg.workspace)
            else:
                p = self._build(i, block, target)
                s = p.solid
                solid_mod.save(s, path)
                log.info("primitive P%d (%s): %d voxels", i, block.mode.value, s.count)
            entries.append({
                "id": i,
                "name": block.name,
                "mode": block.mode.value,
                "rate": block.rate,
                "raw_stock": block.raw_stock,
                "file": f"primitives/{path.name}",
                "key": key,
                "voxels": s.count,
            })
        _dump(self.dir / "primitives.json", {"target_key": tkey, "primitives": entries})
        return EXIT_OK

    def primitives(self) -> tuple[list[Primitive], list[str]]:
        meta = _read(self.dir / "primitives.json", "primitive")
        prims, keys = [], []
        for e in meta["primitives"]:
            s = solid_mod.load(self.dir / e["file"], self.cfg.workspace)
            prims.append(Primitive(e["id"], Mode(e["mode"]), s, e["rate"], e["raw_stock"], e["name"]))
            keys.append(e["key"])
        return prims, keys

    # -- decompose --------------------------------------------------------

    @staticmethod
    def _decomp_key(keys) -> str:
        return _digest("decomposition", list(keys))

    def decompose(self) -> int:
        prims, keys = self.primitives()
        ddir = self.dir / "decompositions"
        ddir.mkdir(exist_ok=True)
        full_key = self._decomp_key(keys)
        path = ddir / f"{full_key}.npy"
        if path.exists():
            log.info("decompose: cached")
            codes = np.load(path)
        else:
            start = 0
            d = None
            for k in range(len(keys) - 1, 0, -1):
                cand = ddir / f"{self._decomp_key(keys[:k])}.npy"
                if cand.exists():
                    d = self._load_decomp(prims[:k], np.load(cand))
                    start = k
                    break
            if d is None:
                d = atoms_mod.decompose(prims, self.cfg.workspace)
                log.info("decompose: %d primitives -> %d atoms", d.n, d.m)
            else:
                for p in prims[start:]:
                    d = atoms_mod.refine(d, p)
                log.info("decompose: refined cached %d-primitive decomposition -> %d atoms", start, d.m)
            codes = d.codes
            np.save(path, codes)
        d = self._load_decomp(prims, codes)
        (self.dir / "atoms-unclassified.csv").write_text(atoms_mod.atoms_csv(d), encoding="utf-8")
        _dump(self.dir / "decompose.json", {"key": full_key, "file": f"decompositions/{path.name}", "atoms": d.m,
                                            "primitives": d.n, "empty_codes": len(d.empty_codes())})
        return EXIT_OK

    def _load_decomp(self, prims, codes) -> atoms_mod.Decomposition:
        keys, counts = np.unique(codes, return_counts=True)
        vv = self.cfg.workspace.voxel_volume
        table = {int(k): atoms_mod.Atom(int(k), len(prims), int(c), int(c) * vv) for k, c in zip(keys, counts)}
        return atoms_mod.Decomposition(self.cfg.workspace, tuple(prims), codes, table)

    def decomposition(self) -> atoms_mod.Decomposition:
        meta = _read(self.dir / "decompose.json", "decompose")
        prims, _ = self.primitives()
        return self._load_decomp(prims, np.load(self.dir / meta["file"]))

    # -- check ------------------------------------------------------------

    def classified(self) -> atoms_mod.Decomposition:
        d = self.decomposition()
        target, _ = self.target()
        return atoms_mod.classify_target(d, target, self.cfg.tolerance_mm, self.cfg.method)

    def check(self) -> int:
        d = self.classified()
        verdict = atoms_mod.manufacturability_test(d)
        (self.dir / "atoms.csv").write_text(atoms_mod.atoms_csv(d), encoding="utf-8")
        split_dir = self.dir / "split"
        split = []
        if verdict.violators:
            split_dir.mkdir(exist_ok=True)
            for e in atoms_mod.split_report(d):
                fin = split_dir / f"A_{e.bits}_in.hpvx"
                fout = split_dir / f"A_{e.bits}_out.hpvx"
                solid_mod.save(e.subatom_in, fin)
                solid_mod.save(e.subatom_out, fout)
                split.append({"code": e.bits, "in": f"split/{fin.name}", "out": f"split/{fout.name}",
                              "in_volume_mm3": e.subatom_in.volume, "out_volume_mm3": e.subatom_out.volume})
        counts = {}
        for a in d.atoms.values():
            counts[a.classification.value] = counts.get(a.classification.value, 0) + 1
        payload = {
            "manufacturable_candidate": bool(verdict),
            "violators": verdict.violator_bits(),
            "nonempty_atoms": d.m,
            "classification_counts": dict(sorted(counts.items())),
            "target_mask": [atoms_mod.code_str(c, d.n) for c in sorted(d.target_mask)],
            "tolerance_mm": d.tolerance,
            "split": split,
        }
        _dump(self.dir / "check.json", self._stamp(payload))
        if verdict:
            print(f"check: manufacturable candidate ({d.m} nonempty atoms, {len(d.target_mask)} in target)")
            return EXIT_OK
        print("check: NOT manufacturable; violating atoms: " + " ".join(f"A_{b}" for b in verdict.violator_bits()))
        return EXIT_NOT_MANUFACTURABLE

    # -- plan -------------------------------------------------------------

    def plan(self, override: bool = False, export_states: bool = False) -> int:
        meta = _read(self.dir / "check.json", "check")
        if not meta["manufacturable_candidate"] and not override:
            print("plan: target failed the manufacturability check; pass --override to plan anyway")
            return EXIT_NOT_MANUFACTURABLE
        d = self.classified()
        opts = self.cfg.planner
        try:
            plans = planner.search(d, k_best=opts.k_best, max_depth=opts.max_depth, reuse=opts.reuse, override=override)
        except planner.PlanNotFound as exc:
            kind = "not found within bounds" if isinstance(exc, planner.NotFoundWithinBounds) else "proven impossible"
            _dump(self.dir / "plans.json", self._stamp({"plans": [], "status": kind, "message": str(exc)}))
            print(f"plan: {kind}: {exc}")
            return EXIT_NO_PLAN
        stock = [p for p in d.primitives if p.is_raw_stock]
        stock_volume = stock[0].solid.volume if stock else None
        payload = {
            "status": "ok",
            "plan_count": len(plans),
            "k_best": opts.k_best,
            "max_depth": opts.max_depth,
            "minimal_dnf": planner.minimal_dnf(d).atoms_str(),
            "plans": [planner.plan_to_dict(p, d.primitives, stock_volume) for p in plans],
        }
        if opts.enrichment_budget > 0:
            rep = planner.enrich_and_match(d, opts.enrichment_budget, k_best=opts.k_best, max_depth=opts.max_depth,
                                           seed=opts.seed, reuse=opts.reuse)
            payload["enrichment"] = rep.to_dict()
        _dump(self.dir / "plans.json", self._stamp(payload))
        (self.dir / "plans.txt").write_text(planner.plans_table(plans, d.primitives), encoding="utf-8")
        if export_states:
            sdir = self.dir / "states"
            sdir.mkdir(exist_ok=True)
            for r, p in enumerate(plans, 1):
                for step, st in enumerate(p.states, 1):
                    solid_mod.save(d.union_of(planner.codes_of(st, p.universe)), sdir / f"plan{r}_S{step}.hpvx")
        print(f"plan: {len(plans)} plan(s); best {plans[0]} cost={plans[0].cost:.6g}")
        return EXIT_OK

    # -- verify -----------------------------------------------------------

    def verify(self) -> int:
        meta = _read(self.dir / "plans.json", "plan")
        d = self.classified()
        results = []
        ok = True
        for entry in meta.get("plans", []):
            expr = planner.parse_expression(entry["expression"])
            lint = planner.lint_expression(expr, d.primitives)
            geo = planner.evaluate_solid(expr, d.primitives)
            target_atoms = d.union_of(d.target_mask)
            sym = planner.evaluate_codes(expr, np.array(d.nonempty_codes(), np.uint64), d.n)
            sym_codes = [c for c, v in zip(d.nonempty_codes(), sym) if v]
            sym_solid = d.union_of(sym_codes)
            good = not lint and geo == target_atoms and sym_solid == geo
            ok &= good
            results.append({"expression": entry["expression"], "lint": lint, "geometric_matches_target": geo == target_atoms,
                            "symbolic_matches_geometric": sym_solid == geo, "ok": good})
        _dump(self.dir / "verify.json", self._stamp({"all_ok": ok, "plans": results}))
        print(f"verify: {'all plans agree' if ok else 'MISMATCH'} ({len(results)} checked)")
        return EXIT_OK if ok else EXIT_VERIFY_MISMATCH

    # -- report -----------------------------------------------------------

    def report(self) -> int:
        check = _read(self.dir / "check.json", "check")
        dec = _read(self.dir / "decompose.json", "decompose")
        prims = _read(self.dir / "primitives.json", "primitive")
        plans = _read(self.dir / "plans.json", "plan") if (self.dir / "plans.json").exists() else None
        verify = _read(self.dir / "verify.json", "verify") if (self.dir / "verify.json").exists() else None
        for part in (check, plans, verify):
            if part:
                part.pop("generated_at", None)
        payload = {
            "primitives": [{k: e[k] for k in ("id", "name", "mode", "rate", "raw_stock", "voxels")} for e in prims["primitives"]],
            "decomposition": {k: dec[k] for k in ("atoms", "primitives", "empty_codes")},
            "check": check,
            "plans": plans,
            "verify": verify,
        }
        _dump(self.dir / "report.json", self._stamp(payload))
        lines = [f"primitives: {len(payload['primitives'])}", f"nonempty atoms: {dec['atoms']}",
                 f"manufacturable candidate: {check['manufacturable_candidate']}"]
        if check["violators"]:
            lines.append("violators: " + " ".join(f"A_{b}" for b in check["violators"]))
        if plans and plans.get("plans"):
            lines.append(f"plans: {len(plans['plans'])}")
            for r, p in enumerate(plans["plans"], 1):
                lines.append(f"  #{r} cost={p['total_cost']:.6g} {p['expression']}")
        if verify is not None:
            lines.append(f"verified: {verify['all_ok']}")
        (self.dir / "report.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
        print("\n".join(lines))
        return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="job configuration (JSON)")
    common.add_argument("--job-dir", default="job", help="directory for stage artifacts")
    common.add_argument("--k-best", type=int, default=None, help="number of plans to report")
    common.add_argument("--tolerance-mm", type=float, default=None, help="global offset tolerance in mm")
    common.add_argument("--method", choices=("direct", "fft", "auto"), default=None, help="correlation method")
    common.add_argument("--no-timestamp", action="store_true", help="omit timestamps for byte-identical reports")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="hmplan", description="Hybrid additive/subtractive process planning.")
    sub = parser.add_subparsers(dest="stage", required=True)
    for name in STAGES + ("all",):
        sp = sub.add_parser(name, parents=[common])
        if name in ("plan", "all"):
            sp.add_argument("--override", action="store_true", help="plan even if the manufacturability check failed")
            sp.add_argument("--export-states", action="store_true", help="write per-step state grids")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = load_config(args.config, {"k_best": args.k_best, "tolerance_mm": args.tolerance_mm, "method": args.method})
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    job = Job(cfg, Path(args.job_dir), timestamp=not args.no_timestamp)
    try:
        if args.stage == "all":
            for stage in STAGES:
                if stage == "plan":
                    code = job.plan(args.override, args.export_states)
                else:
                    code = getattr(job, stage)()
                if code != EXIT_OK:
                    return code
            return EXIT_OK
        if args.stage == "plan":
            return job.plan(args.override, args.export_states)
        return getattr(job, args.stage)()
    except StageError as exc:
        print(f"{args.stage}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, solid_mod.GridFileError) as exc:
        print(f"{args.stage}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
