"""Job configuration files (JSON)."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .capability import Mode, Variant
from .solid import GridSpec, SceneError, validate_scene


class ConfigError(ValueError):
    pass


@dataclass
class CapabilityBlock:
    name: str
    rate: float
    raw_stock: bool = False
    extent: tuple | None = None
    variant: Variant | None = None
    mode: Mode | None = None
    mmn: dict | None = None
    assembly: dict | None = None
    tool_grid: GridSpec | None = None
    orientation: str = "+x+y+z"
    lam: float | None = None
    revolve: dict | None = None
    file: Path | None = None
    reference: dict | None = None
    raw: dict = field(default_factory=dict, repr=False)


@dataclass
class PlannerOptions:
    k_best: int = 6
    max_depth: int = 8
    enrichment_budget: int = 0
    reuse: bool = True
    seed: int = 0


@dataclass
class JobConfig:
    path: Path
    workspace: GridSpec
    target: dict
    target_file: Path | None
    capabilities: list[CapabilityBlock]
    tolerance_mm: float = 0.0
    method: str = "auto"
    planner: PlannerOptions = field(default_factory=PlannerOptions)
    raw: dict = field(default_factory=dict, repr=False)


def _err(where: str, msg: str) -> ConfigError:
    return ConfigError(f"{where}: {msg}")


def _get(obj: dict, key: str, where: str, kind=None, required=True, default=None):
    if key not in obj:
        if required:
            raise _err(where, f"missing field '{key}'")
        return default
    v = obj[key]
    if kind is not None and not isinstance(v, kind) or isinstance(v, bool) and kind in (int, float, (int, float)):
        raise _err(f"{where}.{key}", f"expected {getattr(kind, '__name__', 'number')}, got {type(v).__name__}")
    return v


def _grid(obj: Any, where: str) -> GridSpec:
    if not isinstance(obj, dict):
        raise _err(where, "expected an object")
    dims = _get(obj, "dims", where, list)
    if len(dims) != 3 or not all(isinstance(d, int) and not isinstance(d, bool) and d >= 1 for d in dims):
        raise _err(f"{where}.dims", "expected three positive integers")
    spacing = _get(obj, "spacing", where, (int, float), required=False, default=1.0)
    origin = _get(obj, "origin", where, list, required=False, default=None)
    try:
        if origin is None and obj.get("centered"):
            return GridSpec.centered(dims, float(spacing))
        return GridSpec(tuple(dims), float(spacing), tuple(origin or (0.0, 0.0, 0.0)))
    except (ValueError, TypeError) as exc:
        raise _err(where, str(exc)) from None


def _scene(obj: Any, where: str) -> dict:
    try:
        validate_scene(obj, where)
    except SceneError as exc:
        raise ConfigError(str(exc)) from None
    return obj


def scene_bounds(node: dict):
    """Axis-aligned bounds of a scene, or ``None`` when unbounded."""
    if "shape" in node:
        k = node["shape"]
        if k == "box":
            return np.array(node["min"], float), np.array(node["max"], float)
        if k == "sphere":
            c = np.array(node["center"], float)
            r = float(node["radius"])
            return c - r, c + r
        if k == "cylinder":
            p0, p1 = np.array(node["p0"], float), np.array(node["p1"], float)
            r = float(node["radius"])
            return np.minimum(p0, p1) - r, np.maximum(p0, p1) + r
        return None
    op = node["op"]
    kids = [scene_bounds(c) for c in node.get("children", [])]
    if op == "union":
        if not kids:
            return np.zeros(3), np.zeros(3)
        if any(b is None for b in kids):
            return None
        return np.min([b[0] for b in kids], axis=0), np.max([b[1] for b in kids], axis=0)
    if op == "subtract":
        return kids[0]
    if op == "intersect":
        bounded = [b for b in kids if b is not None]
        if not bounded:
            return None
        return np.max([b[0] for b in bounded], axis=0), np.min([b[1] for b in bounded], axis=0)
    return None


def tool_grid_for(scenes, spacing: float) -> GridSpec | None:
    """Smallest odd centred grid holding every (bounded) tool scene."""
    reach = np.zeros(3)
    for s in scenes:
        if s is None:
            continue
        b = scene_bounds(s)
        if b is None:
            return None
        reach = np.maximum(reach, np.maximum(np.abs(b[0]), np.abs(b[1])))
    dims = tuple(2 * int(math.ceil(r / spacing + 0.5)) + 1 for r in reach)
    return GridSpec.centered(dims, spacing)


def _capability(obj: Any, where: str, base: Path, ws: GridSpec) -> CapabilityBlock:
    if not isinstance(obj, dict):
        raise _err(where, "expected an object")
    name = _get(obj, "name", where, str, required=False, default="")
    rate = float(_get(obj, "rate", where, (int, float), required=False, default=1.0))
    if rate < 0:
        raise _err(f"{where}.rate", "must be non-negative")
    if obj.get("raw_stock"):
        ext = _get(obj, "extent", where, dict)
        lo = _get(ext, "min", f"{where}.extent", list)
        hi = _get(ext, "max", f"{where}.extent", list)
        if len(lo) != 3 or len(hi) != 3:
            raise _err(f"{where}.extent", "min and max need three coordinates")
        return CapabilityBlock(name or "stock", rate, True, (tuple(map(float, lo)), tuple(map(float, hi))), mode=Mode.AM, raw=obj)
    if "file" in obj:
        mode = _get(obj, "mode", where, str)
        if mode not in ("AM", "SM"):
            raise _err(f"{where}.mode", f"expected 'AM' or 'SM', got {mode!r}")
        f = Path(_get(obj, "file", where, str))
        if not f.is_absolute():
            f = base / f
        if not f.exists():
            raise _err(f"{where}.file", f"no such file {f}")
        return CapabilityBlock(name, rate, False, mode=Mode(mode), file=f, raw=obj)
    vname = _get(obj, "variant", where, str)
    try:
        variant = Variant(vname)
    except ValueError:
        raise _err(f"{where}.variant", f"unknown variant {vname!r}; expected one of {[v.value for v in Variant]}") from None
    mmn = _scene(_get(obj, "mmn", where, dict), f"{where}.mmn")
    assembly = obj.get("assembly")
    if assembly is not None:
        assembly = _scene(assembly, f"{where}.assembly")
    lam = obj.get("lambda")
    if lam is not None:
        if not isinstance(lam, (int, float)) or isinstance(lam, bool):
            raise _err(f"{where}.lambda", "expected a number")
        lam = float(lam)
    if "tool_grid" in obj:
        tg = _grid(obj["tool_grid"], f"{where}.tool_grid")
        if tg.spacing != ws.spacing:
            raise _err(f"{where}.tool_grid", "spacing must equal the workspace spacing")
    else:
        tg = tool_grid_for([mmn, assembly], ws.spacing)
        if tg is None:
            raise _err(where, "tool scene is unbounded; give an explicit 'tool_grid'")
    orientation = _get(obj, "orientation", where, str, required=False, default="+x+y+z")
    revolve = obj.get("revolve")
    if revolve is not None and not isinstance(revolve, dict):
        raise _err(f"{where}.revolve", "expected an object")
    reference = obj.get("reference")
    if reference is not None:
        reference = _scene(reference, f"{where}.reference")
    return CapabilityBlock(name, rate, False, None, variant, variant.mode, mmn, assembly, tg, orientation, lam, revolve,
                           reference=reference, raw=obj)


def parse_config(data: dict, path: Path, overrides: dict | None = None) -> JobConfig:
    where = path.name
    if not isinstance(data, dict):
        raise _err(where, "top level must be an object")
    ws = _grid(_get(data, "workspace", where, dict), f"{where}: workspace")
    target = _get(data, "target", where, dict)
    target_file = None
    if "file" in target:
        target_file = Path(target["file"])
        if not target_file.is_absolute():
            target_file = path.parent / target_file
        if not target_file.exists():
            raise _err(f"{where}: target.file", f"no such file {target_file}")
    else:
        _scene(target, f"{where}: target")
    caps_raw = _get(data, "capabilities", where, list)
    caps = [_capability(c, f"{where}: capabilities[{i}]", path.parent, ws) for i, c in enumerate(caps_raw)]
    if not caps:
        raise _err(where, "at least one capability is required")
    if not any(c.mode is Mode.AM for c in caps):
        raise _err(f"{where}: capabilities", "no AM capability can serve as the first action")
    tol = float(_get(data, "tolerance_mm", where, (int, float), required=False, default=0.0))
    if tol < 0:
        raise _err(f"{where}: tolerance_mm", "must be non-negative")
    method = _get(data, "method", where, str, required=False, default="auto")
    if method not in ("auto", "direct", "fft"):
        raise _err(f"{where}: method", f"expected direct, fft or auto, got {method!r}")
    p = data.get("planner", {})
    if not isinstance(p, dict):
        raise _err(f"{where}: planner", "expected an object")
    popts = PlannerOptions(
        k_best=int(_get(p, "k_best", f"{where}: planner", int, required=False, default=6)),
        max_depth=int(_get(p, "max_depth", f"{where}: planner", int, required=False, default=8)),
        enrichment_budget=int(_get(p, "enrichment_budget", f"{where}: planner", int, required=False, default=0)),
        reuse=bool(p.get("reuse", True)),
        seed=int(_get(p, "seed", f"{where}: planner", int, required=False, default=0)),
    )
    cfg = JobConfig(path, ws, target, target_file, caps, tol, method, popts, raw=data)
    for k, v in (overrides or {}).items():
        if v is None:
            continue
        if k == "k_best":
            cfg.planner.k_best = int(v)
        elif k == "tolerance_mm":
            cfg.tolerance_mm = float(v)
        elif k == "method":
            cfg.method = v
    return cfg


def load_config(path, overrides: dict | None = None) -> JobConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path.name}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    return parse_config(data, path.resolve(), overrides)
