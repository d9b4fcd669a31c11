"""A small bracket with pockets on three sides and a lattice on top.

The stock is the bracket's bounding box. Three flat-end tools reach the
pockets from +z, +x and -y; the +z slot and the +x tunnel meet, so those
two cuts overlap, while the -y hole is reachable from -y only. The
subtractive tools are analysed against the bare bracket, and the lattice
(an imported additive region) is added afterwards, so it must be printed
after every cut.
"""

from __future__ import annotations

RATES = (1.30, 2.15, 0.85, 0.75, 1.50)


def _box(lo, hi):
    return {"shape": "box", "min": list(lo), "max": list(hi)}


STOCK = ((4, 4, 4), (28, 28, 20))
SLOT = _box((8, 12, 14), (20, 20, 20.9))
TUNNEL = _box((8, 14, 14), (28.9, 18, 18))
HOLE = _box((8, 3.1, 8), (12, 10, 12))

BODY = {"op": "subtract", "children": [_box(*STOCK), SLOT, TUNNEL, HOLE]}

LATTICE = {
    "op": "union",
    "children": [_box((4, y, 20), (28, y + 2, 22)) for y in (6, 14, 22)]
    + [_box((x, 4, 20), (x + 2, 28, 22)) for x in (6, 14, 22)],
}

TARGET = {"op": "union", "children": [BODY, LATTICE]}

# 3x3x3 cutter with a 3x3 shank running along local +z.
CUTTER = _box((-1.5, -1.5, -1.5), (1.5, 1.5, 1.5))
SHANK = _box((-1.5, -1.5, 1.5), (1.5, 1.5, 40))


def _cut(name, rate, orientation):
    return {
        "name": name,
        "variant": "MaximalOverCut",
        "rate": rate,
        "mmn": CUTTER,
        "assembly": SHANK,
        "orientation": orientation,
        "reference": BODY,
    }


def lattice_config(lattice_file: str, k_best: int = 6) -> dict:
    """Job config; ``lattice_file`` is an HPVX grid holding the lattice region."""
    return {
        "workspace": {"dims": [32, 32, 32], "spacing": 1.0, "origin": [0, 0, 0]},
        "target": TARGET,
        "tolerance_mm": 0.0,
        "method": "auto",
        "capabilities": [
            {"name": "stock", "raw_stock": True, "rate": RATES[0],
             "extent": {"min": list(STOCK[0]), "max": list(STOCK[1])}},
            {"name": "lattice", "file": lattice_file, "mode": "AM", "rate": RATES[1]},
            _cut("mill +z", RATES[2], "+x+y+z"),
            _cut("mill +x", RATES[3], "-z+y+x"),
            _cut("mill -y", RATES[4], "+x+z-y"),
        ],
        "planner": {"k_best": k_best, "max_depth": 8, "enrichment_budget": 0},
    }
