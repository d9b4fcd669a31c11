import json
import subprocess
import sys

import pytest

from hmplan import solid
from hmplan.cli import STAGES, main

from conftest import write_lattice_job


def _cfg(tmp_path, target, caps, name="job.json", **extra):
    payload = {"workspace": {"dims": [16, 16, 12]}, "target": target, "capabilities": caps, **extra}
    p = tmp_path / name
    p.write_text(json.dumps(payload))
    return p


STOCK = {"name": "stock", "raw_stock": True, "extent": {"min": [2, 2, 2], "max": [14, 14, 10]}}
BLOCK = {"shape": "box", "min": [2, 2, 2], "max": [14, 14, 10]}
CUTTER = {"shape": "box", "min": [-1.5, -1.5, -1.5], "max": [1.5, 1.5, 1.5]}
THIN_SLOT = {"op": "subtract", "children": [BLOCK, {"shape": "box", "min": [7.1, 2, 5], "max": [8.9, 14, 10.5]}]}


def _run(cfg, job, *stages, extra=()):
    codes = []
    for s in stages:
        codes.append(main([s, "--config", str(cfg), "--job-dir", str(job), "--no-timestamp", *extra]))
    return codes


def test_check_passes_when_target_is_the_stock(tmp_path, capsys):
    cfg = _cfg(tmp_path, BLOCK, [STOCK])
    assert _run(cfg, tmp_path / "job", "voxelize", "primitive", "decompose", "check") == [0, 0, 0, 0]
    assert "manufacturable candidate" in capsys.readouterr().out
    assert _run(cfg, tmp_path / "job", "plan", "verify", "report") == [0, 0, 0]
    plans = json.loads((tmp_path / "job" / "plans.json").read_text())
    assert [p["expression"] for p in plans["plans"]] == ["P1"]


def test_thin_slot_is_rejected(tmp_path, capsys):
    mill = {"name": "mill", "variant": "MaximalOverCut", "mmn": CUTTER, "rate": 1.0}
    cfg = _cfg(tmp_path, THIN_SLOT, [STOCK, mill])
    job = tmp_path / "job"
    assert main(["all", "--config", str(cfg), "--job-dir", str(job)]) == 3
    out = capsys.readouterr().out
    assert "NOT manufacturable" in out and "A_10" in out
    check = json.loads((job / "check.json").read_text())
    assert check["violators"] == ["10"] and "generated_at" in check
    assert (job / "split" / "A_10_in.hpvx").exists() and (job / "split" / "A_10_out.hpvx").exists()
    # Planning is refused unless overridden; with override the best effort is still not the target.
    assert _run(cfg, job, "plan") == [3]
    assert _run(cfg, job, "plan", extra=["--override"]) == [4]


def test_missing_stage_and_bad_config(tmp_path, capsys):
    cfg = _cfg(tmp_path, BLOCK, [STOCK])
    assert _run(cfg, tmp_path / "job", "decompose") == [2]
    assert "run the 'primitive' stage first" in capsys.readouterr().err
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    assert main(["check", "--config", str(bad)]) == 2
    with pytest.raises(SystemExit):
        main(["frobnicate", "--config", str(cfg)])


def test_lattice_pipeline(lattice_job, tmp_path):
    job = tmp_path / "out"
    assert main(["all", "--config", str(lattice_job), "--job-dir", str(job), "--no-timestamp", "--export-states"]) == 0
    for name in ("voxelize.json", "primitives.json", "decompose.json", "atoms.csv", "check.json",
                 "plans.json", "plans.txt", "verify.json", "report.json", "report.txt"):
        assert (job / name).exists(), name
    plans = json.loads((job / "plans.json").read_text())
    assert plans["plan_count"] == 6
    best = plans["plans"][0]
    assert best["expression"] == "((((P1 ∩ ~P4) ∩ ~P3) ∩ ~P5) ∪ P2)"
    assert json.loads((job / "verify.json").read_text())["all_ok"]
    states = sorted(p.name for p in (job / "states").iterdir())
    assert "plan1_S5.hpvx" in states
    final = solid.load(job / "states" / "plan1_S5.hpvx")
    target = solid.load(job / json.loads((job / "voxelize.json").read_text())["target"])
    assert final == target


def test_reports_are_byte_identical_without_timestamps(tmp_path):
    cfg = write_lattice_job(tmp_path)
    for j in ("a", "b"):
        assert main(["all", "--config", str(cfg), "--job-dir", str(tmp_path / j), "--no-timestamp"]) == 0
    for name in ("report.json", "report.txt", "plans.json", "check.json", "atoms.csv", "verify.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name


def test_cache_reuse_and_refine(tmp_path, caplog):
    cfg = write_lattice_job(tmp_path)
    job = tmp_path / "job"
    assert main(["all", "--config", str(cfg), "--job-dir", str(job), "--no-timestamp"]) == 0
    first = sorted(p.name for p in (job / "primitives").iterdir())
    with caplog.at_level("INFO", logger="hmplan"):
        assert main(["all", "--config", str(cfg), "--job-dir", str(job), "--no-timestamp", "-v"]) == 0
    assert "voxelize: cached" in caplog.text and "primitive P5: cached" in caplog.text
    assert sorted(p.name for p in (job / "primitives").iterdir()) == first
    # A changed rate keeps the geometry cache but changes the plan costs.
    data = json.loads(cfg.read_text())
    data["capabilities"][2]["rate"] = 5.0
    cfg.write_text(json.dumps(data))
    caplog.clear()
    with caplog.at_level("INFO", logger="hmplan"):
        assert main(["all", "--config", str(cfg), "--job-dir", str(job), "--no-timestamp", "-v"]) == 0
    assert "primitive P3: cached" in caplog.text
    assert sorted(p.name for p in (job / "primitives").iterdir()) == first


def test_appending_a_capability_refines_the_cached_decomposition(tmp_path, caplog):
    cfg = write_lattice_job(tmp_path)
    data = json.loads(cfg.read_text())
    last = data["capabilities"].pop()
    cfg.write_text(json.dumps(data))
    job = tmp_path / "job"
    assert _run(cfg, job, "voxelize", "primitive", "decompose") == [0, 0, 0]
    data["capabilities"].append(last)
    cfg.write_text(json.dumps(data))
    with caplog.at_level("INFO", logger="hmplan"):
        assert main(["all", "--config", str(cfg), "--job-dir", str(job), "--no-timestamp", "-v"]) == 0
    assert "refin" in caplog.text
    fresh = tmp_path / "fresh"
    assert main(["all", "--config", str(cfg), "--job-dir", str(fresh), "--no-timestamp"]) == 0
    assert (job / "atoms.csv").read_bytes() == (fresh / "atoms.csv").read_bytes()
    assert (job / "report.json").read_bytes() == (fresh / "report.json").read_bytes()


def test_module_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "hmplan", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for s in STAGES:
        assert s in out.stdout


def test_shipped_demo_config(tmp_path):
    from pathlib import Path

    cfg = Path(__file__).resolve().parents[1] / "configs" / "slot.json"
    assert main(["all", "--config", str(cfg), "--job-dir", str(tmp_path), "--no-timestamp"]) == 0
    plans = json.loads((tmp_path / "plans.json").read_text())["plans"]
    assert plans[0]["expression"] == "(P1 ∩ ~P2)" and plans[0]["total_cost"] == pytest.approx(4640.0)
