import hashlib
import json
import subprocess
import sys
from pathlib import Path

import pytest

from occlusim.cli import build_parser, main
from occlusim.mesh import box, uv_sphere, write_obj


def tree_digest(root: Path) -> dict:
    return {str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file()}


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture
def objs(tmp_path):
    a, b = tmp_path / "a.obj", tmp_path / "b.obj"
    write_obj(box((-0.5, -0.5, -0.5), (0.5, 0.5, 0.5)), a)
    write_obj(uv_sphere(0.5, 16, 32), b)
    return a, b


def test_metric_prints_one_float(capsys, objs):
    code, out, _ = run(capsys, "metric", "cd", *objs, "--points", 500, "--sampler", "fps")
    assert code == 0
    assert len(out.split()) == 1 and float(out) > 0
    code, out, _ = run(capsys, "metric", "cd", objs[0], objs[0], "--points", 300)
    assert float(out) == 0.0


@pytest.mark.parametrize("name", ["nc", "f1", "voxiou"])
def test_other_shape_metrics(capsys, objs, name):
    code, out, _ = run(capsys, "metric", name, *objs, "--points", 300, "--voxel-resolution", 32)
    assert code == 0 and 0 <= float(out) <= 100


def test_view_metrics_on_pngs(capsys, objs, tmp_path):
    for kind in ("mask", "normal"):
        for i, o in enumerate(objs):
            assert run(capsys, "render", o, "--out", tmp_path / f"{kind}{i}.png", "--kind", kind,
                       "--resolution", 64)[0] == 0
    assert float(run(capsys, "metric", "miou", tmp_path / "mask0.png", tmp_path / "mask0.png")[1]) == 1.0
    assert float(run(capsys, "metric", "vlfd", tmp_path / "mask0.png", tmp_path / "mask1.png")[1]) > 0
    assert float(run(capsys, "metric", "nl2", tmp_path / "normal0.png", tmp_path / "normal0.png")[1]) == 0.0
    assert float(run(capsys, "metric", "niou", tmp_path / "normal0.png", tmp_path / "normal0.png")[1]) == 1.0


def test_errors_are_single_line(capsys, tmp_path):
    code, out, err = run(capsys, "metric", "cd", tmp_path / "nope.obj", tmp_path / "nope.obj")
    assert code == 1 and err.count("\n") == 1 and err.startswith("occlusim: error:")
    with pytest.raises(SystemExit) as e:
        main(["metric", "cd", "a", "b", "--bogus"])
    assert e.value.code == 2
    err = capsys.readouterr().err
    assert err.count("\n") == 1 and "--bogus" in err


def test_help_lists_every_flag(capsys):
    parser = build_parser()
    sub = next(a for a in parser._actions if a.dest == "command")
    for name, p in sub.choices.items():
        text = p.format_help()
        for act in p._actions:
            for opt in act.option_strings:
                assert opt in text, (name, opt)


def test_config_precedence(capsys, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"per_category": 2, "seed": 4}))
    assert run(capsys, "shapes", "--out", tmp_path / "s", "--config", cfg, "--per-category", 1)[0] == 0
    saved = json.loads((tmp_path / "s" / "config.json").read_text())
    assert saved["per_category"] == 1 and saved["seed"] == 4
    assert len(json.loads((tmp_path / "s" / "manifest.json").read_text())) == 4


def test_threads_env_fallback(capsys, tmp_path, monkeypatch):
    monkeypatch.setenv("OCCLUSIM_THREADS", "zero")
    code, _, err = run(capsys, "shapes", "--out", tmp_path / "s", "--per-category", 1)
    assert code == 1 and "OCCLUSIM_THREADS" in err


def _pipeline(capsys, monkeypatch, root: Path, threads: int):
    # relative paths, so the persisted configs of both runs are comparable
    root.mkdir()
    monkeypatch.chdir(root)
    root = Path(".")
    assert run(capsys, "shapes", "--out", root / "shapes", "--per-category", 2, "--seed", 1)[0] == 0
    assert run(capsys, "gen", "--shapes", root / "shapes", "--scenes", 2, "--seed", 7, "--out", root / "ds",
               "--resolution", 48, "--views", 2, "--threads", threads)[0] == 0
    code, out, _ = run(capsys, "eval", "--dataset", root / "ds", "--oracle", "--metrics", "cd,miou,vlfd",
                       "--points", 300, "--threads", threads)
    assert code == 0
    return json.loads(out)


def test_gen_eval_deterministic(capsys, monkeypatch, tmp_path):
    agg = _pipeline(capsys, monkeypatch, tmp_path / "one", 1)
    _pipeline(capsys, monkeypatch, tmp_path / "two", 2)
    assert agg["Acc_1"] == 100.0 and agg["CD_1"] == 0.0 and agg["MIoU_1"] == 1.0 and agg["vLFD_1"] == 0.0
    assert tree_digest(tmp_path / "one") == tree_digest(tmp_path / "two")
    ds = tmp_path / "one" / "ds"
    assert run(capsys, "curve", "--report", ds / "reports" / "oracle.csv", "--out", tmp_path / "c.csv")[0] == 0
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert len(lines) == 11
    code, out, _ = run(capsys, "splits", "--dataset", ds)
    assert code == 0 and "unseen_shapes" in json.loads(out)
    code, _, _ = run(capsys, "eval", "--dataset", ds, "--run", ds / "reports" / "oracle_run.jsonl",
                     "--metrics", "cd", "--points", 300, "--out", tmp_path / "rep")
    assert code == 0 and (tmp_path / "rep" / "oracle_run.csv").is_file()


def test_lfd_and_stability(capsys, tmp_path):
    run(capsys, "shapes", "--out", tmp_path / "s", "--per-category", 1)
    assert run(capsys, "lfd", "--shapes", tmp_path / "s", "--out", tmp_path / "lfd", "--dodecahedra", 1,
               "--resolution", 32)[0] == 0
    assert len(list((tmp_path / "lfd").glob("*.lfd"))) == 4
    cfgs = tmp_path / "cfg.json"
    cfgs.write_text(json.dumps({"base": {"metric": "cd", "n_points": 400, "sampler": "fps"},
                                "configs": [{"metric": "cd", "n_points": n, "sampler": "fps"} for n in (100, 200)]}))
    code, out, _ = run(capsys, "stability", "--shapes", tmp_path / "s", "--configs", cfgs)
    assert code == 0 and len(json.loads(out)["stability"]) == 2


def test_console_script_entry(tmp_path, objs):
    res = subprocess.run([sys.executable, "-m", "occlusim.cli", "metric", "lfd", *map(str, objs)],
                         capture_output=True, text=True)
    assert res.returncode == 0 and float(res.stdout) > 0
