import json

import numpy as np
import pytest
from click.testing import CliRunner

from prtradeoff import oracle as oracle_mod
from prtradeoff.cli import main, resolve_seeds
from prtradeoff.oracle import BoundConstants
from prtradeoff.rng import DEFAULT_MASTER_SEED, make_rng


@pytest.fixture
def runner():
    return CliRunner()


def _ok(result):
    assert result.exit_code == 0, result.output
    return result


def _read(path):
    with open(path) as fh:
        return fh.read()


def _write_model(tmp_path, x, y, pmf, name="model.json"):
    p = tmp_path / name
    p.write_text(json.dumps({"x_vals": x, "y_vals": y, "pmf": pmf}))
    return str(p)


def test_resolve_seeds_contract():
    assert resolve_seeds(3, "sweep/0") == resolve_seeds(3, "sweep/0")
    rng = make_rng(0)
    paths = {f"cell/{a}/{b}" for a, b in rng.integers(0, 2**40, (1_000_000, 2))}
    seeds = {resolve_seeds(DEFAULT_MASTER_SEED, p) for p in paths}
    assert len(seeds) == len(paths)


def test_sweep_writes_csv_svg_and_sidecars(runner, tmp_path):
    args = ["sweep", "--family", "zigzag", "--deltas", "1,0.25", "--seeds", "0", "--n-metric", "200",
            "--n-probe", "200", "--no-timestamp", "--out", str(tmp_path)]
    _ok(runner.invoke(main, args))
    csv_text = _read(tmp_path / "sweep_zigzag.csv")
    assert csv_text.splitlines()[0] == "family,control,seed,jemd,kbar,jemd_sd,kbar_sd,status"
    assert "\r" not in csv_text
    svg = _read(tmp_path / "sweep_zigzag.svg")
    side = json.loads(_read(tmp_path / "sweep_zigzag.csv.config.json"))
    assert side["command"] == "sweep" and side["config"]["deltas"] == "1,0.25"
    assert side["config"]["seed"] == DEFAULT_MASTER_SEED
    # a rerun reproduces every artifact byte for byte
    _ok(runner.invoke(main, args))
    assert _read(tmp_path / "sweep_zigzag.csv") == csv_text
    assert _read(tmp_path / "sweep_zigzag.svg") == svg


def test_config_file_and_flag_precedence(runner, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"estimator": "dmax", "n": 50, "sigma_z2": 0.5}))
    _ok(runner.invoke(main, ["kbar", "--config", str(cfg), "--n", "70", "--out", str(tmp_path)]))
    doc = json.loads(_read(tmp_path / "kbar.json"))
    side = json.loads(_read(tmp_path / "kbar.json.config.json"))["config"]
    assert doc["n"] == 70 and side["sigma_z2"] == 0.5 and side["estimator"] == "dmax"
    assert abs(doc["kbar"] - 1 / np.sqrt(2)) < 1e-12


def test_bad_config_exits_2(runner, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"no_such_key": 1}))
    assert runner.invoke(main, ["kbar", "--config", str(cfg), "--out", str(tmp_path)]).exit_code == 2
    assert runner.invoke(main, ["kbar", "--estimator", "nope"]).exit_code == 2
    assert runner.invoke(main, ["frobnicate"]).exit_code == 2
    r = runner.invoke(main, ["kbar", "--estimator", "zigzag", "--delta", "0", "--out", str(tmp_path)])
    assert r.exit_code == 2


def test_kbar_methods(runner, tmp_path):
    _ok(runner.invoke(main, ["kbar", "--estimator", "mmse", "--method", "ifgsm", "--n", "100",
                             "--out", str(tmp_path)]))
    doc = json.loads(_read(tmp_path / "kbar.json"))
    assert set(doc) == {"kbar", "n", "alpha", "T", "method"}
    assert abs(doc["kbar"] - 0.5) < 1e-12 and doc["method"] == "ifgsm"


def _points(path, pts):
    np.savetxt(path, pts, delimiter=",", header="x,y", comments="")
    return str(path)


def test_emd_identical_and_reproducible(runner, tmp_path):
    pts = make_rng(0).standard_normal((50, 2))
    a = _points(tmp_path / "a.csv", pts)
    b = _points(tmp_path / "b.csv", pts[::-1])
    _ok(runner.invoke(main, ["emd", a, b, "--ground", "l1", "--p", "1", "--no-timing", "--out", str(tmp_path)]))
    doc = json.loads(_read(tmp_path / "emd.json"))
    assert doc["cost"] == 0.0 and doc["runtime_ms"] is None and doc["exact"]
    first = _read(tmp_path / "emd.json")
    _ok(runner.invoke(main, ["emd", a, b, "--no-timing", "--out", str(tmp_path)]))
    assert _read(tmp_path / "emd.json") == first
    _ok(runner.invoke(main, ["emd", a, b, "--out", str(tmp_path)]))
    assert json.loads(_read(tmp_path / "emd.json"))["runtime_ms"] >= 0


def test_emd_p2_and_missing_file(runner, tmp_path):
    a = _points(tmp_path / "a.csv", np.zeros((3, 2)))
    b = _points(tmp_path / "b.csv", np.tile([3.0, 4.0], (3, 1)))
    _ok(runner.invoke(main, ["emd", a, b, "--ground", "l2", "--p", "2", "--no-timing", "--out", str(tmp_path)]))
    doc = json.loads(_read(tmp_path / "emd.json"))
    assert abs(doc["cost"] - 25.0) < 1e-12 and abs(doc["wp"] - 5.0) < 1e-12
    assert runner.invoke(main, ["emd", a, str(tmp_path / "nope.csv")]).exit_code == 2


def test_fps_csv(runner, tmp_path):
    _ok(runner.invoke(main, ["fps", "--estimator", "zigzag", "--delta", "0.05", "--S", "4",
                             "--out", str(tmp_path)]))
    lines = _read(tmp_path / "fps.csv").splitlines()
    assert lines[0] == "sample_index,y_adv,output" and len(lines) == 5
    y_adv = np.array([float(r.split(",")[1]) for r in lines[1:]])
    assert y_adv[0] == 0.37 and np.all(np.abs(y_adv - 0.37) <= 0.1 + 1e-12)


def test_diag_json(runner, tmp_path):
    _ok(runner.invoke(main, ["diag", "--estimator", "dmax", "--n", "500", "--n-mc", "2000", "--ys", "0,2",
                             "--out", str(tmp_path)]))
    doc = json.loads(_read(tmp_path / "diag.json"))
    assert abs(doc["residual"]["pearson_corr"] - 1.0) < 1e-9
    assert abs(doc["conditional_mse"][1]["Dmax"] - (3.5 - 2 * np.sqrt(2))) < 1e-12


def test_train_writes_history_and_checkpoint(runner, tmp_path):
    _ok(runner.invoke(main, ["train", "--steps", "30", "--lambda", "0.1", "--out", str(tmp_path)]))
    hist = _read(tmp_path / "history.csv").splitlines()
    assert hist[0] == "step,d_loss,g_loss,r1,lr,robustness_loss" and len(hist) == 31
    ck = tmp_path / "checkpoint.json"
    _ok(runner.invoke(main, ["kbar", "--estimator", "checkpoint", "--checkpoint", str(ck), "--n", "50",
                             "--out", str(tmp_path)]))
    assert runner.invoke(main, ["kbar", "--estimator", "checkpoint", "--out", str(tmp_path)]).exit_code == 2


def test_oracle_uniform_model(runner, tmp_path):
    m = _write_model(tmp_path, [0, 1], [0, 1], [[0.25, 0.25], [0.25, 0.25]])
    _ok(runner.invoke(main, ["oracle", "--model", m, "--out", str(tmp_path)]))
    summary = json.loads(_read(tmp_path / "oracle_summary.json"))
    assert summary["all_satisfied"] is True
    assert {"beta", "k", "p_sy", "t", "gamma", "min_wp"} <= set(summary)
    rows = _read(tmp_path / "oracle_report.csv").splitlines()
    assert rows[0] == "map_id,wp,k,g,satisfied" and len(rows) == 5


def test_oracle_failures(runner, tmp_path, monkeypatch):
    inv = _write_model(tmp_path, [0, 1], [0, 1], [[0.5, 0.0], [0.0, 0.5]], "inv.json")
    assert runner.invoke(main, ["oracle", "--model", inv, "--out", str(tmp_path)]).exit_code == 2
    m = _write_model(tmp_path, [0, 1], [0, 0.05], [[0.25, 0.25], [0.25, 0.25]])
    strong = BoundConstants(1e6, 0.5, 1.0, (0, 1))
    monkeypatch.setattr(oracle_mod, "certify_constants", lambda model, p=1: strong)
    r = runner.invoke(main, ["oracle", "--model", m, "--out", str(tmp_path)])
    assert r.exit_code == 1
    assert json.loads(_read(tmp_path / "oracle_summary.json"))["all_satisfied"] is False


def test_output_dir_from_environment(runner, tmp_path, monkeypatch):
    target = tmp_path / "envout"
    monkeypatch.setenv("PRTRADEOFF_OUT", str(target))
    _ok(runner.invoke(main, ["kbar", "--estimator", "mmse", "--n", "10"]))
    assert (target / "kbar.json").exists() and (target / "kbar.json.config.json").exists()
    assert not any(p.name.startswith(".tmp-") for p in target.iterdir())
