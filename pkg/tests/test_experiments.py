import json
import subprocess
import sys

import numpy as np
import pytest

from loss_lab.cli import main
from loss_lab.experiments import (
    COLUMNS,
    ConfigError,
    load_config,
    read_csv,
    rows_to_csv,
    run_experiment,
    summarize,
    trial_seed,
)
from loss_lab.mdp import random_mdp

BASE = {
    "experiment": "csc-rates",
    "instance": {"family": "small_cost"},
    "losses": ["sq", "bce"],
    "sweep": [64, 128, 256],
    "trials": 3,
    "seed": 5,
}


def _cfg(**kw):
    return load_config({**BASE, **kw})


def test_config_errors_carry_field_paths():
    with pytest.raises(ConfigError) as e:
        _cfg(sweep=[128, 64])
    assert e.value.errors[0]["loc"] == "sweep"
    with pytest.raises(ConfigError) as e:
        _cfg(trials=0)
    assert e.value.errors[0]["loc"] == "trials"
    with pytest.raises(ConfigError) as e:
        load_config({**BASE, "assertions": [{"kind": "slope_sideways"}]})
    assert e.value.errors[0]["loc"].startswith("assertions.0.kind")
    with pytest.raises(ConfigError):
        _cfg(instance={"family": "bce_counterexample"})
    with pytest.raises(ConfigError):
        _cfg(losses=["huber"])
    with pytest.raises(ConfigError) as e:
        load_config("{not json")
    assert e.value.errors[0]["loc"] == "<root>"


def test_overrides():
    cfg = load_config(BASE, seed=9, trials=None)
    assert cfg.seed == 9 and cfg.trials == 3


def test_trial_seeds_are_distinct_and_stable():
    seeds = {trial_seed(1, "online", i, t) for i in range(5) for t in range(50)}
    assert len(seeds) == 250
    assert trial_seed(1, "online", 2, 3) == trial_seed(1, "online", 2, 3)
    assert trial_seed(1, "online", 2, 3) != trial_seed(1, "offline", 2, 3)


def test_csv_is_byte_identical_across_runs_and_workers(tmp_path):
    cfg = _cfg()
    run_experiment(cfg, tmp_path / "a")
    run_experiment(cfg, tmp_path / "b")
    run_experiment(cfg.model_copy(update={"threads": 2}), tmp_path / "c")
    a = (tmp_path / "a" / "csc-rates.csv").read_bytes()
    assert a == (tmp_path / "b" / "csc-rates.csv").read_bytes() == (tmp_path / "c" / "csc-rates.csv").read_bytes()
    assert b"\r" not in a
    lines = a.decode().splitlines()
    assert lines[0].split(",") == list(COLUMNS)
    assert len(lines) == 1 + 3 * 3 * 2


def test_summary_recomputes_from_csv(tmp_path):
    cfg = _cfg(assertions=[{"kind": "slope_at_most", "loss": "bce", "hi": 0.0}])
    s = run_experiment(cfg, tmp_path, emit_summary=True)
    rows = read_csv((tmp_path / "csc-rates.csv").read_text())
    again = summarize(cfg, rows)
    assert again["rate_fits"] == s["rate_fits"] and again["passed"] == s["passed"]
    doc = json.loads((tmp_path / "csc-rates.summary.json").read_text())
    assert doc["config"]["seed"] == 5 and doc["rate_fits"]["sq"]["slope"] == pytest.approx(s["rate_fits"]["sq"]["slope"])


def test_csv_round_trip_formats():
    row = dict.fromkeys(COLUMNS)
    row.update(experiment="x", loss="sq", sweep_param="n", sweep_value=3, trial=0, seed=7, suboptimality=0.1, coverage=float("inf"))
    text = rows_to_csv([row])
    assert text.splitlines()[1] == "x,sq,n,3,0,7,0.1,,,,inf,"
    back = read_csv(text)[0]
    assert back["suboptimality"] == 0.1 and back["runtime_ms"] is None and np.isinf(back["coverage"])


def test_failing_trial_keeps_earlier_rows(tmp_path):
    cfg = load_config({
        "experiment": "csc-lower-bounds", "instance": {"family": "bce_counterexample"},
        "losses": ["bce"], "sweep": [101, 102], "trials": 2, "seed": 0,
    })
    s = run_experiment(cfg, tmp_path)
    assert not s["passed"] and "odd" in s["error"]["error"]
    assert s["error"]["sweep_value"] == 102
    rows = read_csv((tmp_path / "csc-lower-bounds.csv").read_text())
    assert [r["sweep_value"] for r in rows] == [101.0, 101.0]


def test_other_kinds_run(tmp_path):
    for doc in (
        {"experiment": "online", "instance": {"family": "random"}, "losses": ["sq", "mle"], "sweep_param": "K", "sweep": [4, 8], "trials": 1},
        {"experiment": "offline", "instance": {"family": "random"}, "losses": ["bce"], "sweep": [20], "trials": 1},
        {"experiment": "hybrid", "instance": {"family": "zero_variance"}, "losses": ["mle"], "sweep_param": "K", "sweep": [16], "trials": 1},
        {"experiment": "eluder", "instance": {"family": "low_rank"}, "losses": ["sq"], "sweep_param": "d", "sweep": [1, 2], "trials": 1},
        {"experiment": "verify-lemmas", "instance": {"family": "suites", "params": {"pairs": 200, "draws": 20}}, "losses": [], "sweep": [1], "trials": 1,
         "assertions": [{"kind": "zero_violations"}]},
    ):
        s = run_experiment(load_config(doc), tmp_path / doc["experiment"])
        assert s["error"] is None, s["error"]
        rows = read_csv((tmp_path / doc["experiment"] / f"{doc['experiment']}.csv").read_text())
        assert rows and all(r["suboptimality"] is not None for r in rows)
    off = read_csv((tmp_path / "offline" / "offline.csv").read_text())
    assert all(r["coverage"] >= 1.0 for r in off)


def test_offline_from_mdp_file(tmp_path):
    path = tmp_path / "mdp.json"
    path.write_text(random_mdp(2, 2, 2, 8, 0).to_json())
    doc = {"experiment": "offline", "instance": {"family": "mdp_file", "path": str(path)}, "losses": ["sq"], "sweep": [30], "trials": 2}
    s = run_experiment(load_config(doc), tmp_path / "out")
    assert s["error"] is None
    with pytest.raises(ConfigError):
        load_config({**doc, "instance": {"family": "mdp_file", "path": str(tmp_path / "missing.json")}})


def _write(tmp_path, doc):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(doc))
    return str(p)


def test_cli_exit_codes(tmp_path, capsys):
    good = _write(tmp_path, {**BASE, "assertions": [{"kind": "slope_at_most", "loss": "sq", "hi": 0.0}]})
    assert main(["csc-rates", "--config", good, "--out", str(tmp_path / "o1")]) == 0
    assert "PASS slope_at_most" in capsys.readouterr().out
    failing = _write(tmp_path, {**BASE, "assertions": [{"kind": "slope_at_most", "loss": "sq", "hi": -5.0}]})
    assert main(["csc-rates", "--config", failing, "--out", str(tmp_path / "o2")]) == 1
    bad = _write(tmp_path, {**BASE, "sweep": []})
    assert main(["csc-rates", "--config", bad]) == 2
    err = json.loads(capsys.readouterr().err)
    assert err["details"][0]["loc"] == "sweep"
    assert main(["online", "--config", good]) == 2
    assert main(["csc-rates", "--config", str(tmp_path / "nope.json")]) == 2


def test_cli_entry_point(tmp_path):
    cfg = _write(tmp_path, {**BASE, "sweep": [64, 128, 256], "trials": 1})
    out = subprocess.run(
        [sys.executable, "-m", "loss_lab.cli", "csc-rates", "--config", cfg, "--out", str(tmp_path / "o"), "--seed", "3", "--emit-summary"],
        capture_output=True, text=True, check=False,
    )
    assert out.returncode == 0, out.stderr
    assert (tmp_path / "o" / "csc-rates.summary.json").exists()
