import hashlib
import json
import os

import numpy as np
import pytest

from matsense.cli import main
from matsense.exceptions import ConfigError, SchemaError
from matsense.experiments import (cmd_run, cmd_verify, config_hash,
                                  load_config, validate_config)
from matsense.svgplot import plot_csvs

TINY_CONFIG = {
    "ground_truth": {"d": 8, "r_star": 2, "mode": "orthogonalized",
                     "seed": 3, "sigmas": [2.0, 1.0]},
    "ensemble": {"kind": "gaussian", "m": 80, "seed": 4},
    "rip": {"n_samples": 40, "seed": 5},
    "references": {"s_values": [1, 2], "restarts": 2, "max_iters": 20000,
                   "seed": 6},
    "runs": {"alpha": [0.001], "mu": [0.01], "r_hat": [4], "seeds": [1, 2],
             "T_max": 300, "record_stride": 10},
    "output": {"directory": "out", "plots": False},
}


def _tiny(tmp_path, **overrides):
    doc = json.loads(json.dumps(TINY_CONFIG))
    for key, value in overrides.items():
        doc[key] = value
    doc["output"]["directory"] = str(tmp_path / "out")
    return doc


def _digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def test_validation_collects_all_problems():
    bad = {
        "ground_truth": {"d": 0, "r_star": 3, "mode": "nope", "seed": 1},
        "ensemble": {"kind": "gaussian", "m": 0, "seed": 1},
        "runs": {"alpha": [], "mu": [0.0], "r_hat": [4], "seeds": [],
                 "T_max": 0},
    }
    with pytest.raises(ConfigError) as err:
        validate_config(bad)
    text = str(err.value)
    for needle in ("ground_truth.d", "ground_truth.mode", "ensemble.m",
                   "runs.alpha", "runs.mu", "runs.seeds", "runs.T_max"):
        assert needle in text


def test_validation_empty_grid_writes_nothing(tmp_path):
    doc = _tiny(tmp_path)
    doc["runs"]["alpha"] = []
    with pytest.raises(ConfigError):
        validate_config(doc)
    assert not (tmp_path / "out").exists()


def test_profiles_load():
    for profile in ("desk", "paper"):
        cfg = load_config(profile=profile)
        assert cfg.runs.T_max >= 4000
    with pytest.raises(ConfigError):
        load_config()


def test_cmd_run_outputs_and_determinism(tmp_path):
    cfg = validate_config(_tiny(tmp_path))
    first = cmd_run(cfg, threads=2)
    digests = {p.name: _digest(p) for p in first.csv_paths}
    digests["summary.json"] = _digest(first.summary_path)

    second = cmd_run(cfg, threads=1)
    assert {p.name: _digest(p) for p in second.csv_paths} == \
        {name: d for name, d in digests.items() if name != "summary.json"}
    assert _digest(second.summary_path) == digests["summary.json"]

    summary = json.loads(first.summary_path.read_text())
    assert summary["config_hash"] == config_hash(cfg.raw)
    assert len(summary["per_run"]) == 2
    for entry, csv_path in zip(summary["per_run"], first.csv_paths):
        assert entry["status"] == "ok"
        assert entry["csv"] == csv_path.name
        # every hitting time points at a row present in the CSV
        rows = csv_path.read_text().splitlines()[1:]
        ts = {int(row.split(",")[0]) for row in rows}
        for hit in entry["T_hit"]:
            assert hit in ts
        assert len(entry["min_rel_err"]) == 2
        assert entry["final_loss"] >= 0.0


def test_cmd_run_divergence_exit_path(tmp_path):
    doc = _tiny(tmp_path)
    doc["runs"]["mu"] = [50.0]
    doc["runs"]["alpha"] = [1.0]
    cfg = validate_config(doc)
    result = cmd_run(cfg)
    assert result.any_diverged
    summary = json.loads(result.summary_path.read_text())
    assert all(e["status"] == "diverged" for e in summary["per_run"])


def test_output_dir_override_env(tmp_path, monkeypatch):
    doc = _tiny(tmp_path)
    target = tmp_path / "elsewhere"
    monkeypatch.setenv("MATSENSE_OUTPUT_DIR", str(target))
    cfg = validate_config(doc)
    result = cmd_run(cfg)
    assert result.summary_path.parent == target


def test_plot_kinds_and_determinism(tmp_path):
    cfg = validate_config(_tiny(tmp_path))
    result = cmd_run(cfg)
    csv_path = result.csv_paths[0]
    before = csv_path.read_bytes()
    for kind in ("rel_err", "singular_values", "distances"):
        out = tmp_path / f"{kind}.svg"
        plot_csvs([csv_path], out, kind)
        text = out.read_text()
        assert text.startswith("<svg")
        assert "polyline" in text
        assert "step t" in text
        plot_csvs([csv_path], tmp_path / "again.svg", kind)
        assert (tmp_path / "again.svg").read_bytes() == out.read_bytes()
    assert csv_path.read_bytes() == before  # inputs never mutated


def test_plot_under_parameterized_series_count(tmp_path):
    # width-2 run: singular values beyond the factor width are exact zeros
    # and do not appear on the log-scale plot
    cfg = validate_config(_tiny(tmp_path))
    result = cmd_run(cfg)
    out = tmp_path / "sv.svg"
    plot_csvs([result.csv_paths[0]], out, "singular_values")
    text = out.read_text()
    assert text.count("<polyline") == 2  # r_hat=4 capped by sv>0: s=1,2 planted
    assert ">sv1<" in text and ">sv2<" in text


def test_plot_empty_csv_axes_only(tmp_path):
    from matsense.dynamics import csv_header
    path = tmp_path / "empty.csv"
    path.write_text(",".join(csv_header(2)) + "\n")
    out = tmp_path / "empty.svg"
    plot_csvs([path], out, "rel_err")
    text = out.read_text()
    assert "<polyline" not in text
    assert "relative error" in text


def test_plot_schema_mismatch_names_column(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("t,loss\n0,1.0\n")
    with pytest.raises(SchemaError) as err:
        plot_csvs([path], tmp_path / "bad.svg", "rel_err")
    assert "rel_err_1" in str(err.value)


def test_cmd_verify_tiny_full_observation(tmp_path):
    doc = _tiny(tmp_path)
    doc["ensemble"] = {"kind": "full_observation"}
    doc["verify"] = {"rsi_samples": 150, "pairs": 100, "oracle_pairs": 10,
                     "oracle_grid": 200000, "rank1_probes": 40,
                     "init_trials": 400, "seed": 1}
    cfg = validate_config(doc)
    code, outcomes = cmd_verify(cfg, suite="all", threads=2)
    failed = [o for o in outcomes if o.asserted and not o.passed]
    assert code == 0, [f"{o.name}: {o.detail}" for o in failed]
    names = {o.name for o in outcomes}
    assert "full_observation_identity" in names
    assert {"adjointness", "rsi_sensing", "gd_error_bound"} <= names


def test_cmd_verify_flagged_section(tmp_path):
    doc = _tiny(tmp_path)
    doc["ensemble"] = {"kind": "full_observation"}
    doc["verify"] = {"rsi_samples": 100, "pairs": 50, "oracle_pairs": 5,
                     "oracle_grid": 100000, "rank1_probes": 20,
                     "init_trials": 200, "seed": 1,
                     "rsi_radius_scale": 10.0}
    cfg = validate_config(doc)
    code, outcomes = cmd_verify(cfg, suite="landscape")
    from matsense.experiments import format_verify_report
    report = format_verify_report(outcomes)
    assert "flagged, not asserted" in report
    flagged = [o for o in outcomes if not o.asserted]
    assert {o.name for o in flagged} == {"rsi_sensing", "rsi_factorization"}
    assert code == 0  # flagged checks never affect the exit code


def test_exit_code_mapping(tmp_path):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(_tiny(tmp_path)))

    assert main(["run", str(cfg_path), "--output-dir",
                 str(tmp_path / "cli_out")]) == 0
    assert (tmp_path / "cli_out" / "summary.json").exists()

    bad_path = tmp_path / "bad.json"
    bad_path.write_text(json.dumps({"ground_truth": {}}))
    assert main(["run", str(bad_path)]) == 1
    assert main(["run", str(tmp_path / "missing.json")]) == 1

    diverging = _tiny(tmp_path)
    diverging["runs"]["mu"] = [50.0]
    diverging["runs"]["alpha"] = [1.0]
    div_path = tmp_path / "div.json"
    div_path.write_text(json.dumps(diverging))
    assert main(["--output-dir", str(tmp_path / "div_out"), "run",
                 str(div_path)]) == 3


def test_cli_plot_and_best_rank(tmp_path, capsys):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(_tiny(tmp_path)))
    assert main(["--output-dir", str(tmp_path / "o1"), "run",
                 str(cfg_path)]) == 0
    csvs = sorted(str(p) for p in (tmp_path / "o1").glob("run_*.csv"))
    out_svg = tmp_path / "plot.svg"
    assert main(["plot", "--kind", "rel_err", "--out", str(out_svg)]
                + csvs) == 0
    assert out_svg.exists()

    assert main(["--output-dir", str(tmp_path / "o2"), "best-rank",
                 str(cfg_path), "--s", "1"]) == 0
    printed = capsys.readouterr().out.splitlines()[-1]
    doc = json.loads(printed)
    assert doc["s"] == 1
    assert (tmp_path / "o2" / "best_rank_1.json").exists()


def test_cli_verify_exit_two_on_failure(tmp_path, monkeypatch):
    # force an assertion-class failure to exercise the exit-code contract
    import matsense.experiments as exp

    def failing_checks(ctx):
        return [("sensing", "forced_failure", True,
                 lambda: (False, "synthetic"))]

    monkeypatch.setattr(exp, "_checks_sensing", failing_checks)
    doc = _tiny(tmp_path)
    doc["ensemble"] = {"kind": "full_observation"}
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(doc))
    assert main(["verify", str(cfg_path), "--suite", "sensing"]) == 2
