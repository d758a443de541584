import json
import os
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from causal_testbed.cli import main, parse_methods, parse_settings
from causal_testbed.metrics import NONORACLE_METRICS, ORACLE_METRICS


def run_cli(*args):
    return main(list(args))


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run") / "grid"
    code = run_cli("generate", "--settings", "2,3", "--reps", "2",
                   "--seed", "42", "--out", str(out), "--n", "300")
    assert code == 0
    return out


def _tree_bytes(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file()}


# -- settings / methods parsing ------------------------------------------------


def test_parse_settings_ranges():
    assert parse_settings("1,3,9-12") == (1, 3, 9, 10, 11, 12)
    assert len(parse_settings("all")) == 77
    with pytest.raises(ValueError, match="1..77"):
        parse_settings("78")


def test_parse_methods_validation():
    assert "oracle_catt" in parse_methods("all")
    with pytest.raises(ValueError, match="registered methods"):
        parse_methods("ols_adjust,bogus")


# -- generate --------------------------------------------------------------------


def test_generate_writes_realization_files(small_run):
    for key in ("2", "3"):
        for rep in range(2):
            rep_dir = small_run / "settings" / f"s{key}" / f"rep_{rep:03d}"
            for name in ("x.csv", "zy.csv", "truth.csv", "spec.json"):
                assert (rep_dir / name).exists(), (key, rep, name)
    manifest = json.loads((small_run / "manifest.json").read_text())
    assert manifest["schema_version"] == 1
    assert len(manifest["cells"]) == 4
    for cell in manifest["cells"]:
        assert set(cell) == {"setting", "replication", "seed", "satt", "path"}


def test_generate_rerun_is_noop(small_run):
    before = _tree_bytes(small_run)
    code = run_cli("generate", "--settings", "2,3", "--reps", "2",
                   "--seed", "42", "--out", str(small_run), "--n", "300")
    assert code == 0
    after = _tree_bytes(small_run)
    assert before == after


def test_generate_rejects_out_of_range_setting(tmp_path, capsys):
    code = run_cli("generate", "--settings", "78", "--out", str(tmp_path / "x"))
    assert code == 1
    assert "1..77" in capsys.readouterr().err


def test_consistency_identity_on_disk(small_run):
    from causal_testbed.pipeline import read_matrix
    rep_dir = small_run / "settings" / "s2" / "rep_000"
    _, zy = read_matrix(rep_dir / "zy.csv")
    _, truth = read_matrix(rep_dir / "truth.csv")
    z, y = zy[:, 0], zy[:, 1]
    y0, y1 = truth[:, 3], truth[:, 4]
    assert np.array_equal(y, np.where(z == 1.0, y1, y0))


def test_spec_json_round_trips(small_run):
    from causal_testbed.dgp import DgpSpec
    text = (small_run / "settings" / "s2" / "rep_000" / "spec.json").read_text()
    spec = DgpSpec.from_json(text)
    assert spec.to_json() == text
    assert spec.knobs.heterogeneity == "none"


# -- describe --------------------------------------------------------------------


def test_describe_writes_full_metric_set(small_run):
    code = run_cli("describe", str(small_run), "--proxy-rounds", "150")
    assert code == 0
    frame = pd.read_csv(small_run / "metrics.csv")
    assert list(frame.columns) == ["setting", "replication"] \
        + list(NONORACLE_METRICS) + list(ORACLE_METRICS)
    assert len(frame) == 4


def test_describe_no_oracle_survives_truth_deletion(small_run, tmp_path):
    import shutil
    clone = tmp_path / "no_oracle"
    shutil.copytree(small_run, clone)
    for p in clone.rglob("truth.csv"):
        p.unlink()
    code = run_cli("describe", str(clone), "--no-oracle", "--proxy-rounds", "150")
    assert code == 0
    frame = pd.read_csv(clone / "metrics.csv")
    assert list(frame.columns) == ["setting", "replication"] + list(NONORACLE_METRICS)


def test_describe_names_corrupted_cell(small_run, tmp_path, capsys):
    import shutil
    clone = tmp_path / "corrupt"
    shutil.copytree(small_run, clone)
    target = clone / "settings" / "s2" / "rep_001" / "x.csv"
    lines = target.read_text().splitlines()
    parts = lines[17].split(",")
    parts[2] = "oops"
    lines[17] = ",".join(parts)
    target.write_text("\n".join(lines) + "\n")
    code = run_cli("describe", str(clone), "--proxy-rounds", "150")
    assert code == 1
    err = capsys.readouterr().err
    assert "row 18" in err and "column 3" in err and "x.csv" in err


# -- estimate / evaluate / report --------------------------------------------------


def test_estimate_unknown_method_lists_registered(small_run, capsys):
    code = run_cli("estimate", str(small_run), "--methods", "nonesuch")
    assert code == 1
    err = capsys.readouterr().err
    assert "registered methods" in err
    assert "ols_adjust" in err


def test_full_pipeline_and_report_ordering(small_run, capsys):
    code = run_cli("estimate", str(small_run), "--methods",
                   "diff_in_means,ols_adjust,regression_ra,oracle_catt",
                   "--bootstrap-b", "8")
    assert code == 0
    est = pd.read_csv(small_run / "estimates.csv")
    assert list(est.columns) == ["setting", "replication", "method",
                                 "satt_hat", "lo", "hi", "wall_time"]
    assert len(est) == 4 * 4
    code = run_cli("evaluate", str(small_run))
    assert code == 0
    for name in ("summary.csv", "pehe.csv", "r2_table.csv", "varcomp.json"):
        assert (small_run / name).exists()
    code = run_cli("report", str(small_run))
    assert code == 0
    text = (small_run / "report.txt").read_text()
    summary = pd.read_csv(small_run / "summary.csv")
    expected = summary.sort_values(["rmse", "method"])["method"].tolist()
    listed = [line.split()[1] for line in text.splitlines()[1:] if line.strip()]
    assert listed == expected
    # effects exist for methods that emit them
    assert any((small_run / "effects").glob("*regression_ra.csv"))
    # varcomp shares sum to one
    vc = json.loads((small_run / "varcomp.json").read_text())
    assert sum(vc["shares"].values()) == pytest.approx(1.0)


def test_report_tie_break_alphabetical(tmp_path):
    out = tmp_path / "ties"
    out.mkdir()
    frame = pd.DataFrame([
        {"method": "zeta", "bias": 0.0, "rmse": 0.5, "coverage": 0.9,
         "interval_length": 1.0, "mean_wall_time": 0.1, "bias_iqr_lo": 0.0,
         "bias_iqr_hi": 0.1, "n_cells": 10, "pehe": float("nan")},
        {"method": "alpha", "bias": 0.0, "rmse": 0.5, "coverage": 0.9,
         "interval_length": 1.0, "mean_wall_time": 0.1, "bias_iqr_lo": 0.0,
         "bias_iqr_hi": 0.1, "n_cells": 10, "pehe": float("nan")},
        {"method": "mid", "bias": 0.0, "rmse": 0.2, "coverage": 0.9,
         "interval_length": 1.0, "mean_wall_time": 0.1, "bias_iqr_lo": 0.0,
         "bias_iqr_hi": 0.1, "n_cells": 10, "pehe": float("nan")},
    ])
    frame.to_csv(out / "summary.csv", index=False)
    code = run_cli("report", str(out))
    assert code == 0
    lines = (out / "report.txt").read_text().splitlines()[1:]
    order = [ln.split()[1] for ln in lines]
    assert order == ["mid", "alpha", "zeta"]


def test_evaluate_requires_estimates(tmp_path, capsys):
    out = tmp_path / "empty"
    out.mkdir()
    (out / "manifest.json").write_text(json.dumps(
        {"schema_version": 1, "config": {}, "cells": []}))
    code = run_cli("evaluate", str(out))
    assert code == 1
    assert "estimates.csv" in capsys.readouterr().err


def test_estimate_partial_failure_exit_codes(tmp_path, capsys):
    out = tmp_path / "tiny"
    assert run_cli("generate", "--settings", "3", "--reps", "1", "--seed", "1",
                   "--out", str(out), "--n", "80") == 0
    code = run_cli("estimate", str(out), "--methods",
                   "diff_in_means,flexible_rs", "--bootstrap-b", "8")
    assert code == 1
    assert "estimate_errors.csv" in capsys.readouterr().err
    code = run_cli("estimate", str(out), "--methods",
                   "diff_in_means,flexible_rs", "--bootstrap-b", "8",
                   "--allow-partial")
    assert code == 0
    errs = pd.read_csv(out / "estimate_errors.csv")
    assert errs.iloc[0]["method"] == "flexible_rs"


# -- configuration precedence -------------------------------------------------------


def test_env_seed_overrides_config_file(tmp_path, monkeypatch):
    from causal_testbed.cli import build_config
    import argparse
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps({"seed": 1, "out": "somewhere"}))
    ns = argparse.Namespace(config=str(cfg_path), seed=None, preset=None,
                            n_override=None, settings=None, replications=None,
                            methods=None, out=None, bootstrap_b=None,
                            threads=None, no_timing=False, allow_partial=False,
                            boost_max_rounds=None)
    monkeypatch.setenv("CAUSAL_TESTBED_SEED", "777")
    cfg = build_config(ns)
    assert cfg.seed == 777
    # explicit flag beats the environment
    ns.seed = 55
    cfg = build_config(ns)
    assert cfg.seed == 55


def test_flags_override_config_file(tmp_path):
    from causal_testbed.cli import build_config
    import argparse
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(
        {"seed": 9, "replications": 50, "bootstrap_b": 123}))
    ns = argparse.Namespace(config=str(cfg_path), seed=None, preset=None,
                            n_override=None, settings="1-3", replications=4,
                            methods="ols_adjust", out=None, bootstrap_b=None,
                            threads=None, no_timing=True, allow_partial=False,
                            boost_max_rounds=None)
    cfg = build_config(ns)
    assert cfg.seed == 9
    assert cfg.replications == 4
    assert cfg.bootstrap_b == 123
    assert cfg.settings == (1, 2, 3)
    assert cfg.methods == ("ols_adjust",)
    assert cfg.record_timing is False
