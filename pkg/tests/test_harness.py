import numpy as np
import pandas as pd
import pytest

from causal_testbed.dgp import Knobs
from causal_testbed.harness import (
    GridConfig,
    VarianceComponents,
    explain_performance,
    pehe,
    run_grid,
    summarize,
    variance_components,
)

FAST_GRID = GridConfig(master_seed=99, bootstrap_b=8, compute_metrics=False)
LINEAR = Knobs("linear", "low", "full", "linear", "high", "none")
STEPPY = Knobs("step", "low", "penalize", "step", "high", "low")


def test_grid_row_counting():
    res = run_grid([LINEAR, STEPPY], replications=3,
                   methods=("diff_in_means", "ols_adjust"), config=FAST_GRID)
    assert len(res.estimates) == 2 * 3 * 2
    assert len(res.truths) == 6
    assert list(res.estimates.columns) == ["setting", "replication", "method",
                                           "satt_hat", "lo", "hi", "wall_time",
                                           "satt"]


def test_grid_determinism():
    a = run_grid([1, 2], replications=2, methods=("ols_adjust",),
                 config=FAST_GRID)
    b = run_grid([1, 2], replications=2, methods=("ols_adjust",),
                 config=FAST_GRID)
    pd.testing.assert_frame_equal(
        a.estimates.drop(columns="wall_time"),
        b.estimates.drop(columns="wall_time"))


def test_grid_thread_count_does_not_change_results():
    cfg1 = GridConfig(master_seed=3, bootstrap_b=8, compute_metrics=False,
                      record_timing=False, threads=1)
    cfg4 = GridConfig(master_seed=3, bootstrap_b=8, compute_metrics=False,
                      record_timing=False, threads=4)
    a = run_grid([LINEAR], replications=4, methods=("ols_adjust", "iptw_att"),
                 config=cfg1)
    b = run_grid([LINEAR], replications=4, methods=("ols_adjust", "iptw_att"),
                 config=cfg4)
    pd.testing.assert_frame_equal(a.estimates, b.estimates)


def test_grid_resume_skips_completed():
    full = run_grid([LINEAR], replications=3, methods=("diff_in_means",),
                    config=FAST_GRID)
    partial = run_grid([LINEAR], replications=3, methods=("diff_in_means",),
                       config=FAST_GRID, completed={("x1", 0), ("x1", 2)})
    assert set(partial.estimates["replication"]) == {1}
    resumed = pd.concat([
        full.estimates[full.estimates["replication"] != 1],
        partial.estimates]).sort_values(["replication"]).reset_index(drop=True)
    pd.testing.assert_frame_equal(
        resumed.drop(columns="wall_time"),
        full.estimates.sort_values(["replication"]).reset_index(drop=True)
        .drop(columns="wall_time"))


def test_grid_unknown_method_rejected():
    with pytest.raises(KeyError, match="registered"):
        run_grid([1], replications=1, methods=("nope",), config=FAST_GRID)


def test_grid_records_estimator_errors():
    # flexible_rs refuses n < 100; tiny grid keeps going and records it
    tiny = GridConfig(master_seed=1, bootstrap_b=8, compute_metrics=False,
                      n_override=80)
    res = run_grid([LINEAR], replications=1,
                   methods=("diff_in_means", "flexible_rs"), config=tiny)
    assert len(res.estimates) == 1
    assert len(res.errors) == 1
    assert res.errors.iloc[0]["method"] == "flexible_rs"
    assert "n >=" in res.errors.iloc[0]["error"]


# -- pehe -----------------------------------------------------------------


def test_pehe_exact_and_shifted():
    tau = np.array([0.5, 1.0, 1.5])
    assert pehe(tau, tau) == 0.0
    assert pehe(tau + 1.0, tau) == pytest.approx(1.0)


def test_pehe_length_mismatch():
    with pytest.raises(ValueError, match="length"):
        pehe(np.zeros(3), np.zeros(4))


def test_pehe_constant_estimator_floor():
    # a constant estimate can never beat the spread of the true effects
    rng = np.random.default_rng(1)
    tau = rng.normal(0.5, 0.8, size=500)
    const = np.full(500, tau.mean())
    brute = np.sqrt(np.mean((const - tau) ** 2))
    assert pehe(const, tau) == pytest.approx(brute, abs=1e-12)
    assert pehe(const, tau) >= np.std(tau) - 1e-12


# -- summarize ---------------------------------------------------------------


def _toy_tables(n_cells=50, bias=0.0, width=1.0, seed=0):
    rng = np.random.default_rng(seed)
    rows, truth_rows = [], []
    for i in range(n_cells):
        satt = rng.normal(0.6, 0.1)
        est = satt + bias + 0.0
        rows.append({"setting": "1", "replication": i, "method": "toy",
                     "satt_hat": est, "lo": est - width / 2,
                     "hi": est + width / 2, "wall_time": 0.1})
        truth_rows.append({"setting": "1", "replication": i, "seed": i,
                           "satt": satt})
    return pd.DataFrame(rows), pd.DataFrame(truth_rows)


def test_summarize_exact_estimates():
    est, truth = _toy_tables(bias=0.0, width=0.0)
    table = summarize(est, truth).table
    assert table.loc["toy", "bias"] == pytest.approx(0.0, abs=1e-12)
    assert table.loc["toy", "rmse"] == pytest.approx(0.0, abs=1e-12)
    assert table.loc["toy", "coverage"] == 1.0


def test_summarize_constant_offset():
    est, truth = _toy_tables(bias=0.1, width=0.0)
    table = summarize(est, truth).table
    assert table.loc["toy", "bias"] == pytest.approx(0.1)
    assert table.loc["toy", "rmse"] == pytest.approx(0.1)
    assert table.loc["toy", "coverage"] == 0.0
    assert table.loc["toy", "rmse"] >= abs(table.loc["toy", "bias"])


def test_summarize_gaussian_coverage_band():
    rng = np.random.default_rng(11)
    rows, truth_rows = [], []
    for i in range(1000):
        satt = 0.5
        est = satt + rng.normal(0.0, 0.05)
        half = 1.959963984540054 * 0.05
        rows.append({"setting": "1", "replication": i, "method": "gauss",
                     "satt_hat": est, "lo": est - half, "hi": est + half,
                     "wall_time": 0.0})
        truth_rows.append({"setting": "1", "replication": i, "seed": i,
                           "satt": satt})
    table = summarize(pd.DataFrame(rows), pd.DataFrame(truth_rows)).table
    assert 0.93 <= table.loc["gauss", "coverage"] <= 0.97


def test_summarize_rejects_orphans():
    est, truth = _toy_tables()
    est.loc[0, "replication"] = 999
    with pytest.raises(ValueError, match="without matching truth"):
        summarize(est.drop(columns=[]), truth)


def test_summarize_permutation_invariant():
    est, truth = _toy_tables(bias=0.05, width=0.5, seed=3)
    base = summarize(est, truth).table
    shuffled = summarize(est.sample(frac=1.0, random_state=5), truth).table
    pd.testing.assert_frame_equal(base, shuffled)


# -- explain_performance -------------------------------------------------------


def _metric_frame(n_settings, reps, rng):
    from causal_testbed.metrics import NONORACLE_METRICS, ORACLE_METRICS
    rows = []
    for s in range(n_settings):
        for r in range(reps):
            row = {"setting": str(s), "replication": r}
            for name in NONORACLE_METRICS + ORACLE_METRICS:
                row[name] = rng.uniform()
            rows.append(row)
    return pd.DataFrame(rows)


def test_explain_planted_signal():
    rng = np.random.default_rng(2)
    metrics = _metric_frame(10, 10, rng)
    rows, truths = [], []
    for _, m in metrics.iterrows():
        # |bias| is an exact function of one non-oracle metric
        log_abs = 2.0 * m["r2_y_obs"] - 1.0
        est = np.exp(log_abs) - 1e-6
        rows.append({"setting": m["setting"], "replication": m["replication"],
                     "method": "planted", "satt_hat": est, "lo": est,
                     "hi": est, "wall_time": 0.0})
        truths.append({"setting": m["setting"], "replication": m["replication"],
                       "seed": 0, "satt": 0.0})
    table = explain_performance(pd.DataFrame(rows), pd.DataFrame(truths),
                                metrics)
    assert table.loc["planted", "r2_nonoracle"] >= 0.99
    assert table.loc["planted", "r2_all_metrics"] >= 0.99
    # nested designs can only improve the fit
    assert table.loc["planted", "r2_settings_plus_metrics"] >= \
        table.loc["planted", "r2_settings"] - 1e-12


def test_explain_pure_noise_r2_small():
    rng = np.random.default_rng(4)
    metrics = _metric_frame(25, 20, rng)
    rows, truths = [], []
    for _, m in metrics.iterrows():
        est = rng.normal()
        rows.append({"setting": m["setting"], "replication": m["replication"],
                     "method": "noise", "satt_hat": est, "lo": est, "hi": est,
                     "wall_time": 0.0})
        truths.append({"setting": m["setting"], "replication": m["replication"],
                       "seed": 0, "satt": rng.normal()})
    table = explain_performance(pd.DataFrame(rows), pd.DataFrame(truths),
                                metrics)
    assert table.loc["noise", "r2_nonoracle"] <= 0.05
    assert table.loc["noise", "r2_settings"] <= 0.1


def test_explain_requires_min_cells():
    rng = np.random.default_rng(4)
    metrics = _metric_frame(2, 3, rng)
    rows = [{"setting": "0", "replication": 0, "method": "few",
             "satt_hat": 0.0, "lo": 0.0, "hi": 0.0, "wall_time": 0.0}]
    truths = [{"setting": "0", "replication": 0, "seed": 0, "satt": 0.1}]
    table = explain_performance(pd.DataFrame(rows), pd.DataFrame(truths),
                                metrics)
    assert len(table) == 0


# -- variance components ---------------------------------------------------------


def _standardized(rng, size, sd):
    """Draws rescaled so their sample variance is exactly sd^2 (keeps the
    planted variance shares sharp at small factor counts)."""
    if sd == 0.0:
        return np.zeros(size)
    v = rng.standard_normal(size)
    v = v - v.mean()
    return v * (sd / v.std(ddof=1))


def _planted_anova(m, s, r, sd_method, sd_setting, sd_inter, sd_noise, seed=0):
    rng = np.random.default_rng(seed)
    a = _standardized(rng, m, sd_method)
    b = _standardized(rng, s, sd_setting)
    ab = rng.normal(0.0, sd_inter, (m, s))
    rows, truths = [], []
    for i in range(m):
        for j in range(s):
            for k in range(r):
                v = a[i] + b[j] + ab[i, j] + rng.normal(0.0, sd_noise)
                est = np.exp(v) - 1e-6  # |bias| whose log is v
                rows.append({"setting": str(j), "replication": k,
                             "method": f"m{i}", "satt_hat": est, "lo": est,
                             "hi": est, "wall_time": 0.0})
    for j in range(s):
        for k in range(r):
            truths.append({"setting": str(j), "replication": k, "seed": 0,
                           "satt": 0.0})
    return pd.DataFrame(rows), pd.DataFrame(truths)


def test_variance_components_planted_recovery():
    est, truth = _planted_anova(20, 20, 20, sd_method=1.0, sd_setting=0.0,
                                sd_inter=0.0, sd_noise=1.0, seed=7)
    vc = variance_components(est, truth)
    shares = vc.shares()
    assert shares["methods"] == pytest.approx(0.5, abs=0.05)
    assert shares["settings"] == pytest.approx(0.0, abs=0.05)
    assert shares["interaction"] == pytest.approx(0.0, abs=0.05)
    assert shares["realizations"] == pytest.approx(0.5, abs=0.05)


def test_variance_components_identical_methods():
    est, truth = _planted_anova(1, 8, 10, 0.0, 0.5, 0.0, 0.7, seed=3)
    frames = []
    for name in ("m_a", "m_b", "m_c"):
        f = est.copy()
        f["method"] = name
        frames.append(f)
    vc = variance_components(pd.concat(frames, ignore_index=True), truth)
    assert vc.methods == pytest.approx(0.0, abs=1e-12)
    assert vc.interaction == pytest.approx(0.0, abs=1e-12)
    assert vc.settings >= 0.0


def test_variance_components_sum_and_truncation_flags():
    est, truth = _planted_anova(5, 6, 4, 0.8, 0.5, 0.3, 0.6, seed=9)
    vc = variance_components(est, truth)
    assert vc.total == pytest.approx(vc.methods + vc.settings + vc.interaction
                                     + vc.realizations)
    d = vc.to_dict()
    assert set(d["shares"]) == {"methods", "settings", "interaction",
                                "realizations"}
    assert sum(d["shares"].values()) == pytest.approx(1.0)


def test_variance_components_single_method():
    est, truth = _planted_anova(1, 6, 5, 0.0, 0.8, 0.0, 0.5, seed=5)
    vc = variance_components(est, truth)
    assert vc.methods == 0.0
    assert vc.interaction == 0.0
