"""Grid runner and performance evaluation.

``run_grid`` drives the full loop: per setting it builds one covariate
table, then per replication builds a process, draws a realization, runs
every requested method, and collects dataset metrics.  Downstream,
``summarize`` computes the benchmark's headline numbers (bias, RMSE,
coverage, interval length, PEHE, timing), ``explain_performance`` fits
the per-method log-absolute-bias regressions, and ``variance_components``
partitions performance variation into method/setting/interaction/residual
pieces.

Cells are seeded independently (setting, replication, method), so any
subset can be recomputed in any order, on any number of workers, with
bit-identical results.
"""

from __future__ import annotations

import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

from .covariates import CovariateTable, default_schema, desk_schema, \
    generate_covariates
from .dgp import DgpConfig, Knobs, Realization, build_dgp, canonical_setting, \
    realize
from .dgp.build import DgpSpec
from .estimators import EstimateResult, EstimatorConfig, EstimatorInput, \
    REGISTRY, fit_boosted_cv, oracle_catt, run_estimator
from .metrics import MetricVector, metric_vector
from .rng import derive_seed

__all__ = ["EvalSummary", "GridConfig", "GridResult", "VarianceComponents",
           "explain_performance", "pehe", "run_grid", "summarize",
           "variance_components", "run_cell", "setting_key", "resolve_setting"]

ESTIMATE_COLUMNS = ("setting", "replication", "method", "satt_hat", "lo",
                    "hi", "wall_time")


@dataclass(frozen=True)
class GridConfig:
    """Reproducible description of one grid run."""

    master_seed: int = 0
    preset: str = "desk"            # "desk" (n=1000, p=20) or "paper" (4802 x 58)
    n_override: int | None = None
    bootstrap_b: int = 250
    threads: int = 1
    record_timing: bool = True
    compute_metrics: bool = True
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    dgp: DgpConfig = field(default_factory=DgpConfig)

    def covariate_schema(self):
        if self.preset == "paper":
            return default_schema()
        if self.preset == "desk":
            return desk_schema()
        raise ValueError(f"unknown covariate preset {self.preset!r}")

    @property
    def n_rows(self) -> int:
        if self.n_override is not None:
            return self.n_override
        return 4802 if self.preset == "paper" else 1000


def setting_key(setting: int | Knobs, position: int) -> str:
    """CSV-friendly identifier: canonical index, or a positional custom key."""
    if isinstance(setting, int):
        return str(setting)
    return f"x{position}"


def resolve_setting(setting: int | Knobs) -> Knobs:
    if isinstance(setting, Knobs):
        return setting
    return canonical_setting(int(setting))


@dataclass
class CellOutput:
    setting: str
    replication: int
    seed: int
    satt: float
    estimate_rows: list[dict]
    effects: dict[str, list[float]]
    pehe_rows: list[dict]
    metrics: dict | None
    errors: dict[str, str]


def _covariates_for(config: GridConfig, key: str) -> CovariateTable:
    return generate_covariates(config.covariate_schema(), config.n_rows,
                               seed=derive_seed(config.master_seed, key, "cov"))


def run_cell(knobs: Knobs, key: str, replication: int, methods: tuple[str, ...],
             config: GridConfig) -> CellOutput:
    """Everything for one (setting, replication) cell.

    Estimator failures are recorded, not raised: the grid must keep going.
    """
    covariates = _covariates_for(config, key)
    dgp_seed = derive_seed(config.master_seed, key, replication, "dgp")
    spec = build_dgp(knobs, covariates, seed=dgp_seed, config=config.dgp)
    real_seed = derive_seed(config.master_seed, key, replication, "real")
    r = realize(spec, covariates, seed=real_seed)
    inp = EstimatorInput(r.design, r.z, r.y)
    treated_tau = r.tau_smooth[r.z == 1.0]
    satt_true = r.satt()

    rows: list[dict] = []
    errors: dict[str, str] = {}
    effects: dict[str, list[float]] = {}
    pehe_rows: list[dict] = []
    flexible_tau = None
    for method in methods:
        method_seed = derive_seed(config.master_seed, key, replication, method)
        est_cfg = replace(config.estimator, seed=method_seed,
                          bootstrap_b=config.bootstrap_b)
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                if method == "oracle_catt":
                    t0 = time.perf_counter()
                    result = oracle_catt(r)
                    result.wall_time = time.perf_counter() - t0
                else:
                    result = run_estimator(method, inp, est_cfg)
        except Exception as exc:  # noqa: BLE001 - recorded per cell
            errors[method] = f"{type(exc).__name__}: {exc}"
            continue
        rows.append({
            "setting": key,
            "replication": replication,
            "method": method,
            "satt_hat": result.satt_hat,
            "lo": result.lo,
            "hi": result.hi,
            "wall_time": result.wall_time if config.record_timing else 0.0,
        })
        if result.individual_effects is not None:
            effects[method] = [float(v) for v in result.individual_effects]
            pehe_rows.append({
                "setting": key, "replication": replication, "method": method,
                "pehe": pehe(result.individual_effects, treated_tau),
            })
            if method == "flexible_rs":
                flexible_tau = result.individual_effects
    metrics_row = None
    if config.compute_metrics:
        if flexible_tau is None:
            flexible_tau = _proxy_effects(inp, config)
        mv = metric_vector(r, spec, setting=key, replication=replication,
                           tau_hat=flexible_tau, seed=real_seed)
        metrics_row = mv.as_row()
    return CellOutput(key, replication, real_seed, satt_true, rows, effects,
                      pehe_rows, metrics_row, errors)


def _proxy_effects(inp: EstimatorInput, config: GridConfig) -> np.ndarray:
    """Individual-effect estimates for the alignment proxy when the
    flexible estimator was not among the requested methods."""
    xc, yc = inp.x[inp.controls], inp.y[inp.controls]
    fit = fit_boosted_cv(xc, yc,
                         seed=derive_seed(config.master_seed, "proxy"),
                         max_rounds=min(config.estimator.boost_max_rounds, 600),
                         cv_folds=config.estimator.boost_cv_folds)
    treated = inp.treated
    return inp.y[treated] - fit.model.predict(inp.x[treated])


@dataclass
class GridResult:
    estimates: pd.DataFrame   # spec columns plus the joined true satt
    truths: pd.DataFrame      # (setting, replication, seed, satt)
    metrics: pd.DataFrame
    pehe: pd.DataFrame
    errors: pd.DataFrame


def _run_cells(tasks, config: GridConfig):
    if config.threads <= 1:
        return [run_cell(*t, config) for t in tasks]
    with ProcessPoolExecutor(max_workers=config.threads) as pool:
        futures = [pool.submit(run_cell, *t, config) for t in tasks]
        return [f.result() for f in futures]


def run_grid(settings, replications: int, methods, config: GridConfig | None = None,
             completed: set[tuple[str, int]] | None = None) -> GridResult:
    """Run every requested method over settings x replications.

    ``completed`` marks cells to skip (resume support for callers that
    persist per-cell outputs).  Output row order is deterministic and
    independent of thread count or completion order.
    """
    config = config or GridConfig()
    methods = tuple(methods)
    for m in methods:
        if m not in REGISTRY and m != "oracle_catt":
            raise KeyError(f"unknown method {m!r}; registered methods: "
                           f"{', '.join(sorted(REGISTRY))}, oracle_catt")
    tasks = []
    for pos, s in enumerate(settings, start=1):
        knobs = resolve_setting(s)
        key = setting_key(s, pos)
        for rep in range(replications):
            if completed and (key, rep) in completed:
                continue
            tasks.append((knobs, key, rep, methods))
    outputs = _run_cells(tasks, config)
    return collect_outputs(outputs)


def collect_outputs(outputs: list[CellOutput]) -> GridResult:
    outputs = sorted(outputs, key=lambda c: (c.setting, c.replication))
    est_rows, truth_rows, metric_rows, pehe_rows, error_rows = [], [], [], [], []
    for cell in outputs:
        truth_rows.append({"setting": cell.setting,
                           "replication": cell.replication,
                           "seed": cell.seed, "satt": cell.satt})
        est_rows.extend(cell.estimate_rows)
        pehe_rows.extend(cell.pehe_rows)
        if cell.metrics is not None:
            metric_rows.append(cell.metrics)
        for method, message in cell.errors.items():
            error_rows.append({"setting": cell.setting,
                               "replication": cell.replication,
                               "method": method, "error": message})
    estimates = pd.DataFrame(est_rows, columns=list(ESTIMATE_COLUMNS))
    truths = pd.DataFrame(truth_rows,
                          columns=["setting", "replication", "seed", "satt"])
    estimates = estimates.merge(truths[["setting", "replication", "satt"]],
                                on=["setting", "replication"], how="left")
    metrics = pd.DataFrame(metric_rows)
    pehe_df = pd.DataFrame(pehe_rows,
                           columns=["setting", "replication", "method", "pehe"])
    errors = pd.DataFrame(error_rows,
                          columns=["setting", "replication", "method", "error"])
    return GridResult(estimates, truths, metrics, pehe_df, errors)


# -- evaluation ----------------------------------------------------------


def pehe(tau_hat, tau_true) -> float:
    """Root mean squared error of individual effects over treated units."""
    tau_hat = np.asarray(tau_hat, dtype=float)
    tau_true = np.asarray(tau_true, dtype=float)
    if tau_hat.shape != tau_true.shape:
        raise ValueError(
            f"effect vectors differ in length: {tau_hat.shape} vs {tau_true.shape}")
    return float(np.sqrt(np.mean((tau_hat - tau_true) ** 2)))


@dataclass(frozen=True)
class EvalSummary:
    table: pd.DataFrame

    def row(self, method: str) -> pd.Series:
        return self.table.loc[method]


def _join_truth(estimates: pd.DataFrame, truths: pd.DataFrame) -> pd.DataFrame:
    df = estimates.copy()
    if "satt" in df.columns and df["satt"].notna().all():
        return df
    df = df.drop(columns=[c for c in ("satt",) if c in df.columns])
    df = df.merge(truths[["setting", "replication", "satt"]],
                  on=["setting", "replication"], how="left")
    if df["satt"].isna().any():
        orphans = df[df["satt"].isna()][["setting", "replication"]]
        pairs = sorted({(r.setting, int(r.replication))
                        for r in orphans.itertuples()})
        raise ValueError(f"estimate rows without matching truth: {pairs[:10]}")
    return df


def summarize(estimates: pd.DataFrame, truths: pd.DataFrame,
              pehe_table: pd.DataFrame | None = None) -> EvalSummary:
    """Per-method aggregates over all cells.

    Bias and RMSE are taken over cell-level errors; coverage is the share
    of intervals containing the true effect; the bias IQR pools every
    (setting, replication) cell.
    """
    df = _join_truth(estimates, truths)
    df = df.assign(error=df["satt_hat"] - df["satt"],
                   covered=(df["lo"] <= df["satt"]) & (df["satt"] <= df["hi"]),
                   length=df["hi"] - df["lo"])
    rows = {}
    for method, grp in df.groupby("method", sort=True):
        bias = float(grp["error"].mean())
        rmse = float(np.sqrt(np.mean(grp["error"] ** 2)))
        if rmse < abs(bias):  # harness self-check; cannot happen
            raise AssertionError("rmse fell below |bias|")
        q1, q3 = np.percentile(grp["error"], [25, 75])
        rows[method] = {
            "bias": bias,
            "rmse": rmse,
            "coverage": float(grp["covered"].mean()),
            "interval_length": float(grp["length"].mean()),
            "mean_wall_time": float(grp["wall_time"].mean()),
            "bias_iqr_lo": float(q1),
            "bias_iqr_hi": float(q3),
            "n_cells": int(len(grp)),
            "pehe": float("nan"),
        }
    if pehe_table is not None and len(pehe_table):
        for method, grp in pehe_table.groupby("method"):
            if method in rows:
                rows[method]["pehe"] = float(grp["pehe"].mean())
    table = pd.DataFrame.from_dict(rows, orient="index")
    table.index.name = "method"
    return EvalSummary(table)


LOG_BIAS_FLOOR = 1e-6


def _design_blocks(metrics: pd.DataFrame):
    from .metrics import NONORACLE_METRICS, ORACLE_METRICS
    nonoracle = [c for c in NONORACLE_METRICS if c in metrics.columns]
    oracle = [c for c in ORACLE_METRICS if c in metrics.columns]
    return nonoracle, oracle


def _with_squares(block: np.ndarray) -> np.ndarray:
    return np.column_stack([block, block**2])


def explain_performance(estimates: pd.DataFrame, truths: pd.DataFrame,
                        metrics: pd.DataFrame, min_cells: int = 30) -> pd.DataFrame:
    """Per-method R-squared of log absolute bias under four designs:
    non-oracle metrics (with squares), setting indicators, all metrics
    (with squares), and settings plus all metrics."""
    from .numerics import ols_r2
    df = _join_truth(estimates, truths)
    df = df.assign(log_abs_bias=np.log(np.abs(df["satt_hat"] - df["satt"])
                                       + LOG_BIAS_FLOOR))
    merged = df.merge(metrics, on=["setting", "replication"], how="inner")
    nonoracle, oracle = _design_blocks(metrics)
    out_rows = {}
    for method, grp in merged.groupby("method", sort=True):
        if len(grp) < min_cells:
            continue
        y = grp["log_abs_bias"].to_numpy()
        settings_dummies = pd.get_dummies(grp["setting"]).to_numpy(dtype=float)
        non = grp[nonoracle].to_numpy()
        allm = grp[nonoracle + oracle].to_numpy()
        designs = {
            "r2_nonoracle": _with_squares(non),
            "r2_settings": settings_dummies,
            "r2_all_metrics": _with_squares(allm),
            "r2_settings_plus_metrics": np.column_stack(
                [settings_dummies, _with_squares(allm)]),
        }
        row = {}
        for name, design in designs.items():
            rank = np.linalg.matrix_rank(design)
            if rank < design.shape[1]:
                warnings.warn(
                    f"{method}/{name}: design rank {rank} < {design.shape[1]}; "
                    "minimum-norm fit", RuntimeWarning, stacklevel=2)
            row[name] = ols_r2(y, design)
        out_rows[method] = row
    table = pd.DataFrame.from_dict(out_rows, orient="index")
    table.index.name = "method"
    return table


@dataclass(frozen=True)
class VarianceComponents:
    methods: float
    settings: float
    interaction: float
    realizations: float
    truncated: tuple[str, ...] = ()

    @property
    def total(self) -> float:
        return self.methods + self.settings + self.interaction + self.realizations

    def shares(self) -> dict[str, float]:
        t = self.total
        if t <= 0:
            return {k: 0.0 for k in ("methods", "settings", "interaction",
                                     "realizations")}
        return {"methods": self.methods / t, "settings": self.settings / t,
                "interaction": self.interaction / t,
                "realizations": self.realizations / t}

    def to_dict(self) -> dict:
        d = {"methods": self.methods, "settings": self.settings,
             "interaction": self.interaction, "realizations": self.realizations,
             "total": self.total, "shares": self.shares(),
             "truncated": list(self.truncated)}
        return d


def variance_components(estimates: pd.DataFrame,
                        truths: pd.DataFrame) -> VarianceComponents:
    """Method-of-moments two-way crossed random-effects decomposition of
    log absolute bias (methods x settings, replications nested within).

    Negative moment estimates truncate to zero and are flagged.  Requires
    a balanced or near-balanced grid; cell means are unweighted.
    """
    df = _join_truth(estimates, truths)
    df = df.assign(v=np.log(np.abs(df["satt_hat"] - df["satt"]) + LOG_BIAS_FLOOR))
    methods = sorted(df["method"].unique())
    settings = sorted(df["setting"].unique())
    m_count, s_count = len(methods), len(settings)
    if m_count < 1 or s_count < 1:
        raise ValueError("empty estimates table")
    reps = df.groupby(["method", "setting"])["v"].count()
    r_count = int(round(float(reps.mean())))
    if r_count < 1:
        raise ValueError("no replications found")
    grand = float(df["v"].mean())
    cell_means = df.groupby(["method", "setting"])["v"].mean()
    method_means = df.groupby("method")["v"].mean()
    setting_means = df.groupby("setting")["v"].mean()

    ss_resid = float(((df.set_index(["method", "setting"])["v"] - cell_means)
                      ** 2).sum())
    ms_e = ss_resid / max(len(df) - m_count * s_count, 1)
    if m_count < 2:
        # single-method input: method and interaction components are defined
        # as zero; settings variance from the one-way decomposition
        ms_b = r_count * float(((setting_means - grand) ** 2).sum()) \
            / max(s_count - 1, 1)
        sigma_b = max((ms_b - ms_e) / r_count, 0.0)
        return VarianceComponents(0.0, sigma_b, 0.0, ms_e,
                                  truncated=("methods", "interaction")
                                  if ms_b < ms_e else ())
    inter = cell_means.copy()
    for (m, s), val in cell_means.items():
        inter.loc[(m, s)] = val - float(method_means[m]) \
            - float(setting_means[s]) + grand
    ss_a = r_count * s_count * float(((method_means - grand) ** 2).sum())
    ss_b = r_count * m_count * float(((setting_means - grand) ** 2).sum())
    ss_ab = r_count * float((inter**2).sum())
    ms_a = ss_a / (m_count - 1)
    ms_b = ss_b / max(s_count - 1, 1)
    ms_ab = ss_ab / max((m_count - 1) * max(s_count - 1, 1), 1)
    # ANOVA identity self-check (exact sum-of-squares decomposition)
    ss_total = float(((df["v"] - grand) ** 2).sum())
    recomposed = ss_a + ss_b + ss_ab + ss_resid
    if abs(ss_total - recomposed) > 1e-6 * max(ss_total, 1.0):
        warnings.warn("unbalanced grid: sum-of-squares identity is "
                      f"approximate ({ss_total:.6f} vs {recomposed:.6f})",
                      RuntimeWarning, stacklevel=2)
    raw = {
        "realizations": ms_e,
        "interaction": (ms_ab - ms_e) / r_count,
        "methods": (ms_a - ms_ab) / (r_count * s_count),
        "settings": (ms_b - ms_ab) / (r_count * m_count),
    }
    truncated = tuple(sorted(k for k, v in raw.items() if v < 0))
    clipped = {k: max(v, 0.0) for k, v in raw.items()}
    return VarianceComponents(clipped["methods"], clipped["settings"],
                              clipped["interaction"], clipped["realizations"],
                              truncated=truncated)
