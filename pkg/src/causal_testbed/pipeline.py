"""File-based pipeline stages.

Each stage reads the previous stage's outputs from an output directory
and writes its own, so the command surface (generate / describe /
estimate / evaluate / report) composes through the filesystem:

    out/
      manifest.json                   run identity, seeds, realized effects
      settings/s<key>/schema.json     covariate schema for the setting
      settings/s<key>/rep_<r>/        x.csv zy.csv truth.csv spec.json
      metrics.csv                     describe
      estimates.csv effects/          estimate
      pehe.csv summary.csv r2_table.csv varcomp.json   evaluate
      report.txt                      report

All floats are written with repr-exact formatting so that reruns with the
same seeds are byte-identical regardless of worker count (wall times are
zeroed when timing is off; see RunConfig.record_timing).
"""

from __future__ import annotations

import csv
import json
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd

from .covariates import ColumnSchema, CovariateTable
from .dgp import DgpSpec, Knobs, build_dgp, realize
from .estimators import EstimatorConfig, EstimatorInput, REGISTRY, \
    fit_boosted_cv, oracle_catt, run_estimator
from .harness import ESTIMATE_COLUMNS, GridConfig, explain_performance, pehe, \
    resolve_setting, setting_key, summarize, variance_components
from .metrics import NONORACLE_METRICS, ORACLE_METRICS, metric_vector, \
    observable_metrics
from .dgp.realize import Realization
from .rng import derive_seed

__all__ = ["PipelineError", "RunConfig", "run_generate", "run_describe",
           "run_estimate", "run_evaluate", "run_report", "load_run_config"]

SCHEMA_VERSION = 1
FLOAT_FMT = "%.17g"


class PipelineError(RuntimeError):
    pass


@dataclass(frozen=True)
class RunConfig:
    """Reproducible run description (JSON file + flag overrides)."""

    seed: int = 0
    preset: str = "desk"
    n_override: int | None = None
    settings: tuple = (1, 2)
    replications: int = 3
    methods: tuple[str, ...] = tuple(sorted(REGISTRY)) + ("oracle_catt",)
    out: str = "testbed_run"
    bootstrap_b: int = 250
    threads: int = 1
    record_timing: bool = True
    allow_partial: bool = False
    boost_max_rounds: int = 2000

    def grid_config(self) -> GridConfig:
        est = EstimatorConfig(bootstrap_b=self.bootstrap_b,
                              boost_max_rounds=self.boost_max_rounds)
        return GridConfig(master_seed=self.seed, preset=self.preset,
                          n_override=self.n_override,
                          bootstrap_b=self.bootstrap_b, threads=self.threads,
                          record_timing=self.record_timing, estimator=est)

    def resolved_settings(self) -> list[tuple[str, Knobs]]:
        out = []
        for pos, s in enumerate(self.settings, start=1):
            out.append((setting_key(s, pos), resolve_setting(s)))
        return out

    def to_dict(self) -> dict:
        d = asdict(self)
        d["settings"] = [s if isinstance(s, int) else Knobs.to_dict(s)
                         for s in self.settings]
        d["methods"] = list(self.methods)
        return d

    @staticmethod
    def from_dict(d: dict) -> "RunConfig":
        d = dict(d)
        if "settings" in d:
            d["settings"] = tuple(s if isinstance(s, int) else Knobs.from_dict(s)
                                  for s in d["settings"])
        if "methods" in d:
            d["methods"] = tuple(d["methods"])
        return RunConfig(**d)


def load_run_config(path: str | Path) -> RunConfig:
    with open(path) as fh:
        return RunConfig.from_dict(json.load(fh))


# -- small IO helpers ----------------------------------------------------


def _write_matrix(path: Path, header: list[str], array: np.ndarray) -> None:
    array = np.atleast_2d(array)
    np.savetxt(path, array, delimiter=",", header=",".join(header),
               comments="", fmt=FLOAT_FMT)


def read_matrix(path: Path, expect_cols: int | None = None) -> tuple[list[str], np.ndarray]:
    """CSV loader with validation that names the offending row/column."""
    if not path.exists():
        raise PipelineError(f"missing input file: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise PipelineError(f"{path}: empty file") from None
        rows = []
        for i, row in enumerate(reader, start=2):
            if expect_cols is not None and len(row) != expect_cols:
                raise PipelineError(
                    f"{path}: row {i} has {len(row)} fields, expected {expect_cols}")
            if len(row) != len(header):
                raise PipelineError(
                    f"{path}: row {i} has {len(row)} fields, expected {len(header)}")
            parsed = []
            for j, cell in enumerate(row, start=1):
                try:
                    v = float(cell)
                except ValueError:
                    raise PipelineError(
                        f"{path}: row {i} column {j}: not a number: {cell!r}") from None
                if not np.isfinite(v):
                    raise PipelineError(
                        f"{path}: row {i} column {j}: non-finite value")
                parsed.append(v)
            rows.append(parsed)
    if not rows:
        raise PipelineError(f"{path}: no data rows")
    return header, np.asarray(rows, dtype=float)


def _write_frame(path: Path, frame: pd.DataFrame) -> None:
    frame.to_csv(path, index=False, float_format=FLOAT_FMT, lineterminator="\n")


def _setting_dir(out: Path, key: str) -> Path:
    return out / "settings" / f"s{key}"


def _rep_dir(out: Path, key: str, rep: int) -> Path:
    return _setting_dir(out, key) / f"rep_{rep:03d}"


# -- generate -------------------------------------------------------------


def _generate_cell(config: RunConfig, key: str, knobs: Knobs, rep: int,
                   out: Path) -> dict:
    grid = config.grid_config()
    covariates = CovariateTable(
        tuple(grid.covariate_schema()),
        _covariate_values(grid, key))
    dgp_seed = derive_seed(config.seed, key, rep, "dgp")
    spec = build_dgp(knobs, covariates, seed=dgp_seed, config=grid.dgp)
    real_seed = derive_seed(config.seed, key, rep, "real")
    r = realize(spec, covariates, seed=real_seed)
    rep_dir = _rep_dir(out, key, rep)
    rep_dir.mkdir(parents=True, exist_ok=True)
    covariates.to_csv(rep_dir / "x.csv")
    _write_matrix(rep_dir / "zy.csv", ["z", "y"], np.column_stack([r.z, r.y]))
    _write_matrix(rep_dir / "truth.csv", ["e", "mu0", "mu1", "y0", "y1", "tau"],
                  np.column_stack([r.e, r.mu0, r.mu1, r.y0, r.y1, r.tau]))
    (rep_dir / "spec.json").write_text(spec.to_json())
    return {"setting": key, "replication": rep, "seed": real_seed,
            "satt": r.satt(),
            "path": str(rep_dir.relative_to(out))}


def _covariate_values(grid: GridConfig, key: str) -> np.ndarray:
    from .covariates import generate_covariates
    table = generate_covariates(grid.covariate_schema(), grid.n_rows,
                                seed=derive_seed(grid.master_seed, key, "cov"))
    return table.values


def _cell_complete(rep_dir: Path) -> bool:
    return all((rep_dir / f).exists()
               for f in ("x.csv", "zy.csv", "truth.csv", "spec.json"))


def run_generate(config: RunConfig) -> Path:
    """Write realization directories plus the master manifest; skips cells
    whose files already exist (resume/idempotence)."""
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    cells = []
    tasks = []
    for key, knobs in config.resolved_settings():
        sdir = _setting_dir(out, key)
        sdir.mkdir(parents=True, exist_ok=True)
        schema = config.grid_config().covariate_schema()
        (sdir / "schema.json").write_text(
            json.dumps({"schema_version": SCHEMA_VERSION,
                        "knobs": knobs.to_dict(),
                        "columns": [c.to_dict() for c in schema]}, indent=1))
        for rep in range(config.replications):
            tasks.append((key, knobs, rep))
    existing = _load_manifest_cells(out)
    for key, knobs, rep in tasks:
        rep_dir = _rep_dir(out, key, rep)
        prior = existing.get((key, rep))
        if prior is not None and _cell_complete(rep_dir):
            cells.append(prior)
            continue
        cells.append(_generate_cell(config, key, knobs, rep, out))
    cells.sort(key=lambda c: (c["setting"], c["replication"]))
    manifest = {"schema_version": SCHEMA_VERSION, "config": config.to_dict(),
                "cells": cells}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1))
    return out


def _load_manifest(out: Path) -> dict:
    path = out / "manifest.json"
    if not path.exists():
        raise PipelineError(f"missing manifest: {path} (run generate first)")
    manifest = json.loads(path.read_text())
    if manifest.get("schema_version") != SCHEMA_VERSION:
        raise PipelineError(
            f"manifest schema version {manifest.get('schema_version')} "
            f"unsupported (expected {SCHEMA_VERSION})")
    return manifest


def _load_manifest_cells(out: Path) -> dict:
    path = out / "manifest.json"
    if not path.exists():
        return {}
    try:
        manifest = json.loads(path.read_text())
    except json.JSONDecodeError:
        return {}
    return {(c["setting"], c["replication"]): c
            for c in manifest.get("cells", [])}


# -- shared loading --------------------------------------------------------


def _load_schema(out: Path, key: str) -> tuple[Knobs, list[ColumnSchema]]:
    meta = json.loads((_setting_dir(out, key) / "schema.json").read_text())
    return (Knobs.from_dict(meta["knobs"]),
            [ColumnSchema.from_dict(c) for c in meta["columns"]])


def _load_cell_data(out: Path, cell: dict) -> tuple[CovariateTable, np.ndarray, np.ndarray]:
    key = cell["setting"]
    _, columns = _load_schema(out, key)
    rep_dir = out / cell["path"]
    _, x = read_matrix(rep_dir / "x.csv", expect_cols=len(columns))
    table = CovariateTable(tuple(columns), x)
    _, zy = read_matrix(rep_dir / "zy.csv", expect_cols=2)
    return table, zy[:, 0], zy[:, 1]


def _load_truth(out: Path, cell: dict) -> dict[str, np.ndarray]:
    rep_dir = out / cell["path"]
    header, data = read_matrix(rep_dir / "truth.csv", expect_cols=6)
    return {name: data[:, i] for i, name in enumerate(header)}


def _reconstruct_realization(out: Path, cell: dict, table: CovariateTable,
                             z: np.ndarray, y: np.ndarray) -> tuple[Realization, DgpSpec]:
    rep_dir = out / cell["path"]
    spec = DgpSpec.from_json((rep_dir / "spec.json").read_text())
    truth = _load_truth(out, cell)
    design = table.standardized()
    r = Realization(
        covariates=table, design=design, z=z, y=y, e=truth["e"],
        mu0=truth["mu0"], mu1=truth["mu1"],
        tau_smooth=spec.treatment_effect(design),
        y0=truth["y0"], y1=truth["y1"],
        penalized=truth["e"] == 0.0, seed=cell["seed"])
    return r, spec


# -- describe ----------------------------------------------------------------


def _describe_cell(out: Path, cell: dict, oracle: bool,
                   boost_cap: int) -> dict:
    table, z, y = _load_cell_data(out, cell)
    design = table.standardized()
    inp = EstimatorInput(design, z, y)
    fit = fit_boosted_cv(inp.x[inp.controls], inp.y[inp.controls],
                         seed=derive_seed(cell["seed"], "describe-proxy"),
                         max_rounds=boost_cap)
    tau_hat = inp.y[inp.treated] - fit.model.predict(inp.x[inp.treated])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        if oracle:
            r, spec = _reconstruct_realization(out, cell, table, z, y)
            mv = metric_vector(r, spec, setting=cell["setting"],
                               replication=cell["replication"],
                               tau_hat=tau_hat, seed=cell["seed"])
            return mv.as_row()
        values = observable_metrics(design, z, y, tau_hat, seed=cell["seed"])
    row = {"setting": cell["setting"], "replication": cell["replication"]}
    for name in NONORACLE_METRICS:
        row[name] = values[name]
    return row


def run_describe(out_dir: str | Path, oracle: bool = True,
                 threads: int = 1, boost_cap: int = 600) -> Path:
    """Compute metrics.csv for every generated realization.

    With ``oracle=False`` only observable metrics are computed and the
    truth files are never read.
    """
    out = Path(out_dir)
    manifest = _load_manifest(out)
    cells = manifest["cells"]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(_describe_cell, [out] * len(cells), cells,
                                 [oracle] * len(cells),
                                 [boost_cap] * len(cells)))
    else:
        rows = [_describe_cell(out, c, oracle, boost_cap) for c in cells]
    columns = ["setting", "replication"] + list(NONORACLE_METRICS)
    if oracle:
        columns += list(ORACLE_METRICS)
    frame = pd.DataFrame(rows, columns=columns)
    frame = frame.sort_values(["setting", "replication"]).reset_index(drop=True)
    path = out / "metrics.csv"
    _write_frame(path, frame)
    return path


# -- estimate ----------------------------------------------------------------


def _estimate_cell(out: Path, cell: dict, methods: tuple[str, ...],
                   config: RunConfig) -> tuple[list[dict], dict, dict]:
    table, z, y = _load_cell_data(out, cell)
    inp = EstimatorInput(table.standardized(), z, y)
    rows, errors, effects = [], {}, {}
    for method in methods:
        seed = derive_seed(config.seed, cell["setting"], cell["replication"],
                           method)
        cfg = EstimatorConfig(seed=seed, bootstrap_b=config.bootstrap_b,
                              boost_max_rounds=config.boost_max_rounds)
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                if method == "oracle_catt":
                    r, _ = _reconstruct_realization(out, cell, table, z, y)
                    result = oracle_catt(r)
                else:
                    result = run_estimator(method, inp, cfg)
        except Exception as exc:  # noqa: BLE001
            errors[method] = f"{type(exc).__name__}: {exc}"
            continue
        rows.append({
            "setting": cell["setting"], "replication": cell["replication"],
            "method": method, "satt_hat": result.satt_hat, "lo": result.lo,
            "hi": result.hi,
            "wall_time": result.wall_time if config.record_timing else 0.0,
        })
        if result.individual_effects is not None:
            effects[method] = result.individual_effects
    return rows, errors, effects


def run_estimate(out_dir: str | Path, config: RunConfig) -> Path:
    """Run the configured methods over every generated realization;
    writes estimates.csv and per-cell individual-effect files."""
    out = Path(out_dir)
    manifest = _load_manifest(out)
    for m in config.methods:
        if m not in REGISTRY and m != "oracle_catt":
            raise PipelineError(
                f"unknown method {m!r}; registered methods: "
                f"{', '.join(sorted(REGISTRY))}, oracle_catt")
    effects_dir = out / "effects"
    effects_dir.mkdir(exist_ok=True)
    cells = manifest["cells"]
    if config.threads > 1:
        with ProcessPoolExecutor(max_workers=config.threads) as pool:
            cell_outputs = list(pool.map(_estimate_cell, [out] * len(cells),
                                         cells, [config.methods] * len(cells),
                                         [config] * len(cells)))
    else:
        cell_outputs = [_estimate_cell(out, c, config.methods, config)
                        for c in cells]
    all_rows, all_errors = [], []
    for cell, (rows, errors, effects) in zip(cells, cell_outputs):
        all_rows.extend(rows)
        for method, message in errors.items():
            all_errors.append({"setting": cell["setting"],
                               "replication": cell["replication"],
                               "method": method, "error": message})
        for method, vec in effects.items():
            name = f"{cell['setting']}_r{cell['replication']:03d}_{method}.csv"
            treated_rows = _treated_rows(out, cell)
            _write_matrix(effects_dir / name, ["treated_row", "tau_hat"],
                          np.column_stack([treated_rows, vec]))
    frame = pd.DataFrame(all_rows, columns=list(ESTIMATE_COLUMNS))
    frame = frame.sort_values(["setting", "replication", "method"]).reset_index(drop=True)
    _write_frame(out / "estimates.csv", frame)
    if all_errors:
        _write_frame(out / "estimate_errors.csv", pd.DataFrame(all_errors))
        if not config.allow_partial:
            raise PipelineError(
                f"{len(all_errors)} estimator failures; see estimate_errors.csv "
                "(rerun with allow_partial to accept)")
    return out / "estimates.csv"


def _treated_rows(out: Path, cell: dict) -> np.ndarray:
    _, zy = read_matrix(out / cell["path"] / "zy.csv", expect_cols=2)
    return np.where(zy[:, 0] == 1.0)[0]


# -- evaluate -----------------------------------------------------------------


def _pehe_table(out: Path, manifest: dict,
                estimates: pd.DataFrame) -> pd.DataFrame:
    rows = []
    effects_dir = out / "effects"
    for cell in manifest["cells"]:
        truth = _load_truth(out, cell)
        treated = _treated_rows(out, cell)
        tau_true = (truth["mu1"] - truth["mu0"])[treated]
        for method in estimates["method"].unique():
            name = f"{cell['setting']}_r{cell['replication']:03d}_{method}.csv"
            path = effects_dir / name
            if not path.exists():
                continue
            _, data = read_matrix(path, expect_cols=2)
            rows.append({"setting": cell["setting"],
                         "replication": cell["replication"], "method": method,
                         "pehe": pehe(data[:, 1], tau_true)})
    return pd.DataFrame(rows, columns=["setting", "replication", "method",
                                       "pehe"])


def run_evaluate(out_dir: str | Path) -> dict[str, Path]:
    """summary.csv, r2_table.csv and varcomp.json from estimates + truth."""
    out = Path(out_dir)
    manifest = _load_manifest(out)
    est_path = out / "estimates.csv"
    if not est_path.exists():
        raise PipelineError(f"missing input: {est_path} (run estimate first)")
    estimates = pd.read_csv(est_path, dtype={"setting": str})
    truths = pd.DataFrame(manifest["cells"])[["setting", "replication",
                                              "seed", "satt"]]
    truths["setting"] = truths["setting"].astype(str)
    pehe_frame = _pehe_table(out, manifest, estimates)
    _write_frame(out / "pehe.csv", pehe_frame)
    summary = summarize(estimates, truths, pehe_frame).table
    _write_frame(out / "summary.csv", summary.reset_index())
    outputs = {"summary": out / "summary.csv", "pehe": out / "pehe.csv"}
    metrics_path = out / "metrics.csv"
    if metrics_path.exists():
        metrics = pd.read_csv(metrics_path, dtype={"setting": str})
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            table = explain_performance(estimates, truths, metrics)
        _write_frame(out / "r2_table.csv", table.reset_index())
        outputs["r2_table"] = out / "r2_table.csv"
    n_methods = estimates["method"].nunique()
    n_settings = estimates["setting"].nunique()
    reps = estimates["replication"].nunique()
    if n_methods >= 2 and n_settings >= 2 and reps >= 2:
        vc = variance_components(estimates, truths)
        (out / "varcomp.json").write_text(json.dumps(vc.to_dict(), indent=1))
        outputs["varcomp"] = out / "varcomp.json"
    return outputs


def run_report(out_dir: str | Path) -> str:
    """Plain-text method ranking by RMSE (ascending; ties alphabetical)."""
    out = Path(out_dir)
    path = out / "summary.csv"
    if not path.exists():
        raise PipelineError(f"missing input: {path} (run evaluate first)")
    summary = pd.read_csv(path)
    summary = summary.sort_values(["rmse", "method"]).reset_index(drop=True)
    lines = [f"{'rank':>4}  {'method':<20} {'rmse':>9} {'bias':>9} "
             f"{'coverage':>9} {'len':>8} {'pehe':>8} {'time_s':>8}"]
    for i, row in summary.iterrows():
        pehe_txt = f"{row['pehe']:8.3f}" if np.isfinite(row["pehe"]) else "       -"
        lines.append(
            f"{i + 1:>4}  {row['method']:<20} {row['rmse']:9.4f} "
            f"{row['bias']:+9.4f} {row['coverage']:9.3f} "
            f"{row['interval_length']:8.3f} {pehe_txt} "
            f"{row['mean_wall_time']:8.2f}")
    text = "\n".join(lines) + "\n"
    (out / "report.txt").write_text(text)
    return text
