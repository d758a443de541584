"""Synthetic covariate tables.

The benchmark needs an observational-style covariate matrix with mixed
column types (categorical, binary, count, continuous) and non-trivial
cross-correlations.  The original study data cannot be shipped, so tables
are drawn from a Gaussian copula: a latent multivariate normal with a
configurable correlation matrix is pushed through the inverse CDF of each
column's marginal.  The default marginal parameters and the block
correlation are stand-ins chosen for plausibility, not calibrated claims.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np
from scipy import stats

from .rng import rng_for

__all__ = [
    "ColumnSchema",
    "CovariateTable",
    "block_correlation",
    "default_schema",
    "desk_schema",
    "generate_covariates",
    "standardize",
]

ColumnKind = Literal["categorical", "binary", "count", "continuous"]

# Clip bound for the standardized view; values beyond the 1st-99th
# percentile map outside [-1, 1] and are winsorized here.
CLIP = 1.5


@dataclass(frozen=True)
class ColumnSchema:
    """Marginal description of one covariate column.

    parameters by kind:
      categorical: {"probs": [p_0, ..., p_{k-1}]}, k >= 3
      binary:      {"p": success probability}
      count:       {"rate": Poisson rate}
      continuous:  {"dist": "normal"|"lognormal", "loc": ..., "scale": ...}
    """

    name: str
    kind: ColumnKind
    params: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind == "categorical":
            probs = np.asarray(self.params["probs"], dtype=float)
            if len(probs) < 3:
                raise ValueError(f"{self.name}: categorical needs >= 3 levels")
            if np.any(probs <= 0) or np.any(probs >= 1):
                raise ValueError(f"{self.name}: level probabilities must lie in (0,1)")
            if abs(probs.sum() - 1.0) > 1e-9:
                raise ValueError(f"{self.name}: level probabilities must sum to 1")
        elif self.kind == "binary":
            p = float(self.params["p"])
            if not 0.0 < p < 1.0:
                raise ValueError(f"{self.name}: success probability must lie in (0,1)")
        elif self.kind == "count":
            if float(self.params["rate"]) <= 0:
                raise ValueError(f"{self.name}: rate must be positive")
        elif self.kind == "continuous":
            if float(self.params["scale"]) <= 0:
                raise ValueError(f"{self.name}: scale must be positive")
        else:
            raise ValueError(f"{self.name}: unknown kind {self.kind!r}")

    @property
    def n_levels(self) -> int:
        return len(self.params["probs"]) if self.kind == "categorical" else 0

    def mean(self) -> float:
        """Analytic mean of the marginal (used by calibration tests)."""
        if self.kind == "categorical":
            probs = np.asarray(self.params["probs"], dtype=float)
            return float(np.dot(np.arange(len(probs)), probs))
        if self.kind == "binary":
            return float(self.params["p"])
        if self.kind == "count":
            return float(self.params["rate"])
        loc, scale = float(self.params["loc"]), float(self.params["scale"])
        if self.params["dist"] == "lognormal":
            return float(np.exp(loc + scale**2 / 2.0))
        return loc

    def inverse_cdf(self, u: np.ndarray) -> np.ndarray:
        """Map uniforms in (0,1) through the marginal quantile function."""
        if self.kind == "categorical":
            cum = np.cumsum(self.params["probs"])
            return np.searchsorted(cum, u, side="right").astype(float)
        if self.kind == "binary":
            return (u > 1.0 - float(self.params["p"])).astype(float)
        if self.kind == "count":
            return stats.poisson.ppf(u, float(self.params["rate"]))
        loc, scale = float(self.params["loc"]), float(self.params["scale"])
        z = stats.norm.ppf(u)
        if self.params["dist"] == "lognormal":
            return np.exp(loc + scale * z)
        return loc + scale * z

    def to_dict(self) -> dict:
        return {"name": self.name, "kind": self.kind, "params": self.params}

    @staticmethod
    def from_dict(d: dict) -> "ColumnSchema":
        return ColumnSchema(d["name"], d["kind"], d["params"])


@dataclass(frozen=True)
class CovariateTable:
    """Immutable n x p covariate matrix with its column schemas.

    ``values`` holds raw draws (categorical columns as integer codes).
    ``standardized()`` returns the one-hot expanded view scaled to roughly
    [-1, 1]; this is the design every downstream consumer sees.
    """

    columns: tuple[ColumnSchema, ...]
    values: np.ndarray

    def __post_init__(self) -> None:
        if self.values.ndim != 2 or self.values.shape[0] < 1:
            raise ValueError("values must be a non-empty 2-d array")
        if self.values.shape[1] != len(self.columns):
            raise ValueError("column count does not match schema")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("covariate table contains non-finite values")
        self.values.setflags(write=False)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]

    def standardized(self) -> np.ndarray:
        return standardize(self)

    def standardized_names(self) -> list[str]:
        """Column names of the standardized (one-hot expanded) view."""
        names: list[str] = []
        for j, col in enumerate(self.columns):
            if col.kind == "categorical":
                names.extend(f"{col.name}_lvl{k}" for k in range(col.n_levels))
            else:
                names.append(col.name)
        return names

    def to_csv(self, path) -> None:
        header = ",".join(c.name for c in self.columns)
        np.savetxt(path, self.values, delimiter=",", header=header,
                   comments="", fmt="%.17g")

    def schema_json(self) -> str:
        return json.dumps([c.to_dict() for c in self.columns], indent=1)


def default_schema() -> list[ColumnSchema]:
    """The paper-scale covariate profile: 58 columns.

    3 categorical, 5 binary, 27 count, 23 continuous, with fixed marginal
    parameters spread over plausible ranges (count rates in [1, 20],
    continuous columns a mix of normal and right-skewed lognormal).
    """
    cols: list[ColumnSchema] = []
    cat_probs = [
        [0.5, 0.3, 0.2],
        [0.4, 0.3, 0.2, 0.1],
        [0.3, 0.25, 0.2, 0.15, 0.1],
    ]
    for i, probs in enumerate(cat_probs):
        cols.append(ColumnSchema(f"cat_{i + 1}", "categorical", {"probs": probs}))
    bin_p = [0.15, 0.3, 0.5, 0.65, 0.85]
    for i, p in enumerate(bin_p):
        cols.append(ColumnSchema(f"bin_{i + 1}", "binary", {"p": p}))
    # 27 count columns with rates swept across [1, 20]
    rates = np.round(np.linspace(1.0, 20.0, 27), 2)
    for i, r in enumerate(rates):
        cols.append(ColumnSchema(f"cnt_{i + 1}", "count", {"rate": float(r)}))
    # 23 continuous: 15 normal with varied location/scale, 8 lognormal
    locs = np.round(np.linspace(-2.0, 12.0, 15), 2)
    scales = np.round(np.linspace(0.5, 4.0, 15), 2)
    for i, (lo, sc) in enumerate(zip(locs, scales)):
        cols.append(ColumnSchema(
            f"con_{i + 1}", "continuous",
            {"dist": "normal", "loc": float(lo), "scale": float(sc)}))
    log_locs = np.round(np.linspace(0.0, 1.4, 8), 2)
    for i, lo in enumerate(log_locs):
        cols.append(ColumnSchema(
            f"con_{i + 16}", "continuous",
            {"dist": "lognormal", "loc": float(lo), "scale": 0.6}))
    assert len(cols) == 58
    return cols


def desk_schema() -> list[ColumnSchema]:
    """Desk-scale profile: 20 columns (1 categorical, 2 binary, 9 count,
    8 continuous), proportional to the paper-scale mix."""
    cols: list[ColumnSchema] = [
        ColumnSchema("cat_1", "categorical", {"probs": [0.5, 0.3, 0.2]}),
        ColumnSchema("bin_1", "binary", {"p": 0.3}),
        ColumnSchema("bin_2", "binary", {"p": 0.6}),
    ]
    for i, r in enumerate(np.round(np.linspace(1.0, 18.0, 9), 2)):
        cols.append(ColumnSchema(f"cnt_{i + 1}", "count", {"rate": float(r)}))
    for i, (lo, sc) in enumerate(zip(np.linspace(-1.0, 8.0, 5), np.linspace(0.8, 3.0, 5))):
        cols.append(ColumnSchema(
            f"con_{i + 1}", "continuous",
            {"dist": "normal", "loc": round(float(lo), 2), "scale": round(float(sc), 2)}))
    for i, lo in enumerate([0.2, 0.6, 1.0]):
        cols.append(ColumnSchema(
            f"con_{i + 6}", "continuous",
            {"dist": "lognormal", "loc": lo, "scale": 0.6}))
    assert len(cols) == 20
    return cols


def block_correlation(p: int, n_blocks: int = 6, within: float = 0.4,
                      cross: float = 0.1) -> np.ndarray:
    """Block-structured correlation: ``within`` inside contiguous blocks,
    ``cross`` between blocks, unit diagonal.  Positive definite for the
    defaults (cross < within < 1)."""
    if not 0.0 <= cross <= within < 1.0:
        raise ValueError("need 0 <= cross <= within < 1")
    sizes = [p // n_blocks + (1 if i < p % n_blocks else 0) for i in range(n_blocks)]
    corr = np.full((p, p), cross)
    start = 0
    for s in sizes:
        corr[start:start + s, start:start + s] = within
        start += s
    np.fill_diagonal(corr, 1.0)
    return corr


def _check_positive_definite(corr: np.ndarray) -> np.ndarray:
    corr = np.asarray(corr, dtype=float)
    if corr.ndim != 2 or corr.shape[0] != corr.shape[1]:
        raise ValueError("correlation must be square")
    if not np.allclose(corr, corr.T, atol=1e-12):
        raise ValueError("correlation must be symmetric")
    if not np.allclose(np.diag(corr), 1.0, atol=1e-12):
        raise ValueError("correlation must have unit diagonal")
    try:
        return np.linalg.cholesky(corr)
    except np.linalg.LinAlgError:
        # Name the first non-positive leading principal minor for the caller.
        for k in range(1, corr.shape[0] + 1):
            if np.linalg.det(corr[:k, :k]) <= 0:
                raise ValueError(
                    f"correlation is not positive definite: leading minor of "
                    f"order {k} is non-positive") from None
        raise


def generate_covariates(schema: Sequence[ColumnSchema], n: int,
                        correlation: np.ndarray | None = None,
                        seed: int = 0) -> CovariateTable:
    """Draw an n x p table via a Gaussian copula.

    A latent N(0, correlation) draw is mapped coordinate-wise through
    Phi, then through each column's marginal quantile function.  Identical
    (schema, n, correlation, seed) reproduce bit-identical tables.
    """
    if n < 2:
        raise ValueError("n must be >= 2")
    p = len(schema)
    if correlation is None:
        correlation = block_correlation(p)
    chol = _check_positive_definite(correlation)
    if correlation.shape[0] != p:
        raise ValueError("correlation size does not match schema")
    rng = rng_for("covariates", int(seed))
    latent = rng.standard_normal((n, p)) @ chol.T
    u = stats.norm.cdf(latent)
    # Guard the open-interval requirement of the quantile functions.
    u = np.clip(u, 1e-12, 1.0 - 1e-12)
    values = np.empty((n, p), dtype=float)
    for j, col in enumerate(schema):
        values[:, j] = col.inverse_cdf(u[:, j])
    return CovariateTable(tuple(schema), values)


def _scale_column(x: np.ndarray) -> np.ndarray:
    """Affinely map the 1st-99th percentile range of x into [-1, 1] and
    winsorize at +-CLIP.  Constant columns map to all zeros."""
    lo, hi = np.percentile(x, [1.0, 99.0])
    if hi - lo < 1e-12:
        return np.zeros_like(x)
    scaled = (2.0 * x - (hi + lo)) / (hi - lo)
    return np.clip(scaled, -CLIP, CLIP)


def standardize(table: CovariateTable) -> np.ndarray:
    """One-hot expand categorical columns, then scale every column so its
    1st-99th percentile range maps into [-1, 1] (clipped at +-1.5)."""
    blocks: list[np.ndarray] = []
    for j, col in enumerate(table.columns):
        x = table.values[:, j]
        if col.kind == "categorical":
            for level in range(col.n_levels):
                blocks.append(_scale_column((x == level).astype(float)))
        else:
            blocks.append(_scale_column(x))
    return np.column_stack(blocks)
