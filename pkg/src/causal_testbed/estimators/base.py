"""Estimator interfaces: inputs, results, configuration, bootstrap.

Estimators see only observables: the standardized one-hot design, the
treatment vector, and the outcome.  There is no channel for oracle fields
here; everything truth-based lives behind the harness.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from ..rng import derive_seed, rng_for

__all__ = ["EstimationError", "EstimateResult", "EstimatorConfig",
           "EstimatorInput", "bootstrap_interval"]

Z975 = 1.959963984540054


class EstimationError(RuntimeError):
    pass


@dataclass(frozen=True)
class EstimatorInput:
    """Observable data for one realization."""

    x: np.ndarray   # n x p standardized design (one-hot expanded)
    z: np.ndarray   # binary treatment
    y: np.ndarray   # outcome

    def __post_init__(self) -> None:
        x = np.asarray(self.x, dtype=float)
        z = np.asarray(self.z, dtype=float)
        y = np.asarray(self.y, dtype=float)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "y", y)
        if x.ndim != 2 or len(z) != x.shape[0] or len(y) != x.shape[0]:
            raise ValueError("x, z, y must share their first dimension")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValueError("inputs must be finite")
        if not np.all((z == 0.0) | (z == 1.0)):
            raise ValueError("z must be binary")
        if not ((z == 1.0).any() and (z == 0.0).any()):
            raise ValueError("both treatment groups must be nonempty")

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    @property
    def treated(self) -> np.ndarray:
        return self.z == 1.0

    @property
    def controls(self) -> np.ndarray:
        return self.z == 0.0

    @property
    def n_treated(self) -> int:
        return int(self.z.sum())

    def subset(self, idx: np.ndarray) -> "EstimatorInput":
        return EstimatorInput(self.x[idx], self.z[idx], self.y[idx])


@dataclass(frozen=True)
class EstimatorConfig:
    """Per-call estimator settings; everything is seed-deterministic."""

    seed: int = 0
    bootstrap_b: int = 250
    normal_interval: bool = False      # normal approximation instead of percentile
    propensity_truncation: tuple[float, float] = (0.01, 0.99)
    n_strata: int = 5
    boost_max_rounds: int = 2000
    boost_cv_folds: int = 5
    boost_learning_rate: float = 0.05
    boost_max_depth: int = 3
    boost_bootstrap_rounds: int = 200  # fixed rounds inside bootstrap refits
    min_flexible_n: int = 100

    def reseeded(self, seed: int) -> "EstimatorConfig":
        return replace(self, seed=int(seed))


@dataclass
class EstimateResult:
    method: str
    satt_hat: float
    lo: float
    hi: float
    individual_effects: np.ndarray | None = None
    wall_time: float = 0.0
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.lo <= self.satt_hat <= self.hi:
            # guard against inverted intervals from numeric noise
            self.lo, self.hi = (min(self.lo, self.satt_hat),
                                max(self.hi, self.satt_hat))


def bootstrap_interval(point_fn: Callable[[EstimatorInput, int], float],
                       inp: EstimatorInput, b: int, seed: int,
                       normal: bool = False) -> tuple[float, float, dict]:
    """Stratified row bootstrap of a point estimator.

    Resamples treated and control rows separately (preserving group
    sizes), re-runs ``point_fn`` with a derived per-resample seed, and
    returns a percentile interval (or a normal-approximation one).  More
    than 10% resample failures is an error.
    """
    if b < 2:
        raise ValueError("bootstrap needs at least 2 resamples")
    t_idx = np.where(inp.z == 1.0)[0]
    c_idx = np.where(inp.z == 0.0)[0]
    estimates = []
    failures = 0
    for i in range(b):
        rng = rng_for("bootstrap", int(seed), i)
        idx = np.concatenate([
            t_idx[rng.integers(0, len(t_idx), len(t_idx))],
            c_idx[rng.integers(0, len(c_idx), len(c_idx))],
        ])
        try:
            estimates.append(point_fn(inp.subset(idx), derive_seed(seed, "rs", i)))
        except Exception as exc:  # noqa: BLE001 - failures are counted
            failures += 1
            last_error = exc
    if failures > 0.1 * b:
        raise EstimationError(
            f"bootstrap failed in {failures}/{b} resamples; last error: {last_error}")
    est = np.asarray(estimates, dtype=float)
    if normal:
        center = float(est.mean())
        half = Z975 * float(est.std(ddof=1)) if len(est) > 1 else 0.0
        lo, hi = center - half, center + half
    else:
        lo, hi = (float(v) for v in np.percentile(est, [2.5, 97.5]))
    return lo, hi, {"bootstrap_b": b, "bootstrap_failures": failures}
