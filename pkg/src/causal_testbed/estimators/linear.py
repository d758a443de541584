"""Mean-difference and regression-based estimators."""

from __future__ import annotations

import numpy as np

from ..numerics import Z975, add_intercept, lstsq_min_norm, sandwich_se, \
    welch_interval
from .base import EstimateResult, EstimationError, EstimatorConfig, \
    EstimatorInput, bootstrap_interval

__all__ = ["diff_in_means", "ols_adjust", "regression_ra"]


def diff_in_means(inp: EstimatorInput, config: EstimatorConfig) -> EstimateResult:
    """Raw group-mean difference with a Welch interval.  A floor, not a
    serious contender."""
    est, lo, hi = welch_interval(inp.y[inp.treated], inp.y[inp.controls])
    return EstimateResult("diff_in_means", est, lo, hi)


def ols_adjust(inp: EstimatorInput, config: EstimatorConfig) -> EstimateResult:
    """Single regression of y on (1, z, x); the z coefficient with an HC1
    sandwich interval."""
    base = add_intercept(inp.x)
    augmented = np.column_stack([base[:, :1], inp.z, inp.x])
    if np.linalg.matrix_rank(augmented) <= np.linalg.matrix_rank(base):
        raise EstimationError(
            "treatment indicator is collinear with the covariates")
    coef = lstsq_min_norm(augmented, inp.y)
    resid = inp.y - augmented @ coef
    se = sandwich_se(augmented, resid)[1]
    est = float(coef[1])
    return EstimateResult("ols_adjust", est, est - Z975 * se, est + Z975 * se,
                          diagnostics={"se": float(se)})


def _ra_point(inp: EstimatorInput, seed: int) -> float:
    xc, yc = inp.x[inp.controls], inp.y[inp.controls]
    mu0_hat = add_intercept(inp.x[inp.treated]) @ lstsq_min_norm(add_intercept(xc), yc)
    return float(np.mean(inp.y[inp.treated] - mu0_hat))


def regression_ra(inp: EstimatorInput, config: EstimatorConfig) -> EstimateResult:
    """Regression adjustment with separate group models.

    Control outcomes are regressed on the covariates; fitted control
    responses are imputed for the treated, giving individual effects and
    their mean.  Interval by stratified percentile bootstrap.
    """
    p = inp.p
    if inp.n_treated <= p + 2 or (inp.n - inp.n_treated) <= p + 2:
        raise EstimationError(
            f"regression adjustment needs both groups larger than p+2={p + 2}")
    xc, yc = inp.x[inp.controls], inp.y[inp.controls]
    beta0 = lstsq_min_norm(add_intercept(xc), yc)
    mu0_hat = add_intercept(inp.x[inp.treated]) @ beta0
    effects = inp.y[inp.treated] - mu0_hat
    est = float(effects.mean())
    lo, hi, diag = bootstrap_interval(_ra_point, inp, config.bootstrap_b,
                                      config.seed, config.normal_interval)
    return EstimateResult("regression_ra", est, lo, hi,
                          individual_effects=effects, diagnostics=diag)
