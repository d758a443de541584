"""Entropy balancing with a flexible outcome-model constraint.

The calibration step reweights controls so that their weighted means of
every covariate column, and of a boosted-tree fit of the control response
surface, match the treated means exactly.  Weights take the exponential
tilting form that minimally perturbs the propensity-based base weights;
the dual is solved by a damped Newton iteration.
"""

from __future__ import annotations

import numpy as np

from .base import EstimateResult, EstimationError, EstimatorConfig, \
    EstimatorInput, bootstrap_interval
from .boosting import fit_boosted_cv, fit_boosted_fixed
from .propensity import att_weights, _fitted_propensity

__all__ = ["entropy_balance_dr", "entropy_balance_weights"]

BALANCE_TOL = 1e-9         # Newton stopping rule on constraint violations
BALANCE_REPORT_TOL = 1e-8  # contract: violations at or below this after success
MAX_NEWTON_ITER = 500


def entropy_balance_weights(constraints: np.ndarray, target: np.ndarray,
                            base_weights: np.ndarray,
                            tol: float = BALANCE_TOL,
                            max_iter: int = MAX_NEWTON_ITER) -> np.ndarray:
    """Exponential-tilting weights: minimize KL(w || base) subject to
    constraints^T w = target and sum(w) = 1.

    Solves the convex dual in lambda by Newton's method with backtracking.
    Raises when the iteration cap is hit or the target is infeasible
    (outside the convex hull of the constraint rows).
    """
    constraints = np.asarray(constraints, dtype=float)
    target = np.asarray(target, dtype=float)
    base_weights = np.asarray(base_weights, dtype=float)
    n, k = constraints.shape
    if len(target) != k or len(base_weights) != n:
        raise ValueError("constraint, target and weight shapes disagree")
    if np.any(base_weights <= 0):
        raise ValueError("base weights must be strictly positive")
    # standardize columns for conditioning; violations are still checked in
    # the original units
    mu = constraints.mean(axis=0)
    sd = constraints.std(axis=0)
    sd[sd < 1e-12] = 1.0
    cs = (constraints - mu) / sd
    ts = (target - mu) / sd
    log_base = np.log(base_weights / base_weights.sum())
    lam = np.zeros(k)

    def dual(l: np.ndarray) -> float:
        eta = log_base + cs @ l
        m = eta.max()
        return float(m + np.log(np.sum(np.exp(eta - m))) - l @ ts)

    for _ in range(max_iter):
        eta = log_base + cs @ lam
        eta -= eta.max()
        w = np.exp(eta)
        w /= w.sum()
        violation = float(np.abs(constraints.T @ w - target).max())
        if violation <= tol:
            return w
        grad = cs.T @ w - ts
        mean_c = cs.T @ w
        hess = (cs * w[:, None]).T @ cs - np.outer(mean_c, mean_c)
        hess[np.diag_indices_from(hess)] += 1e-12
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(hess, grad, rcond=None)[0]
        f0 = dual(lam)
        t = 1.0
        while t > 1e-13 and dual(lam - t * step) > f0 - 1e-4 * t * float(grad @ step):
            t *= 0.5
        if t <= 1e-13 or not np.all(np.isfinite(lam - t * step)):
            # the line search has stalled: either we are at the float-level
            # optimum (fine if inside the contract tolerance) or the target
            # is outside the convex hull and lambda is diverging
            if violation <= BALANCE_REPORT_TOL:
                return w
            worst = int(np.argmax(np.abs(constraints.T @ w - target)))
            raise EstimationError(
                f"balance is infeasible: constraint column {worst} cannot be "
                f"matched (violation {violation:.3e})")
        lam = lam - t * step
    eta = log_base + cs @ lam
    eta -= eta.max()
    w = np.exp(eta)
    w /= w.sum()
    violation = float(np.abs(constraints.T @ w - target).max())
    if violation <= BALANCE_REPORT_TOL:
        return w
    raise EstimationError(
        f"entropy balancing did not converge in {max_iter} iterations; "
        f"max constraint violation {violation:.3e}")


def _balance_point(inp: EstimatorInput, seed: int, *, config: EstimatorConfig,
                   boost_rounds: int | None) -> tuple[float, float]:
    """Balanced-weight estimate; returns (estimate, max violation)."""
    e_hat = _fitted_propensity(inp, config.propensity_truncation)
    base = att_weights(e_hat, inp.z)[inp.controls]
    xc, yc = inp.x[inp.controls], inp.y[inp.controls]
    xt, yt = inp.x[inp.treated], inp.y[inp.treated]
    if boost_rounds is None:
        model = fit_boosted_cv(xc, yc, seed=seed,
                               max_rounds=config.boost_max_rounds,
                               cv_folds=config.boost_cv_folds,
                               learning_rate=config.boost_learning_rate,
                               max_depth=config.boost_max_depth).model
    else:
        model = fit_boosted_fixed(xc, yc, seed=seed, rounds=boost_rounds,
                                  learning_rate=config.boost_learning_rate,
                                  max_depth=config.boost_max_depth)
    mu0_c = model.predict(xc)
    mu0_t = model.predict(xt)
    constraints = np.column_stack([xc, mu0_c])
    target = np.concatenate([xt.mean(axis=0), [mu0_t.mean()]])
    w = entropy_balance_weights(constraints, target, base)
    violation = float(np.abs(constraints.T @ w - target).max())
    return float(yt.mean() - np.dot(w, yc)), violation


def entropy_balance_dr(inp: EstimatorInput, config: EstimatorConfig) -> EstimateResult:
    """Doubly robust weighting: exact mean balance on every covariate and
    on the boosted control-response fit, starting from ATT base weights."""
    est, violation = _balance_point(inp, config.seed, config=config,
                                    boost_rounds=None)
    if violation > BALANCE_REPORT_TOL:
        raise EstimationError(
            f"balance violation {violation:.3e} above {BALANCE_REPORT_TOL}")
    def point(s_inp, s_seed):
        return _balance_point(s_inp, s_seed, config=config,
                              boost_rounds=config.boost_bootstrap_rounds)[0]
    lo, hi, diag = bootstrap_interval(point, inp, config.bootstrap_b,
                                      config.seed, config.normal_interval)
    diag["max_balance_violation"] = violation
    return EstimateResult("entropy_balance_dr", est, lo, hi, diagnostics=diag)
