"""Propensity-score estimators: weighting, double robustness, matching,
stratification."""

from __future__ import annotations

import warnings

import numpy as np

from ..numerics import Z975, add_intercept, fit_logistic, lstsq_min_norm, \
    sandwich_se, welch_interval
from .base import EstimateResult, EstimationError, EstimatorConfig, \
    EstimatorInput, bootstrap_interval

__all__ = ["att_weights", "iptw_att", "ipw_ra_dr", "ps_stratify", "psm_match"]


def _fitted_propensity(inp: EstimatorInput,
                       truncation: tuple[float, float]) -> np.ndarray:
    fit = fit_logistic(inp.x, inp.z)
    if not fit.converged:
        raise EstimationError("propensity model did not converge")
    return np.clip(fit.predict(inp.x), truncation[0], truncation[1])


def att_weights(e_hat: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Treated get weight 1; controls get odds e/(1-e), normalized to sum
    to one within the control group."""
    w = np.where(z == 1.0, 1.0, e_hat / (1.0 - e_hat))
    controls = z == 0.0
    total = w[controls].sum()
    if total <= 0:
        raise EstimationError("all control weights vanished")
    w[controls] = w[controls] / total
    return w


def _iptw_point(inp: EstimatorInput, seed: int, *,
                truncation: tuple[float, float]) -> float:
    e_hat = _fitted_propensity(inp, truncation)
    w = att_weights(e_hat, inp.z)
    controls = inp.controls
    return float(inp.y[inp.treated].mean() - np.dot(w[controls], inp.y[controls]))


def iptw_att(inp: EstimatorInput, config: EstimatorConfig) -> EstimateResult:
    """Inverse-probability weighting with a logistic propensity model."""
    e_hat = _fitted_propensity(inp, config.propensity_truncation)
    w = att_weights(e_hat, inp.z)
    controls = inp.controls
    est = float(inp.y[inp.treated].mean() - np.dot(w[controls], inp.y[controls]))
    wc = w[controls]
    ess = 1.0 / float(np.sum(wc**2))
    diag = {"weight_max": float(wc.max()), "weight_min": float(wc.min()),
            "control_ess": ess}
    if ess < 10:
        warnings.warn(f"effective control sample size {ess:.1f} < 10",
                      RuntimeWarning, stacklevel=2)
    def point(s_inp, s_seed):
        return _iptw_point(s_inp, s_seed, truncation=config.propensity_truncation)
    lo, hi, bdiag = bootstrap_interval(point, inp, config.bootstrap_b,
                                       config.seed, config.normal_interval)
    diag.update(bdiag)
    return EstimateResult("iptw_att", est, lo, hi, diagnostics=diag)


def _weighted_ols_mu0(inp: EstimatorInput, w: np.ndarray) -> np.ndarray:
    """Control outcome model by weighted least squares; returns fitted
    values for every row."""
    controls = inp.controls
    xc = add_intercept(inp.x[controls])
    sw = np.sqrt(w[controls])
    beta = lstsq_min_norm(xc * sw[:, None], inp.y[controls] * sw)
    return add_intercept(inp.x) @ beta


def _dr_point(inp: EstimatorInput, seed: int, *,
              truncation: tuple[float, float]) -> float:
    e_hat = _fitted_propensity(inp, truncation)
    w = att_weights(e_hat, inp.z)
    mu0 = _weighted_ols_mu0(inp, w)
    treated, controls = inp.treated, inp.controls
    direct = float(np.mean(inp.y[treated] - mu0[treated]))
    correction = float(np.dot(w[controls], inp.y[controls] - mu0[controls]))
    return direct - correction


def ipw_ra_dr(inp: EstimatorInput, config: EstimatorConfig) -> EstimateResult:
    """Doubly robust combination: ATT-weighted outcome regression for the
    controls plus a weighted residual correction."""
    e_hat = _fitted_propensity(inp, config.propensity_truncation)
    w = att_weights(e_hat, inp.z)
    mu0 = _weighted_ols_mu0(inp, w)
    treated, controls = inp.treated, inp.controls
    effects = inp.y[treated] - mu0[treated]
    est = float(effects.mean()) - float(np.dot(w[controls],
                                               inp.y[controls] - mu0[controls]))
    def point(s_inp, s_seed):
        return _dr_point(s_inp, s_seed, truncation=config.propensity_truncation)
    lo, hi, diag = bootstrap_interval(point, inp, config.bootstrap_b,
                                      config.seed, config.normal_interval)
    return EstimateResult("ipw_ra_dr", est, lo, hi,
                          individual_effects=effects, diagnostics=diag)


def _within_group_nn_variance(x_logit: np.ndarray, y: np.ndarray) -> float:
    """Homoskedastic residual variance from nearest-neighbor pairs inside
    one group: half the mean squared difference between a unit's outcome
    and its nearest neighbor's."""
    if len(y) < 2:
        return 0.0
    d = np.abs(x_logit[:, None] - x_logit[None, :])
    np.fill_diagonal(d, np.inf)
    nn = np.argmin(d, axis=1)
    return float(0.5 * np.mean((y - y[nn]) ** 2))


def psm_match(inp: EstimatorInput, config: EstimatorConfig) -> EstimateResult:
    """1-nearest-neighbor matching with replacement on the propensity logit.

    Ties break toward the lowest control row index.  The interval uses a
    matched-pair variance in the Abadie-Imbens style with within-group
    nearest-neighbor variance estimates.
    """
    e_hat = _fitted_propensity(inp, config.propensity_truncation)
    logit = np.log(e_hat / (1.0 - e_hat))
    treated_idx = np.where(inp.treated)[0]
    control_idx = np.where(inp.controls)[0]
    lt, lc = logit[treated_idx], logit[control_idx]
    # np.argmin picks the first minimum, i.e. the lowest row index
    match_pos = np.argmin(np.abs(lt[:, None] - lc[None, :]), axis=1)
    matched_controls = control_idx[match_pos]
    pair_diff = inp.y[treated_idx] - inp.y[matched_controls]
    est = float(pair_diff.mean())
    n_t = len(treated_idx)
    counts = np.bincount(match_pos, minlength=len(control_idx)).astype(float)
    var_t = _within_group_nn_variance(lt, inp.y[treated_idx])
    var_c = _within_group_nn_variance(lc, inp.y[control_idx])
    v = (n_t * var_t + float(np.sum(counts**2)) * var_c) / n_t**2
    half = Z975 * float(np.sqrt(max(v, 0.0)))
    diag = {"max_control_reuse": int(counts.max()),
            "distinct_controls_used": int((counts > 0).sum()),
            "matches": [int(c) for c in matched_controls]}
    return EstimateResult("psm_match", est, est - half, est + half,
                          diagnostics=diag)


def _stratum_estimate(inp: EstimatorInput, rows: np.ndarray) -> tuple[float, float]:
    """Within-stratum adjusted effect and variance.  Falls back to a raw
    mean difference when the stratum is too small for regression."""
    x, z, y = inp.x[rows], inp.z[rows], inp.y[rows]
    n, p = x.shape
    if n >= p + 4:
        design = np.column_stack([np.ones(n), z, x])
        coef = lstsq_min_norm(design, y)
        resid = y - design @ coef
        se = sandwich_se(design, resid)[1]
        return float(coef[1]), float(se**2)
    est, lo, hi = welch_interval(y[z == 1.0], y[z == 0.0])
    se = (hi - lo) / (2.0 * Z975)
    return est, float(se**2)


def ps_stratify(inp: EstimatorInput, config: EstimatorConfig) -> EstimateResult:
    """Quantile stratification on the fitted propensity among the treated,
    with within-stratum regression adjustment.

    Strata that lack treated units or have fewer than two controls are
    collapsed into their lower neighbor (with a warning).  Estimates
    combine with treated-count weights.
    """
    e_hat = _fitted_propensity(inp, config.propensity_truncation)
    qs = np.linspace(0.0, 1.0, config.n_strata + 1)[1:-1]
    cuts = np.unique(np.quantile(e_hat[inp.treated], qs, method="midpoint"))
    labels = np.searchsorted(cuts, e_hat, side="right")
    # collapse invalid strata downward
    collapsed = False
    for s in sorted(set(labels.tolist()), reverse=True):
        rows = labels == s
        n_t = int(inp.z[rows].sum())
        n_c = int((1.0 - inp.z[rows]).sum())
        if n_t == 0 or n_c < 2:
            collapsed = True
            target = s - 1 if s > 0 else s + 1
            labels[rows] = target
    if collapsed:
        warnings.warn("collapsed degenerate propensity strata into neighbors",
                      RuntimeWarning, stacklevel=2)
    estimates, variances, weights = [], [], []
    for s in sorted(set(labels.tolist())):
        rows = np.where(labels == s)[0]
        n_t = int(inp.z[rows].sum())
        if n_t == 0:
            continue
        est_s, var_s = _stratum_estimate(inp, rows)
        estimates.append(est_s)
        variances.append(var_s)
        weights.append(n_t)
    weights_arr = np.asarray(weights, dtype=float)
    if weights_arr.sum() != inp.n_treated:
        raise EstimationError("strata treated counts do not partition the treated")
    wts = weights_arr / weights_arr.sum()
    est = float(np.dot(wts, estimates))
    var = float(np.dot(wts**2, variances))
    half = Z975 * np.sqrt(max(var, 0.0))
    diag = {"n_strata": len(estimates),
            "strata_treated_counts": [int(w) for w in weights]}
    return EstimateResult("ps_stratify", est, est - half, est + half,
                          diagnostics=diag)
