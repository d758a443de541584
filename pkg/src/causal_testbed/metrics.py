"""Dataset descriptors, split into oracle and non-oracle groups.

Twenty-five metrics describe each realization: six knob recordings, six
summaries computable from observables alone, and thirteen that need the
generating process (true propensities, potential-outcome surfaces, the
ground-truth term basis).  The non-oracle entry point takes no truth
fields at all, so the partition is enforced by the API rather than by
convention.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .dgp.build import DgpSpec
from .dgp.realize import Realization
from .numerics import fit_logistic, ols_r2
from .rng import rng_for

__all__ = [
    "MetricVector",
    "NONORACLE_METRICS",
    "ORACLE_METRICS",
    "alignment_correlation",
    "heterogeneity_sd",
    "mahalanobis_counterfactual_distance",
    "mean_imbalance",
    "metric_vector",
    "nonoracle_alignment_proxy",
    "observable_metrics",
    "oracle_metrics",
    "propensity_r2",
    "r2_linear",
    "wasserstein_distance",
]

SINKHORN_EPS = 0.05
SINKHORN_MAX_ITER = 500
SINKHORN_TOL = 1e-4
SUBSAMPLE_CAP = 500

NONORACLE_METRICS = (
    "r2_y_obs",
    "propensity_pseudo_r2",
    "alignment_proxy_r2",
    "mahalanobis_obs",
    "imbalance_obs",
    "wasserstein_obs",
)

ORACLE_METRICS = (
    "oracle_knob_treatment_nonlinearity",
    "oracle_knob_treated_pct",
    "oracle_knob_overlap",
    "oracle_knob_response_nonlinearity",
    "oracle_knob_alignment",
    "oracle_knob_heterogeneity",
    "oracle_alignment_corr",
    "oracle_mahalanobis_truth",
    "oracle_imbalance_truth",
    "oracle_wasserstein_truth",
    "oracle_r2_logit_on_obs",
    "oracle_r2_tau_on_obs",
    "oracle_r2_y_truth",
    "oracle_r2_ratio_obs_truth",
    "oracle_r2_y0_ctrl_obs",
    "oracle_r2_y0_ctrl_truth",
    "oracle_r2_y1_trt_obs",
    "oracle_r2_y1_trt_truth",
    "oracle_heterogeneity_sd",
)

_KNOB_CODES = {
    "treatment_model": {"linear": 0, "polynomial": 1, "step": 2},
    "response_model": {"linear": 0, "exponential": 1, "step": 2},
    "treatment_pct": {"low": 0, "high": 1},
    "overlap": {"penalize": 0, "full": 1},
    "alignment": {"none": 0, "low": 1, "high": 2},
    "heterogeneity": {"none": 0, "low": 1, "high": 2},
}


class MetricError(RuntimeError):
    pass


@dataclass(frozen=True)
class MetricVector:
    """Named metric map for one realization; the metric set is closed."""

    setting: str
    replication: int
    values: dict[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        expected = set(NONORACLE_METRICS) | set(ORACLE_METRICS)
        got = set(self.values)
        if got != expected:
            missing = sorted(expected - got)
            extra = sorted(got - expected)
            raise MetricError(f"metric set mismatch: missing {missing}, extra {extra}")

    def is_oracle(self, name: str) -> bool:
        return name.startswith("oracle_")

    def as_row(self) -> dict:
        row = {"setting": self.setting, "replication": self.replication}
        for name in (*NONORACLE_METRICS, *ORACLE_METRICS):
            row[name] = self.values[name]
        return row


# -- elementary metrics -------------------------------------------------


def r2_linear(y: np.ndarray, design: np.ndarray) -> float:
    """Least-squares R-squared of y on [1, design] (minimum-norm on
    rank-deficient designs; zero-variance y gives 0)."""
    y = np.asarray(y, dtype=float)
    design = np.asarray(design, dtype=float)
    if design.shape[0] != len(y):
        raise ValueError("design and y lengths differ")
    if len(y) < design.shape[1] + 2:
        raise ValueError("need at least p + 2 observations")
    return ols_r2(y, design)


def propensity_r2(z: np.ndarray, design: np.ndarray) -> float:
    """McFadden pseudo R-squared of an IRLS logistic fit of z on design.

    Complete separation returns 1.0 and emits a warning.
    """
    fit = fit_logistic(design, z)
    if fit.separated:
        warnings.warn("propensity model separated the classes exactly",
                      RuntimeWarning, stacklevel=2)
    return fit.pseudo_r2


def _pooled_whitener(design: np.ndarray, z: np.ndarray) -> np.ndarray:
    t, c = design[z == 1.0], design[z == 0.0]
    n_t, n_c = len(t), len(c)
    cov = ((n_t - 1) * np.cov(t, rowvar=False, ddof=1)
           + (n_c - 1) * np.cov(c, rowvar=False, ddof=1)) / max(n_t + n_c - 2, 1)
    cov = np.atleast_2d(cov)
    jitter = 1e-6 * max(float(np.trace(cov)) / cov.shape[0], 1e-12)
    cov = cov + jitter * np.eye(cov.shape[0])
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        # name the most collinear columns via the smallest singular vector
        _, s, vt = np.linalg.svd(cov)
        v = np.abs(vt[-1])
        worst = np.argsort(v)[::-1][:3]
        raise MetricError(
            "pooled covariance is singular even after jitter; most collinear "
            f"columns: {sorted(int(w) for w in worst)}") from None


def mahalanobis_counterfactual_distance(design: np.ndarray, z: np.ndarray) -> float:
    """Mean over all units of the Mahalanobis distance (pooled covariance)
    to the nearest unit of the opposite group."""
    design = np.asarray(design, dtype=float)
    z = np.asarray(z, dtype=float)
    if not ((z == 1.0).any() and (z == 0.0).any()):
        raise ValueError("both groups must be nonempty")
    chol = _pooled_whitener(design, z)
    w = solve_triangular(chol, design.T, lower=True).T
    t, c = w[z == 1.0], w[z == 0.0]
    d2 = (np.sum(t**2, axis=1)[:, None] + np.sum(c**2, axis=1)[None, :]
          - 2.0 * t @ c.T)
    d2 = np.clip(d2, 0.0, None)
    nearest_t = np.sqrt(d2.min(axis=1))   # treated -> nearest control
    nearest_c = np.sqrt(d2.min(axis=0))   # control -> nearest treated
    return float(np.concatenate([nearest_t, nearest_c]).mean())


def mean_imbalance(design: np.ndarray, z: np.ndarray) -> float:
    """Euclidean norm of the treated-minus-control mean difference."""
    design = np.asarray(design, dtype=float)
    z = np.asarray(z, dtype=float)
    if not ((z == 1.0).any() and (z == 0.0).any()):
        raise ValueError("both groups must be nonempty")
    diff = design[z == 1.0].mean(axis=0) - design[z == 0.0].mean(axis=0)
    return float(np.linalg.norm(diff))


def _logsumexp_rows(m: np.ndarray) -> np.ndarray:
    mx = np.max(m, axis=1, keepdims=True)
    return (mx + np.log(np.sum(np.exp(m - mx), axis=1, keepdims=True))).ravel()


def _entropic_ot(cost: np.ndarray, eps: float, max_iter: int, tol: float) -> float:
    """Entropic OT between uniform marginals; log-domain updates with an
    annealed regularization path, rounded to a feasible plan at the end."""
    n, m = cost.shape
    a = np.full(n, 1.0 / n)
    b = np.full(m, 1.0 / m)
    loga, logb = np.log(a), np.log(b)
    f = np.zeros(n)
    g = np.zeros(m)
    stages: list[float] = []
    e = 1.0
    while e > eps * 1.4:
        stages.append(e)
        e *= 0.7
    stages.append(eps)
    used = 0
    err = np.inf
    plan = np.outer(a, b)
    for si, e in enumerate(stages):
        kernel = -cost / e
        last = si == len(stages) - 1
        stage_tol = tol if last else 10.0 * tol
        budget = max_iter - used if last else min(40, max_iter - used)
        for _ in range(max(budget, 0)):
            used += 1
            f = -e * _logsumexp_rows(kernel + (g / e + logb)[None, :])
            g = -e * _logsumexp_rows(kernel.T + (f / e + loga)[None, :])
            logp = (f[:, None] + g[None, :]) / e + kernel + loga[:, None] + logb[None, :]
            plan = np.exp(logp)
            err = max(float(np.abs(plan.sum(1) - a).max()),
                      float(np.abs(plan.sum(0) - b).max()))
            if err < stage_tol:
                break
    if err >= tol:
        raise MetricError(
            f"transport solver did not converge: marginal error {err:.2e} "
            f"after {used} iterations (tolerance {tol})")
    # round to an exactly feasible plan before reading off the cost
    r = np.minimum(a / np.maximum(plan.sum(1), 1e-300), 1.0)
    plan = plan * r[:, None]
    c = np.minimum(b / np.maximum(plan.sum(0), 1e-300), 1.0)
    plan = plan * c[None, :]
    da, db = a - plan.sum(1), b - plan.sum(0)
    s = float(da.sum())
    if s > 1e-15:
        plan = plan + np.outer(da, db) / s
    return float((plan * cost).sum())


def _sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d2 = (np.sum(a**2, axis=1)[:, None] + np.sum(b**2, axis=1)[None, :]
          - 2.0 * a @ b.T)
    return np.clip(d2, 0.0, None)


def wasserstein_distance(design: np.ndarray, z: np.ndarray,
                         seed: int = 0) -> float:
    """Entropic transport cost between the groups' point clouds.

    Squared-Euclidean costs standardized by their mean; self-transport
    debiasing removes most of the regularization floor.  Groups larger
    than the subsample cap are thinned with the derived seed.  This is a
    documented approximation of the exact transport distance.
    """
    design = np.asarray(design, dtype=float)
    z = np.asarray(z, dtype=float)
    t, c = design[z == 1.0], design[z == 0.0]
    if len(t) == 0 or len(c) == 0:
        raise ValueError("both groups must be nonempty")
    rng = rng_for("wasserstein", int(seed))
    if len(t) > SUBSAMPLE_CAP:
        t = t[np.sort(rng.choice(len(t), SUBSAMPLE_CAP, replace=False))]
    if len(c) > SUBSAMPLE_CAP:
        c = c[np.sort(rng.choice(len(c), SUBSAMPLE_CAP, replace=False))]
    cost_tc = _sq_dists(t, c)
    scale = float(cost_tc.mean())
    if scale <= 0:
        return 0.0
    ot_tc = _entropic_ot(cost_tc / scale, SINKHORN_EPS, SINKHORN_MAX_ITER,
                         SINKHORN_TOL)
    ot_tt = _entropic_ot(_sq_dists(t, t) / scale, SINKHORN_EPS,
                         SINKHORN_MAX_ITER, SINKHORN_TOL)
    ot_cc = _entropic_ot(_sq_dists(c, c) / scale, SINKHORN_EPS,
                         SINKHORN_MAX_ITER, SINKHORN_TOL)
    return max(ot_tc - 0.5 * (ot_tt + ot_cc), 0.0) * scale


def alignment_correlation(realization: Realization) -> float:
    """Pearson correlation between logit of the true propensity and the
    outcome, over non-penalized rows (the logit is undefined at e = 0)."""
    ok = ~realization.penalized
    e = realization.e[ok]
    y = realization.y[ok]
    if e.std() < 1e-12 or y.std() < 1e-12:
        return 0.0
    logit = np.log(e / (1.0 - e))
    if logit.std() < 1e-12:
        return 0.0
    return float(np.corrcoef(logit, y)[0, 1])


def heterogeneity_sd(realization: Realization) -> float:
    """Standard deviation of the noiseless effect function, in units of
    the outcome's standard deviation."""
    tau = realization.tau_smooth
    if np.ptp(tau) == 0.0:
        # exactly parallel surfaces; avoid float dust from the mean
        return 0.0
    sd_y = float(np.std(realization.y))
    return float(np.std(tau)) / sd_y if sd_y > 0 else 0.0


def nonoracle_alignment_proxy(tau_hat: np.ndarray | None,
                              e_hat: np.ndarray) -> float:
    """R-squared between flexible individual-effect estimates (treated
    units) and estimated propensities for the same units."""
    if tau_hat is None:
        raise MetricError(
            "individual-effect estimates are missing; run the boosted-tree "
            "response-surface estimator (flexible_rs) to produce them")
    tau_hat = np.asarray(tau_hat, dtype=float)
    e_hat = np.asarray(e_hat, dtype=float)
    if len(tau_hat) != len(e_hat):
        raise ValueError("effect and propensity vectors differ in length")
    if np.std(tau_hat) < 1e-12:
        return 0.0
    return ols_r2(tau_hat, e_hat.reshape(-1, 1))


# -- assembly ------------------------------------------------------------


def observable_metrics(design: np.ndarray, z: np.ndarray, y: np.ndarray,
                       tau_hat: np.ndarray | None, seed: int = 0) -> dict:
    """The six non-oracle metrics.  Accepts no truth fields by design.

    ``tau_hat`` holds individual-effect estimates over treated units from
    the flexible response-surface estimator; the alignment proxy needs it.
    """
    fit = fit_logistic(design, z)
    e_hat = fit.predict(design)
    return {
        "r2_y_obs": r2_linear(y, design),
        "propensity_pseudo_r2": fit.pseudo_r2,
        "alignment_proxy_r2": nonoracle_alignment_proxy(tau_hat, e_hat[z == 1.0]),
        "mahalanobis_obs": mahalanobis_counterfactual_distance(design, z),
        "imbalance_obs": mean_imbalance(design, z),
        "wasserstein_obs": wasserstein_distance(design, z, seed=seed),
    }


def oracle_metrics(realization: Realization, spec: DgpSpec,
                   seed: int = 0) -> dict:
    """The thirteen truth-based metrics plus the six knob recordings."""
    design = realization.design
    z, y = realization.z, realization.y
    truth = spec.truth_basis(design)
    knobs = spec.knobs
    ok = ~realization.penalized
    e = realization.e[ok]
    logit = np.log(e / (1.0 - e))
    r2_obs = r2_linear(y, design)
    r2_truth = r2_linear(y, truth)
    ctrl, trt = z == 0.0, z == 1.0
    out = {
        "oracle_knob_treatment_nonlinearity":
            float(_KNOB_CODES["treatment_model"][knobs.treatment_model]),
        "oracle_knob_treated_pct":
            float(_KNOB_CODES["treatment_pct"][knobs.treatment_pct]),
        "oracle_knob_overlap": float(_KNOB_CODES["overlap"][knobs.overlap]),
        "oracle_knob_response_nonlinearity":
            float(_KNOB_CODES["response_model"][knobs.response_model]),
        "oracle_knob_alignment": float(_KNOB_CODES["alignment"][knobs.alignment]),
        "oracle_knob_heterogeneity":
            float(_KNOB_CODES["heterogeneity"][knobs.heterogeneity]),
        "oracle_alignment_corr": alignment_correlation(realization),
        "oracle_mahalanobis_truth":
            mahalanobis_counterfactual_distance(truth, z),
        "oracle_imbalance_truth": mean_imbalance(truth, z),
        "oracle_wasserstein_truth": wasserstein_distance(truth, z, seed=seed),
        "oracle_r2_logit_on_obs": r2_linear(logit, design[ok]),
        "oracle_r2_tau_on_obs": r2_linear(realization.tau_smooth, design),
        "oracle_r2_y_truth": r2_truth,
        "oracle_r2_ratio_obs_truth": r2_obs / r2_truth if r2_truth > 1e-12 else 0.0,
        "oracle_r2_y0_ctrl_obs": r2_linear(realization.mu0[ctrl], design[ctrl]),
        "oracle_r2_y0_ctrl_truth": r2_linear(realization.mu0[ctrl], truth[ctrl]),
        "oracle_r2_y1_trt_obs": r2_linear(realization.mu1[trt], design[trt]),
        "oracle_r2_y1_trt_truth": r2_linear(realization.mu1[trt], truth[trt]),
        "oracle_heterogeneity_sd": heterogeneity_sd(realization),
    }
    return out


def metric_vector(realization: Realization, spec: DgpSpec, setting: str,
                  replication: int, tau_hat: np.ndarray | None,
                  seed: int = 0) -> MetricVector:
    values = observable_metrics(realization.design, realization.z,
                                realization.y, tau_hat, seed=seed)
    values.update(oracle_metrics(realization, spec, seed=seed))
    return MetricVector(setting=setting, replication=replication, values=values)
