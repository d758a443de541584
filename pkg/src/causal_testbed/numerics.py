"""Shared regression numerics: least squares, sandwich variance, IRLS logistic.

These are deliberately small and dependency-free (numpy only) so that both
the dataset metrics and the estimator suite share one implementation whose
conventions (minimum-norm solutions, ridge jitter, zero-variance rules)
are fixed in a single place.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "LogisticFit",
    "add_intercept",
    "fit_logistic",
    "lstsq_min_norm",
    "ols_r2",
    "sandwich_se",
    "welch_interval",
]

Z975 = 1.959963984540054  # standard normal 97.5% quantile


def add_intercept(design: np.ndarray) -> np.ndarray:
    return np.column_stack([np.ones(design.shape[0]), design])


def lstsq_min_norm(design: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Minimum-norm least squares; tolerant of rank-deficient designs."""
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    return coef


def ols_r2(y: np.ndarray, design: np.ndarray) -> float:
    """R-squared of OLS of y on [1, design], clipped to [0, 1].

    Zero-variance y is defined to give 0.  Rank-deficient designs use the
    minimum-norm solution.
    """
    y = np.asarray(y, dtype=float)
    sst = float(np.sum((y - y.mean()) ** 2))
    if sst < 1e-14:
        return 0.0
    X = add_intercept(np.asarray(design, dtype=float))
    resid = y - X @ lstsq_min_norm(X, y)
    r2 = 1.0 - float(np.sum(resid**2)) / sst
    return float(min(max(r2, 0.0), 1.0))


def sandwich_se(design: np.ndarray, resid: np.ndarray,
                weights: np.ndarray | None = None) -> np.ndarray:
    """Heteroskedasticity-robust (HC1) standard errors for OLS/WLS.

    ``design`` must already include any intercept column.
    """
    n, k = design.shape
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    bread = np.linalg.pinv(design.T @ (design * w[:, None]))
    meat = (design * ((w * resid) ** 2)[:, None]).T @ design
    # HC1 small-sample scaling
    dof = max(n - k, 1)
    cov = bread @ meat @ bread * (n / dof)
    return np.sqrt(np.clip(np.diag(cov), 0.0, None))


def welch_interval(y1: np.ndarray, y0: np.ndarray) -> tuple[float, float, float]:
    """Difference of means with a Welch normal-approximation interval."""
    m1, m0 = float(np.mean(y1)), float(np.mean(y0))
    v = np.var(y1, ddof=1) / len(y1) + np.var(y0, ddof=1) / len(y0) \
        if min(len(y1), len(y0)) > 1 else 0.0
    half = Z975 * float(np.sqrt(v))
    est = m1 - m0
    return est, est - half, est + half


@dataclass
class LogisticFit:
    coef: np.ndarray          # includes intercept first
    loglik: float
    loglik_null: float
    converged: bool
    separated: bool
    n_iter: int

    @property
    def pseudo_r2(self) -> float:
        """McFadden pseudo R-squared, clipped to [0, 1]."""
        if self.separated:
            return 1.0
        if self.loglik_null >= -1e-12:
            return 0.0
        return float(min(max(1.0 - self.loglik / self.loglik_null, 0.0), 1.0))

    def predict(self, design: np.ndarray) -> np.ndarray:
        eta = add_intercept(design) @ self.coef
        return 1.0 / (1.0 + np.exp(-eta))


def fit_logistic(design: np.ndarray, z: np.ndarray, ridge: float = 1e-8,
                 tol: float = 1e-10, max_iter: int = 100) -> LogisticFit:
    """Logistic regression by iteratively reweighted least squares.

    A small ridge term (``ridge``) on the normal equations keeps the solve
    stable on collinear designs.  Complete separation is detected when the
    fitted probabilities all approach their labels; the fit is then flagged
    and iteration stops.
    """
    z = np.asarray(z, dtype=float)
    if z.min() == z.max():
        raise ValueError("both treatment classes must be present")
    X = add_intercept(np.asarray(design, dtype=float))
    n, k = X.shape
    beta = np.zeros(k)
    pbar = z.mean()
    beta[0] = np.log(pbar / (1.0 - pbar))
    loglik_null = float(n * (pbar * np.log(pbar) + (1 - pbar) * np.log(1 - pbar)))
    eye = np.eye(k)
    converged = separated = False
    it = 0
    for it in range(1, max_iter + 1):
        eta = np.clip(X @ beta, -35.0, 35.0)
        p = 1.0 / (1.0 + np.exp(-eta))
        grad = X.T @ (z - p)
        if np.linalg.norm(grad) < tol * n:
            converged = True
            break
        w = np.clip(p * (1.0 - p), 1e-12, None)
        H = (X * w[:, None]).T @ X + ridge * eye
        try:
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, grad, rcond=None)[0]
        # Dampen huge steps (quasi-separation makes the Hessian tiny).
        norm = np.linalg.norm(step)
        if norm > 1e4:
            step *= 1e4 / norm
        beta = beta + step
        resid = np.abs(z - p)
        if resid.max() < 1e-8:
            separated = True
            converged = True
            break
    eta = np.clip(X @ beta, -35.0, 35.0)
    p = 1.0 / (1.0 + np.exp(-eta))
    eps = 1e-300
    loglik = float(np.sum(z * np.log(p + eps) + (1 - z) * np.log(1 - p + eps)))
    if np.abs(z - p).max() < 1e-6:
        separated = True
    return LogisticFit(beta, loglik, loglik_null, converged, separated, it)
