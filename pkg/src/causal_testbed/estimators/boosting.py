"""Boosted-tree response-surface estimator.

Gradient-boosted regression trees (histogram splits, squared loss, depth
at most three, shrinkage 0.05) stand in for the flexible nonparametric
response-surface class.  The number of rounds is chosen by k-fold
cross-validation: each fold trains incrementally under warm starts,
scoring the held-out fold on a fixed grid of round counts, with early
stopping once the held-out loss stops improving.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.ensemble import HistGradientBoostingRegressor

from ..rng import derive_seed
from .base import EstimateResult, EstimationError, EstimatorConfig, \
    EstimatorInput, bootstrap_interval

__all__ = ["BoostedFit", "fit_boosted_cv", "fit_boosted_fixed", "flexible_rs"]

ROUND_STEP = 25
PATIENCE_STEPS = 8  # stop a fold after this many steps without improvement


def _make_model(seed: int, rounds: int, learning_rate: float,
                max_depth: int, warm: bool = False) -> HistGradientBoostingRegressor:
    return HistGradientBoostingRegressor(
        loss="squared_error",
        max_iter=rounds,
        learning_rate=learning_rate,
        max_depth=max_depth,
        early_stopping=False,
        warm_start=warm,
        random_state=seed % (2**31 - 1),
    )


@dataclass
class BoostedFit:
    model: HistGradientBoostingRegressor
    rounds: int
    cv_curve: np.ndarray


def fit_boosted_fixed(x: np.ndarray, y: np.ndarray, seed: int, rounds: int,
                      learning_rate: float = 0.05,
                      max_depth: int = 3) -> HistGradientBoostingRegressor:
    model = _make_model(seed, rounds, learning_rate, max_depth)
    model.fit(x, y)
    return model


def fit_boosted_cv(x: np.ndarray, y: np.ndarray, seed: int,
                   max_rounds: int = 2000, cv_folds: int = 5,
                   learning_rate: float = 0.05, max_depth: int = 3) -> BoostedFit:
    """Cross-validated round selection, then a final fit on all rows."""
    n = len(y)
    if n < 2 * cv_folds:
        raise EstimationError("too few rows for cross-validated boosting")
    rng = np.random.default_rng(derive_seed("boost-folds", seed))
    fold_of = np.empty(n, dtype=int)
    fold_of[rng.permutation(n)] = np.arange(n) % cv_folds
    curves: list[list[float]] = []
    for fold in range(cv_folds):
        val = fold_of == fold
        model = _make_model(derive_seed("boost-fold", seed, fold), ROUND_STEP,
                            learning_rate, max_depth, warm=True)
        losses: list[float] = []
        best = np.inf
        stale = 0
        rounds = 0
        while rounds < max_rounds:
            rounds = min(rounds + ROUND_STEP, max_rounds)
            model.set_params(max_iter=rounds)
            model.fit(x[~val], y[~val])
            mse = float(np.mean((model.predict(x[val]) - y[val]) ** 2))
            losses.append(mse)
            if mse < best - 1e-12:
                best = mse
                stale = 0
            else:
                stale += 1
            if stale >= PATIENCE_STEPS:
                break
        curves.append(losses)
    depth = min(len(c) for c in curves)
    curve = np.mean([c[:depth] for c in curves], axis=0)
    chosen = (int(np.argmin(curve)) + 1) * ROUND_STEP
    final = _make_model(derive_seed("boost-final", seed), chosen,
                        learning_rate, max_depth)
    final.fit(x, y)
    return BoostedFit(final, chosen, curve)


def flexible_rs(inp: EstimatorInput, config: EstimatorConfig) -> EstimateResult:
    """Boosted-tree response surfaces, one per arm.

    The control model imputes the missing control outcome for every
    treated unit; individual effects are the observed-minus-imputed
    differences and the point estimate is their mean.  The interval is a
    stratified percentile bootstrap with fixed-round refits.
    """
    if inp.n < config.min_flexible_n:
        raise EstimationError(
            f"boosted response surfaces need n >= {config.min_flexible_n}")
    xc, yc = inp.x[inp.controls], inp.y[inp.controls]
    xt, yt = inp.x[inp.treated], inp.y[inp.treated]
    fit0 = fit_boosted_cv(xc, yc, seed=derive_seed(config.seed, "mu0"),
                          max_rounds=config.boost_max_rounds,
                          cv_folds=config.boost_cv_folds,
                          learning_rate=config.boost_learning_rate,
                          max_depth=config.boost_max_depth)
    fit1 = fit_boosted_cv(xt, yt, seed=derive_seed(config.seed, "mu1"),
                          max_rounds=config.boost_max_rounds,
                          cv_folds=config.boost_cv_folds,
                          learning_rate=config.boost_learning_rate,
                          max_depth=config.boost_max_depth)
    effects = yt - fit0.model.predict(xt)
    est = float(effects.mean())

    def point(s_inp: EstimatorInput, s_seed: int) -> float:
        sxc, syc = s_inp.x[s_inp.controls], s_inp.y[s_inp.controls]
        model = fit_boosted_fixed(sxc, syc, seed=s_seed,
                                  rounds=config.boost_bootstrap_rounds,
                                  learning_rate=config.boost_learning_rate,
                                  max_depth=config.boost_max_depth)
        st = s_inp.treated
        return float(np.mean(s_inp.y[st] - model.predict(s_inp.x[st])))

    lo, hi, diag = bootstrap_interval(point, inp, config.bootstrap_b,
                                      config.seed, config.normal_interval)
    diag.update({"rounds_mu0": fit0.rounds, "rounds_mu1": fit1.rounds})
    return EstimateResult("flexible_rs", est, lo, hi,
                          individual_effects=effects, diagnostics=diag)
