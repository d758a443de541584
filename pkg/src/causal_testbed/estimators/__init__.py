"""SATT estimator suite.

Observable-only estimators register in ``REGISTRY`` and share one calling
convention; ``run_estimator`` wraps a call with wall-clock timing.  The
truth-based reference (``oracle_catt``) deliberately lives outside the
registry: it takes a realization, not an estimator input.
"""

from __future__ import annotations

import time

from .balance import entropy_balance_dr, entropy_balance_weights
from .base import EstimateResult, EstimationError, EstimatorConfig, \
    EstimatorInput, bootstrap_interval
from .boosting import BoostedFit, fit_boosted_cv, fit_boosted_fixed, flexible_rs
from .linear import diff_in_means, ols_adjust, regression_ra
from .oracle import oracle_catt
from .propensity import att_weights, iptw_att, ipw_ra_dr, ps_stratify, psm_match

__all__ = [
    "BoostedFit", "EstimateResult", "EstimationError", "EstimatorConfig",
    "EstimatorInput", "ORACLE_METHODS", "REGISTRY", "att_weights",
    "bootstrap_interval", "diff_in_means", "entropy_balance_dr",
    "entropy_balance_weights", "fit_boosted_cv", "fit_boosted_fixed",
    "flexible_rs", "iptw_att", "ipw_ra_dr", "method_names", "ols_adjust",
    "oracle_catt", "ps_stratify", "psm_match", "regression_ra",
    "run_estimator",
]

REGISTRY = {
    "diff_in_means": diff_in_means,
    "ols_adjust": ols_adjust,
    "regression_ra": regression_ra,
    "iptw_att": iptw_att,
    "ipw_ra_dr": ipw_ra_dr,
    "psm_match": psm_match,
    "ps_stratify": ps_stratify,
    "entropy_balance_dr": entropy_balance_dr,
    "flexible_rs": flexible_rs,
}

ORACLE_METHODS = ("oracle_catt",)


def method_names(include_oracle: bool = True) -> list[str]:
    names = list(REGISTRY)
    if include_oracle:
        names.extend(ORACLE_METHODS)
    return names


def run_estimator(name: str, inp: EstimatorInput,
                  config: EstimatorConfig) -> EstimateResult:
    """Dispatch by name and record wall time."""
    if name not in REGISTRY:
        raise KeyError(
            f"unknown method {name!r}; registered methods: "
            f"{', '.join(sorted(REGISTRY))}")
    start = time.perf_counter()
    result = REGISTRY[name](inp, config)
    result.wall_time = time.perf_counter() - start
    return result
