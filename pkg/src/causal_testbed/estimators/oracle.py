"""Truth-based reference estimator, available only to the harness."""

from __future__ import annotations

import numpy as np

from ..dgp.realize import Realization
from .base import EstimateResult

__all__ = ["oracle_catt"]


def oracle_catt(realization: Realization) -> EstimateResult:
    """Average of the noiseless effect function over the treated units.

    This is the conditional average effect used as a performance ceiling;
    it reads oracle fields and therefore takes a realization, not an
    estimator input.  The interval is degenerate by definition.
    """
    treated = realization.z == 1.0
    est = float(realization.tau_smooth[treated].mean())
    effects = realization.tau_smooth[treated]
    return EstimateResult("oracle_catt", est, est, est,
                          individual_effects=effects.copy())
