"""Drawing datasets from a calibrated process.

A realization carries the observed triple (X, Z, Y) together with every
oracle truth field: exact propensities, both potential-outcome surfaces,
the noisy potential outcomes, individual effects, and the realized
average effect on the treated.  Treatment assignment and outcome noise
draw from separate derived streams, so regenerating with the same
assignment stream but different noise reproduces the same Z vector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..covariates import CovariateTable
from ..rng import rng_for
from .build import DgpSpec

__all__ = ["Realization", "realize", "satt"]


@dataclass(frozen=True)
class Realization:
    covariates: CovariateTable
    design: np.ndarray          # standardized one-hot view used everywhere
    z: np.ndarray               # binary treatment
    y: np.ndarray               # observed outcome
    e: np.ndarray               # true propensity, exactly 0 in penalty regions
    mu0: np.ndarray
    mu1: np.ndarray
    tau_smooth: np.ndarray      # noiseless effect function mu1 - mu0, stored
                                # directly so a constant effect is exactly flat
    y0: np.ndarray              # potential outcomes including noise
    y1: np.ndarray
    penalized: np.ndarray       # bool mask of penalty-region rows
    seed: int

    @property
    def tau(self) -> np.ndarray:
        """Individual noisy effects y1 - y0."""
        return self.y1 - self.y0

    @property
    def n_treated(self) -> int:
        return int(self.z.sum())

    def satt(self) -> float:
        return satt(self)


def draw_assignment(spec: DgpSpec, design: np.ndarray, seed: int) -> np.ndarray:
    """Bernoulli treatment draw from the true propensities."""
    e = spec.propensity(design)
    u = rng_for("assign", int(seed)).uniform(size=design.shape[0])
    return (u < e).astype(float)


def draw_potential_outcomes(spec: DgpSpec, design: np.ndarray,
                            seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Noisy potential outcomes; independent heavy-tailed noise per arm."""
    rng = rng_for("noise", int(seed))
    n = design.shape[0]
    eps0 = spec.noise_scale * rng.standard_t(spec.noise_df, size=n)
    eps1 = spec.noise_scale * rng.standard_t(spec.noise_df, size=n)
    mu0 = spec.mu0(design)
    return mu0 + eps0, mu0 + spec.treatment_effect(design) + eps1


def realize(spec: DgpSpec, covariates: CovariateTable, seed: int) -> Realization:
    """One dataset: assignment, outcomes, and all oracle fields."""
    design = covariates.standardized()
    z = draw_assignment(spec, design, seed)
    if z.sum() < 1:
        raise RuntimeError("realization produced no treated units")
    if z.sum() > len(z) - 1:
        raise RuntimeError("realization produced no control units")
    y0, y1 = draw_potential_outcomes(spec, design, seed)
    # consistency identity holds exactly: observed y is selected, not mixed
    y = np.where(z == 1.0, y1, y0)
    mu0 = spec.mu0(design)
    tau_smooth = spec.treatment_effect(design)
    return Realization(
        covariates=covariates,
        design=design,
        z=z,
        y=y,
        e=spec.propensity(design),
        mu0=mu0,
        mu1=mu0 + tau_smooth,
        tau_smooth=tau_smooth,
        y0=y0,
        y1=y1,
        penalized=spec.penalized_mask(design),
        seed=int(seed),
    )


def satt(realization: Realization) -> float:
    """Average of y1 - y0 over treated units."""
    treated = realization.z == 1.0
    if not treated.any():
        raise ValueError("no treated units")
    return float(np.mean(realization.y1[treated] - realization.y0[treated]))
