"""Knob-driven generative processes with oracle ground truth."""

from .build import DgpBuildError, DgpConfig, DgpSpec, build_dgp, \
    rescale_assignment, rescale_response
from .functions import Factor, FunctionTerm, InnerFn, PenaltyRegion
from .realize import Realization, draw_assignment, draw_potential_outcomes, \
    realize, satt
from .settings import Knobs, N_SETTINGS, canonical_knobs, canonical_setting, \
    diy_index

__all__ = [
    "DgpBuildError", "DgpConfig", "DgpSpec", "Factor", "FunctionTerm",
    "InnerFn", "Knobs", "N_SETTINGS", "PenaltyRegion", "Realization",
    "build_dgp", "canonical_knobs", "canonical_setting", "diy_index",
    "draw_assignment", "draw_potential_outcomes", "realize",
    "rescale_assignment", "rescale_response", "satt",
]
