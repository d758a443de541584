"""Simulation knobs and the canonical 77-setting grid.

A :class:`Knobs` tuple fixes the distribution over data-generating
processes along five axes: functional-form library of the assignment
mechanism, target treated share, overlap (whether a corner of covariate
space is barred from treatment), functional-form library of the response
surface, assignment/response alignment, and treatment-effect
heterogeneity.  The canonical grid enumerates the 77 knob combinations
used for the benchmark; entries are addressable by 1-based index.
"""

from __future__ import annotations

from dataclasses import dataclass

__all__ = ["Knobs", "N_SETTINGS", "canonical_setting", "canonical_knobs", "diy_index"]

TREATMENT_MODELS = ("linear", "polynomial", "step")
TREATMENT_PCTS = ("low", "high")
OVERLAPS = ("full", "penalize")
RESPONSE_MODELS = ("linear", "exponential", "step")
ALIGNMENTS = ("none", "low", "high")
HETEROGENEITIES = ("none", "low", "high")

# Target treated share among rows not excluded by a penalty region.
TREATED_TARGET = {"low": 0.35, "high": 0.65}
# Probability that an assignment term is copied into the response surface.
ALIGN_COPY_PROB = {"none": 0.0, "low": 0.25, "high": 0.75}


@dataclass(frozen=True)
class Knobs:
    treatment_model: str
    treatment_pct: str
    overlap: str
    response_model: str
    alignment: str
    heterogeneity: str

    def __post_init__(self) -> None:
        checks = [
            (self.treatment_model, TREATMENT_MODELS, "treatment_model"),
            (self.treatment_pct, TREATMENT_PCTS, "treatment_pct"),
            (self.overlap, OVERLAPS, "overlap"),
            (self.response_model, RESPONSE_MODELS, "response_model"),
            (self.alignment, ALIGNMENTS, "alignment"),
            (self.heterogeneity, HETEROGENEITIES, "heterogeneity"),
        ]
        for value, allowed, name in checks:
            if value not in allowed:
                raise ValueError(f"{name} must be one of {allowed}, got {value!r}")

    @property
    def treated_target(self) -> float:
        return TREATED_TARGET[self.treatment_pct]

    @property
    def copy_probability(self) -> float:
        return ALIGN_COPY_PROB[self.alignment]

    def label(self) -> str:
        return "/".join([self.treatment_model, self.treatment_pct, self.overlap,
                         self.response_model, self.alignment, self.heterogeneity])

    def to_dict(self) -> dict:
        return {
            "treatment_model": self.treatment_model,
            "treatment_pct": self.treatment_pct,
            "overlap": self.overlap,
            "response_model": self.response_model,
            "alignment": self.alignment,
            "heterogeneity": self.heterogeneity,
        }

    @staticmethod
    def from_dict(d: dict) -> "Knobs":
        return Knobs(d["treatment_model"], d["treatment_pct"], d["overlap"],
                     d["response_model"], d["alignment"], d["heterogeneity"])


# (treatment model, treated %, overlap, response model, alignment,
#  heterogeneity, companion index in the 20-dataset hand-analysis subset).
_CANONICAL = (
    ("linear", "low", "penalize", "linear", "high", "high", 10),
    ("polynomial", "low", "penalize", "exponential", "high", "none", 1),
    ("linear", "low", "penalize", "linear", "high", "none", 9),
    ("polynomial", "low", "full", "exponential", "high", "high", 4),
    ("linear", "low", "penalize", "exponential", "high", "high", 15),
    ("polynomial", "low", "penalize", "linear", "high", "high", 2),
    ("polynomial", "low", "penalize", "exponential", "high", "high", 5),
    ("polynomial", "low", "penalize", "exponential", "none", "high", 13),
    ("step", "low", "penalize", "step", "high", "high", 8),
    ("linear", "low", "penalize", "exponential", "low", "high", 14),
    ("polynomial", "low", "penalize", "linear", "low", "high", 19),
    ("polynomial", "low", "penalize", "exponential", "low", "high", 12),
    ("linear", "high", "penalize", "exponential", "high", "high", 18),
    ("polynomial", "high", "penalize", "linear", "high", "high", 20),
    ("polynomial", "high", "penalize", "exponential", "high", "high", 6),
    ("polynomial", "high", "penalize", "exponential", "none", "high", 17),
    ("step", "high", "penalize", "step", "high", "high", 7),
    ("linear", "high", "penalize", "exponential", "low", "high", 3),
    ("polynomial", "high", "penalize", "linear", "low", "high", 16),
    ("polynomial", "high", "penalize", "exponential", "low", "high", 11),
    ("polynomial", "low", "penalize", "step", "low", "low", None),
    ("polynomial", "low", "penalize", "step", "low", "high", None),
    ("polynomial", "low", "penalize", "step", "high", "low", None),
    ("polynomial", "low", "penalize", "step", "high", "high", None),
    ("polynomial", "low", "penalize", "exponential", "low", "low", None),
    ("polynomial", "low", "penalize", "exponential", "high", "low", None),
    ("polynomial", "low", "full", "step", "low", "low", None),
    ("polynomial", "low", "full", "step", "low", "high", None),
    ("polynomial", "low", "full", "step", "high", "low", None),
    ("polynomial", "low", "full", "step", "high", "high", None),
    ("polynomial", "low", "full", "exponential", "low", "low", None),
    ("polynomial", "low", "full", "exponential", "low", "high", None),
    ("polynomial", "low", "full", "exponential", "high", "low", None),
    ("polynomial", "high", "penalize", "step", "low", "low", None),
    ("polynomial", "high", "penalize", "step", "low", "high", None),
    ("polynomial", "high", "penalize", "step", "high", "low", None),
    ("polynomial", "high", "penalize", "step", "high", "high", None),
    ("polynomial", "high", "penalize", "exponential", "low", "low", None),
    ("polynomial", "high", "penalize", "exponential", "high", "low", None),
    ("polynomial", "high", "full", "step", "low", "low", None),
    ("polynomial", "high", "full", "step", "low", "high", None),
    ("polynomial", "high", "full", "step", "high", "low", None),
    ("polynomial", "high", "full", "step", "high", "high", None),
    ("polynomial", "high", "full", "exponential", "low", "low", None),
    ("polynomial", "high", "full", "exponential", "low", "high", None),
    ("polynomial", "high", "full", "exponential", "high", "low", None),
    ("polynomial", "high", "full", "exponential", "high", "high", None),
    ("step", "low", "penalize", "step", "low", "low", None),
    ("step", "low", "penalize", "step", "low", "high", None),
    ("step", "low", "penalize", "step", "high", "low", None),
    ("step", "low", "penalize", "exponential", "low", "low", None),
    ("step", "low", "penalize", "exponential", "low", "high", None),
    ("step", "low", "penalize", "exponential", "high", "low", None),
    ("step", "low", "penalize", "exponential", "high", "high", None),
    ("step", "low", "full", "step", "low", "low", None),
    ("step", "low", "full", "step", "low", "high", None),
    ("step", "low", "full", "step", "high", "low", None),
    ("step", "low", "full", "step", "high", "high", None),
    ("step", "low", "full", "exponential", "low", "low", None),
    ("step", "low", "full", "exponential", "low", "high", None),
    ("step", "low", "full", "exponential", "high", "low", None),
    ("step", "low", "full", "exponential", "high", "high", None),
    ("step", "high", "penalize", "step", "low", "low", None),
    ("step", "high", "penalize", "step", "low", "high", None),
    ("step", "high", "penalize", "step", "high", "low", None),
    ("step", "high", "penalize", "exponential", "low", "low", None),
    ("step", "high", "penalize", "exponential", "low", "high", None),
    ("step", "high", "penalize", "exponential", "high", "low", None),
    ("step", "high", "penalize", "exponential", "high", "high", None),
    ("step", "high", "full", "step", "low", "low", None),
    ("step", "high", "full", "step", "low", "high", None),
    ("step", "high", "full", "step", "high", "low", None),
    ("step", "high", "full", "step", "high", "high", None),
    ("step", "high", "full", "exponential", "low", "low", None),
    ("step", "high", "full", "exponential", "low", "high", None),
    ("step", "high", "full", "exponential", "high", "low", None),
    ("step", "high", "full", "exponential", "high", "high", None),
)

N_SETTINGS = len(_CANONICAL)


def canonical_setting(index: int) -> Knobs:
    """Knobs of canonical setting ``index`` (1-based, 1..77)."""
    if not 1 <= index <= N_SETTINGS:
        raise ValueError(f"setting out of range 1..{N_SETTINGS}: {index}")
    row = _CANONICAL[index - 1]
    return Knobs(*row[:6])


def canonical_knobs() -> list[Knobs]:
    return [canonical_setting(i) for i in range(1, N_SETTINGS + 1)]


def diy_index(index: int) -> int | None:
    """Companion hand-analysis dataset number for a canonical setting, if any."""
    if not 1 <= index <= N_SETTINGS:
        raise ValueError(f"setting out of range 1..{N_SETTINGS}: {index}")
    return _CANONICAL[index - 1][6]
