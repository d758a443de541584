"""Random generalized-additive function terms.

Assignment mechanisms and response surfaces are sums of simple terms over
the standardized covariate design: polynomials up to degree three, jumps
and kinks anchored at marginal quantiles, products of two or three
factors, and (for one flavor of response surface) a single exponential of
a small inner sum.  Each term caches nothing; evaluation is vectorized
over the rows of a design matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["Factor", "InnerFn", "FunctionTerm", "PenaltyRegion"]


@dataclass(frozen=True)
class Factor:
    """One multiplicand of an interaction term: the raw column value, or a
    threshold indicator on it."""

    column: int
    kind: str = "linear"          # "linear" | "indicator"
    threshold: float = 0.0
    above: bool = False           # indicator tests x > t when True else x <= t

    def values(self, design: np.ndarray) -> np.ndarray:
        x = design[:, self.column]
        if self.kind == "linear":
            return x
        if self.kind == "indicator":
            return (x > self.threshold) if self.above else (x <= self.threshold)
        raise ValueError(f"unknown factor kind {self.kind!r}")

    def to_dict(self) -> dict:
        return {"column": self.column, "kind": self.kind,
                "threshold": self.threshold, "above": self.above}

    @staticmethod
    def from_dict(d: dict) -> "Factor":
        return Factor(d["column"], d["kind"], d["threshold"], d["above"])


@dataclass(frozen=True)
class InnerFn:
    """Sub-function inside an exponential composite."""

    column: int
    kind: str              # "linear" | "quadratic" | "jump"
    coef: float
    threshold: float = 0.0

    def values(self, design: np.ndarray) -> np.ndarray:
        x = design[:, self.column]
        if self.kind == "linear":
            return self.coef * x
        if self.kind == "quadratic":
            return self.coef * x * x
        if self.kind == "jump":
            return self.coef * (x <= self.threshold)
        raise ValueError(f"unknown inner kind {self.kind!r}")

    def to_dict(self) -> dict:
        return {"column": self.column, "kind": self.kind,
                "coef": self.coef, "threshold": self.threshold}

    @staticmethod
    def from_dict(d: dict) -> "InnerFn":
        return InnerFn(d["column"], d["kind"], d["coef"], d["threshold"])


@dataclass(frozen=True)
class FunctionTerm:
    """One additive term: ``coefficient * basis(x)``.

    kinds and their basis:
      linear       x_j
      quadratic    x_j^2
      cubic        x_j^3
      jump         I{x_j <= A}            thresholds = (A,)
      kink         (x_j - B) I{x_j <= C}  thresholds = (B, C)
      interaction  product of 2-3 factors
      exp          exp(sum of inner sub-functions)
    """

    kind: str
    columns: tuple[int, ...]
    coefficient: float
    thresholds: tuple[float, ...] = ()
    factors: tuple[Factor, ...] = ()
    inner: tuple[InnerFn, ...] = ()

    def __post_init__(self) -> None:
        if self.kind == "interaction" and not 2 <= len(self.factors) <= 3:
            raise ValueError("interaction terms take 2 or 3 factors")
        if self.kind == "exp" and len(self.inner) < 1:
            raise ValueError("exp terms wrap at least one inner sub-function")
        if self.kind in ("linear", "quadratic", "cubic", "jump", "kink") \
                and len(self.columns) != 1:
            raise ValueError(f"{self.kind} terms involve exactly one column")

    def basis(self, design: np.ndarray) -> np.ndarray:
        """Term value before the coefficient."""
        if self.kind == "linear":
            return design[:, self.columns[0]].copy()
        if self.kind == "quadratic":
            x = design[:, self.columns[0]]
            return x * x
        if self.kind == "cubic":
            x = design[:, self.columns[0]]
            return x * x * x
        if self.kind == "jump":
            return (design[:, self.columns[0]] <= self.thresholds[0]).astype(float)
        if self.kind == "kink":
            x = design[:, self.columns[0]]
            b, c = self.thresholds
            return (x - b) * (x <= c)
        if self.kind == "interaction":
            out = np.ones(design.shape[0])
            for f in self.factors:
                out = out * f.values(design)
            return out
        if self.kind == "exp":
            acc = np.zeros(design.shape[0])
            for fn in self.inner:
                acc += fn.values(design)
            return np.exp(acc)
        raise ValueError(f"unknown term kind {self.kind!r}")

    def values(self, design: np.ndarray) -> np.ndarray:
        return self.coefficient * self.basis(design)

    def with_coefficient(self, coefficient: float) -> "FunctionTerm":
        return FunctionTerm(self.kind, self.columns, float(coefficient),
                            self.thresholds, self.factors, self.inner)

    def structure_key(self) -> tuple:
        """Identity of the basis function, ignoring the outer coefficient.
        Used to de-duplicate columns of the ground-truth basis matrix."""
        return (self.kind, self.columns, self.thresholds,
                tuple((f.column, f.kind, f.threshold, f.above) for f in self.factors),
                tuple((g.column, g.kind, g.coef, g.threshold) for g in self.inner))

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "columns": list(self.columns),
            "coefficient": self.coefficient,
            "thresholds": list(self.thresholds),
            "factors": [f.to_dict() for f in self.factors],
            "inner": [g.to_dict() for g in self.inner],
        }

    @staticmethod
    def from_dict(d: dict) -> "FunctionTerm":
        return FunctionTerm(
            d["kind"], tuple(d["columns"]), d["coefficient"], tuple(d["thresholds"]),
            tuple(Factor.from_dict(f) for f in d["factors"]),
            tuple(InnerFn.from_dict(g) for g in d["inner"]),
        )


@dataclass(frozen=True)
class PenaltyRegion:
    """A corner of covariate space barred from treatment.

    The region is a conjunction of one to three per-column threshold
    conditions with cutoffs at marginal quantiles; the treatment
    probability is exactly zero inside it.
    """

    conditions: tuple[tuple[int, bool, float], ...] = field(default=())
    # each condition: (column, above, cutoff) meaning x > cutoff when above
    # else x <= cutoff

    def __post_init__(self) -> None:
        if not 1 <= len(self.conditions) <= 3:
            raise ValueError("a penalty region takes 1 to 3 conditions")

    def mask(self, design: np.ndarray) -> np.ndarray:
        m = np.ones(design.shape[0], dtype=bool)
        for column, above, cutoff in self.conditions:
            x = design[:, column]
            m &= (x > cutoff) if above else (x <= cutoff)
        return m

    def as_term(self, coefficient: float) -> FunctionTerm:
        """The region indicator as an interaction term (for copying the
        excluded corner into the response surface)."""
        factors = tuple(Factor(c, "indicator", cut, above)
                        for c, above, cut in self.conditions)
        if len(factors) == 1:
            # single-condition regions degrade to a jump/indicator product
            factors = (factors[0], Factor(factors[0].column, "indicator",
                                          factors[0].threshold, factors[0].above))
        cols = tuple(sorted({f.column for f in factors}))
        return FunctionTerm("interaction", cols, coefficient, factors=factors)

    def to_dict(self) -> dict:
        return {"conditions": [list(c) for c in self.conditions]}

    @staticmethod
    def from_dict(d: dict) -> "PenaltyRegion":
        return PenaltyRegion(tuple((int(c[0]), bool(c[1]), float(c[2]))
                                   for c in d["conditions"]))
