"""Construction of knob-driven data-generating processes.

``build_dgp`` samples random assignment and response functions from the
library selected by the knobs, then rescales them against the build
sample so that realized data sit in a calibrated range: treatment
probabilities concentrated in [0.1, 0.9] with the requested treated
share, response variables with mean around zero and unit scale, and the
average effect on the treated pinned to a drawn target.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from ..covariates import CovariateTable
from ..rng import derive_seed
from .functions import Factor, FunctionTerm, InnerFn, PenaltyRegion
from .settings import Knobs

__all__ = ["DgpConfig", "DgpSpec", "build_dgp", "rescale_assignment",
           "rescale_response"]

LOGIT_LO, LOGIT_HI = 0.1, 0.9
MIN_COLUMNS = 4


class DgpBuildError(RuntimeError):
    """A generated process could not be calibrated to its targets."""


@dataclass(frozen=True)
class DgpConfig:
    """Tunables the knob grid leaves free.

    Defaults were chosen by pilot runs so that standard grids reproduce
    plausible ranges for nonlinearity, alignment and heterogeneity
    summaries; none of them is a calibrated claim.
    """

    term_count_mean: float = 8.0     # extra terms ~ Poisson(mean), floor below
    term_count_min: int = 4
    p_quadratic: float = 0.5         # chance a polynomial bundle gains x^2
    p_cubic: float = 0.25            # chance it gains x^3
    p_jump: float = 0.5              # step-library analogues
    p_kink: float = 0.25
    p_interaction: float = 0.35      # chance a term slot is an interaction
    p_three_way: float = 0.25        # interaction arity 3 instead of 2
    p_indicator_factor: float = 0.5  # step library: factor is an indicator
    coef_df: float = 3.0             # Student-t df for signed coefficients
    threshold_quantiles: tuple[float, float] = (0.2, 0.8)
    exp_inner_scale: float = 0.4     # scale of inner sub-function coefficients
    exp_inner_clip: float = 2.5
    penalty_quantiles: tuple[float, float] = (0.78, 0.95)
    max_penalty_share: float = 0.25  # max fraction of rows a region may exclude
    signal_share_range: tuple[float, float] = (0.40, 0.62)
    noise_df: float = 10.0
    target_effect_loc: float = 0.65
    target_effect_scale: float = 0.1
    target_effect_df: float = 5.0
    het_coef_scale: float = 0.8
    treated_tolerance: float = 1e-4
    max_bisect_iter: int = 200

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v
                for k, v in self.__dict__.items()}

    @staticmethod
    def from_dict(d: dict) -> "DgpConfig":
        kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        return DgpConfig(**kwargs)


@dataclass(frozen=True)
class DgpSpec:
    """A fully realized process: random functions plus calibration constants.

    ``assignment_terms`` define the raw logit; the stored shift and scale
    map it onto the calibrated propensity.  ``response_terms`` define the
    control surface mu0 (coefficients already in outcome units);
    ``het_terms`` are the extra treated-only terms, so that
    mu1 = mu0 + effect_shift + sum(het_terms).
    """

    knobs: Knobs
    assignment_terms: tuple[FunctionTerm, ...]
    penalty_regions: tuple[PenaltyRegion, ...]
    logit_shift: float
    logit_scale: float
    response_terms: tuple[FunctionTerm, ...]
    response_intercept: float
    response_scale: float
    het_terms: tuple[FunctionTerm, ...]
    effect_shift: float
    target_effect: float
    signal_share: float
    noise_scale: float
    noise_df: float
    copied_fraction: float
    config: DgpConfig = field(default_factory=DgpConfig)

    # -- evaluation ----------------------------------------------------

    def raw_logit(self, design: np.ndarray) -> np.ndarray:
        out = np.zeros(design.shape[0])
        for t in self.assignment_terms:
            out += t.values(design)
        return out

    def penalized_mask(self, design: np.ndarray) -> np.ndarray:
        m = np.zeros(design.shape[0], dtype=bool)
        for r in self.penalty_regions:
            m |= r.mask(design)
        return m

    def propensity(self, design: np.ndarray) -> np.ndarray:
        eta = self.logit_shift + self.logit_scale * self.raw_logit(design)
        e = 1.0 / (1.0 + np.exp(-np.clip(eta, -500, 500)))
        e[self.penalized_mask(design)] = 0.0
        return e

    def mu0(self, design: np.ndarray) -> np.ndarray:
        out = np.full(design.shape[0], self.response_intercept)
        for t in self.response_terms:
            out += self.response_scale * t.values(design)
        return out

    def treatment_effect(self, design: np.ndarray) -> np.ndarray:
        """mu1 - mu0; constant when heterogeneity is none."""
        out = np.full(design.shape[0], self.effect_shift)
        for t in self.het_terms:
            out += t.values(design)
        return out

    def mu1(self, design: np.ndarray) -> np.ndarray:
        return self.mu0(design) + self.treatment_effect(design)

    def truth_basis(self, design: np.ndarray) -> np.ndarray:
        """Ground-truth design: one column per distinct basis function
        appearing anywhere in the process (assignment, response, or
        treated-only terms), de-duplicated structurally."""
        seen: dict[tuple, None] = {}
        cols: list[np.ndarray] = []
        for t in (*self.assignment_terms, *self.response_terms, *self.het_terms):
            key = t.structure_key()
            if key in seen:
                continue
            seen[key] = None
            cols.append(t.basis(design))
        return np.column_stack(cols) if cols else np.zeros((design.shape[0], 0))

    # -- serialization -------------------------------------------------

    def to_json(self) -> str:
        payload = {
            "schema_version": 1,
            "knobs": self.knobs.to_dict(),
            "assignment_terms": [t.to_dict() for t in self.assignment_terms],
            "penalty_regions": [r.to_dict() for r in self.penalty_regions],
            "logit_shift": self.logit_shift,
            "logit_scale": self.logit_scale,
            "response_terms": [t.to_dict() for t in self.response_terms],
            "response_intercept": self.response_intercept,
            "response_scale": self.response_scale,
            "het_terms": [t.to_dict() for t in self.het_terms],
            "effect_shift": self.effect_shift,
            "target_effect": self.target_effect,
            "signal_share": self.signal_share,
            "noise_scale": self.noise_scale,
            "noise_df": self.noise_df,
            "copied_fraction": self.copied_fraction,
            "config": self.config.to_dict(),
        }
        return json.dumps(payload, indent=1)

    @staticmethod
    def from_json(text: str) -> "DgpSpec":
        d = json.loads(text)
        return DgpSpec(
            knobs=Knobs.from_dict(d["knobs"]),
            assignment_terms=tuple(FunctionTerm.from_dict(t)
                                   for t in d["assignment_terms"]),
            penalty_regions=tuple(PenaltyRegion.from_dict(r)
                                  for r in d["penalty_regions"]),
            logit_shift=d["logit_shift"],
            logit_scale=d["logit_scale"],
            response_terms=tuple(FunctionTerm.from_dict(t)
                                 for t in d["response_terms"]),
            response_intercept=d["response_intercept"],
            response_scale=d["response_scale"],
            het_terms=tuple(FunctionTerm.from_dict(t) for t in d["het_terms"]),
            effect_shift=d["effect_shift"],
            target_effect=d["target_effect"],
            signal_share=d["signal_share"],
            noise_scale=d["noise_scale"],
            noise_df=d["noise_df"],
            copied_fraction=d["copied_fraction"],
            config=DgpConfig.from_dict(d["config"]),
        )


# -- term sampling -----------------------------------------------------


def _diverse_columns(design: np.ndarray, min_unique: int = 8) -> np.ndarray:
    """Columns with enough distinct values to support polynomials/steps."""
    ok = [j for j in range(design.shape[1])
          if len(np.unique(design[:, j])) >= min_unique]
    return np.asarray(ok, dtype=int)


def _draw_coef(rng: np.random.Generator, cfg: DgpConfig) -> float:
    return float(rng.standard_t(cfg.coef_df))


def _draw_threshold(rng: np.random.Generator, x: np.ndarray,
                    cfg: DgpConfig) -> float:
    lo, hi = cfg.threshold_quantiles
    q = rng.uniform(lo, hi)
    # midpoint interpolation keeps thresholds reproducible across platforms
    return float(np.quantile(x, q, method="midpoint"))


def _beta_prime(rng: np.random.Generator, a: float = 2.0, b: float = 4.0) -> float:
    return float(rng.gamma(a) / rng.gamma(b))


def _sample_main_terms(rng: np.random.Generator, design: np.ndarray,
                       column: int, library: str, diverse: np.ndarray,
                       cfg: DgpConfig) -> list[FunctionTerm]:
    """A main-effect bundle on one column: always a linear term, plus
    higher-order companions according to the library."""
    terms = [FunctionTerm("linear", (column,), _draw_coef(rng, cfg))]
    # Draw the companion randomness unconditionally so the stream layout
    # does not depend on earlier outcomes.
    u1, u2 = rng.uniform(), rng.uniform()
    x = design[:, column]
    if column in diverse:
        if library == "polynomial":
            if u1 < cfg.p_quadratic:
                terms.append(FunctionTerm("quadratic", (column,), _draw_coef(rng, cfg)))
            if u2 < cfg.p_cubic:
                terms.append(FunctionTerm("cubic", (column,), _draw_coef(rng, cfg)))
        elif library == "step":
            if u1 < cfg.p_jump:
                a = _draw_threshold(rng, x, cfg)
                terms.append(FunctionTerm("jump", (column,), _draw_coef(rng, cfg), (a,)))
            if u2 < cfg.p_kink:
                b = _draw_threshold(rng, x, cfg)
                c = _draw_threshold(rng, x, cfg)
                terms.append(FunctionTerm("kink", (column,), _draw_coef(rng, cfg), (b, c)))
    return terms


def _sample_interaction(rng: np.random.Generator, design: np.ndarray,
                        library: str, cfg: DgpConfig,
                        columns: np.ndarray) -> FunctionTerm:
    arity = 3 if rng.uniform() < cfg.p_three_way else 2
    cols = rng.choice(columns, size=arity, replace=False)
    factors = []
    for c in sorted(int(c) for c in cols):
        if library == "step" and rng.uniform() < cfg.p_indicator_factor:
            t = _draw_threshold(rng, design[:, c], cfg)
            factors.append(Factor(c, "indicator", t, above=bool(rng.uniform() < 0.5)))
        else:
            factors.append(Factor(c, "linear"))
    return FunctionTerm("interaction", tuple(f.column for f in factors),
                        _draw_coef(rng, cfg), factors=tuple(factors))


def _sample_exp_term(rng: np.random.Generator, design: np.ndarray,
                     diverse: np.ndarray, cfg: DgpConfig,
                     columns: np.ndarray | None = None) -> FunctionTerm:
    pool = diverse if len(diverse) >= 2 else np.arange(design.shape[1])
    if columns is not None:
        restricted = np.intersect1d(pool, columns)
        if len(restricted) >= 2:
            pool = restricted
    cols = sorted(int(c) for c in rng.choice(pool, size=2, replace=False))
    scale = cfg.exp_inner_scale * (0.5 + _beta_prime(rng))
    inner = []
    for c in cols:
        kind = ("linear", "quadratic", "jump")[int(rng.integers(3))]
        coef = float(np.clip(scale * rng.standard_t(cfg.coef_df),
                             -cfg.exp_inner_clip, cfg.exp_inner_clip))
        thr = _draw_threshold(rng, design[:, c], cfg) if kind == "jump" else 0.0
        inner.append(InnerFn(c, kind, coef, thr))
    return FunctionTerm("exp", tuple(cols), _draw_coef(rng, cfg),
                        inner=tuple(inner))


def _sample_terms(rng: np.random.Generator, design: np.ndarray, library: str,
                  cfg: DgpConfig,
                  columns: np.ndarray | None = None) -> list[FunctionTerm]:
    """Term list for one model under the given function library.

    ``columns`` restricts the candidate pool (used to keep the response
    surface off the assignment columns when alignment is none).
    """
    if columns is None:
        columns = np.arange(design.shape[1])
    diverse = _diverse_columns(design)
    n_slots = max(cfg.term_count_min, 1 + int(rng.poisson(cfg.term_count_mean)))
    terms: list[FunctionTerm] = []
    for _ in range(n_slots):
        if library != "linear" and len(columns) >= 3 \
                and rng.uniform() < cfg.p_interaction:
            terms.append(_sample_interaction(rng, design, library, cfg, columns))
        else:
            col = int(columns[rng.integers(len(columns))])
            terms.extend(_sample_main_terms(rng, design, col, library, diverse, cfg))
    return terms


def _sample_penalty_regions(rng: np.random.Generator, design: np.ndarray,
                            cfg: DgpConfig) -> tuple[PenaltyRegion, ...]:
    """One or two conjunctions of extreme-value conditions, each selecting a
    nonempty but bounded subset of the build sample."""
    n_regions = 1 + int(rng.uniform() < 0.35)
    regions: list[PenaltyRegion] = []
    for _ in range(n_regions):
        for _attempt in range(20):
            n_cond = 1 + int(rng.integers(3))
            cols = rng.choice(design.shape[1], size=n_cond, replace=False)
            conds = []
            for c in sorted(int(c) for c in cols):
                x = design[:, c]
                q = rng.uniform(*cfg.penalty_quantiles)
                above = bool(rng.uniform() < 0.5)
                cutoff = float(np.quantile(x, q if above else 1.0 - q,
                                           method="midpoint"))
                conds.append((c, above, cutoff))
            region = PenaltyRegion(tuple(conds))
            share = float(region.mask(design).mean())
            if 0.0 < share <= cfg.max_penalty_share:
                regions.append(region)
                break
        # a region that cannot be placed after 20 tries is dropped silently;
        # at least one region is guaranteed below
    if not regions:
        # fall back to a single generous condition on the first column
        x = design[:, 0]
        cutoff = float(np.quantile(x, cfg.penalty_quantiles[0], method="midpoint"))
        regions.append(PenaltyRegion(((0, True, cutoff),)))
    return tuple(regions)


# -- rescaling ---------------------------------------------------------


def rescale_assignment(spec: DgpSpec, covariates: CovariateTable) -> DgpSpec:
    """Fix the logit shift and scale against the build sample.

    The raw logit is affinely mapped so that (a) the mean propensity over
    non-penalized rows equals the knob's treated target within tolerance
    and (b) at least 90% of non-penalized rows have propensity inside
    [0.1, 0.9].  Iteration count across all bisections is capped; running
    out raises with the achieved values.
    """
    design = covariates.standardized()
    target = spec.knobs.treated_target
    mask = ~spec.penalized_mask(design)
    if not mask.any():
        raise DgpBuildError("penalty regions exclude every row")
    ell = spec.raw_logit(design)[mask]
    cfg = spec.config
    budget = [cfg.max_bisect_iter]

    def solve_shift(scale: float) -> float:
        """Bisection for the shift giving the target treated share."""
        lo, hi = -60.0, 60.0
        scaled = scale * ell
        for _ in range(cfg.max_bisect_iter):
            if budget[0] <= 0:
                break
            budget[0] -= 1
            mid = 0.5 * (lo + hi)
            frac = float(np.mean(1.0 / (1.0 + np.exp(-np.clip(mid + scaled, -500, 500)))))
            if abs(frac - target) <= cfg.treated_tolerance:
                return mid
            if frac < target:
                lo = mid
            else:
                hi = mid
        return 0.5 * (lo + hi)

    spread = float(np.quantile(ell, 0.97) - np.quantile(ell, 0.03))
    if spread < 1e-12:
        # constant raw logit: intercept-only mechanism, exact target
        shift = float(np.log(target / (1.0 - target)) - np.median(ell))
        return replace(spec, logit_shift=shift, logit_scale=1.0)
    logit_band = float(np.log(LOGIT_HI / (1.0 - LOGIT_HI)))  # 2.197
    scale = min(1.0, 2.0 * logit_band / spread)
    best = None
    while budget[0] > 0:
        shift = solve_shift(scale)
        eta = shift + scale * ell
        e = 1.0 / (1.0 + np.exp(-np.clip(eta, -500, 500)))
        coverage = float(np.mean((e >= LOGIT_LO) & (e <= LOGIT_HI)))
        frac = float(e.mean())
        best = (shift, scale, frac, coverage)
        if coverage >= 0.9 and abs(frac - target) <= 0.02:
            return replace(spec, logit_shift=shift, logit_scale=scale)
        scale *= 0.8
    shift, scale, frac, coverage = best
    raise DgpBuildError(
        f"assignment rescale failed: treated share {frac:.4f} (target {target}), "
        f"in-range coverage {coverage:.3f}")


def rescale_response(spec: DgpSpec, covariates: CovariateTable) -> DgpSpec:
    """Center and scale the control surface, then pin the average effect.

    mu0 is affinely adjusted so the control-arm outcome (mu0 plus noise)
    has mean 0 and standard deviation about 1 on the build sample; the
    treated surface is then shifted so the propensity-weighted mean of
    (mu1 - mu0) equals the drawn target effect.
    """
    design = covariates.standardized()
    raw = np.zeros(design.shape[0])
    for t in spec.response_terms:
        raw += t.values(design)
    sd = float(raw.std())
    if sd < 1e-12:
        raise DgpBuildError("degenerate response surface: zero variance before noise")
    share = spec.signal_share
    response_scale = float(np.sqrt(share) / sd)
    intercept = -response_scale * float(raw.mean())
    noise_var = max(1.0 - share, 1e-4)
    df = spec.noise_df
    t_var = df / (df - 2.0)
    noise_scale = float(np.sqrt(noise_var / t_var))

    e = spec.propensity(design)
    tau_spread = np.zeros(design.shape[0])
    for t in spec.het_terms:
        tau_spread += t.values(design)
    wsum = float(e.sum())
    if wsum <= 0:
        raise DgpBuildError("propensity is zero everywhere; cannot pin the effect")
    effect_shift = spec.target_effect - float(np.dot(e, tau_spread)) / wsum
    return replace(spec, response_scale=response_scale,
                   response_intercept=intercept, noise_scale=noise_scale,
                   effect_shift=effect_shift)


# -- top-level build ---------------------------------------------------


def build_dgp(knobs: Knobs, covariates: CovariateTable, seed: int,
              config: DgpConfig | None = None) -> DgpSpec:
    """Sample and calibrate a process for the given knobs.

    Identical (knobs, covariates, seed, config) reproduce a byte-identical
    serialized spec.
    """
    cfg = config or DgpConfig()
    design = covariates.standardized()
    if design.shape[1] < MIN_COLUMNS:
        raise DgpBuildError(
            f"need at least {MIN_COLUMNS} design columns, got {design.shape[1]}")
    rng = np.random.default_rng(derive_seed("dgp-build", int(seed)))

    # assignment side
    assignment = _sample_terms(rng, design, knobs.treatment_model, cfg)
    penalties: tuple[PenaltyRegion, ...] = ()
    if knobs.overlap == "penalize":
        penalties = _sample_penalty_regions(rng, design, cfg)

    # response side: copied assignment terms (re-drawn coefficients) + fresh
    response_library = "polynomial" if knobs.response_model == "exponential" \
        else knobs.response_model
    n_copy = int(round(knobs.copy_probability * len(assignment)))
    copied_idx = sorted(rng.choice(len(assignment), size=n_copy, replace=False)
                        .tolist()) if n_copy else []
    # Copied terms keep their coefficients: the shared part of the two
    # models is the confounding signal, and redrawing signs would wash the
    # assignment/outcome correlation out.
    response: list[FunctionTerm] = [assignment[i] for i in copied_idx]
    fresh_pool = None
    if knobs.alignment == "none":
        # no true confounders: keep the fresh response terms off the
        # assignment columns so chance collisions cannot confound
        used = {c for t in assignment for c in t.columns}
        free = np.array([j for j in range(design.shape[1]) if j not in used])
        if len(free) >= MIN_COLUMNS:
            fresh_pool = free
    response.extend(_sample_terms(rng, design, response_library, cfg, fresh_pool))
    if knobs.response_model == "exponential":
        diverse = _diverse_columns(design)
        response.append(_sample_exp_term(rng, design, diverse, cfg, fresh_pool))
    for region in penalties:
        # the excluded corner enters the response surface so that the
        # overlap failure is also a confounding failure
        response.append(region.as_term(_draw_coef(rng, cfg)))
    copied_fraction = n_copy / len(assignment) if assignment else 0.0

    # heterogeneity: treated-only coefficient shifts on response terms
    het: list[FunctionTerm] = []
    if knobs.heterogeneity != "none":
        base = 1 if knobs.heterogeneity == "low" else 4
        count = base + int(rng.binomial(4, 0.5))
        count = min(count, len(response))
        picked = sorted(rng.choice(len(response), size=count, replace=False).tolist())
        het = [response[i].with_coefficient(cfg.het_coef_scale
                                            * rng.standard_t(cfg.coef_df))
               for i in picked]

    signal_share = float(rng.uniform(*cfg.signal_share_range))
    target_effect = cfg.target_effect_loc + cfg.target_effect_scale \
        * float(rng.standard_t(cfg.target_effect_df))

    spec = DgpSpec(
        knobs=knobs,
        assignment_terms=tuple(assignment),
        penalty_regions=penalties,
        logit_shift=0.0,
        logit_scale=1.0,
        response_terms=tuple(response),
        response_intercept=0.0,
        response_scale=1.0,
        het_terms=tuple(het),
        effect_shift=0.0,
        target_effect=target_effect,
        signal_share=signal_share,
        noise_scale=float("nan"),  # fixed by rescale_response
        noise_df=cfg.noise_df,
        copied_fraction=copied_fraction,
        config=cfg,
    )
    spec = rescale_assignment(spec, covariates)
    spec = rescale_response(spec, covariates)
    return spec
