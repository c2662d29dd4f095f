"""Adaptive choice of the trimming proportions.

Every candidate ``(alpha_lo, alpha_hi)`` is scored by the variance, across
one shared bootstrap ensemble, of the trimmed pooled estimate; each replicate
has its own bounds solved and its own model refitted. The minimiser is then
applied to the original data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import meta
from .bootstrap import BootstrapEnsemble
from .errors import DegenerateTrimError, InfeasibleTrimError, InputError, SearchError
from .mathkernel import DEFAULT_SOLVER, SolverConfig, norm_cdf_unchecked
from .meta import RandomEffectsFit
from .trimming import ALPHA_MAX, ALPHA_ZERO, RETENTION_FLOOR, TrimBounds, TrimSpec, tail_bounds_batch, trimmed_fit

__all__ = [
    "VALIDITY_THRESHOLD",
    "TIE_TOLERANCE",
    "AlphaGrid",
    "AlphaCell",
    "AlphaMCorrection",
    "TrimSearchResult",
    "EnsembleTrimmer",
    "evaluate_cell",
    "grid_search",
    "fixed_spec_result",
    "apply_alpha_m_correction",
]

VALIDITY_THRESHOLD = 0.95
TIE_TOLERANCE = 1e-12
_REFINE_FACTOR = 4
_REFINE_HALF_WIDTH = 4


def _key(a: float) -> float:
    return round(float(a), 12)


@dataclass(frozen=True)
class AlphaGrid:
    """Candidate proportions for each side, plus refinement settings.

    Refinement round ``k`` evaluates a ``9 x 9`` patch, spacing
    ``step / 4**k``, centred on the incumbent optimum.
    """

    values_lo: tuple
    values_hi: tuple
    alpha_max: float = ALPHA_MAX
    refine_rounds: int = 2
    step: float = 0.02

    def __post_init__(self):
        lo = tuple(_key(a) for a in self.values_lo)
        hi = tuple(_key(a) for a in self.values_hi)
        for name, vals in (("values_lo", lo), ("values_hi", hi)):
            if 0.0 not in vals:
                raise InputError(f"{name} must contain 0")
            if list(vals) != sorted(set(vals)):
                raise InputError(f"{name} must be sorted and free of duplicates")
            if vals[0] < 0 or vals[-1] > self.alpha_max:
                raise InputError(f"{name} must lie in [0, alpha_max]")
        if self.refine_rounds < 0:
            raise InputError("refine_rounds must be >= 0")
        if not self.step > 0:
            raise InputError("step must be positive")
        object.__setattr__(self, "values_lo", lo)
        object.__setattr__(self, "values_hi", hi)

    @classmethod
    def regular(cls, step: float = 0.02, alpha_max: float = ALPHA_MAX, refine_rounds: int = 2) -> "AlphaGrid":
        if not 0 < step <= alpha_max:
            raise InputError("grid step must lie in (0, alpha_max]")
        count = int(math.floor(alpha_max / step + 1e-9)) + 1
        values = tuple(_key(k * step) for k in range(count))
        return cls(values, values, alpha_max, refine_rounds, step)

    def coarse_cells(self):
        for a_lo in self.values_lo:
            for a_hi in self.values_hi:
                if a_lo + a_hi <= self.alpha_max + 1e-12:
                    yield a_lo, a_hi


@dataclass(frozen=True)
class AlphaCell:
    spec: TrimSpec
    boot_var: float
    bagged_mean: float
    boot_se: float
    n_valid: int
    n_replicates: int
    feasible: bool


@dataclass(frozen=True)
class AlphaMCorrection:
    alpha_m: float
    original: TrimSpec
    corrected: TrimSpec


@dataclass(frozen=True, eq=False)
class TrimSearchResult:
    """Outcome of the proportion search on one dataset.

    ``optimum_cell`` and ``baseline_cell`` hold the bagged statistics at the
    chosen spec and at ``(0, 0)``. ``final_fit`` is the trimmed fit of the
    original data at ``optimum``, and ``untrimmed_fit`` is the plain fit.
    The reported standard errors do not account for ``(alpha_lo, alpha_hi)``
    having been estimated.
    """

    surface: tuple
    optimum: TrimSpec
    optimum_cell: Optional[AlphaCell]
    baseline_cell: AlphaCell
    untrimmed_fit: RandomEffectsFit
    final_fit: RandomEffectsFit
    final_bounds: TrimBounds
    proportions_kept: np.ndarray
    model: str
    ensemble_fingerprint: str
    n_replicates: int
    alpha_m_correction: Optional[AlphaMCorrection] = None
    warnings: tuple = ()
    ensemble: Optional[BootstrapEnsemble] = field(default=None, repr=False)
    solver: SolverConfig = field(default=DEFAULT_SOLVER, repr=False)
    floor: float = RETENTION_FLOOR

    @property
    def outlier_index(self) -> float:
        return self.optimum.alpha_lo + self.optimum.alpha_hi

    @property
    def dataset(self):
        return None if self.ensemble is None else self.ensemble.dataset


class EnsembleTrimmer:
    """Evaluates trim specs on every replicate of an ensemble.

    Bounds and their normal-CDF matrices are cached per proportion. The
    upper bound depends only on ``alpha_hi`` and the lower only on
    ``alpha_lo``, so a grid costs one solve per distinct value per side.
    """

    def __init__(
        self,
        ens: BootstrapEnsemble,
        model: str = "dsl",
        cfg: SolverConfig = DEFAULT_SOLVER,
        floor: float = RETENTION_FLOOR,
        validity: float = VALIDITY_THRESHOLD,
    ):
        if model not in meta.MODELS:
            raise InputError(f"unknown model {model!r}")
        self.ensemble = ens
        self.model = model
        self.cfg = cfg
        self.floor = floor
        self.validity = validity
        self._y = np.asarray(ens.effects)
        self._s = np.asarray(ens.ses)
        w = 1.0 / self._s**2
        self._w = w
        self._y2 = self._y**2
        self._k_all = np.full(self._y.shape[0], self._y.shape[1])
        self._p = np.empty_like(w)
        self._w_eff = np.empty_like(w)
        self._scratch = np.empty_like(w)
        self._keep = np.empty(w.shape, dtype=bool)
        self._v = w / w.sum(axis=1, keepdims=True)
        self._upper = {}
        self._lower = {}

    def _side(self, alpha: float, upper: bool):
        cache = self._upper if upper else self._lower
        key = _key(alpha)
        if key not in cache:
            if upper:
                b, ok = tail_bounds_batch(self._y, self._s, self._v, key, self.cfg)
                cdf = norm_cdf_unchecked((b[:, None] - self._y) / self._s)
            else:
                nb, ok = tail_bounds_batch(-self._y, self._s, self._v, key, self.cfg)
                b = -nb
                cdf = norm_cdf_unchecked((b[:, None] - self._y) / self._s)
            cache[key] = (b, cdf, ok)
        return cache[key]

    def thetas(self, spec: TrimSpec) -> np.ndarray:
        """Trimmed estimate per replicate; NaN marks a degenerate replicate."""
        n_rep = self._y.shape[0]
        valid = np.ones(n_rep, dtype=bool)
        upper = lower = None
        if spec.alpha_hi >= ALPHA_ZERO:
            b_hi, upper, ok = self._side(spec.alpha_hi, True)
            valid &= ok
        if spec.alpha_lo >= ALPHA_ZERO:
            b_lo, lower, ok = self._side(spec.alpha_lo, False)
            valid &= ok
        if upper is None and lower is None:
            theta, _ = meta._pool_rows(self._y, self._y2, self._w, self._k_all, self.model, self._scratch)
            return theta
        p, keep, w_eff = self._p, self._keep, self._w_eff
        if upper is None:
            np.subtract(1.0, lower, out=p)
        elif lower is None:
            np.copyto(p, upper)
        else:
            np.subtract(upper, lower, out=p)
            valid &= b_lo < b_hi
        np.greater_equal(p, self.floor, out=keep)
        np.multiply(self._w, p, out=w_eff)
        np.multiply(w_eff, keep, out=w_eff)
        k = np.count_nonzero(keep, axis=1)
        theta, _ = meta._pool_rows(self._y, self._y2, w_eff, k, self.model, self._scratch)
        valid &= k >= 2
        theta[~valid] = np.nan
        return theta

    def cell(self, spec: TrimSpec) -> AlphaCell:
        theta = self.thetas(spec)
        good = theta[np.isfinite(theta)]
        n_rep = theta.shape[0]
        n_valid = int(good.size)
        if n_valid >= 2:
            var = float(np.var(good, ddof=1))
            mean = float(good.mean())
        elif n_valid == 1:
            var, mean = 0.0, float(good[0])
        else:
            var, mean = math.nan, math.nan
        feasible = n_valid >= 2 and n_valid >= self.validity * n_rep
        return AlphaCell(spec, var, mean, math.sqrt(var) if var == var else math.nan, n_valid, n_rep, feasible)


def evaluate_cell(
    ens: BootstrapEnsemble,
    spec: TrimSpec,
    model: str = "dsl",
    cfg: SolverConfig = DEFAULT_SOLVER,
    floor: float = RETENTION_FLOOR,
    validity: float = VALIDITY_THRESHOLD,
) -> AlphaCell:
    """Bootstrap variance and bagged mean of the trimmed estimate at ``spec``."""
    return EnsembleTrimmer(ens, model, cfg, floor, validity).cell(spec)


def _rank_key(cell: AlphaCell, best_var: float):
    tied = cell.boot_var <= best_var + TIE_TOLERANCE
    return (
        0 if tied else 1,
        cell.boot_var if not tied else 0.0,
        cell.spec.total,
        cell.spec.alpha_hi,
        cell.spec.alpha_lo,
    )


def _ranked(cells):
    feasible = [c for c in cells if c.feasible]
    if not feasible:
        return []
    best = min(c.boot_var for c in feasible)
    return sorted(feasible, key=lambda c: _rank_key(c, best))


def _refine_values(center: float, h: float, alpha_max: float):
    vals = []
    for k in range(-_REFINE_HALF_WIDTH, _REFINE_HALF_WIDTH + 1):
        a = _key(center + k * h)
        if 0.0 <= a <= alpha_max:
            vals.append(a)
    return vals


def _finish(ens, trimmer, cells, optimum_cell, baseline, model, cfg, floor, warnings, forced=False):
    ds = ens.dataset
    untrimmed = meta.pooled_fit(ds, model)
    candidates = [optimum_cell] if forced else _ranked(cells)
    if not candidates:
        raise SearchError("no feasible cell in the search surface")
    chosen = final = bounds = None
    for i, cell in enumerate(candidates):
        try:
            final, bounds = trimmed_fit(ds, cell.spec, model, cfg, floor)
        except (DegenerateTrimError, InfeasibleTrimError) as exc:
            if forced:
                raise
            warnings.append(f"skipped optimum candidate {cell.spec.as_tuple()}: {exc}")
            continue
        chosen = cell
        break
    if chosen is None:
        raise SearchError("no feasible cell could be applied to the original data")
    dropped = [s.id for s, p in zip(ds.studies, bounds.inclusion) if p < floor]
    if dropped:
        warnings.append(f"studies dropped at the optimum (P < {floor:g}): {', '.join(dropped)}")
    if chosen.n_valid < chosen.n_replicates:
        warnings.append(
            f"{chosen.n_replicates - chosen.n_valid} of {chosen.n_replicates} replicates degenerate at the optimum"
        )
    if ens.residuals.capped:
        warnings.append("phi shrinkage capped: raw residuals used in the bootstrap")
    return TrimSearchResult(
        surface=tuple(cells),
        optimum=chosen.spec,
        optimum_cell=chosen,
        baseline_cell=baseline,
        untrimmed_fit=untrimmed,
        final_fit=final,
        final_bounds=bounds,
        proportions_kept=np.asarray(bounds.inclusion).copy(),
        model=model,
        ensemble_fingerprint=ens.fingerprint,
        n_replicates=ens.n_replicates,
        warnings=tuple(warnings),
        ensemble=ens,
        solver=cfg,
        floor=floor,
    )


def grid_search(
    ens: BootstrapEnsemble,
    grid: AlphaGrid,
    model: str = "dsl",
    cfg: SolverConfig = DEFAULT_SOLVER,
    floor: float = RETENTION_FLOOR,
    validity: float = VALIDITY_THRESHOLD,
) -> TrimSearchResult:
    """Score every grid cell on ``ens`` and fit the original data at the best.

    Among cells whose bootstrap variance is within ``TIE_TOLERANCE`` of the
    minimum, the smallest ``alpha_lo + alpha_hi`` wins, then the smallest
    ``alpha_hi``. Cell ``(0, 0)`` is always scored, so trimming is only
    chosen when it lowers the variance.
    """
    trimmer = EnsembleTrimmer(ens, model, cfg, floor, validity)
    evaluated = {}

    def score(a_lo, a_hi):
        key = (_key(a_lo), _key(a_hi))
        if key not in evaluated:
            evaluated[key] = trimmer.cell(TrimSpec(key[0], key[1], grid.alpha_max))
        return evaluated[key]

    score(0.0, 0.0)
    for a_lo, a_hi in grid.coarse_cells():
        score(a_lo, a_hi)
    h = grid.step
    for _ in range(grid.refine_rounds):
        ranked = _ranked(evaluated.values())
        if not ranked:
            break
        centre = ranked[0].spec
        h /= _REFINE_FACTOR
        for a_lo in _refine_values(centre.alpha_lo, h, grid.alpha_max):
            for a_hi in _refine_values(centre.alpha_hi, h, grid.alpha_max):
                if a_lo + a_hi <= grid.alpha_max + 1e-12:
                    score(a_lo, a_hi)

    cells = sorted(evaluated.values(), key=lambda c: (c.spec.alpha_lo, c.spec.alpha_hi))
    warnings = []
    n_bad = sum(not c.feasible for c in cells)
    if n_bad:
        warnings.append(f"{n_bad} of {len(cells)} grid cells infeasible (valid replicates < {validity:.0%})")
    baseline = evaluated[(0.0, 0.0)]
    return _finish(ens, trimmer, cells, None, baseline, model, cfg, floor, warnings)


def fixed_spec_result(
    ens: BootstrapEnsemble,
    spec: TrimSpec,
    model: str = "dsl",
    cfg: SolverConfig = DEFAULT_SOLVER,
    floor: float = RETENTION_FLOOR,
    validity: float = VALIDITY_THRESHOLD,
) -> TrimSearchResult:
    """Result for a user-chosen spec, with bagged statistics at it and at (0, 0)."""
    trimmer = EnsembleTrimmer(ens, model, cfg, floor, validity)
    baseline = trimmer.cell(TrimSpec(0.0, 0.0, spec.alpha_max))
    cell = baseline if spec.is_identity else trimmer.cell(spec)
    cells = [baseline] if cell is baseline else [baseline, cell]
    return _finish(ens, trimmer, cells, cell, baseline, model, cfg, floor, [], forced=True)


def apply_alpha_m_correction(result: TrimSearchResult, alpha_m: float) -> TrimSearchResult:
    """Shift both optimal proportions down by ``alpha_m``, flooring at zero.

    The final fit and proportions kept are recomputed at the corrected spec.
    Bagged statistics are re-evaluated there when the ensemble is still
    attached to ``result``; otherwise ``optimum_cell`` becomes ``None``.
    """
    if not alpha_m >= 0:
        raise InputError("alpha_m must be nonnegative")
    if alpha_m == 0:
        return result
    ds = result.dataset
    if ds is None:
        raise InputError("result no longer carries its dataset; cannot recompute the fit")
    orig = result.optimum
    corrected = TrimSpec(max(orig.alpha_lo - alpha_m, 0.0), max(orig.alpha_hi - alpha_m, 0.0), orig.alpha_max)
    final, bounds = trimmed_fit(ds, corrected, result.model, result.solver, result.floor)
    cell = None
    for c in result.surface:
        if _key(c.spec.alpha_lo) == _key(corrected.alpha_lo) and _key(c.spec.alpha_hi) == _key(corrected.alpha_hi):
            cell = c
            break
    if cell is None and result.ensemble is not None:
        cell = evaluate_cell(result.ensemble, corrected, result.model, result.solver, result.floor)
    return replace(
        result,
        optimum=corrected,
        optimum_cell=cell,
        final_fit=final,
        final_bounds=bounds,
        proportions_kept=np.asarray(bounds.inclusion).copy(),
        alpha_m_correction=AlphaMCorrection(float(alpha_m), orig, corrected),
        warnings=result.warnings + (f"alpha_m correction {alpha_m:g} applied: {orig.as_tuple()} -> {corrected.as_tuple()}",),
    )
