"""End-to-end analysis: fit, bootstrap, search, final trimmed fit."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from . import meta
from .bootstrap import VARIANTS, generate_ensemble, make_residuals
from .errors import InputError
from .mathkernel import DEFAULT_SOLVER, SolverConfig
from .meta import MetaDataset
from .search import (
    VALIDITY_THRESHOLD,
    AlphaGrid,
    TrimSearchResult,
    apply_alpha_m_correction,
    fixed_spec_result,
    grid_search,
)
from .trimming import ALPHA_MAX, RETENTION_FLOOR, TrimSpec

__all__ = ["DEFAULT_SEED", "DEFAULT_REPLICATES", "PipelineConfig", "analyze"]

DEFAULT_SEED = 20190612
DEFAULT_REPLICATES = 10000


@dataclass(frozen=True)
class PipelineConfig:
    model: str = "dsl"
    n_replicates: int = DEFAULT_REPLICATES
    seed: int = DEFAULT_SEED
    grid_step: float = 0.02
    alpha_max: float = ALPHA_MAX
    refine_rounds: int = 2
    variant: str = "phi_shrunk"
    solver: SolverConfig = field(default=DEFAULT_SOLVER)
    validity: float = VALIDITY_THRESHOLD
    floor: float = RETENTION_FLOOR
    workers: int = 1

    def __post_init__(self):
        if self.model not in meta.MODELS:
            raise InputError(f"unknown model {self.model!r}; expected one of {meta.MODELS}")
        if self.variant not in VARIANTS:
            raise InputError(f"unknown residual variant {self.variant!r}; expected one of {VARIANTS}")
        if self.n_replicates < 2:
            raise InputError("n_replicates must be at least 2")
        if not 0 < self.validity <= 1:
            raise InputError("validity must lie in (0, 1]")
        self.grid()

    def as_dict(self) -> dict:
        """Settings that determine the result, for reports."""
        return {
            "model": self.model,
            "n_replicates": self.n_replicates,
            "seed": self.seed,
            "grid_step": self.grid_step,
            "alpha_max": self.alpha_max,
            "refine_rounds": self.refine_rounds,
            "variant": self.variant,
            "validity": self.validity,
            "floor": self.floor,
        }

    def grid(self) -> AlphaGrid:
        return AlphaGrid.regular(self.grid_step, self.alpha_max, self.refine_rounds)


def analyze(
    ds: MetaDataset,
    config: PipelineConfig = PipelineConfig(),
    spec: Optional[TrimSpec] = None,
    alpha_m: Optional[float] = None,
) -> TrimSearchResult:
    """Run the full trimmed analysis of ``ds``.

    The model is fitted to the data and residuals are built for the chosen
    variant. One seeded ensemble is generated, and every trim spec is scored
    on it. With ``spec`` given the search is skipped and that spec is used.
    ``alpha_m`` applies the small-sample correction to the chosen spec.
    """
    # residuals always come from the random-effects fit: they need tau2
    base = meta.dsl_fit(ds)
    res = make_residuals(ds, base, config.variant, config.solver)
    ens = generate_ensemble(ds, base, res, config.n_replicates, config.seed, workers=config.workers)
    if spec is not None:
        result = fixed_spec_result(ens, spec, config.model, config.solver, config.floor, config.validity)
    else:
        result = grid_search(ens, config.grid(), config.model, config.solver, config.floor, config.validity)
    if alpha_m is not None:
        result = apply_alpha_m_correction(result, alpha_m)
    return result
