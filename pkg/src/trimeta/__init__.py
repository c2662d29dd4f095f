"""Asymmetric adaptive trimmed-mean meta-analysis."""

from .bootstrap import (
    BootstrapEnsemble,
    ResidualSet,
    classic_residuals,
    generate_ensemble,
    make_residuals,
    phi_residuals,
    solve_phi,
)
from .dataio import (
    ReportDocument,
    build_report,
    load_cdp,
    read_dataset,
    read_report,
    write_report,
)
from .errors import (
    BracketError,
    ConvergenceError,
    DatasetParseError,
    DegenerateTrimError,
    DomainError,
    InfeasibleTrimError,
    InputError,
    NumericalError,
    SearchError,
    TrimetaError,
)
from .mathkernel import DEFAULT_SOLVER, SolverConfig, norm_cdf, norm_pdf, solve_monotone
from .meta import MetaDataset, RandomEffectsFit, Study, dsl_fit, fixed_effect_fit, i_squared, pooled_fit
from .pipeline import DEFAULT_SEED, PipelineConfig, analyze
from .simulation import NullStudy, SimTemplate, estimate_alpha_m, run_null_study
from .search import (
    AlphaCell,
    AlphaGrid,
    TrimSearchResult,
    apply_alpha_m_correction,
    evaluate_cell,
    grid_search,
)
from .trimming import (
    TrimBounds,
    TrimmedDataset,
    TrimSpec,
    apply_trim,
    inclusion_probability,
    normalized_weights,
    solve_bounds,
    trimmed_fit,
)

__version__ = "0.1.0"
