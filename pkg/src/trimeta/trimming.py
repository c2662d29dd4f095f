"""Probabilistic trimming of studies.

A trim specification ``(alpha_lo, alpha_hi)`` is turned into bounds
``(b_lo, b_hi)`` on the true study means by solving

    sum_i v_i * Phi((y_i - b_hi) / se_i) = alpha_hi
    sum_i v_i * Phi((b_lo - y_i) / se_i) = alpha_lo

with ``v_i`` the normalised inverse-variance weights. Study ``i`` is then kept
with probability ``P_i = Phi((b_hi - y_i)/se_i) - Phi((b_lo - y_i)/se_i)``,
which is applied by inflating its variance to ``se_i**2 / P_i``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from . import meta
from .errors import DegenerateTrimError, InfeasibleTrimError, InputError, NumericalError
from .mathkernel import (
    DEFAULT_SOLVER,
    SolverConfig,
    norm_cdf,
    norm_cdf_unchecked,
    norm_pdf,
    solve_monotone,
    solve_monotone_batch,
)
from .meta import MetaDataset, RandomEffectsFit, Study

__all__ = [
    "ALPHA_MAX",
    "ALPHA_ZERO",
    "RETENTION_FLOOR",
    "TrimSpec",
    "TrimBounds",
    "TrimmedDataset",
    "normalized_weights",
    "solve_bounds",
    "inclusion_probability",
    "inclusion_probabilities",
    "apply_trim",
    "trimmed_fit",
    "tail_bounds_batch",
]

ALPHA_MAX = 0.995
# proportions below this are treated as exactly zero (infinite bound)
ALPHA_ZERO = 1e-12
# inclusion probability below which a study is dropped outright
RETENTION_FLOOR = 1e-8

_BRACKET_SIGMAS = 10.0
_MAX_EXPANSIONS = 60
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)
_INV_SQRT2 = 1.0 / math.sqrt(2.0)


@dataclass(frozen=True)
class TrimSpec:
    """Lower and upper trimming proportions."""

    alpha_lo: float = 0.0
    alpha_hi: float = 0.0
    alpha_max: float = ALPHA_MAX

    def __post_init__(self):
        if not 0 < self.alpha_max < 1:
            raise InputError("alpha_max must lie in (0, 1)")
        for name in ("alpha_lo", "alpha_hi"):
            a = getattr(self, name)
            if not (math.isfinite(a) and a >= 0):
                raise InputError(f"{name} must be a nonnegative number, got {a}")
        if self.alpha_lo + self.alpha_hi > self.alpha_max + 1e-12:
            raise InputError(
                f"alpha_lo + alpha_hi = {self.alpha_lo + self.alpha_hi} exceeds alpha_max {self.alpha_max}"
            )

    @property
    def total(self) -> float:
        return self.alpha_lo + self.alpha_hi

    @property
    def is_identity(self) -> bool:
        return self.alpha_lo < ALPHA_ZERO and self.alpha_hi < ALPHA_ZERO

    def as_tuple(self):
        return (self.alpha_lo, self.alpha_hi)


@dataclass(frozen=True)
class TrimBounds:
    b_lo: float
    b_hi: float
    inclusion: np.ndarray


@dataclass(frozen=True)
class TrimmedDataset:
    """A dataset after variance inflation.

    ``inflated_se`` is ``inf`` for dropped studies; ``retained`` is the raw
    inclusion probability of every study, dropped or not.
    """

    base: MetaDataset
    inflated_se: np.ndarray
    retained: np.ndarray
    dropped: frozenset

    @property
    def kept_mask(self) -> np.ndarray:
        return np.array([s.id not in self.dropped for s in self.base.studies])

    def to_dataset(self) -> MetaDataset:
        studies = tuple(
            Study(s.id, s.effect, float(se))
            for s, se in zip(self.base.studies, self.inflated_se)
            if s.id not in self.dropped
        )
        return MetaDataset(studies, name=self.base.name, sign_note=self.base.sign_note)


def normalized_weights(ds: MetaDataset) -> np.ndarray:
    """Inverse-variance weights scaled to sum to one."""
    w = 1.0 / ds.ses**2
    return w / w.sum()


def _upper_bound(y, s, v, alpha, cfg: SolverConfig) -> float:
    # tail mass above b; decreasing in b
    def g(b):
        return float(np.dot(v, norm_cdf_unchecked((y - b) / s))) - alpha

    def dg(b):
        return -float(np.dot(v, norm_pdf((y - b) / s) / s))

    spread = _BRACKET_SIGMAS * float(s.max())
    lo, hi = float(y.min()) - spread, float(y.max()) + spread
    width = hi - lo
    for _ in range(_MAX_EXPANSIONS):
        if g(lo) >= 0 and g(hi) <= 0:
            break
        width *= 2.0
        lo, hi = lo - width, hi + width
    return solve_monotone(g, cfg.with_bracket(lo, hi), fprime=dg)


def solve_bounds(ds: MetaDataset, spec: TrimSpec, cfg: SolverConfig = DEFAULT_SOLVER) -> TrimBounds:
    """Solve the two bound equations for ``spec`` on ``ds``.

    A side whose proportion is zero gets an infinite bound. Raises
    :class:`InfeasibleTrimError` if the solved bounds cross.
    """
    if len(ds) < 1:
        raise InputError("cannot trim an empty dataset")
    y, s = ds.effects, ds.ses
    v = normalized_weights(ds)
    try:
        b_hi = math.inf if spec.alpha_hi < ALPHA_ZERO else _upper_bound(y, s, v, spec.alpha_hi, cfg)
        b_lo = -math.inf if spec.alpha_lo < ALPHA_ZERO else -_upper_bound(-y, s, v, spec.alpha_lo, cfg)
    except NumericalError as exc:
        raise type(exc)(f"solving trim bounds for {spec.as_tuple()} on {ds.name!r}: {exc}") from exc
    if not b_lo < b_hi:
        raise InfeasibleTrimError(f"trim bounds cross for {spec.as_tuple()}: b_lo={b_lo}, b_hi={b_hi}")
    return TrimBounds(b_lo, b_hi, inclusion_probabilities(y, s, b_lo, b_hi))


def inclusion_probabilities(y, s, b_lo, b_hi) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    s = np.asarray(s, dtype=float)
    upper = np.ones_like(y) if math.isinf(b_hi) else norm_cdf_unchecked((b_hi - y) / s)
    lower = np.zeros_like(y) if math.isinf(b_lo) else norm_cdf_unchecked((b_lo - y) / s)
    return np.clip(upper - lower, 0.0, 1.0)


def inclusion_probability(study: Study, bounds: TrimBounds) -> float:
    """Probability that the true mean of ``study`` lies within ``bounds``."""
    upper = 1.0 if math.isinf(bounds.b_hi) else norm_cdf((bounds.b_hi - study.effect) / study.se)
    lower = 0.0 if math.isinf(bounds.b_lo) else norm_cdf((bounds.b_lo - study.effect) / study.se)
    return min(1.0, max(0.0, upper - lower))


def apply_trim(ds: MetaDataset, bounds: TrimBounds, floor: float = RETENTION_FLOOR) -> TrimmedDataset:
    """Inflate standard errors to ``se / sqrt(P)``; drop studies with ``P < floor``."""
    p = np.asarray(bounds.inclusion, dtype=float)
    if p.shape != (len(ds),):
        raise InputError("bounds were not computed for this dataset")
    keep = p >= floor
    n_kept = int(keep.sum())
    if n_kept < 2:
        raise DegenerateTrimError("trimming left too few studies to fit", retained=n_kept)
    with np.errstate(divide="ignore"):
        inflated = np.where(keep, ds.ses / np.sqrt(np.where(keep, p, 1.0)), np.inf)
    dropped = frozenset(s.id for s, k in zip(ds.studies, keep) if not k)
    inflated.flags.writeable = False
    return TrimmedDataset(ds, inflated, p.copy(), dropped)


def trimmed_fit(
    ds: MetaDataset,
    spec: TrimSpec,
    model: str = "dsl",
    cfg: SolverConfig = DEFAULT_SOLVER,
    floor: float = RETENTION_FLOOR,
):
    """Fit ``model`` to ``ds`` after trimming with ``spec``.

    Returns ``(fit, bounds)``. The fit's weights are aligned with ``ds``;
    dropped studies have weight exactly zero.
    """
    bounds = solve_bounds(ds, spec, cfg)
    trimmed = apply_trim(ds, bounds, floor)
    result = meta.pooled_fit(trimmed.to_dataset(), model)
    if trimmed.dropped:
        weights = np.zeros(len(ds))
        weights[trimmed.kept_mask] = result.weights
        result = RandomEffectsFit(
            theta_hat=result.theta_hat,
            se_theta=result.se_theta,
            tau2=result.tau2,
            q_stat=result.q_stat,
            i2=result.i2,
            weights=weights,
            model=result.model,
            n_studies=result.n_studies,
        )
    return result, bounds


def tail_bounds_batch(y, s, v, alpha: float, cfg: SolverConfig = DEFAULT_SOLVER):
    """Upper trim bound for every row of ``y`` at proportion ``alpha``.

    Rows are independent datasets with effects ``y``, standard errors ``s``
    and normalised weights ``v`` (all shape ``(m, n)``). Lower bounds follow
    from ``-tail_bounds_batch(-y, s, v, alpha_lo)``.

    Returns ``(bound, converged)`` arrays of shape ``(m,)``.
    """
    m = y.shape[0]
    inv_s = 1.0 / s
    work = np.empty_like(y)

    def standardised(b, rows):
        # (y - b) / s for the requested rows, written into the work buffer
        if rows.size == m:
            yr, ir, vr = y, inv_s, v
        else:
            yr, ir, vr = y[rows], inv_s[rows], v[rows]
        z = work[: rows.size]
        np.subtract(yr, b[:, None], out=z)
        np.multiply(z, ir, out=z)
        return z, ir, vr

    def g(b, rows):
        z, _, vr = standardised(b, rows)
        np.multiply(z, -_INV_SQRT2, out=z)
        special.erfc(z, out=z)
        return 0.5 * np.einsum("ij,ij->i", vr, z) - alpha

    def dg(b, rows):
        z, ir, vr = standardised(b, rows)
        np.multiply(z, z, out=z)
        np.multiply(z, -0.5, out=z)
        np.exp(z, out=z)
        np.multiply(z, ir, out=z)
        return -_INV_SQRT2PI * np.einsum("ij,ij->i", vr, z)

    # Every Phi((y_i - b)/s_i) is >= alpha for b <= min_i(y_i - s_i q) and
    # <= alpha for b >= max_i(y_i - s_i q), q = Phi^-1(alpha); the weighted
    # tail mass therefore crosses alpha inside that interval.
    c = y - s * special.ndtri(alpha)
    lo = c.min(axis=1)
    hi = c.max(axis=1)
    pad = 1e-9 * (1.0 + np.maximum(np.abs(lo), np.abs(hi)))
    return solve_monotone_batch(g, dg, lo - pad, hi + pad, cfg, signs=(1.0, -1.0))
