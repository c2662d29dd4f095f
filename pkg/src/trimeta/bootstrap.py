"""Nonparametric error bootstrap for random-effects meta-analysis.

Study means are reconstructed as ``theta_hat + r_i`` from shrunken residuals
``r_i``, resampled with replacement, and given fresh normal sampling error
with the source study's standard error:

    x'_i = r_j + theta_hat + eps * se_j,   j ~ U{1..n},  eps ~ N(0, 1)

Two residual constructions are available. ``"phi_shrunk"`` (the default)
shrinks ``y_i - theta_hat`` by ``phi2 / (phi2 + se_i**2)`` with ``phi2``
chosen so the residuals' sample variance equals ``tau2``. Large studies are
then left almost unshrunk and never inflated. ``"classic_reflated"`` uses
the empirical-Bayes shrinkage with ``tau2`` and rescales the residuals to
variance ``tau2``. That blows large studies up and is kept for comparison.
"""

from __future__ import annotations

import hashlib
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import InputError
from .mathkernel import DEFAULT_SOLVER, SolverConfig, solve_monotone
from .meta import MetaDataset, RandomEffectsFit, Study

__all__ = [
    "VARIANTS",
    "ResidualSet",
    "BootstrapEnsemble",
    "shrink_residuals",
    "sample_variance",
    "classic_residuals",
    "solve_phi",
    "phi_residuals",
    "make_residuals",
    "replicate_stream",
    "generate_ensemble",
]

VARIANTS = ("phi_shrunk", "classic_reflated")

# first element of the SeedSequence spawn key for bootstrap replicates
ENSEMBLE_STREAM = 0

_PHI_UPPER_FACTOR = 1e6
_PHI_EXPANSIONS = 20
_LN10 = math.log(10.0)


@dataclass(frozen=True)
class ResidualSet:
    """Residuals added to ``theta_hat`` when building replicates.

    ``residuals`` are already in final form. For ``classic_reflated`` they
    have been multiplied by ``reflation_factor``. ``capped`` marks the
    ``phi2 = inf`` fallback (raw residuals); ``degenerate`` marks
    ``tau2 = 0`` (all residuals zero).
    """

    residuals: np.ndarray
    variant: str
    phi2: Optional[float] = None
    reflation_factor: Optional[float] = None
    capped: bool = False
    degenerate: bool = False


def shrink_residuals(y, theta_hat, se, shrink_var):
    """``shrink_var * (y - theta_hat) / (shrink_var + se**2)``."""
    y = np.asarray(y, dtype=float)
    se = np.asarray(se, dtype=float)
    if math.isinf(shrink_var):
        return y - theta_hat
    return shrink_var * (y - theta_hat) / (shrink_var + se**2)


def sample_variance(x) -> float:
    """Sample variance with the ``n - 1`` denominator."""
    return float(np.var(np.asarray(x, dtype=float), ddof=1))


def _zero_set(n, variant):
    return ResidualSet(np.zeros(n), variant, phi2=0.0 if variant == "phi_shrunk" else None, degenerate=True)


def classic_residuals(ds: MetaDataset, fit: RandomEffectsFit) -> ResidualSet:
    """Empirical-Bayes residuals reflated to sample variance ``tau2``."""
    n = len(ds)
    if fit.tau2 <= 0:
        return _zero_set(n, "classic_reflated")
    eta = shrink_residuals(ds.effects, fit.theta_hat, ds.ses, fit.tau2)
    v = sample_variance(eta)
    if v <= 0:
        return _zero_set(n, "classic_reflated")
    factor = math.sqrt(fit.tau2 / v)
    return ResidualSet(factor * eta, "classic_reflated", reflation_factor=factor)


def solve_phi(ds: MetaDataset, fit: RandomEffectsFit, cfg: SolverConfig = DEFAULT_SOLVER) -> float:
    """Shrinkage variance ``phi2`` whose residuals have sample variance ``tau2``.

    The equation is solved in ``log(phi2)`` with :func:`solve_monotone` over
    the bracket ``[tau2, 1e6 * (tau2 + max(se**2))]``. The lower end is
    contracted and the upper end expanded geometrically when they do not
    straddle the root.

    Returns ``0.0`` when ``tau2 == 0`` (residuals are zero whatever ``phi2``
    is). Returns ``math.inf`` when even the unshrunk residuals have
    variance at most ``tau2``; :func:`phi_residuals` then uses raw
    residuals and sets ``capped``.
    """
    tau2 = fit.tau2
    if len(ds) < 2:
        raise InputError("solving phi needs at least 2 studies")
    if tau2 <= 0:
        return 0.0
    r = ds.effects - fit.theta_hat
    s2 = ds.ses**2
    n = len(ds)
    if sample_variance(r) <= tau2:
        return math.inf

    def f(u):
        p = math.exp(u)
        return sample_variance(p * r / (p + s2)) - tau2

    def df(u):
        p = math.exp(u)
        eta = p * r / (p + s2)
        deta = p * s2 * r / (p + s2) ** 2
        return 2.0 * float(np.dot(eta - eta.mean(), deta - deta.mean())) / (n - 1)

    lo = math.log(tau2)
    hi = math.log(_PHI_UPPER_FACTOR * (tau2 + float(s2.max())))
    for _ in range(_PHI_EXPANSIONS * 3):
        if f(lo) <= 0:
            break
        lo -= _LN10
    for _ in range(_PHI_EXPANSIONS):
        if f(hi) >= 0:
            break
        hi += _LN10
    else:
        return math.inf
    return math.exp(solve_monotone(f, cfg.with_bracket(lo, hi), fprime=df))


def phi_residuals(ds: MetaDataset, fit: RandomEffectsFit, phi2: float) -> ResidualSet:
    """Residuals shrunk with variance ``phi2``; no reflation."""
    if phi2 == 0 or fit.tau2 <= 0:
        return _zero_set(len(ds), "phi_shrunk")
    res = shrink_residuals(ds.effects, fit.theta_hat, ds.ses, phi2)
    return ResidualSet(res, "phi_shrunk", phi2=float(phi2), capped=math.isinf(phi2))


def make_residuals(ds, fit, variant="phi_shrunk", cfg: SolverConfig = DEFAULT_SOLVER) -> ResidualSet:
    if variant == "phi_shrunk":
        return phi_residuals(ds, fit, solve_phi(ds, fit, cfg))
    if variant == "classic_reflated":
        return classic_residuals(ds, fit)
    raise InputError(f"unknown residual variant {variant!r}; expected one of {VARIANTS}")


def replicate_stream(seed: int, r: int) -> np.random.Generator:
    """Independent generator for bootstrap replicate ``r`` of master ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(ENSEMBLE_STREAM, r)))


@dataclass(frozen=True, eq=False)
class BootstrapEnsemble:
    """``n_replicates`` resampled datasets stored as ``(N, n)`` arrays.

    Row ``r`` is replicate ``r``; ``source_index[r, i]`` is the original
    study copied into slot ``i``. The arrays are read-only.
    """

    effects: np.ndarray
    ses: np.ndarray
    source_index: np.ndarray
    seed: int
    dataset: MetaDataset = field(repr=False)
    fit: RandomEffectsFit = field(repr=False)
    residuals: ResidualSet = field(repr=False)

    @property
    def n_replicates(self) -> int:
        return self.effects.shape[0]

    @property
    def n_studies(self) -> int:
        return self.effects.shape[1]

    def replicate(self, r: int) -> MetaDataset:
        studies = tuple(
            Study(str(i + 1), float(e), float(s)) for i, (e, s) in enumerate(zip(self.effects[r], self.ses[r]))
        )
        return MetaDataset(studies, name=f"{self.dataset.name}[boot {r}]")

    @property
    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.effects).tobytes())
        h.update(np.ascontiguousarray(self.ses).tobytes())
        return h.hexdigest()[:16]


def _fill(effects, ses, index, rows, seed, resid, theta, sigma):
    n = sigma.shape[0]
    for r in rows:
        rng = replicate_stream(seed, r)
        j = rng.integers(0, n, size=n)
        eps = rng.standard_normal(n)
        index[r] = j
        ses[r] = sigma[j]
        effects[r] = resid[j] + theta + eps * sigma[j]


def generate_ensemble(
    ds: MetaDataset,
    fit: RandomEffectsFit,
    res: ResidualSet,
    n_replicates: int,
    seed: int,
    workers: int = 1,
) -> BootstrapEnsemble:
    """Build the bootstrap ensemble.

    Each replicate draws from its own substream (see
    :func:`replicate_stream`), so the result does not depend on ``workers``
    or on the order replicates are generated in.
    """
    if n_replicates < 1:
        raise InputError("n_replicates must be at least 1")
    resid = np.asarray(res.residuals, dtype=float)
    if resid.shape != (len(ds),):
        raise InputError("residuals do not match the dataset")
    n = len(ds)
    effects = np.empty((n_replicates, n))
    ses = np.empty((n_replicates, n))
    index = np.empty((n_replicates, n), dtype=np.int64)
    sigma = np.asarray(ds.ses, dtype=float)
    theta = fit.theta_hat
    if workers <= 1:
        _fill(effects, ses, index, range(n_replicates), seed, resid, theta, sigma)
    else:
        chunks = np.array_split(np.arange(n_replicates), workers)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(lambda rows: _fill(effects, ses, index, rows, seed, resid, theta, sigma), chunks))
    for arr in (effects, ses, index):
        arr.flags.writeable = False
    return BootstrapEnsemble(effects, ses, index, int(seed), ds, fit, res)
