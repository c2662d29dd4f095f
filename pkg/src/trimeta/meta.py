"""Classical meta-analysis: inverse-variance fixed-effect pooling,
DerSimonian-Laird random-effects pooling, and heterogeneity statistics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import InputError

__all__ = [
    "Study",
    "MetaDataset",
    "RandomEffectsFit",
    "MODELS",
    "fixed_effect_fit",
    "dsl_fit",
    "pooled_fit",
    "i_squared",
    "pooled_batch",
]

MODELS = ("fixed", "dsl")


@dataclass(frozen=True)
class Study:
    id: str
    effect: float
    se: float

    def __post_init__(self):
        if not math.isfinite(self.effect):
            raise InputError(f"study {self.id!r}: effect must be finite")
        if not (math.isfinite(self.se) and self.se > 0):
            raise InputError(f"study {self.id!r}: se must be positive and finite")


@dataclass(frozen=True)
class MetaDataset:
    """An ordered collection of studies.

    ``sign_note`` optionally records the beneficial direction of the effect
    (for example ``"+ve"``); it is carried through to reports untouched.
    """

    studies: tuple
    name: str = "dataset"
    sign_note: Optional[str] = None
    effects: np.ndarray = field(init=False, repr=False, compare=False)
    ses: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        studies = tuple(self.studies)
        object.__setattr__(self, "studies", studies)
        ids = [s.id for s in studies]
        if len(set(ids)) != len(ids):
            raise InputError("study ids must be unique")
        eff = np.array([s.effect for s in studies], dtype=float)
        se = np.array([s.se for s in studies], dtype=float)
        eff.flags.writeable = False
        se.flags.writeable = False
        object.__setattr__(self, "effects", eff)
        object.__setattr__(self, "ses", se)

    @classmethod
    def from_arrays(cls, effects, ses, ids=None, name="dataset", sign_note=None):
        effects = np.asarray(effects, dtype=float).ravel()
        ses = np.asarray(ses, dtype=float).ravel()
        if effects.shape != ses.shape:
            raise InputError("effects and ses must have the same length")
        if ids is None:
            ids = [str(i + 1) for i in range(len(effects))]
        studies = tuple(Study(str(i), float(e), float(s)) for i, e, s in zip(ids, effects, ses))
        return cls(studies, name=name, sign_note=sign_note)

    @property
    def ids(self) -> list:
        return [s.id for s in self.studies]

    def __len__(self):
        return len(self.studies)

    def __iter__(self):
        return iter(self.studies)


@dataclass(frozen=True)
class RandomEffectsFit:
    """Result of a pooled fit.

    ``weights`` are the normalised pooling weights, aligned with the dataset
    the fit was requested for; they sum to one and reproduce ``theta_hat``
    as ``weights @ effects``. ``n_studies`` counts the studies that actually
    entered the fit, which after trimming may be fewer than ``len(weights)``.
    """

    theta_hat: float
    se_theta: float
    tau2: float
    q_stat: float
    i2: float
    weights: np.ndarray
    model: str
    n_studies: int

    @property
    def tau(self) -> float:
        return math.sqrt(self.tau2)


def _validate(ds: MetaDataset, minimum: int, what: str):
    if len(ds) < minimum:
        raise InputError(f"{what} needs at least {minimum} studies, got {len(ds)}")


def _q_statistic(y, w):
    theta_fe = np.dot(w, y) / w.sum()
    return float(np.dot(w, (y - theta_fe) ** 2))


def i_squared(fit_or_q, n: int) -> float:
    """Higgins-Thompson I-squared, as a percentage.

    ``max(0, (Q - (n - 1)) / Q) * 100``. Accepts either a fit carrying
    ``q_stat`` or Q itself. ``Q = 0`` gives 0.
    """
    q = fit_or_q.q_stat if hasattr(fit_or_q, "q_stat") else float(fit_or_q)
    if n < 2:
        raise InputError("I-squared needs at least 2 studies")
    if q <= 0:
        return 0.0
    return max(0.0, (q - (n - 1)) / q) * 100.0


def fixed_effect_fit(ds: MetaDataset) -> RandomEffectsFit:
    """Inverse-variance fixed-effect pooling (weights ``1/se**2``)."""
    _validate(ds, 1, "a fixed-effect fit")
    y, s = ds.effects, ds.ses
    w = 1.0 / s**2
    sw = w.sum()
    theta = float(np.dot(w, y) / sw)
    q = _q_statistic(y, w)
    n = len(ds)
    return RandomEffectsFit(
        theta_hat=theta,
        se_theta=float(1.0 / math.sqrt(sw)),
        tau2=0.0,
        q_stat=q,
        i2=i_squared(q, n) if n >= 2 else 0.0,
        weights=w / sw,
        model="fixed",
        n_studies=n,
    )


def dsl_fit(ds: MetaDataset) -> RandomEffectsFit:
    """DerSimonian-Laird random-effects fit.

    Computes Cochran's Q about the fixed-effect mean, the moment estimate
    ``tau2 = max(0, (Q - (n-1)) / (sum(w) - sum(w**2)/sum(w)))`` with
    ``w = 1/se**2``, then pools with weights ``1/(se**2 + tau2)``.
    """
    _validate(ds, 2, "a DerSimonian-Laird fit")
    y, s = ds.effects, ds.ses
    n = len(ds)
    w = 1.0 / s**2
    sw = w.sum()
    q = _q_statistic(y, w)
    denom = sw - np.dot(w, w) / sw
    tau2 = max(0.0, (q - (n - 1)) / denom) if denom > 0 else 0.0
    if tau2 == 0.0:
        wr = w
    else:
        wr = 1.0 / (s**2 + tau2)
    swr = wr.sum()
    return RandomEffectsFit(
        theta_hat=float(np.dot(wr, y) / swr),
        se_theta=float(1.0 / math.sqrt(swr)),
        tau2=float(tau2),
        q_stat=q,
        i2=i_squared(q, n),
        weights=wr / swr,
        model="dsl",
        n_studies=n,
    )


def pooled_fit(ds: MetaDataset, model: str = "dsl") -> RandomEffectsFit:
    if model == "dsl":
        return dsl_fit(ds)
    if model == "fixed":
        return fixed_effect_fit(ds)
    raise InputError(f"unknown model {model!r}; expected one of {MODELS}")


def _pool_rows(y, y2, w, k, model, scratch):
    # w: masked weights (zero outside the fit); scratch: (m, n) work array
    sw = w.sum(axis=1)
    swy = np.einsum("ij,ij->i", w, y)
    with np.errstate(divide="ignore", invalid="ignore"):
        theta_fe = swy / sw
        if model == "fixed":
            return np.where(k >= 1, theta_fe, np.nan), np.zeros_like(theta_fe)
        # Q = sum w (y - theta_fe)^2, expanded to avoid another (m, n) pass
        q = np.maximum(np.einsum("ij,ij->i", w, y2) - swy * theta_fe, 0.0)
        denom = sw - np.einsum("ij,ij->i", w, w) / sw
        tau2 = np.where(denom > 0, np.maximum(0.0, (q - (k - 1)) / denom), 0.0)
        # random-effects weights 1/(1/w + tau2), finite for w = 0
        np.multiply(w, tau2[:, None], out=scratch)
        scratch += 1.0
        np.divide(w, scratch, out=scratch)
        theta = np.einsum("ij,ij->i", scratch, y) / scratch.sum(axis=1)
    return np.where(k >= 2, theta, np.nan), tau2


def pooled_batch(y, w, mask=None, model: str = "dsl", y2=None):
    """Pool many datasets at once.

    Parameters
    ----------
    y : ndarray, shape (m, n)
        Effects, one dataset per row.
    w : ndarray, shape (m, n)
        Inverse sampling variances ``1/se**2``. Entries outside ``mask``
        are ignored.
    mask : ndarray of bool, optional
        Studies participating in each row's fit.
    model : {"dsl", "fixed"}
    y2 : ndarray, optional
        Precomputed ``y**2``; saves one pass when pooling repeatedly.

    Returns
    -------
    theta : ndarray, shape (m,)
        Pooled estimate per row; NaN where fewer than the model's minimum
        number of studies are present (1 for fixed, 2 for dsl).
    tau2 : ndarray, shape (m,)
    """
    if model not in MODELS:
        raise InputError(f"unknown model {model!r}; expected one of {MODELS}")
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    if mask is not None:
        w = w * mask
        k = np.count_nonzero(mask, axis=1)
    else:
        k = np.count_nonzero(w, axis=1)
    if y2 is None:
        y2 = y * y
    return _pool_rows(y, y2, w, k, model, np.empty_like(w))
