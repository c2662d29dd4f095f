"""Monte-Carlo null studies.

Outlier-free datasets are drawn from the normal random-effects model with a
real dataset's standard errors and between-study variance. Running the full
search on them measures how much trimming the method picks up by chance.
The pooled mean optimal proportion, ``alpha_m``, can then be subtracted from
real-data optima (see :func:`trimeta.search.apply_alpha_m_correction`).
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import meta
from .errors import InputError
from .meta import MetaDataset
from .pipeline import DEFAULT_SEED, PipelineConfig, analyze

__all__ = [
    "SimTemplate",
    "NullRun",
    "NullStudy",
    "parametric_draws",
    "parametric_replicate",
    "run_null_study",
    "estimate_alpha_m",
]

# spawn-key prefixes, kept apart from the bootstrap's stream 0
SIMULATION_STREAM = 1
RUN_SEED_STREAM = 2


@dataclass(frozen=True)
class SimTemplate:
    sigmas: tuple
    tau: float
    theta_true: float = 0.0
    seed: int = DEFAULT_SEED
    name: str = "template"

    def __post_init__(self):
        sig = tuple(float(s) for s in self.sigmas)
        if not sig or any(not (math.isfinite(s) and s > 0) for s in sig):
            raise InputError("template sigmas must be nonempty and positive")
        if not (math.isfinite(self.tau) and self.tau >= 0):
            raise InputError("template tau must be nonnegative")
        object.__setattr__(self, "sigmas", sig)

    @classmethod
    def from_dataset(cls, ds: MetaDataset, theta_true: float = 0.0, seed: int = DEFAULT_SEED) -> "SimTemplate":
        """Template with the standard errors of ``ds`` and its DerSimonian-Laird tau."""
        fit = meta.dsl_fit(ds)
        return cls(tuple(ds.ses), fit.tau, theta_true, seed, name=f"MC-{ds.name}")


def _stream(seed, key, k):
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(key, k)))


def parametric_draws(t: SimTemplate, count: int, start: int = 0) -> np.ndarray:
    """Effects of replicates ``start .. start+count-1``, shape ``(count, n)``."""
    sd = np.sqrt(np.asarray(t.sigmas) ** 2 + t.tau**2)
    out = np.empty((count, sd.size))
    for i in range(count):
        out[i] = t.theta_true + sd * _stream(t.seed, SIMULATION_STREAM, start + i).standard_normal(sd.size)
    return out


def parametric_replicate(t: SimTemplate, k: int) -> MetaDataset:
    """Null dataset ``k``: effect ``i`` drawn from ``N(theta_true, sigma_i**2 + tau**2)``."""
    effects = parametric_draws(t, 1, k)[0]
    return MetaDataset.from_arrays(effects, t.sigmas, name=f"{t.name}#{k}")


def run_seed(t: SimTemplate, k: int) -> int:
    """Bootstrap seed used when analysing null dataset ``k``."""
    return int(np.random.SeedSequence(t.seed, spawn_key=(RUN_SEED_STREAM, k)).generate_state(1)[0])


@dataclass(frozen=True)
class NullRun:
    k: int
    alpha_lo: float
    alpha_hi: float
    theta_hat: float
    se_theta: float
    untrimmed_theta: float
    untrimmed_se: float
    tau: float
    i2: float

    def as_dict(self):
        return {f: getattr(self, f) for f in self.__dataclass_fields__}


@dataclass(frozen=True)
class NullStudy:
    template: SimTemplate
    runs: tuple

    @property
    def alpha_m(self) -> float:
        """Grand mean of all optimal proportions, both sides pooled."""
        if not self.runs:
            return 0.0
        return float(np.mean([r.alpha_lo for r in self.runs] + [r.alpha_hi for r in self.runs]))

    @property
    def null_safe_fraction(self) -> float:
        theta = self.template.theta_true
        ok = [abs(r.theta_hat - theta) < r.se_theta for r in self.runs]
        return float(np.mean(ok)) if ok else math.nan


def _one_run(args):
    t, k, config = args
    ds = parametric_replicate(t, k)
    result = analyze(ds, replace(config, seed=run_seed(t, k)))
    f, u = result.final_fit, result.untrimmed_fit
    return NullRun(
        k=k,
        alpha_lo=result.optimum.alpha_lo,
        alpha_hi=result.optimum.alpha_hi,
        theta_hat=f.theta_hat,
        se_theta=f.se_theta,
        untrimmed_theta=u.theta_hat,
        untrimmed_se=u.se_theta,
        tau=f.tau,
        i2=f.i2,
    )


def run_null_study(t: SimTemplate, runs: int, config: PipelineConfig = PipelineConfig(), processes: int = 1) -> NullStudy:
    """Analyse ``runs`` null datasets from ``t`` with the full pipeline.

    Run ``k`` uses its own data stream and bootstrap seed, so results do not
    depend on ``processes``.
    """
    if runs < 1:
        raise InputError("runs must be at least 1")
    jobs = [(t, k, config) for k in range(runs)]
    if processes > 1:
        with ProcessPoolExecutor(max_workers=processes) as pool:
            out = list(pool.map(_one_run, jobs))
    else:
        out = [_one_run(j) for j in jobs]
    return NullStudy(t, tuple(out))


def estimate_alpha_m(t: SimTemplate, runs: int = 10, config: PipelineConfig = PipelineConfig()) -> float:
    return run_null_study(t, runs, config).alpha_m
