"""Command-line front end: ``trimeta analyze`` and ``trimeta simulate``.

Exit codes
----------
0  success
2  usage error (bad flags)
3  input error (unreadable or malformed dataset, invalid configuration)
4  numerical failure (root solve did not converge, bracket not found)
5  search failure (no usable trim spec)
"""

from __future__ import annotations

import argparse
import sys
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .bootstrap import VARIANTS
from .dataio import build_report, read_dataset, simulation_document, write_report, write_simulation
from .errors import InputError, NumericalError, SearchError, TrimetaError
from .meta import MODELS
from .pipeline import DEFAULT_REPLICATES, DEFAULT_SEED, PipelineConfig, analyze
from .simulation import SimTemplate, run_null_study
from .trimming import ALPHA_MAX, TrimSpec

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INPUT = 3
EXIT_NUMERICAL = 4
EXIT_SEARCH = 5

MIN_SEARCH_REPLICATES = 100
DEFAULT_ALPHA_M_RUNS = 10


def _common(p: argparse.ArgumentParser):
    p.add_argument("dataset", help="delimited text file with columns id (optional), effect, se")
    p.add_argument("--model", choices=MODELS, default="dsl", help="pooling model (default: dsl)")
    p.add_argument("--replicates", type=int, default=DEFAULT_REPLICATES, help="bootstrap replicates N")
    seed = p.add_mutually_exclusive_group()
    seed.add_argument("--seed", type=int, default=DEFAULT_SEED, help=f"master seed (default: {DEFAULT_SEED})")
    seed.add_argument(
        "--entropy-seed",
        action="store_true",
        help="draw a fresh seed from OS entropy; it is recorded in the output",
    )
    p.add_argument("--grid-step", type=float, default=0.02, help="coarse grid step (default: 0.02)")
    p.add_argument("--alpha-max", type=float, default=ALPHA_MAX, help="cap on alpha_lo + alpha_hi")
    p.add_argument("--refine", type=int, default=2, help="local refinement rounds (default: 2)")
    p.add_argument("--variant", choices=VARIANTS, default="phi_shrunk", help="bootstrap residual construction")
    p.add_argument("--workers", type=int, default=1, help="threads for ensemble generation")
    p.add_argument("--format", choices=("text", "structured"), default="text", dest="fmt")
    p.add_argument("--output", "-o", help="write to this path instead of stdout")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trimeta",
        description="Asymmetric adaptive trimmed-mean meta-analysis.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze", help="trimmed and untrimmed estimates for one dataset")
    _common(a)
    a.add_argument("--alpha-lo", type=float, help="fixed lower trim proportion (skips the search)")
    a.add_argument("--alpha-hi", type=float, help="fixed upper trim proportion (skips the search)")
    a.add_argument(
        "--correct-alpha-m",
        action="store_true",
        help="estimate alpha_m by null simulation and subtract it from the optimum",
    )
    a.add_argument("--alpha-m-runs", type=int, default=DEFAULT_ALPHA_M_RUNS, help="null runs for alpha_m")

    s = sub.add_parser("simulate", help="null Monte-Carlo study from a dataset's sigmas and tau")
    _common(s)
    s.add_argument("--alpha-m-runs", "--runs", type=int, default=DEFAULT_ALPHA_M_RUNS, dest="alpha_m_runs")
    s.add_argument("--theta-true", type=float, default=0.0, help="true effect of the null draws")
    return parser


def _config(args) -> PipelineConfig:
    if args.entropy_seed:
        args.seed = int(np.random.SeedSequence().generate_state(1)[0])
    return PipelineConfig(
        model=args.model,
        n_replicates=args.replicates,
        seed=args.seed,
        grid_step=args.grid_step,
        alpha_max=args.alpha_max,
        refine_rounds=args.refine,
        variant=args.variant,
        workers=args.workers,
    )


def _config_dict(cfg: PipelineConfig, **extra) -> dict:
    d = cfg.as_dict()
    d.update(extra)
    return d


def _emit(text: str, path: Optional[str]):
    if path:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def cmd_analyze(args) -> int:
    ds = read_dataset(args.dataset)
    cfg = _config(args)
    spec = None
    if args.alpha_lo is not None or args.alpha_hi is not None:
        spec = TrimSpec(args.alpha_lo or 0.0, args.alpha_hi or 0.0, cfg.alpha_max)
        if args.correct_alpha_m:
            raise InputError("--correct-alpha-m needs the search; drop --alpha-lo/--alpha-hi")
    elif cfg.n_replicates < MIN_SEARCH_REPLICATES:
        raise InputError(f"the search needs --replicates >= {MIN_SEARCH_REPLICATES}")
    alpha_m = None
    extra = {"alpha_override": None if spec is None else [spec.alpha_lo, spec.alpha_hi]}
    if args.correct_alpha_m:
        study = run_null_study(SimTemplate.from_dataset(ds, seed=cfg.seed), args.alpha_m_runs, cfg)
        alpha_m = study.alpha_m
        extra["alpha_m_runs"] = args.alpha_m_runs
    result = analyze(ds, cfg, spec=spec, alpha_m=alpha_m)
    report = build_report(result, ds, _config_dict(cfg, **extra))
    _emit(write_report(report, args.fmt), args.output)
    return EXIT_OK


def cmd_simulate(args) -> int:
    ds = read_dataset(args.dataset)
    cfg = _config(args)
    if cfg.n_replicates < MIN_SEARCH_REPLICATES:
        raise InputError(f"the search needs --replicates >= {MIN_SEARCH_REPLICATES}")
    template = SimTemplate.from_dataset(ds, theta_true=args.theta_true, seed=cfg.seed)
    study = run_null_study(template, args.alpha_m_runs, cfg)
    doc = simulation_document(study, _config_dict(cfg, runs=args.alpha_m_runs))
    _emit(write_simulation(doc, args.fmt), args.output)
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    handler = cmd_analyze if args.command == "analyze" else cmd_simulate
    try:
        return handler(args)
    except InputError as exc:
        print(f"trimeta: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericalError as exc:
        print(f"trimeta: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except SearchError as exc:
        print(f"trimeta: search failed: {exc}", file=sys.stderr)
        return EXIT_SEARCH
    except TrimetaError as exc:
        print(f"trimeta: {exc}", file=sys.stderr)
        return EXIT_SEARCH
    except OSError as exc:
        print(f"trimeta: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
