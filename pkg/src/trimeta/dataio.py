"""Reading study tables and writing analysis reports.

Input is a delimited text file with a header row. The columns are ``effect``
and ``se``, plus an optional ``id``. ``y``/``yi`` are accepted for ``effect``
and ``sd``/``sei`` for ``se``. The delimiter (comma, tab, semicolon) is
sniffed.

Reports serialise to JSON under the ``trimeta.report`` schema, version
:data:`SCHEMA_VERSION`. Non-finite numbers are written as ``null``: NaN for
statistics of infeasible cells, infinities for absent trim bounds (the
sign is implied by the field).
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

from .errors import DatasetParseError, InputError
from .meta import MetaDataset, Study

__all__ = [
    "SCHEMA",
    "SCHEMA_VERSION",
    "FitRow",
    "ReportDocument",
    "read_dataset",
    "parse_dataset",
    "load_cdp",
    "build_report",
    "write_report",
    "read_report",
    "render_text",
    "simulation_document",
    "write_simulation",
]

SCHEMA = "trimeta.report"
SCHEMA_VERSION = 1
SIM_SCHEMA = "trimeta.simulation"

_ALIASES = {
    "id": "id",
    "study": "id",
    "effect": "effect",
    "y": "effect",
    "yi": "effect",
    "se": "se",
    "sd": "se",
    "sei": "se",
}


def _sniff(text: str) -> str:
    head = text.splitlines()[0] if text else ""
    for delim in (",", "\t", ";"):
        if delim in head:
            return delim
    return ","


def parse_dataset(text: str, name: str = "dataset", sign_note: Optional[str] = None) -> MetaDataset:
    """Parse delimited text into a :class:`MetaDataset`, preserving row order."""
    if not text.strip():
        raise DatasetParseError("file is empty")
    reader = csv.reader(io.StringIO(text), delimiter=_sniff(text))
    rows = list(reader)
    header = [h.strip().lower() for h in rows[0]]
    columns = {}
    for pos, h in enumerate(header):
        canon = _ALIASES.get(h)
        if canon is None:
            continue
        if canon in columns:
            raise DatasetParseError(f"duplicate column for {canon!r}", row=1, column=h)
        columns[canon] = pos
    for required in ("effect", "se"):
        if required not in columns:
            raise DatasetParseError(f"missing required column {required!r}", row=1)

    studies = []
    seen = set()
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) < len(header):
            raise DatasetParseError(f"expected {len(header)} fields, found {len(row)}", row=lineno)
        values = {}
        for col in ("effect", "se"):
            raw = row[columns[col]].strip()
            try:
                val = float(raw)
            except ValueError:
                raise DatasetParseError(f"not a number: {raw!r}", row=lineno, column=col) from None
            if not math.isfinite(val):
                raise DatasetParseError(f"not finite: {raw!r}", row=lineno, column=col)
            values[col] = val
        if values["se"] <= 0:
            raise DatasetParseError(f"se must be positive, got {values['se']}", row=lineno, column="se")
        sid = row[columns["id"]].strip() if "id" in columns else str(len(studies) + 1)
        if not sid:
            raise DatasetParseError("empty id", row=lineno, column="id")
        if sid in seen:
            raise DatasetParseError(f"duplicate id {sid!r}", row=lineno, column="id")
        seen.add(sid)
        studies.append(Study(sid, values["effect"], values["se"]))
    if not studies:
        raise DatasetParseError("no data rows")
    return MetaDataset(tuple(studies), name=name, sign_note=sign_note)


def read_dataset(path, name: Optional[str] = None, sign_note: Optional[str] = None) -> MetaDataset:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8-sig")
    except OSError as exc:
        raise DatasetParseError(f"cannot read {path}: {exc.strerror or exc}") from exc
    return parse_dataset(text, name=name or path.stem, sign_note=sign_note)


def load_cdp() -> MetaDataset:
    """The CDP-choline dataset (ten studies) bundled with the package."""
    text = resources.files("trimeta").joinpath("data/cdp_choline.csv").read_text(encoding="utf-8")
    return parse_dataset(text, name="CDP", sign_note="+ve")


def _num(x):
    if x is None:
        return None
    x = float(x)
    return x if math.isfinite(x) else None


def _unnum(x, default=math.nan):
    return default if x is None else float(x)


@dataclass
class FitRow:
    """One summary row: proportions, fit, bagged statistics, heterogeneity."""

    alpha_lo: float
    alpha_hi: float
    theta_hat: float
    se_theta: float
    bagged_mean: float
    boot_se: float
    tau: float
    tau2: float
    q_stat: float
    i2: float
    n_studies: int
    b_lo: float = -math.inf
    b_hi: float = math.inf

    def to_dict(self):
        d = {k: _num(v) for k, v in asdict(self).items()}
        d["n_studies"] = self.n_studies
        return d

    @classmethod
    def from_dict(cls, d):
        kw = {k: _unnum(d.get(k)) for k in cls.__dataclass_fields__ if k not in ("n_studies", "b_lo", "b_hi")}
        return cls(
            n_studies=int(d["n_studies"]),
            b_lo=_unnum(d.get("b_lo"), -math.inf),
            b_hi=_unnum(d.get("b_hi"), math.inf),
            **kw,
        )


@dataclass
class ReportDocument:
    dataset_name: str
    sign_note: Optional[str]
    studies: list
    untrimmed: FitRow
    trimmed: FitRow
    proportions_kept: list
    outlier_index: float
    config: dict
    surface: list = field(default_factory=list)
    alpha_m_correction: Optional[dict] = None
    ensemble_fingerprint: str = ""
    warnings: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA,
            "schema_version": SCHEMA_VERSION,
            "dataset": {
                "name": self.dataset_name,
                "sign_note": self.sign_note,
                "studies": [dict(s) for s in self.studies],
            },
            "config": self.config,
            "untrimmed": self.untrimmed.to_dict(),
            "trimmed": self.trimmed.to_dict(),
            "proportions_kept": [_num(p) for p in self.proportions_kept],
            "outlier_index": _num(self.outlier_index),
            "alpha_m_correction": self.alpha_m_correction,
            "surface": [{k: (_num(v) if isinstance(v, float) else v) for k, v in c.items()} for c in self.surface],
            "ensemble_fingerprint": self.ensemble_fingerprint,
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ReportDocument":
        if d.get("schema") != SCHEMA:
            raise InputError(f"not a {SCHEMA} document")
        if d.get("schema_version") != SCHEMA_VERSION:
            raise InputError(f"unsupported schema_version {d.get('schema_version')!r}")
        surface = [
            {k: (_unnum(v) if k in ("boot_var", "bagged_mean", "boot_se") else v) for k, v in c.items()}
            for c in d["surface"]
        ]
        return cls(
            dataset_name=d["dataset"]["name"],
            sign_note=d["dataset"]["sign_note"],
            studies=[dict(s) for s in d["dataset"]["studies"]],
            untrimmed=FitRow.from_dict(d["untrimmed"]),
            trimmed=FitRow.from_dict(d["trimmed"]),
            proportions_kept=[_unnum(p) for p in d["proportions_kept"]],
            outlier_index=_unnum(d["outlier_index"]),
            config=d["config"],
            surface=surface,
            alpha_m_correction=d.get("alpha_m_correction"),
            ensemble_fingerprint=d.get("ensemble_fingerprint", ""),
            warnings=list(d.get("warnings", [])),
        )


def _row(spec, fit, cell, bounds=None):
    return FitRow(
        alpha_lo=spec.alpha_lo,
        alpha_hi=spec.alpha_hi,
        theta_hat=fit.theta_hat,
        se_theta=fit.se_theta,
        bagged_mean=cell.bagged_mean if cell is not None else math.nan,
        boot_se=cell.boot_se if cell is not None else math.nan,
        tau=fit.tau,
        tau2=fit.tau2,
        q_stat=fit.q_stat,
        i2=fit.i2,
        n_studies=fit.n_studies,
        b_lo=bounds.b_lo if bounds is not None else -math.inf,
        b_hi=bounds.b_hi if bounds is not None else math.inf,
    )


def build_report(result, ds: MetaDataset, config: dict) -> ReportDocument:
    """Assemble a report from a :class:`~trimeta.search.TrimSearchResult`."""
    base = result.baseline_cell
    corr = result.alpha_m_correction
    return ReportDocument(
        dataset_name=ds.name,
        sign_note=ds.sign_note,
        studies=[{"id": s.id, "effect": s.effect, "se": s.se} for s in ds.studies],
        untrimmed=_row(base.spec, result.untrimmed_fit, base),
        trimmed=_row(result.optimum, result.final_fit, result.optimum_cell, result.final_bounds),
        proportions_kept=[float(p) for p in result.proportions_kept],
        outlier_index=result.outlier_index,
        config=config,
        surface=[
            {
                "alpha_lo": c.spec.alpha_lo,
                "alpha_hi": c.spec.alpha_hi,
                "boot_var": c.boot_var,
                "bagged_mean": c.bagged_mean,
                "boot_se": c.boot_se,
                "n_valid": c.n_valid,
                "n_replicates": c.n_replicates,
                "feasible": c.feasible,
            }
            for c in result.surface
        ],
        alpha_m_correction=None
        if corr is None
        else {
            "alpha_m": corr.alpha_m,
            "original": list(corr.original.as_tuple()),
            "corrected": list(corr.corrected.as_tuple()),
        },
        ensemble_fingerprint=result.ensemble_fingerprint,
        warnings=list(result.warnings),
    )


def _fmt(x, digits=3):
    if x is None or (isinstance(x, float) and not math.isfinite(x)):
        return "-"
    return f"{x:.{digits}f}"


def _fmt_alpha(a):
    return "0" if a == 0 else f"{a:.4g}"


def render_text(r: ReportDocument) -> str:
    out = []
    title = f"Dataset: {r.dataset_name} ({len(r.studies)} studies"
    if r.sign_note:
        title += f", beneficial direction {r.sign_note}"
    out.append(title + ")")
    out.append("")
    header = f"{'alpha_L':>8} {'alpha_U':>8}  {'theta_hat (se)':<18} {'bagged (boot se)':<18} {'tau':>7} {'I^2':>8}"
    out.append(header)
    out.append("-" * len(header))
    for row in (r.untrimmed, r.trimmed):
        est = f"{_fmt(row.theta_hat)} ({_fmt(row.se_theta)})"
        bag = f"{_fmt(row.bagged_mean)} ({_fmt(row.boot_se)})"
        out.append(
            f"{_fmt_alpha(row.alpha_lo):>8} {_fmt_alpha(row.alpha_hi):>8}  {est:<18} {bag:<18} "
            f"{_fmt(row.tau):>7} {_fmt(row.i2, 2) + '%':>8}"
        )
    out.append("")
    out.append(f"Outlier index (alpha_L + alpha_U): {_fmt(r.outlier_index, 4)}")
    if r.alpha_m_correction:
        c = r.alpha_m_correction
        out.append(
            f"alpha_m correction {c['alpha_m']:.4g}: "
            f"({_fmt_alpha(c['original'][0])}, {_fmt_alpha(c['original'][1])}) -> "
            f"({_fmt_alpha(c['corrected'][0])}, {_fmt_alpha(c['corrected'][1])})"
        )
    out.append("")
    out.append(f"{'obs.':>5} {'effect':>9} {'sd':>9} {'proportion kept':>16}")
    for s, p in zip(r.studies, r.proportions_kept):
        out.append(f"{s['id']:>5} {s['effect']:>9.4f} {s['se']:>9.4f} {p:>16.4f}")
    cfg = r.config
    out.append("")
    out.append(
        f"model={cfg.get('model')} replicates={cfg.get('n_replicates')} seed={cfg.get('seed')} "
        f"variant={cfg.get('variant')} grid_step={cfg.get('grid_step')} alpha_max={cfg.get('alpha_max')} "
        f"refine={cfg.get('refine_rounds')}"
    )
    if r.warnings:
        out.append("")
        out.append("Warnings:")
        out.extend(f"  - {w}" for w in r.warnings)
    return "\n".join(out) + "\n"


def write_report(r: ReportDocument, fmt: str = "structured") -> str:
    """Serialise ``r`` as ``"structured"`` (JSON) or ``"text"``."""
    if fmt == "structured":
        return json.dumps(r.to_dict(), indent=2, allow_nan=False) + "\n"
    if fmt == "text":
        return render_text(r)
    raise InputError(f"unknown report format {fmt!r}")


def read_report(text: str) -> ReportDocument:
    return ReportDocument.from_dict(json.loads(text))


def simulation_document(study, config: dict) -> dict:
    t = study.template
    return {
        "schema": SIM_SCHEMA,
        "schema_version": SCHEMA_VERSION,
        "template": {
            "name": t.name,
            "n_studies": len(t.sigmas),
            "sigmas": list(t.sigmas),
            "tau": t.tau,
            "theta_true": t.theta_true,
            "seed": t.seed,
        },
        "config": config,
        "runs": [r.as_dict() for r in study.runs],
        "alpha_m": study.alpha_m,
        "null_safe_fraction": study.null_safe_fraction,
    }


def write_simulation(doc: dict, fmt: str = "structured") -> str:
    if fmt == "structured":
        return json.dumps(doc, indent=2, allow_nan=False) + "\n"
    if fmt != "text":
        raise InputError(f"unknown report format {fmt!r}")
    t = doc["template"]
    out = [
        f"Null simulation from {t['name']}: {t['n_studies']} studies, tau={t['tau']:.4g}, "
        f"theta_true={t['theta_true']:g}, seed={t['seed']}",
        "",
        f"{'run':>4} {'alpha_L':>8} {'alpha_U':>8} {'theta_hat':>10} {'se':>8} {'|theta|<se':>10}",
    ]
    for r in doc["runs"]:
        safe = abs(r["theta_hat"] - t["theta_true"]) < r["se_theta"]
        out.append(
            f"{r['k']:>4} {_fmt_alpha(r['alpha_lo']):>8} {_fmt_alpha(r['alpha_hi']):>8} "
            f"{r['theta_hat']:>10.4f} {r['se_theta']:>8.4f} {'yes' if safe else 'no':>10}"
        )
    out.append("")
    out.append(f"alpha_m = {doc['alpha_m']:.4f}  (mean of all optimal alpha_L and alpha_U)")
    out.append(f"null-safe fraction = {doc['null_safe_fraction']:.2f}")
    return "\n".join(out) + "\n"
