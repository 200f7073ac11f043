"""Command-line front end: CSV ingestion, estimation, simulation, bounds.

Reports are machine readable. JSON is the default; CSV covers the summary
tables. Numeric fields are serialized with 17 significant digits so that a
report round-trips losslessly and identical configurations produce
byte-identical files.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import os
import sys
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy

from . import __version__
from .data import AttEstimate, PanelDataset, RcDataset
from .efficiency import bound_gap_panel_rc, dgp_oracle, eff_bound_panel, eff_bound_rc
from .errors import (
    DataError,
    DuplicateId,
    EmptyCell,
    MissingColumn,
    ParseError,
    RobustDidError,
)
from .panel import PANEL_TAGS, EstimatorConfig, estimate_panel
from .rc import RC_TAGS, estimate_rc
from .simulation import TAG_EST, DgpSpec, run_mc, stream

ENV_THREADS = "ROBUSTDID_THREADS"


@dataclass
class RunConfig:
    command: str
    design: str = "panel"
    input_path: str | None = None
    estimators: tuple[str, ...] = ()
    ps_method: str = "mle"
    trim_threshold: float | None = None
    bootstrap_draws: int = 999
    level: float = 0.95
    seed: int = 0
    output_path: str | None = None
    output_format: str = "json"
    dgp_id: int = 1
    n: int = 1000
    reps: int = 1000
    lam: float = 0.5
    parallel: int = 1
    bound_draws: int = 1_000_000

    def __post_init__(self):
        if not 0.0 < self.level < 1.0:
            raise ValueError("confidence level must lie in (0, 1)")


@dataclass
class ReportDocument:
    command: str
    config: dict
    results: list[dict]
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        doc = {"command": self.command, "config": self.config}
        doc.update(self.extras)
        doc["results"] = self.results
        doc["provenance"] = {
            "package": "robustdid",
            "version": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "seed": self.config.get("seed"),
        }
        return doc

    def to_json(self) -> str:
        return _write_json(self.to_dict()) + "\n"

    def to_csv(self) -> str:
        if not self.results:
            return ""
        keys = [k for k in self.results[0] if not isinstance(self.results[0][k], dict)]
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(keys)
        for row in self.results:
            writer.writerow([_fmt_scalar(row.get(k)) for k in keys])
        return buf.getvalue()


def _fmt_scalar(v):
    if isinstance(v, float):
        return format(v, ".17g")
    return v


def _write_json(obj, indent=0) -> str:
    """Minimal JSON writer emitting floats with 17 significant digits."""
    pad = "  " * indent
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [
            f'{pad}  "{k}": {_write_json(v, indent + 1)}' for k, v in obj.items()
        ]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        items = [f"{pad}  {_write_json(v, indent + 1)}" for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + pad + "]"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if np.isnan(x):
            return '"nan"'
        if np.isinf(x):
            return '"inf"' if x > 0 else '"-inf"'
        return format(x, ".17g")
    if isinstance(obj, str):
        return '"' + obj.replace("\\", "\\\\").replace('"', '\\"') + '"'
    raise TypeError(f"cannot serialize {type(obj)!r}")


# ------------------------------------------------------------- CSV input


def _read_rows(path: str, required: list[str]):
    try:
        handle = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot open {path}: {exc}") from exc
    with handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("file is empty", row=1) from None
        header = [h.strip() for h in header]
        for col in required:
            if col not in header:
                raise MissingColumn(f"missing required column {col!r}")
        x_cols = [h for h in header if h not in required]
        bad = [c for c in x_cols if not (c.startswith("x") and c[1:].isdigit())]
        if bad:
            raise ParseError(f"unexpected columns {bad}; covariates must be x1..xk")
        x_cols.sort(key=lambda c: int(c[1:]))
        idx = {c: header.index(c) for c in required + x_cols}
        rows = []
        for rownum, row in enumerate(reader, start=2):
            if not row or all(not f.strip() for f in row):
                continue
            if len(row) != len(header):
                raise ParseError(
                    f"expected {len(header)} fields, found {len(row)}", row=rownum
                )
            rows.append((rownum, row))
    return idx, x_cols, rows


def _parse_float(raw: str, rownum: int, col: str) -> float:
    try:
        return float(raw)
    except ValueError:
        raise ParseError(f"cannot parse {raw!r} as a number", row=rownum, column=col) from None


def _parse_binary(raw: str, rownum: int, col: str) -> float:
    v = _parse_float(raw, rownum, col)
    if v not in (0.0, 1.0):
        raise ParseError(f"{col} must be 0 or 1, found {raw!r}", row=rownum, column=col)
    return v


def _collect(idx, x_cols, rows, binary_cols, float_cols):
    ids = set()
    out = {c: [] for c in list(idx)}
    for rownum, row in rows:
        uid = row[idx["id"]].strip()
        if uid in ids:
            raise DuplicateId(f"duplicate id {uid!r} at row {rownum}")
        ids.add(uid)
        for col in binary_cols:
            out[col].append(_parse_binary(row[idx[col]], rownum, col))
        for col in float_cols + x_cols:
            out[col].append(_parse_float(row[idx[col]], rownum, col))
    return out


def load_panel_csv(path: str) -> PanelDataset:
    """Read ``id,y0,y1,d,x1..xk``; a constant column is prepended to the design."""
    idx, x_cols, rows = _read_rows(path, ["id", "y0", "y1", "d"])
    cols = _collect(idx, x_cols, rows, ["d"], ["y0", "y1"])
    n = len(cols["d"])
    if n == 0:
        raise ParseError("no data rows")
    design = np.column_stack(
        [np.ones(n)] + [np.asarray(cols[c], dtype=float) for c in x_cols]
    )
    try:
        return PanelDataset(cols["y0"], cols["y1"], cols["d"], design)
    except (ValueError, RobustDidError) as exc:
        if isinstance(exc, DataError):
            raise
        raise ParseError(str(exc)) from exc


def load_rc_csv(path: str) -> RcDataset:
    """Read ``id,y,post,d,x1..xk``; every (d, post) cell must be populated."""
    idx, x_cols, rows = _read_rows(path, ["id", "y", "post", "d"])
    cols = _collect(idx, x_cols, rows, ["d", "post"], ["y"])
    n = len(cols["d"])
    if n == 0:
        raise ParseError("no data rows")
    design = np.column_stack(
        [np.ones(n)] + [np.asarray(cols[c], dtype=float) for c in x_cols]
    )
    try:
        return RcDataset(cols["y"], cols["post"], cols["d"], design)
    except EmptyCell:
        raise
    except (ValueError, RobustDidError) as exc:
        raise ParseError(str(exc)) from exc


# ------------------------------------------------------------ run drivers


def _estimate_record(tag: str, got: AttEstimate | RobustDidError) -> dict:
    if isinstance(got, RobustDidError):
        return {"method": tag, "error": f"{type(got).__name__}: {got}"}
    diag = dict(got.diagnostics)
    for key, val in list(diag.items()):
        if isinstance(val, (np.floating, np.integer)):
            diag[key] = val.item()
    return {
        "method": got.method,
        "att": got.att,
        "se": got.se,
        "ci_low": got.ci[0],
        "ci_high": got.ci[1],
        "level": got.level,
        "diagnostics": diag,
    }


def run_estimate(config: RunConfig) -> ReportDocument:
    """Load a CSV dataset and run the selected estimators on it."""
    if config.design == "panel":
        data = load_panel_csv(config.input_path)
        tags = config.estimators or PANEL_TAGS
        runner = estimate_panel
    else:
        data = load_rc_csv(config.input_path)
        tags = config.estimators or RC_TAGS
        runner = estimate_rc
    cfg = EstimatorConfig(
        ps_method=config.ps_method,
        bootstrap_draws=config.bootstrap_draws,
        level=config.level,
        trim_threshold=config.trim_threshold,
    )
    rng = stream(config.seed, 0, TAG_EST)
    results = runner(data, tags, cfg, rng)
    deciles = _control_ps_deciles(data, config)
    records = []
    for tag in tags:
        rec = _estimate_record(tag, results[tag])
        if "diagnostics" in rec and "ps_min_control" in rec["diagnostics"]:
            rec["diagnostics"]["ps_deciles_control"] = deciles
        records.append(rec)
    doc = ReportDocument(
        "estimate",
        asdict(config),
        records,
        {"n": data.n, "n_treated": int(data.d.sum())},
    )
    return doc


def _control_ps_deciles(data, config) -> list[float] | None:
    from .panel import _fit_ps

    try:
        ps = _fit_ps(data.x, data.d, config.ps_method)
    except RobustDidError:
        return None
    ctrl = ps.fitted[data.d == 0]
    qs = np.percentile(ctrl, np.arange(10, 100, 10))
    return [float(q) for q in qs]


def run_simulate(config: RunConfig) -> ReportDocument:
    """Monte Carlo table for one design plus its oracle variance bound."""
    spec = DgpSpec(config.dgp_id, config.design, config.n, config.seed, config.lam)
    tags = config.estimators or (PANEL_TAGS if config.design == "panel" else RC_TAGS)
    summaries = run_mc(
        spec,
        tags,
        config.reps,
        parallel=config.parallel,
        ps_method=config.ps_method,
        bootstrap_draws=config.bootstrap_draws,
        level=config.level,
    )
    oracle = dgp_oracle(config.dgp_id, config.lam)
    if config.design == "panel":
        bound = eff_bound_panel(oracle, config.bound_draws, config.seed)
    else:
        bound = eff_bound_rc(oracle, config.lam, config.bound_draws, config.seed)
    rows = []
    for s in summaries:
        row = asdict(s)
        row["bound"] = bound.value
        row["bound_mc_se"] = bound.mc_se
        rows.append(row)
    return ReportDocument(
        "simulate",
        asdict(config),
        rows,
        {
            "bound": {
                "value": bound.value,
                "mc_se": bound.mc_se,
                "draws": bound.draws,
            }
        },
    )


def run_bounds(config: RunConfig) -> ReportDocument:
    """Oracle efficiency bounds for one design."""
    oracle = dgp_oracle(config.dgp_id, config.lam)
    rows = []
    panel = eff_bound_panel(oracle, config.bound_draws, config.seed)
    rows.append(
        {
            "quantity": "bound_panel",
            "value": panel.value,
            "mc_se": panel.mc_se,
            "draws": panel.draws,
        }
    )
    if config.design == "rc":
        rc = eff_bound_rc(oracle, config.lam, config.bound_draws, config.seed)
        gap = bound_gap_panel_rc(oracle, config.lam, config.bound_draws, config.seed)
        rows.append(
            {"quantity": "bound_rc", "value": rc.value, "mc_se": rc.mc_se, "draws": rc.draws}
        )
        rows.append(
            {"quantity": "gap", "value": gap.value, "mc_se": gap.mc_se, "draws": gap.draws}
        )
    return ReportDocument("bounds", asdict(config), rows)


# -------------------------------------------------------------- arg parse


def _add_common(p):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", dest="output_path")
    p.add_argument("--format", dest="output_format", choices=("json", "csv"), default="json")
    p.add_argument("--level", type=float, default=0.95)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="robustdid",
        description="Doubly robust difference-in-differences ATT estimation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    est = sub.add_parser("estimate", help="estimate ATT from a CSV dataset")
    est.add_argument("--input", dest="input_path", required=True)
    est.add_argument("--design", choices=("panel", "rc"), required=True)
    est.add_argument("--estimators", default="")
    est.add_argument("--ps-method", dest="ps_method", choices=("mle", "ipt"), default="mle")
    est.add_argument("--trim-threshold", dest="trim_threshold", type=float, default=None)
    est.add_argument("--bootstrap-draws", dest="bootstrap_draws", type=int, default=999)
    _add_common(est)

    sim = sub.add_parser("simulate", help="run a Monte Carlo experiment")
    sim.add_argument("--dgp", dest="dgp_id", type=int, choices=(1, 2, 3, 4), required=True)
    sim.add_argument("--design", choices=("panel", "rc"), required=True)
    sim.add_argument("--n", type=int, default=1000)
    sim.add_argument("--reps", type=int, default=1000)
    sim.add_argument("--lambda", dest="lam", type=float, default=0.5)
    sim.add_argument("--estimators", default="")
    sim.add_argument("--ps-method", dest="ps_method", choices=("mle", "ipt"), default="mle")
    sim.add_argument("--bootstrap-draws", dest="bootstrap_draws", type=int, default=999)
    sim.add_argument(
        "--parallel",
        type=int,
        default=int(os.environ.get(ENV_THREADS, "1")),
    )
    sim.add_argument("--bound-draws", dest="bound_draws", type=int, default=1_000_000)
    _add_common(sim)

    bnd = sub.add_parser("bounds", help="evaluate oracle efficiency bounds")
    bnd.add_argument("--dgp", dest="dgp_id", type=int, choices=(1, 2, 3, 4), required=True)
    bnd.add_argument("--design", choices=("panel", "rc"), default="panel")
    bnd.add_argument("--lambda", dest="lam", type=float, default=0.5)
    bnd.add_argument("--draws", dest="bound_draws", type=int, default=1_000_000)
    _add_common(bnd)

    return parser


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    fields = {k: v for k, v in vars(args).items() if v is not None}
    raw = fields.pop("estimators", "")
    tags = tuple(t.strip() for t in raw.split(",") if t.strip()) if raw else ()
    fields["estimators"] = tags
    allowed = RunConfig.__dataclass_fields__
    return RunConfig(**{k: v for k, v in fields.items() if k in allowed})


def _validate_tags(config: RunConfig, parser) -> None:
    catalog = PANEL_TAGS if config.design == "panel" else RC_TAGS
    unknown = [t for t in config.estimators if t not in catalog]
    if unknown:
        parser.error(
            f"unknown estimator tag(s) {unknown} for design {config.design!r}; "
            f"choose from {', '.join(catalog)}"
        )


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = _config_from_args(args)
    except ValueError as exc:
        parser.error(str(exc))
    if config.command in ("estimate", "simulate"):
        _validate_tags(config, parser)
    try:
        if config.command == "estimate":
            doc = run_estimate(config)
        elif config.command == "simulate":
            doc = run_simulate(config)
        else:
            doc = run_bounds(config)
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except (RobustDidError, ValueError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4
    text = doc.to_json() if config.output_format == "json" else doc.to_csv()
    if config.output_path:
        with open(config.output_path, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    if config.command == "estimate" and all("error" in r for r in doc.results):
        print("numerical failure: all requested estimators failed", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
