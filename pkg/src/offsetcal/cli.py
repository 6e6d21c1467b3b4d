"""Command-line front end.

Subcommands::

    offsetcal bounds    --n N --k K (--sigma2 S[,S2,...] | --cov-file F) [--ref REF]
    offsetcal estimate  MEASUREMENTS.csv (--sigma2 ... | --cov-file F) [--ref REF]
    offsetcal reproduce {fig1a,fig1b,fig1c} [--seed S] [--runs R] [--out DIR] [--svg]

Exit codes: 0 success, 2 usage or validation error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, svg
from .bounds import single_source_bounds, traces_diagonal_noise
from .estimator import EstimatorConfig, estimate_offsets
from .manifest import RunManifest
from .model import (
    GeneralStationary,
    Homoscedastic,
    IndependentDiagonal,
    NetworkShape,
    NoiseModel,
    SingularSystemError,
    parse_reference,
)
from .simulator import CSV_COLUMNS, CSV_SCHEMA_VERSION, ExperimentConfig, SweepResult, run_delta_grid, run_variance_sweep

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL = 0, 2, 3
FIGURES = ("fig1a", "fig1b", "fig1c")
DEFAULT_STEP = 10


class InputError(ValueError):
    """Bad user input; reported as a one-line diagnostic with exit code 2."""


# ---------------------------------------------------------------------------
# Input parsing
# ---------------------------------------------------------------------------


def _parse_float(text: str, where: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise InputError(f"{where}: cannot parse {text.strip()!r} as a number") from None
    if not np.isfinite(v):
        raise InputError(f"{where}: non-finite value {text.strip()!r}")
    return v


def read_matrix_csv(path: Path) -> np.ndarray:
    """Numeric CSV to a 2-D array. A non-numeric first row is taken as a header."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror}") from None
    rows = [r for r in csv.reader(io.StringIO(text)) if any(cell.strip() for cell in r)]
    if not rows:
        raise InputError(f"{path}: file is empty")
    first = rows[0]
    try:
        [float(c) for c in first]
    except ValueError:
        rows = rows[1:]
        offset = 2
    else:
        offset = 1
    if not rows:
        raise InputError(f"{path}: no data rows")
    width = len(rows[0])
    data = []
    for i, r in enumerate(rows):
        line = i + offset
        if len(r) != width:
            raise InputError(f"{path}: row {line} has {len(r)} columns, expected {width}")
        data.append([_parse_float(c, f"{path}: row {line}, column {j + 1}") for j, c in enumerate(r)])
    return np.array(data, dtype=float)


def _noise_from_args(args, n: int) -> NoiseModel:
    if args.cov_file and args.sigma2:
        raise InputError("give either --sigma2 or --cov-file, not both")
    if args.cov_file:
        cov = read_matrix_csv(Path(args.cov_file))
        if cov.shape != (n, n):
            raise InputError(f"{args.cov_file}: covariance is {cov.shape[0]}x{cov.shape[1]}, expected {n}x{n}")
        return GeneralStationary(cov)
    if not args.sigma2:
        raise InputError("a noise specification is required (--sigma2 or --cov-file)")
    values = [_parse_float(v, "--sigma2") for v in args.sigma2.split(",")]
    if len(values) == 1:
        return Homoscedastic(values[0])
    if len(values) != n:
        raise InputError(f"--sigma2 lists {len(values)} variances for {n} sensors")
    return IndependentDiagonal(values)


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _fmt(x) -> str:
    if isinstance(x, bool):
        return str(int(x))
    if isinstance(x, float):
        return repr(x)
    return str(x)


# ---------------------------------------------------------------------------
# bounds
# ---------------------------------------------------------------------------


def cmd_bounds(args) -> int:
    shape = NetworkShape(args.n, args.k)
    noise = _noise_from_args(args, shape.n_sensors)
    constraint = parse_reference(args.ref, shape)
    (report,) = single_source_bounds(shape, noise, [constraint])
    out = {
        "n_sensors": shape.n_sensors,
        "n_measurements": shape.n_measurements,
        "noise": noise.to_dict(),
        "reference": report.constraint_label,
        "ccrb_trace": report.trace,
        "closed_form_trace": report.closed_form_trace,
    }
    if noise.is_diagonal and not isinstance(noise, Homoscedastic):
        ref = int(args.ref.split(":")[1]) if args.ref.startswith("single:") else None
        tr = traces_diagonal_noise(shape.n_measurements, noise.variances(shape.n_sensors), ref)
        out["diagonal_noise"] = {
            "reference_sensor": ref if ref is not None else int(np.argmin(noise.variances(shape.n_sensors))),
            "trace_single": tr.trace_single,
            "trace_average": tr.trace_average,
            "gap": tr.gap,
            "closed_form_gap": tr.closed_form_gap,
            "note": (
                "gap is computed from the bound matrices; closed_form_gap is the published "
                "(N/K) s_ref S/(s_ref+S) expression, which matches only for equal variances"
            ),
        }
    if args.matrix:
        out["ccrb_matrix"] = report.ccrb_matrix.tolist()

    if args.format == "json":
        text = json.dumps(out, indent=2) + "\n"
    else:
        lines = [
            f"sensors: {shape.n_sensors}",
            f"measurements: {shape.n_measurements}",
            f"reference: {report.constraint_label}",
            f"ccrb trace: {report.trace:.12g}",
        ]
        if report.closed_form_trace is not None:
            lines.append(f"closed-form trace: {report.closed_form_trace:.12g}")
        if "diagonal_noise" in out:
            d = out["diagonal_noise"]
            lines += [
                f"single-reference trace (sensor {d['reference_sensor']}): {d['trace_single']:.12g}",
                f"average-reference trace: {d['trace_average']:.12g}",
                f"gap (matrix): {d['gap']:.12g}    gap (published closed form): {d['closed_form_gap']:.12g}",
                f"note: {d['note']}",
            ]
        text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    if args.out:
        outdir = Path(args.out)
        outdir.mkdir(parents=True, exist_ok=True)
        path = outdir / "bounds.json"
        path.write_text(json.dumps(out, indent=2) + "\n")
        manifest = RunManifest("bounds", vars_config(args))
        manifest.add_output(path)
        manifest.write(outdir / "manifest.json")
    return EXIT_OK


def vars_config(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k != "func"}


# ---------------------------------------------------------------------------
# estimate
# ---------------------------------------------------------------------------


def cmd_estimate(args) -> int:
    t0 = time.perf_counter()
    y = read_matrix_csv(Path(args.input))
    n, k = y.shape
    if args.n is not None and args.n != n:
        raise InputError(f"{args.input}: file has {n} sensor rows, --n says {args.n}")
    if args.k is not None and args.k != k:
        raise InputError(f"{args.input}: file has {k} measurement columns, --k says {args.k}")
    shape = NetworkShape(n, k)
    noise = _noise_from_args(args, n)
    config = EstimatorConfig(parse_reference(args.ref, shape), args.weighting)
    result = estimate_offsets(y, noise, config)
    elapsed = time.perf_counter() - t0

    manifest = RunManifest("estimate", vars_config(args), timings={"estimate_s": elapsed})
    if args.out:
        outdir = Path(args.out)
        outdir.mkdir(parents=True, exist_ok=True)
        if args.format == "csv":
            path = outdir / "estimate.csv"
            with path.open("w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["sensor", "theta_hat"])
                for i, v in enumerate(result.theta_hat):
                    w.writerow([i, repr(float(v))])
        else:
            path = outdir / "estimate.json"
            path.write_text(json.dumps(result.to_dict(), indent=2) + "\n")
        manifest.add_output(path)
        manifest.write(outdir / "manifest.json")
    json.dump({"estimate": result.to_dict(), "manifest": json.loads(manifest.to_json())}, sys.stdout, indent=2)
    sys.stdout.write("\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# reproduce
# ---------------------------------------------------------------------------


def figure_config(figure: str, step: int = DEFAULT_STEP, **overrides) -> ExperimentConfig:
    axis = list(range(10, 101, step))
    if figure == "fig1a":
        base = dict(n_values=axis, k_values=axis, noise="homoscedastic", sigma2=1e-3)
    elif figure == "fig1b":
        base = dict(n_values=[5], k_values=axis, noise="diagonal")
    elif figure == "fig1c":
        base = dict(n_values=axis, k_values=[100], noise="diagonal")
    else:
        raise InputError(f"unknown figure {figure!r}")
    base.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig(**base)


def sweep_csv(result: SweepResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for rec in result.records:
        w.writerow([_fmt(getattr(rec, c)) for c in CSV_COLUMNS])
    return buf.getvalue()


def sweep_svg(figure: str, result: SweepResult) -> str:
    recs = result.records
    if figure == "fig1a":
        ns = sorted({r.n for r in recs})
        ks = sorted({r.k for r in recs})
        grid = {(r.n, r.k): r.delta_hat for r in recs}
        values = [[grid[(n, k)] for k in ks] for n in ns]
        return svg.heatmap(ns, ks, values, "estimated variance ratio (average / single)",
                           "measurements K", "sensors N", vmin=0.4, vmax=0.6)
    if figure == "fig1b":
        x = [r.k for r in recs]
        xlabel = "measurements K"
    else:
        x = [r.n for r in recs]
        xlabel = "sensors N"
    series = {
        "single (MC)": [r.empirical_single for r in recs],
        "single (bound)": [r.ccrb_single for r in recs],
        "average (MC)": [r.empirical_average for r in recs],
        "average (bound)": [r.ccrb_average for r in recs],
    }
    return svg.line_chart(x, series, "variance trace vs bound", xlabel, "trace",
                          dashed=("single (bound)", "average (bound)"))


def cmd_reproduce(args) -> int:
    overrides = {}
    if args.config:
        try:
            overrides.update(json.loads(Path(args.config).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"{args.config}: {exc}") from None
    flag_values = {
        "master_seed": args.seed,
        "runs_per_cell": args.runs,
        "n_values": args.n,
        "k_values": args.k,
        "sigma2": args.sigma2,
        "workers": args.workers,
    }
    overrides.update({k: v for k, v in flag_values.items() if v is not None})
    try:
        config = figure_config(args.figure, args.step, **overrides)
    except TypeError as exc:
        raise InputError(f"bad configuration: {exc}") from None

    t0 = time.perf_counter()
    result = run_delta_grid(config) if args.figure == "fig1a" else run_variance_sweep(config)
    elapsed = time.perf_counter() - t0

    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    resolved = config.to_dict()
    resolved.pop("workers")  # does not affect results
    manifest = RunManifest(
        f"reproduce {args.figure}",
        {"figure": args.figure, "grid_step": args.step, "csv_schema_version": CSV_SCHEMA_VERSION,
         "experiment": resolved, "sensor_variances": result.variances},
        master_seed=config.master_seed,
        timings={"sweep_s": elapsed},
    )
    if args.format == "csv":
        path = outdir / f"{args.figure}.csv"
        path.write_text(sweep_csv(result))
    else:
        path = outdir / f"{args.figure}.json"
        path.write_text(json.dumps(result.to_dict(), indent=2) + "\n")
    manifest.add_output(path)
    if args.svg:
        spath = outdir / f"{args.figure}.svg"
        spath.write_text(sweep_svg(args.figure, result))
        manifest.add_output(spath)
    manifest.write(outdir / "manifest.json")
    print(f"wrote {path} ({len(result.records)} cells, {elapsed:.2f} s)")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="offsetcal", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def noise_flags(p):
        p.add_argument("--sigma2", help="noise variance, or comma-separated per-sensor variances")
        p.add_argument("--cov-file", help="CSV file with the N x N sensor noise covariance")
        p.add_argument("--ref", default="average", help="'average' or 'single:<i>' (default: average)")

    p = sub.add_parser("bounds", help="constrained Cramer-Rao bound for one network")
    p.add_argument("--n", type=int, required=True, help="number of sensors")
    p.add_argument("--k", type=int, required=True, help="number of measurements per sensor")
    noise_flags(p)
    p.add_argument("--format", choices=("text", "json"), default="text")
    p.add_argument("--matrix", action="store_true", help="include the bound matrix in JSON output")
    p.add_argument("--out", help="also write bounds.json and manifest.json here")
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("estimate", help="estimate offsets from a CSV of measurements (rows = sensors)")
    p.add_argument("input", help="CSV file, N rows x K columns, optional header row")
    p.add_argument("--n", type=int, help="expected number of sensors (checked)")
    p.add_argument("--k", type=int, help="expected number of measurements (checked)")
    noise_flags(p)
    p.add_argument("--weighting", choices=("optimal", "identity"), default="optimal")
    p.add_argument("--format", choices=("csv", "json"), default="json")
    p.add_argument("--out", help="directory for the estimate file and manifest")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("reproduce", help="Monte-Carlo reproduction of the variance figures")
    p.add_argument("figure", choices=FIGURES)
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--runs", type=int, help="Monte-Carlo runs per cell")
    p.add_argument("--step", type=int, default=DEFAULT_STEP, help="grid step for the 10..100 axes")
    p.add_argument("--n", type=_int_list, help="override the sensor-count axis, e.g. 10,50,100")
    p.add_argument("--k", type=_int_list, help="override the measurement-count axis")
    p.add_argument("--sigma2", type=float, help="homoscedastic variance (fig1a)")
    p.add_argument("--config", help="JSON experiment config; flags override its values")
    p.add_argument("--workers", type=int, help="worker threads (default: $OFFSETCAL_THREADS or all cores)")
    p.add_argument("--out", default="results", help="output directory (default: results)")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--svg", action="store_true", help="also render an SVG plot")
    p.set_defaults(func=cmd_reproduce)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SingularSystemError as exc:
        print(f"offsetcal: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (InputError, ValueError, IndexError) as exc:
        print(f"offsetcal: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
