"""Command-line front end.

Three subcommands: ``estimate`` runs the ATT estimators on a CSV panel,
``simulate`` runs a Monte Carlo study and writes its table, ``bound``
reports the efficiency-bound oracle. Every result file gets a JSON manifest
sidecar recording the resolved parameters; simulation CSVs are byte-stable
for identical flags regardless of thread count.

Exit codes: 0 success, 2 input validation, 3 numerical failure, 4 I/O.
"""

from __future__ import annotations

import argparse
import csv
import datetime
import hashlib
import json
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .backend import backend_name
from .errors import CbpsDidError, NumericalError, ValidationError
from .estimators import METHODS, estimate_all
from .panel import CovariateSpec, build_design, load_csv, overlap_report
from .simulation import DgpConfig, StudyReport, efficiency_bound_detail, run_study

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4


def _constants_checksum() -> str:
    path = resources.files("cbpsdid").joinpath("data/standardization.json")
    with resources.as_file(path) as p:
        return hashlib.sha256(Path(p).read_bytes()).hexdigest()


def _write_manifest(path: Path, command: str, params: dict, outputs: list[str]) -> None:
    manifest = {
        "command": command,
        "artifact_version": __version__,
        "backend": backend_name(),
        "parameters": params,
        "constants_sha256": _constants_checksum(),
        "created_utc": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "outputs": outputs,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")


def _fmt(value: float, width: int = 10) -> str:
    return f"{value:{width}.3f}"


# ---------------------------------------------------------------- estimate


def cmd_estimate(args) -> int:
    ds = load_csv(args.data, y0=args.y0, y1=args.y1, d=args.d)
    if args.echo_data:
        ds.to_csv(args.echo_data)
    if args.spec is not None:
        spec = CovariateSpec.from_file(args.spec)
    else:
        spec = CovariateSpec.all_raw(ds)
    design = build_design(ds, spec)
    methods = METHODS if args.method == "all" else (args.method,)
    results, failures = estimate_all(design.x, ds.dy, ds.d, methods)
    if args.method != "all" and args.method in failures:
        raise failures[args.method]

    print(f"data: {args.data}  n={ds.n}  treated={ds.n_treat}  controls={ds.n_control}")
    print(f"design columns: {', '.join(design.column_names)}")
    print()
    header = f"{'method':8s}{'tau':>12s}{'se':>12s}{'ci95_low':>12s}{'ci95_high':>12s}"
    print(header)
    rows = []
    for method in methods:
        if method in failures:
            print(f"{method:8s}{'failed: ' + type(failures[method]).__name__:>48s}")
            continue
        res = results[method]
        print(
            f"{method:8s}{res.tau:12.3f}{res.se:12.3f}{res.ci_low:12.3f}{res.ci_high:12.3f}"
        )
        row = {
            "method": method,
            "tau": res.tau,
            "se": res.se,
            "ci_low": res.ci_low,
            "ci_high": res.ci_high,
            "asy_var": res.asy_var,
            "n": res.n,
        }
        if res.propensity is not None:
            rep = overlap_report(res.propensity.propensities(design.x), ds.d)
            row.update(
                converged=res.propensity.converged,
                iterations=res.propensity.iterations,
                residual_norm=res.propensity.residual_norm,
                min_pi=rep.min_pi,
                max_pi=rep.max_pi,
                extreme_controls=rep.n_extreme_controls,
                max_control_odds=rep.max_control_odds,
            )
        rows.append(row)
    for row in rows:
        if "min_pi" in row:
            print()
            print(f"[{row['method']}] propensity fit: converged={row['converged']} "
                  f"after {row['iterations']} iterations "
                  f"(residual {row['residual_norm']:.2e})")
            rep_lines = [
                f"propensity range: [{row['min_pi']:.6f}, {row['max_pi']:.6f}]",
                f"controls with pi > 0.99: {row['extreme_controls']}",
                f"largest control odds pi/(1-pi): {row['max_control_odds']:.4f}",
            ]
            for line in rep_lines:
                print(f"[{row['method']}] {line}")

    if failures and args.method == "all":
        print()
        for method, exc in failures.items():
            print(f"note: {method} failed with {type(exc).__name__}: {exc}")

    out_prefix = Path(args.out)
    csv_path = out_prefix.parent / (out_prefix.name + ".csv")
    json_path = out_prefix.parent / (out_prefix.name + ".json")
    fieldnames = [
        "method", "tau", "se", "ci_low", "ci_high", "asy_var", "n",
        "converged", "iterations", "residual_norm",
        "min_pi", "max_pi", "extreme_controls", "max_control_odds",
    ]
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _csv_value(row.get(k)) for k in fieldnames})
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump({"results": rows, "failures": {m: str(e) for m, e in failures.items()}},
                  fh, indent=2)
        fh.write("\n")
    params = {
        "data": str(args.data), "spec": str(args.spec) if args.spec else None,
        "method": args.method, "y0": args.y0, "y1": args.y1, "d": args.d,
    }
    manifest_path = out_prefix.parent / (out_prefix.name + ".manifest.json")
    _write_manifest(manifest_path, "estimate", params, [str(csv_path), str(json_path)])
    print(f"\nwrote {csv_path}, {json_path}, {manifest_path}")
    if failures and args.method == "all" and len(failures) == len(methods):
        return EXIT_NUMERICAL
    return EXIT_OK


def _csv_value(value):
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    return value


# ---------------------------------------------------------------- simulate


def _print_study(report: StudyReport) -> None:
    print(f"DGP {report.dgp_id}  n={report.n}  reps={report.reps}  seed={report.seed}")
    print(f"Semiparametric efficiency bound: {report.bound:.3f} "
          f"(MC se {report.bound_se:.3f}, {report.bound_draws} draws)")
    cols = ["Av.Bias", "Med.Bias", "RMSE", "Asy.V", "Cover", "CIL"]
    print(f"{'method':8s}" + "".join(f"{c:>11s}" for c in cols) + f"{'failures':>10s}")
    for row in report.rows:
        cells = [row.av_bias, row.med_bias, row.rmse, row.asy_v, row.cover, row.cil]
        print(f"{row.method:8s}" + "".join(f"{v:11.3f}" for v in cells)
              + f"{row.n_failed:>10d}")


STUDY_FIELDS = [
    "dgp", "n", "reps", "seed", "method",
    "av_bias", "med_bias", "rmse", "asy_v", "cover", "cil",
    "n_used", "n_failed", "bound", "bound_se", "bound_draws",
]


def write_study_csv(report: StudyReport, path) -> None:
    """One row per (dgp, method), full-precision floats, stable bytes."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(STUDY_FIELDS)
        for row in report.rows:
            writer.writerow([
                report.dgp_id, report.n, report.reps, report.seed, row.method,
                repr(row.av_bias), repr(row.med_bias), repr(row.rmse),
                repr(row.asy_v), repr(row.cover), repr(row.cil),
                row.n_used, row.n_failed,
                repr(report.bound), repr(report.bound_se), report.bound_draws,
            ])


def cmd_simulate(args) -> int:
    cfg = DgpConfig(dgp_id=args.dgp, n=args.n, xi=args.xi, delta=args.delta)
    report = run_study(
        cfg, reps=args.reps, seed=args.seed,
        threads=args.threads, bound_draws=args.bound_draws,
    )
    _print_study(report)
    out = Path(args.out) if args.out else Path(f"study_dgp{args.dgp}.csv")
    write_study_csv(report, out)
    params = {
        "dgp": args.dgp, "n": args.n, "reps": args.reps, "seed": args.seed,
        "threads": args.threads, "bound_draws": args.bound_draws,
        "xi": cfg.xi, "delta": cfg.delta,
    }
    manifest_path = out.parent / (out.name + ".manifest.json")
    _write_manifest(manifest_path, "simulate", params, [str(out)])
    print(f"\nwrote {out}, {manifest_path}")
    return EXIT_OK


# ------------------------------------------------------------------- bound


def cmd_bound(args) -> int:
    bound, se = efficiency_bound_detail(args.dgp, args.draws, args.seed)
    print(f"DGP {args.dgp} semiparametric efficiency bound: {bound:.4f}")
    print(f"MC standard error: {se:.4f}  ({args.draws} oracle draws, seed {args.seed})")
    return EXIT_OK


# -------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cbpsdid",
        description="Difference-in-differences ATT estimation with covariate balancing",
    )
    parser.add_argument("--version", action="version", version=f"cbpsdid {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    est = sub.add_parser("estimate", help="estimate the ATT on a CSV panel")
    est.add_argument("--data", required=True, help="CSV file with header row")
    est.add_argument("--spec", default=None,
                     help="covariate spec file (default: every covariate raw)")
    est.add_argument("--method", default="all",
                     choices=["or", "ipw", "aipw", "cbps", "all"])
    est.add_argument("--y0", default="y0", help="pre-period outcome column")
    est.add_argument("--y1", default="y1", help="post-period outcome column")
    est.add_argument("--d", default="d", help="treatment indicator column")
    est.add_argument("--out", default="att_results",
                     help="output prefix for CSV/JSON results")
    est.add_argument("--echo-data", default=None,
                     help="write the parsed dataset back out as CSV (round-trips)")
    est.set_defaults(func=cmd_estimate)

    simp = sub.add_parser("simulate", help="run a Monte Carlo study")
    simp.add_argument("--dgp", type=int, required=True, choices=[1, 2, 3, 4, 5])
    simp.add_argument("--n", type=int, default=1000)
    simp.add_argument("--reps", type=int, default=1000)
    simp.add_argument("--seed", type=int, required=True)
    simp.add_argument("--out", default=None, help="output CSV path")
    simp.add_argument("--threads", type=int, default=1)
    simp.add_argument("--bound-draws", type=int, default=10**6)
    simp.add_argument("--xi", type=float, default=None,
                      help="propensity perturbation size (DGP 5 only)")
    simp.add_argument("--delta", type=float, default=None,
                      help="outcome perturbation size (DGP 5 only)")
    simp.set_defaults(func=cmd_simulate)

    bnd = sub.add_parser("bound", help="efficiency-bound oracle")
    bnd.add_argument("--dgp", type=int, required=True, choices=[1, 2, 3, 4, 5])
    bnd.add_argument("--draws", type=int, default=10**6)
    bnd.add_argument("--seed", type=int, required=True)
    bnd.set_defaults(func=cmd_bound)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except CbpsDidError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
