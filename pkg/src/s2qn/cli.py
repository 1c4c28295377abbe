"""Command-line front end: ``s2qn train | validate | compare``.

Exit codes: 0 success, 1 validation failure, 2 bad input (config, data,
mismatched runs), 3 run failure. Every error path prints one line
``error: <code>: <message>`` on stderr.
"""
import argparse
import contextlib
import csv
import json
import os
import subprocess
import sys
from pathlib import Path

from .errors import ConfigError, DimensionMismatch, ParseError, S2QNError, ShapeMismatch

EXIT_OK, EXIT_FAIL, EXIT_INPUT, EXIT_RUN = 0, 1, 2, 3
INPUT_ERRORS = (ConfigError, ParseError, ShapeMismatch, DimensionMismatch)


class CLIError(Exception):
    def __init__(self, code, message, exit_code=EXIT_INPUT):
        super().__init__(message)
        self.code = code
        self.exit_code = exit_code


def _fail(code, message):
    msg = " ".join(str(message).split())
    print(f"error: {code}: {msg}", file=sys.stderr)


def _thread_limit():
    raw = os.environ.get("S2QN_THREADS", "").strip()
    if not raw:
        return contextlib.nullcontext()
    try:
        n = int(raw)
        if n < 1:
            raise ValueError
    except ValueError:
        raise CLIError("env-invalid", f"S2QN_THREADS must be a positive integer, got {raw!r}") from None
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------- train

def train(config_path, seed=None, out=None, plot=None):
    """Run one config end to end and write its artifacts; returns the output directory."""
    from . import config as cfgmod
    from .engine import Engine, compute_reference_optimum
    from .models import LogisticRegressionProblem
    from .plotting import write_line_plot

    cfg = cfgmod.load_config(config_path, seed=seed, output_dir=out)
    outdir = Path(cfg.output_dir or Path("runs") / cfg.name)
    outdir.mkdir(parents=True, exist_ok=True)
    # written first so a failed run still leaves its exact inputs behind
    _write_json(outdir / "resolved-config.json", cfgmod.resolved_dict(cfg))

    problem, theta0 = cfgmod.build_problem(cfg)
    psi_star = None
    if cfg.reference_optimum and isinstance(problem, LogisticRegressionProblem):
        psi_star = compute_reference_optimum(problem)[1]
    engine = Engine(problem, cfgmod.engine_options(cfg), psi_star)
    rec = engine.run(theta0)
    rec.write_csv(outdir / "metrics.csv")

    loss, gnorm, relerr = engine.probe(rec.theta)
    summary = {
        "name": cfg.name,
        "method": cfg.method,
        "base": cfg.resolved_base,
        "seed": cfg.seed,
        "problem": cfg.problem.model_dump(mode="json"),
        "n_params": problem.n_params,
        "n_samples": problem.n_samples,
        "psi_star": psi_star,
        "initial": rec.initial,
        "final_loss": loss,
        "final_gnorm": gnorm,
        "final_relerr": relerr,
        "epochs": rec.rows[-1]["epoch"] if rec.rows else 0.0,
        "iterations": len(rec.rows),
        "stop_reason": rec.stop_reason,
    }
    _write_json(outdir / "summary.json", summary)
    if plot:
        key = "relerr" if psi_star is not None else "fullgnorm"
        xs, ys = [0.0], [rec.initial[key]]
        for r in rec.rows:
            if r[key] is not None:
                xs.append(r["epoch"])
                ys.append(r[key])
        write_line_plot(_plot_path(plot, outdir), {cfg.method: (xs, ys)}, title=cfg.name,
                        ylabel="relative error" if key == "relerr" else "full gradient norm")
    return outdir


def _plot_path(plot, outdir):
    p = Path(plot)
    return p if p.is_absolute() or p.parent != Path(".") else outdir / p


# ------------------------------------------------------------------- validate

def validate(name_filter=None, stream=None):
    from .validation import run_suites

    stream = stream or sys.stdout
    results = run_suites(name_filter)
    if not results:
        raise CLIError("no-suites", f"no validation suite matches {name_filter!r}")
    width = max(len(r[0]) for r in results)
    print(f"{'suite':<{width}}  result  worst", file=stream)
    for name, ok, worst in results:
        shown = f"{worst:.3e}" if isinstance(worst, float) else str(worst)
        print(f"{name:<{width}}  {'PASS' if ok else 'FAIL':<6}  {shown}", file=stream)
    failed = sum(not r[1] for r in results)
    print(f"{len(results) - failed}/{len(results)} suites passed", file=stream)
    return EXIT_OK if failed == 0 else EXIT_FAIL


# -------------------------------------------------------------------- compare

def _load_run(run_dir):
    from .engine import read_metrics_csv

    d = Path(run_dir)
    try:
        summary = json.loads((d / "summary.json").read_text())
        resolved = json.loads((d / "resolved-config.json").read_text())
        rows = read_metrics_csv(d / "metrics.csv")
    except FileNotFoundError as exc:
        raise CLIError("run-incomplete", f"{run_dir}: missing {Path(exc.filename).name}") from None
    except (json.JSONDecodeError, ValueError) as exc:
        raise CLIError("run-corrupt", f"{run_dir}: {exc}") from None
    return {"dir": d, "summary": summary, "config": resolved, "rows": rows}


def _train_subprocess(config_path, outdir, seed):
    cmd = [sys.executable, "-m", "s2qn.cli", "train", "--config", str(config_path), "--out", str(outdir)]
    if seed is not None:
        cmd += ["--seed", str(seed)]
    proc = subprocess.run(cmd, capture_output=True, text=True)
    if proc.returncode != 0:
        line = (proc.stderr.strip().splitlines() or ["error: run-failed: training subprocess failed"])[-1]
        raise CLIError("run-failed", f"{config_path}: {line}", exit_code=proc.returncode)


def _series(run, key):
    """Step function of ``key`` over epochs: ``[(epoch, value)]`` starting at epoch 0."""
    init = run["summary"]["initial"].get(key) if key in ("relerr", "fullgnorm") else None
    pts = [(0.0, init)]
    for r in run["rows"]:
        if r[key] is not None:
            pts.append((r["epoch"], r[key]))
    return pts


def _value_at(pts, e, end):
    if e > end + 1e-12:
        return None
    val = None
    for x, y in pts:
        if x <= e + 1e-12:
            val = y
        else:
            break
    return val


def aligned_table(runs, labels):
    """Per-epoch table over the union of all recorded epochs, last value carried forward."""
    metric = "relerr" if all(r["summary"].get("psi_star") is not None for r in runs) else "fullgnorm"
    grid = sorted({0.0} | {round(r["epoch"], 12) for run in runs for r in run["rows"]})
    ends = [run["rows"][-1]["epoch"] if run["rows"] else 0.0 for run in runs]
    series = [_series(run, metric) for run in runs]
    losses = [_series(run, "loss") for run in runs]
    header = ["epoch"] + [f"{lab}:{metric}" for lab in labels] + [f"{lab}:loss" for lab in labels]
    table = []
    for e in grid:
        vals = [_value_at(s, e, end) for s, end in zip(series, ends)]
        ls = [_value_at(s, e, end) if e > 0 else None for s, end in zip(losses, ends)]
        table.append([e] + vals + ls)
    gap = 0.0
    for row in table:
        ref = row[1]
        for v in row[2:1 + len(runs)]:
            if ref is not None and v is not None:
                gap = max(gap, abs(v - ref))
    return metric, header, table, gap


def compare(inputs, out=None, plot=None, seed=None):
    from .plotting import write_line_plot

    if len(inputs) < 2:
        raise CLIError("compare-args", "compare needs at least two runs or configs")
    outdir = Path(out) if out else Path("compare")
    outdir.mkdir(parents=True, exist_ok=True)
    runs = []
    for i, item in enumerate(inputs):
        p = Path(item)
        if p.is_dir():
            runs.append(_load_run(p))
        elif p.is_file():
            rd = outdir / f"run{i}-{p.stem}"
            _train_subprocess(p, rd, seed)
            runs.append(_load_run(rd))
        else:
            raise CLIError("config-missing", f"{item} is neither a run directory nor a config file")
    first = runs[0]["config"]["problem"]
    for run in runs[1:]:
        if run["config"]["problem"] != first:
            raise CLIError("problem-mismatch", f"{run['dir']} solves a different problem than {runs[0]['dir']}")

    labels = []
    for run in runs:
        lab = run["summary"]["method"]
        while lab in labels:
            lab += "'"
        labels.append(lab)
    metric, header, table, gap = aligned_table(runs, labels)
    with open(outdir / "compare.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in table:
            w.writerow(["" if v is None else repr(float(v)) for v in row])
    _write_json(outdir / "compare-summary.json", {
        "metric": metric, "runs": [str(r["dir"]) for r in runs], "labels": labels, "max_gap": gap})
    if plot:
        series = {lab: ([r[0] for r in table if r[1 + j] is not None], [r[1 + j] for r in table if r[1 + j] is not None])
                  for j, lab in enumerate(labels)}
        write_line_plot(_plot_path(plot, outdir), series, title="comparison",
                        ylabel="relative error" if metric == "relerr" else "full gradient norm")
    print(f"compared {len(runs)} runs on {metric}; max gap {gap:.6g}")
    return EXIT_OK


# ----------------------------------------------------------------------- main

def build_parser():
    p = argparse.ArgumentParser(prog="s2qn", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    t = sub.add_parser("train", help="run one configuration")
    t.add_argument("--config", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--out")
    t.add_argument("--plot", help="write an SVG of the error curve (relative paths land in the run directory)")
    v = sub.add_parser("validate", help="run the oracle suites")
    v.add_argument("--filter", help="only suites whose name contains this text")
    c = sub.add_parser("compare", help="align two or more runs per epoch")
    c.add_argument("inputs", nargs="+", help="run directories or config files")
    c.add_argument("--config", action="append", default=[], help="extra config file (repeatable)")
    c.add_argument("--seed", type=int)
    c.add_argument("--out")
    c.add_argument("--plot")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        with _thread_limit():
            if args.command == "train":
                outdir = train(args.config, args.seed, args.out, args.plot)
                print(f"wrote {outdir}")
                return EXIT_OK
            if args.command == "validate":
                return validate(args.filter)
            return compare(args.inputs + args.config, args.out, args.plot, args.seed)
    except CLIError as exc:
        _fail(exc.code, exc)
        return exc.exit_code
    except INPUT_ERRORS as exc:
        _fail(exc.code, exc)
        return EXIT_INPUT
    except S2QNError as exc:
        _fail(exc.code, exc)
        return EXIT_RUN
    except OSError as exc:
        _fail("io-error", exc)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
