"""Command-line entry point: run experiments, aggregate reports, selftest.

Exit codes: 0 success, 1 configuration error, 2 runtime error, 3 selftest
failure. The default output directory comes from --out, then the config
file, then the TRGP_OUT_DIR environment variable, then ./runs.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import benchmarks, config
from .errors import ConfigInvalid, NoRunsFound, SchemaMismatch, TrgpError
from .selftest import run_selftest
from .trainers import METHODS

ENV_OUT_DIR = "TRGP_OUT_DIR"


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trgp",
        description="Continual-learning benchmark runner (trust-region gradient "
                    "projection, projection-only baseline, plain SGD, multitask).")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="train the configured methods over one stream")
    run.add_argument("--config", help="INI config file")
    run.add_argument("--method", help="comma-separated methods (trgp,gpm,sgd,multitask)")
    run.add_argument("--seed", help="comma-separated integer seeds")
    run.add_argument("--tasks", type=int, help="number of tasks in the stream")
    run.add_argument("--epochs", type=int)
    run.add_argument("--batch", type=int)
    run.add_argument("--lr", type=float)
    run.add_argument("--epsilon-l", dest="epsilon_l", type=float,
                     help="trust-region ratio threshold in [0,1]")
    run.add_argument("--top-k", dest="top_k", type=int,
                     help="max old tasks per layer (0 disables the trust region)")
    run.add_argument("--eps-th", dest="eps_th", type=float,
                     help="subspace energy threshold in (0,1)")
    run.add_argument("--head", choices=["single", "per-task"])
    run.add_argument("--trust", choices=["layerwise", "taskwise"])
    run.add_argument("--hidden", help="comma-separated hidden widths")
    run.add_argument("--out", help="output directory for run artifacts")
    run.add_argument("--parallel-seeds", type=int, default=1,
                     help="run up to N seeds concurrently")

    report = sub.add_parser("report", help="aggregate results.json files")
    report.add_argument("runs_dir", help="directory to scan recursively")
    report.add_argument("--out", help="write the markdown report here")
    report.add_argument("--plot", help="write a per-task final-accuracy plot (png)")

    selftest = sub.add_parser("selftest", help="run the fast invariant suite")
    selftest.add_argument("--inject-fault", dest="inject", default="none",
                          choices=["none", "nonorthonormal-basis"],
                          help="test hook: corrupt internal state on purpose")
    return parser


# -- run ------------------------------------------------------------------------

def _parse_int_list(raw: str | None, default):
    if raw is None:
        return default
    try:
        return [int(v) for v in str(raw).split(",") if v.strip() != ""]
    except ValueError as exc:
        raise ConfigInvalid(f"cannot parse integer list {raw!r}") from exc


def _single_run(rc, stream, method: str, seed: int, base_out: Path):
    run_rc = replace(rc, trainer=replace(rc.trainer, method=method, seed=seed),
                     out_dir=str(base_out / f"{method}_seed{seed}"),
                     methods=[method])
    matrix, report, out_dir = benchmarks.run_experiment(run_rc, stream)
    return method, seed, report, out_dir


def cmd_run(args) -> int:
    file_map = config.load_config_file(args.config) if args.config else {}
    overrides = {k: getattr(args, k) for k in
                 ("tasks", "epochs", "batch", "lr", "epsilon_l", "top_k",
                  "eps_th", "head", "trust", "hidden")}
    rc = config.build_run_config(file_map, overrides)

    methods = ([m.strip() for m in args.method.split(",")] if args.method
               else rc.methods)
    for m in methods:
        if m not in METHODS:
            raise ConfigInvalid(f"unknown method {m!r}, expected one of {METHODS}")
    seeds = _parse_int_list(args.seed, [rc.trainer.seed])

    if args.out:
        base_out = Path(args.out)
    elif "out_dir" in file_map.get("run", {}):
        base_out = Path(rc.out_dir)
    else:
        base_out = Path(os.environ.get(ENV_OUT_DIR, rc.out_dir))

    rows = []

    def run_seed(seed: int):
        stream = config.build_stream(rc.stream, seed)
        return [_single_run(rc, stream, method, seed, base_out)
                for method in methods]

    if args.parallel_seeds > 1 and len(seeds) > 1:
        with ThreadPoolExecutor(max_workers=args.parallel_seeds) as pool:
            for chunk in pool.map(run_seed, seeds):
                rows.extend(chunk)
    else:
        for seed in seeds:
            rows.extend(run_seed(seed))

    print(f"{'method':<10}{'seed':>6}{'ACC %':>10}{'BWT pp':>10}  artifacts")
    for method, seed, report, out_dir in rows:
        bwt = "-" if report.bwt is None else f"{100 * report.bwt:+.2f}"
        print(f"{method:<10}{seed:>6}{100 * report.acc:>10.2f}{bwt:>10}  {out_dir}")
    if len(methods) > 1:
        means = {m: np.mean([100 * r.acc for mm, _, r, _ in rows if mm == m])
                 for m in methods}
        ref = methods[0]
        for m in methods[1:]:
            print(f"delta ACC {m} - {ref}: {means[m] - means[ref]:+.2f} pp")
    return 0


# -- report -----------------------------------------------------------------------

_REQUIRED_RESULT_KEYS = {"method", "seed", "acc", "bwt", "acc_matrix",
                         "per_task_final", "config"}


def _load_results(runs_dir: Path) -> list[dict]:
    files = sorted(runs_dir.rglob("results.json"))
    if not files:
        raise NoRunsFound(f"no results.json under {runs_dir}")
    out = []
    for f in files:
        try:
            data = json.loads(f.read_text())
        except json.JSONDecodeError as exc:
            raise SchemaMismatch(f"{f}: invalid JSON ({exc})") from exc
        missing = _REQUIRED_RESULT_KEYS - set(data)
        if missing:
            raise SchemaMismatch(f"{f}: missing keys {sorted(missing)}")
        out.append(data)
    return out


def _mean_std(values):
    arr = np.asarray(values, dtype=float)
    if arr.size == 1:
        return f"{arr[0]:.2f}"
    return f"{arr.mean():.2f} ± {arr.std():.2f}"


def render_report(results: list[dict]) -> str:
    by_method: dict[str, list[dict]] = {}
    for r in results:
        by_method.setdefault(r["method"], []).append(r)
    lines = ["| Method | Seeds | ACC (%) | BWT (pp) |",
             "|--------|-------|---------|----------|"]
    for method in sorted(by_method):
        runs = by_method[method]
        accs = [100 * r["acc"] for r in runs]
        bwts = [100 * r["bwt"] for r in runs if r["bwt"] is not None]
        bwt_cell = _mean_std(bwts) if bwts else "-"
        lines.append(f"| {method} | {len(runs)} | {_mean_std(accs)} | {bwt_cell} |")
    lines.append("")
    for method in sorted(by_method):
        runs = by_method[method]
        finals = np.mean([r["per_task_final"] for r in runs], axis=0)
        per_task = ", ".join(f"{100 * v:.2f}" for v in finals)
        lines.append(f"per-task final ({method}): {per_task}")
    return "\n".join(lines) + "\n"


def _plot_report(results: list[dict], path: str) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    by_method: dict[str, list[dict]] = {}
    for r in results:
        by_method.setdefault(r["method"], []).append(r)
    fig, ax = plt.subplots(figsize=(7, 3.5))
    methods = sorted(by_method)
    width = 0.8 / len(methods)
    for i, method in enumerate(methods):
        finals = 100 * np.mean([r["per_task_final"] for r in by_method[method]], axis=0)
        xs = np.arange(len(finals)) + i * width
        ax.bar(xs, finals, width=width, label=method)
    ax.set_xlabel("task")
    ax.set_ylabel("final accuracy (%)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def cmd_report(args) -> int:
    results = _load_results(Path(args.runs_dir))
    text = render_report(results)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    if args.plot:
        _plot_report(results, args.plot)
    return 0


# -- selftest ----------------------------------------------------------------------

def cmd_selftest(args) -> int:
    results = run_selftest(inject=args.inject)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name}: {r.detail}")
    return 0 if all(r.passed for r in results) else 3


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return cmd_run(args)
        if args.command == "report":
            return cmd_report(args)
        return cmd_selftest(args)
    except ConfigInvalid as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (TrgpError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
