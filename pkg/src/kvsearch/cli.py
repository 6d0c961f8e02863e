"""Experiment runner: single runs, method comparisons, lambda sweeps, and
report emission.

Deterministic outputs (results.jsonl, *.csv) never contain wall-clock
values; timings, the overhead fraction, and timestamps go to a sidecar
timings.json next to them.  Exit codes: 0 success, 1 a problem aborted at
runtime, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys
import time

from .backend import HttpBackend, SimBackend
from .config import AppConfig, ConfigError, config_to_dict, load_config
from .engine import Problem, SimSearchProblem, SuiteReport, run_suite
from .metrics import overhead_fraction
from .simenv import SimProblem

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2


def _fmt(value) -> str:
    if isinstance(value, float):
        return format(value, ".10g")
    if value is None:
        return ""
    return str(value)


def _write_csv(path: str, header, rows) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        h.update(fh.read())
    return h.hexdigest()


def _build_backend(cfg: AppConfig):
    if cfg.search.backend == "sim":
        return SimBackend(cfg.sim, embed_seed=cfg.search.seed)
    return HttpBackend(
        base_url=cfg.backend.base_url or None,
        generate_timeout=cfg.backend.generate_timeout,
        score_timeout=cfg.backend.score_timeout,
        embed_timeout=cfg.backend.embed_timeout,
    )


def _build_problems(cfg: AppConfig):
    if cfg.search.backend == "sim":
        return [
            SimSearchProblem(SimProblem(cfg.search.seed, i, cfg.sim))
            for i in range(cfg.run.num_problems)
        ]
    if not cfg.run.problems_file:
        raise ConfigError("http backend needs run.problems_file (JSONL)")
    problems = []
    with open(cfg.run.problems_file) as fh:
        for i, line in enumerate(fh):
            if not line.strip():
                continue
            rec = json.loads(line)
            problems.append(
                Problem(
                    key=str(rec.get("id", i)),
                    prompt=rec["prompt"],
                    prompt_tokens=int(rec.get("prompt_tokens", 0)),
                    ground_truth=rec.get("answer"),
                )
            )
    return problems[: cfg.run.num_problems] if cfg.run.num_problems else problems


def _execute(cfg: AppConfig, outdir: str, label: str) -> tuple[SuiteReport, str]:
    os.makedirs(outdir, exist_ok=True)
    backend = _build_backend(cfg)
    problems = _build_problems(cfg)
    cfg.search.collect_trace = cfg.run.trace
    t0 = time.time()
    report = run_suite(problems, cfg.search, backend, parallelism=cfg.run.parallelism)
    wall = time.time() - t0

    results_path = os.path.join(outdir, "results.jsonl")
    with open(results_path, "w") as fh:
        for r in report.results:
            rec = r.to_record(kv_bytes_per_token=cfg.search.kv_bytes_per_token)
            fh.write(json.dumps(rec, sort_keys=True, separators=(",", ":")) + "\n")
    digest = _sha256(results_path)

    _write_csv(
        os.path.join(outdir, "report.csv"),
        [
            "label",
            "method",
            "width",
            "problems",
            "accuracy",
            "mean_cumulative_kv_tokens",
            "mean_generated_tokens",
            "model_calls",
            "reward_calls",
            "embed_calls",
            "solves_nonoptimal",
            "errors",
            "kv_bytes_per_token",
        ],
        [
            [
                label,
                cfg.policy.method,
                cfg.policy.width,
                len(report.results),
                report.accuracy,
                report.mean_cumulative_kv,
                report.mean_generated_tokens,
                report.total_model_calls,
                report.total_reward_calls,
                report.total_embed_calls,
                report.solves_nonoptimal,
                report.errors,
                cfg.search.kv_bytes_per_token,
            ]
        ],
    )

    total = _fold_timings(report)
    timings = {
        "started_unix": t0,
        "wall_seconds": wall,
        "solver_time": total["solver_time"],
        "cluster_time": total["cluster_time"],
        "embed_time": total["embed_time"],
        "generation_time": total["generation_time"],
        "overhead_fraction": report.overhead_fraction,
        "results_sha256": digest,
        "config": config_to_dict(cfg),
    }
    with open(os.path.join(outdir, "timings.json"), "w") as fh:
        json.dump(timings, fh, indent=2, sort_keys=True)
    return report, digest


def _fold_timings(report: SuiteReport) -> dict:
    out = {"solver_time": 0.0, "cluster_time": 0.0, "embed_time": 0.0, "generation_time": 0.0}
    for r in report.results:
        out["solver_time"] += r.metrics.solver_time
        out["cluster_time"] += r.metrics.cluster_time
        out["embed_time"] += r.metrics.embed_time
        out["generation_time"] += r.metrics.generation_time
    return out


def cmd_run(cfg: AppConfig, args) -> int:
    report, digest = _execute(cfg, cfg.run.output_dir, "run")
    acc = "n/a" if report.accuracy is None else f"{report.accuracy:.4f}"
    print(
        f"run: {len(report.results)} problems  accuracy={acc}  "
        f"mean_kv={report.mean_cumulative_kv:.1f}  overhead={report.overhead_fraction:.4f}"
    )
    print(f"results sha256: {digest}")
    return EXIT_RUNTIME if report.errors else EXIT_OK


def cmd_compare(cfg: AppConfig, args) -> int:
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    widths = [int(w) for w in args.widths.split(",")]
    if len(methods) < 2:
        raise ConfigError("compare needs at least two methods")
    rows = []
    baselines: dict[int, float] = {}
    failures = 0
    for width in widths:
        for method in methods:
            sub = dataclasses.replace(cfg.policy, method=method, width=width)
            subcfg = dataclasses.replace(cfg, policy=sub)
            subcfg.search = dataclasses.replace(cfg.search, policy=sub)
            outdir = os.path.join(cfg.run.output_dir, f"{method}_w{width}")
            report, _ = _execute(subcfg, outdir, f"{method}_w{width}")
            failures += report.errors
            if method == methods[0]:
                baselines[width] = report.mean_cumulative_kv
            red = (
                baselines[width] / report.mean_cumulative_kv
                if report.mean_cumulative_kv
                else None
            )
            rows.append(
                [
                    method,
                    width,
                    report.accuracy,
                    report.mean_cumulative_kv,
                    red,
                    report.mean_generated_tokens,
                    report.total_model_calls,
                ]
            )
    path = os.path.join(cfg.run.output_dir, "compare.csv")
    _write_csv(
        path,
        [
            "method",
            "width",
            "accuracy",
            "mean_cumulative_kv_tokens",
            f"kv_reduction_vs_{methods[0]}",
            "mean_generated_tokens",
            "model_calls",
        ],
        rows,
    )
    print(f"compare: wrote {path} ({len(rows)} rows)")
    return EXIT_RUNTIME if failures else EXIT_OK


def cmd_sweep(cfg: AppConfig, args) -> int:
    grid = [float(x) for x in args.lambda_b_grid.split(",") if x.strip()]
    if not grid:
        raise ConfigError("sweep needs a nonempty lambda_b grid")
    os.makedirs(cfg.run.output_dir, exist_ok=True)
    baseline_method = args.baseline
    base_pol = dataclasses.replace(cfg.policy, method=baseline_method)
    base_cfg = dataclasses.replace(cfg, policy=base_pol)
    base_cfg.search = dataclasses.replace(cfg.search, policy=base_pol)
    base_report, _ = _execute(
        base_cfg, os.path.join(cfg.run.output_dir, f"baseline_{baseline_method}"), "baseline"
    )
    if base_report.accuracy is None:
        raise ConfigError("sweep baseline produced no graded accuracy")
    failures = base_report.errors

    rows = []
    selected = None
    for lb in grid:
        pol = dataclasses.replace(cfg.policy, method="ets", lambda_b=lb)
        subcfg = dataclasses.replace(cfg, policy=pol)
        subcfg.search = dataclasses.replace(cfg.search, policy=pol)
        outdir = os.path.join(cfg.run.output_dir, f"lb_{lb:g}")
        report, _ = _execute(subcfg, outdir, f"lb_{lb:g}")
        failures += report.errors
        delta = report.accuracy - base_report.accuracy
        red = (
            base_report.mean_cumulative_kv / report.mean_cumulative_kv
            if report.mean_cumulative_kv
            else None
        )
        ok = delta >= -(args.tolerance + 1e-12)
        rows.append([lb, report.accuracy, delta, red, ok])
        if ok and (selected is None or lb > selected):
            selected = lb

    path = os.path.join(cfg.run.output_dir, "sweep.csv")
    _write_csv(
        path,
        [
            "lambda_b",
            "accuracy",
            "accuracy_delta",
            f"kv_reduction_vs_{baseline_method}",
            "within_tolerance",
            "selected",
        ],
        [row + [selected is not None and row[0] == selected] for row in rows],
    )
    if selected is None:
        print(
            f"sweep: no lambda_b in the grid stays within {args.tolerance} "
            f"accuracy points of {baseline_method}; selection: none"
        )
    else:
        print(f"sweep: selected lambda_b={selected:g}")
    print(f"sweep: wrote {path}")
    return EXIT_RUNTIME if failures else EXIT_OK


def cmd_report(cfg: AppConfig, args) -> int:
    rows = []
    for indir in args.inputs:
        results_path = os.path.join(indir, "results.jsonl")
        if not os.path.exists(results_path):
            raise ConfigError(f"no results.jsonl under {indir}")
        n = correct = graded = 0
        kv = tokens = calls = 0
        with open(results_path) as fh:
            for line in fh:
                if not line.strip():
                    continue
                rec = json.loads(line)
                n += 1
                if rec["correct"] is not None:
                    graded += 1
                    correct += bool(rec["correct"])
                kv += rec["metrics"]["cumulative_kv_tokens"]
                tokens += rec["metrics"]["generated_tokens"]
                calls += rec["metrics"]["model_calls"]
        rows.append(
            [
                indir,
                n,
                (correct / graded) if graded else None,
                (kv / n) if n else 0.0,
                (tokens / n) if n else 0.0,
                calls,
            ]
        )
    path = args.out or os.path.join(cfg.run.output_dir, "merged_report.csv")
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    _write_csv(
        path,
        ["input", "problems", "accuracy", "mean_cumulative_kv_tokens", "mean_generated_tokens", "model_calls"],
        rows,
    )
    print(f"report: wrote {path} ({len(rows)} rows)")
    return EXIT_OK


_SHORTHAND = {
    "method": "policy.method",
    "width": "policy.width",
    "keep_k": "policy.keep_k",
    "lambda_b": "policy.lambda_b",
    "lambda_d": "policy.lambda_d",
    "cluster_threshold": "policy.cluster_threshold",
    "seed": "search.seed",
    "backend": "search.backend",
    "max_depth": "search.max_depth",
    "num_problems": "run.num_problems",
    "parallelism": "run.parallelism",
    "out": "run.output_dir",
}


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--method", choices=["beam", "dvts", "rebase", "ets"])
    parser.add_argument("--width", type=int)
    parser.add_argument("--keep-k", dest="keep_k")
    parser.add_argument("--lambda-b", dest="lambda_b", type=float)
    parser.add_argument("--lambda-d", dest="lambda_d", type=float)
    parser.add_argument("--cluster-threshold", dest="cluster_threshold", type=float)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--backend", choices=["sim", "http"])
    parser.add_argument("--max-depth", dest="max_depth", type=int)
    parser.add_argument("--num-problems", dest="num_problems", type=int)
    parser.add_argument("--parallelism", type=int)
    parser.add_argument("--out", dest="out")
    parser.add_argument("--trace", action="store_true")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="SECTION.KEY=VALUE",
        help="override any config field",
    )


def _collect_config(args) -> AppConfig:
    overrides = []
    for name, dotted in _SHORTHAND.items():
        value = getattr(args, name, None)
        if value is not None:
            overrides.append((dotted, value))
    if getattr(args, "trace", False):
        overrides.append(("run.trace", True))
    for item in args.overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        overrides.append((key, value))
    return load_config(args.config, overrides)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kvsearch",
        description="Verifier-guided tree search with KV-aware pruning",
    )
    sub = parser.add_subparsers(dest="cmd", required=True)

    p_run = sub.add_parser("run", help="run one configuration over a problem suite")
    _add_common(p_run)
    p_run.set_defaults(func=cmd_run)

    p_cmp = sub.add_parser("compare", help="run several methods and emit a tradeoff table")
    _add_common(p_cmp)
    p_cmp.add_argument("--methods", required=True, help="comma-separated method list")
    p_cmp.add_argument("--widths", default="16", help="comma-separated widths")
    p_cmp.set_defaults(func=cmd_compare)

    p_sweep = sub.add_parser("sweep", help="sweep lambda_b against a baseline method")
    _add_common(p_sweep)
    p_sweep.add_argument("--lambda-b-grid", dest="lambda_b_grid", required=True)
    p_sweep.add_argument("--baseline", default="rebase")
    p_sweep.add_argument(
        "--tolerance",
        type=float,
        default=0.002,
        help="largest allowed accuracy drop (fraction; 0.002 = 0.2 points)",
    )
    p_sweep.set_defaults(func=cmd_sweep)

    p_rep = sub.add_parser("report", help="aggregate existing run outputs into one CSV")
    _add_common(p_rep)
    p_rep.add_argument("--inputs", nargs="+", required=True)
    p_rep.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _collect_config(args)
        return args.func(cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # runtime failures map to exit 1
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
