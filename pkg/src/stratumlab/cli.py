"""Command line front door: simulate, analyze, sensitivity and benchmark."""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Sequence

import numpy as np

from .csvio import ingest_csv, write_csv, write_potential_csv
from .errors import ConfigError, DataError, StratumLabError
from .report import (
    AnalysisConfig,
    _CAUGHT,
    canonical,
    emit,
    load_config,
    method_target,
    run,
    run_method,
    to_json,
)
from .sim import oracle_effect, oracle_proportions, simulate_trial

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3


def thread_cap() -> int:
    """Worker count from ``STRATUMLAB_THREADS`` (default: CPU count)."""
    raw = os.environ.get("STRATUMLAB_THREADS")
    if raw is None or raw.strip() == "":
        return os.cpu_count() or 1
    try:
        k = int(raw)
    except ValueError as exc:
        raise ConfigError(f"STRATUMLAB_THREADS must be a positive integer, got {raw!r}") from exc
    if k < 1:
        raise ConfigError(f"STRATUMLAB_THREADS must be a positive integer, got {raw!r}")
    return k


def replicate_seeds(seed: int, replicates: int) -> list[int]:
    """Independent 63-bit seeds derived from the config seed."""
    children = np.random.SeedSequence(seed).spawn(replicates)
    return [int(c.generate_state(1, np.uint64)[0] >> np.uint64(1)) for c in children]


def _stem(args, cfg: AnalysisConfig) -> Path:
    return Path(args.out) if args.out else Path(cfg.stem)


def _read_data(path):
    try:
        return ingest_csv(path)
    except OSError as exc:
        raise OSError(f"cannot read data {path}: {exc}") from exc


def cmd_simulate(args) -> int:
    cfg = load_config(args.config, seed=args.seed)
    if cfg.simulation is None:
        raise ConfigError("simulate needs a 'simulation' block in the config")
    data, pop = simulate_trial(cfg.simulation, cfg.spec.landmark)
    stem = _stem(args, cfg)
    stem.parent.mkdir(parents=True, exist_ok=True)
    write_csv(data, stem.with_name(stem.name + ".csv"))
    write_potential_csv(pop.to_records(), stem.with_name(stem.name + ".oracle.csv"))
    oracle = {"estimand": _safe_oracle(pop, cfg.spec)}
    for m in cfg.methods:
        oracle[m] = _safe_oracle(pop, method_target(cfg, m))
    sidecar = {
        "schema": 1,
        "seed": cfg.seed,
        "estimand": cfg.spec.to_dict(),
        "oracle": oracle,
        "proportions": {c.code: v for c, v in oracle_proportions(pop).items()},
        "simulation": cfg.simulation.to_dict(),
    }
    stem.with_name(stem.name + ".oracle.json").write_text(to_json(sidecar))
    print(f"wrote {stem}.csv, {stem}.oracle.csv and {stem}.oracle.json ({data.n} subjects)")
    return EXIT_OK


def _safe_oracle(pop, spec):
    try:
        return oracle_effect(pop, spec)
    except _CAUGHT as exc:
        return {"error": str(exc)}


def _analyze(args, sensitivity_only: bool) -> int:
    cfg = load_config(args.config, seed=args.seed)
    data = _read_data(args.data) if args.data else None
    if data is not None and not data:
        raise DataError(f"{args.data}: no data rows to analyze")
    if sensitivity_only and not cfg.has_sensitivity:
        raise ConfigError("sensitivity needs at least one of beta_grid, defier_grid or covariate_sets")
    report = run(cfg, data, sensitivity_only=sensitivity_only)
    for p in emit(report, _stem(args, cfg), cfg.formats):
        print(f"wrote {p}")
    print(report["summary"]["line"])
    return EXIT_OK


def cmd_analyze(args) -> int:
    return _analyze(args, sensitivity_only=False)


def cmd_sensitivity(args) -> int:
    return _analyze(args, sensitivity_only=True)


def _replicate(cfg: AnalysisConfig, seed: int) -> dict:
    rcfg = cfg.with_(seed=seed, simulation=cfg.simulation.with_(seed=seed))
    data, pop = simulate_trial(rcfg.simulation, rcfg.spec.landmark)
    out = {}
    for m in rcfg.methods:
        try:
            truth = oracle_effect(pop, method_target(rcfg, m))
        except _CAUGHT as exc:
            out[m] = {"error": f"oracle: {exc}"}
            continue
        try:
            res = run_method(rcfg, m, data)
        except _CAUGHT as exc:
            out[m] = {"error": str(exc), "oracle": truth}
            continue
        d = res.to_dict()
        d["oracle"] = truth
        out[m] = d
    return out


def benchmark(cfg: AnalysisConfig, replicates: int, workers: int | None = None) -> dict:
    """Repeat simulate + analyze over derived seeds; bias and coverage per method."""
    if cfg.simulation is None:
        raise ConfigError("benchmark needs a 'simulation' block in the config")
    if replicates < 2:
        raise ConfigError("benchmark needs --replicates >= 2")
    seeds = replicate_seeds(cfg.seed, replicates)
    workers = thread_cap() if workers is None else workers
    if workers == 1:
        results = [_replicate(cfg, s) for s in seeds]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda s: _replicate(cfg, s), seeds))
    table = {m: summarize_method(m, [r[m] for r in results]) for m in cfg.methods}
    return canonical({
        "schema": 1,
        "seed": cfg.seed,
        "replicates": replicates,
        "config": cfg.to_dict(),
        "methods": table,
    })


def summarize_method(method: str, rows: Sequence[dict]) -> dict:
    ok = [r for r in rows if "error" not in r]
    out = {"target": None, "ok": len(ok), "failed": len(rows) - len(ok)}
    if not ok:
        return out
    truth = np.array([r["oracle"] for r in ok], dtype=float)
    out["oracle_mean"] = float(truth.mean())
    if "lower" in ok[0]:
        lo = np.array([r["lower"] for r in ok], dtype=float)
        hi = np.array([r["upper"] for r in ok], dtype=float)
        out["mean_lower"], out["mean_upper"] = float(lo.mean()), float(hi.mean())
        out["identified_contains"] = float(np.mean((lo <= truth) & (truth <= hi)))
        clo = np.array([_f(r["ci_lower_outer"]) for r in ok])
        chi = np.array([_f(r["ci_upper_outer"]) for r in ok])
        have = ~(np.isnan(clo) | np.isnan(chi))
        if have.any():
            out["coverage"] = float(np.mean((clo[have] <= truth[have]) & (truth[have] <= chi[have])))
        return out
    est = np.array([r["estimate"] for r in ok], dtype=float)
    err = est - truth
    out["mean_estimate"] = float(est.mean())
    out["bias"] = float(err.mean())
    out["bias_mc_se"] = float(err.std(ddof=1) / math.sqrt(err.size)) if err.size > 1 else math.nan
    out["rmse"] = float(np.sqrt(np.mean(err ** 2)))
    clo = np.array([_f(r["ci_lower"]) for r in ok])
    chi = np.array([_f(r["ci_upper"]) for r in ok])
    have = ~(np.isnan(clo) | np.isnan(chi))
    if have.any():
        out["coverage"] = float(np.mean((clo[have] <= truth[have]) & (truth[have] <= chi[have])))
        out["mean_ci_width"] = float(np.mean(chi[have] - clo[have]))
    return out


def _f(v) -> float:
    return math.nan if v is None else float(v)


def benchmark_text(bench: dict) -> str:
    from .report import _num, _table

    rows = []
    for m, r in bench["methods"].items():
        if "lower" in r or "identified_contains" in r:
            rows.append([m, str(r["ok"]), str(r["failed"]), _num(r.get("oracle_mean")),
                         f"[{_num(r.get('mean_lower'))}, {_num(r.get('mean_upper'))}]", "-", "-",
                         _num(r.get("coverage"), 3)])
        else:
            rows.append([m, str(r["ok"]), str(r["failed"]), _num(r.get("oracle_mean")),
                         _num(r.get("mean_estimate")), _num(r.get("bias")), _num(r.get("bias_mc_se")),
                         _num(r.get("coverage"), 3)])
    lines = [f"benchmark: {bench['replicates']} replicates, seed {bench['seed']}", ""]
    lines += _table(["method", "ok", "failed", "oracle", "estimate", "bias", "mc_se", "coverage"], rows)
    return "\n".join(lines) + "\n"


def cmd_benchmark(args) -> int:
    cfg = load_config(args.config, seed=args.seed)
    bench = benchmark(cfg, args.replicates)
    stem = _stem(args, cfg)
    stem.parent.mkdir(parents=True, exist_ok=True)
    paths = []
    if "json" in cfg.formats:
        p = stem.with_name(stem.name + ".benchmark.json")
        p.write_text(json.dumps(bench, sort_keys=True, indent=2, allow_nan=False) + "\n")
        paths.append(p)
    text = benchmark_text(bench)
    if "txt" in cfg.formats:
        p = stem.with_name(stem.name + ".benchmark.txt")
        p.write_text(text)
        paths.append(p)
    for p in paths:
        print(f"wrote {p}")
    sys.stdout.write(text)
    return EXIT_OK


def _seed(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stratumlab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data: bool):
        p.add_argument("--config", required=True, help="JSON analysis config (schema 1)")
        if data:
            p.add_argument("--data", help="observed-data CSV; omit to simulate from the config")
        p.add_argument("--out", help="output file stem (default: config output.stem)")
        p.add_argument("--seed", type=_seed, help="override the config seed")
        return p

    p = common(sub.add_parser("simulate", help="simulate a trial; write CSV plus oracle sidecar"), data=False)
    p.set_defaults(func=cmd_simulate)
    p = common(sub.add_parser("analyze", help="run the configured methods and write a report"), data=True)
    p.set_defaults(func=cmd_analyze)
    p = common(sub.add_parser("sensitivity", help="report restricted to the sensitivity scans"), data=True)
    p.set_defaults(func=cmd_sensitivity)
    p = common(sub.add_parser("benchmark", help="repeat simulate + analyze; bias/coverage table"), data=False)
    p.add_argument("--replicates", type=_positive, default=100, help="number of replicates (default 100)")
    p.set_defaults(func=cmd_benchmark)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DataError) as exc:
        print(f"stratumlab: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"stratumlab: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except StratumLabError as exc:
        print(f"stratumlab: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
