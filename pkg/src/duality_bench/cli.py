"""Command-line entry point.

    duality-bench {run-gibbs | run-cavi | diagnose | verify-duality}
        --config <path> [--out <dir>] [--seed <u64>] [--parallel-chains N]

Exit codes: 0 success; 1 a diagnostic/verification check failed (the failure
list is machine-readable in the JSON report); 2 config error; 3 runtime model
error. Every output file is a pure function of the config file bytes (and the
artifact version): fixed seeds, 17-significant-digit floats, stable key
order, LF endings.

The default output directory is, in order: --out, output.directory from the
config, the DUALITY_BENCH_OUT environment variable, ./out.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from duality_bench import __version__
from duality_bench.cavi import run_cavi, state_from_jsonable, state_to_jsonable
from duality_bench.config import RunConfig, load_config
from duality_bench.diagnostics import ATTAINMENT_TOL, GAP_TOL, build_report, duality_suite
from duality_bench.errors import ConfigError, DualityBenchError, ModelError
from duality_bench.gibbs import ChainTrace, estimate, pooled_trace, run_chains
from duality_bench.serialize import write_csv, write_json

__all__ = ["main"]


def _out_dir(args, cfg: RunConfig) -> Path:
    directory = args.out or cfg.output_directory or os.environ.get(
        "DUALITY_BENCH_OUT") or "out"
    path = Path(directory)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _model_echo(cfg: RunConfig) -> dict:
    return dict(cfg.model_section)


def _trace_header(model) -> list[str]:
    dec = model.decomposition
    header = ["cycle"]
    for i, d in enumerate(dec.block_dims):
        header.extend(f"block{i + 1}_dim{k + 1}" for k in range(d))
    return header


def _write_trace(path: Path, model, trace: ChainTrace) -> None:
    first_cycle = trace.burn_in + 1
    rows = [[first_cycle + r, *trace.samples[r]] for r in range(len(trace))]
    write_csv(path, _trace_header(model), rows)


def _estimates_payload(cfg: RunConfig, model, traces: list[ChainTrace]) -> dict:
    pooled = pooled_trace(traces)
    dim = model.decomposition.total_dim
    estimands = []

    def add(name, fn):
        est = estimate(pooled, fn)
        estimands.append({
            "name": name,
            "mean": est.mean,
            "standard_error": est.standard_error,
            "n_samples": est.n_samples,
        })

    for d in range(dim):
        add(f"mean_dim{d + 1}", lambda s, d=d: s[:, d])
    for d in range(dim):
        add(f"second_moment_dim{d + 1}", lambda s, d=d: s[:, d] ** 2)
    for a in range(dim):
        for b in range(a + 1, dim):
            add(f"cross_moment_dim{a + 1}_dim{b + 1}", lambda s, a=a, b=b: s[:, a] * s[:, b])
    stds = pooled.samples.std(axis=0)
    correlations = []
    for a in range(dim):
        for b in range(a + 1, dim):
            # undefined for constant coordinates (degenerate targets)
            if stds[a] > 0 and stds[b] > 0:
                value = float(np.corrcoef(pooled.samples[:, a],
                                          pooled.samples[:, b])[0, 1])
            else:
                value = None
            correlations.append({
                "name": f"sample_correlation_dim{a + 1}_dim{b + 1}",
                "value": value,
            })
    return {
        "artifact_version": __version__,
        "model": _model_echo(cfg),
        "n_chains": len(traces),
        "seeds": [t.seed for t in traces],
        "burn_in": traces[0].burn_in,
        "n_cycles": traces[0].n_cycles,
        "init_strategy": traces[0].init_strategy,
        "n_samples": len(pooled),
        "estimands": estimands,
        "sample_correlations": correlations,
    }


def cmd_run_gibbs(args) -> int:
    cfg = load_config(args.config)
    model = cfg.build_model()
    gibbs_cfg = cfg.gibbs_config(seed_override=args.seed)
    traces = run_chains(model, gibbs_cfg, args.parallel_chains)
    out = _out_dir(args, cfg)
    if len(traces) == 1:
        _write_trace(out / "trace.csv", model, traces[0])
    else:
        for k, trace in enumerate(traces):
            _write_trace(out / f"trace_chain{k + 1}.csv", model, trace)
    write_json(out / "estimates.json", _estimates_payload(cfg, model, traces))
    return 0


def cmd_run_cavi(args) -> int:
    cfg = load_config(args.config)
    model = cfg.build_model()
    state = run_cavi(model, cfg.cavi_config())
    out = _out_dir(args, cfg)
    payload = {
        "artifact_version": __version__,
        "model": _model_echo(cfg),
        **state_to_jsonable(state),
    }
    write_json(out / "state.json", payload)
    return 0


def _load_state_file(path: str):
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigError(f"diagnostics.state_file: file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"diagnostics.state_file: invalid JSON: {exc}") from exc
    try:
        return state_from_jsonable(data)
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"diagnostics.state_file: malformed state: {exc}") from exc


def cmd_diagnose(args) -> int:
    cfg = load_config(args.config)
    model = cfg.build_model()
    gibbs_cfg = cfg.gibbs_config(seed_override=args.seed)
    traces = run_chains(model, gibbs_cfg, args.parallel_chains)
    trace = pooled_trace(traces)
    if cfg.diagnostics.state_file is not None:
        state = _load_state_file(cfg.diagnostics.state_file)
    else:
        state = run_cavi(model, cfg.cavi_config())
    report = build_report(model, trace, state, cfg.diagnostics.report_options())
    out = _out_dir(args, cfg)
    if "json" in cfg.output_formats:
        write_json(out / "report.json", {
            "artifact_version": __version__,
            **report.to_jsonable(),
        })
    if "csv" in cfg.output_formats:
        write_csv(out / "report.csv", list(report.CSV_FIELDS), report.to_csv_rows())
    if not report.passed:
        print("diagnostics failed: " + ", ".join(report.failures), file=sys.stderr)
        return 1
    return 0


def cmd_verify_duality(args) -> int:
    cfg = load_config(args.config)
    family = cfg.model_section.get("family")
    if family not in ("gaussian", "discrete"):
        raise ConfigError(f"model.family: unknown family {family!r}")
    rows = duality_suite(family, cfg.diagnostics.duality_trials,
                         cfg.diagnostics.suite_seed)
    out = _out_dir(args, cfg)
    write_csv(out / "duality_gaps.csv",
              ["trial", "gap", "at_optimum_flag"],
              [[r.trial, r.gap, int(r.at_optimum)] for r in rows])
    bad = [r for r in rows
           if r.gap < -GAP_TOL or (r.at_optimum and r.gap > ATTAINMENT_TOL)]
    if bad:
        print(f"duality verification failed on {len(bad)} of {len(rows)} rows",
              file=sys.stderr)
        return 1
    return 0


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="duality-bench",
        description="Gibbs/CAVI benchmark with duality-formula diagnostics",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    specs = {
        "run-gibbs": (cmd_run_gibbs, True),
        "run-cavi": (cmd_run_cavi, False),
        "diagnose": (cmd_diagnose, True),
        "verify-duality": (cmd_verify_duality, False),
    }
    for name, (handler, chains) in specs.items():
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="path to the JSON run config")
        p.add_argument("--out", default=None, help="output directory")
        if chains:
            p.add_argument("--seed", type=int, default=None,
                           help="override gibbs.seed from the config")
            p.add_argument("--parallel-chains", type=int, default=1,
                           help="run N chains with seeds seed, seed+1, ...")
        p.set_defaults(handler=handler)
    return parser


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if getattr(args, "parallel_chains", 1) < 1:
        print("config error: --parallel-chains must be positive", file=sys.stderr)
        return 2
    try:
        return args.handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ModelError, DualityBenchError, ValueError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
