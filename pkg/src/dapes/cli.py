"""Command line interface: scenario runs, parameter sweeps, formula oracles.

    dapes-sim run scenario.cfg --seeds 1..10 --out results/
    dapes-sim sweep scenario.cfg --param range --values 50,75,100,125 --out results/
    dapes-sim oracle eta 5000 1

Exit code 0 on success, 2 on configuration or domain errors.
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from typing import List, Optional

from .advertisement import rpf_effectiveness
from .collection import metadata_subnames_bytes
from .config import ConfigError, ScenarioConfig, load_config_file, parse_seeds
from .errors import DomainError
from .metrics import MetricsReport, seed_result_from_world
from .scheduling import ExchangeMode, data_fetch_time, expected_transmit_delay
from .sim import run_world

DEFAULT_OUT = os.environ.get("DAPES_SIM_OUT", ".")

SWEEPABLE = ("range", "forward_prob", "bitmaps", "strategy", "exchange_mode", "peba")


def _run_one(args):
    config, seed, trace_path = args
    trace = open(trace_path, "w") if trace_path else None
    try:
        world = run_world(config, seed, trace=trace)
    finally:
        if trace:
            trace.close()
    return seed_result_from_world(world, config.run.max_sim_time)


def run_seeds(config: ScenarioConfig, seeds: List[int], out_dir: str,
              jobs: int = 1, trace: bool = False) -> MetricsReport:
    os.makedirs(out_dir, exist_ok=True)
    tasks = []
    for seed in seeds:
        trace_path = os.path.join(out_dir, "trace_seed%d.tsv" % seed) if trace else None
        tasks.append((config, seed, trace_path))
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_one, tasks))
    else:
        results = [_run_one(t) for t in tasks]
    report = MetricsReport(sorted(results, key=lambda r: r.seed))
    return report


def cmd_run(args) -> int:
    config = load_config_file(args.config)
    seeds = parse_seeds(args.seeds) if args.seeds else config.run.seeds
    trace = args.trace or config.run.trace
    report = run_seeds(config, seeds, args.out, jobs=args.jobs, trace=trace)
    path = os.path.join(args.out, "metrics.csv")
    with open(path, "w") as fh:
        fh.write(report.to_csv())
    print("wrote %s (%d seeds)" % (path, len(seeds)))
    return 0


def apply_sweep_value(config: ScenarioConfig, param: str, raw: str) -> ScenarioConfig:
    import copy
    cfg = copy.deepcopy(config)
    if param == "range":
        cfg.medium.range = float(raw)
    elif param == "forward_prob":
        cfg.peer.forward_prob = float(raw)
    elif param == "bitmaps":
        cfg.peer.bitmaps = None if raw == "all" else int(raw)
    elif param == "strategy":
        if raw not in ("local", "encounter"):
            raise ConfigError("bad strategy %r" % raw, "strategy")
        cfg.peer.strategy = raw
    elif param == "exchange_mode":
        table = {"bitmaps-first": ExchangeMode.BITMAPS_FIRST,
                 "interleaved": ExchangeMode.INTERLEAVED}
        if raw not in table:
            raise ConfigError("bad exchange_mode %r" % raw, "exchange_mode")
        cfg.peer.exchange_mode = table[raw]
    elif param == "peba":
        cfg.peer.peba = raw.lower() in ("1", "true", "yes", "on")
    else:
        raise ConfigError("parameter %r is not sweepable (one of %s)"
                          % (param, ", ".join(SWEEPABLE)), param)
    cfg.validate()
    return cfg


def cmd_sweep(args) -> int:
    config = load_config_file(args.config)
    values = [v for v in args.values.split(",") if v.strip()]
    if not values:
        raise ConfigError("empty sweep value list", args.param)
    seeds = parse_seeds(args.seeds) if args.seeds else config.run.seeds
    os.makedirs(args.out, exist_ok=True)
    combined = []
    for raw in values:
        cfg = apply_sweep_value(config, args.param, raw.strip())
        report = run_seeds(cfg, seeds, args.out, jobs=args.jobs)
        body = report.to_csv().splitlines()
        for line in body:
            if line.startswith("#"):
                continue
            combined.append((raw.strip(), line))
    path = os.path.join(args.out, "sweep_%s.csv" % args.param)
    with open(path, "w") as fh:
        fh.write("# schema_version=1 sweep\n")
        header_written = False
        for value, line in combined:
            if line.startswith("record,"):
                if not header_written:
                    fh.write("param,value,%s\n" % line)
                    header_written = True
                continue
            fh.write("%s,%s,%s\n" % (args.param, value, line))
    print("wrote %s (%d values x %d seeds)" % (path, len(values), len(seeds)))
    return 0


def cmd_oracle(args) -> int:
    sub = args.oracle
    vals = args.args
    if sub == "metadata-size":
        n, idx, dig, frame = (int(v) for v in vals)
        print(metadata_subnames_bytes(n, idx, dig, frame))
    elif sub == "eta":
        n, k = int(vals[0]), int(vals[1])
        print("%.6f" % rpf_effectiveness(n, k))
    elif sub == "tdelay":
        L, k, tau = int(vals[0]), int(vals[1]), float(vals[2])
        print("%.9f" % expected_transmit_delay(L, k, tau))
    elif sub == "tdata":
        dt, td, d, b = float(vals[0]), float(vals[1]), float(vals[2]), int(vals[3])
        mode = {"bitmaps-first": ExchangeMode.BITMAPS_FIRST,
                "interleaved": ExchangeMode.INTERLEAVED}[vals[4]]
        print("%.9f" % data_fetch_time(dt, td, d, b, mode))
    else:
        raise DomainError("unknown oracle %r" % sub)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dapes-sim")
    sub = p.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run a scenario over one or more seeds")
    run_p.add_argument("config")
    run_p.add_argument("--seeds", help="e.g. 1..10 or 1,5,9 (default: from config)")
    run_p.add_argument("--out", default=DEFAULT_OUT)
    run_p.add_argument("--jobs", type=int, default=1)
    run_p.add_argument("--trace", action="store_true", help="write per-seed event traces")
    run_p.set_defaults(fn=cmd_run)

    sweep_p = sub.add_parser("sweep", help="run one scenario per parameter value")
    sweep_p.add_argument("config")
    sweep_p.add_argument("--param", required=True, choices=SWEEPABLE)
    sweep_p.add_argument("--values", required=True, help="comma separated")
    sweep_p.add_argument("--seeds")
    sweep_p.add_argument("--out", default=DEFAULT_OUT)
    sweep_p.add_argument("--jobs", type=int, default=1)
    sweep_p.set_defaults(fn=cmd_sweep)

    oracle_p = sub.add_parser("oracle", help="evaluate the closed-form estimates")
    oracle_p.add_argument("oracle",
                          choices=["metadata-size", "eta", "tdelay", "tdata"])
    oracle_p.add_argument("args", nargs="+")
    oracle_p.set_defaults(fn=cmd_oracle)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, DomainError, FileNotFoundError, ValueError) as e:
        print("error: %s" % e, file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
