"""Command line entry point: ``fedjcpba {solve,simulate,sweep,oracle-check}``.

Each command emits line-delimited JSON records (to ``<out>/<command>.jsonl``
or stdout) and, with ``--out``, a CSV table for plotting. Every record
carries the schema version, the command, the seed and the config digest, so
a stream can be regenerated byte-for-byte from those fields.

Exit codes: 0 success, 1 oracle check outside tolerance, 2 usage error,
3 unreadable/unparsable config, 4 invalid config, 5 infeasible instance.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import sys
from pathlib import Path

from fedjcpba import config as config_mod
from fedjcpba import fedsim, jcpba
from fedjcpba.errors import Infeasible, ParseError, TooManyClients, ValidationError

SCHEMA_VERSION = 1

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_PARSE = 3
EXIT_VALIDATION = 4
EXIT_INFEASIBLE = 5

log = logging.getLogger("fedjcpba")


class Result:
    def __init__(self, records, table, exit_code=EXIT_OK):
        self.records = records
        self.table = table
        self.exit_code = exit_code


def _header(cfg, command):
    return {"schema_version": SCHEMA_VERSION, "command": command,
            "config_hash": cfg.digest(), "seed": cfg.simulation.seed}


def _clients_for_round(cfg, round_index=0):
    scenario = fedsim.Scenario.from_config(cfg)
    state = fedsim.round_channel(scenario, round_index)
    return scenario, fedsim.build_clients(scenario, state)


def cmd_solve(cfg) -> Result:
    scenario, clients = _clients_for_round(cfg)
    report = jcpba.bcd_solve(clients, scenario.constraints, scenario.epsilon,
                             scenario.max_iters)
    violations = jcpba.validate_allocation(report.final, clients, scenario.constraints)
    rec = dict(_header(cfg, "solve"), kind="allocation",
               allocation=report.final.to_dict(), report=report.to_dict(),
               lower_bound_s=jcpba.latency_lower_bound(clients, scenario.constraints),
               violations=violations)
    a = report.final
    table = [{"client": k, "beta": float(a.beta[k]), "bandwidth_hz": float(a.bandwidth[k]),
              "latency_s": float(a.per_client_latency[k])} for k in range(len(clients))]
    return Result([rec], table)


def cmd_simulate(cfg) -> Result:
    scenario = fedsim.Scenario.from_config(cfg)
    summary = fedsim.run_experiment(scenario, cfg.simulation.rounds, cfg.simulation.policy)
    head = _header(cfg, "simulate")
    records = [dict(head, kind="round", **r.to_dict()) for r in summary.records]
    records.append(dict(head, kind="summary", **summary.stats()))
    table = [{"round": r.round_index, "round_latency_s": r.round_latency_s,
              "cumulative_time_s": r.cumulative_time_s, "proxy_loss": r.proxy_loss,
              "mean_beta": float(r.allocation.beta.mean()),
              "flops_sum": float(sum(r.per_client_flops)),
              "bytes_sum": float(sum(r.per_client_bytes))}
             for r in summary.records]
    return Result(records, table)


def cmd_sweep(cfg) -> Result:
    scenario = fedsim.Scenario.from_config(cfg)
    result = fedsim.heterogeneity_sweep(
        scenario, [tuple(r) for r in cfg.sweep.speed_ranges], tuple(cfg.sweep.policies),
        cfg.simulation.rounds, cfg.simulation.seed)
    head = _header(cfg, "sweep")
    records = [dict(head, kind="cell", **c.to_dict()) for c in result.cells]
    records.append(dict(head, kind="growth", growth_pct=result.growth_pct))
    table = [{"lo": c.speed_range[0], "hi": c.speed_range[1], "policy": c.policy,
              "cv": c.cv, "range_cv": c.range_cv,
              "mean_round_latency_s": c.mean_round_latency_s,
              "total_time_s": c.total_time_s} for c in result.cells]
    return Result(records, table)


def cmd_oracle_check(cfg) -> Result:
    scenario, clients = _clients_for_round(cfg)
    cs = scenario.constraints
    report = jcpba.bcd_solve(clients, cs, scenario.epsilon, scenario.max_iters)
    oracle = jcpba.brute_force_oracle(clients, cs, cfg.oracle.grid_beta)
    reference = jcpba.joint_optimum(clients, cs)
    gap = report.final.objective / oracle.objective - 1.0
    ok = abs(gap) <= cfg.oracle.tolerance
    rec = dict(_header(cfg, "oracle-check"), kind="oracle_check",
               bcd_objective_s=report.final.objective,
               oracle_objective_s=oracle.objective,
               joint_optimum_s=reference.objective,
               relative_gap=gap, tolerance=cfg.oracle.tolerance, within_tolerance=ok,
               bcd=report.final.to_dict(), oracle=oracle.to_dict())
    table = [{"solver": name, "objective_s": a.objective,
              "beta": " ".join(f"{b:.6f}" for b in a.beta)}
             for name, a in (("bcd", report.final), ("oracle", oracle),
                             ("joint", reference))]
    return Result([rec], table, EXIT_OK if ok else EXIT_CHECK_FAILED)


COMMANDS = {
    "solve": cmd_solve,
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "oracle-check": cmd_oracle_check,
}


def dumps_records(records) -> str:
    return "".join(json.dumps(r, separators=(",", ":")) + "\n" for r in records)


def table_csv(rows) -> str:
    buf = io.StringIO()
    if rows:
        writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    return buf.getvalue()


def apply_overrides(cfg, seed=None, rounds=None, policy=None):
    sim = cfg.simulation
    changes = {k: v for k, v in (("seed", seed), ("rounds", rounds), ("policy", policy))
               if v is not None}
    if changes:
        cfg = dataclasses.replace(cfg, simulation=dataclasses.replace(sim, **changes))
    return cfg.validate()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedjcpba",
        description="Pruning-rate and bandwidth allocation for federated "
                    "adapter fine-tuning over wireless links.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="YAML scenario file (defaults if omitted)")
        p.add_argument("--seed", type=int)
        p.add_argument("--rounds", type=int)
        p.add_argument("--policy", choices=fedsim.POLICIES)
        p.add_argument("--out", type=Path, help="directory for <command>.jsonl/.csv")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.config is None:
            cfg = config_mod.default_scenario()
        else:
            cfg = config_mod.load_scenario(args.config)
        cfg = apply_overrides(cfg, args.seed, args.rounds, args.policy)
        result = COMMANDS[args.command](cfg)
    except ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (ValidationError, TooManyClients) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Infeasible as exc:
        names = ", ".join(exc.constraints) or "unknown"
        print(f"infeasible ({names}): {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE

    stream = dumps_records(result.records)
    if args.out is None:
        sys.stdout.write(stream)
    else:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / f"{args.command}.jsonl").write_text(stream)
        (args.out / f"{args.command}.csv").write_text(table_csv(result.table))
        log.info("wrote %s", args.out)
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
