"""Command-line driver: run experiments, replay benefit tables, verify kernels.

Subcommands::

    fedcoal run --config cfg.json [--seed N] [--strategy S] [--out DIR]
    fedcoal equilibrium --table table.json [--oracle]
    fedcoal benefit-check --k K --dim D --trials T --seed N

The run config is a single strict JSON document (unknown keys are rejected)
mirroring ``RunConfig`` plus ``out_dir`` and ``verbosity``; see README for
the full grammar. Exit codes: 0 success, 1 config/input error, 2 runtime
error, 3 benefit-check deviation above tolerance.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import game
from .affinity import (
    AffinityGraph,
    BenefitTable,
    all_coalitions,
    coalition_benefit_closed,
    coalition_benefit_direct,
)
from .data import ScenarioConfig
from .model import Hyperparams
from .simulator import RunConfig, run

BENEFIT_TOL = 1e-9


class ConfigError(ValueError):
    pass


_TUPLE_FIELDS = ("split", "het_scale")
_SCALAR_KEYS = ("rounds", "strategy", "seed", "oracle_checks", "cadence")


def _build_section(cls, doc: dict, where: str):
    allowed = {f.name for f in dataclasses.fields(cls)}
    for key in doc:
        if key not in allowed:
            raise ConfigError(f"unknown key '{where}.{key}'")
    kwargs = dict(doc)
    for name in _TUPLE_FIELDS:
        if name in kwargs:
            kwargs[name] = tuple(kwargs[name])
    return cls(**kwargs)


def load_config(path) -> tuple[RunConfig, str, int]:
    """Parse a strict run-config file; returns (config, out_dir, verbosity)."""
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    for key in doc:
        if key not in ("scenario", "hp", "out_dir", "verbosity") + _SCALAR_KEYS:
            raise ConfigError(f"unknown key '{key}'")
    scenario = _build_section(ScenarioConfig, doc.get("scenario", {}), "scenario")
    hp = _build_section(Hyperparams, doc.get("hp", {}), "hp")
    top = {k: doc[k] for k in _SCALAR_KEYS if k in doc}
    config = RunConfig(scenario=scenario, hp=hp, **top)
    return config, doc.get("out_dir", "runs"), int(doc.get("verbosity", 1))


def _write_outputs(out_dir: Path, matrix, records, summary) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=1))
    with open(out_dir / "rounds.jsonl", "w") as f:
        for rec in records:
            f.write(json.dumps(rec.to_json_dict()) + "\n")
    with open(out_dir / "accuracy.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["client", "learned_through", "eval_task", "accuracy", "n"])
        for (client, learned, task), acc in sorted(matrix.acc.items()):
            writer.writerow([client, learned, task, acc, matrix.counts[(client, task)]])


def cmd_run(args) -> int:
    try:
        config, out_dir, verbosity = load_config(args.config)
        if args.seed is not None:
            config.seed = args.seed
        if args.strategy is not None:
            config.strategy = args.strategy
        if args.out is not None:
            out_dir = args.out
        config.validate()
    except (ConfigError, ValueError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    try:
        matrix, records, summary = run(config)
        _write_outputs(Path(out_dir), matrix, records, summary)
    except Exception as exc:  # noqa: BLE001 - surfaced as exit code 2
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2
    if verbosity >= 1:
        print(f"strategy={config.strategy} seed={config.seed}")
        print(f"average_accuracy={summary['average_accuracy']:.4f}")
        print(f"average_forgetting={summary['average_forgetting']:.4f}")
        print(f"outputs in {out_dir}")
    return 0


def cmd_equilibrium(args) -> int:
    try:
        table = BenefitTable.from_json(Path(args.table).read_text())
    except (OSError, ValueError, KeyError) as exc:
        print(f"invalid table: {exc}", file=sys.stderr)
        return 1
    result = game.merge_blocking(table, game.singleton_partition(table.clients))
    print(f"partition: {[list(b) for b in result.partition]}")
    print(f"stable_coalitions: {[list(b) for b in result.stable_coalitions]}")
    print(f"passes: {result.traversal_rounds} converged: {result.converged}")
    if args.oracle:
        if len(table.clients) > game.K_ORACLE_MAX:
            print(
                f"oracle supports at most {game.K_ORACLE_MAX} clients", file=sys.stderr
            )
            return 1
        equilibria = game.brute_force_equilibria(table)
        print(f"brute_force_equilibria ({len(equilibria)}):")
        for part in sorted(equilibria):
            print(f"  {[list(b) for b in part]}")
        verdict = "AGREE" if result.partition in equilibria else "DISAGREE"
        if not equilibria:
            verdict = "DISAGREE (no equilibrium exists)"
        print(f"verdict: {verdict}")
    return 0


def cmd_benefit_check(args) -> int:
    if args.k > 10:
        print("benefit-check supports at most k=10", file=sys.stderr)
        return 1
    rng = np.random.default_rng(args.seed)
    worst = 0.0
    worst_case = None
    for trial in range(args.trials):
        thetas = rng.standard_normal((args.k, args.dim))
        grads = rng.standard_normal((args.k, args.dim))
        counts = rng.integers(1, 50, size=args.k)
        epsilon = float(rng.choice([0.0, 0.2, 1.0]))
        graph = AffinityGraph.from_snapshots(thetas, grads, counts, epsilon)
        for coal in all_coalitions(range(args.k)):
            for member in coal:
                closed = coalition_benefit_closed(member, coal, graph)
                direct = coalition_benefit_direct(
                    member, coal, thetas, grads, counts, epsilon
                )
                dev = abs(closed - direct)
                if dev > worst:
                    worst = dev
                    worst_case = {
                        "trial": trial,
                        "coalition": list(coal),
                        "member": member,
                        "closed": closed,
                        "direct": direct,
                        "epsilon": epsilon,
                        "counts": counts.tolist(),
                        "thetas": thetas.tolist(),
                        "grads": grads.tolist(),
                    }
    print(f"max |closed - direct| = {worst:.3e} over {args.trials} trials")
    if worst >= BENEFIT_TOL:
        print(json.dumps(worst_case), file=sys.stderr)
        return 3
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="fedcoal", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a simulator run from a config file")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--strategy", default=None, choices=["dcfcl", "local", "global_avg", "static"])
    p_run.add_argument("--out", default=None)
    p_run.set_defaults(func=cmd_run)

    p_eq = sub.add_parser("equilibrium", help="solve a serialized benefit table")
    p_eq.add_argument("--table", required=True)
    p_eq.add_argument("--oracle", action="store_true")
    p_eq.set_defaults(func=cmd_equilibrium)

    p_bc = sub.add_parser("benefit-check", help="closed-form vs direct-oracle equivalence")
    p_bc.add_argument("--k", type=int, required=True)
    p_bc.add_argument("--dim", type=int, required=True)
    p_bc.add_argument("--trials", type=int, required=True)
    p_bc.add_argument("--seed", type=int, default=0)
    p_bc.set_defaults(func=cmd_benefit_check)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
