"""Command-line driver: bootstrap, train, evaluate, report, serve.

Configuration precedence is flags > config file > defaults.  Exit codes:
0 success, 1 configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import checkpoint, csvio, experiment, reports
from .errors import CheckpointError, ContractViolationError
from .experiment import ExperimentConfig
from .sim import Scenario


class CliError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        # Usage problems are configuration errors (exit code 1).
        raise CliError(message)


CONFIG_FLAGS = [
    ("--cost-preset", "cost_preset", str),
    ("--force-weight", "force_weight", float),
    ("--gamma", "gamma", float),
    ("--delta", "delta", float),
    ("--bootstrap-samples", "bootstrap_samples", int),
    ("--iterations", "iterations", int),
    ("--iteration-samples", "iteration_samples", int),
    ("--episodes", "episodes", int),
    ("--steps", "steps", int),
    ("--epsilon", "epsilon", float),
    ("--eval-trials", "eval_trials", int),
    ("--eval-duration", "eval_duration", float),
    ("--fit-restarts", "fit_restarts", int),
    ("--seed", "seed", int),
]


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="experiment config JSON; flags override its fields")
    p.add_argument("--scenario", help="scenario JSON file")
    for flag, dest, typ in CONFIG_FLAGS:
        p.add_argument(flag, dest=dest, type=typ, default=None)


def _resolve_config(args) -> ExperimentConfig:
    data: dict = {}
    if args.config:
        try:
            data = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as err:
            raise CliError(f"cannot read config {args.config}: {err}")
    if args.scenario:
        data["scenario"] = args.scenario
    for _, dest, _ in CONFIG_FLAGS:
        value = getattr(args, dest, None)
        if value is not None:
            data[dest] = value
    try:
        return ExperimentConfig.from_dict(data)
    except ContractViolationError as err:
        raise CliError(str(err))


def build_parser() -> Parser:
    parser = Parser(prog="plankrl", description=__doc__)
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("bootstrap", help="collect random-policy transitions")
    _add_config_flags(p)
    p.add_argument("--out", required=True, help="run directory")

    p = sub.add_parser("train", help="run the full training loop")
    _add_config_flags(p)
    p.add_argument("--out", required=True, help="run directory")

    p = sub.add_parser("evaluate", help="evaluate a saved checkpoint")
    _add_config_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--trials", type=int, default=5)

    p = sub.add_parser("report", help="emit report CSVs and figures from a run")
    p.add_argument("run_dir")
    p.add_argument("--out", default=None)

    p = sub.add_parser("serve", help="serve live sessions over WebSocket")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8765)
    return parser


def _cmd_bootstrap(args) -> int:
    config = _resolve_config(args)
    transitions = experiment.bootstrap(config, args.out)
    print(f"wrote {len(transitions)} transitions to {Path(args.out) / 'bootstrap.csv'}")
    return 0


def _cmd_train(args) -> int:
    config = _resolve_config(args)
    result = experiment.run(config, args.out)
    last_it = max(r[0] for r in result.summary)
    for it in range(last_it + 1):
        rows = [r for r in result.summary if r[0] == it]
        overshoot = sum(r[2] for r in rows) / len(rows)
        mean_tau = sum(r[4] for r in rows) / len(rows)
        print(f"iteration {it}: mean overshoot {overshoot:.4f}, mean tau {mean_tau:.4f}")
    print(f"run artifacts in {result.outdir}")
    return 0


def _cmd_evaluate(args) -> int:
    q, fm, delta, scenario = checkpoint.load(args.checkpoint)
    config = _resolve_config(args)
    if not args.scenario:
        config = ExperimentConfig.from_dict({**config.to_dict(), "scenario": checkpoint._scenario_dict(scenario)})
    config = ExperimentConfig.from_dict({**config.to_dict(), "delta": delta if args.delta is None else args.delta})
    metrics = experiment.evaluate(q, fm, config, args.out, iteration=0, trials=args.trials)
    rows = [
        [i, 0 if m.settling_time == float("inf") else 1, m.overshoot, m.settling_time, m.mean_tau, m.mean_cost]
        for i, m in enumerate(metrics)
    ]
    csvio.write_csv(
        Path(args.out) / "evaluate_summary.csv",
        ["trial", "settled", "overshoot", "settling_time", "mean_tau", "mean_cost"],
        rows,
    )
    for i, m in enumerate(metrics):
        print(f"trial {i}: overshoot {m.overshoot:.4f}, settling {m.settling_time}, mean tau {m.mean_tau:.4f}")
    return 0


def _cmd_report(args) -> int:
    result = reports.report(args.run_dir, args.out)
    for name, cov in result["calibration"].items():
        print(f"calibration {name}: {cov:.3f}")
    print(f"report written to {Path(args.out) if args.out else Path(args.run_dir) / 'report'}")
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import build_app

    app = build_app(args.checkpoint)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


COMMANDS = {
    "bootstrap": _cmd_bootstrap,
    "train": _cmd_train,
    "evaluate": _cmd_evaluate,
    "report": _cmd_report,
    "serve": _cmd_serve,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except CliError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return 1
    try:
        return COMMANDS[args.verb](args)
    except (CliError, ContractViolationError, CheckpointError) as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return 1
    except Exception as err:  # noqa: BLE001 - CLI boundary
        print(f"runtime failure: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
