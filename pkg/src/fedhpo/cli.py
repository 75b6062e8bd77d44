"""Command-line entry point.

    fedhpo run --config configs/cifar-like.toml --seed 7 --out runs/c7
    fedhpo baseline --config configs/cifar-like.toml --baseline fedprox
    fedhpo local-only --config configs/covid-like.toml --client 0
    fedhpo bench-search --out runs/bench
    fedhpo plot --out runs/c7
    fedhpo validate-config --config configs/*.toml

Exit codes: 0 success, 2 config error, 3 divergence, 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

from .config import ExperimentConfig, load_config
from .errors import ConfigError, DivergenceError, FedHPOError, PolicyMissingError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGENCE = 3
EXIT_IO = 4

VERBS = ("run", "baseline", "local-only", "bench-search", "plot", "validate-config")


@dataclass
class CliCommand:
    verb: str
    args: argparse.Namespace
    configs: list[ExperimentConfig]

    @property
    def config(self) -> ExperimentConfig | None:
        return self.configs[0] if self.configs else None


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="override the master seed")
    common.add_argument("--out", help="override the output directory")
    common.add_argument("--mode", choices=["ds", "cs", "mlp"], help="override the search mode")
    common.add_argument("--quiet", action="store_true", help="do not echo the resolved config")

    p = _Parser(prog="fedhpo", description="Federated training with online RL hyperparameter search.")
    sub = p.add_subparsers(dest="verb", required=True, parser_class=_Parser)
    for verb in ("run", "baseline", "local-only"):
        sp = sub.add_parser(verb, parents=[common])
        sp.add_argument("--config", required=True, help="TOML experiment config")
        if verb == "baseline":
            sp.add_argument("--baseline", choices=["fedavg", "fedprox"])
        if verb == "local-only":
            sp.add_argument("--client", type=int, required=True)
    sp = sub.add_parser("bench-search", parents=[common])
    sp.add_argument("--config", help="optional config (seed only)")
    sp.add_argument("--cardinalities", type=int, nargs="+")
    sp.add_argument("--clients", type=int, nargs="+")
    sp = sub.add_parser("plot", parents=[common])
    sp.add_argument("--config", help="optional; provides the default output directory")
    sp.add_argument("--rounds", help="path to rounds.csv (default: <out>/rounds.csv)")
    sp = sub.add_parser("validate-config", parents=[common])
    sp.add_argument("--config", required=True, nargs="+")
    return p


def parse_and_validate(argv) -> CliCommand:
    """Parse arguments and load, override, and validate every referenced config."""
    args = build_parser().parse_args(argv)
    paths = args.config if isinstance(args.config, list) else ([args.config] if args.config else [])
    configs = []
    for path in paths:
        if not Path(path).is_file():
            raise FileNotFoundError(f"config file not found: {path}")
        configs.append(load_config(path, seed=args.seed, output=args.out, mode=args.mode))
    return CliCommand(args.verb, args, configs)


def _echo(cmd: CliCommand):
    if cmd.args.quiet:
        return
    for cfg in cmd.configs:
        print(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))


def dispatch(cmd: CliCommand) -> int:
    from . import orchestrator

    args, cfg = cmd.args, cmd.config
    _echo(cmd)
    if cmd.verb == "validate-config":
        for path in args.config:
            print(f"ok: {path}")
        return EXIT_OK
    if cmd.verb == "run":
        res = orchestrator.run(cfg, plots=True)
        _print_summary(res.summary, cfg.output)
    elif cmd.verb == "baseline":
        res = orchestrator.run_baseline(cfg, args.baseline, plots=True)
        _print_summary(res.summary, cfg.output)
    elif cmd.verb == "local-only":
        row = orchestrator.local_only(cfg, args.client)
        out = Path(cfg.output)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"local_only_{args.client}.json").write_text(json.dumps(row, indent=2) + "\n")
        print(json.dumps(row))
    elif cmd.verb == "bench-search":
        _bench(args, cfg)
    elif cmd.verb == "plot":
        _plot(args, cfg)
    return EXIT_OK


def _print_summary(summary, out):
    keys = ("method", "seed", "final_test_acc", "best_test_acc", "best_round", "final_mu")
    print(json.dumps({k: summary[k] for k in keys if k in summary}))
    print(f"wrote {out}")


def _bench(args, cfg):
    from . import bench, plotting

    out = Path(args.out or "runs/bench")
    kw = {"seed": cfg.seed if cfg else 0}
    if args.cardinalities:
        kw["cardinalities"] = args.cardinalities
    if args.clients:
        kw["client_counts"] = args.clients
    probes = bench.benchmark_search_cost(**kw)
    bench.write_cost_csv(probes, out / "cost.csv")
    plotting.plot_search_cost(probes, out / "cost.svg")
    for p in probes:
        print(f"{p.sweep:8s} {p.mode:10s} |H|={p.cardinality:>10d} D={p.n_dims:<3d} "
              f"{p.seconds * 1e3:10.4f} ms {p.peak_bytes:>12d} B")
    print(f"wrote {out / 'cost.csv'}")


def _plot(args, cfg):
    from . import plotting
    from .records import read_round_csv

    out = Path(args.out or (cfg.output if cfg else "."))
    rounds = Path(args.rounds) if args.rounds else out / "rounds.csv"
    records = read_round_csv(rounds)
    if any(k.startswith("aw[") for k in records[0].h):
        plotting.plot_aggregation_weights(records, out / "aggregation_weights.svg")
    plotting.plot_hyperparam_evolution(records, out / "hyperparams.svg")
    print(f"wrote figures to {out}")


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cmd = parse_and_validate(argv)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return dispatch(cmd)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except PolicyMissingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except FedHPOError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
