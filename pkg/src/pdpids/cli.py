"""Command-line entry point: ``pdpids <subcommand> [options]``.

Exit status is 0 on success, 2 for bad arguments or configuration and 1 for
any failure while running.
"""

from __future__ import annotations

import argparse
import json
import sys

from .errors import ConfigError
from .harness import ExperimentConfig, build_trace, emit_metrics, run_experiment
from .traffic import write_trace_csv
from .trees import DecisionTree, tree_compile


def _config(args, pipeline: str) -> ExperimentConfig:
    overrides = {"seed": args.seed, "out": args.out, "format": args.format, "pipeline": pipeline}
    if args.config:
        return ExperimentConfig.load(args.config, **overrides)
    return ExperimentConfig(**{k: v for k, v in overrides.items() if v is not None})


def _run(args, pipeline: str) -> int:
    cfg = _config(args, pipeline)
    report = run_experiment(cfg)
    if cfg.out:
        emit_metrics(report, cfg.out, cfg.format)
    else:
        print(json.dumps(report.as_dict(), indent=2))
    return 0


def cmd_run_entropy(args) -> int:
    return _run(args, "entropy")


def cmd_run_classifier(args) -> int:
    return _run(args, "classifier")


def cmd_gen_trace(args) -> int:
    cfg = _config(args, args.pipeline)
    if not cfg.out:
        raise ConfigError("gen-trace needs --out (or out = ... in the config)")
    trace = build_trace(cfg, cfg.seed)
    write_trace_csv(trace, cfg.out, with_labels=True)
    print(f"wrote {len(trace)} packets to {cfg.out}", file=sys.stderr)
    return 0


def cmd_compile_tree(args) -> int:
    try:
        tree = DecisionTree.load(args.tree)
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"cannot load tree {args.tree}: {exc}") from None
    program = tree_compile(tree)
    text = program.to_lpm().dump() if args.lpm else program.dump()
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pdpids", description="Programmable data-plane DDoS detection experiments")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, with_format: bool = True):
        sp.add_argument("--config", help="key=value experiment config file")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--out", help="output path (default: stdout)")
        if with_format:
            sp.add_argument("--format", choices=("json", "csv"), help="metrics format (default json)")
        else:
            sp.set_defaults(format=None)

    sp = sub.add_parser("run-entropy", help="run the entropy detector experiment")
    common(sp)
    sp.set_defaults(func=cmd_run_entropy)

    sp = sub.add_parser("run-classifier", help="run the flow classifier experiment")
    common(sp)
    sp.set_defaults(func=cmd_run_classifier)

    sp = sub.add_parser("gen-trace", help="write a labelled synthetic trace as CSV")
    common(sp, with_format=False)
    sp.add_argument("--pipeline", choices=("entropy", "classifier"), default="entropy",
                    help="which scenario defaults to use")
    sp.set_defaults(func=cmd_gen_trace)

    sp = sub.add_parser("compile-tree", help="compile a JSON decision tree to a table program")
    sp.add_argument("tree", help="tree JSON file")
    sp.add_argument("--out", help="write the rule dump here (default: stdout)")
    sp.add_argument("--lpm", action="store_true", help="dump the prefix-expanded form")
    sp.set_defaults(func=cmd_compile_tree)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "seed", None) is not None and not 0 <= args.seed < 1 << 64:
        print(f"error: --seed must be a u64, got {args.seed}", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - any runtime failure maps to exit 1
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
