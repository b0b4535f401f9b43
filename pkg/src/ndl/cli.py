"""Command-line entry point: ``ndl {pretrain,learn,run,compare,inspect}``.

Exit status: 0 on success, 1 for configuration errors, 2 for unreadable or
malformed data (datasets, checkpoints, metrics files), 3 for numeric failures.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import harness
from .checkpoint import load_checkpoint
from .errors import (
    CheckpointError,
    ComparisonError,
    ConfigError,
    IdxFormatError,
    PairingError,
    StaleStatsError,
)
from .metrics import compare_runs, format_csv

log = logging.getLogger("ndl")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


def _config(args) -> harness.ExperimentConfig:
    return harness.load_config(args.config, args.set)


def cmd_pretrain(args) -> int:
    cfg = _config(args)
    state, _, out = harness.start_run(cfg)
    print(f"pretrained {cfg.condition} widths {state.ae.widths}; checkpoint {out.checkpoint(0)}")
    return EXIT_OK


def cmd_learn(args) -> int:
    cfg = _config(args)
    out = harness.RunOutput(cfg.output_dir)
    checkpoint = Path(args.checkpoint) if args.checkpoint else _latest_checkpoint(out)
    state = harness.RunState.load(checkpoint)
    if state.condition != cfg.condition or state.seed != cfg.seed:
        raise ConfigError(
            f"checkpoint is {state.condition} seed {state.seed}, config asks for {cfg.condition} seed {cfg.seed}"
        )
    label = args.class_label if args.class_label is not None else harness.next_class(state, cfg)
    if label is None:
        print("every class in the order has been learned")
        return EXIT_OK
    splits = harness.load_data(cfg)
    report = harness.continue_run(state, cfg, splits, out, label)
    grown = f", nodes added {report.nodes_added}" if report else ""
    print(f"learned class {label}: widths {state.ae.widths}{grown}; checkpoint {out.checkpoint(state.round)}")
    return EXIT_OK


def _latest_checkpoint(out: harness.RunOutput) -> Path:
    found = sorted(out.checkpoints.glob("round*.npz"))
    if not found:
        raise CheckpointError(f"no checkpoints under {out.checkpoints}; run pretrain first")
    return found[-1]


def cmd_run(args) -> int:
    cfg = _config(args)
    out = harness.run_experiment(cfg)
    print(f"wrote {out.metrics}")
    return EXIT_OK


def cmd_compare(args) -> int:
    header, rows = compare_runs(args.metrics)
    text = format_csv(header, rows)
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_inspect(args) -> int:
    ae, store, extra = load_checkpoint(args.checkpoint)
    print(f"levels: {ae.depth}  input: {ae.input_dim}  widths: {ae.widths}")
    for i, (enc, dec) in enumerate(zip(ae.encoders, ae.decoders), start=1):
        print(f"  level {i}: encoder {enc.weights.shape}  decoder {dec.weights.shape}")
    if len(store):
        print(f"replay store: code width {store.model_code_width}")
        for label in store.labels:
            st = store.stats[label]
            print(f"  class {label}: {st.sample_count} samples, mean norm {float((st.mean ** 2).sum() ** 0.5):.4f}")
    else:
        print("replay store: empty")
    for key in ("condition", "seed", "round", "seen"):
        if key in extra:
            print(f"{key}: {extra[key]}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ndl", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("-c", "--config", help="YAML experiment config")
        p.add_argument(
            "-s", "--set", action="append", default=[], metavar="KEY=VALUE",
            help="override a config key, e.g. neurogenesis.max_nodes=[40,20,10,6] (repeatable)",
        )
        return p

    with_config(sub.add_parser("pretrain", help="train on the initial classes, write round 0")).set_defaults(func=cmd_pretrain)
    p = with_config(sub.add_parser("learn", help="learn one class from a checkpoint"))
    p.add_argument("--class", dest="class_label", type=int, help="class to learn (default: next in order)")
    p.add_argument("--checkpoint", help="checkpoint to resume (default: latest in the output directory)")
    p.set_defaults(func=cmd_learn)
    with_config(sub.add_parser("run", help="full protocol for one condition")).set_defaults(func=cmd_run)
    p = sub.add_parser("compare", help="initial/final RE table across runs")
    p.add_argument("metrics", nargs="+", help="metrics.jsonl files")
    p.add_argument("-o", "--output", help="write CSV here instead of stdout")
    p.set_defaults(func=cmd_compare)
    p = sub.add_parser("inspect", help="print model shapes and store summary")
    p.add_argument("checkpoint")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except (FileNotFoundError, IdxFormatError, PairingError, CheckpointError, ComparisonError) as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA
    except (ArithmeticError, StaleStatsError) as exc:
        log.error("numeric failure: %s", exc)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
