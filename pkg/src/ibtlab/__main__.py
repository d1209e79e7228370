"""Command line: ``run <config>``, ``plot <run-dir>``, ``eval <checkpoint> <data-file>``.

Exit codes: 0 success, 1 internal error, 2 bad config or usage, 3 missing or
malformed data, 4 unusable checkpoint, 5 malformed plot input.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

from .data import ConfigError, load_pairs
from .harness import ExperimentConfig, PlotError, emit_plots, run_experiment
from .metrics import corpus_bleu, exact_match_accuracy
from .model import CheckpointError, Seq2Seq

EXIT_OK, EXIT_INTERNAL, EXIT_CONFIG, EXIT_DATA, EXIT_CHECKPOINT, EXIT_PLOT = range(6)


def _run(args):
    report = run_experiment(ExperimentConfig.from_file(args.config))
    print(report.summary())
    print(f"run directory: {report.run_dir}")


def _plot(args):
    for path in emit_plots(args.run_dir):
        print(path)


def _eval(args):
    model = Seq2Seq.load(args.checkpoint)
    pairs = load_pairs(args.data_file, args.format)
    if model.direction == "src2trg":
        inputs, refs = [p.source for p in pairs], [p.target for p in pairs]
    else:
        inputs, refs = [p.target for p in pairs], [p.source for p in pairs]
    preds = model.translate(inputs)
    print(json.dumps({
        "direction": model.direction, "pairs": len(pairs),
        "accuracy": exact_match_accuracy(preds, refs), "bleu": corpus_bleu(preds, refs),
    }))


def main(argv=None):
    parser = argparse.ArgumentParser(prog="ibtlab", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="run an experiment from a JSON config")
    p.add_argument("config")
    p.set_defaults(fn=_run)
    p = sub.add_parser("plot", help="render SVG plots for a run directory")
    p.add_argument("run_dir")
    p.set_defaults(fn=_plot)
    p = sub.add_parser("eval", help="score a checkpoint on a pair file")
    p.add_argument("checkpoint")
    p.add_argument("data_file")
    p.add_argument("--format", choices=("scan_in_out", "tab_separated"))
    p.set_defaults(fn=_eval)
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.fn(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except CheckpointError as e:
        print(f"checkpoint error: {e}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except PlotError as e:
        print(f"plot error: {e}", file=sys.stderr)
        return EXIT_PLOT
    except (OSError, ValueError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except Exception as e:  # noqa: BLE001 - last-resort categorisation
        print(f"internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
