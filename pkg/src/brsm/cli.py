"""Command-line entry points.

Commands: gen-grammar, ceiling, train-ssmnist, train-lm, eval, gradcheck.
Run configs come from ``--preset`` and/or ``--config FILE``, then ``--set
key=value`` overrides; the effective config is echoed at the start of every
training run. ``BRSM_DATA_DIR`` sets the default directory for MNIST files and
corpora.
"""

import argparse
import math
import logging
import sys
from pathlib import Path

from . import experiments
from .config import PRESETS, RunConfig, preset
from .dense import make_rng
from .grammar import (
    BUILTIN_GRAMMARS,
    Grammar,
    GrammarError,
    ceiling_exact,
    ceiling_montecarlo,
    gen_grammar,
    load_grammar,
)
from .gradcheck import LAYER_TENSORS, READOUT_TENSORS, run_gradcheck
from .layer import ConfigError


def _config(args, task):
    cfg = preset(args.preset) if args.preset else RunConfig(task=task)
    if args.config:
        cfg = RunConfig.from_text(Path(args.config).read_text(), base=cfg)
    cfg = cfg.with_overrides(args.set or [])
    if cfg.task != task:
        cfg = cfg.replace(task=task)
    return cfg


def _add_run_args(p):
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--config", help="INI-style config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    p.add_argument("--data-dir", help=f"default data directory (else ${experiments.DATA_ENV})")
    p.add_argument("--out", help="directory for metrics and checkpoint (default: metrics_dir)")


def percent(p):
    """Percentage truncated (not rounded) to two decimals, so 8/9 prints as 88.88%."""
    return f"{math.floor(p * 10000 + 1e-9) / 100:.2f}%"


def cmd_gen_grammar(args):
    if args.builtin:
        grammar = Grammar.builtin(args.builtin)
    else:
        if args.m is None or args.n is None:
            raise GrammarError("gen-grammar needs --m and --n (or --builtin)")
        grammar = gen_grammar(args.m, args.n, make_rng(args.seed), distinct_prefix=args.distinct_prefix)
    text = grammar.to_text()
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    # keep stdout clean for the grammar itself when no output file is given
    stream = sys.stdout if args.output else sys.stderr
    print(f"accuracy ceiling: {percent(ceiling_exact(grammar))}", file=stream)
    return 0


def cmd_ceiling(args):
    grammar = load_grammar(args.grammar)
    print(f"exact ceiling: {ceiling_exact(grammar):.6f}")
    if args.montecarlo:
        est = ceiling_montecarlo(grammar, args.montecarlo, make_rng(args.seed))
        print(f"monte carlo:   {est.accuracy:.6f} +- {est.stderr:.6f} ({args.montecarlo} steps)")
    return 0


def cmd_train_ssmnist(args):
    cfg = _config(args, "ssmnist")
    print(cfg.to_text())
    experiments.train_digits(cfg, args.data_dir, args.out, stop_accuracy=args.stop_accuracy)
    return 0


def cmd_train_lm(args):
    cfg = _config(args, "lm")
    print(cfg.to_text())
    experiments.train_lm(cfg, args.data_dir, args.out)
    return 0


def cmd_eval(args):
    result = experiments.evaluate_checkpoint(args.checkpoint, args.data_dir, args.set or [])
    if result["task"] == "ssmnist":
        print(f"step {result['step']}  accuracy {result['accuracy']:.4f}  ceiling {result['ceiling']:.4f}")
    else:
        print(f"step {result['step']}  test ppl {result['test_ppl']:.4f}")
    return 0


def cmd_gradcheck(args):
    report = run_gradcheck(args.seed, args.instances, corrupt=args.corrupt)
    print("\n".join(report.lines()))
    return 0 if report.passed else 1


def build_parser():
    parser = argparse.ArgumentParser(prog="brsm", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-grammar", help="write a random or builtin grammar and print its ceiling")
    p.add_argument("--m", type=int, help="number of sub-sequences")
    p.add_argument("--n", type=int, help="sub-sequence length")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--distinct-prefix", action="store_true")
    p.add_argument("--builtin", choices=sorted(BUILTIN_GRAMMARS))
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_gen_grammar)

    p = sub.add_parser("ceiling", help="Bayes-optimal next-label accuracy of a grammar")
    p.add_argument("grammar", help="builtin name or grammar file")
    p.add_argument("--montecarlo", type=int, default=0, metavar="STEPS")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_ceiling)

    p = sub.add_parser("train-ssmnist", help="train on grammar streams of digit images")
    _add_run_args(p)
    p.add_argument("--stop-accuracy", type=float, help="stop at the first evaluation reaching this")
    p.set_defaults(func=cmd_train_ssmnist)

    p = sub.add_parser("train-lm", help="train a language model")
    _add_run_args(p)
    p.set_defaults(func=cmd_train_lm)

    p = sub.add_parser("eval", help="evaluate a checkpoint without modifying it")
    p.add_argument("checkpoint")
    p.add_argument("--data-dir")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="evaluation override, e.g. cache_weight=0.07")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of every gradient")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--corrupt", choices=LAYER_TENSORS + READOUT_TENSORS,
                   help="perturb one analytic gradient (negative control)")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, GrammarError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
