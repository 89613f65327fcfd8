"""Command line entry point: ``egp {train,experiment,summarize,selftest}``.

Exit codes: 0 ok, 1 usage/configuration error, 2 data error, 3 internal
invariant violation.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from egp import engine, experiment, selftest
from egp.dataset import DataError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INVARIANT = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _drop_spec(text: str) -> tuple[str, str, str, float]:
    try:
        d, m, p, v = text.split(":")
        return d, m, p, float(v)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected DATASET:METHOD:PHASE:PERCENT, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="egp", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train one model and dump it")
    t.add_argument("--data", required=True, help="CSV path or synthetic:two-gaussians[,n,f,seed]")
    t.add_argument("--label", default="-1", help="label column name or index (default: last)")
    t.add_argument("--no-header", action="store_true")
    t.add_argument("--method", default="eGP-N", choices=experiment.METHODS)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--generations", type=int)
    t.add_argument("--population", type=int, help="population, or subpopulation size for eGP")
    t.add_argument("--out", default="model", help="output directory")

    e = sub.add_parser("experiment", help="run the multi-run harness")
    e.add_argument("--config", required=True)
    e.add_argument("--out")
    e.add_argument("--jobs", type=int)
    e.add_argument("--seed", type=int, help="base seed")
    e.add_argument("--runs", type=int)
    e.add_argument("--methods", help="comma-separated method list")
    e.add_argument("--generations", type=int)

    s = sub.add_parser("summarize", help="turn a results CSV into a report")
    s.add_argument("results")
    s.add_argument("--out", help="directory for summary/counts/boxplot CSVs")
    s.add_argument("--alpha", type=float, default=0.01)
    s.add_argument("--drop", type=_drop_spec, action="append", default=[],
                   help="hide DATASET:METHOD:PHASE:PERCENT from the boxplot data (repeatable)")
    s.add_argument("--drop-brazil-outliers", action="store_true",
                   help="hide the known BRAZIL display outliers from the boxplot data")

    st = sub.add_parser("selftest", help="run the invariant suite")
    st.add_argument("--seed", type=int, default=0)
    return p


def cmd_train(args) -> int:
    spec = experiment.DatasetSpec("data", args.data, args.label, not args.no_header)
    ds = spec.load()
    params = {k: v for k, v in (("generations", args.generations), ("population", args.population))
              if v is not None}
    model, predict, nodes, units = experiment.fit_method(args.method, ds, args.seed, params)
    sp = model.split
    train_acc = float(np.mean(predict(ds.features[sp.train_indices]) == ds.labels[sp.train_indices]))
    test_acc = float(np.mean(predict(ds.features[sp.test_indices]) == ds.labels[sp.test_indices]))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    doc = model.to_dict()
    doc.update({"method": args.method, "seed": args.seed, "test_accuracy": test_acc})
    (out / "model.json").write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    if isinstance(model, engine.TrainedModel):
        model.write_trace(out / "trace.csv")
    print(f"{args.method}: train {train_acc:.4f} test {test_acc:.4f} nodes {nodes} units {units}")
    return EXIT_OK


def cmd_experiment(args) -> int:
    cfg = experiment.read_config(args.config)
    if args.out:
        cfg.out_dir = args.out
    if args.jobs:
        cfg.jobs = args.jobs
    if args.seed is not None:
        cfg.base_seed = args.seed
    if args.runs:
        cfg.runs = args.runs
    if args.methods:
        cfg.methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    if args.generations is not None:
        cfg.generations = args.generations
    cfg.__post_init__()
    cfg.out_dir = cfg.out_dir or "results"
    store = experiment.run_experiment(cfg)
    print(f"{len(store.results)} runs written to {cfg.out_dir}/results.csv")
    if store.errors:
        for e in store.errors:
            print(f"dataset {e['dataset']} skipped: {e['error']}", file=sys.stderr)
        if not store.results:
            return EXIT_DATA
    return EXIT_OK


def cmd_summarize(args) -> int:
    try:
        results = experiment.read_results(args.results)
    except (OSError, KeyError, ValueError) as exc:
        raise DataError(f"{args.results}: {exc}") from exc
    drops = list(args.drop)
    if args.drop_brazil_outliers:
        drops.extend(experiment.BRAZIL_DISPLAY_OUTLIERS)
    report = experiment.summarize(results, args.alpha, drops)
    if args.out:
        report.write(args.out)
    sys.stdout.write(report.text())
    return EXIT_OK


def cmd_selftest(args) -> int:
    failed = 0
    for name, problem in selftest.run_all(args.seed).items():
        print(f"{'FAIL' if problem else 'ok  '} {name}" + (f": {problem}" if problem else ""))
        failed += bool(problem)
    return EXIT_INVARIANT if failed else EXIT_OK


COMMANDS = {"train": cmd_train, "experiment": cmd_experiment,
            "summarize": cmd_summarize, "selftest": cmd_selftest}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except engine.ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except engine.InvariantViolation as exc:
        print(f"invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
