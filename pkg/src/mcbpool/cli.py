"""Command-line entry point: ``mcbpool <command> [flags]``.

Commands write their results under ``--out`` (CSV + JSON, byte-identical on
rerun with the same flags) and print an aligned table. Wall-clock data goes
to a separate ``*.timing.json`` so it never perturbs the result files.
"""

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from . import io
from .bench import BENCH_HEADER, run_bench
from .exceptions import ConfigurationError, CorruptFileError, TrainingDivergedError
from .harness import (
    AblationReport,
    AblationRow,
    TrainConfig,
    ablate,
    ablate_grounding,
    default_grounding_task,
    default_task,
    evaluate,
    method_label,
    split_data,
    train,
)
from .models import ModelSpec
from .nn import DEFAULT_D, METHOD_ALIASES, POOLING_TAGS, parse_method
from .sketch import sample_params
from .tasks import GridClassificationTask, gen_grid_classification
from .verify import SUITES, run_suites

__all__ = ["main", "build_parser", "parse_seeds"]

GRID_LOCATIONS = 9


def parse_seeds(text):
    """``"1..5"`` -> [1, 2, 3, 4, 5]; ``"1,3,7"`` -> [1, 3, 7]."""
    text = text.strip()
    if ".." in text:
        lo, hi = text.split("..", 1)
        lo, hi = int(lo), int(hi)
        if hi < lo:
            raise ValueError(f"empty seed range {text!r}")
        return list(range(lo, hi + 1))
    seeds = [int(s) for s in text.split(",") if s.strip()]
    if not seeds:
        raise ValueError("no seeds given")
    return seeds


def _seeds_arg(text):
    try:
        seeds = parse_seeds(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc
    if any(s < 0 for s in seeds):
        raise argparse.ArgumentTypeError("seeds must be non-negative")
    return seeds


def _methods_arg(text):
    names = [m.strip() for m in text.split(",") if m.strip()]
    known = set(POOLING_TAGS) | set(METHOD_ALIASES)
    bad = [m for m in names if m not in known]
    if bad or not names:
        raise argparse.ArgumentTypeError(
            f"unknown method(s) {bad}; choose from {sorted(known)}")
    return names


def _positive(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _non_negative(text):
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {value}")
    return value


def _d_list(text):
    try:
        values = [int(v) for v in text.split(",")]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad d list {text!r}") from exc
    if not values or any(v < 1 for v in values):
        raise argparse.ArgumentTypeError("d values must be >= 1")
    return values


def _format_cell(v):
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.4f}"
    if isinstance(v, int):
        return f"{v:,}"
    return str(v)


def format_table(header, rows):
    cells = [list(header)] + [[_format_cell(v) for v in row] for row in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def print_report(report):
    rows = [(r.method, r.seed, r.n_params, r.train_accuracy, r.test_accuracy) for r in report.rows]
    print(format_table(("method", "seed", "params", "train acc", "test acc"), rows))
    print()
    summary = [(s["method"], s["runs"], s["mean_test_accuracy"], s["std_test_accuracy"])
               for s in report.summary()]
    print(format_table(("method", "runs", "mean test acc", "std"), summary))


def _config(args, **extra):
    skip = {"func", "command", "out"}
    cfg = {k: v for k, v in sorted(vars(args).items()) if k not in skip}
    cfg.update(extra)
    return cfg


def _train_config(args):
    return TrainConfig(epochs=args.epochs, batch_size=args.batch_size, patience=args.patience)


def _grid_task(args):
    return GridClassificationTask(args.n1, args.n2, args.classes, GRID_LOCATIONS,
                                  args.noise, args.task_seed)


def cmd_verify(args):
    names = args.suite or None
    results = run_suites(names, args.tolerance)
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"FAILED: {len(failed)} suite(s): " + "; ".join(failed))
        return 1
    print(f"all {len(results)} suites passed")
    return 0


def cmd_bench(args):
    rows = run_bench(args.n1, args.n2, args.d, args.classes, args.batch, args.repetitions, args.seed)
    table = [r.as_tuple() for r in rows]
    print(format_table(BENCH_HEADER, table))
    for r in rows:
        if r.status == "refused":
            print(f"{r.leg}: refused, {r.n_params:,} weights exceed the cap")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        io.write_csv(out / "bench.csv", BENCH_HEADER, table)
    return 0


def cmd_train(args):
    method = parse_method(args.pooling, args.d[0])
    spec = ModelSpec(method, use_attention=args.attention, glimpses=args.glimpses,
                     seed=args.seed)
    if args.attention:
        task = _grid_task(args)
        data = split_data(task, args.n_train, args.n_val, args.n_test, gen_grid_classification)
    else:
        task = default_task(args.task_seed, args.noise, args.n1, args.n2, args.classes)
        data = split_data(task, args.n_train, args.n_val, args.n_test)
    train_set, val_set, test_set = data
    start = time.perf_counter()
    result = train(spec, train_set, val_set, args.epochs, _train_config(args), args.classes)
    seconds = time.perf_counter() - start
    model = result.model
    row = AblationRow(method_label(method), f"d={method.d}" if method.d else "", model.n_params,
                      evaluate(model, train_set), evaluate(model, test_set), seconds, args.seed)
    report = AblationReport([row])
    metrics = {
        "train_accuracy": row.train_accuracy,
        "val_accuracy": result.best_val_accuracy,
        "test_accuracy": row.test_accuracy,
        "best_epoch": result.best_epoch,
        "n_params": model.n_params,
        "epochs_run": len(result.history),
    }
    print_report(report)
    if args.out:
        io.write_report(args.out, "train", "train", _config(args), report, metrics)
        history = [{k: h[k] for k in ("epoch", "loss", "train_accuracy", "val_accuracy")}
                   for h in result.history]
        io.write_json(Path(args.out) / "train.history.json", {
            "format": "mcbpool.history", "version": io.REPORT_VERSION, "history": history})
    return 0


def _ablation_methods(args):
    methods = []
    for name in args.methods:
        if parse_method(name).tag == "mcb":
            methods.extend(parse_method(name, d) for d in args.d)
        else:
            methods.append(name)
    return methods


def cmd_ablate(args):
    task = default_task(args.task_seed, args.noise, args.n1, args.n2, args.classes)
    report = ablate(task, _ablation_methods(args), args.budget_match, args.seeds,
                    _train_config(args), args.n_train, args.n_val, args.n_test,
                    normalization=args.normalization)
    print_report(report)
    if args.out:
        io.write_report(args.out, "ablate", "ablate", _config(args), report,
                        {s["method"]: s["mean_test_accuracy"] for s in report.summary()})
    return 0


def cmd_ground(args):
    task = default_grounding_task(args.task_seed, args.noise, args.n1, args.n2, args.proposals)
    report = ablate_grounding(task, _ablation_methods(args), args.seeds, _train_config(args),
                              args.n_train, args.n_val, args.n_test,
                              normalization=args.normalization)
    print_report(report)
    if args.out:
        io.write_report(args.out, "ground", "ground", _config(args), report,
                        {s["method"]: s["mean_test_accuracy"] for s in report.summary()})
    return 0


def cmd_sketch(args):
    if args.action == "save":
        params = sample_params(args.seed, args.n, args.d[0])
        io.save_sketch(args.file, params)
        print(f"wrote {args.file}: n={params.n} d={params.d} seed={params.seed}")
    else:
        params = io.load_sketch(args.file)
        print(f"{args.file}: n={params.n} d={params.d} seed={params.seed} checksum ok")
    return 0


def cmd_export_attention(args):
    method = parse_method("mcb", args.d[0])
    spec = ModelSpec(method, use_attention=True, glimpses=args.glimpses, seed=args.seed)
    task = _grid_task(args)
    train_set, val_set, test_set = split_data(task, args.n_train, args.n_val, args.n_test,
                                              gen_grid_classification)
    result = train(spec, train_set, val_set, args.epochs, _train_config(args), args.classes)
    count = min(args.count, len(test_set))
    maps = result.model.attention_maps(test_set.x[:count], test_set.q[:count])
    salient = task.salient(test_set.x[:count], test_set.q[:count])
    hits = float(np.mean(np.argmax(maps[:, 0], axis=-1) == salient))
    print(f"glimpse-0 peak on the planted location for {hits:.1%} of {count} items")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        header = ("item", "glimpse", "location", "weight", "salient")
        rows = [(i, k, g, float(maps[i, k, g]), int(g == salient[i]))
                for i in range(count) for k in range(maps.shape[1]) for g in range(maps.shape[2])]
        io.write_csv(out / "attention.csv", header, rows)
        io.write_json(out / "attention.json", {
            "format": "mcbpool.attention", "version": io.REPORT_VERSION,
            "config": _config(args), "metrics": {"peak_on_salient": hits},
            "maps": maps, "salient": salient})
    return 0


def cmd_dataset(args):
    if args.kind == "grounding":
        task = default_grounding_task(args.task_seed, args.noise, args.n1, args.n2, args.proposals)
        data = split_data(task, args.count, 1, 1)[0]
    elif args.kind == "grid":
        data = gen_grid_classification(_grid_task(args), args.count)
    else:
        task = default_task(args.task_seed, args.noise, args.n1, args.n2, args.classes)
        data = split_data(task, args.count, 1, 1)[0]
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{args.kind}.jsonl"
    io.save_dataset(path, data)
    print(f"wrote {len(data)} items to {path}")
    return 0


def _add_common(p, seeds=False, methods=None):
    p.add_argument("--seed", type=_non_negative, default=0, help="model seed")
    p.add_argument("--task-seed", type=_non_negative, default=0, help="seed of the planted task")
    p.add_argument("--out", help="output directory")
    p.add_argument("--d", type=_d_list, default=[DEFAULT_D],
                   help="MCB size; ablate/ground accept a comma list (a d sweep)")
    p.add_argument("--epochs", type=_non_negative, default=100)
    p.add_argument("--batch-size", type=_positive, default=32)
    p.add_argument("--patience", type=_positive, default=15)
    p.add_argument("--n1", type=_positive, default=16)
    p.add_argument("--n2", type=_positive, default=16)
    p.add_argument("--classes", type=_positive, default=8)
    p.add_argument("--noise", type=float, default=0.02)
    p.add_argument("--n-train", type=_positive, default=4000)
    p.add_argument("--n-val", type=_positive, default=1000)
    p.add_argument("--n-test", type=_positive, default=1000)
    p.add_argument("--glimpses", type=_positive, default=1)
    if seeds:
        p.add_argument("--seeds", type=_seeds_arg, default=[1, 2, 3, 4, 5],
                       help='"1..5" or "1,2,3"')
    if methods:
        p.add_argument("--methods", type=_methods_arg, default=methods,
                       help="comma list of " + ", ".join(POOLING_TAGS) + " (aliases: sum, product, bilinear)")


def _add_normalization(p):
    norm = p.add_mutually_exclusive_group()
    norm.add_argument("--normalize", dest="normalization", action="store_const", const=True,
                      help="signed sqrt + L2 after pooling for every method")
    norm.add_argument("--no-normalize", dest="normalization", action="store_const", const=False,
                      help="no normalisation after pooling (default)")
    p.set_defaults(normalization=False)


def build_parser():
    parser = argparse.ArgumentParser(prog="mcbpool", description="Compact bilinear pooling toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("verify", help="run the self-verification suites")
    p.add_argument("--tolerance", type=float, help="override every error threshold")
    p.add_argument("--suite", action="append", choices=sorted(SUITES),
                   help="run only this suite (repeatable)")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("bench", help="time MCB against explicit bilinear pooling")
    p.add_argument("--n1", type=_positive, default=2048)
    p.add_argument("--n2", type=_positive, default=2048)
    p.add_argument("--d", type=_positive, default=16000)
    p.add_argument("--classes", type=_positive, default=3000)
    p.add_argument("--batch", type=_positive, default=16)
    p.add_argument("--repetitions", type=_positive, default=5)
    p.add_argument("--seed", type=_non_negative, default=0)
    p.add_argument("--out", help="output directory for bench.csv")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("train", help="train one model on the planted task")
    _add_common(p)
    p.add_argument("--pooling", default="mcb", type=lambda s: _methods_arg(s)[0])
    p.add_argument("--attention", action="store_true", help="use the grid task with attention")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("ablate", help="compare pooling methods over seeds")
    _add_common(p, seeds=True, methods=["mcb", "concat", "eltwise-sum"])
    p.add_argument("--budget-match", action="store_true",
                   help="size FC stacks of non-bilinear methods to the MCB parameter count")
    _add_normalization(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("ground", help="compare pooling methods on proposal ranking")
    _add_common(p, seeds=True, methods=["mcb", "concat"])
    p.add_argument("--proposals", type=_positive, default=8)
    _add_normalization(p)
    p.set_defaults(func=cmd_ground, n1=8, n2=8, noise=0.05)

    p = sub.add_parser("sketch", help="save or load count sketch parameters")
    p.add_argument("action", choices=("save", "load"))
    p.add_argument("file")
    p.add_argument("--n", type=_positive, default=16)
    p.add_argument("--d", type=_d_list, default=[DEFAULT_D])
    p.add_argument("--seed", type=_non_negative, default=0)
    p.set_defaults(func=cmd_sketch)

    p = sub.add_parser("export-attention", help="train an attention model and dump its maps")
    _add_common(p)
    p.add_argument("--count", type=_positive, default=20, help="test items to export")
    p.set_defaults(func=cmd_export_attention)

    p = sub.add_parser("dataset", help="write a planted dataset as JSON lines")
    _add_common(p)
    p.add_argument("--kind", choices=("classification", "grid", "grounding"), default="classification")
    p.add_argument("--count", type=_positive, default=100)
    p.add_argument("--proposals", type=_positive, default=8)
    p.set_defaults(func=cmd_dataset)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command in ("train", "export-attention", "sketch") and len(args.d) != 1:
        parser.error(f"argument --d: {args.command} takes a single value")
    try:
        return args.func(args)
    except (ConfigurationError, CorruptFileError, TrainingDivergedError, ValueError) as exc:
        print(f"mcbpool {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
