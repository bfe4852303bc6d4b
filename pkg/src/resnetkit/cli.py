"""Command-line front end: build, summarize, count, verify-tables, train, eval, gradcheck.

Exit codes: 0 success, 1 verification or threshold failure, 2 usage or
input error. Stdout is line-oriented and stable for scripting.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import analyzer, engine
from .graph import GraphError
from .networks import (
    ArchFormatError,
    InitPolicy,
    NotExecutableError,
    build,
    load_arch,
    lower_to_executable,
    save_arch,
)
from .trainer import (
    DataFormatError,
    TrainConfig,
    TrainingDiverged,
    evaluate,
    load_cifar,
    synthetic_dataset,
    train,
)

_USAGE_ERRORS = (
    ValueError,
    GraphError,
    ArchFormatError,
    NotExecutableError,
    DataFormatError,
    engine.CheckpointError,
    OSError,
)


def _fmt_params(count: int) -> str:
    return f"{count / 1e6:.2f}M"


def _parse_shape(text: str) -> tuple:
    try:
        dims = tuple(int(p) for p in text.lower().split("x"))
    except ValueError:
        raise ValueError(f"bad shape {text!r}: expected like 3x224x224") from None
    if len(dims) not in (3, 4) or any(d < 1 for d in dims):
        raise ValueError(f"bad shape {text!r}: expected CxHxW or CxTxHxW of positive ints")
    return dims


def cmd_build(args) -> int:
    graph = build(args.family, args.variant, args.depth, args.classes)
    save_arch(graph, args.out)
    census = analyzer.component_census(graph)
    census_text = " ".join(f"{k}={v}" for k, v in sorted(census.items()))
    print(
        f"wrote {args.out}: family={args.family} variant={args.variant} depth={args.depth} "
        f"classes={graph.classes} params={_fmt_params(analyzer.count_params(graph))} {census_text}"
    )
    return 0


def cmd_summarize(args) -> int:
    graph = load_arch(args.arch)
    meta = graph.meta
    print(f"family={meta.get('family')} variant={meta.get('variant')} depth={meta.get('depth')}")
    print(f"classes={graph.classes} input_shape={'x'.join(str(d) for d in graph.input_shape)}")
    print(f"nodes={len(graph.nodes)} executable={str(graph.executable).lower()}")
    print(f"params={analyzer.count_params(graph)} ({_fmt_params(analyzer.count_params(graph))})")
    census = analyzer.component_census(graph)
    print("census: " + " ".join(f"{k}={v}" for k, v in sorted(census.items())))
    print(f"main_path_relus={analyzer.main_path_relu_count(graph)}")
    print(f"weighted_layers={analyzer.weighted_layer_count(graph)}")
    return 0


def cmd_count(args) -> int:
    graph = load_arch(args.arch)
    shape = _parse_shape(args.input)
    report = analyzer.count_report(graph, shape)
    if args.format == "csv":
        print("node,params,flops")
        for nid in report.per_node_params:
            print(f"{nid},{report.per_node_params[nid]},{report.per_node_flops[nid]}")
        print(f"total,{report.total_params},{report.total_flops}")
    else:
        print(f"input={'x'.join(str(d) for d in shape)}")
        print(f"params={report.total_params} ({_fmt_params(report.total_params)})")
        print(f"flops={report.total_flops} ({report.total_flops / 1e9:.2f}G)")
        print("census: " + " ".join(f"{k}={v}" for k, v in sorted(report.census.items())))
        print(f"main_path_relus={report.main_path_relus}")
    return 0


def cmd_verify_tables(args) -> int:
    report = analyzer.verify_tables()
    print(report.format_text())
    if args.csv:
        Path(args.csv).write_text(report.to_csv())
        print(f"wrote {args.csv}")
    return 0 if report.all_pass else 1


def cmd_train(args) -> int:
    overrides = {
        "epochs": args.epochs,
        "seed": args.seed,
        "data_dir": args.data_dir,
        "train_subset": args.subset,
    }
    config = TrainConfig.from_json(Path(args.config).read_text(), **overrides)
    result = train(config, out_dir=args.out_dir)
    if result.history.records:
        last = result.history.records[-1]
        print(
            f"trained {config.variant}-{config.depth} for {config.epochs} epochs: "
            f"train_loss={last.train_loss:.4f} train_top1={last.train_top1:.4f} "
            f"val_top1={last.val_top1:.4f}"
        )
    else:
        print(f"trained {config.variant}-{config.depth} for 0 epochs: init checkpoint only")
    if result.out_dir is not None:
        print(f"history={result.out_dir / 'history.csv'} checkpoint={result.out_dir / 'last.irnf'}")
    return 0


def cmd_eval(args) -> int:
    graph = load_arch(args.arch)
    model = lower_to_executable(graph)
    model.load(args.checkpoint)
    if args.dataset == "synthetic":
        dataset = synthetic_dataset(graph.classes, args.subset or 500, seed=args.seed)
    else:
        which = 10 if args.dataset == "cifar10" else 100
        if not args.data_dir:
            raise ValueError(f"dataset {args.dataset} needs --data-dir")
        _, dataset = load_cifar(args.data_dir, which)
        if args.subset:
            dataset = dataset.subset(args.subset)
    top1, top5 = evaluate(model, dataset)
    top5_text = f" top5_err={top5:.4f}" if top5 is not None else ""
    print(f"samples={len(dataset)} top1_err={top1:.4f}{top5_text}")
    return 0


def cmd_gradcheck(args) -> int:
    graph = load_arch(args.arch)
    model = lower_to_executable(graph, InitPolicy(seed=args.seed, dtype="float64"))
    rng = np.random.default_rng(args.seed)
    x = rng.standard_normal((args.batch,) + graph.input_shape)
    labels = rng.integers(0, graph.classes, size=args.batch)
    model.train()

    def run():
        tape = engine.Tape()
        logits = model.forward(x, tape, update_stats=False)
        return tape, engine.softmax_cross_entropy(tape, logits, labels)

    params = model.parameters()
    if args.samples and args.samples < len(params):
        pick = rng.choice(len(params), size=args.samples, replace=False)
        params = [params[i] for i in sorted(pick)]
    worst = engine.finite_diff_check(run, params, epsilon=args.epsilon, samples_per_param=3)
    print(f"checked {len(params)} parameters: worst_rel_error={worst:.3e} threshold={args.threshold:.1e}")
    return 0 if worst < args.threshold else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="resnetkit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build", help="construct an architecture and write it to disk")
    p.add_argument("--family", required=True, choices=("imagenet", "cifar", "video3d"))
    p.add_argument("--variant", required=True)
    p.add_argument("--depth", required=True, type=int)
    p.add_argument("--classes", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_build)

    p = sub.add_parser("summarize", help="print the census of a stored architecture")
    p.add_argument("--arch", required=True)
    p.set_defaults(fn=cmd_summarize)

    p = sub.add_parser("count", help="parameter/FLOP report at a given input size")
    p.add_argument("--arch", required=True)
    p.add_argument("--input", required=True, help="CxHxW or CxTxHxW, e.g. 3x224x224")
    p.add_argument("--format", choices=("text", "csv"), default="text")
    p.set_defaults(fn=cmd_count)

    p = sub.add_parser("verify-tables", help="check the embedded golden complexity tables")
    p.add_argument("--csv", default=None, help="also write the report as CSV")
    p.set_defaults(fn=cmd_verify_tables)

    p = sub.add_parser("train", help="run the desk-scale training recipe from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", default=None)
    p.add_argument("--epochs", type=int, default=None, help="override the config file")
    p.add_argument("--seed", type=int, default=None, help="override the config file")
    p.add_argument("--data-dir", default=None, help="override the config file")
    p.add_argument("--subset", type=int, default=None, help="override the train subset size")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--arch", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", choices=("synthetic", "cifar10", "cifar100"), default="synthetic")
    p.add_argument("--data-dir", default=None)
    p.add_argument("--subset", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of an executable architecture")
    p.add_argument("--arch", required=True)
    p.add_argument("--samples", type=int, default=0, help="parameter tensors to sample (0 = all)")
    p.add_argument("--batch", type=int, default=2)
    p.add_argument("--epsilon", type=float, default=1e-7)
    p.add_argument("--threshold", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code in (0, None) else 2
    engine.configure_allocator()
    try:
        return args.fn(args)
    except TrainingDiverged as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except _USAGE_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
