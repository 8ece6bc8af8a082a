"""Command-line entry point: preprocess, synth, train, evaluate, ablate, gradcheck.

Exit codes: 0 success, 2 usage/config error, 3 data error, 4 numerical check failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import data
from .baselines import ItemKNNRecommender, PopRecommender, SPopRecommender
from .estimator import FGNNRecommender
from .evaluation import DEFAULT_KS, evaluate, evaluate_by_length, format_table
from .exceptions import FGNNError, UsageError
from .gradcheck import toy_gradcheck
from .readout import READOUTS
from .train import TrainingConfig
from .validation import examples_to_xy

logger = logging.getLogger("fgnn")

TRAIN_KEYS = tuple(TrainingConfig.__dataclass_fields__)


def read_config_file(path) -> dict:
    """Flat ``key = value`` text; ``#`` starts a comment."""
    values = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from None
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise UsageError(f"{path}:{lineno}: empty key")
        values[key] = value
    return values


def write_config_echo(out: Path, values: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    lines = [f"{k} = {_fmt(v)}" for k, v in sorted(values.items())]
    (out / "config.echo").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ",".join(_fmt(v) for v in value)
    return str(value)


def resolve_training_config(args) -> TrainingConfig:
    values = read_config_file(args.config) if args.config else {}
    for key in values:
        if key not in TRAIN_KEYS:
            raise UsageError(f"unknown config key {key!r}")
    for item in args.set or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        values[key.strip()] = value.strip()
    if args.seed is not None:
        values["seed"] = str(args.seed)
    if getattr(args, "epochs", None) is not None:
        values["epochs"] = str(args.epochs)
    return TrainingConfig.from_dict(values)


# ---------------------------------------------------------------- commands


def cmd_preprocess(args) -> int:
    out = Path(args.out)
    source = Path(args.input)
    if not source.is_file():
        raise data.DataError(f"input file {source} does not exist")
    dataset = data.preprocess(source, args.format, args.min_item_support, args.min_session_len,
                              args.test_fraction, args.train_recency_fraction)
    write_config_echo(out, {"command": "preprocess", "input": str(source), "format": args.format,
                            "min_item_support": args.min_item_support,
                            "min_session_len": args.min_session_len, "test_fraction": args.test_fraction,
                            "train_recency_fraction": args.train_recency_fraction})
    data.save_dataset(dataset, out)
    (out / "stats.json").write_text(json.dumps(dataset.stats, indent=2, sort_keys=True) + "\n",
                                    encoding="utf-8")
    print(json.dumps(dataset.stats, sort_keys=True))
    return 0


def cmd_synth(args) -> int:
    out = Path(args.out)
    sessions = data.synth_generate(args.n_items, args.n_sessions, (args.min_len, args.max_len),
                                   args.concentration, args.seed)
    write_config_echo(out, {"command": "synth", "n_items": args.n_items, "n_sessions": args.n_sessions,
                            "min_len": args.min_len, "max_len": args.max_len,
                            "concentration": args.concentration, "seed": args.seed})
    path = out / "clicks.csv"
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(data.sessions_to_csv(sessions))
    print(path)
    return 0


def cmd_train(args) -> int:
    config = resolve_training_config(args)
    out = Path(args.out)
    dataset = data.load_dataset(args.dataset)
    write_config_echo(out, {"command": "train", "dataset": args.dataset, **config.to_dict()})
    est = FGNNRecommender(**{k: v for k, v in config.to_dict().items()
                             if k in FGNNRecommender().get_params()})
    est.set_params(n_items=dataset.n_items)
    log_path = out / "metrics.jsonl"
    eval_set = dataset.test_examples if args.eval and dataset.test_examples else None
    with open(log_path, "w", encoding="utf-8") as log:
        def on_epoch(entry):
            entry = {k: v for k, v in entry.items() if k != "seconds"}
            log.write(json.dumps(entry, sort_keys=True) + "\n")
            log.flush()
            print(json.dumps(entry, sort_keys=True))

        if dataset.train_examples:
            est.fit_examples(dataset.train_examples, eval_set=eval_set, on_epoch=on_epoch)
        else:
            raise UsageError("dataset has no training examples")
    est.save(out / "model.ckpt")
    return 0


def _baselines(dataset, reg: float):
    X, y = examples_to_xy(dataset.train_examples)
    m = dataset.n_items
    return [PopRecommender(n_items=m).fit(X, y), SPopRecommender(n_items=m).fit(X, y),
            ItemKNNRecommender(reg=reg, n_items=m).fit(X, y)]


def _emit(out: Path, reports, name: str) -> None:
    out.mkdir(parents=True, exist_ok=True)
    table = format_table(reports)
    (out / f"{name}.jsonl").write_text("".join(r.to_jsonl() for r in reports), encoding="utf-8")
    (out / f"{name}.txt").write_text(table, encoding="utf-8")
    print(table, end="")


def cmd_evaluate(args) -> int:
    ckpt = Path(args.checkpoint)
    if not ckpt.is_file():
        raise data.DataError(f"checkpoint {ckpt} does not exist")
    dataset = data.load_dataset(args.dataset)
    ks = tuple(int(k) for k in args.ks.split(","))
    out = Path(args.out)
    write_config_echo(out, {"command": "evaluate", "checkpoint": str(ckpt), "dataset": args.dataset,
                            "ks": ks, "knn_reg": args.knn_reg})
    model = FGNNRecommender.load(ckpt)
    if model.n_items_ != dataset.n_items:
        raise data.DataError(f"checkpoint has {model.n_items_} items but dataset has {dataset.n_items}")
    rankers = [model] + _baselines(dataset, args.knn_reg)
    _emit(out, [evaluate(r, dataset.test_examples, ks) for r in rankers], "report")
    return 0


def cmd_ablate(args) -> int:
    config = resolve_training_config(args)
    dataset = data.load_dataset(args.dataset)
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    for v in variants:
        if v not in READOUTS:
            raise UsageError(f"unknown readout variant {v!r}; expected one of {READOUTS}")
    out = Path(args.out)
    write_config_echo(out, {"command": "ablate", "dataset": args.dataset, "variants": variants,
                            **config.to_dict()})
    X, y = examples_to_xy(dataset.train_examples)
    reports, by_length = [], []
    for variant in variants:
        params = {k: v for k, v in config.to_dict().items() if k in FGNNRecommender().get_params()}
        params.update(readout=variant, n_items=dataset.n_items)
        est = FGNNRecommender(**params).fit(X, y)
        name = f"FGNN-{variant}"
        reports.append(evaluate(est, dataset.test_examples, DEFAULT_KS, name))
        by_length.extend(evaluate_by_length(est, dataset.test_examples, DEFAULT_KS, name).values())
    _emit(out, reports, "ablation")
    _emit(out, by_length, "ablation_by_length")
    return 0


def cmd_gradcheck(args) -> int:
    dims = dict(n_items=args.items, dim=args.dim, layers=args.layers, heads=args.heads, steps=args.steps)
    failed = False
    for readout in args.readouts.split(","):
        report = toy_gradcheck(readout=readout.strip(), seed=args.seed, init_std=args.init_std,
                               tolerance=args.tolerance, **dims)
        print(f"{readout}: {report.summary()}")
        failed |= not report.passed
    return 4 if failed else 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fgnn", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed_default=None):
        p.add_argument("--seed", type=int, default=seed_default)
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("preprocess", help="click log -> filtered, augmented train/test split")
    common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--format", default="canonical", choices=data.FORMATS)
    p.add_argument("--min-item-support", type=int, default=5)
    p.add_argument("--min-session-len", type=int, default=2)
    p.add_argument("--test-fraction", type=float, default=0.1)
    p.add_argument("--train-recency-fraction", type=float, default=1.0)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("synth", help="write a synthetic Markov-chain click log as canonical CSV")
    common(p, seed_default=0)
    p.add_argument("--n-items", type=int, default=50)
    p.add_argument("--n-sessions", type=int, default=2000)
    p.add_argument("--min-len", type=int, default=2)
    p.add_argument("--max-len", type=int, default=10)
    p.add_argument("--concentration", type=float, default=0.04)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train FGNN on a processed dataset")
    common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    p.add_argument("--eval", action="store_true", help="log test R@20/MRR@20 every epoch")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="R@K/MRR@K for a checkpoint and the baselines")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--ks", default="5,10,20")
    p.add_argument("--knn-reg", type=float, default=20.0)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="train each readout variant under one seed and compare")
    common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--variants", default="set2set,mean,sum,max")
    p.add_argument("--epochs", type=int)
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference check of every parameter gradient")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--items", type=int, default=6)
    p.add_argument("--dim", type=int, default=8)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--heads", type=int, default=2)
    p.add_argument("--steps", type=int, default=2)
    p.add_argument("--init-std", type=float, default=0.1)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--readouts", default=",".join(READOUTS))
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except FGNNError as exc:
        print(f"fgnn {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (ValueError, IndexError) as exc:
        print(f"fgnn {args.command}: error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
