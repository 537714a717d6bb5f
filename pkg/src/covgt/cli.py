"""Command-line entry point: ``covgt <subcommand> ...``.

Exit codes: 0 success, 2 invalid input or configuration, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

from .config import dump_config, load_config, reference_markdown
from .data.featurepack import read_header
from .data.synthetic import SyntheticWorldSpec, generate_synthetic_dataset
from .data.workspace import load_workspace, write_workspace
from .errors import ConfigError, CovgtError
from .gradcheck import gradcheck, tiny_config
from .plotting import plot_per_type, plot_training_curves
from .scoring import write_predictions
from .training import DECISIONS, Checkpoint, decision_for, evaluate, predict, pretrain, train, write_metric_log

log = logging.getLogger("covgt")


def _world_spec(pairs: list[str]) -> SyntheticWorldSpec:
    known = {f.name: f for f in fields(SyntheticWorldSpec)}
    values = {}
    for pair in pairs:
        key, _, raw = pair.partition("=")
        if key not in known or not raw:
            raise ConfigError(f"--world expects key=value with key in {sorted(known)}, got {pair!r}")
        default = known[key].default
        if isinstance(default, tuple):
            values[key] = tuple(type(default[0])(x) for x in raw.split(","))
        else:
            values[key] = type(default)(raw)
    return SyntheticWorldSpec(**values)


def _corpus(args, model_cfg):
    return load_workspace(args.workspace, model_cfg.n, model_cfg.k, model_cfg.l_c, model_cfg.gamma)


def _rows_text(rows: list[list], header: list[str]) -> str:
    lines = ["\t".join(header)]
    lines += ["\t".join(f"{v:.4f}" if isinstance(v, float) else str(v) for v in r) for r in rows]
    return "\n".join(lines) + "\n"


def _print_rows(rows: list[list], header: list[str]) -> None:
    print(_rows_text(rows, header), end="")


def cmd_prepare(args) -> int:
    spec = _world_spec(args.world)
    sizes = {"train": args.train, "val": args.val}
    if args.test:
        sizes["test"] = args.test
    ds = generate_synthetic_dataset(spec, sizes, args.seed, open_ended=args.open_ended)
    root = write_workspace(ds, args.out)
    _print_rows([[k, len(v)] for k, v in sorted(ds.samples.items())], ["split", "questions"])
    print(f"# {len(ds.packs)} videos written to {root}; text-only prior accuracy {ds.leak_accuracy:.3f}")
    return 0


def _write_run(out: Path, result, name: str) -> None:
    out.mkdir(parents=True, exist_ok=True)
    result.checkpoint.save(out / f"{name}.pt")
    write_metric_log(result.history, out / "metrics.tsv")
    plot_training_curves(result.history, out / "curves.png")


def cmd_train(args) -> int:
    model_cfg, train_cfg = load_config(args.config, args.set)
    corpus = _corpus(args, model_cfg)
    init = Checkpoint.load(args.init).model_state if args.init else None
    result = train(model_cfg, train_cfg, corpus, init_state=init)
    out = Path(args.out)
    _write_run(out, result, "checkpoint")
    (out / "config.txt").write_text(dump_config(model_cfg, train_cfg), encoding="utf-8")
    _print_rows([[r["stage"], r["epoch"], r["train_loss"], r.get("val_acc", float("nan"))] for r in result.history],
                ["stage", "epoch", "train_loss", "val_acc"])
    print(f"# best validation accuracy {result.best_val:.4f} (stage {result.best_stage}); outputs in {out}")
    return 0


def cmd_pretrain(args) -> int:
    model_cfg, train_cfg = load_config(args.config, args.set)
    corpus = _corpus(args, model_cfg)
    result = pretrain(model_cfg, train_cfg, corpus)
    out = Path(args.out)
    _write_run(out, result, "pretrained")
    _print_rows([[r["epoch"], r["train_loss"]] for r in result.history], ["epoch", "train_loss"])
    return 0


def cmd_eval(args) -> int:
    ckpt = Checkpoint.load(args.checkpoint)
    model = ckpt.build_model()
    cfg = model.cfg
    corpus = load_workspace(args.workspace, cfg.n, cfg.k, cfg.l_c, cfg.gamma)
    report = evaluate(model, corpus, args.split, decision=args.decision or decision_for(ckpt.train_config))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"report_{args.split}.json").write_text(json.dumps(report, indent=2, sort_keys=True), encoding="utf-8")
    plot_per_type(report, out / f"per_type_{args.split}.png")
    rows = [[t, v["count"], v["accuracy"]] for t, v in report["per_type"].items()]
    rows.append(["overall", report["count"], report["accuracy"]])
    text = _rows_text(rows, ["type", "count", "accuracy"])
    (out / f"report_{args.split}.tsv").write_text(text, encoding="utf-8")
    print(text, end="")
    return 0


def cmd_predict(args) -> int:
    ckpt = Checkpoint.load(args.checkpoint)
    model = ckpt.build_model()
    cfg = model.cfg
    corpus = load_workspace(args.workspace, cfg.n, cfg.k, cfg.l_c, cfg.gamma)
    preds = predict(model, corpus, args.split, decision=args.decision or decision_for(ckpt.train_config))
    write_predictions(args.out, [(s.qid, p) for s, p in preds])
    print(f"# {len(preds)} predictions written to {args.out}")
    return 0


def cmd_gradcheck(args) -> int:
    report = gradcheck(tiny_config(), seed=args.seed, tolerance=args.tolerance)
    print("group\trel_error\tstatus")
    for line in report.lines():
        print(line)
    if not report.passed:
        print(f"error: gradient check failed for: {', '.join(report.failed)}", file=sys.stderr)
        return 3
    return 0


def cmd_inspect(args) -> int:
    print(json.dumps(read_header(args.path), indent=2, sort_keys=True))
    return 0


def cmd_reference(args) -> int:
    text = reference_markdown()
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="covgt", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("--workspace", required=True, help="directory made by prepare-synthetic")
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
        p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("prepare-synthetic", help="generate a synthetic workspace")
    p.add_argument("--out", required=True)
    p.add_argument("--train", type=int, default=2000)
    p.add_argument("--val", type=int, default=500)
    p.add_argument("--test", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--open-ended", action="store_true", help="global answer set instead of 5 candidates")
    p.add_argument("--world", action="append", default=[], metavar="KEY=VALUE",
                   help="generator setting, e.g. item_bias=1.5")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="two-stage training")
    with_config(p)
    p.add_argument("--init", help="checkpoint to initialize from (e.g. from pretrain)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("pretrain", help="caption contrastive + MLM pretraining")
    with_config(p)
    p.set_defaults(func=cmd_pretrain)

    for name, func, help_ in (("eval", cmd_eval, "accuracy report with per-type breakdown"),
                              ("predict", cmd_predict, "write JSONL predictions")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--workspace", required=True)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--split", default="val")
        p.add_argument("--decision", choices=DECISIONS,
                       help="open-ended decision rule (default: joint unless trained with use_qa_shortcut=false)")
        p.add_argument("--out", required=True, help="output directory (eval) or JSONL file (predict)")
        p.set_defaults(func=func)

    p = sub.add_parser("gradcheck", help="finite-difference gradient check on the tiny config")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("inspect-pack", help="print a feature pack header")
    p.add_argument("path")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("config-reference", help="print or write the config key reference")
    p.add_argument("--out")
    p.set_defaults(func=cmd_reference)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except CovgtError as exc:
        code = getattr(exc, "code", None)
        print(f"error{f' [{code}]' if code else ''}: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
