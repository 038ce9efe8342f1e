"""Command-line entry point: build-dataset, train, evaluate, explain, sweep.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from kgxrec.config import ConfigError, ExperimentConfig, load_config
from kgxrec.dataset import (
    Gazetteer,
    build_dataset,
    dataset_stats,
    read_interactions,
    read_metadata,
)
from kgxrec.graph import Item, ItemKG, Triple, UserHistory
from kgxrec.metrics import MetricsReport
from kgxrec.records import Example, RecordFormatError, read_records, to_examples, write_records
from kgxrec.training import (
    NumericError,
    VocabMismatchError,
    build_vocab,
    format_sweep,
    load_checkpoint,
    make_model,
    predict,
    prepare,
    sample_fraction,
    split_dataset,
    sweep_lambda,
    train,
)

log = logging.getLogger("kgxrec")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
MAX_MALFORMED_FRACTION = 0.10

_LEVELS = {"debug": logging.DEBUG, "info": logging.INFO, "warn": logging.WARNING,
           "warning": logging.WARNING, "error": logging.ERROR}


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _setup_logging() -> None:
    name = os.environ.get("KGXREC_LOG_LEVEL", "info").lower()
    if name not in _LEVELS:
        raise UsageError(f"KGXREC_LOG_LEVEL must be one of debug, info, warn, error (got {name!r})")
    logging.basicConfig(level=_LEVELS[name], format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr, force=True)


def _experiment(args) -> ExperimentConfig:
    overrides = list(getattr(args, "overrides", []) or [])
    for flag, key in (("seed", "seed"), ("epochs", "epochs"), ("out", "out"),
                      ("beam", "beam"), ("eval_fraction", "eval_fraction")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides.append(f"{key}={value}")
    try:
        return load_config(args.config, overrides)
    except OSError as exc:
        raise UsageError(f"cannot read config: {exc}") from None


def _load_splits(cfg: ExperimentConfig):
    if not cfg.dataset:
        raise UsageError("no dataset configured (set dataset=... in the config)")
    try:
        records = read_records(cfg.dataset)
    except (OSError, RecordFormatError) as exc:
        raise DataError(str(exc)) from None
    if not records:
        raise DataError(f"{cfg.dataset}: no records")
    if cfg.train.train_ratio >= 1.0:
        splits = (records, [], [])
    else:
        try:
            splits = split_dataset(records, cfg.train.ratios, cfg.train.seed)
        except ValueError as exc:
            raise DataError(str(exc)) from None
    examples = [to_examples(s, history_source=records, max_user_size=64) if s else [] for s in splits]
    if not examples[0]:
        raise DataError("training split has no usable examples")
    return examples


# -- subcommands -----------------------------------------------------------


def cmd_build_dataset(args) -> int:
    try:
        meta, bad_meta = read_metadata(args.metadata)
        inter, bad_inter = read_interactions(args.interactions)
        gaz = Gazetteer.from_file(args.gazetteer)
    except (OSError, ValueError) as exc:
        raise DataError(str(exc)) from None
    for what, rows, bad in (("metadata", meta, bad_meta), ("interaction", inter, bad_inter)):
        total = len(rows) + bad
        if bad:
            log.warning("skipped %d malformed %s line(s) of %d", bad, what, total)
        if total and bad / total > MAX_MALFORMED_FRACTION:
            raise DataError(f"{bad}/{total} malformed {what} lines exceeds {MAX_MALFORMED_FRACTION:.0%}")
    records, dropped = build_dataset(meta, inter, gaz)
    if dropped:
        log.warning("dropped %d item(s) without entities", len(dropped))
    if not records:
        raise DataError("no records produced")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    try:
        write_records(out, records)
    except RecordFormatError as exc:
        raise DataError(str(exc)) from None
    stats = dataset_stats(records)
    sidecar = out.with_name(out.name + ".stats.json")
    sidecar.write_text(json.dumps({**stats.to_dict(), "dropped_items": len(dropped),
                                   "malformed_metadata": bad_meta,
                                   "malformed_interactions": bad_inter}, indent=2) + "\n",
                       encoding="utf-8")
    print(f"wrote {len(records)} records to {out} ({len(dropped)} items dropped)")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _experiment(args)
    train_ex, valid_ex, _ = _load_splits(cfg)
    vocab = build_vocab(train_ex)
    mcfg = replace(cfg.model, vocab_size=len(vocab))
    train_items = prepare(train_ex, vocab, mcfg.max_explanation_len)
    valid_items = prepare(valid_ex, vocab, mcfg.max_explanation_len) if valid_ex else None
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text("\n".join(cfg.to_lines()) + "\n", encoding="utf-8")
    model = make_model(mcfg, cfg.train.seed)
    result = train(model, cfg.train, train_items, vocab, valid_items, out)
    print(f"trained {result.steps} steps; best checkpoint {result.best}")
    return EXIT_OK


def _resolve_checkpoint(args, cfg: ExperimentConfig | None) -> Path:
    if args.checkpoint:
        return Path(args.checkpoint)
    if cfg is None:
        raise UsageError("--checkpoint is required")
    marker = Path(cfg.out) / "best_checkpoint.txt"
    if not marker.exists():
        raise DataError(f"{marker} not found; train first or pass --checkpoint")
    return Path(cfg.out) / "checkpoints" / marker.read_text(encoding="utf-8").strip()


def _load(path: Path):
    try:
        return load_checkpoint(path)
    except VocabMismatchError as exc:
        raise DataError(str(exc)) from None
    except (OSError, RuntimeError, KeyError, ValueError) as exc:
        raise DataError(f"cannot load checkpoint {path}: {exc}") from None


def cmd_evaluate(args) -> int:
    cfg = _experiment(args)
    model, vocab, _ = _load(_resolve_checkpoint(args, cfg))
    splits = dict(zip(("train", "valid", "test"), _load_splits(cfg)))
    examples = splits[args.split]
    if not examples:
        raise DataError(f"split {args.split!r} is empty")
    examples = sample_fraction(examples, cfg.train.eval_fraction, cfg.train.seed)
    items = prepare(examples, vocab, model.cfg.max_explanation_len)
    report = predict(model, items, vocab, cfg.train.beam).report()
    print(MetricsReport.header())
    print(report.to_tsv())
    print()
    print(report.table())
    return EXIT_OK


def _parse_kg(spec: str, center_id: str = "query") -> ItemKG:
    triples = []
    for chunk in spec.split(";"):
        parts = chunk.split("|")
        if len(parts) != 3:
            raise DataError(f"bad triple {chunk!r}; expected head|relation|tail")
        triples.append(parts)
    heads = {h for h, _, _ in triples}
    if len(heads) != 1:
        raise DataError(f"triples have several heads: {sorted(heads)}")
    center = Item(center_id, triples[0][0])
    return ItemKG(center, tuple(Triple(center, r, t) for _, r, t in triples))


def cmd_explain(args) -> int:
    model, vocab, _ = _load(Path(args.checkpoint))
    try:
        names = [n for n in args.user.split(";") if n.strip()]
        user = UserHistory("query", tuple(Item(f"p{i}", n) for i, n in enumerate(names)))
        kg = _parse_kg(args.kg)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    ex = Example(user, kg, 1.0, "")
    items = prepare([ex], vocab, model.cfg.max_explanation_len)
    preds = predict(model, items, vocab, args.beam)
    print(f"rating\t{preds.ratings[0]:.4f}")
    print(f"explanation\t{preds.candidates[0]}")
    return EXIT_OK


def _parse_grid(text: str) -> list[tuple[float, float]]:
    grid = []
    for pair in text.split(","):
        try:
            r, e = pair.split(":")
            grid.append((float(r), float(e)))
        except ValueError:
            raise UsageError(f"bad grid entry {pair!r}; expected lambda_r:lambda_e") from None
    return grid


def cmd_sweep(args) -> int:
    cfg = _experiment(args)
    grid = _parse_grid(args.grid)
    train_ex, valid_ex, _ = _load_splits(cfg)
    vocab = build_vocab(train_ex)
    mcfg = replace(cfg.model, vocab_size=len(vocab))
    train_items = prepare(train_ex, vocab, mcfg.max_explanation_len)
    valid_items = prepare(valid_ex, vocab, mcfg.max_explanation_len) if valid_ex else None
    rows = sweep_lambda(mcfg, grid, cfg.train, train_items, vocab, valid_items)
    text = format_sweep(rows)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "sweep.tsv").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="kgxrec", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    b = sub.add_parser("build-dataset", help="extract item KGs and explanations from descriptions")
    b.add_argument("metadata", help="item_id<TAB>name<TAB>description file")
    b.add_argument("gazetteer", help="surface<TAB>entity_id<TAB>type file")
    b.add_argument("--interactions", required=True, help="user_id<TAB>item_id<TAB>rating file")
    b.add_argument("--out", required=True, help="output dataset record file")
    b.set_defaults(func=cmd_build_dataset)

    def experiment_flags(sp, epochs=True):
        sp.add_argument("--config", help="key=value config file")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out")
        if epochs:
            sp.add_argument("--epochs", type=int)
        sp.add_argument("overrides", nargs="*", metavar="key=value")

    t = sub.add_parser("train", help="train a model")
    experiment_flags(t)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="score a checkpoint on a split")
    experiment_flags(e, epochs=False)
    e.add_argument("--checkpoint", help="checkpoint directory (default: best of the run in --out)")
    e.add_argument("--split", choices=("train", "valid", "test"), default="test")
    e.add_argument("--beam", type=int)
    e.add_argument("--eval-fraction", dest="eval_fraction", type=float)
    e.set_defaults(func=cmd_evaluate)

    x = sub.add_parser("explain", help="rate and explain one user-item pair")
    x.add_argument("--checkpoint", required=True)
    x.add_argument("--user", required=True, help="purchased item names separated by ';'")
    x.add_argument("--kg", required=True, help="triples head|relation|tail separated by ';'")
    x.add_argument("--beam", type=int, default=5)
    x.set_defaults(func=cmd_explain)

    s = sub.add_parser("sweep", help="train one model per (lambda_r, lambda_e) pair")
    experiment_flags(s)
    s.add_argument("--grid", default="0.01:1", help="comma-separated lambda_r:lambda_e pairs")
    s.add_argument("--beam", type=int)
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _setup_logging()
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"kgxrec: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"kgxrec: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, FloatingPointError) as exc:
        print(f"kgxrec: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
