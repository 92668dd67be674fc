"""Command-line interface.

Exit codes: 0 success, 1 usage or config error, 2 data/validation error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import ablation, store as store_io
from .autodiff import NumericsError
from .config import ConfigError, default_lines, load_config, validate_run_config
from .evaluation import evaluate, write_report
from .gradcheck import run_suite
from .model import ItemVocab, Recommender
from .store import LogError, StoreError
from .synth import generate_caption_catalog, generate_catalog, generate_interactions
from .training import (GridCell, file_sha256, grid_search, manifest_lines,
                       split_leave_one_out, train)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


def build_parser():
    parser = _Parser(prog="dffrec", description=__doc__)
    parser.add_argument("--print-defaults", action="store_true",
                        help="print the full config schema with defaults and exit")
    sub = parser.add_subparsers(dest="command")

    def add(name, help_text, needs_config=True):
        p = sub.add_parser(name, help=help_text)
        if needs_config:
            p.add_argument("--config", required=True, help="key-value config file")
            p.add_argument("--seed", type=int, default=None, help="override config seed")
        return p

    add("synth", "generate a synthetic store + interaction log")
    v = sub.add_parser("validate", help="check a feature store, optionally against a log")
    v.add_argument("--store", required=True)
    v.add_argument("--log", default=None)
    add("train", "train a model (grid search if grids are configured)")
    e = add("eval", "evaluate a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--phase", choices=("val", "test"), default="test")
    ls = add("layer-sweep", "train one arm per feature layer plus the uniform average")
    ls.add_argument("--jobs", type=int, default=1)
    sm = add("strategy-matrix", "train {id_only,replacement,fusion} x {store,caption}")
    sm.add_argument("--jobs", type=int, default=1)
    add("dff", "train learned-weight fusion and export the layer mix")
    g = sub.add_parser("gradcheck", help="finite-difference check of every op and the composed model")
    g.add_argument("--seed", type=int, default=0)
    return parser


def _load(args):
    config = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        config.seed = args.seed
    validate_run_config(config)
    return config


def _read_store(path):
    if not path:
        raise ConfigError("config key 'store' is required for this command")
    return store_io.read_store(path)


def _read_log(path):
    if not path:
        raise ConfigError("config key 'log' is required for this command")
    return store_io.read_interaction_log(path)


def _prepare(config):
    store = _read_store(config.store)
    log = _read_log(config.log)
    report = store_io.validate_store(store, log)
    if not report.is_clean:
        raise StoreError("; ".join(report.lines()))
    vocab = ItemVocab(np.asarray(store.ids))
    split = split_leave_one_out(log, vocab)
    return store, log, vocab, split


def cmd_synth(args):
    config = _load(args)
    spec = config.synth
    spec.validate()
    if not config.store or not config.log:
        raise ConfigError("synth requires config keys 'store' and 'log' as output paths")
    for path in (config.store, config.log, config.caption_store):
        if path:
            Path(path).parent.mkdir(parents=True, exist_ok=True)
    header, items = generate_catalog(spec, config.seed)
    store_io.write_store(config.store, header, items)
    store = store_io.read_store(config.store)
    log = generate_interactions(spec, store, config.seed)
    store_io.write_interaction_log(config.log, log)
    print(f"wrote {store.num_items} items -> {config.store}")
    print(f"wrote {log.num_events} events for {log.num_users} users -> {config.log}")
    if config.caption_store:
        cap_header, cap_items = generate_caption_catalog(spec, config.seed)
        store_io.write_store(config.caption_store, cap_header, cap_items)
        print(f"wrote caption view -> {config.caption_store}")
    return EXIT_OK


def cmd_validate(args):
    store = store_io.read_store(args.store)
    log = store_io.read_interaction_log(args.log) if args.log else None
    report = store_io.validate_store(store, log)
    for line in report.lines():
        print(line)
    return EXIT_OK if report.is_clean else EXIT_DATA


def cmd_train(args):
    config = _load(args)
    store, log, vocab, split = _prepare(config)
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    if config.schedule.lr_grid or config.schedule.dim_grid:
        grid = grid_search(split, store, config.model, config.schedule,
                           seed=config.seed, exclude_seen=config.exclude_seen)
        result, best_cell, cells = grid.best, grid.best_cell, grid.cells
    else:
        result = train(split, store, config.model, config.schedule,
                       seed=config.seed, exclude_seen=config.exclude_seen)
        best_cell = GridCell(config.schedule.learning_rate, config.model.dim,
                             result.best_epoch, result.best_val_hr10)
        cells = [best_cell]

    ckpt = out_dir / "checkpoint.dffc"
    result.model.save_checkpoint(ckpt)
    lines = manifest_lines(config.seed, result.model.config, config.schedule,
                           file_sha256(config.store), split.content_hash(),
                           cells, best_cell, split.dropped_users)
    lines.append(f"created_at = {datetime.now(timezone.utc).isoformat()}")
    (out_dir / "manifest.txt").write_text("\n".join(lines) + "\n")
    print(f"best cell: lr={best_cell.learning_rate:g} dim={best_cell.dim} "
          f"val_hr10={best_cell.val_hr10:.4f} (epoch {best_cell.best_epoch})")
    print(f"checkpoint -> {ckpt}")
    return EXIT_OK


def cmd_eval(args):
    config = _load(args)
    model = Recommender.from_checkpoint(args.checkpoint)
    store = _read_store(config.store)
    if store.header.dim != model.feat_dim or store.header.num_layers != model.num_layers:
        raise StoreError(
            f"checkpoint expects features ({model.num_layers} layers, dim {model.feat_dim}); "
            f"store has ({store.header.num_layers} layers, dim {store.header.dim})")
    log = _read_log(config.log)
    split = split_leave_one_out(log, model.vocab)
    model.attach_store(store)
    report = evaluate(model, split, phase=args.phase,
                      exclude_seen=config.exclude_seen, cutoffs=config.cutoffs)
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_report(report, out_dir / f"report_{args.phase}.txt",
                 out_dir / f"report_{args.phase}.csv")
    for line in report.lines():
        print(line)
    return EXIT_OK


def cmd_layer_sweep(args):
    config = _load(args)
    store, log, vocab, split = _prepare(config)
    rows = ablation.layer_sweep(split, store, config.model, config.schedule,
                                config.out_dir, seed=config.seed,
                                exclude_seen=config.exclude_seen, jobs=args.jobs)
    print(ablation.CSV_HEADER)
    for row in rows:
        print(row.csv_row())
    return EXIT_OK


def cmd_strategy_matrix(args):
    config = _load(args)
    store, log, vocab, split = _prepare(config)
    if not config.caption_store:
        raise ConfigError("strategy-matrix requires config key 'caption_store'")
    caption = store_io.read_store(config.caption_store)
    rows = ablation.strategy_matrix(split, {"hidden": store, "caption": caption},
                                    config.model, config.schedule, config.out_dir,
                                    seed=config.seed, exclude_seen=config.exclude_seen,
                                    jobs=args.jobs)
    print(ablation.CSV_HEADER)
    for row in rows:
        print(row.csv_row())
    return EXIT_OK


def cmd_dff(args):
    config = _load(args)
    store, log, vocab, split = _prepare(config)
    cell = ablation.dff_run(split, store, config.model, config.schedule,
                            config.out_dir, seed=config.seed,
                            exclude_seen=config.exclude_seen)
    extra = cell.extra or {}
    weights = extra.get("final_layer_weights") or extra.get("layer_weights", [])
    print(ablation.CSV_HEADER)
    print(cell.csv_row())
    print("learned layer weights: " + ", ".join(f"{w:.4f}" for w in weights))
    return EXIT_OK


def cmd_gradcheck(args):
    print("gradient checks (h=1e-3, tol=1e-3):")
    worst = run_suite(seed=args.seed)
    print(worst)
    return EXIT_OK if worst.passed else EXIT_NUMERIC


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.print_defaults:
        for line in default_lines():
            print(line)
        return EXIT_OK
    if args.command is None:
        parser.print_usage(sys.stderr)
        print("error: a subcommand is required", file=sys.stderr)
        return EXIT_USAGE
    handlers = {
        "synth": cmd_synth,
        "validate": cmd_validate,
        "train": cmd_train,
        "eval": cmd_eval,
        "layer-sweep": cmd_layer_sweep,
        "strategy-matrix": cmd_strategy_matrix,
        "dff": cmd_dff,
        "gradcheck": cmd_gradcheck,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (StoreError, LogError, FileNotFoundError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericsError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
