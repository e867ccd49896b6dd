"""Command line entry point: ``ppreid {synth,train,mine,run,compare}``.

Configs are JSON files; any field can be overridden with
``--set dotted.key=value`` where the value is parsed as JSON when possible.
"""

from __future__ import annotations

import argparse
import glob
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import data as data_mod
from .experiment import (
    ExperimentConfig,
    compare,
    load_experiment_config,
    read_record,
    run_sweep,
    write_compare,
)
from .mining import mine_nearest, select_pseudo_positives, write_pseudo_positives
from .model import TrainConfig, extract_features, load_model, save_model, train
from .synth import SynthConfig, generate

log = logging.getLogger("ppreid")


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(cfg: dict, overrides) -> dict:
    cfg = json.loads(json.dumps(cfg))
    for item in overrides or ():
        if "=" not in item:
            raise SystemExit(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        node = cfg
        parts = key.split(".")
        for part in parts[:-1]:
            if node.get(part) is None:
                node[part] = {}
            node = node[part]
        node[parts[-1]] = _parse_value(value)
    return cfg


def _load_json(path) -> dict:
    if path is None:
        return {}
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def cmd_synth(args) -> int:
    cfg = apply_overrides(_load_json(args.config), args.set)
    if args.seed is not None:
        cfg["seed"] = args.seed
    synth = SynthConfig.from_dict(cfg)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, part in zip(("train", "query", "gallery", "pool"), generate(synth)):
        data_mod.write_embeddings(out / f"{name}.jsonl", part)
    _write_json(out / "synth_config.json", synth.to_dict())
    print(f"wrote train/query/gallery/pool to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = apply_overrides(_load_json(args.config), args.set)
    if args.seed is not None:
        cfg["seed"] = args.seed
    cfg.setdefault("batch_size", 32)
    config = TrainConfig.from_dict(cfg)
    dataset = data_mod.read_embeddings(args.train)
    if not isinstance(dataset, data_mod.LabeledDataset):
        raise SystemExit(f"{args.train}: expected labeled rows")
    dataset, label_map = data_mod.canonicalize_labels(dataset)
    train_part, val_part = data_mod.split(
        dataset, data_mod.SplitSpec(args.train_fraction, config.seed, "by-record")
    )
    model, train_log = train(train_part, val_part if len(val_part) else None, config)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_model(out / "model.npz", model, config)
    _write_json(out / "train_log.json", {
        **train_log.to_dict(),
        "label_map": {str(k): v for k, v in label_map.items()},
        "config": config.to_dict(),
    })
    print(f"final loss {train_log.epoch_loss[-1]:.4f}; model written to {out / 'model.npz'}")
    return 0


def cmd_mine(args) -> int:
    model, _ = load_model(args.model)
    dataset = data_mod.read_embeddings(args.train)
    pool = data_mod.read_embeddings(args.pool)
    if not isinstance(dataset, data_mod.LabeledDataset) or not isinstance(pool, data_mod.UnlabeledPool):
        raise SystemExit("mine expects a labeled training file and an unlabeled pool file")
    dataset, _ = data_mod.canonicalize_labels(dataset)
    pairs = mine_nearest(
        extract_features(model, dataset), extract_features(model, pool),
        dataset.identities, normalize=args.normalize,
    )
    pseudo = select_pseudo_positives(pairs, args.k, args.seed or 0)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_pseudo_positives(out / "pseudo.jsonl", pseudo)
    print(f"selected {len(pseudo)} of {len(pairs)} mined pairs -> {out / 'pseudo.jsonl'}")
    return 0


def cmd_run(args) -> int:
    config = load_experiment_config(args.config)
    if args.set:
        config = ExperimentConfig.from_dict(apply_overrides(config.to_dict(), args.set))
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    records = run_sweep(config, args.out_dir)
    for row in compare(records):
        k = "" if row["k"] is None else row["k"]
        print(f"{row['method']:>13} {k!s:>6}  rank-1 {row['rank1_mean']:.4f} ± {row['rank1_std']:.4f}"
              f"  mAP {row['map_mean']:.4f} ± {row['map_std']:.4f}  (n={row['n']})")
    return 0


def cmd_compare(args) -> int:
    paths = []
    for pattern in args.records or [str(Path(args.out_dir) / "runs" / "*" / "record.json")]:
        paths.extend(sorted(glob.glob(pattern)))
    if not paths:
        raise SystemExit("no record.json files found")
    rows = compare([read_record(p) for p in paths])
    write_compare(args.out_dir, rows)
    print(f"compared {len(paths)} records -> {Path(args.out_dir) / 'compare.csv'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ppreid", description="Pseudo-positive mining experiments on embedding files.")
    parser.add_argument("--seed", type=int, default=None, help="root seed")
    parser.add_argument("--out-dir", default=".", help="output directory")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic benchmark as JSON-lines files")
    p.add_argument("--config")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train an identification classifier")
    p.add_argument("--train", required=True, help="labeled JSON-lines file")
    p.add_argument("--config", help="TrainConfig JSON")
    p.add_argument("--train-fraction", type=float, default=0.9)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("mine", help="mine and select pseudo-positive samples")
    p.add_argument("--model", required=True)
    p.add_argument("--train", required=True)
    p.add_argument("--pool", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--normalize", action="store_true", help="L2-normalize features first")
    p.set_defaults(func=cmd_mine)

    p = sub.add_parser("run", help="run a full experiment sweep")
    p.add_argument("--config", required=True)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="tabulate existing run records")
    p.add_argument("records", nargs="*", help="record.json paths or globs")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
