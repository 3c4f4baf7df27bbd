"""Command line entry point.

Exit codes: 0 success, 1 check failed, 2 usage or configuration error,
3 missing file or dataset.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .data import build_round_plan, make_overlap_split, train_test_split
from .datasets import DatasetMissing, load_dataset
from .harness import (
    ConfigError,
    ExperimentConfig,
    SweepRow,
    comparison_table,
    epoch_seed,
    format_table,
    read_run_manifest,
    run_experiment,
    sweep,
)
from .nn import Activation, MlpSpec, check_gradients
from .protocol import NO_FAULTS, FaultScript

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3
GRAD_TOLERANCE = 1e-4


class UsageError(Exception):
    pass


def _load_config(args) -> ExperimentConfig:
    path = Path(args.config)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    cfg = ExperimentConfig.load(path)
    changes = {}
    if args.mode is not None:
        changes["mode"] = args.mode
    if getattr(args, "x", None) is not None:
        changes["x_percent"] = args.x
    if getattr(args, "epochs", None) is not None:
        changes["epochs"] = args.epochs
    if getattr(args, "lr", None) is not None:
        changes["lr"] = args.lr
    return cfg.with_(**changes) if changes else cfg


def cmd_run(args) -> int:
    cfg = _load_config(args)
    faults = FaultScript.load(args.faults) if args.faults else NO_FAULTS
    seed = args.seed if args.seed is not None else cfg.seeds[0]
    metrics = run_experiment(cfg, seed, args.out, faults, data_dir=args.data_dir)
    print(f"config_hash={metrics.config_hash}")
    print(f"final_test_acc={metrics.final_test_acc!r}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    configs = []
    for path in args.config:
        args_one = argparse.Namespace(config=path, mode=None, x=None, epochs=args.epochs, lr=None)
        base = _load_config(args_one)
        modes = args.modes or [base.mode]
        for mode in modes:
            xs = args.x or [base.x_percent]
            for x in xs:
                if mode == "mixed" and x is None:
                    raise ConfigError("mixed mode in a sweep needs --x")
                configs.append(base.with_(mode=mode, x_percent=x))
    seeds = _int_list(args.seeds) if args.seeds else None
    rows = sweep(configs, seeds, args.out, args.workers, args.data_dir)
    print(format_table(rows))
    print()
    print(comparison_table(rows))
    return EXIT_OK


def cmd_report(args) -> int:
    runs = Path(args.runs)
    if not runs.is_dir():
        raise FileNotFoundError(f"run directory not found: {runs}")
    groups: dict[tuple, list[tuple[int, float]]] = {}
    for p in sorted(runs.glob("*.manifest.toml")):
        m = read_run_manifest(p)
        key = (m["name"], m["mode"], m.get("x_percent"))
        groups.setdefault(key, []).append((int(m["seed"]), float(m["final_test_acc"])))
    if not groups:
        print(f"no run manifests in {runs}", file=sys.stderr)
        return EXIT_IO
    rows = [
        SweepRow(name, mode, x, tuple(s for s, _ in v), tuple(a for _, a in v))
        for (name, mode, x), v in groups.items()
    ]
    print(format_table(rows))
    print()
    print(comparison_table(rows))
    return EXIT_OK


def cmd_inspect_data(args) -> int:
    ds = load_dataset(args.dataset, args.data_dir)
    print(f"name={ds.name}")
    print(f"entities={len(ds.table.ids)}")
    print(f"features={ds.table.width}")
    print(f"label_width={ds.labels.width}")
    print(f"classes={list(ds.labels.classes)}")
    print(f"guests={ds.num_guests}")
    print(f"guest_widths={ds.partition.widths}")
    if ds.test_ids is not None:
        print(f"fixed_test_entities={len(ds.test_ids)}")
    if ds.lr is not None:
        print(f"lr={ds.lr}")
    return EXIT_OK


def _int_list(text: str) -> list[int]:
    cleaned = text.strip().strip("[]")
    try:
        values = [int(v) for v in cleaned.replace(",", " ").split()]
    except ValueError:
        raise UsageError(f"expected a list of integers, got {text!r}") from None
    if not values:
        raise UsageError(f"expected a list of integers, got {text!r}")
    return values


def cmd_check_grads(args) -> int:
    dims = _int_list(args.spec)
    if len(dims) < 2 or any(d <= 0 for d in dims):
        raise UsageError(f"need at least two positive dims, got {dims}")
    acts = [Activation.RELU] * (len(dims) - 2) + [Activation.IDENTITY]
    worst = 0.0
    for k in range(args.count):
        worst = max(worst, check_gradients(MlpSpec(dims, acts), args.seed + k))
    print(f"max_relative_error={worst:.3e}")
    return EXIT_OK if worst < GRAD_TOLERANCE else EXIT_CHECK


def cmd_make_plan(args) -> int:
    ds = load_dataset(args.dataset, args.data_dir)
    if ds.test_ids is not None:
        held = set(ds.test_ids)
        train = [i for i in ds.labels.registry.ids if i not in held]
    else:
        train, _ = train_test_split(ds.labels, args.test_fraction, args.seed)
    aligned, misaligned = make_overlap_split(train, args.x, args.guests, args.seed)
    plan = build_round_plan(aligned, misaligned, epoch_seed(args.seed, args.epoch))
    text = plan.to_text()
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="entityaug", description="Vertical federated learning with entity augmentation")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def data_dir(sp):
        sp.add_argument("--data-dir", default=None, help="dataset directory (default: $ENTITYAUG_DATA_DIR)")

    r = sub.add_parser("run", help="train one configuration")
    r.add_argument("--config", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--mode", choices=["aligned", "misaligned", "mixed"])
    r.add_argument("--x", type=float, help="aligned percentage (mixed mode, or aligned-only subset)")
    r.add_argument("--epochs", type=int)
    r.add_argument("--lr", type=float)
    r.add_argument("--faults", help="fault script: lines of 'round guest_id drop'")
    r.add_argument("--out")
    data_dir(r)
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="run configs over seeds and tabulate")
    s.add_argument("--config", nargs="+", required=True)
    s.add_argument("--seeds")
    s.add_argument("--modes", nargs="+", choices=["aligned", "misaligned", "mixed"])
    s.add_argument("--x", type=float, nargs="+")
    s.add_argument("--epochs", type=int)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--out")
    data_dir(s)
    s.set_defaults(func=cmd_sweep)

    i = sub.add_parser("inspect-data", help="summarise a dataset and its partition")
    i.add_argument("--dataset", required=True, help="builtin name or manifest path")
    data_dir(i)
    i.set_defaults(func=cmd_inspect_data)

    c = sub.add_parser("check-grads", help="compare backward with finite differences")
    c.add_argument("--spec", required=True, help="layer dims, e.g. 5,4,2")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--count", type=int, default=1)
    c.set_defaults(func=cmd_check_grads)

    m = sub.add_parser("make-plan", help="write the round plan for an overlap split")
    m.add_argument("--dataset", required=True)
    m.add_argument("--x", type=float, required=True)
    m.add_argument("--guests", type=int, required=True)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--epoch", type=int, default=0)
    m.add_argument("--test-fraction", type=float, default=0.2)
    m.add_argument("--out")
    data_dir(m)
    m.set_defaults(func=cmd_make_plan)

    rp = sub.add_parser("report", help="aggregate run manifests into a table")
    rp.add_argument("--runs", required=True)
    rp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (DatasetMissing, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (UsageError, ConfigError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
