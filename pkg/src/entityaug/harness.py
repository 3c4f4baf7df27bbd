"""Experiment configurations, runs, metrics persistence and seed sweeps."""
from __future__ import annotations

import hashlib
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import build_round_plan, make_overlap_split, standardize, train_test_split, vertical_split
from .datasets import Dataset, load_dataset, read_manifest, tomllib, write_manifest
from .nn import Activation, MlpSpec
from .protocol import NO_FAULTS, FaultScript, Mode, TrainState, evaluate, init_state, train_epoch

log = logging.getLogger(__name__)

MODES = ("aligned", "misaligned", "mixed")
WEIGHT_RULES = ("activation-dim", "feature-dim")

I, R, L = Activation.IDENTITY.value, Activation.RELU.value, Activation.LEAKY_RELU.value


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment. Layer lists exclude the input width, which comes from
    the data (guests) or from the sum of guest outputs (host)."""

    name: str
    dataset: str
    num_guests: int
    guest_layers: tuple[int, ...]
    guest_activations: tuple[str, ...]
    host_layers: tuple[int, ...]
    host_activations: tuple[str, ...]
    lr: float
    epochs: int = 60
    batch_size: int = 32
    mode: str = "aligned"
    x_percent: float | None = None
    seeds: tuple[int, ...] = (0,)
    weight_rule: str = "activation-dim"
    test_fraction: float = 0.2
    metadata: dict = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self) -> None:
        for key in ("guest_layers", "guest_activations", "host_layers", "host_activations", "seeds"):
            object.__setattr__(self, key, tuple(getattr(self, key)))
        self.validate()

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.mode == "mixed" and self.x_percent is None:
            raise ConfigError("mixed mode requires x_percent")
        if self.x_percent is not None and not 0 <= self.x_percent <= 100:
            raise ConfigError(f"x_percent must lie in [0, 100], got {self.x_percent}")
        if self.weight_rule not in WEIGHT_RULES:
            raise ConfigError(f"weight_rule must be one of {WEIGHT_RULES}")
        if len(self.guest_layers) != len(self.guest_activations):
            raise ConfigError("guest_layers and guest_activations differ in length")
        if len(self.host_layers) != len(self.host_activations):
            raise ConfigError("host_layers and host_activations differ in length")
        if not self.guest_layers or not self.host_layers:
            raise ConfigError("guest and host need at least one layer")
        for a in (*self.guest_activations, *self.host_activations):
            Activation(a)
        if self.epochs < 0 or self.batch_size < 1 or self.num_guests < 1 or self.lr <= 0:
            raise ConfigError("epochs >= 0, batch_size >= 1, num_guests >= 1 and lr > 0 required")
        if not self.seeds:
            raise ConfigError("at least one seed required")

    @property
    def host_input(self) -> int:
        return self.num_guests * self.guest_layers[-1]

    def guest_spec(self, in_dim: int) -> MlpSpec:
        return MlpSpec([in_dim, *self.guest_layers], self.guest_activations)

    def host_spec(self) -> MlpSpec:
        return MlpSpec([self.host_input, *self.host_layers], self.host_activations)

    def with_(self, **changes) -> "ExperimentConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("metadata")
        d = {k: (list(v) if isinstance(v, tuple) else v) for k, v in d.items()}
        if d["x_percent"] is None:
            d.pop("x_percent")
        return d

    def canonical_text(self) -> str:
        return "".join(f"{k} = {json.dumps(v)}\n" for k, v in sorted(self.to_dict().items()))

    def config_hash(self) -> str:
        """Git blob hash of the canonical config text."""
        body = self.canonical_text().encode()
        return hashlib.sha1(b"blob %d\0" % len(body) + body).hexdigest()

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        if "builtin" in d:
            base = builtin_config(d.pop("builtin"))
            known = set(cls.__dataclass_fields__)
            unknown = set(d) - known
            if unknown:
                raise ConfigError(f"unknown config keys: {sorted(unknown)}")
            return base.with_(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        path = Path(path)
        try:
            with open(path, "rb") as fh:
                raw = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        return cls.from_dict(raw)


# Architectures: every linear(k) is an affine layer with k outputs; the
# activation list gives what follows each layer.
_BUILTINS: dict[str, dict] = {
    "handwritten": dict(
        num_guests=6,
        guest_layers=(120, 70), guest_activations=(I, R),
        host_layers=(280, 120, 40, 10), host_activations=(I, L, I, I),
        lr=0.1, metadata={"nominal_host_first_width": 280},
    ),
    "caltech7": dict(
        num_guests=6,
        guest_layers=(512, 256), guest_activations=(I, R),
        host_layers=(1024, 512, 256, 128, 7), host_activations=(I, I, L, I, I),
        lr=0.1, metadata={"nominal_host_first_width": 1024},
    ),
    "creditcard": dict(
        num_guests=2,
        guest_layers=(5, 2), guest_activations=(I, R),
        host_layers=(22, 10, 8, 4, 1), host_activations=(I, I, I, I, I),
        lr=5e-4, metadata={"nominal_host_first_width": 22},
    ),
    "parkinsons": dict(
        num_guests=2,
        guest_layers=(94, 47), guest_activations=(I, R),
        host_layers=(94, 47, 22, 10, 1), host_activations=(I, L, I, L, I),
        lr=5e-4, metadata={"nominal_host_first_width": 94},
    ),
    "mnist-mlp": dict(
        num_guests=2,
        guest_layers=(128, 64), guest_activations=(R, R),
        host_layers=(64, 10), host_activations=(R, I),
        lr=0.001,
    ),
}


def builtin_config(name: str) -> ExperimentConfig:
    if name not in _BUILTINS:
        raise ConfigError(f"unknown builtin config {name!r}; known: {', '.join(sorted(_BUILTINS))}")
    spec = dict(_BUILTINS[name])
    spec["metadata"] = dict(spec.get("metadata", {}))
    return ExperimentConfig(name=name, dataset=name, **spec)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    test_acc: float


@dataclass
class MetricsRecord:
    config_name: str
    mode: str
    x_percent: float | None
    seed: int
    config_hash: str
    epochs: list[EpochRecord]
    final_test_acc: float
    wall_seconds: float
    rounds: int = 0
    stale_reuses: int = 0
    queue_reads: int = 0
    consumed: tuple[int, ...] = ()
    stale_per_guest: tuple[int, ...] = ()

    def csv_text(self) -> str:
        lines = ["epoch,train_loss,train_acc,test_acc"]
        lines += [f"{e.epoch},{e.train_loss!r},{e.train_acc!r},{e.test_acc!r}" for e in self.epochs]
        return "\n".join(lines) + "\n"


@dataclass
class Prepared:
    """Everything needed to train one (config, seed) run, built before any training."""

    config: ExperimentConfig
    dataset: Dataset
    train_ids: list[int]
    test_ids: list[int]
    guest_data: list
    aligned: list[int]
    misaligned: list[list[int]]
    weights: list[float] | None


def prepare(config: ExperimentConfig, seed: int, data_dir=None, dataset: Dataset | None = None) -> Prepared:
    """Load, split, partition and plan; dimension mismatches surface here."""
    ds = dataset if dataset is not None else load_dataset(config.dataset, data_dir)
    if ds.num_guests != config.num_guests:
        raise ConfigError(f"{config.name}: config has {config.num_guests} guests, dataset partition has {ds.num_guests}")
    if config.host_layers[-1] != ds.labels.width:
        raise ConfigError(
            f"{config.name}: host emits {config.host_layers[-1]} logits, labels have width {ds.labels.width}"
        )
    if ds.test_ids is not None:
        test_ids = sorted(ds.test_ids)
        held = set(test_ids)
        train_ids = [i for i in ds.labels.registry.ids if i not in held]
    else:
        train_ids, test_ids = train_test_split(ds.labels, config.test_fraction, seed)
    guest_data = vertical_split(ds.table, ds.partition)
    if ds.standardize:
        guest_data = standardize(guest_data, train_ids)

    if config.mode == "misaligned":
        # every guest holds every training entity but walks it in its own order
        aligned, misaligned = [], [list(train_ids) for _ in range(config.num_guests)]
    else:
        x = 100.0 if config.x_percent is None else config.x_percent
        aligned, misaligned = make_overlap_split(train_ids, x, config.num_guests, seed)
        if config.mode == "aligned":
            misaligned = [[] for _ in range(config.num_guests)]
    weights = None
    if config.weight_rule == "feature-dim":
        weights = [float(w) for w in ds.partition.widths]
    return Prepared(config, ds, train_ids, test_ids, guest_data, aligned, misaligned, weights)


def new_state(prep: Prepared, seed: int) -> TrainState:
    cfg = prep.config
    return init_state(
        [cfg.guest_spec(d.width) for d in prep.guest_data],
        cfg.host_spec(),
        prep.guest_data,
        prep.dataset.labels,
        cfg.lr,
        seed,
        prep.weights,
    )


def epoch_seed(seed: int, epoch: int) -> int:
    return int(np.random.SeedSequence([seed, epoch, 0x5EED]).generate_state(1)[0])


def run_experiment(
    config: ExperimentConfig,
    seed: int | None = None,
    out_dir: str | Path | None = None,
    faults: FaultScript = NO_FAULTS,
    data_dir=None,
    dataset: Dataset | None = None,
) -> MetricsRecord:
    seed = config.seeds[0] if seed is None else seed
    if faults.drops and config.mode == "aligned":
        # a reused stale activation belongs to another entity, which only the augmented label can absorb
        raise ConfigError("fault injection needs mode misaligned or mixed; the aligned baseline cannot reuse stale activations")
    t0 = time.perf_counter()
    prep = prepare(config, seed, data_dir, dataset)
    state = new_state(prep, seed)
    mode = Mode.ALIGNED if config.mode == "aligned" else Mode.AUGMENTED
    records = []
    for epoch in range(config.epochs):
        plan = build_round_plan(prep.aligned, prep.misaligned, epoch_seed(seed, epoch))
        m = train_epoch(state, plan, mode, faults, config.batch_size)
        test_acc = evaluate(state, prep.test_ids)
        records.append(EpochRecord(epoch + 1, m.loss, m.train_acc, test_acc))
        log.info("%s seed=%d epoch %d loss=%.4f train=%.4f test=%.4f",
                 config.name, seed, epoch + 1, m.loss, m.train_acc, test_acc)
    q = state.host.queues
    q.check()
    metrics = MetricsRecord(
        config.name,
        config.mode,
        config.x_percent,
        seed,
        config.config_hash(),
        records,
        records[-1].test_acc if records else evaluate(state, prep.test_ids),
        time.perf_counter() - t0,
        rounds=state.round,
        stale_reuses=sum(q.stale_reuses),
        queue_reads=q.reads,
        consumed=tuple(q.consumed),
        stale_per_guest=tuple(q.stale_reuses),
    )
    if out_dir is not None:
        write_artifacts(metrics, config, out_dir)
    return metrics


def write_artifacts(metrics: MetricsRecord, config: ExperimentConfig, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"{config.name}-{config.mode}" + (f"-x{config.x_percent:g}" if config.x_percent is not None else "")
    stem += f"-seed{metrics.seed}"
    (out / f"{stem}.metrics.csv").write_text(metrics.csv_text())
    resolved = config.to_dict()
    resolved.update(
        seed=metrics.seed,
        config_hash=metrics.config_hash,
        final_test_acc=metrics.final_test_acc,
        wall_seconds=round(metrics.wall_seconds, 3),
        rounds=metrics.rounds,
        stale_reuses=metrics.stale_reuses,
    )
    for k, v in config.metadata.items():
        resolved[f"meta_{k}"] = v
    write_manifest(out / f"{stem}.manifest.toml", resolved)
    return out


def read_run_manifest(path: str | Path) -> dict:
    return read_manifest(path)


@dataclass
class SweepRow:
    config: str
    mode: str
    x_percent: float | None
    seeds: tuple[int, ...]
    accuracies: tuple[float, ...]

    @property
    def mean(self) -> float:
        return float(np.mean(self.accuracies))

    @property
    def std(self) -> float:
        return float(np.std(self.accuracies))


def _run_one(args) -> tuple[int, MetricsRecord]:
    i, config, seed, out_dir, data_dir = args
    return i, run_experiment(config, seed, out_dir, data_dir=data_dir)


def sweep(
    configs: Sequence[ExperimentConfig],
    seeds: Sequence[int] | None = None,
    out_dir=None,
    workers: int = 1,
    data_dir=None,
) -> list[SweepRow]:
    """Final test accuracy, mean and std over seeds, one row per config."""
    if not configs:
        raise ConfigError("sweep needs at least one config")
    jobs = [(i, c, s, out_dir, data_dir) for i, c in enumerate(configs) for s in (seeds if seeds is not None else c.seeds)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(j) for j in jobs]
    rows = []
    for i, c in enumerate(configs):
        mine = [m for j, m in results if j == i]
        rows.append(SweepRow(c.name, c.mode, c.x_percent, tuple(m.seed for m in mine),
                             tuple(m.final_test_acc for m in mine)))
    return rows


def format_table(rows: Sequence[SweepRow]) -> str:
    """Plain-text table, one line per config: accuracy as mean ± std in percent."""
    head = f"{'config':<14} {'mode':<11} {'x%':>5} {'seeds':>5}  {'accuracy (%)':>16}"
    lines = [head, "-" * len(head)]
    for r in rows:
        x = "" if r.x_percent is None else f"{r.x_percent:g}"
        lines.append(f"{r.config:<14} {r.mode:<11} {x:>5} {len(r.seeds):>5}  {100 * r.mean:>8.2f} ± {100 * r.std:5.2f}")
    return "\n".join(lines)


def comparison_table(rows: Sequence[SweepRow]) -> str:
    """Aligned vs entity-augmented accuracy side by side, per dataset and overlap."""
    by_key: dict[tuple[str, float | None], dict[str, SweepRow]] = {}
    for r in rows:
        x = None if r.x_percent in (None, 100) else r.x_percent
        by_key.setdefault((r.config, x), {})[r.mode] = r
    lines = [f"{'dataset':<14} {'x%':>5}  {'aligned':>16}  {'augmented':>16}"]
    for (name, x), modes in by_key.items():
        al = modes.get("aligned")
        aug = modes.get("misaligned") or modes.get("mixed")
        fmt = lambda r: f"{100 * r.mean:7.2f} ± {100 * r.std:5.2f}" if r else f"{'-':>16}"
        lines.append(f"{name:<14} {'' if x is None else f'{x:g}':>5}  {fmt(al):>16}  {fmt(aug):>16}")
    return "\n".join(lines)
