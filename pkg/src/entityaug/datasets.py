"""Dataset manifests and the builtin datasets.

A manifest is a small TOML file describing where a dataset lives and how it
is cut between guests::

    name = "creditcard"
    format = "csv"                  # or "idx"
    path = "UCI_Credit_Card.csv"    # relative to the manifest
    id_column = "ID"
    label_column = "default.payment.next.month"
    partition = "even"              # "even", "halves:28x28" or a list of widths
    num_guests = 2
    binary = true                   # keep a 0/1 label as one column
    standardize = true
    lr = 5e-4

Handwritten (UCI multiple features) and an MNIST subset are materialised
automatically from data files bundled with the ``mvlearn`` and ``mlxtend``
distributions when they are installed. Credit Card and Parkinsons must be
downloaded by the user into the data directory.
"""
from __future__ import annotations

import csv
import gzip
import importlib.util
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import (
    FeatureTable,
    LabelStore,
    PartitionSpec,
    load_csv,
    load_idx_pair,
    one_hot_labels,
    parse_assignment,
    write_idx,
    EntityRegistry,
)

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

DATA_DIR_ENV = "ENTITYAUG_DATA_DIR"
BUILTIN_DATASETS = ("handwritten", "creditcard", "parkinsons", "mnist-mlp", "caltech7")

# UCI "Multiple Features" views in their canonical order
MFEAT_VIEWS = (("fou", 76), ("fac", 216), ("kar", 64), ("pix", 240), ("zer", 47), ("mor", 6))


class DatasetMissing(FileNotFoundError):
    """Raw data for a dataset is not present; ``path`` names what was looked for."""


@dataclass
class Dataset:
    name: str
    table: FeatureTable
    labels: LabelStore
    partition: PartitionSpec
    lr: float | None = None
    standardize: bool = True
    test_ids: tuple[int, ...] | None = None  # fixed test split, if the source ships one
    manifest: dict | None = None

    @property
    def num_guests(self) -> int:
        return self.partition.num_guests


def default_data_dir() -> Path:
    return Path(os.environ.get(DATA_DIR_ENV, Path.home() / ".cache" / "entityaug"))


def read_manifest(path: str | Path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise DatasetMissing(f"manifest not found: {path}")
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def write_manifest(path: str | Path, values: dict) -> None:
    Path(path).write_text("".join(f"{k} = {_toml_value(v)}\n" for k, v in values.items()))


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    return '"' + str(v).replace("\\", "\\\\").replace('"', '\\"') + '"'


def load_manifest(path: str | Path) -> Dataset:
    path = Path(path)
    m = read_manifest(path)
    base = path.parent
    fmt = m.get("format", "csv")
    test_ids = None
    if fmt == "csv":
        src = base / m["path"]
        if not src.is_file():
            raise DatasetMissing(f"dataset file not found: {src}")
        table, labels = load_csv(
            src,
            m.get("id_column"),
            m["label_column"],
            skip_rows=int(m.get("skip_rows", 0)),
            binary_as_column=bool(m.get("binary", False)),
            exclude=tuple(m.get("exclude_columns", ())),
        )
    elif fmt == "idx":
        for key in ("images", "labels", "test_images", "test_labels"):
            if key in m and not (base / m[key]).is_file():
                raise DatasetMissing(f"dataset file not found: {base / m[key]}")
        table, raw = load_idx_pair(base / m["images"], base / m["labels"], m.get("limit"))
        if "test_images" in m:
            test_table, test_raw = load_idx_pair(
                base / m["test_images"], base / m["test_labels"], m.get("test_limit"), first_id=len(table.ids)
            )
            test_ids = tuple(int(i) for i in test_table.ids)
            table = FeatureTable(
                np.concatenate([table.ids, test_table.ids]),
                np.concatenate([table.values, test_table.values]),
                table.columns,
            )
            raw = np.concatenate([raw, test_raw])
        labels = one_hot_labels(EntityRegistry("host", tuple(int(i) for i in table.ids)), raw.astype(np.float64))
    else:
        raise ValueError(f"{path}: unknown dataset format {fmt!r}")
    num_guests = int(m.get("num_guests", 2))
    partition = parse_assignment(m.get("partition", "even"), table.width, num_guests)
    partition.validate(table.width)
    return Dataset(
        m.get("name", path.stem),
        table,
        labels,
        partition,
        m.get("lr"),
        bool(m.get("standardize", True)),
        test_ids,
        m,
    )


# ---------------------------------------------------------------- builtins


def _package_dir(name: str) -> Path | None:
    """Install location of a distribution, found without importing it."""
    spec = importlib.util.find_spec(name)
    if spec is None or not spec.submodule_search_locations:
        return None
    return Path(list(spec.submodule_search_locations)[0])


def _materialize_handwritten(data_dir: Path) -> Path:
    out = data_dir / "handwritten.csv"
    if not out.is_file():
        views = []
        raw_dir = data_dir / "mfeat"
        bundled = _package_dir("mvlearn")
        for view, width in MFEAT_VIEWS:
            raw = raw_dir / f"mfeat-{view}"
            if raw.is_file():  # original UCI file: whitespace separated, 200 rows per digit
                x = np.loadtxt(raw)
                y = np.repeat(np.arange(10), 200)
            elif bundled is not None and (bundled / "datasets/UCImultifeature" / f"mfeat-{view}.csv").is_file():
                arr = np.loadtxt(bundled / "datasets/UCImultifeature" / f"mfeat-{view}.csv", delimiter=",", skiprows=1)
                x, y = arr[:, :-1], arr[:, -1].astype(int)
            else:
                raise DatasetMissing(
                    f"handwritten view {view!r} not found: place UCI mfeat files in {raw_dir} "
                    "or install mvlearn"
                )
            if x.shape[1] != width:
                raise ValueError(f"mfeat-{view}: expected {width} columns, found {x.shape[1]}")
            views.append((view, x, y))
        labels = views[0][2]
        if any(not np.array_equal(v[2], labels) for v in views):
            raise ValueError("mfeat views disagree on labels")
        data_dir.mkdir(parents=True, exist_ok=True)
        header = ["id", "label"] + [f"{v}_{k}" for v, x, _ in views for k in range(x.shape[1])]
        body = np.concatenate([x for _, x, _ in views], axis=1)
        with open(out, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for i, (lab, row) in enumerate(zip(labels, body)):
                w.writerow([i, int(lab), *(repr(float(v)) for v in row)])
    manifest = data_dir / "handwritten.toml"
    write_manifest(
        manifest,
        {
            "name": "handwritten",
            "format": "csv",
            "path": out.name,
            "id_column": "id",
            "label_column": "label",
            "partition": [w for _, w in MFEAT_VIEWS],
            "num_guests": len(MFEAT_VIEWS),
            "standardize": True,
            "lr": 0.1,
        },
    )
    return manifest


def _find_first(data_dir: Path, names: list[str]) -> Path | None:
    for n in names:
        for cand in (data_dir / n, data_dir / (n + ".gz")):
            if cand.is_file():
                return cand
    return None


def _materialize_mnist(data_dir: Path) -> Path:
    manifest = data_dir / "mnist-mlp.toml"
    common = {"name": "mnist-mlp", "format": "idx", "partition": "halves:28x28", "num_guests": 2,
              "standardize": False, "lr": 0.001}
    full = [
        _find_first(data_dir, [n])
        for n in ("train-images-idx3-ubyte", "train-labels-idx1-ubyte", "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")
    ]
    if all(full):
        write_manifest(manifest, {
            **common,
            "images": full[0].name, "labels": full[1].name, "limit": 10000,
            "test_images": full[2].name, "test_labels": full[3].name, "test_limit": 2000,
        })
        return manifest
    images = data_dir / "mnist5k-images-idx3-ubyte.gz"
    labels = data_dir / "mnist5k-labels-idx1-ubyte.gz"
    if not (images.is_file() and labels.is_file()):
        bundled = _package_dir("mlxtend")
        src = bundled / "data/data/mnist_5k.csv.gz" if bundled else None
        if src is None or not src.is_file():
            raise DatasetMissing(
                f"MNIST not found: place train/t10k IDX files in {data_dir} or install mlxtend"
            )
        with gzip.open(src, "rt") as fh:
            arr = np.loadtxt(fh, delimiter=",")
        data_dir.mkdir(parents=True, exist_ok=True)
        write_idx(images, arr[:, :-1].reshape(-1, 28, 28).astype(np.uint8))
        write_idx(labels, arr[:, -1].astype(np.uint8))
    write_manifest(manifest, {**common, "images": images.name, "labels": labels.name})
    return manifest


_USER_SUPPLIED = {
    "creditcard": [
        ("UCI_Credit_Card.csv", {"id_column": "ID", "label_column": "default.payment.next.month", "skip_rows": 0}),
        ("default of credit card clients.csv", {"id_column": "ID", "label_column": "default payment next month", "skip_rows": 1}),
    ],
    "parkinsons": [
        ("pd_speech_features.csv", {"label_column": "class", "exclude_columns": ["id"], "skip_rows": 1}),
    ],
    "caltech7": [
        ("caltech7.csv", {"id_column": "id", "label_column": "label"}),
    ],
}
_USER_DEFAULTS = {
    "creditcard": {"partition": "even", "num_guests": 2, "binary": True, "standardize": True, "lr": 5e-4},
    "parkinsons": {"partition": "even", "num_guests": 2, "binary": True, "standardize": True, "lr": 5e-4},
    "caltech7": {"partition": "even", "num_guests": 6, "standardize": True, "lr": 0.1},
}


def builtin_manifest(name: str, data_dir: str | Path | None = None) -> Path:
    """Path of a builtin dataset's manifest, creating it (and derived data) if needed.

    A manifest already present in the data directory is left untouched, so
    users can point it at their own copy of the raw file.
    """
    if name not in BUILTIN_DATASETS:
        raise KeyError(f"unknown dataset {name!r}; builtins are {', '.join(BUILTIN_DATASETS)}")
    data_dir = Path(data_dir) if data_dir is not None else default_data_dir()
    manifest = data_dir / f"{name}.toml"
    if manifest.is_file():
        return manifest
    if name == "handwritten":
        return _materialize_handwritten(data_dir)
    if name == "mnist-mlp":
        return _materialize_mnist(data_dir)
    for filename, opts in _USER_SUPPLIED[name]:
        if (data_dir / filename).is_file():
            data_dir.mkdir(parents=True, exist_ok=True)
            write_manifest(manifest, {"name": name, "format": "csv", "path": filename, **opts, **_USER_DEFAULTS[name]})
            return manifest
    wanted = " or ".join(str(data_dir / f) for f, _ in _USER_SUPPLIED[name])
    raise DatasetMissing(f"{name}: raw data not found; expected {wanted}")


def load_dataset(name_or_manifest: str | Path, data_dir: str | Path | None = None) -> Dataset:
    """Load a builtin dataset by name, or any dataset by manifest path."""
    if str(name_or_manifest) in BUILTIN_DATASETS:
        return load_manifest(builtin_manifest(str(name_or_manifest), data_dir))
    return load_manifest(name_or_manifest)
