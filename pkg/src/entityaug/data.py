"""Entity registries, vertical partitioning, alignment and round planning."""
from __future__ import annotations

import csv
import gzip
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

ALIGNED = "aligned"
MISALIGNED = "misaligned"


class DataError(ValueError):
    """Malformed dataset content (bad cell, duplicate id, missing column)."""


@dataclass(frozen=True)
class EntityRegistry:
    party: str
    ids: tuple[int, ...]

    def __post_init__(self) -> None:
        ids = tuple(int(i) for i in self.ids)
        object.__setattr__(self, "ids", ids)
        if len(set(ids)) != len(ids):
            seen: set[int] = set()
            dup = next(i for i in ids if i in seen or seen.add(i))
            raise DataError(f"registry {self.party!r} contains duplicate entity id {dup}")
        if any(i < 0 for i in ids):
            raise DataError(f"registry {self.party!r} contains negative ids")

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, entity: object) -> bool:
        return entity in self._lookup

    @property
    def _lookup(self) -> frozenset[int]:
        cached = self.__dict__.get("_lookup_cache")
        if cached is None:
            cached = frozenset(self.ids)
            object.__setattr__(self, "_lookup_cache", cached)
        return cached


@dataclass(frozen=True)
class FeatureTable:
    """Full (not yet partitioned) feature matrix, one row per entity id."""

    ids: np.ndarray
    values: np.ndarray
    columns: tuple[str, ...]

    @property
    def width(self) -> int:
        return self.values.shape[1]


class _RowIndexed:
    registry: EntityRegistry
    _matrix: np.ndarray

    def _build_index(self) -> None:
        ids = np.asarray(self.registry.ids, dtype=np.int64)
        size = int(ids.max()) + 1 if len(ids) else 0
        index = np.full(size, -1, dtype=np.int64)
        index[ids] = np.arange(len(ids))
        object.__setattr__(self, "_index", index)

    def rows(self, entities: Sequence[int] | np.ndarray) -> np.ndarray:
        """Matrix rows for a batch of entity ids (raises on unknown ids)."""
        ent = np.asarray(entities, dtype=np.int64)
        index = self._index
        ok = (ent >= 0) & (ent < len(index))
        pos = np.full(ent.shape, -1, dtype=np.int64)
        pos[ok] = index[ent[ok]]
        if np.any(pos < 0):
            bad = int(ent[pos < 0][0])
            raise KeyError(f"entity {bad} unknown to {self.registry.party!r}")
        return self._matrix[pos]


@dataclass(frozen=True)
class VerticalDataset(_RowIndexed):
    """One guest's feature slice; row k belongs to ``registry.ids[k]``."""

    registry: EntityRegistry
    matrix: np.ndarray
    columns: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != len(self.registry):
            raise DataError(f"{self.registry.party}: need one row per entity, got shape {m.shape}")
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "_matrix", m)
        self._build_index()

    @property
    def width(self) -> int:
        return self.matrix.shape[1]

    def features(self, entity: int) -> np.ndarray:
        return self.rows([entity])[0]

    def subset(self, entities: Sequence[int]) -> "VerticalDataset":
        ent = [int(e) for e in entities]
        return VerticalDataset(EntityRegistry(self.registry.party, tuple(ent)), self.rows(ent), self.columns)


@dataclass(frozen=True)
class LabelStore(_RowIndexed):
    """Host labels: one-hot rows of width c, or a single {0,1} column for binary tasks."""

    registry: EntityRegistry
    matrix: np.ndarray
    classes: tuple = ()

    def __post_init__(self) -> None:
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != len(self.registry):
            raise DataError(f"label matrix must have one row per entity, got {m.shape}")
        if m.shape[1] == 1:
            if not np.all((m == 0.0) | (m == 1.0)):
                raise DataError("binary labels must be 0 or 1")
        elif not (np.all((m == 0.0) | (m == 1.0)) and np.all(m.sum(axis=1) == 1.0)):
            raise DataError("label rows must be one-hot")
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "_matrix", m)
        self._build_index()

    @property
    def width(self) -> int:
        return self.matrix.shape[1]

    def label(self, entity: int) -> np.ndarray:
        return self.rows([entity])[0]

    def class_index(self, entities: Sequence[int]) -> np.ndarray:
        y = self.rows(entities)
        if self.width == 1:
            return y[:, 0].astype(np.int64)
        return np.argmax(y, axis=1)

    def subset(self, entities: Sequence[int]) -> "LabelStore":
        ent = [int(e) for e in entities]
        return LabelStore(EntityRegistry(self.registry.party, tuple(ent)), self.rows(ent), self.classes)


@dataclass(frozen=True)
class PartitionSpec:
    num_guests: int
    column_assignment: tuple[tuple[int, ...], ...]

    def validate(self, num_columns: int) -> None:
        if self.num_guests != len(self.column_assignment):
            raise DataError(f"{self.num_guests} guests but {len(self.column_assignment)} column groups")
        seen: list[int] = [c for cols in self.column_assignment for c in cols]
        if any(len(cols) == 0 for cols in self.column_assignment):
            raise DataError("every guest needs at least one column")
        if len(seen) != len(set(seen)):
            raise DataError("column assignment overlaps between guests")
        if sorted(seen) != list(range(num_columns)):
            raise DataError(f"column assignment does not cover exactly columns 0..{num_columns - 1}")

    @classmethod
    def even(cls, num_columns: int, num_guests: int) -> "PartitionSpec":
        """Contiguous blocks, first guests take ceil(cols/n) columns."""
        if not 1 <= num_guests <= num_columns:
            raise DataError(f"cannot split {num_columns} columns across {num_guests} guests")
        blocks = np.array_split(np.arange(num_columns), num_guests)
        return cls(num_guests, tuple(tuple(int(c) for c in b) for b in blocks))

    @classmethod
    def from_widths(cls, widths: Sequence[int]) -> "PartitionSpec":
        edges = np.cumsum([0, *widths])
        return cls(len(widths), tuple(tuple(range(int(a), int(b))) for a, b in zip(edges[:-1], edges[1:])))

    @classmethod
    def image_halves(cls, height: int, width: int) -> "PartitionSpec":
        """Left/right halves of a row-major flattened image."""
        grid = np.arange(height * width).reshape(height, width)
        half = width // 2
        return cls(2, (tuple(int(c) for c in grid[:, :half].ravel()), tuple(int(c) for c in grid[:, half:].ravel())))

    @property
    def widths(self) -> list[int]:
        return [len(c) for c in self.column_assignment]


@dataclass
class RoundPlan:
    """Entity schedule for one epoch: ``entities[r, g]`` is processed by guest g in round r."""

    entities: np.ndarray
    aligned: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        self.entities = np.asarray(self.entities, dtype=np.int64)
        if self.entities.ndim == 1:
            self.entities = self.entities.reshape(-1, 1)
        if self.aligned is None:
            self.aligned = np.all(self.entities == self.entities[:, :1], axis=1)
        self.aligned = np.asarray(self.aligned, dtype=bool)
        if len(self.aligned) != len(self.entities):
            raise ValueError("one aligned flag per round required")

    def __len__(self) -> int:
        return len(self.entities)

    @property
    def num_guests(self) -> int:
        return self.entities.shape[1]

    def guest_ids(self, guest: int) -> list[int]:
        return self.entities[:, guest].tolist()

    def flags(self) -> list[str]:
        return [ALIGNED if a else MISALIGNED for a in self.aligned]

    def to_text(self) -> str:
        head = "round flag " + " ".join(f"guest{g}" for g in range(self.num_guests))
        lines = [head]
        for r, (flag, row) in enumerate(zip(self.flags(), self.entities)):
            lines.append(f"{r} {flag} " + " ".join(str(int(e)) for e in row))
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- ingestion


def load_csv(
    path: str | Path,
    id_column: str | None,
    label_column: str,
    feature_columns: Sequence[str] | None = None,
    skip_rows: int = 0,
    binary_as_column: bool = False,
    exclude: Sequence[str] = (),
) -> tuple[FeatureTable, LabelStore]:
    """Read a headered CSV into a feature table and a one-hot label store.

    Without an ``id_column`` (or when it is absent from the header) the
    zero-based data-row index is used as the entity id.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"dataset file not found: {path}")
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rt", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        for _ in range(skip_rows):
            next(reader, None)
        header = [h.strip() for h in next(reader, [])]
        if not header:
            raise DataError(f"{path}: missing header row")
        if label_column not in header:
            raise DataError(f"{path}: label column {label_column!r} not in header")
        use_id = id_column is not None and id_column in header
        if feature_columns is None:
            feature_columns = [h for h in header if h not in (label_column, id_column, *exclude)]
        missing = [c for c in feature_columns if c not in header]
        if missing:
            raise DataError(f"{path}: columns {missing} not in header")
        feat_idx = [header.index(c) for c in feature_columns]
        label_idx = header.index(label_column)
        id_idx = header.index(id_column) if use_id else None

        ids: list[int] = []
        rows: list[list[float]] = []
        raw_labels: list[float] = []
        for n, rec in enumerate(reader):
            line = n + 2 + skip_rows
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != len(header):
                raise DataError(f"{path}: row {line} has {len(rec)} cells, header has {len(header)}")
            try:
                rows.append([float(rec[i]) for i in feat_idx])
                raw_labels.append(float(rec[label_idx]))
                ids.append(int(float(rec[id_idx])) if id_idx is not None else len(ids))
            except ValueError as exc:
                raise DataError(f"{path}: row {line}: non-numeric cell ({exc})") from None

    values = np.asarray(rows, dtype=np.float64).reshape(len(rows), len(feat_idx))
    if not np.all(np.isfinite(values)):
        bad = int(np.argwhere(~np.isfinite(values))[0, 0])
        raise DataError(f"{path}: row {bad + 2 + skip_rows}: non-finite feature value")
    registry = EntityRegistry("host", tuple(ids))  # rejects duplicate ids
    labels = one_hot_labels(registry, np.asarray(raw_labels), binary_as_column)
    return FeatureTable(np.asarray(ids, dtype=np.int64), values, tuple(feature_columns)), labels


def one_hot_labels(registry: EntityRegistry, raw: np.ndarray, binary_as_column: bool = False) -> LabelStore:
    """One-hot over the sorted observed classes; ``binary_as_column`` keeps 0/1 tasks width-1."""
    classes, idx = np.unique(raw, return_inverse=True)
    if binary_as_column and len(classes) <= 2 and set(classes.tolist()) <= {0.0, 1.0}:
        return LabelStore(registry, raw.reshape(-1, 1).astype(np.float64), tuple(classes.tolist()))
    onehot = np.zeros((len(raw), len(classes)))
    onehot[np.arange(len(raw)), idx] = 1.0
    return LabelStore(registry, onehot, tuple(classes.tolist()))


def read_idx(path: str | Path) -> np.ndarray:
    """Parse an IDX file (big-endian magic + dims; optionally gzipped)."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"IDX file not found: {path}")
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4 or raw[0] != 0 or raw[1] != 0:
        raise DataError(f"{path}: bad IDX magic")
    dtypes = {0x08: ">u1", 0x09: ">i1", 0x0B: ">i2", 0x0C: ">i4", 0x0D: ">f4", 0x0E: ">f8"}
    code, ndim = raw[2], raw[3]
    if code not in dtypes:
        raise DataError(f"{path}: unknown IDX type code {code:#x}")
    dims = struct.unpack(f">{ndim}I", raw[4 : 4 + 4 * ndim])
    data = np.frombuffer(raw, dtype=dtypes[code], offset=4 + 4 * ndim)
    if data.size != int(np.prod(dims)):
        raise DataError(f"{path}: payload has {data.size} items, dims {dims} need {int(np.prod(dims))}")
    return data.reshape(dims)


def write_idx(path: str | Path, array: np.ndarray) -> None:
    codes = {np.dtype(np.uint8): 0x08, np.dtype(np.int8): 0x09, np.dtype(np.float64): 0x0E}
    arr = np.asarray(array)
    code = codes[arr.dtype]
    header = bytes([0, 0, code, arr.ndim]) + struct.pack(f">{arr.ndim}I", *arr.shape)
    payload = arr.astype(arr.dtype.newbyteorder(">")).tobytes()
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "wb") as fh:
        fh.write(header + payload)


def load_idx_pair(images: str | Path, labels: str | Path, limit: int | None = None, first_id: int = 0):
    """Images scaled to [0, 1] and flattened, plus a one-hot label store."""
    x = read_idx(images)
    y = read_idx(labels)
    if len(x) != len(y):
        raise DataError(f"{images} has {len(x)} images but {labels} has {len(y)} labels")
    if limit is not None:
        x, y = x[:limit], y[:limit]
    values = x.reshape(len(x), -1).astype(np.float64) / 255.0
    ids = np.arange(first_id, first_id + len(x), dtype=np.int64)
    return FeatureTable(ids, values, tuple(f"px{i}" for i in range(values.shape[1]))), y.astype(np.int64)


# ---------------------------------------------------------------- partitioning & alignment


def vertical_split(table: FeatureTable, spec: PartitionSpec) -> list[VerticalDataset]:
    spec.validate(table.width)
    registry_ids = tuple(int(i) for i in table.ids)
    out = []
    for g, cols in enumerate(spec.column_assignment):
        cols = list(cols)
        out.append(
            VerticalDataset(
                EntityRegistry(f"guest{g}", registry_ids),
                table.values[:, cols],
                tuple(table.columns[c] for c in cols) if table.columns else (),
            )
        )
    return out


def intersect(registries: Sequence[EntityRegistry]) -> EntityRegistry:
    """Ids known to every party, in the first party's order (plain-set PSI stand-in)."""
    if not registries:
        raise ValueError("need at least one registry")
    common = set(registries[0].ids)
    for r in registries[1:]:
        common &= set(r.ids)
    return EntityRegistry("intersection", tuple(i for i in registries[0].ids if i in common))


def make_overlap_split(
    all_ids: Sequence[int], x_percent: float, num_guests: int, seed: int
) -> tuple[list[int], list[list[int]]]:
    """Shuffle once, take the first floor(x%) as aligned, deal the rest into disjoint guest slices."""
    if not 0 <= x_percent <= 100:
        raise ValueError(f"x_percent must be within [0, 100], got {x_percent}")
    if num_guests < 1:
        raise ValueError("need at least one guest")
    ids = np.asarray(list(all_ids), dtype=np.int64)
    order = np.random.default_rng(seed).permutation(len(ids))
    shuffled = ids[order]
    n_aligned = int(np.floor(len(ids) * x_percent / 100.0 + 1e-9))
    aligned = shuffled[:n_aligned].tolist()
    rest = shuffled[n_aligned:]
    slices = [s.tolist() for s in np.array_split(rest, num_guests)]
    return aligned, slices


def build_round_plan(
    aligned: Sequence[int],
    misaligned: Sequence[Sequence[int]],
    epoch_seed: int,
    shuffle_within_guest: bool = True,
) -> RoundPlan:
    """Aligned rounds share one entity; misaligned rounds pair each guest's own
    next entity, cycling shorter lists. Round order is shuffled by ``epoch_seed``.

    With ``shuffle_within_guest`` every guest also shuffles its own misaligned
    list independently, so pairings change from epoch to epoch.
    """
    num_guests = len(misaligned)
    if num_guests == 0:
        raise ValueError("need at least one guest list (possibly empty)")
    rng = np.random.default_rng(epoch_seed)
    longest = max(len(m) for m in misaligned)
    columns = []
    for lst in misaligned:
        arr = np.asarray(list(lst), dtype=np.int64)
        if longest and not len(arr):
            raise ValueError("a guest with no misaligned entities cannot fill misaligned rounds")
        if shuffle_within_guest and len(arr):
            arr = arr[rng.permutation(len(arr))]
        columns.append(arr[np.arange(longest) % len(arr)] if longest else arr)
    al = np.asarray(list(aligned), dtype=np.int64)
    mis_rows = np.stack(columns, axis=1) if longest else np.empty((0, num_guests), np.int64)
    rows = np.concatenate([np.repeat(al[:, None], num_guests, axis=1), mis_rows], axis=0)
    flags = np.concatenate([np.ones(len(al), bool), np.zeros(longest, bool)])
    order = rng.permutation(len(rows))
    return RoundPlan(rows[order], flags[order])


def train_test_split(labels: LabelStore, test_fraction: float, seed: int) -> tuple[list[int], list[int]]:
    """Stratified, seeded split of the labelled entities into train and test ids."""
    rng = np.random.default_rng(seed)
    ids = np.asarray(labels.registry.ids, dtype=np.int64)
    cls = labels.class_index(ids)
    train, test = [], []
    for c in np.unique(cls):
        members = ids[cls == c]
        members = members[rng.permutation(len(members))]
        n_test = int(round(len(members) * test_fraction))
        test.extend(members[:n_test].tolist())
        train.extend(members[n_test:].tolist())
    return sorted(train), sorted(test)


def standardize(datasets: Sequence[VerticalDataset], fit_ids: Sequence[int]) -> list[VerticalDataset]:
    """Per-guest z-scoring with statistics from ``fit_ids`` only (each guest scales its own columns)."""
    out = []
    for ds in datasets:
        fit = ds.rows(fit_ids)
        mu = fit.mean(axis=0)
        sd = fit.std(axis=0)
        sd[sd == 0] = 1.0
        out.append(VerticalDataset(ds.registry, (ds.matrix - mu) / sd, ds.columns))
    return out


def parse_assignment(text: str | Sequence, num_columns: int, num_guests: int) -> PartitionSpec:
    """Partition from a manifest value: ``even``, ``halves:HxW`` or a list of widths."""
    if isinstance(text, (list, tuple)):
        return PartitionSpec.from_widths([int(w) for w in text])
    text = str(text).strip()
    if text == "even":
        return PartitionSpec.even(num_columns, num_guests)
    if text.startswith("halves:"):
        h, w = (int(v) for v in text.split(":", 1)[1].lower().split("x"))
        return PartitionSpec.image_halves(h, w)
    return PartitionSpec.from_widths([int(w) for w in text.replace(",", " ").split()])
