"""Dataset ingestion, partitioning and synthetic data for federated LR.

Vertical mode splits feature columns across parties over a shared instance
id space (the label-holding party is the guest); horizontal mode splits
rows over a shared feature schema. Mini-batch membership is a seeded
permutation fixed once, so every epoch sees the same separation and packed
batches can be reused.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from ..paillier import default_rng

LABEL_MAP = {"0": -1.0, "1": 1.0, "-1": -1.0, "+1": 1.0}


@dataclass
class Table:
    ids: tuple
    feature_names: tuple
    X: np.ndarray
    y: np.ndarray | None = None

    @property
    def rows(self) -> int:
        return len(self.ids)


@dataclass
class PartyData:
    """One party's slice of a dataset (labels only on the guest side)."""

    name: str
    ids: tuple
    feature_names: tuple
    X: np.ndarray
    y: np.ndarray | None = None

    @property
    def rows(self) -> int:
        return len(self.ids)


@dataclass
class DatasetSpec:
    path: str
    id_column: str = "id"
    label_column: str = "label"
    feature_columns: tuple | None = None  # None = every other column
    mode: str = "vertical"  # vertical | horizontal
    parties: int = 2
    batch_size: int = 32
    seed: int = 0
    loss_set_size: int | None = None  # None = the full dataset


@dataclass
class IngestResult:
    mode: str
    parties: list[PartyData]
    batches: list[np.ndarray] = field(default_factory=list)
    loss_indices: np.ndarray | None = None


def load_table(path: str, id_column: str = "id", label_column: str = "label",
               feature_columns=None) -> Table:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ValueError(f"{path}: empty file")
        names = list(reader.fieldnames)
        for required in (id_column, label_column):
            if required not in names:
                raise ValueError(f"{path}: missing column {required!r}")
        if feature_columns is None:
            feature_columns = [c for c in names if c not in (id_column, label_column)]
        else:
            feature_columns = list(feature_columns)
            for c in feature_columns:
                if c not in names:
                    raise ValueError(f"{path}: missing feature column {c!r}")
        ids, rows, labels = [], [], []
        for record in reader:
            ids.append(record[id_column])
            raw = record[label_column].strip()
            if raw not in LABEL_MAP:
                raise ValueError(f"{path}: label {raw!r} is not binary (0/1 or -1/+1)")
            labels.append(LABEL_MAP[raw])
            try:
                rows.append([float(record[c]) for c in feature_columns])
            except (TypeError, ValueError) as exc:
                raise ValueError(
                    f"{path}: non-numeric feature in row id={record[id_column]!r}"
                ) from exc
    return Table(tuple(ids), tuple(feature_columns),
                 np.asarray(rows, dtype=np.float64),
                 np.asarray(labels, dtype=np.float64))


def vertical_split(table: Table, parties: int) -> list[PartyData]:
    """Contiguous column groups: party 0 (the guest) keeps the labels."""
    if parties < 2:
        raise ValueError("a vertical split needs at least two parties")
    d = len(table.feature_names)
    if d < parties:
        raise ValueError(f"cannot split {d} feature columns across {parties} parties")
    bounds = [round(i * d / parties) for i in range(parties + 1)]
    out = []
    for i in range(parties):
        lo, hi = bounds[i], bounds[i + 1]
        name = "guest" if i == 0 else ("host" if parties == 2 else f"host{i - 1}")
        out.append(PartyData(
            name, table.ids, table.feature_names[lo:hi],
            table.X[:, lo:hi].copy(),
            table.y.copy() if i == 0 else None,
        ))
    return out


def horizontal_split(table: Table, parties: int) -> list[PartyData]:
    """Round-robin row assignment; every party keeps the full schema."""
    if parties < 1:
        raise ValueError("need at least one party")
    out = []
    for i in range(parties):
        take = np.arange(i, table.rows, parties)
        out.append(PartyData(
            f"party{i}", tuple(table.ids[j] for j in take), table.feature_names,
            table.X[take].copy(), table.y[take].copy(),
        ))
    return out


def inner_join(parts: list[PartyData]) -> Table:
    """Join vertical party tables back together on their shared ids."""
    first = parts[0]
    common = set(first.ids)
    for p in parts[1:]:
        common &= set(p.ids)
    if not common:
        raise ValueError("inner join over the party id sets is empty")
    order = [i for i, rid in enumerate(first.ids) if rid in common]
    ids = tuple(first.ids[i] for i in order)
    blocks, names = [], []
    label = None
    for p in parts:
        lookup = {rid: i for i, rid in enumerate(p.ids)}
        rows = [lookup[rid] for rid in ids]
        blocks.append(p.X[rows])
        names.extend(p.feature_names)
        if p.y is not None:
            label = p.y[rows]
    if label is None:
        raise ValueError("no party holds the labels")
    return Table(ids, tuple(names), np.hstack(blocks), label)


def make_minibatches(n_rows: int, batch_size: int, seed: int) -> list[np.ndarray]:
    """Seeded permutation chopped into fixed chunks; stable across epochs."""
    if batch_size < 1:
        raise ValueError("batch size must be positive")
    rng = default_rng(seed)
    order = list(range(n_rows))
    rng.shuffle(order)
    return [np.asarray(order[i:i + batch_size], dtype=np.intp)
            for i in range(0, n_rows, batch_size)]


def ingest_csv(spec: DatasetSpec) -> IngestResult:
    table = load_table(spec.path, spec.id_column, spec.label_column,
                       spec.feature_columns)
    if table.rows == 0:
        raise ValueError(f"{spec.path}: no data rows")
    if spec.mode == "vertical":
        parties = vertical_split(table, spec.parties)
        batches = make_minibatches(table.rows, spec.batch_size, spec.seed)
    elif spec.mode == "horizontal":
        parties = horizontal_split(table, spec.parties)
        batches = []
    else:
        raise ValueError(f"unknown partition mode {spec.mode!r}")
    if spec.loss_set_size is None or spec.loss_set_size >= table.rows:
        loss_indices = np.arange(table.rows)
    else:
        loss_indices = np.asarray(sorted(
            default_rng(spec.seed + 1).sample(range(table.rows), spec.loss_set_size)))
    return IngestResult(spec.mode, parties, batches, loss_indices)


def make_synthetic(rows: int, features: int, seed: int,
                   noise: float = 0.25) -> Table:
    """Linearly separable-with-noise binary data; deterministic by seed."""
    rng = np.random.default_rng(seed)
    weights = rng.normal(size=features)
    weights /= np.linalg.norm(weights)
    X = rng.uniform(-1.0, 1.0, size=(rows, features))
    margin = X @ weights + noise * rng.normal(size=rows)
    y = np.where(margin > 0, 1.0, -1.0)
    ids = tuple(str(i) for i in range(rows))
    names = tuple(f"f{i}" for i in range(features))
    return Table(ids, names, X, y)


def write_csv(table: Table, path: str, id_column: str = "id",
              label_column: str = "label") -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        if table.y is not None:
            writer.writerow([id_column, *table.feature_names, label_column])
        else:
            writer.writerow([id_column, *table.feature_names])
        for i, rid in enumerate(table.ids):
            row = [rid, *(repr(float(v)) for v in table.X[i])]
            if table.y is not None:
                row.append("1" if table.y[i] > 0 else "0")
            writer.writerow(row)
