"""Tabular datasets: in-memory representation, CSV ingestion, and export."""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EmptyFile, MissingColumn, NonBinaryLabel, UnparseableCell

COMMENT_PREFIX = "#"


@dataclass(frozen=True)
class Provenance:
    """Where a dataset came from and under which ingestion settings."""

    source: str
    config_digest: str


@dataclass(frozen=True)
class ColumnsConfig:
    """Which CSV columns play which role.

    features may be an explicit list or "auto" (every column that is neither
    the sensitive nor the label column). sensitive_order optionally pins the
    literal-to-index mapping; otherwise first appearance decides.
    """

    sensitive: str
    label: str
    positive_label: str
    features: list[str] | str = "auto"
    sensitive_order: list[str] | None = None

    def digest(self) -> str:
        payload = json.dumps(
            {
                "sensitive": self.sensitive,
                "label": self.label,
                "positive_label": self.positive_label,
                "features": self.features,
                "sensitive_order": self.sensitive_order,
            },
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class TabularDataset:
    """Records of (features, sensitive value in [k], binary label).

    sensitive holds integer codes; sensitive_values maps each code back to
    the original literal. label_values is (negative literal, positive
    literal) for exact re-export.
    """

    feature_columns: dict[str, np.ndarray]
    sensitive: np.ndarray
    labels: np.ndarray
    k: int
    sensitive_name: str = "sensitive"
    sensitive_values: tuple[str, ...] = ()
    label_values: tuple[str, str] = ("0", "1")
    provenance: Provenance = field(default_factory=lambda: Provenance("memory", "-"))
    indicator_columns: None = None

    def __post_init__(self):
        sens = _frozen(np.asarray(self.sensitive, dtype=int))
        labels = _frozen(np.asarray(self.labels, dtype=int))
        object.__setattr__(self, "sensitive", sens)
        object.__setattr__(self, "labels", labels)
        cols = {name: _frozen(np.asarray(v, dtype=float)) for name, v in self.feature_columns.items()}
        object.__setattr__(self, "feature_columns", cols)
        if not self.sensitive_values:
            object.__setattr__(
                self, "sensitive_values", tuple(str(v) for v in range(self.k))
            )
        n = sens.shape[0]
        for name, v in cols.items():
            if v.shape != (n,):
                raise ValueError(f"column {name!r} has length {v.shape}, expected {n}")
        if labels.shape != (n,):
            raise ValueError("labels length differs from sensitive length")
        if n and (sens.min() < 0 or sens.max() >= self.k):
            raise ValueError(f"sensitive codes must lie in [0, {self.k})")
        if n and not np.isin(labels, (0, 1)).all():
            raise NonBinaryLabel("labels must be coded 0/1")
        if len(self.sensitive_values) != self.k:
            raise ValueError("sensitive_values must name every code in [k]")

    @property
    def n(self) -> int:
        return int(self.sensitive.shape[0])

    def subset(self, idx: np.ndarray) -> "TabularDataset":
        """Row-sliced copy (used for train/test splits)."""
        return TabularDataset(
            feature_columns={name: v[idx] for name, v in self.feature_columns.items()},
            sensitive=self.sensitive[idx],
            labels=self.labels[idx],
            k=self.k,
            sensitive_name=self.sensitive_name,
            sensitive_values=self.sensitive_values,
            label_values=self.label_values,
            provenance=self.provenance,
        )


@dataclass(frozen=True, eq=False)
class SubsetPerturbedDataset:
    """Dataset whose sensitive column was replaced by subset-report indicators.

    Carries one 0/1 indicator column per alphabet value. Data-unfairness
    metrics are undefined on subset reports, so this type deliberately has no
    sensitive vector; classifiers consume the indicators directly.
    """

    feature_columns: dict[str, np.ndarray]
    indicator_columns: dict[str, np.ndarray]
    labels: np.ndarray
    k: int
    sensitive_name: str
    sensitive_values: tuple[str, ...]
    label_values: tuple[str, str] = ("0", "1")
    provenance: Provenance = field(default_factory=lambda: Provenance("memory", "-"))

    def __post_init__(self):
        labels = _frozen(np.asarray(self.labels, dtype=int))
        object.__setattr__(self, "labels", labels)
        if len(self.indicator_columns) != self.k:
            raise ValueError("need one indicator column per alphabet value")

    @property
    def n(self) -> int:
        return int(self.labels.shape[0])


def _read_rows(path: str | Path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [row for row in csv.reader(fh) if row and not row[0].startswith(COMMENT_PREFIX)]
    if not rows:
        raise EmptyFile(f"{path} has no header row")
    header, data = rows[0], rows[1:]
    if not data:
        raise EmptyFile(f"{path} has no data rows")
    return header, data


def ingest_csv(path: str | Path, columns: ColumnsConfig) -> TabularDataset:
    """Load a CSV into a TabularDataset under the declared column roles.

    Sensitive literals map to codes by first appearance (or the explicit
    sensitive_order). Non-numeric feature columns are one-hot encoded with
    first-appearance category order. Lines starting with '#' are skipped so
    perturbed files re-ingest cleanly.
    """
    header, data = _read_rows(path)
    index = {name: i for i, name in enumerate(header)}
    feature_names = (
        [c for c in header if c not in (columns.sensitive, columns.label)]
        if columns.features == "auto"
        else list(columns.features)
    )
    for name in [columns.sensitive, columns.label, *feature_names]:
        if name not in index:
            raise MissingColumn(name)

    value_map: dict[str, int] = {}
    if columns.sensitive_order is not None:
        value_map = {lit: i for i, lit in enumerate(columns.sensitive_order)}
    sensitive = []
    s_col = index[columns.sensitive]
    for r, row in enumerate(data):
        lit = row[s_col]
        if lit == "":
            raise UnparseableCell(r, columns.sensitive, "empty cell")
        if lit not in value_map:
            if columns.sensitive_order is not None:
                raise UnparseableCell(
                    r, columns.sensitive, f"literal {lit!r} not in declared ordering"
                )
            value_map[lit] = len(value_map)
        sensitive.append(value_map[lit])
    k = len(value_map)
    if k < 2:
        raise UnparseableCell(0, columns.sensitive, "fewer than two sensitive values")

    l_col = index[columns.label]
    literals = []
    for row in data:
        if row[l_col] not in literals:
            literals.append(row[l_col])
    others = [lit for lit in literals if lit != columns.positive_label]
    if len(others) > 1:
        raise NonBinaryLabel(
            f"label literals {literals!r} do not reduce to a binary coding with "
            f"positive literal {columns.positive_label!r}"
        )
    negative = others[0] if others else ("0" if columns.positive_label != "0" else "neg")
    labels = [1 if row[l_col] == columns.positive_label else 0 for row in data]

    feature_columns: dict[str, np.ndarray] = {}
    for name in feature_names:
        c = index[name]
        raw = [row[c] for row in data]
        numeric = True
        values = np.empty(len(raw))
        for r, cell in enumerate(raw):
            if cell == "":
                raise UnparseableCell(r, name, "empty cell")
            try:
                values[r] = float(cell)
            except ValueError:
                numeric = False
                break
        if numeric:
            feature_columns[name] = values
        else:
            cats = []
            for cell in raw:
                if cell not in cats:
                    cats.append(cell)
            for cat in cats:
                feature_columns[f"{name}={cat}"] = np.array(
                    [1.0 if cell == cat else 0.0 for cell in raw]
                )

    ordered = sorted(value_map.items(), key=lambda kv: kv[1])
    return TabularDataset(
        feature_columns=feature_columns,
        sensitive=np.array(sensitive, dtype=int),
        labels=np.array(labels, dtype=int),
        k=k,
        sensitive_name=columns.sensitive,
        sensitive_values=tuple(lit for lit, _ in ordered),
        label_values=(negative, columns.positive_label),
        provenance=Provenance(source=str(path), config_digest=columns.digest()),
    )


def _format_number(v: float) -> str:
    if float(v).is_integer():
        return str(int(v))
    return repr(float(v))


def export_csv(dataset: TabularDataset, path: str | Path) -> None:
    """Write a dataset back to CSV with original literals restored."""
    header = [*dataset.feature_columns.keys(), dataset.sensitive_name, "label"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        cols = list(dataset.feature_columns.values())
        for i in range(dataset.n):
            row = [_format_number(c[i]) for c in cols]
            row.append(dataset.sensitive_values[dataset.sensitive[i]])
            row.append(dataset.label_values[dataset.labels[i]])
            writer.writerow(row)
