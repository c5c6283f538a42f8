"""Tabular dataset container, CSV/schema I/O, summaries and group splits."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .utils.validation import DataParseError, SchemaError, ValidationError

KINDS = ("feature", "target", "group")
MISSING_TOKENS = ("", "na")
FEMALE_LABELS = ("women", "woman", "female", "f", "w")
MALE_LABELS = ("men", "man", "male", "m")


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    unit: str = ""
    kind: str = "feature"

    def __post_init__(self):
        if not self.name:
            raise SchemaError("column name must be non-empty")
        if self.kind not in KINDS:
            raise SchemaError(f"column {self.name!r}: kind must be one of {KINDS}, got {self.kind!r}")


def _check_unique(specs: Sequence[ColumnSpec]) -> None:
    seen = set()
    for spec in specs:
        if spec.name in seen:
            raise SchemaError(f"duplicate column name {spec.name!r}")
        seen.add(spec.name)


def load_schema(path) -> list[ColumnSpec]:
    """Read a JSON list of ``{name, unit, kind}`` objects."""
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    return schema_from_records(raw)


def schema_from_records(raw) -> list[ColumnSpec]:
    if not isinstance(raw, list):
        raise SchemaError("schema must be a JSON list of column objects")
    specs = []
    for i, item in enumerate(raw):
        if not isinstance(item, dict) or "name" not in item:
            raise SchemaError(f"schema entry {i} must be an object with a 'name'")
        specs.append(ColumnSpec(str(item["name"]), str(item.get("unit", "")), str(item.get("kind", "feature"))))
    _check_unique(specs)
    return specs


def save_schema(specs: Iterable[ColumnSpec], path) -> None:
    records = [{"name": s.name, "unit": s.unit, "kind": s.kind} for s in specs]
    Path(path).write_text(json.dumps(records, ensure_ascii=False, indent=1) + "\n", encoding="utf-8")


def default_schema() -> list[ColumnSpec]:
    """The bundled 45-column long-jump schema plus the ``Gender`` group column."""
    text = resources.files("qrfx").joinpath("data/longjump_schema.json").read_text(encoding="utf-8")
    return schema_from_records(json.loads(text))


def infer_schema(header: Sequence[str], target: str | None = None,
                 group_col: str | None = None) -> list[ColumnSpec]:
    """Schema for an arbitrary CSV header: every column is a unitless feature
    except ``target`` and ``group_col``."""
    specs = []
    for name in header:
        kind = "target" if name == target else "group" if name == group_col else "feature"
        specs.append(ColumnSpec(name, "", kind))
    _check_unique(specs)
    return specs


@dataclass(frozen=True)
class TabularDataset:
    """Numeric columns with an explicit missing mask and optional group labels.

    ``values[i, j]`` is meaningless wherever ``missing[i, j]`` is true; every
    consumer reads the mask, never the stored value.
    """

    columns: tuple[ColumnSpec, ...]
    values: np.ndarray
    missing: np.ndarray
    group: np.ndarray | None = None
    group_spec: ColumnSpec | None = None
    row_ids: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        missing = np.asarray(self.missing, dtype=bool)
        if values.ndim != 2:
            raise ValidationError("values must be a 2-D matrix")
        if values.shape != missing.shape:
            raise ValidationError(f"values {values.shape} and mask {missing.shape} differ in shape")
        if values.shape[1] != len(self.columns):
            raise ValidationError(f"{values.shape[1]} value columns but {len(self.columns)} column specs")
        if values.shape[0] < 1 or values.shape[1] < 1:
            raise ValidationError("dataset needs n >= 1 rows and p >= 1 columns")
        _check_unique(list(self.columns) + ([self.group_spec] if self.group_spec else []))
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "missing", missing)
        if self.group is not None:
            group = np.asarray(self.group, dtype=object)
            if group.shape != (values.shape[0],):
                raise ValidationError("group labels must have one entry per row")
            object.__setattr__(self, "group", group)
        if self.row_ids is None:
            object.__setattr__(self, "row_ids", np.arange(values.shape[0]))

    # shape and names -------------------------------------------------
    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    @property
    def feature_names(self) -> list[str]:
        return [c.name for c in self.columns if c.kind == "feature"]

    @property
    def target_names(self) -> list[str]:
        return [c.name for c in self.columns if c.kind == "target"]

    @property
    def group_name(self) -> str | None:
        return self.group_spec.name if self.group_spec else None

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise SchemaError(f"unknown column {name!r}") from None

    def spec(self, name: str) -> ColumnSpec:
        return self.columns[self.index(name)]

    # data access -----------------------------------------------------
    def to_array(self, names: Sequence[str] | None = None) -> np.ndarray:
        """Copy of the value matrix with NaN in every missing cell."""
        idx = [self.index(c) for c in names] if names is not None else slice(None)
        out = np.array(self.values[:, idx], dtype=float)
        out[self.missing[:, idx]] = np.nan
        return out

    def column(self, name: str) -> np.ndarray:
        return self.to_array([name])[:, 0]

    def observed(self, name: str) -> np.ndarray:
        j = self.index(name)
        return self.values[~self.missing[:, j], j].copy()

    def missing_rate(self) -> np.ndarray:
        return 100.0 * self.missing.sum(axis=0) / self.n

    # derived datasets ------------------------------------------------
    def take(self, rows) -> "TabularDataset":
        rows = np.asarray(rows)
        return TabularDataset(self.columns, self.values[rows], self.missing[rows],
                              None if self.group is None else self.group[rows],
                              self.group_spec, self.row_ids[rows])

    def select(self, names: Sequence[str]) -> "TabularDataset":
        idx = [self.index(c) for c in names]
        return TabularDataset(tuple(self.columns[i] for i in idx), self.values[:, idx],
                              self.missing[:, idx], self.group, self.group_spec, self.row_ids)

    def drop(self, names: Iterable[str]) -> "TabularDataset":
        names = set(names)
        return self.select([c for c in self.names if c not in names])

    def with_target(self, target: str) -> "TabularDataset":
        """Keep ``target`` as the single target column; other target columns are dropped."""
        self.index(target)
        columns = []
        keep = []
        for i, c in enumerate(self.columns):
            if c.name == target:
                columns.append(ColumnSpec(c.name, c.unit, "target"))
                keep.append(i)
            elif c.kind != "target":
                columns.append(c)
                keep.append(i)
        return TabularDataset(tuple(columns), self.values[:, keep], self.missing[:, keep],
                              self.group, self.group_spec, self.row_ids)

    def with_values(self, values: np.ndarray, missing: np.ndarray | None = None) -> "TabularDataset":
        values = np.asarray(values, dtype=float)
        if missing is None:
            missing = np.isnan(values)
        return TabularDataset(self.columns, values, missing, self.group, self.group_spec, self.row_ids)

    def append_column(self, spec: ColumnSpec, values, missing=None) -> "TabularDataset":
        if spec.name in self.names or spec.name == self.group_name:
            raise SchemaError(f"column {spec.name!r} already exists")
        values = np.asarray(values, dtype=float).reshape(-1, 1)
        missing = np.zeros_like(values, dtype=bool) if missing is None else np.asarray(missing, bool).reshape(-1, 1)
        return TabularDataset(self.columns + (spec,), np.hstack([self.values, values]),
                              np.hstack([self.missing, missing]), self.group, self.group_spec, self.row_ids)


def _parse_cell(text: str, row: int, column: str) -> float | None:
    token = text.strip()
    if token.lower() in MISSING_TOKENS:
        return None
    try:
        value = float(token)
    except ValueError:
        raise DataParseError(f"row {row}, column {column!r}: cannot parse {text!r} as a number",
                             row=row, column=column) from None
    if math.isnan(value):
        return None
    if not math.isfinite(value):
        raise DataParseError(f"row {row}, column {column!r}: non-finite value {text!r}", row=row, column=column)
    return value


def load_csv(path, schema: Sequence[ColumnSpec] | None = None, group_col: str | None = None) -> TabularDataset:
    """Load a UTF-8 comma-separated file with a header row.

    Empty cells and ``NA`` (any case) are missing.  Every header name must
    appear in ``schema`` and vice versa.  Row numbers in parse errors are
    1-based data rows (the header is row 0).

    Parameters
    ----------
    path : path-like
    schema : list of ColumnSpec, optional
        Defaults to the bundled long-jump schema.
    group_col : str, optional
        Overrides which column carries group labels.
    """
    schema = list(default_schema() if schema is None else schema)
    if group_col is not None:
        schema = [ColumnSpec(c.name, c.unit, "group") if c.name == group_col
                  else (ColumnSpec(c.name, c.unit, "feature") if c.kind == "group" else c) for c in schema]
        if group_col not in {c.name for c in schema}:
            raise SchemaError(f"group column {group_col!r} is not in the schema")
    _check_unique(schema)
    by_name = {c.name: c for c in schema}
    with open(path, encoding="utf-8-sig", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataParseError(f"{path}: empty file") from None
        unknown = [h for h in header if h not in by_name]
        if unknown:
            raise SchemaError(f"{path}: column(s) not in schema: {', '.join(unknown)}")
        absent = [c.name for c in schema if c.name not in header]
        if absent:
            raise SchemaError(f"{path}: schema column(s) missing from file: {', '.join(absent)}")
        if len(set(header)) != len(header):
            raise SchemaError(f"{path}: duplicate header names")
        rows = [r for r in reader if any(cell.strip() for cell in r)]

    groups = [c for c in schema if c.kind == "group"]
    if len(groups) > 1:
        raise SchemaError("at most one group column is supported")
    group_spec = groups[0] if groups else None
    numeric = [c for c in schema if c.kind != "group"]
    # file order, not schema order
    numeric.sort(key=lambda c: header.index(c.name))
    pos = {name: i for i, name in enumerate(header)}

    n = len(rows)
    if n == 0:
        raise DataParseError(f"{path}: no data rows")
    values = np.zeros((n, len(numeric)))
    missing = np.zeros((n, len(numeric)), dtype=bool)
    labels = np.empty(n, dtype=object) if group_spec else None
    for i, row in enumerate(rows, start=1):
        if len(row) != len(header):
            raise DataParseError(f"row {i}: expected {len(header)} cells, found {len(row)}", row=i)
        for j, spec in enumerate(numeric):
            v = _parse_cell(row[pos[spec.name]], i, spec.name)
            if v is None:
                missing[i - 1, j] = True
                values[i - 1, j] = np.nan
            else:
                values[i - 1, j] = v
        if group_spec is not None:
            label = row[pos[group_spec.name]].strip()
            labels[i - 1] = None if label.lower() in MISSING_TOKENS else label
    return TabularDataset(tuple(numeric), values, missing, labels, group_spec)


def load_group_files(files: Mapping[str, object], schema: Sequence[ColumnSpec] | None = None) -> TabularDataset:
    """Stack one file per group, labelling rows by the mapping key.

    Files may omit the schema's group column; when present it must agree
    with the key, either literally or as the same gender.
    """
    schema = list(default_schema() if schema is None else schema)
    groups = [c for c in schema if c.kind == "group"]
    if len(groups) != 1:
        raise SchemaError("load_group_files needs exactly one group column in the schema")
    gspec = groups[0]
    parts = []
    for label, path in files.items():
        with open(path, encoding="utf-8-sig", newline="") as fh:
            header = [h.strip() for h in next(csv.reader(fh), [])]
        if gspec.name in header:
            part = load_csv(path, schema)
            want = classify_group(label)
            bad = sorted({str(g) for g in part.group
                          if g != label and (want is None or classify_group(g) != want)})
            if bad:
                raise SchemaError(f"{path}: group column holds {', '.join(bad)}, expected {label}")
            # "Male" in men.csv is accepted; rows carry the key as their label
            part = TabularDataset(part.columns, part.values, part.missing,
                                  np.array([label] * part.n, dtype=object), gspec)
        else:
            part = load_csv(path, [c for c in schema if c is not gspec])
            part = TabularDataset(part.columns, part.values, part.missing,
                                  np.array([label] * part.n, dtype=object), gspec)
        parts.append(part)
    if not parts:
        raise ValidationError("no input files given")
    first = parts[0].names
    parts = [x if x.names == first else x.select(first) for x in parts]
    return concat(parts)


def write_csv(d: TabularDataset, path, float_format: str = "{:.10g}") -> None:
    names = d.names + ([d.group_name] if d.group_spec else [])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for i in range(d.n):
            row = ["" if d.missing[i, j] else float_format.format(d.values[i, j]) for j in range(d.p)]
            if d.group_spec:
                row.append("" if d.group[i] is None else str(d.group[i]))
            w.writerow(row)


def schema_of(d: TabularDataset) -> list[ColumnSpec]:
    return list(d.columns) + ([d.group_spec] if d.group_spec else [])


# summaries -----------------------------------------------------------------

@dataclass(frozen=True)
class ColumnSummary:
    name: str
    unit: str
    n_observed: int
    mean: float  # NaN marks "undefined"
    sd: float
    missing_rate: float  # percent, unrounded

    @property
    def missing_percent(self) -> int:
        return int(math.floor(self.missing_rate + 0.5))


@dataclass(frozen=True)
class SummaryStats:
    n: int
    columns: tuple[ColumnSummary, ...]

    def __getitem__(self, name: str) -> ColumnSummary:
        for c in self.columns:
            if c.name == name:
                return c
        raise KeyError(name)

    def names(self) -> list[str]:
        return [c.name for c in self.columns]


def summarize(d: TabularDataset) -> SummaryStats:
    """Per-column mean, sample SD (n-1) and missing rate over observed cells."""
    out = []
    for j, spec in enumerate(d.columns):
        obs = d.values[~d.missing[:, j], j]
        k = obs.size
        mean = float(obs.mean()) if k else math.nan
        sd = float(obs.std(ddof=1)) if k > 1 else math.nan
        out.append(ColumnSummary(spec.name, spec.unit, k, mean, sd, 100.0 * (d.n - k) / d.n))
    return SummaryStats(d.n, tuple(out))


def split_by_group(d: TabularDataset) -> dict[str, TabularDataset]:
    """Row-disjoint datasets keyed by group label, in first-appearance order."""
    if d.group is None:
        raise ValidationError("dataset has no group column")
    bad = [int(i) + 1 for i, g in enumerate(d.group) if g is None or str(g).strip() == ""]
    if bad:
        raise ValidationError(f"missing group label on row(s) {bad}")
    out: dict[str, TabularDataset] = {}
    for label in dict.fromkeys(d.group):
        out[label] = d.take(np.flatnonzero(d.group == label))
    return out


def indicator_name(group_name: str, label: str) -> str:
    low = label.lower()
    if low in FEMALE_LABELS:
        suffix = "Female"
    elif low in MALE_LABELS:
        suffix = "Male"
    else:
        suffix = label[:1].upper() + label[1:]
    return f"{group_name}_is{suffix}"


def add_indicator(d: TabularDataset, from_group: str, name: str | None = None) -> TabularDataset:
    """Append a 0/1 feature column equal to 1 where the row's group is ``from_group``."""
    if d.group is None:
        raise ValidationError("dataset has no group column")
    name = name or indicator_name(d.group_name, from_group)
    col = np.array([1.0 if g == from_group else 0.0 for g in d.group])
    return d.append_column(ColumnSpec(name, "dimensionless", "feature"), col)


def concat(datasets: Sequence[TabularDataset]) -> TabularDataset:
    first = datasets[0]
    for other in datasets[1:]:
        if other.names != first.names or other.group_name != first.group_name:
            raise SchemaError("cannot concatenate datasets with different schemas")
    group = None if first.group is None else np.concatenate([x.group for x in datasets])
    return TabularDataset(first.columns, np.vstack([x.values for x in datasets]),
                          np.vstack([x.missing for x in datasets]), group, first.group_spec)


def classify_group(label: str) -> str | None:
    """Map a group label onto ``"men"``/``"women"`` when recognisable."""
    low = str(label).strip().lower()
    if low in FEMALE_LABELS:
        return "women"
    if low in MALE_LABELS:
        return "men"
    return None


def fixture_path() -> Path:
    return Path(str(resources.files("qrfx").joinpath("data/fixture_longjump.csv")))


def load_fixture() -> TabularDataset:
    """Bundled 12-row synthetic file with the full long-jump schema."""
    return load_csv(fixture_path(), default_schema())
