"""Table schemas, CSV ingestion, and deterministic train/validation/test splits.

Raw tables are stored as a float matrix: numerical cells hold their value,
categorical cells hold the category index (stable ordering recorded on the
schema so decoding works across processes).
"""

import csv
import json
import logging
from dataclasses import dataclass, field, replace

import numpy as np

logger = logging.getLogger("fairdiff")

NUMERICAL = "numerical"
CATEGORICAL = "categorical"

# cell tokens treated as missing at ingestion; such rows are dropped
MISSING_TOKENS = {"", "?", "NA", "N/A", "NaN", "nan"}


class SchemaError(ValueError):
    """Schema is inconsistent or does not match the data file."""


@dataclass(frozen=True)
class Column:
    name: str
    kind: str  # NUMERICAL or CATEGORICAL
    values: tuple = ()  # category labels in index order (categorical only)

    @property
    def cardinality(self):
        return len(self.values)


@dataclass(frozen=True)
class TableSchema:
    """Column roles for a mixed-type table.

    ``target`` must name a categorical column; ``sensitive`` is an ordered
    (possibly empty) list of categorical column names.
    """

    columns: tuple
    target: str
    sensitive: tuple = ()

    def __post_init__(self):
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise SchemaError("column names must be unique")
        by_name = {c.name: c for c in self.columns}
        if self.target not in by_name:
            raise SchemaError(f"target column {self.target!r} not declared")
        if by_name[self.target].kind != CATEGORICAL:
            raise SchemaError("target column must be categorical")
        for s in self.sensitive:
            if s not in by_name:
                raise SchemaError(f"sensitive column {s!r} not declared")
            if by_name[s].kind != CATEGORICAL:
                raise SchemaError(f"sensitive column {s!r} must be categorical")
        for c in self.columns:
            if c.kind not in (NUMERICAL, CATEGORICAL):
                raise SchemaError(f"unknown column kind {c.kind!r}")
            if c.kind == CATEGORICAL and c.values and c.cardinality < 2:
                raise SchemaError(
                    f"categorical column {c.name!r} needs cardinality >= 2"
                )

    @property
    def names(self):
        return [c.name for c in self.columns]

    def column(self, name):
        for c in self.columns:
            if c.name == name:
                return c
        raise KeyError(name)

    def index_of(self, name):
        return self.names.index(name)

    @property
    def numerical_names(self):
        return [c.name for c in self.columns if c.kind == NUMERICAL]

    @property
    def categorical_names(self):
        return [c.name for c in self.columns if c.kind == CATEGORICAL]

    @property
    def cardinalities(self):
        return [c.cardinality for c in self.columns if c.kind == CATEGORICAL]

    def is_resolved(self):
        """True once every categorical column has its category list."""
        return all(
            c.cardinality >= 2 for c in self.columns if c.kind == CATEGORICAL
        )

    def to_dict(self):
        return {
            "columns": [
                {"name": c.name, "kind": c.kind, "values": list(c.values)}
                if c.kind == CATEGORICAL
                else {"name": c.name, "kind": c.kind}
                for c in self.columns
            ],
            "target": self.target,
            "sensitive": list(self.sensitive),
        }

    @classmethod
    def from_dict(cls, d):
        cols = []
        for c in d["columns"]:
            kind = c["kind"]
            values = tuple(str(v) for v in c.get("values", ())) if kind == CATEGORICAL else ()
            cols.append(Column(name=c["name"], kind=kind, values=values))
        return cls(
            columns=tuple(cols),
            target=d["target"],
            sensitive=tuple(d.get("sensitive", ())),
        )


def load_schema(path):
    with open(path, "r", encoding="utf-8") as fh:
        return TableSchema.from_dict(json.load(fh))


@dataclass
class Dataset:
    """Parsed rows plus the (resolved) schema that interprets them."""

    schema: TableSchema
    rows: np.ndarray  # (n, n_columns) float; categorical cells are indices
    dropped_rows: int = 0

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=float)
        if self.rows.ndim != 2 or self.rows.shape[1] != len(self.schema.columns):
            raise SchemaError(
                f"rows must have {len(self.schema.columns)} columns, "
                f"got shape {self.rows.shape}"
            )
        for j, col in enumerate(self.schema.columns):
            if col.kind == CATEGORICAL and len(self.rows):
                cells = self.rows[:, j]
                if np.any(cells != np.round(cells)):
                    raise SchemaError(f"non-integer category index in {col.name!r}")
                if cells.min() < 0 or cells.max() >= col.cardinality:
                    raise SchemaError(
                        f"category index out of range in column {col.name!r}"
                    )

    def __len__(self):
        return self.rows.shape[0]

    def column_values(self, name):
        return self.rows[:, self.schema.index_of(name)]

    def subset(self, indices):
        return Dataset(self.schema, self.rows[np.asarray(indices, dtype=int)])


def load_dataset(path, schema, missing_tokens=MISSING_TOKENS):
    """Parse a header-bearing CSV into a Dataset.

    Category strings map to indices in the schema's explicit ordering when
    given, else first-seen order. Rows containing missing cells are dropped
    and counted.
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = None
        for row in reader:
            if row and row[0].startswith("#"):
                continue  # artifact CSVs carry a config-hash comment line
            header = row
            break
        if header is None:
            raise SchemaError(f"{path}: empty file")
        header = [h.strip() for h in header]
        missing = [n for n in schema.names if n not in header]
        if missing:
            raise SchemaError(f"{path}: missing column {missing[0]!r}")
        col_pos = [header.index(n) for n in schema.names]

        explicit = {}
        seen = {}
        for c in schema.columns:
            if c.kind == CATEGORICAL:
                if c.values:
                    explicit[c.name] = {v: i for i, v in enumerate(c.values)}
                else:
                    seen[c.name] = {}

        rows = []
        dropped = 0
        for row_idx, raw in enumerate(reader):
            cells = [raw[p].strip() for p in col_pos]
            if any(c in missing_tokens for c in cells):
                dropped += 1
                continue
            parsed = np.empty(len(cells))
            for j, (col, cell) in enumerate(zip(schema.columns, cells)):
                if col.kind == NUMERICAL:
                    try:
                        parsed[j] = float(cell)
                    except ValueError:
                        raise SchemaError(
                            f"{path}: non-numeric value {cell!r} in numerical "
                            f"column {col.name!r} at data row {row_idx}"
                        ) from None
                elif col.name in explicit:
                    try:
                        parsed[j] = explicit[col.name][cell]
                    except KeyError:
                        raise SchemaError(
                            f"{path}: unknown category {cell!r} in column "
                            f"{col.name!r}"
                        ) from None
                else:
                    mapping = seen[col.name]
                    if cell not in mapping:
                        mapping[cell] = len(mapping)
                    parsed[j] = mapping[cell]
            rows.append(parsed)

    resolved_cols = []
    for c in schema.columns:
        if c.kind == CATEGORICAL and not c.values:
            ordering = tuple(seen[c.name])
            if len(ordering) < 2:
                raise SchemaError(
                    f"{path}: categorical column {c.name!r} has fewer than "
                    f"2 observed categories"
                )
            resolved_cols.append(replace(c, values=ordering))
        else:
            resolved_cols.append(c)
    resolved = TableSchema(
        columns=tuple(resolved_cols), target=schema.target, sensitive=schema.sensitive
    )
    if dropped:
        logger.info("dropped %d rows with missing cells from %s", dropped, path)
    data = np.array(rows) if rows else np.empty((0, len(schema.columns)))
    return Dataset(resolved, data, dropped_rows=dropped)


def split_dataset(ds, seed):
    """Deterministic 50/25/25 row partition; odd remainders land in test."""
    n = len(ds)
    if n == 0:
        raise ValueError("cannot split an empty dataset")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    n_train = n // 2
    n_val = (n - n_train) // 2
    train = np.sort(perm[:n_train])
    val = np.sort(perm[n_train : n_train + n_val])
    test = np.sort(perm[n_train + n_val :])
    return ds.subset(train), ds.subset(val), ds.subset(test)


def split_indices(n, seed):
    """Index triple used by split_dataset, exposed for run manifests."""
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    n_train = n // 2
    n_val = (n - n_train) // 2
    return (
        np.sort(perm[:n_train]),
        np.sort(perm[n_train : n_train + n_val]),
        np.sort(perm[n_train + n_val :]),
    )


def decode_rows_to_strings(ds):
    """Render rows with category labels substituted back in, for CSV output."""
    out = []
    for row in ds.rows:
        rendered = []
        for col, cell in zip(ds.schema.columns, row):
            if col.kind == CATEGORICAL:
                rendered.append(col.values[int(cell)])
            else:
                rendered.append(repr(float(cell)))
        out.append(rendered)
    return out
