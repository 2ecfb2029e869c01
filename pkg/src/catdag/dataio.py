"""Datasets laid out in DAG span order, CSV I/O and row splitting."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import BinaryValueError, HeaderMismatchError, MissingValueError, ParseError, ShapeError
from .graph import Dag

_MISSING = {"", "na", "nan", "null", "none", "?"}


@dataclass(frozen=True)
class Dataset:
    """Row-major float64 matrix whose columns follow ``dag``'s node spans."""

    values: np.ndarray
    dag: Dag

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[1] != self.dag.total_dim:
            raise ShapeError(f"dataset of shape {v.shape} does not match {self.dag.total_dim} graph columns")
        object.__setattr__(self, "values", v)

    def __len__(self):
        return self.values.shape[0]

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def spans(self) -> dict[str, tuple[int, int]]:
        return dict(zip(self.dag.names, self.dag.spans()))

    def column(self, node) -> np.ndarray:
        """The ``(N, dim)`` block of ``node`` (a view)."""
        a, b = self.dag.spans()[self.dag.index(node)]
        return self.values[:, a:b]

    def rows(self, index) -> "Dataset":
        return Dataset(self.values[np.asarray(index)], self.dag)

    def with_values(self, values) -> "Dataset":
        return Dataset(values, self.dag)

    def check_binary(self):
        """Raise BinaryValueError if a binary column holds anything but 0/1."""
        bad = _first_nonbinary(self.values, self.dag)
        if bad is not None:
            name, r, c = bad
            raise BinaryValueError(f"binary node {name} holds {self.values[r, c]!r}", row=r, col=c)


def _first_nonbinary(values: np.ndarray, dag: Dag):
    for node, (a, b) in zip(dag.nodes, dag.spans()):
        if node.kind != "binary":
            continue
        block = values[:, a:b]
        bad = np.argwhere((block != 0.0) & (block != 1.0))
        if bad.size:
            r, c = bad[0]
            return node.name, int(r), int(a + c)
    return None


def column_names(dag: Dag) -> list[str]:
    names = []
    for node in dag.nodes:
        if node.dim == 1:
            names.append(node.name)
        else:
            names += [f"{node.name}.{k}" for k in range(node.dim)]
    return names


def _header_positions(header: Sequence[str], dag: Dag) -> np.ndarray:
    """For each data column (span order), the CSV field index that feeds it."""
    where: dict[str, int] = {}
    for i, h in enumerate(header):
        h = h.strip()
        if h in where:
            raise HeaderMismatchError(f"duplicate column {h!r}")
        where[h] = i
    pos = []
    used = set()
    for node in dag.nodes:
        for k in range(node.dim):
            candidates = ([node.name] if node.dim == 1 else []) + [f"{node.name}.{k}"]
            hit = [c for c in candidates if c in where]
            if not hit:
                raise HeaderMismatchError(f"missing column {candidates[0]!r} for node {node.name} (dim {node.dim})")
            if len(hit) > 1:
                raise HeaderMismatchError(f"node {node.name} given both as {hit[0]!r} and {hit[1]!r}")
            pos.append(where[hit[0]])
            used.add(hit[0])
    extra = sorted(set(where) - used)
    if extra:
        raise HeaderMismatchError(f"columns not in graph: {extra}")
    return np.array(pos, dtype=int)


def load_csv(path, dag: Dag) -> Dataset:
    """Read a headed CSV into span order. ``row`` in errors is 1-based over data rows."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise HeaderMismatchError(f"{path}: empty file") from None
        pos = _header_positions(header, dag)
        rows = []
        for r, fields in enumerate(reader, 1):
            if not fields:
                continue
            if len(fields) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(fields)}", row=r)
            row = []
            for c in pos:
                cell = fields[c].strip()
                if cell.lower() in _MISSING:
                    raise MissingValueError(f"missing value in column {header[c]!r}", row=r, col=int(c))
                try:
                    x = float(cell)
                except ValueError:
                    raise ParseError(f"cannot parse {cell!r} as a number", row=r, col=int(c)) from None
                if not math.isfinite(x):
                    raise ParseError(f"non-finite value {cell!r}", row=r, col=int(c))
                row.append(x)
            rows.append(row)
    values = np.array(rows, dtype=np.float64).reshape(len(rows), dag.total_dim)
    bad = _first_nonbinary(values, dag)
    if bad is not None:
        name, r, c = bad
        raise BinaryValueError(f"binary node {name} holds {values[r, c]!r}", row=r + 1, col=int(pos[c]))
    return Dataset(values, dag)


def save_csv(dataset: Dataset, path):
    """Write with 17 significant digits so float64 values round-trip exactly."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(column_names(dataset.dag)) + "\n")
        for row in dataset.values:
            fh.write(",".join(f"{x:.17g}" for x in row) + "\n")


# -- splitting --------------------------------------------------------------

@dataclass(frozen=True)
class SplitSpec:
    fractions: tuple[float, float, float] = (0.56, 0.24, 0.20)
    seed: int = 0

    def __post_init__(self):
        f = tuple(float(x) for x in self.fractions)
        if len(f) != 3 or min(f) < 0 or abs(sum(f) - 1.0) > 1e-9:
            raise ValueError(f"split fractions must be three non-negative numbers summing to 1, got {self.fractions}")
        object.__setattr__(self, "fractions", f)


def split_sizes(n: int, fractions) -> tuple[int, int, int]:
    # the small slack keeps 0.56 * 100 from flooring to 55 on representation error
    n_train = min(n, int(math.floor(fractions[0] * n + 1e-9)))
    n_val = min(n - n_train, int(math.floor(fractions[1] * n + 1e-9)))
    return n_train, n_val, n - n_train - n_val


def split(dataset: Dataset, spec: SplitSpec = SplitSpec()) -> tuple[Dataset, Dataset, Dataset]:
    """Disjoint, exhaustive row partition; original row order kept inside each part."""
    n = len(dataset)
    n_train, n_val, _ = split_sizes(n, spec.fractions)
    order = np.random.default_rng(spec.seed).permutation(n)
    parts = (order[:n_train], order[n_train:n_train + n_val], order[n_train + n_val:])
    return tuple(dataset.rows(np.sort(p)) for p in parts)


# -- padding ------------------------------------------------------------------

@dataclass(frozen=True)
class PaddedDataset:
    """Every node block right-padded with zeros to ``width`` columns."""

    values: np.ndarray
    width: int
    source: Dag = field(repr=False)

    @property
    def spans(self) -> dict[str, tuple[int, int]]:
        w = self.width
        return {name: (i * w, (i + 1) * w) for i, name in enumerate(self.source.names)}

    @property
    def index(self) -> np.ndarray:
        """Padded column holding each original column."""
        w = self.width
        return np.concatenate([i * w + np.arange(d) for i, d in enumerate(self.source.dims)])


def pad_to_common_dim(dataset: Dataset) -> tuple[PaddedDataset, int]:
    dag = dataset.dag
    c = dag.max_dim
    out = PaddedDataset(np.zeros((len(dataset), len(dag) * c)), c, dag)
    out.values[:, out.index] = dataset.values
    return out, c


def unpad(padded: PaddedDataset) -> Dataset:
    return Dataset(padded.values[:, padded.index], padded.source)


def align(dataset: Dataset, dag: Dag) -> Dataset:
    """Reorder columns so they follow ``dag``'s node order (matched by name)."""
    src = dataset.dag
    if sorted(src.names) != sorted(dag.names):
        raise HeaderMismatchError(f"nodes {sorted(src.names)} do not match graph nodes {sorted(dag.names)}")
    spans = src.spans()
    cols = []
    for node in dag.nodes:
        a, b = spans[src.index(node.name)]
        if b - a != node.dim:
            raise HeaderMismatchError(f"node {node.name} has dim {b - a} in the data, {node.dim} in the graph")
        cols.extend(range(a, b))
    return Dataset(dataset.values[:, cols], dag)
