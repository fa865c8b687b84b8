"""Tabular data: typed datasets, CSV I/O, splitting and the synthetic generators."""
from __future__ import annotations

import csv
import hashlib
import io
import math
from dataclasses import dataclass
from importlib import resources
from typing import NamedTuple, Sequence

import numpy as np

from .circuit import CONTINUOUS, DISCRETE, KINDS, Circuit, CircuitBuilder, write_text_atomic
from .errors import ConfigError, DataError
from .leaves import Categorical, Gaussian

MAX_DISCRETE_STATES = 20
_MISSING = {"", "na", "nan", "null", "none", "?"}


@dataclass(frozen=True, eq=False)
class Dataset:
    """Rows of numeric values with a name and a kind per column.

    Discrete values are stored as their numeric state codes.
    """

    columns: tuple  # ((name, kind), ...)
    values: np.ndarray
    dropped_rows: int = 0

    def __post_init__(self):
        cols = tuple((str(n), str(k)) for n, k in self.columns)
        X = np.array(self.values, dtype=float)
        if X.ndim == 1 and len(cols) == 1:
            X = X[:, None]
        if X.ndim != 2 or X.shape[1] != len(cols):
            raise DataError(f"values of shape {X.shape} do not match {len(cols)} columns")
        if not np.all(np.isfinite(X)):
            raise DataError("dataset values must be finite")
        for name, kind in cols:
            if kind not in KINDS:
                raise DataError(f"column {name!r} has unknown kind {kind!r}")
        X.setflags(write=False)
        object.__setattr__(self, "columns", cols)
        object.__setattr__(self, "values", X)

    @property
    def names(self) -> tuple:
        return tuple(n for n, _ in self.columns)

    @property
    def kinds(self) -> tuple:
        return tuple(k for _, k in self.columns)

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def __len__(self):
        return self.n_rows

    def states(self, j: int) -> tuple:
        return tuple(np.unique(self.values[:, j]))

    def subset(self, rows) -> "Dataset":
        return Dataset(self.columns, self.values[np.asarray(rows)])

    def equals(self, other: "Dataset") -> bool:
        return self.columns == other.columns and np.array_equal(self.values, other.values)


def infer_kinds(values, max_states: int = MAX_DISCRETE_STATES) -> tuple:
    """Discrete when a column has fewer than ``max_states`` distinct values."""
    X = np.asarray(values, dtype=float)
    return tuple(DISCRETE if np.unique(X[:, j]).size < max_states else CONTINUOUS for j in range(X.shape[1]))


def _kind_hint(hint, names) -> dict:
    if hint is None:
        return {}
    if isinstance(hint, dict):
        unknown = set(hint) - set(names)
        if unknown:
            raise DataError(f"schema hint names unknown columns {sorted(unknown)}")
        out = dict(hint)
    else:
        hint = list(hint)
        if len(hint) != len(names):
            raise DataError(f"schema hint has {len(hint)} kinds for {len(names)} columns")
        out = dict(zip(names, hint))
    for k in out.values():
        if k not in KINDS:
            raise DataError(f"unknown column kind {k!r}")
    return out


def read_csv_text(text: str, schema=None, max_states: int = MAX_DISCRETE_STATES, source: str = "<csv>") -> Dataset:
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise DataError(f"{source}: file is empty") from None
    names = [h.strip() for h in header]
    if not names or any(not n for n in names):
        raise DataError(f"{source}: header row has empty column names")
    if len(set(names)) != len(names):
        raise DataError(f"{source}: duplicate column names in header")
    rows, dropped = [], 0
    for lineno, record in enumerate(reader, start=2):
        if not record or all(not cell.strip() for cell in record):
            continue
        if len(record) != len(names):
            raise DataError(f"{source}: line {lineno} has {len(record)} fields, expected {len(names)}")
        row, missing = [], False
        for name, cell in zip(names, record):
            cell = cell.strip()
            if cell.lower() in _MISSING:
                missing = True
                break
            try:
                v = float(cell)
            except ValueError:
                raise DataError(f"{source}: line {lineno}, column {name!r}: cannot parse {cell!r}") from None
            if not math.isfinite(v):
                raise DataError(f"{source}: line {lineno}, column {name!r}: non-finite value {cell!r}")
            row.append(v)
        if missing:
            dropped += 1
        else:
            rows.append(row)
    if not rows:
        raise DataError(f"{source}: no complete data rows")
    X = np.array(rows, dtype=float)
    hint = _kind_hint(schema, names)
    auto = infer_kinds(X, max_states)
    kinds = [hint.get(n, k) for n, k in zip(names, auto)]
    return Dataset(tuple(zip(names, kinds)), X, dropped)


def load_csv(path, schema=None, max_states: int = MAX_DISCRETE_STATES) -> Dataset:
    """Read a comma-separated file with a header row.

    Columns with fewer than ``max_states`` distinct values are typed discrete
    unless ``schema`` (a list of kinds or a ``{name: kind}`` dict) says
    otherwise.  Rows with empty or NA cells are dropped and counted in
    ``dropped_rows``.
    """
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            text = fh.read()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror or exc}") from None
    return read_csv_text(text, schema, max_states, source=str(path))


def csv_text(dataset: Dataset) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(dataset.names)
    for row in dataset.values:
        writer.writerow([format(float(v), ".17g") for v in row])
    return buf.getvalue()


def save_csv(dataset: Dataset, path) -> None:
    write_text_atomic(path, csv_text(dataset))


def load_bundled_sample() -> Dataset:
    """The small heterogeneous sample shipped with the package."""
    text = resources.files("charcirc.data_files").joinpath("hetero_sample.csv").read_text(encoding="utf-8")
    return read_csv_text(text, source="hetero_sample.csv")


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def dataset_manifest(dataset: Dataset, **extra) -> dict:
    """JSON-ready record of column names, kinds and row counts (plus ``extra``)."""
    out = {
        "columns": [{"index": j, "name": n, "kind": k} for j, (n, k) in enumerate(dataset.columns)],
        "rows": dataset.n_rows,
        "dropped_rows": dataset.dropped_rows,
    }
    out.update(extra)
    return out


class Split(NamedTuple):
    train: Dataset
    val: Dataset
    test: Dataset


def split(dataset: Dataset, fractions: Sequence[float] = (0.7, 0.1, 0.2), seed: int = 0) -> Split:
    """Shuffle and cut into train/validation/test parts of rounded sizes."""
    fr = [float(f) for f in fractions]
    if len(fr) != 3 or any(f <= 0 for f in fr) or abs(sum(fr) - 1.0) > 1e-9:
        raise ConfigError(f"fractions must be three positive numbers summing to 1, got {fractions}")
    n = dataset.n_rows
    n_train = int(round(fr[0] * n))
    n_val = int(round(fr[1] * n))
    n_test = n - n_train - n_val
    if min(n_train, n_val, n_test) < 1:
        raise DataError(f"{n} rows are too few for three non-empty parts with fractions {fr}")
    perm = np.random.default_rng(seed).permutation(n)
    return Split(
        dataset.subset(perm[:n_train]),
        dataset.subset(perm[n_train:n_train + n_val]),
        dataset.subset(perm[n_train + n_val:]),
    )


# synthetic generators ---------------------------------------------------------

class Synthetic(NamedTuple):
    train: Dataset
    test: Dataset
    truth: Circuit


MM_WEIGHTS = (0.3, 0.7)
MM_MEANS = (0.0, 5.0)
MM_VARS = (1.0, 1.0)
MM_STATES = (1.0, 2.0, 3.0)
MM_PROBS = ((0.6, 0.4, 0.0), (0.1, 0.2, 0.7))

BN_STATES = (1.0, 2.0)
BN_P1 = (0.3, 0.7)
BN_P2 = (0.8, 0.2)
# rows indexed by (x1, x2) in the order (1,1), (1,2), (2,1), (2,2)
BN_P3 = ((1.0, 0.0), (0.9, 0.1), (0.3, 0.7), (0.1, 0.9))
BN_P5 = ((0.98, 0.02), (0.05, 0.95))
BN_X4_OFFSET = 3.0


def _check_sizes(n_train: int, n_test: int) -> None:
    for name, v in (("n_train", n_train), ("n_test", n_test)):
        if int(v) != v or v < 1:
            raise ConfigError(f"{name} must be a positive integer, got {v!r}")


def mm_truth() -> Circuit:
    """Two-component mixture of (Gaussian x categorical) products."""
    b = CircuitBuilder()
    prods = []
    for mu, var, p in zip(MM_MEANS, MM_VARS, MM_PROBS):
        g = b.add_leaf(0, Gaussian(mu, var))
        c = b.add_leaf(1, Categorical(MM_STATES, p))
        prods.append(b.add_product([g, c]))
    root = b.add_sum(prods, MM_WEIGHTS)
    return b.build(root, 2, (CONTINUOUS, DISCRETE))


def generate_mm(n_train: int = 800, n_test: int = 800, seed: int = 0) -> Synthetic:
    _check_sizes(n_train, n_test)
    rng = np.random.default_rng(seed)
    n = n_train + n_test
    z = rng.choice(2, size=n, p=MM_WEIGHTS)
    x1 = rng.normal(np.take(MM_MEANS, z), np.sqrt(np.take(MM_VARS, z)))
    x2 = np.take(MM_STATES, _draw(rng, np.asarray(MM_PROBS)[z]))
    X = np.column_stack([x1, x2])
    cols = (("x1", CONTINUOUS), ("x2", DISCRETE))
    return Synthetic(Dataset(cols, X[:n_train]), Dataset(cols, X[n_train:]), mm_truth())


def _draw(rng, probs, n=None):
    """Index draws from rows of ``probs`` (one row per sample, or a single row)."""
    probs = np.asarray(probs, dtype=float)
    if probs.ndim == 1:
        probs = np.broadcast_to(probs, (n, probs.size))
    u = rng.random(probs.shape[0])
    return np.minimum((u[:, None] >= np.cumsum(probs, axis=1)).sum(axis=1), probs.shape[1] - 1)


def bn_truth() -> Circuit:
    """The five-variable network written as a finite mixture circuit.

    The root mixes the four ``(x1, x2)`` configurations; each branch multiplies
    indicator leaves for ``x1``, ``x2`` with a mixture over ``x3`` whose
    weights are the CPT row.  The two ``x3`` components are shared products
    of an ``x3`` indicator, the Gaussian ``x4 | x3`` and the categorical
    ``x5 | x3``.
    """
    b = CircuitBuilder()
    x3_branch = []
    for k, s3 in enumerate(BN_STATES):
        ind = b.add_leaf(2, Categorical(BN_STATES, tuple(1.0 if j == k else 0.0 for j in range(2))))
        g = b.add_leaf(3, Gaussian(s3 + BN_X4_OFFSET, 1.0))
        c = b.add_leaf(4, Categorical(BN_STATES, BN_P5[k]))
        x3_branch.append(b.add_product([ind, g, c]))
    configs, weights = [], []
    for i1 in range(2):
        for i2 in range(2):
            row = BN_P3[2 * i1 + i2]
            l1 = b.add_leaf(0, Categorical(BN_STATES, tuple(1.0 if j == i1 else 0.0 for j in range(2))))
            l2 = b.add_leaf(1, Categorical(BN_STATES, tuple(1.0 if j == i2 else 0.0 for j in range(2))))
            mix = b.add_sum(x3_branch, row)
            configs.append(b.add_product([l1, l2, mix]))
            weights.append(BN_P1[i1] * BN_P2[i2])
    root = b.add_sum(configs, weights)
    return b.build(root, 5, (DISCRETE, DISCRETE, DISCRETE, CONTINUOUS, DISCRETE))


def generate_bn(n_train: int = 800, n_test: int = 800, seed: int = 0) -> Synthetic:
    _check_sizes(n_train, n_test)
    rng = np.random.default_rng(seed)
    n = n_train + n_test
    i1 = _draw(rng, BN_P1, n)
    i2 = _draw(rng, BN_P2, n)
    i3 = _draw(rng, np.asarray(BN_P3)[2 * i1 + i2])
    s3 = np.take(BN_STATES, i3)
    x4 = rng.normal(s3 + BN_X4_OFFSET, 1.0)
    i5 = _draw(rng, np.asarray(BN_P5)[i3])
    X = np.column_stack([np.take(BN_STATES, i1), np.take(BN_STATES, i2), s3, x4, np.take(BN_STATES, i5)])
    cols = (("x1", DISCRETE), ("x2", DISCRETE), ("x3", DISCRETE), ("x4", CONTINUOUS), ("x5", DISCRETE))
    return Synthetic(Dataset(cols, X[:n_train]), Dataset(cols, X[n_train:]), bn_truth())


GENERATORS = {"mm": generate_mm, "bn": generate_bn}
