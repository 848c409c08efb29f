"""Tabular datasets with mixed categorical/numeric features.

Instances are stored as a float matrix of *codes*: a numeric feature holds its
raw value, a categorical feature holds the index of its token in the schema's
category list.  Everything downstream (models, distances, generators) works
on that matrix; tokens only appear at the I/O boundary.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import DataError

CATEGORICAL = "categorical"
NUMERIC = "numeric"


@dataclass(frozen=True)
class FeatureSchema:
    name: str
    kind: str
    index: int
    categories: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in (CATEGORICAL, NUMERIC):
            raise DataError(f"feature {self.name!r}: unknown kind {self.kind!r}")

    @property
    def is_categorical(self) -> bool:
        return self.kind == CATEGORICAL


class Dataset:
    """Immutable table of instances plus a binary target.

    ``X`` holds codes (see module docstring), ``y`` is 1 for the positive
    label and 0 otherwise.
    """

    def __init__(self, name: str, schema: Sequence[FeatureSchema], X, y,
                 positive_label: str, negative_label: str,
                 ids: Sequence[str] | None = None, check_labels: bool = True):
        self.name = name
        self.schema = tuple(schema)
        X = np.array(X, dtype=float, ndmin=2, copy=True)
        y = np.asarray(y, dtype=int).copy()
        if X.shape[1] != len(self.schema):
            raise DataError(f"{name}: {X.shape[1]} columns for {len(self.schema)} features")
        if len(y) != len(X):
            raise DataError(f"{name}: {len(y)} labels for {len(X)} instances")
        names = [f.name for f in self.schema]
        if len(set(names)) != len(names):
            raise DataError(f"{name}: duplicate feature names")
        if not np.all(np.isfinite(X)):
            raise DataError(f"{name}: non-finite values")
        for f in self.schema:
            if f.is_categorical:
                col = X[:, f.index]
                if len(col) and (col.min() < 0 or col.max() >= len(f.categories)
                                 or not np.all(col == np.round(col))):
                    raise DataError(f"{name}: bad category code in {f.name!r}")
        if check_labels:
            if len(X) < 2:
                raise DataError(f"{name}: need at least 2 instances, got {len(X)}")
            if len(np.unique(y)) != 2:
                raise DataError(f"{name}: target must have exactly two labels")
        X.setflags(write=False)
        y.setflags(write=False)
        self.X = X
        self.y = y
        self.positive_label = positive_label
        self.negative_label = negative_label
        self.ids = tuple(ids) if ids is not None else tuple(str(i) for i in range(len(X)))
        if len(self.ids) != len(X):
            raise DataError(f"{name}: {len(self.ids)} ids for {len(X)} instances")

    def __len__(self):
        return len(self.X)

    def __repr__(self):
        return f"Dataset({self.name!r}, n={len(self)}, features={self.n_features})"

    @property
    def n_features(self) -> int:
        return len(self.schema)

    @property
    def feature_names(self) -> list[str]:
        return [f.name for f in self.schema]

    @property
    def categorical_mask(self) -> np.ndarray:
        return np.array([f.is_categorical for f in self.schema], dtype=bool)

    @property
    def feature_min(self) -> np.ndarray:
        return self.X.min(axis=0)

    @property
    def feature_max(self) -> np.ndarray:
        return self.X.max(axis=0)

    def feature_index(self, name: str) -> int:
        for f in self.schema:
            if f.name == name:
                return f.index
        raise DataError(f"{self.name}: unknown feature {name!r}")

    def decode_row(self, row) -> list:
        """Codes -> tokens (categorical) and floats (numeric)."""
        out = []
        for f, v in zip(self.schema, row):
            out.append(f.categories[int(v)] if f.is_categorical else float(v))
        return out

    def encode_values(self, values) -> np.ndarray:
        """Tokens/floats -> code row; inverse of :meth:`decode_row`."""
        if len(values) != self.n_features:
            raise DataError(f"expected {self.n_features} values, got {len(values)}")
        row = np.empty(self.n_features)
        for f, v in zip(self.schema, values):
            if f.is_categorical:
                try:
                    row[f.index] = f.categories.index(str(v))
                except ValueError:
                    raise DataError(f"{f.name!r}: unknown category {v!r}") from None
            else:
                row[f.index] = _parse_number(v, f.name)
        return row

    def instance(self, i: int) -> list:
        return self.decode_row(self.X[i])

    def subset(self, indices, name: str | None = None) -> "Dataset":
        indices = np.asarray(indices, dtype=int)
        return Dataset(name or self.name, self.schema, self.X[indices], self.y[indices],
                       self.positive_label, self.negative_label,
                       ids=[self.ids[i] for i in indices], check_labels=False)


def _parse_number(token, feature: str) -> float:
    try:
        value = float(token)
    except (TypeError, ValueError):
        raise DataError(f"{feature!r}: non-numeric value {token!r}") from None
    if not math.isfinite(value):
        raise DataError(f"{feature!r}: non-finite value {token!r}")
    return value


def read_schema(schema_path) -> dict:
    with open(schema_path, encoding="utf-8") as fh:
        spec = json.load(fh)
    for key in ("features",):
        if key not in spec:
            raise DataError(f"{schema_path}: schema lacks {key!r}")
    for f in spec["features"]:
        if "name" not in f or "kind" not in f:
            raise DataError(f"{schema_path}: feature entries need 'name' and 'kind'")
        if f["kind"] not in (CATEGORICAL, NUMERIC):
            raise DataError(f"{schema_path}: feature {f['name']!r} has kind {f['kind']!r}")
    return spec


def load_dataset(csv_path, schema_path) -> Dataset:
    """Read a CSV plus its JSON schema sidecar into a validated :class:`Dataset`."""
    spec = read_schema(schema_path)
    for key in ("target", "positive_label"):
        if key not in spec:
            raise DataError(f"{schema_path}: schema lacks {key!r}")
    with open(csv_path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{csv_path}: empty file") from None
        rows = [r for r in reader if r]
    header = [h.strip() for h in header]
    wanted = [f["name"] for f in spec["features"]] + [spec["target"]]
    col = {}
    for name in wanted:
        if name not in header:
            raise DataError(f"{csv_path}: missing column {name!r}")
        col[name] = header.index(name)
    for lineno, r in enumerate(rows, start=2):
        if len(r) != len(header):
            raise DataError(f"{csv_path}:{lineno}: expected {len(header)} fields, got {len(r)}")

    schema = []
    X = np.empty((len(rows), len(spec["features"])))
    for j, f in enumerate(spec["features"]):
        tokens = [r[col[f["name"]]].strip() for r in rows]
        if any(t == "" for t in tokens):
            raise DataError(f"{csv_path}: missing value in column {f['name']!r}")
        if f["kind"] == CATEGORICAL:
            declared = f.get("categories")
            cats = [str(c) for c in declared] if declared else sorted(set(tokens))
            lookup = {c: k for k, c in enumerate(cats)}
            for t in tokens:
                if t not in lookup:
                    raise DataError(f"{csv_path}: unseen category {t!r} in {f['name']!r}")
            X[:, j] = [lookup[t] for t in tokens]
            schema.append(FeatureSchema(f["name"], CATEGORICAL, j, tuple(cats)))
        else:
            X[:, j] = [_parse_number(t, f["name"]) for t in tokens]
            schema.append(FeatureSchema(f["name"], NUMERIC, j))

    target = [r[col[spec["target"]]].strip() for r in rows]
    labels = sorted(set(target))
    positive = str(spec["positive_label"])
    if len(labels) != 2:
        raise DataError(f"{csv_path}: target {spec['target']!r} has {len(labels)} distinct "
                        f"values {labels[:5]}, need exactly 2")
    if positive not in labels:
        raise DataError(f"{csv_path}: positive label {positive!r} not among {labels}")
    negative = labels[0] if labels[1] == positive else labels[1]
    y = np.array([t == positive for t in target], dtype=int)
    name = spec.get("name") or Path(csv_path).stem
    return Dataset(name, schema, X, y, positive, negative)


def write_dataset(d: Dataset, csv_path, schema_path, target: str = "target") -> None:
    """Inverse of :func:`load_dataset`."""
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(d.feature_names + [target])
        for row, label in zip(d.X, d.y):
            vals = [v if isinstance(v, str) else repr(v) for v in d.decode_row(row)]
            w.writerow(vals + [d.positive_label if label else d.negative_label])
    spec = {
        "name": d.name,
        "target": target,
        "positive_label": d.positive_label,
        "features": [
            {"name": f.name, "kind": f.kind, **({"categories": list(f.categories)} if f.is_categorical else {})}
            for f in d.schema
        ],
    }
    with open(schema_path, "w", encoding="utf-8") as fh:
        json.dump(spec, fh, indent=2)


@dataclass(frozen=True)
class SplitSpec:
    test_fraction: float = 0.2
    test_min: int = 200
    explanandum_sample: int = 200
    seed: int = 0
    stratified: bool = False

    def __post_init__(self):
        if not 0 < self.test_fraction < 1:
            raise DataError("test_fraction must lie in (0, 1)")
        if self.test_min < 1:
            raise DataError("test_min must be >= 1")

    def test_size(self, n: int) -> int:
        # round() guards against 0.2 * 15 == 3.0000000000000004
        return max(math.ceil(round(self.test_fraction * n, 9)), self.test_min)


def split_train_test(d: Dataset, s: SplitSpec = SplitSpec()) -> tuple[Dataset, Dataset]:
    """Seeded train/test partition; the test set holds max(ceil(frac*N), test_min) rows."""
    n = len(d)
    if n <= s.test_min:
        raise DataError(f"{d.name}: {n} instances, need more than test_min={s.test_min}")
    n_test = s.test_size(n)
    rng = np.random.default_rng(s.seed)
    if s.stratified:
        test_idx = []
        pos = np.flatnonzero(d.y == 1)
        neg = np.flatnonzero(d.y == 0)
        n_pos = int(round(n_test * len(pos) / n))
        n_pos = min(max(n_pos, n_test - len(neg)), len(pos))
        test_idx = np.concatenate([rng.permutation(pos)[:n_pos],
                                   rng.permutation(neg)[:n_test - n_pos]])
    else:
        test_idx = rng.permutation(n)[:n_test]
    mask = np.zeros(n, dtype=bool)
    mask[test_idx] = True
    return (d.subset(np.flatnonzero(~mask), f"{d.name}"),
            d.subset(np.flatnonzero(mask), f"{d.name}"))


def sample_explananda(test: Dataset, s: SplitSpec = SplitSpec()) -> np.ndarray:
    """Indices into ``test``: uniform without replacement, sorted."""
    k = min(s.explanandum_sample, len(test))
    rng = np.random.default_rng([s.seed, 1])
    return np.sort(rng.choice(len(test), size=k, replace=False))


class TabularEncoder(TransformerMixin, BaseEstimator):
    """Min-max scale numeric codes and one-hot categorical codes.

    Fitted ranges come from the training matrix; values outside are clamped
    to [0, 1].  A numeric feature of zero width encodes to 0.
    """

    def __init__(self, schema=None):
        self.schema = schema

    def fit(self, X, y=None):
        schema = self.schema
        if isinstance(X, Dataset):
            schema = schema if schema is not None else X.schema
            X = X.X
        if schema is None:
            raise DataError("TabularEncoder needs a schema")
        self.schema_ = tuple(schema)
        X = check_array(X, dtype=float)
        if X.shape[1] != len(self.schema_):
            raise DataError("column count does not match schema")
        self.min_ = X.min(axis=0)
        self.max_ = X.max(axis=0)
        widths, slots = [], []
        for f in self.schema_:
            slots.append(sum(widths))
            widths.append(len(f.categories) if f.is_categorical else 1)
        self.offsets_ = np.array(slots)
        self.widths_ = np.array(widths)
        self.n_output_features_ = int(sum(widths))
        self._cat = np.array([f.is_categorical for f in self.schema_])
        span = self.max_ - self.min_
        self._scale = np.where(span > 0, span, 1.0)
        self._num_cols = np.flatnonzero(~self._cat)
        self._cat_cols = np.flatnonzero(self._cat)
        return self

    def transform(self, X):
        check_is_fitted(self, "offsets_")
        if isinstance(X, Dataset):
            X = X.X
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != len(self.schema_):
            raise DataError(f"expected {len(self.schema_)} columns, got {X.shape[1]}")
        Z = np.zeros((len(X), self.n_output_features_))
        nc = self._num_cols
        if len(nc):
            z = (X[:, nc] - self.min_[nc]) / self._scale[nc]
            z = np.where(self.max_[nc] > self.min_[nc], z, 0.0)
            Z[:, self.offsets_[nc]] = np.clip(z, 0.0, 1.0)
        cc = self._cat_cols
        if len(cc):
            rows = np.repeat(np.arange(len(X)), len(cc))
            cols = (self.offsets_[cc][None, :] + X[:, cc].astype(int)).ravel()
            Z[rows, cols] = 1.0
        return Z

    def inverse_transform(self, Z):
        check_is_fitted(self, "offsets_")
        Z = np.asarray(Z, dtype=float)
        if Z.ndim == 1:
            Z = Z[None, :]
        X = np.empty((len(Z), len(self.schema_)))
        for f in self.schema_:
            o, w = self.offsets_[f.index], self.widths_[f.index]
            if f.is_categorical:
                X[:, f.index] = np.argmax(Z[:, o:o + w], axis=1)
            else:
                X[:, f.index] = self.min_[f.index] + Z[:, o] * (self.max_[f.index] - self.min_[f.index])
        return X


def encode_instance(values, train: Dataset) -> np.ndarray:
    """Encode one instance (tokens/floats) with ranges fitted on ``train``."""
    enc = TabularEncoder(train.schema).fit(train.X)
    return enc.transform(train.encode_values(values))[0]
