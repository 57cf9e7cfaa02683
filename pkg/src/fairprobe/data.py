"""Tabular data: attribute schema, CSV ingestion, clipping, sensitive flips, seeds."""
from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import dataclass

import numpy as np
from sklearn.cluster import KMeans

from .errors import EmptyDataset, ParseError, SchemaMismatch


@dataclass(frozen=True)
class Attribute:
    name: str
    min: float
    max: float
    sensitive: bool = False
    kind: str = "integer"  # "integer" (ranged) or "categorical" (coded)

    def __post_init__(self):
        if not self.min <= self.max:
            raise SchemaMismatch(f"attribute {self.name!r}: min {self.min} > max {self.max}")
        if self.kind not in ("integer", "categorical"):
            raise SchemaMismatch(f"attribute {self.name!r}: unknown kind {self.kind!r}")

    @property
    def values(self):
        return np.arange(math.ceil(self.min), math.floor(self.max) + 1, dtype=np.float64)


@dataclass(frozen=True)
class AttributeSchema:
    """Ordered attributes with the sensitive/non-sensitive partition.

    All attributes are integer coded on inclusive ``[min, max]`` ranges.
    """

    attributes: tuple
    label_name: str = "label"
    classes: tuple = (0, 1)

    def __post_init__(self):
        object.__setattr__(self, "attributes", tuple(self.attributes))
        names = [a.name for a in self.attributes]
        if len(set(names)) != len(names):
            raise SchemaMismatch("duplicate attribute names")
        if not any(a.sensitive for a in self.attributes):
            raise SchemaMismatch("schema needs at least one sensitive attribute")
        for a in self.attributes:
            if a.sensitive and len(a.values) < 2:
                raise SchemaMismatch(f"sensitive attribute {a.name!r} needs >= 2 values")

    @property
    def names(self):
        return [a.name for a in self.attributes]

    @property
    def n_attributes(self):
        return len(self.attributes)

    @property
    def sensitive_idx(self):
        return np.array([i for i, a in enumerate(self.attributes) if a.sensitive], dtype=np.int64)

    @property
    def non_sensitive_idx(self):
        return np.array([i for i, a in enumerate(self.attributes) if not a.sensitive], dtype=np.int64)

    @property
    def sensitive(self):
        return {a.name for a in self.attributes if a.sensitive}

    @property
    def non_sensitive(self):
        return {a.name for a in self.attributes if not a.sensitive}

    @property
    def lower(self):
        return np.array([a.min for a in self.attributes], dtype=np.float64)

    @property
    def upper(self):
        return np.array([a.max for a in self.attributes], dtype=np.float64)

    def with_sensitive(self, names):
        names = set(names)
        unknown = names - set(self.names)
        if unknown:
            raise SchemaMismatch(f"unknown attributes {sorted(unknown)}")
        attrs = [Attribute(a.name, a.min, a.max, a.name in names, a.kind) for a in self.attributes]
        return AttributeSchema(tuple(attrs), self.label_name, self.classes)

    def to_dict(self):
        return {
            "attributes": [
                {"name": a.name, "min": a.min, "max": a.max, "sensitive": a.sensitive, "kind": a.kind}
                for a in self.attributes
            ],
            "label": {"name": self.label_name, "classes": list(self.classes)},
        }

    @classmethod
    def from_dict(cls, doc):
        try:
            attrs = tuple(
                Attribute(str(a["name"]), a["min"], a["max"], bool(a.get("sensitive", False)),
                          a.get("kind", "integer"))
                for a in doc["attributes"]
            )
            label = doc.get("label", {})
        except (KeyError, TypeError) as exc:
            raise SchemaMismatch(f"malformed schema document: {exc}") from exc
        return cls(attrs, label.get("name", "label"), tuple(label.get("classes", (0, 1))))


def load_schema(path):
    with open(path) as fh:
        return AttributeSchema.from_dict(json.load(fh))


def save_schema(schema, path):
    with open(path, "w") as fh:
        json.dump(schema.to_dict(), fh, indent=2)


@dataclass(frozen=True)
class TabularDataset:
    schema: AttributeSchema
    X: np.ndarray
    y: np.ndarray | None = None

    def __len__(self):
        return self.X.shape[0]

    def subset(self, idx):
        return TabularDataset(self.schema, self.X[idx], None if self.y is None else self.y[idx])

    def split(self, seed=0, fractions=(0.7, 0.1, 0.2)):
        """Seeded train/validation/test split (70/10/20 by default)."""
        n = len(self)
        order = np.random.default_rng(seed).permutation(n)
        n_train = int(round(fractions[0] * n))
        n_val = int(round(fractions[1] * n))
        return (self.subset(order[:n_train]), self.subset(order[n_train:n_train + n_val]),
                self.subset(order[n_train + n_val:]))


def clip(x, schema):
    """Clamp into the input domain; values are rounded to integer codes (ties to even)."""
    x = np.asarray(x, dtype=np.float64)
    return np.clip(np.rint(x), schema.lower, schema.upper)


def load_csv(path, schema):
    """Read a headered CSV whose columns are the schema attributes (+ optional label)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaMismatch(f"{path}: empty file") from None
        missing = [n for n in schema.names if n not in header]
        if missing:
            raise SchemaMismatch(f"{path}: header lacks attributes {missing}")
        cols = [header.index(n) for n in schema.names]
        label_col = header.index(schema.label_name) if schema.label_name in header else None
        rows, labels = [], []
        for r, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(f"{path}: expected {len(header)} cells, got {len(row)}", row=r)
            vals = []
            for c in cols:
                try:
                    vals.append(float(row[c]))
                except ValueError:
                    raise ParseError(f"{path}: non-numeric cell {row[c]!r}", row=r,
                                     column=header[c]) from None
            rows.append(vals)
            if label_col is not None:
                try:
                    labels.append(int(float(row[label_col])))
                except ValueError:
                    raise ParseError(f"{path}: bad label {row[label_col]!r}", row=r,
                                     column=header[label_col]) from None
    X = clip(np.array(rows, dtype=np.float64).reshape(-1, schema.n_attributes), schema)
    y = np.array(labels, dtype=np.int64) if label_col is not None else None
    return TabularDataset(schema, X, y)


def save_csv(dataset, path):
    names = dataset.schema.names
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names + ([dataset.schema.label_name] if dataset.y is not None else []))
        for i, row in enumerate(dataset.X):
            cells = [format(v, "g") for v in row]
            if dataset.y is not None:
                cells.append(str(int(dataset.y[i])))
            w.writerow(cells)


def sensitive_combinations(schema):
    """All assignments of the sensitive attributes, in enumeration order."""
    domains = [schema.attributes[i].values for i in schema.sensitive_idx]
    return np.array(list(itertools.product(*domains)), dtype=np.float64)


def flip_variants(x, schema):
    """Every copy of ``x`` with a different sensitive assignment (original excluded)."""
    x = np.asarray(x, dtype=np.float64)
    s_idx = schema.sensitive_idx
    combos = sensitive_combinations(schema)
    keep = ~np.all(combos == x[s_idx], axis=1)
    out = np.repeat(x[None, :], int(keep.sum()), axis=0)
    out[:, s_idx] = combos[keep]
    return out


def first_variant(X, schema):
    """First flip variant of each row (batch form of ``flip_variants(x)[0]``)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    s_idx = schema.sensitive_idx
    combos = sensitive_combinations(schema)
    own = X[:, s_idx]
    # index of the first combination that differs from the row's own assignment
    differs = ~np.all(combos[None, :, :] == own[:, None, :], axis=2)
    first = np.argmax(differs, axis=1)
    out = X.copy()
    out[:, s_idx] = combos[first]
    return out


@dataclass(frozen=True)
class InstancePair:
    a: np.ndarray
    b: np.ndarray

    def key(self):
        return tuple(self.a.tolist())


def is_valid_pair(a, b, schema):
    """Pair constraint: equal on non-sensitive attributes, different on sensitive ones."""
    a, b = np.asarray(a), np.asarray(b)
    ns, s = schema.non_sensitive_idx, schema.sensitive_idx
    return bool(np.array_equal(a[ns], b[ns]) and not np.array_equal(a[s], b[s]))


def in_domain(x, schema):
    x = np.atleast_2d(x)
    return bool(np.all(x >= schema.lower) and np.all(x <= schema.upper) and np.all(x == np.rint(x)))


def make_pairs(X, schema):
    """All (instance, flip variant) pairs for interpretation: arrays ``(A, B)``."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    A, B = [], []
    for x in X:
        v = flip_variants(x, schema)
        A.append(np.repeat(x[None, :], len(v), axis=0))
        B.append(v)
    return np.vstack(A), np.vstack(B)


def kmeans_seeds(X, n_clusters, num_g, rng_seed=0):
    """Cluster ``X`` and draw ``num_g`` seeds round-robin across the clusters.

    Members of each cluster are visited in a seeded random order; exhausted
    clusters drop out of the rotation.  Returns row indices into ``X``.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise EmptyDataset("cannot select seeds from an empty dataset")
    if n_clusters < 1 or X.shape[0] < n_clusters:
        raise ValueError(f"need 1 <= n_clusters <= {X.shape[0]}, got {n_clusters}")
    rng = np.random.default_rng(rng_seed)
    if n_clusters == 1:
        labels = np.zeros(X.shape[0], dtype=np.int64)
    else:
        km = KMeans(n_clusters=n_clusters, n_init=10, random_state=int(rng_seed))
        labels = km.fit_predict(X)
    queues = [list(rng.permutation(np.flatnonzero(labels == c))) for c in range(n_clusters)]
    seeds = []
    depth = 0
    while len(seeds) < num_g and any(depth < len(q) for q in queues):
        for q in queues:
            if depth < len(q) and len(seeds) < num_g:
                seeds.append(int(q[depth]))
        depth += 1
    return np.array(seeds, dtype=np.int64)
