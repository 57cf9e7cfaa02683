"""Synthetic datasets with a planted dependence on a sensitive attribute."""
from __future__ import annotations

import numpy as np

from .data import Attribute, AttributeSchema, TabularDataset

# Integer-coded census-style attributes (name, min, max).
ADULT_LIKE_ATTRIBUTES = (
    ("age", 1, 9),
    ("workclass", 0, 7),
    ("education", 0, 15),
    ("education_num", 1, 16),
    ("marital_status", 0, 6),
    ("occupation", 0, 13),
    ("relationship", 0, 5),
    ("race", 0, 4),
    ("sex", 0, 1),
    ("capital_gain", 0, 19),
    ("capital_loss", 0, 19),
    ("hours_per_week", 1, 99),
    ("native_country", 0, 40),
)


def adult_like_schema(sensitive=("sex",)):
    attrs = tuple(Attribute(n, lo, hi, n in sensitive) for n, lo, hi in ADULT_LIKE_ATTRIBUTES)
    return AttributeSchema(attrs, "income", (0, 1))


def _adult_score(u, names):
    col = {name: u[:, i] for i, name in enumerate(names)}
    return (2.2 * col["education_num"] + 1.6 * col["hours_per_week"] + 1.2 * col["age"]
            + 0.9 * col["capital_gain"] - 0.7 * col["capital_loss"] + 0.5 * col["occupation"]
            - 0.4 * col["relationship"] + 0.2 * col["workclass"] - 2.6)


def adult_like(n=10_000, seed=0, bias=0.3, noise=0.0, margin=0.5, sensitive=("sex",)):
    """Census-like table whose label depends on ``sex`` near the decision boundary.

    The clean score is linear in the normalised non-sensitive attributes and
    ``sex`` shifts it by ``+-bias``.  Rows whose clean score lies within
    ``margin`` of zero are rejected, so the training data never shows the
    band where flipping ``sex`` changes the label; a trained model has to
    place that band itself.
    """
    schema = adult_like_schema(sensitive)
    rng = np.random.default_rng(seed)
    lo, hi = schema.lower, schema.upper
    names = schema.names
    sex = names.index("sex") if "sex" in names else None
    chunks, total = [], 0
    while total < n:
        X = np.rint(lo + rng.uniform(0, 1, size=(2 * n, lo.size)) * (hi - lo))
        u = (X - lo) / (hi - lo)
        score = _adult_score(u, names)
        if sex is not None:
            score = score + bias * (2.0 * X[:, sex] - 1.0)
        keep = np.abs(score) > margin
        chunks.append((X[keep], score[keep]))
        total += int(keep.sum())
    X = np.vstack([c[0] for c in chunks])[:n]
    score = np.concatenate([c[1] for c in chunks])[:n]
    y = (score + noise * rng.normal(size=n) > 0).astype(np.int64)
    return TabularDataset(schema, X, y)


def toy_images(n=2000, seed=0, side=8, bias=0.6, noise=0.15):
    """Flattened ``side x side`` "face / non-face" images with an attribute channel.

    Returns ``(X, y_face, y_attr)``.  Faces carry a bright centre blob; the
    attribute is a brightness shift in the top-left quadrant.  Face labels
    are biased: attribute-1 faces need a stronger blob to be labelled faces.
    """
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:side, 0:side] / (side - 1)
    blob = np.exp(-((xx - 0.5) ** 2 + (yy - 0.55) ** 2) / 0.05).ravel()
    quad = ((xx < 0.5) & (yy < 0.5)).ravel().astype(np.float64)
    strength = rng.uniform(0.0, 1.0, size=n)
    attr = rng.integers(0, 2, size=n)
    X = 0.3 + noise * rng.normal(size=(n, side * side))
    X += strength[:, None] * 0.6 * blob[None, :]
    X += (attr[:, None] * 0.35 - 0.1) * quad[None, :]
    X = np.clip(X, 0.0, 1.0)
    y_face = (strength - bias * (attr - 0.5) > 0.5).astype(np.int64)
    return X, y_face, attr.astype(np.int64)
