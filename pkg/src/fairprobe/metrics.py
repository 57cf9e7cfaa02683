"""Evaluation metrics, fairness repair by retraining, and the random-walk baseline."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata

from . import nn
from .data import clip, make_pairs
from .errors import EmptySeedSet, LengthMismatch, TooFewValues, UndefinedGD
from .generate import (PHASE_RANDOM, GenerationConfig, IDISet, _clock, find_idis, seed_rng)
from .interpret import bias_profile


def gsr(n_idis, n_generated):
    """Share of distinct generated instances that are IDIs."""
    if n_generated <= 0:
        raise ZeroDivisionError("no generated instances")
    if not 0 <= n_idis <= n_generated:
        raise ValueError(f"need 0 <= n_idis <= n_generated, got {n_idis}, {n_generated}")
    return n_idis / n_generated


def input_space(n_idis, gsr_value):
    return int(round(n_idis / gsr_value)) if gsr_value > 0 else 0


def _normalise(X, lower, upper):
    span = np.where(upper > lower, upper - lower, 1.0)
    return (np.atleast_2d(X) - lower) / span


def cosine_distances(A, B):
    """``1 - cos`` between rows; identical rows are exactly 0 apart."""
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    na = np.linalg.norm(A, axis=1)
    nb = np.linalg.norm(B, axis=1)
    safe_a = np.where(na > 0, na, 1.0)
    safe_b = np.where(nb > 0, nb, 1.0)
    cos = (A / safe_a[:, None]) @ (B / safe_b[:, None]).T
    d = np.clip(1.0 - cos, 0.0, 2.0)
    # a zero vector is only close to another zero vector
    zero_a, zero_b = na == 0, nb == 0
    d[zero_a[:, None] ^ zero_b[None, :]] = 1.0
    d[zero_a[:, None] & zero_b[None, :]] = 0.0
    same = np.all(A[:, None, :] == B[None, :, :], axis=2) if A.size * B.shape[0] < 5e7 else None
    if same is not None:
        d[same] = 0.0
    return d


def coverage_rate(centres, points, rho, chunk=2048):
    """Fraction of ``points`` within cosine distance ``rho`` of some centre."""
    covered = 0
    for s in range(0, points.shape[0], chunk):
        d = cosine_distances(points[s:s + chunk], centres)
        covered += int(np.sum(d.min(axis=1) <= rho))
    return covered / points.shape[0]


def gd(idis_nf, idis_baseline, rho_cons, schema=None):
    """Diversity ratio ``CR(NF covers baseline) / CR(baseline covers NF)``.

    Sets may be ``IDISet`` objects or 2-D arrays of ``x_d`` rows.  Rows are
    min-max normalised on the schema domain when a schema is given.
    Returns ``inf`` when the baseline covers none of the NF instances.
    """
    A = idis_nf.A if isinstance(idis_nf, IDISet) else np.atleast_2d(np.asarray(idis_nf, float))
    B = idis_baseline.A if isinstance(idis_baseline, IDISet) else np.atleast_2d(
        np.asarray(idis_baseline, float))
    if A.size == 0 or B.size == 0:
        raise ValueError("both IDI sets must be non-empty")
    if rho_cons <= 0:
        raise ValueError("rho_cons must be > 0")
    if schema is not None:
        A, B = _normalise(A, schema.lower, schema.upper), _normalise(B, schema.lower, schema.upper)
    cr_nf_bl = coverage_rate(A, B, rho_cons)
    cr_bl_nf = coverage_rate(B, A, rho_cons)
    if cr_bl_nf == 0:
        return math.inf
    return cr_nf_bl / cr_bl_nf


def gd_strict(idis_nf, idis_baseline, rho_cons, schema=None):
    value = gd(idis_nf, idis_baseline, rho_cons, schema)
    if math.isinf(value):
        raise UndefinedGD("baseline covers none of the NF instances")
    return value


def sample_domain(schema, n_samples, rng):
    return rng.integers(schema.lower.astype(np.int64), schema.upper.astype(np.int64) + 1,
                        size=(n_samples, schema.n_attributes)).astype(np.float64)


def dm_rs(net, schema, n_samples=10_000, rng_seed=0):
    """Fraction of uniformly sampled domain points that are IDIs."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    X = sample_domain(schema, int(n_samples), np.random.default_rng(rng_seed))
    found, _ = find_idis(net, X, schema)
    return float(found.mean())


def augment_with_idis(net, idis, fraction, rng):
    """Sample ``fraction`` of the IDI pairs; both members get ``net``'s label for ``x_d``."""
    A, B = idis.A, idis.B
    k = max(1, int(np.floor(fraction * A.shape[0])))
    pick = rng.choice(A.shape[0], size=min(k, A.shape[0]), replace=False)
    labels = net.predict(A[pick])
    return np.vstack([A[pick], B[pick]]), np.concatenate([labels, labels])


@dataclass
class RetrainResult:
    dm_rs_before: float
    dm_rs_after: float
    auc_before: float
    auc_after: float
    runs: list = field(default_factory=list)
    accuracy_before: float | None = None
    accuracy_after: float | None = None
    models: list = field(default_factory=list, repr=False)

    def to_dict(self):
        d = asdict(self)
        d.pop("models")
        return d


def _layer_auc(model, pairs, layer):
    return bias_profile(model, pairs).per_layer[layer][1].auc


def retrain_fairness(net, idis, X_train, y_train, schema, fraction=0.10, repeats=5,
                     train_cfg=None, X_eval=None, X_test=None, y_test=None,
                     n_samples=10_000, rng_seed=0, profile=None):
    """Retrain on data augmented with an IDI sample and measure fairness again.

    Each of ``repeats`` runs draws its own IDI sample and shuffling seed and
    fine-tunes from the current weights.  ``X_eval`` supplies the normal
    instances whose sensitive flips define the AUC pairs (defaults to the
    training data).  Reported "after" values are means over runs.
    """
    if len(idis) == 0:
        raise EmptySeedSet("retraining needs at least one IDI")
    train_cfg = train_cfg or nn.TrainConfig(epochs=10, batch_size=64)
    pairs = make_pairs(X_train if X_eval is None else X_eval, schema)
    if profile is None:
        profile = bias_profile(net, pairs)
    layer = profile.most_biased_layer
    before = dm_rs(net, schema, n_samples, rng_seed)
    auc_before = profile.per_layer[layer][1].auc
    runs, models = [], []
    for run in range(repeats):
        rng = np.random.default_rng([int(rng_seed), run])
        Xa, ya = augment_with_idis(net, idis, fraction, rng)
        X = np.vstack([X_train, Xa])
        y = np.concatenate([np.asarray(y_train), ya])
        cfg = nn.TrainConfig(train_cfg.learning_rate, train_cfg.optimizer, train_cfg.epochs,
                             train_cfg.batch_size, int(train_cfg.rng_seed) + run)
        model = nn.train(net, X, y, cfg)
        entry = {"run": run, "n_augmented": int(Xa.shape[0]),
                 "dm_rs": dm_rs(model, schema, n_samples, rng_seed),
                 "auc": _layer_auc(model, pairs, layer)}
        if X_test is not None:
            entry["accuracy"] = nn.accuracy(model, X_test, y_test)
        runs.append(entry)
        models.append(model)
    result = RetrainResult(before, float(np.mean([r["dm_rs"] for r in runs])), auc_before,
                           float(np.mean([r["auc"] for r in runs])), runs, models=models)
    if X_test is not None:
        result.accuracy_before = nn.accuracy(net, X_test, y_test)
        result.accuracy_after = float(np.mean([r["accuracy"] for r in runs]))
    return result


def ranks(values):
    """1-based ranks with average ranks for ties."""
    return rankdata(np.asarray(values, dtype=np.float64), method="average")


def spearman(ranks_a, ranks_b):
    """Spearman's rho from two rank vectors: ``1 - 6 sum d^2 / (n (n^2 - 1))``."""
    a = np.asarray(ranks_a, dtype=np.float64)
    b = np.asarray(ranks_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise LengthMismatch(f"rank vectors differ in shape: {a.shape} vs {b.shape}")
    n = a.size
    if n < 2:
        raise TooFewValues("spearman needs at least two items")
    d = a - b
    return float(1.0 - 6.0 * np.sum(d * d) / (n * (n * n - 1)))


def significance(values):
    """Sample standard deviation (n - 1 denominator)."""
    v = np.asarray(values, dtype=np.float64)
    if v.size < 2:
        raise TooFewValues("significance needs at least two values")
    v = v - v[0]  # shift keeps equal values exactly equal
    return float(np.sqrt(np.sum((v - v.mean()) ** 2) / (v.size - 1)))


def activated_neurons(activations, threshold=0.5):
    """Per-row min-max normalisation across the layer, then ``> threshold``.

    A row whose activations are all equal counts every neuron as activated
    when that common value is positive, none otherwise.
    """
    a = np.atleast_2d(np.asarray(activations, dtype=np.float64))
    lo = a.min(axis=1, keepdims=True)
    hi = a.max(axis=1, keepdims=True)
    span = hi - lo
    flat = span[:, 0] == 0
    norm = (a - lo) / np.where(span > 0, span, 1.0)
    out = norm > threshold
    out[flat] = (a[flat] > 0)
    return out


def biased_neuron_coverage(net, instances, profile):
    """Fraction of biased neurons activated by at least one instance."""
    p = np.asarray(profile.positions, dtype=bool)
    if p.sum() == 0:
        return 0.0
    X = np.atleast_2d(np.asarray(instances, dtype=np.float64))
    if X.size == 0:
        return 0.0
    acts = nn.forward(net, X)[profile.most_biased_layer]
    union = activated_neurons(acts).any(axis=0)
    return float(np.sum(union & p) / p.sum())


def random_baseline(net, seeds, schema, cfg=GenerationConfig(), seed_ids=None, expired=None):
    """Random walk: each step moves one random non-sensitive attribute by +-step_size_g.

    Same iteration budget, clipping, pairing, IDI test and per-seed early stop
    as the global phase.
    """
    X = clip(np.atleast_2d(np.asarray(seeds, dtype=np.float64)), schema)
    n = X.shape[0]
    ids = np.arange(n) if seed_ids is None else np.asarray(seed_ids)
    out = IDISet()
    if n == 0:
        return out
    expired = expired or _clock(cfg)
    ns = schema.non_sensitive_idx
    T = cfg.max_iter_g
    choice = np.zeros((n, T), dtype=np.int64)
    signs = np.zeros((n, T))
    for i in range(n):
        rng = seed_rng(cfg.rng_seed, PHASE_RANDOM, ids[i])
        choice[i] = rng.integers(0, ns.size, size=T)
        signs[i] = rng.choice([-1.0, 1.0], size=T)
    active = np.ones(n, dtype=bool)
    rows = np.arange(n)
    for t in range(T + 1):
        if expired() or not active.any():
            break
        act = rows[active]
        out.visited.add(X[act])
        found, witness = find_idis(net, X[act], schema)
        for j in np.flatnonzero(found):
            out.add(X[act[j]], witness[j], phase=PHASE_RANDOM, seed=int(ids[act[j]]), iteration=t)
        active[act[found]] = False
        if t == T:
            break
        act = rows[active]
        X[act, ns[choice[act, t]]] += signs[act, t] * cfg.step_size_g
        X[act] = clip(X[act], schema)
    return out


@dataclass
class MetricsReport:
    gsr: float
    input_space: int
    n_idis: int
    n_generated: int
    gd: dict = field(default_factory=dict)
    dm_rs_before: float | None = None
    dm_rs_after: float | None = None
    rho_s: float | None = None
    sigma: dict = field(default_factory=dict)
    coverage: float | None = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0 <= self.gsr <= 1:
            raise ValueError("gsr must lie in [0, 1]")
        if self.rho_s is not None and not -1 <= self.rho_s <= 1:
            raise ValueError("rho_s must lie in [-1, 1]")

    def to_dict(self):
        d = asdict(self)
        d["gd"] = {k: (None if math.isinf(v) else v) for k, v in self.gd.items()}
        d["gd_infinite"] = sorted(k for k, v in self.gd.items() if math.isinf(v))
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)
