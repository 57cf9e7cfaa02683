"""Activation-difference interpretation of individual discrimination.

For pairs of instances that differ only in sensitive attributes, each hidden
neuron's mean absolute activation difference is squashed with tanh.  The
per-layer AS curve counts the fraction of neurons above a sweep of
thresholds; its area ranks layers and its crossing with ``y = x`` sets the
threshold for picking biased neurons.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from . import nn
from .data import make_pairs
from .errors import EmptyPairs, NoDiscrimination

STEP_INTERVAL = 0.005


@dataclass(frozen=True)
class LayerActDiff:
    layer: int
    z: np.ndarray


@dataclass(frozen=True)
class ASCurve:
    thresholds: np.ndarray
    sen_neu_r: np.ndarray
    auc: float
    step_interval: float = STEP_INTERVAL


@dataclass(frozen=True)
class BiasProfile:
    per_layer: tuple  # of (LayerActDiff, ASCurve)
    most_biased_layer: int
    threshold: float
    positions: np.ndarray

    @property
    def aucs(self):
        return [c.auc for _, c in self.per_layer]

    @property
    def z(self):
        return self.per_layer[self.most_biased_layer][0].z

    @property
    def n_biased(self):
        return int(self.positions.sum())


def actdiff(net, pairs, layer):
    """Tanh of the mean absolute activation difference of ``layer`` over ``pairs``.

    ``pairs`` is an ``(A, B)`` tuple of equally shaped 2-D arrays.
    """
    A, B = (np.atleast_2d(np.asarray(p, dtype=np.float64)) for p in pairs)
    if A.shape[0] == 0:
        raise EmptyPairs("actdiff needs at least one pair")
    fa = nn.forward(net, A)[layer]
    fb = nn.forward(net, B)[layer]
    return LayerActDiff(layer, np.tanh(np.mean(np.abs(fa - fb), axis=0)))


def all_actdiffs(net, pairs):
    A, B = (np.atleast_2d(np.asarray(p, dtype=np.float64)) for p in pairs)
    if A.shape[0] == 0:
        raise EmptyPairs("actdiff needs at least one pair")
    ta, tb = nn.forward(net, A), nn.forward(net, B)
    return [LayerActDiff(l, np.tanh(np.mean(np.abs(ta[l] - tb[l]), axis=0)))
            for l in range(net.n_hidden)]


def threshold_grid(max_z, step_interval=STEP_INTERVAL):
    """``0, step, 2*step, ...`` up to and including ``max_z``."""
    n = int(np.floor(max_z / step_interval)) + 1
    while n > 1 and (n - 1) * step_interval > max_z:
        n -= 1
    while n * step_interval <= max_z:
        n += 1
    return np.arange(n) * step_interval


def as_curve(z, step_interval=STEP_INTERVAL):
    if step_interval <= 0:
        raise ValueError("step_interval must be > 0")
    z = np.asarray(getattr(z, "z", z), dtype=np.float64)
    thresholds = threshold_grid(float(z.max()), step_interval)
    sen = np.mean(z[None, :] > thresholds[:, None], axis=1)
    return ASCurve(thresholds, sen, float(np.sum(sen * step_interval)), step_interval)


def select_biased_layer(aucs):
    """Index of the largest AUC; the earliest layer wins ties."""
    aucs = [c.auc if isinstance(c, ASCurve) else c for c in aucs]
    return int(np.argmax(aucs))


def identify_biased_neurons(curve, z):
    """Threshold where the AS curve meets ``y = x`` and the neurons at or above it.

    The crossing is the first grid threshold ``t`` with ``SenNeuR(t) <= t``;
    if the curve stays above the diagonal across the whole grid the largest
    activation difference is used instead.
    """
    z = np.asarray(getattr(z, "z", z), dtype=np.float64)
    if curve.auc <= 0:
        raise NoDiscrimination("AS curve has zero area; no neuron reacts to the sensitive flip")
    below = np.flatnonzero(curve.sen_neu_r <= curve.thresholds)
    t_d = float(curve.thresholds[below[0]]) if below.size else float(z.max())
    return t_d, z >= t_d


def bias_profile(net, pairs, step_interval=STEP_INTERVAL):
    """Analyse every hidden layer and pick biased neurons in the most biased one."""
    diffs = all_actdiffs(net, pairs)
    curves = [as_curve(d, step_interval) for d in diffs]
    layer = select_biased_layer(curves)
    t_d, p = identify_biased_neurons(curves[layer], diffs[layer])
    return BiasProfile(tuple(zip(diffs, curves)), layer, t_d, p)


def profile_from_data(net, X, schema, step_interval=STEP_INTERVAL):
    return bias_profile(net, make_pairs(X, schema), step_interval)


def profile_report(profile):
    """JSON-ready summary of a bias profile."""
    layers = []
    for diff, curve in profile.per_layer:
        entry = {
            "layer": diff.layer,
            "width": int(diff.z.size),
            "auc": curve.auc,
            "curve": {"thresholds": curve.thresholds.tolist(), "sen_neu_r": curve.sen_neu_r.tolist()},
            "actdiff": diff.z.tolist(),
        }
        if diff.layer == profile.most_biased_layer:
            entry["threshold"] = profile.threshold
            entry["biased_positions"] = np.flatnonzero(profile.positions).tolist()
        layers.append(entry)
    return {"most_biased_layer": profile.most_biased_layer, "threshold": profile.threshold,
            "n_biased": profile.n_biased, "layers": layers}


def profile_from_report(doc):
    per_layer = []
    for entry in doc["layers"]:
        z = np.asarray(entry["actdiff"], dtype=np.float64)
        c = entry["curve"]
        thresholds = np.asarray(c["thresholds"], dtype=np.float64)
        step = float(thresholds[1] - thresholds[0]) if thresholds.size > 1 else STEP_INTERVAL
        per_layer.append((LayerActDiff(entry["layer"], z),
                          ASCurve(thresholds, np.asarray(c["sen_neu_r"], dtype=np.float64),
                                  entry["auc"], step)))
    layer = doc["most_biased_layer"]
    p = np.zeros(per_layer[layer][0].z.size, dtype=bool)
    p[doc["layers"][layer]["biased_positions"]] = True
    return BiasProfile(tuple(per_layer), layer, doc["threshold"], p)


def write_report(profile, path, curve_dir=None):
    with open(path, "w") as fh:
        json.dump(profile_report(profile), fh, indent=2)
    if curve_dir is not None:
        for diff, curve in profile.per_layer:
            with open(f"{curve_dir}/layer_{diff.layer}.csv", "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["threshold", "sen_neu_r"])
                for t, s in zip(curve.thresholds, curve.sen_neu_r):
                    w.writerow([repr(float(t)), repr(float(s))])
