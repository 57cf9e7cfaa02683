"""Dense feed-forward network with activation capture and input gradients.

Everything operates on float64 numpy arrays.  A single instance is a 1-D
vector of length ``input_dim``; batches are 2-D ``(n, input_dim)`` arrays and
every public function accepts either form.

Layer indices count from 0 over the *computed* layers: ``trace[0]`` is the
first hidden layer and ``trace[-1]`` the output layer.
"""
from __future__ import annotations

import copy
import hashlib
import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Sequence

import numpy as np

from .errors import BadLayer, DimensionMismatch, Divergence, NonFiniteGradient

log = logging.getLogger(__name__)

FORMAT_VERSION = 1


class Activation(str, Enum):
    RELU = "relu"
    SOFTMAX = "softmax"
    SIGMOID = "sigmoid"
    IDENTITY = "identity"


@dataclass(frozen=True)
class LayerSpec:
    width: int
    activation: Activation = Activation.RELU

    def __post_init__(self):
        if int(self.width) < 1:
            raise ValueError(f"layer width must be >= 1, got {self.width}")
        object.__setattr__(self, "activation", Activation(self.activation))


@dataclass(frozen=True)
class ActivationTrace:
    """Post-activation outputs of every computed layer for one forward pass."""

    per_layer: tuple

    def __getitem__(self, layer):
        return self.per_layer[layer]

    def __len__(self):
        return len(self.per_layer)

    @property
    def output(self):
        return self.per_layer[-1]


@dataclass
class Network:
    """Layered dense model ``f(x; weights)``.

    ``weights[l]`` has shape ``(fan_in, width_l)``.  ``masks`` maps a hidden
    layer index to a boolean vector of neurons whose activation is forced
    to zero.  Treat instances as immutable; helpers return new networks.
    """

    input_dim: int
    layers: tuple
    weights: tuple
    biases: tuple
    masks: dict = field(default_factory=dict)

    def __post_init__(self):
        self.layers = tuple(l if isinstance(l, LayerSpec) else LayerSpec(*l) for l in self.layers)
        self.weights = tuple(np.asarray(w, dtype=np.float64) for w in self.weights)
        self.biases = tuple(np.asarray(b, dtype=np.float64) for b in self.biases)
        if not (len(self.layers) == len(self.weights) == len(self.biases)) or not self.layers:
            raise DimensionMismatch("layers, weights and biases must have equal non-zero length")
        fan_in = self.input_dim
        for i, (spec, w, b) in enumerate(zip(self.layers, self.weights, self.biases)):
            if w.shape != (fan_in, spec.width) or b.shape != (spec.width,):
                raise DimensionMismatch(
                    f"layer {i}: expected W{(fan_in, spec.width)} b{(spec.width,)}, "
                    f"got W{w.shape} b{b.shape}"
                )
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {i} has non-finite weights")
            if spec.activation is Activation.SOFTMAX and i != len(self.layers) - 1:
                raise ValueError("softmax is only allowed on the output layer")
            fan_in = spec.width

    @property
    def depth(self):
        return len(self.layers)

    @property
    def n_hidden(self):
        return len(self.layers) - 1

    @property
    def widths(self):
        return [s.width for s in self.layers]

    def with_weights(self, weights, biases):
        return Network(self.input_dim, self.layers, tuple(weights), tuple(biases), dict(self.masks))

    def predict_proba(self, x):
        return forward(self, x).output

    def predict(self, x):
        """Predicted class index (argmax; threshold 0.5 for a width-1 head)."""
        out = self.predict_proba(x)
        if out.shape[-1] == 1:
            return (out[..., 0] > 0.5).astype(np.int64)
        return np.argmax(out, axis=-1)

    def digest(self):
        return hashlib.sha256(to_json(self).encode()).hexdigest()


def init_network(input_dim, hidden, n_classes=2, hidden_activation="relu",
                 output_activation="softmax", seed=0):
    """Glorot-uniform initialised network with zero biases."""
    rng = np.random.default_rng(seed)
    specs = [LayerSpec(int(w), Activation(hidden_activation)) for w in hidden]
    specs.append(LayerSpec(int(n_classes), Activation(output_activation)))
    weights, biases = [], []
    fan_in = int(input_dim)
    for spec in specs:
        limit = np.sqrt(6.0 / (fan_in + spec.width))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, spec.width)))
        biases.append(np.zeros(spec.width))
        fan_in = spec.width
    return Network(int(input_dim), tuple(specs), tuple(weights), tuple(biases))


def _activate(kind, z):
    if kind is Activation.RELU:
        return np.maximum(z, 0.0)
    if kind is Activation.IDENTITY:
        return z
    if kind is Activation.SIGMOID:
        return 0.5 * (1.0 + np.tanh(0.5 * z))
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _activation_backward(kind, z, a, grad_a):
    if kind is Activation.RELU:
        # subgradient at exactly 0 is 0
        return grad_a * (z > 0)
    if kind is Activation.IDENTITY:
        return grad_a
    if kind is Activation.SIGMOID:
        return grad_a * a * (1.0 - a)
    return a * (grad_a - np.sum(grad_a * a, axis=1, keepdims=True))


def _as_batch(net, x):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    if xb.ndim != 2 or xb.shape[1] != net.input_dim:
        raise DimensionMismatch(f"expected input of length {net.input_dim}, got shape {x.shape}")
    return xb, single


def _forward_cache(net, xb):
    pre, post = [], []
    a = xb
    for i, (spec, w, b) in enumerate(zip(net.layers, net.weights, net.biases)):
        z = a @ w + b
        a = _activate(spec.activation, z)
        m = net.masks.get(i)
        if m is not None:
            a = a * m
        pre.append(z)
        post.append(a)
    return pre, post


def forward(net, x):
    """Run ``x`` (vector or batch) through ``net`` and capture every layer."""
    xb, single = _as_batch(net, x)
    _, post = _forward_cache(net, xb)
    if single:
        post = [a[0] for a in post]
    return ActivationTrace(tuple(post))


def _backward(net, xb, pre, post, upstream, want_weights=False, output_grad_z=None):
    """Reverse pass. ``upstream`` maps layer index -> dJ/d(post-activation).

    ``output_grad_z`` short-circuits the output activation with a ready-made
    gradient w.r.t. the output pre-activation (fused softmax + cross-entropy).
    """
    n = xb.shape[0]
    last = net.depth - 1
    grad_a = np.zeros((n, net.layers[-1].width))
    gw, gb = [None] * net.depth, [None] * net.depth
    for i in range(last, -1, -1):
        if i in upstream:
            grad_a = grad_a + upstream[i]
        m = net.masks.get(i)
        if i == last and output_grad_z is not None:
            grad_z = output_grad_z if m is None else output_grad_z * m
        else:
            if m is not None:
                grad_a = grad_a * m
            grad_z = _activation_backward(net.layers[i].activation, pre[i], post[i], grad_a)
        if want_weights:
            prev = post[i - 1] if i > 0 else xb
            gw[i] = prev.T @ grad_z
            gb[i] = grad_z.sum(axis=0)
        grad_a = grad_z @ net.weights[i].T
    return grad_a, gw, gb


# An objective receives the list of post-activations of a batch and returns
# (per-row values, {layer: dJ/d activation}).  Rows are independent.
Objective = Callable[[Sequence[np.ndarray]], tuple]


def input_gradient(net, x, objective, return_value=False, check_finite=True):
    """Exact gradient of ``objective`` w.r.t. the input via reverse mode."""
    xb, single = _as_batch(net, x)
    pre, post = _forward_cache(net, xb)
    value, upstream = objective(post)
    grad, _, _ = _backward(net, xb, pre, post, upstream)
    if check_finite and not np.all(np.isfinite(grad)):
        raise NonFiniteGradient("input gradient contains NaN or Inf")
    value = np.asarray(value, dtype=np.float64)
    if single:
        grad, value = grad[0], value.reshape(-1)[0]
    return (grad, value) if return_value else grad


def output_sum_objective(post):
    out = post[-1]
    return out.sum(axis=1), {len(post) - 1: np.ones_like(out)}


def cross_entropy_objective(labels, eps=1e-12):
    """Per-row cross-entropy ``-log p[label]`` on a softmax (or width-1 sigmoid) head."""
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))

    def objective(post):
        out = post[-1]
        n = out.shape[0]
        lab = np.broadcast_to(labels, (n,))
        grad = np.zeros_like(out)
        if out.shape[1] == 1:
            p = np.where(lab == 1, out[:, 0], 1.0 - out[:, 0])
            pc = np.maximum(p, eps)
            grad[:, 0] = np.where(lab == 1, -1.0, 1.0) / pc * (p > eps)
        else:
            p = out[np.arange(n), lab]
            pc = np.maximum(p, eps)
            grad[np.arange(n), lab] = -1.0 / pc * (p > eps)
        return -np.log(pc), {len(post) - 1: grad}

    return objective


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    optimizer: str = "adam"
    epochs: int = 20
    batch_size: int = 128
    rng_seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if int(self.epochs) < 1 or int(self.batch_size) < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.optimizer.lower() not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


def _one_hot(y, k):
    y = np.asarray(y)
    if y.ndim == 2:
        return y.astype(np.float64)
    out = np.zeros((y.shape[0], k))
    out[np.arange(y.shape[0]), y.astype(np.int64)] = 1.0
    return out


def cross_entropy(net, X, y, eps=1e-12):
    """Mean categorical cross-entropy of ``net`` on labelled data."""
    out = forward(net, np.atleast_2d(X)).output
    if out.shape[1] == 1:
        out = np.hstack([1.0 - out, out])
    t = _one_hot(y, out.shape[1])
    return float(-np.mean(np.sum(t * np.log(np.maximum(out, eps)), axis=1)))


def accuracy(net, X, y):
    y = np.asarray(y)
    if y.ndim == 2:
        y = y.argmax(axis=1)
    return float(np.mean(net.predict(np.atleast_2d(X)) == y))


def train(net, X, y, cfg=TrainConfig(), history=None):
    """Minimise cross-entropy with Adam or plain SGD; returns a new network.

    ``y`` holds class indices or one-hot rows.  Shuffling is driven only by
    ``cfg.rng_seed`` so identical inputs give bit-identical weights.  If a
    list is passed as ``history`` the per-epoch mean loss is appended to it.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("training data must be a non-empty 2-D array")
    if X.shape[1] != net.input_dim:
        raise DimensionMismatch(f"expected {net.input_dim} features, got {X.shape[1]}")
    out_spec = net.layers[-1]
    k = out_spec.width
    targets = _one_hot(y, max(k, 2))
    if k == 1:
        targets = targets[:, 1:2]
    if targets.shape[0] != X.shape[0]:
        raise DimensionMismatch("X and y disagree on the number of rows")
    fused = out_spec.activation is Activation.SOFTMAX or (
        out_spec.activation is Activation.SIGMOID and k == 1)

    weights = [w.copy() for w in net.weights]
    biases = [b.copy() for b in net.biases]
    work = net.with_weights(weights, biases)
    params = weights + biases
    adam = cfg.optimizer.lower() == "adam"
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    step = 0
    rng = np.random.default_rng(cfg.rng_seed)
    n = X.shape[0]
    for epoch in range(int(cfg.epochs)):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, int(cfg.batch_size)):
            idx = order[start:start + int(cfg.batch_size)]
            xb, tb = X[idx], targets[idx]
            pre, post = _forward_cache(work, xb)
            out = post[-1]
            nb = xb.shape[0]
            if k == 1:
                loss = -np.sum(tb * np.log(np.maximum(out, 1e-12))
                               + (1 - tb) * np.log(np.maximum(1 - out, 1e-12)))
            else:
                loss = -np.sum(tb * np.log(np.maximum(out, 1e-12)))
            if not np.isfinite(loss):
                raise Divergence(f"loss became non-finite at epoch {epoch}")
            total += float(loss)
            if fused:
                # softmax/sigmoid + cross-entropy: dJ/dz = (p - t) / n
                _, gw, gb = _backward(work, xb, pre, post, {}, want_weights=True,
                                      output_grad_z=(out - tb) / nb)
            else:
                grad_out = -(tb / np.maximum(out, 1e-12)) / nb
                _, gw, gb = _backward(work, xb, pre, post, {work.depth - 1: grad_out}, want_weights=True)
            grads = gw + gb
            step += 1
            for j, (p, g) in enumerate(zip(params, grads)):
                if adam:
                    m[j] = beta1 * m[j] + (1 - beta1) * g
                    v[j] = beta2 * v[j] + (1 - beta2) * g * g
                    mh = m[j] / (1 - beta1 ** step)
                    vh = v[j] / (1 - beta2 ** step)
                    p -= cfg.learning_rate * mh / (np.sqrt(vh) + eps)
                else:
                    p -= cfg.learning_rate * g
        if not all(np.all(np.isfinite(p)) for p in params):
            raise Divergence(f"weights became non-finite at epoch {epoch}")
        if history is not None:
            history.append(total / n)
    trained = net.with_weights([w.copy() for w in weights], [b.copy() for b in biases])
    log.info("trained %d epochs, train accuracy %.4f", cfg.epochs,
             accuracy(trained, X, targets if k > 1 else targets[:, 0]))
    return trained


def mask_neurons(net, layer, positions):
    """Return a copy of ``net`` whose neurons at ``positions`` in ``layer`` output 0."""
    if not 0 <= layer < net.depth - 1:
        raise BadLayer(f"layer {layer} is not a hidden layer (0..{net.depth - 2})")
    positions = np.asarray(positions, dtype=bool)
    if positions.shape != (net.layers[layer].width,):
        raise DimensionMismatch(
            f"mask length {positions.shape} != layer width {net.layers[layer].width}")
    masks = dict(net.masks)
    keep = (~positions).astype(np.float64)
    if layer in masks:
        keep = keep * masks[layer]
    masks[layer] = keep
    return Network(net.input_dim, net.layers, net.weights, net.biases, masks)


def sub_network(net, start, stop):
    """Layers ``start:stop`` of ``net`` as a standalone network."""
    specs = net.layers[start:stop]
    input_dim = net.input_dim if start == 0 else net.layers[start - 1].width
    masks = {i - start: m for i, m in net.masks.items() if start <= i < stop}
    return Network(input_dim, specs, net.weights[start:stop], net.biases[start:stop], masks)


def stack(first, second):
    """Compose two networks: ``second(first(x))``."""
    if first.layers[-1].activation is Activation.SOFTMAX:
        raise ValueError("cannot stack after a softmax layer")
    if second.input_dim != first.layers[-1].width:
        raise DimensionMismatch("network widths do not chain")
    masks = dict(first.masks)
    masks.update({i + first.depth: m for i, m in second.masks.items()})
    return Network(first.input_dim, first.layers + second.layers,
                   first.weights + second.weights, first.biases + second.biases, masks)


def to_dict(net):
    return {
        "format_version": FORMAT_VERSION,
        "input_dim": net.input_dim,
        "layers": [{"width": s.width, "activation": s.activation.value} for s in net.layers],
        "weights": [w.tolist() for w in net.weights],
        "biases": [b.tolist() for b in net.biases],
        "masks": {str(i): m.tolist() for i, m in sorted(net.masks.items())},
    }


def from_dict(doc):
    if doc.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {doc.get('format_version')!r}")
    layers = tuple(LayerSpec(l["width"], Activation(l["activation"])) for l in doc["layers"])
    masks = {int(i): np.asarray(m, dtype=np.float64) for i, m in doc.get("masks", {}).items()}
    return Network(int(doc["input_dim"]), layers,
                   tuple(np.asarray(w, dtype=np.float64).reshape(-1, s.width)
                         for w, s in zip(doc["weights"], layers)),
                   tuple(np.asarray(b, dtype=np.float64) for b in doc["biases"]), masks)


def to_json(net):
    # Python float repr is the shortest string that round-trips exactly.
    return json.dumps(to_dict(net), separators=(",", ":"))


def from_json(text):
    return from_dict(json.loads(text))


def save(net, path):
    with open(path, "w") as fh:
        fh.write(to_json(net))


def load(path):
    with open(path) as fh:
        return from_json(fh.read())


def clone(net):
    return copy.deepcopy(net)
