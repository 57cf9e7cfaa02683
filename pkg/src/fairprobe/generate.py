"""Biased-neuron-guided search for individual discriminatory instances (IDIs).

An IDI is an instance whose predicted label changes when only its sensitive
attributes change.  The global phase walks each seed uphill on a dynamic
loss defined over the biased neurons (plus a refreshed random subset) until
the seed turns discriminatory; the local phase then perturbs the global IDIs
attribute by attribute to harvest many nearby IDIs.

Seeds are processed as one numpy batch, but every random draw comes from a
per-seed generator so a seed's trajectory never depends on its batch mates.
"""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import nn
from .data import InstancePair, clip, first_variant, sensitive_combinations
from .errors import EmptySeedSet, NoBiasProfile

log = logging.getLogger(__name__)

LOG_EPS = 1e-12
INV_EPS = 1e-8

PHASE_GLOBAL = "global"
PHASE_LOCAL = "local"
PHASE_RANDOM = "random"
_PHASE_TAG = {PHASE_GLOBAL: 1, PHASE_LOCAL: 2, PHASE_RANDOM: 3}


@dataclass(frozen=True)
class GenerationConfig:
    n_clusters: int = 4
    num_g: int = 1000
    max_iter_g: int = 40
    max_iter_l: int = 1000
    step_size_g: float = 1.0
    step_size_l: float = 1.0
    mu_g: float = 0.1
    mu_l: float = 0.05
    r_step_g: int = 10
    r_step_l: int = 50
    p_r: float = 0.05
    rng_seed: int = 0
    time_budget: float | None = None

    def __post_init__(self):
        if self.step_size_g <= 0 or self.step_size_l <= 0:
            raise ValueError("step sizes must be > 0")
        if not 0 < self.p_r < 1:
            raise ValueError("p_r must lie in (0, 1)")
        for name in ("mu_g", "mu_l"):
            mu = getattr(self, name)
            if not 0 <= mu < 1:
                raise ValueError(f"{name} must lie in [0, 1)")
            if not 0.01 < mu < 0.20:
                log.warning("%s=%s is outside the recommended range (0.01, 0.20)", name, mu)
        for name in ("r_step_g", "r_step_l"):
            r = getattr(self, name)
            if int(r) < 1:
                raise ValueError(f"{name} must be >= 1")
            if not 5 < r < 100:
                log.warning("%s=%s is outside the recommended range (5, 100)", name, r)
        if self.max_iter_g < 0 or self.max_iter_l < 0 or self.num_g < 1 or self.n_clusters < 1:
            raise ValueError("iteration counts must be >= 0 and seed/cluster counts >= 1")
        if self.time_budget is not None and self.time_budget < 0:
            raise ValueError("time_budget must be >= 0")

    def to_dict(self):
        return asdict(self)


@dataclass
class MomentumState:
    g: np.ndarray
    g_prime: np.ndarray

    @classmethod
    def zeros(cls, shape):
        return cls(np.zeros(shape), np.zeros(shape))

    def update(self, mu, grad, grad_prime):
        self.g = mu * self.g + grad
        self.g_prime = mu * self.g_prime + grad_prime
        return self.g + self.g_prime


class VisitedSet:
    """Distinct instances seen during a search (the GSR denominator)."""

    def __init__(self):
        self._done = np.zeros((0, 0), dtype=np.int64)
        self._pending = []
        self._n_pending = 0

    def add(self, X):
        X = np.atleast_2d(np.asarray(X))
        if X.size == 0:
            return
        self._pending.append(np.rint(X).astype(np.int64))
        self._n_pending += X.shape[0]
        if self._n_pending > 200_000:
            self._consolidate()

    def _consolidate(self):
        if not self._pending:
            return
        parts = self._pending if self._done.size == 0 else [self._done] + self._pending
        self._done = np.unique(np.vstack(parts), axis=0)
        self._pending, self._n_pending = [], 0

    def update(self, other):
        other._consolidate()
        self.add(other._done)

    def __len__(self):
        self._consolidate()
        return int(self._done.shape[0])

    def rows(self):
        """The distinct visited instances, one per row."""
        self._consolidate()
        return self._done.astype(np.float64)


@dataclass
class IDISet:
    """Deduplicated IDI pairs; the dedup key is the full vector of ``a``."""

    pairs: list = field(default_factory=list)
    provenance: list = field(default_factory=list)
    visited: VisitedSet = field(default_factory=VisitedSet)
    _keys: dict = field(default_factory=dict, repr=False)

    def add(self, a, b, **prov):
        key = np.asarray(a, dtype=np.float64).tobytes()
        if key in self._keys:
            return False
        self._keys[key] = len(self.pairs)
        self.pairs.append(InstancePair(np.array(a, dtype=np.float64), np.array(b, dtype=np.float64)))
        self.provenance.append(prov)
        return True

    def extend(self, other):
        for pair, prov in zip(other.pairs, other.provenance):
            self.add(pair.a, pair.b, **prov)
        self.visited.update(other.visited)
        return self

    def __len__(self):
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)

    @property
    def A(self):
        if not self.pairs:
            return np.zeros((0, 0))
        return np.vstack([p.a for p in self.pairs])

    @property
    def B(self):
        if not self.pairs:
            return np.zeros((0, 0))
        return np.vstack([p.b for p in self.pairs])

    @property
    def n_generated(self):
        return len(self.visited)

    def count(self, phase):
        return sum(1 for p in self.provenance if p.get("phase") == phase)


def dedup(pairs):
    """Keep the first pair for every distinct ``a`` vector, in input order."""
    out = IDISet()
    for pair in pairs:
        a, b = (pair.a, pair.b) if isinstance(pair, InstancePair) else pair
        out.add(a, b)
    return out


def find_idis(net, X, schema):
    """Batch IDI test.

    Returns a boolean vector and, per row, the first flip variant (in
    enumeration order) whose predicted label differs; rows without a
    witness keep their own values.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    s_idx = schema.sensitive_idx
    base = net.predict(X)
    found = np.zeros(X.shape[0], dtype=bool)
    witness = X.copy()
    for combo in sensitive_combinations(schema):
        valid = ~np.all(X[:, s_idx] == combo, axis=1)
        V = X.copy()
        V[:, s_idx] = combo
        hit = valid & ~found & (net.predict(V) != base)
        witness[hit] = V[hit]
        found |= hit
    return found, witness


def is_idi(net, x, schema):
    """``(True, InstancePair)`` if some sensitive flip of ``x`` changes the label."""
    found, witness = find_idis(net, np.asarray(x, dtype=np.float64)[None, :], schema)
    if found[0]:
        return True, InstancePair(np.asarray(x, dtype=np.float64).copy(), witness[0])
    return False, None


def dynamic_loss_objective(layer, mask, target):
    """Objective ``-sum_k mask_k * target_k * log(max(f_k(x), eps))`` on ``layer``.

    ``target`` holds the counterpart's activations and is treated as constant.
    """
    mask = np.asarray(mask, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)

    def objective(post):
        f = post[layer]
        w = mask * target
        value = -np.sum(w * np.log(np.maximum(f, LOG_EPS)), axis=1)
        grad = np.where(f > LOG_EPS, -w / np.maximum(f, LOG_EPS), 0.0)
        return value, {layer: grad}

    return objective


def dynamic_loss(net, x, x_prime, p, r, layer):
    """Dynamic loss of ``x`` against its flipped counterpart ``x_prime``."""
    mask = np.asarray(p, dtype=bool) | np.asarray(r, dtype=bool)
    target = nn.forward(net, x_prime)[layer]
    post = list(nn.forward(net, np.atleast_2d(x)).per_layer)
    value, _ = dynamic_loss_objective(layer, mask, np.atleast_2d(target))(post)
    return float(value[0]) if np.ndim(x) == 1 else value


def _pair_gradients(net, X, Xp, mask, layer):
    """Gradients of the dynamic loss w.r.t. ``X`` and, symmetrically, ``Xp``."""
    trace_x, trace_p = nn.forward(net, X), nn.forward(net, Xp)
    gx = nn.input_gradient(net, X, dynamic_loss_objective(layer, mask, trace_p[layer]),
                           check_finite=False)
    gp = nn.input_gradient(net, Xp, dynamic_loss_objective(layer, mask, trace_x[layer]),
                           check_finite=False)
    return gx, gp


def dynamic_loss_gradient(net, x, x_prime, p, r, layer):
    mask = np.asarray(p, dtype=bool) | np.asarray(r, dtype=bool)
    target = nn.forward(net, x_prime)[layer]
    return nn.input_gradient(net, x, dynamic_loss_objective(layer, mask, target))


def refresh_mask(n_neurons, p_r, rng):
    """Random neuron subset with exactly ``int(n_neurons * p_r)`` entries set."""
    n_neurons = int(getattr(n_neurons, "size", n_neurons))
    k = int(np.floor(n_neurons * p_r))
    r = np.zeros(n_neurons, dtype=bool)
    if k:
        r[rng.choice(n_neurons, size=k, replace=False)] = True
    return r


def seed_rng(rng_seed, phase, seed_index):
    return np.random.default_rng([int(rng_seed), _PHASE_TAG[phase], int(seed_index)])


def _clock(cfg):
    start = time.perf_counter()
    budget = cfg.time_budget

    def expired():
        return budget is not None and time.perf_counter() - start >= budget

    return expired


def _check_profile(profile):
    if profile is None or not hasattr(profile, "positions"):
        raise NoBiasProfile("a bias profile of the network is required")


def global_generate(net, seeds, profile, schema, cfg=GenerationConfig(), seed_ids=None,
                    sign=True, expired=None):
    """Global phase: one momentum-accelerated ascent per seed, stopping at the first IDI.

    ``seeds`` is a 2-D array of instances; ``seed_ids`` labels them in the
    provenance (defaults to ``0..n-1``).  ``sign=False`` steps along the raw
    momentum instead of its sign.
    """
    _check_profile(profile)
    X = clip(np.atleast_2d(np.asarray(seeds, dtype=np.float64)), schema)
    n = X.shape[0]
    ids = np.arange(n) if seed_ids is None else np.asarray(seed_ids)
    out = IDISet()
    if n == 0:
        return out
    expired = expired or _clock(cfg)
    layer, p = profile.most_biased_layer, profile.positions
    s_idx = schema.sensitive_idx
    rngs = [seed_rng(cfg.rng_seed, PHASE_GLOBAL, i) for i in ids]
    r = np.zeros((n, p.size), dtype=bool)
    state = MomentumState.zeros(X.shape)
    active = np.ones(n, dtype=bool)
    for t in range(cfg.max_iter_g + 1):
        if expired() or not active.any():
            break
        act = np.flatnonzero(active)
        out.visited.add(X[act])
        found, witness = find_idis(net, X[act], schema)
        for j in np.flatnonzero(found):
            i = act[j]
            out.add(X[i], witness[j], phase=PHASE_GLOBAL, seed=int(ids[i]), iteration=t)
        active[act[found]] = False
        if t == cfg.max_iter_g:
            break
        act = np.flatnonzero(active)
        if act.size == 0:
            break
        if t % cfg.r_step_g == 0:
            for i in act:
                r[i] = refresh_mask(p.size, cfg.p_r, rngs[i])
        Xa = X[act]
        gx, gp = _pair_gradients(net, Xa, first_variant(Xa, schema), p | r[act], layer)
        bad = ~(np.all(np.isfinite(gx), axis=1) & np.all(np.isfinite(gp), axis=1))
        if bad.any():
            log.warning("non-finite gradient; skipping seeds %s", ids[act[bad]].tolist())
            active[act[bad]] = False
            gx[bad] = gp[bad] = 0.0
        g = cfg.mu_g * state.g[act] + gx
        g_prime = cfg.mu_g * state.g_prime[act] + gp
        state.g[act], state.g_prime[act] = g, g_prime
        dire = np.sign(g + g_prime) if sign else g + g_prime
        dire[:, s_idx] = 0.0
        X[act] = clip(Xa + dire * cfg.step_size_g, schema)
    return out


def selection_probabilities(v, eps=INV_EPS):
    """Row-wise softmax of ``1 / (|v| + eps)``: small gradients get high probability."""
    inv = 1.0 / (np.abs(np.atleast_2d(v)) + eps)
    inv = inv - inv.max(axis=1, keepdims=True)
    e = np.exp(inv)
    return e / e.sum(axis=1, keepdims=True)


def local_generate(net, global_idis, profile, schema, cfg=GenerationConfig(), expired=None,
                   uniform_choice=False, stream_offset=0):
    """Local phase: perturb each global IDI for ``max_iter_l`` iterations, keeping every IDI.

    ``uniform_choice=True`` replaces the gradient-derived attribute
    probabilities with ``1/N_ns`` (ablation baseline).  Seed ``i`` draws
    from random stream ``stream_offset + i``.
    """
    _check_profile(profile)
    if isinstance(global_idis, IDISet):
        A, B = global_idis.A, global_idis.B
        seed_ids = [pv.get("seed", i) for i, pv in enumerate(global_idis.provenance)]
    else:
        A = np.atleast_2d(np.asarray(global_idis, dtype=np.float64))
        B = first_variant(A, schema)
        seed_ids = list(range(A.shape[0]))
    if A.size == 0:
        raise EmptySeedSet("local generation needs at least one global IDI")
    expired = expired or _clock(cfg)
    n = A.shape[0]
    layer, p = profile.most_biased_layer, profile.positions
    s_idx, ns_idx = schema.sensitive_idx, schema.non_sensitive_idx
    n_ns = ns_idx.size
    X = A.copy()
    counterpart_sens = B[:, s_idx].copy()
    rngs = [seed_rng(cfg.rng_seed, PHASE_LOCAL, stream_offset + i) for i in range(n)]
    r = np.zeros((n, p.size), dtype=bool)
    draws = np.zeros((n, cfg.r_step_l, n_ns))
    state = MomentumState.zeros(X.shape)
    out = IDISet()
    for t in range(cfg.max_iter_l):
        if expired():
            break
        k = t % cfg.r_step_l
        if k == 0:
            for i in range(n):
                r[i] = refresh_mask(p.size, cfg.p_r, rngs[i])
                # uniforms in (0, 1]
                draws[i] = 1.0 - rngs[i].random((cfg.r_step_l, n_ns))
        Xp = X.copy()
        Xp[:, s_idx] = counterpart_sens
        gx, gp = _pair_gradients(net, X, Xp, p | r, layer)
        gx = np.nan_to_num(gx, nan=0.0, posinf=0.0, neginf=0.0)
        gp = np.nan_to_num(gp, nan=0.0, posinf=0.0, neginf=0.0)
        total = state.update(cfg.mu_l, gx, gp)
        dire = np.sign(total[:, ns_idx])
        if uniform_choice:
            probs = np.full((n, n_ns), 1.0 / n_ns)
        else:
            probs = selection_probabilities(total[:, ns_idx])
        move = draws[:, k, :] < probs
        step = np.zeros_like(X)
        step[:, ns_idx] = move * dire * cfg.step_size_l
        X = clip(X + step, schema)
        out.visited.add(X)
        found, witness = find_idis(net, X, schema)
        for i in np.flatnonzero(found):
            out.add(X[i], witness[i], phase=PHASE_LOCAL, seed=int(seed_ids[i]), iteration=t)
    return out


CHUNK = 256


def _chunked(n, chunk):
    return [(s, min(s + chunk, n)) for s in range(0, n, chunk)]


def generate(net, seeds, profile, schema, cfg=GenerationConfig(), local=True, workers=1,
             chunk=CHUNK):
    """Global phase on ``seeds`` then, optionally, the local phase on its IDIs.

    Seeds are split into fixed-size chunks that may run on ``workers``
    threads; chunk results merge in seed order, so the output does not
    depend on the worker count.  Returns ``(global_set, local_set)``.
    """
    from concurrent.futures import ThreadPoolExecutor

    seeds = np.atleast_2d(np.asarray(seeds, dtype=np.float64))
    expired = _clock(cfg)

    def run_global(bounds):
        s, e = bounds
        return global_generate(net, seeds[s:e], profile, schema, cfg,
                               seed_ids=np.arange(s, e), expired=expired)

    with ThreadPoolExecutor(max_workers=max(1, int(workers))) as pool:
        parts = list(pool.map(run_global, _chunked(seeds.shape[0], chunk)))
    found_g = IDISet()
    for part in parts:
        found_g.extend(part)
    found_l = IDISet()
    if local and len(found_g) and not expired():

        def run_local(bounds):
            s, e = bounds
            sub = IDISet()
            for pair, prov in zip(found_g.pairs[s:e], found_g.provenance[s:e]):
                sub.add(pair.a, pair.b, **prov)
            return local_generate(net, sub, profile, schema, cfg, expired=expired,
                                  stream_offset=s)

        with ThreadPoolExecutor(max_workers=max(1, int(workers))) as pool:
            parts = list(pool.map(run_local, _chunked(len(found_g), chunk)))
        for part in parts:
            found_l.extend(part)
    return found_g, found_l
