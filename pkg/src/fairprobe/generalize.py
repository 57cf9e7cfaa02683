"""Sensitive-attribute flipping for unstructured inputs in ``[0, 1]^d``.

There are no named attributes to flip in an image, so a classifier for the
sensitive attribute is grown on the detector's frozen feature layers and an
iterated FGSM perturbation flips its prediction.  That perturbation plays
the role of the attribute flip when pairing inputs for the global search.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import nn
from .generate import (PHASE_GLOBAL, GenerationConfig, IDISet, MomentumState, _check_profile,
                       _clock, _pair_gradients, refresh_mask, seed_rng)

log = logging.getLogger(__name__)

IMAGE_STEP_SIZE = 0.15
FLIP_EPSILON = 0.05
FLIP_MAX_STEPS = 10


@dataclass(frozen=True)
class AttrClassifier:
    prefix: nn.Network
    head: nn.Network
    prefix_digest: str
    accuracy: float

    @property
    def network(self):
        return nn.stack(self.prefix, self.head)

    def predict(self, x):
        return self.network.predict(x)


@dataclass(frozen=True)
class FlipResult:
    delta_senatt: np.ndarray
    steps: int
    flipped: bool

    @property
    def l2(self):
        return float(np.linalg.norm(self.delta_senatt))


def build_attr_head(base, prefix_len, X, attr_labels, hidden=(16,), cfg=None, seed=0):
    """Train a new head on the first ``prefix_len`` layers of ``base`` (kept frozen)."""
    if not 1 <= prefix_len < base.depth:
        raise ValueError(f"prefix_len must be in [1, {base.depth - 1}]")
    cfg = cfg or nn.TrainConfig(epochs=30, batch_size=64, rng_seed=seed)
    prefix = nn.sub_network(base, 0, prefix_len)
    digest = prefix.digest()
    features = nn.forward(prefix, X).output
    head = nn.init_network(features.shape[1], hidden, 2, seed=seed)
    head = nn.train(head, features, attr_labels, cfg)
    if nn.sub_network(base, 0, prefix_len).digest() != digest or prefix.digest() != digest:
        raise RuntimeError("frozen feature layers changed during head training")
    acc = nn.accuracy(head, features, attr_labels)
    log.info("attribute head accuracy %.4f", acc)
    return AttrClassifier(prefix, head, digest, acc)


def fgsm_flip_batch(clf, X, epsilon=FLIP_EPSILON, max_steps=FLIP_MAX_STEPS, y_sa=None):
    """Iterated sign-gradient steps until each row's predicted attribute flips.

    Returns ``(delta, flipped, steps)``; rows stop moving once flipped and
    every perturbed value is clipped to ``[0, 1]`` after each step.
    """
    net = clf.network if isinstance(clf, AttrClassifier) else clf
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    start = net.predict(X)
    target = start if y_sa is None else np.broadcast_to(np.asarray(y_sa), start.shape)
    adv = X.copy()
    flipped = np.zeros(X.shape[0], dtype=bool)
    steps = np.zeros(X.shape[0], dtype=np.int64)
    if epsilon > 0:
        for _ in range(int(max_steps)):
            act = np.flatnonzero(~flipped)
            if act.size == 0:
                break
            grad = nn.input_gradient(net, adv[act], nn.cross_entropy_objective(target[act]))
            adv[act] = np.clip(adv[act] + epsilon * np.sign(grad), 0.0, 1.0)
            steps[act] += 1
            flipped[act] = net.predict(adv[act]) != start[act]
    return adv - X, flipped, steps


def fgsm_flip(clf, x, epsilon=FLIP_EPSILON, max_steps=FLIP_MAX_STEPS, y_sa=None):
    delta, flipped, steps = fgsm_flip_batch(clf, np.asarray(x)[None, :], epsilon, max_steps,
                                            None if y_sa is None else [y_sa])
    return FlipResult(delta[0], int(steps[0]), bool(flipped[0]))


def flip_pairs(clf, X, epsilon=FLIP_EPSILON, max_steps=FLIP_MAX_STEPS):
    """``(A, B)`` interpretation pairs from inputs whose attribute flip succeeded."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    delta, flipped, _ = fgsm_flip_batch(clf, X, epsilon, max_steps)
    return X[flipped], X[flipped] + delta[flipped]


def image_global_generate(detector, clf, images, profile, cfg=GenerationConfig(),
                          step_size=IMAGE_STEP_SIZE, epsilon=FLIP_EPSILON,
                          max_flip_steps=FLIP_MAX_STEPS):
    """Global search on images: every input is a seed and steps use raw momentum.

    At each iteration the attribute flip is recomputed for the current input
    ``x + delta_bias``; the pair ``(x + delta_bias, x + delta_bias + delta_senatt)``
    is an IDI when the detector labels its members differently.
    """
    _check_profile(profile)
    X0 = np.atleast_2d(np.asarray(images, dtype=np.float64))
    n = X0.shape[0]
    out = IDISet()
    if n == 0:
        return out
    expired = _clock(cfg)
    layer, p = profile.most_biased_layer, profile.positions
    rngs = [seed_rng(cfg.rng_seed, PHASE_GLOBAL, i) for i in range(n)]
    r = np.zeros((n, p.size), dtype=bool)
    X = X0.copy()
    state = MomentumState.zeros(X.shape)
    active = np.ones(n, dtype=bool)
    for t in range(cfg.max_iter_g + 1):
        if expired() or not active.any():
            break
        act = np.flatnonzero(active)
        Xa = X[act]
        delta, flipped, _ = fgsm_flip_batch(clf, Xa, epsilon, max_flip_steps)
        Xp = Xa + delta
        out.visited.add(np.round(Xa * 255))
        hit = flipped & (detector.predict(Xa) != detector.predict(Xp))
        for j in np.flatnonzero(hit):
            i = act[j]
            out.add(Xa[j], Xp[j], phase=PHASE_GLOBAL, seed=int(i), iteration=t,
                    l2_bias=float(np.linalg.norm(Xa[j] - X0[i])),
                    l2_senatt=float(np.linalg.norm(delta[j])),
                    delta_senatt=delta[j].tolist())
        active[act[hit]] = False
        if t == cfg.max_iter_g:
            break
        act = np.flatnonzero(active)
        keep = ~hit
        Xa, Xp = Xa[keep], Xp[keep]
        if t % cfg.r_step_g == 0:
            for i in act:
                r[i] = refresh_mask(p.size, cfg.p_r, rngs[i])
        gx, gp = _pair_gradients(detector, Xa, Xp, p | r[act], layer)
        gx = np.nan_to_num(gx, nan=0.0, posinf=0.0, neginf=0.0)
        gp = np.nan_to_num(gp, nan=0.0, posinf=0.0, neginf=0.0)
        g = cfg.mu_g * state.g[act] + gx
        g_prime = cfg.mu_g * state.g_prime[act] + gp
        state.g[act], state.g_prime[act] = g, g_prime
        X[act] = np.clip(Xa + (g + g_prime) * step_size, 0.0, 1.0)
    return out


def image_random_baseline(detector, clf, images, cfg=GenerationConfig(), step_size=IMAGE_STEP_SIZE,
                          epsilon=FLIP_EPSILON, max_flip_steps=FLIP_MAX_STEPS):
    """Random counterpart of ``image_global_generate``: steps of L2 length ``step_size``
    in a uniformly random direction."""
    X0 = np.atleast_2d(np.asarray(images, dtype=np.float64))
    n, d = X0.shape
    out = IDISet()
    X = X0.copy()
    active = np.ones(n, dtype=bool)
    rngs = [seed_rng(cfg.rng_seed, "random", i) for i in range(n)]
    for t in range(cfg.max_iter_g + 1):
        if not active.any():
            break
        act = np.flatnonzero(active)
        Xa = X[act]
        delta, flipped, _ = fgsm_flip_batch(clf, Xa, epsilon, max_flip_steps)
        Xp = Xa + delta
        out.visited.add(np.round(Xa * 255))
        hit = flipped & (detector.predict(Xa) != detector.predict(Xp))
        for j in np.flatnonzero(hit):
            i = act[j]
            out.add(Xa[j], Xp[j], phase="random", seed=int(i), iteration=t,
                    l2_bias=float(np.linalg.norm(Xa[j] - X0[i])),
                    l2_senatt=float(np.linalg.norm(delta[j])))
        active[act[hit]] = False
        if t == cfg.max_iter_g:
            break
        for i in np.flatnonzero(active):
            v = rngs[i].normal(size=d)
            X[i] = np.clip(X[i] + step_size * v / np.linalg.norm(v), 0.0, 1.0)
    return out
