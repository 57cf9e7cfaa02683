"""The same search on 8x8 toy images, where the sensitive attribute is learned.

A detector labels "faces"; a small head on its first layer predicts a
brightness attribute.  FGSM on that head produces the counterpart image,
and the detector's biased neurons steer the search.
"""
# %% Data and detector
import numpy as np

from fairprobe import nn
from fairprobe.generalize import (build_attr_head, fgsm_flip_batch, flip_pairs,
                                  image_global_generate, image_random_baseline)
from fairprobe.generate import GenerationConfig
from fairprobe.interpret import bias_profile
from fairprobe.synthetic import toy_images

X, y_face, y_attr = toy_images(2000, seed=0)
tr, held = slice(0, 1400), slice(1400, 1700)
det = nn.train(nn.init_network(64, [32, 16], 2, seed=0), X[tr], y_face[tr],
               nn.TrainConfig(epochs=40, batch_size=64, rng_seed=0))
print(f"detector accuracy {nn.accuracy(det, X[1700:], y_face[1700:]):.3f}")

# %% Attribute head on the frozen first layer
clf = build_attr_head(det, 1, X[tr], y_attr[tr], seed=0)
print(f"attribute head training accuracy {clf.accuracy:.3f}")
delta, flipped, steps = fgsm_flip_batch(clf, X[1700:])
print(f"FGSM flips {flipped.mean():.1%} of held-out images, "
      f"median {np.median(steps[flipped]):.0f} steps")

# %% Interpret with flip pairs, then search
profile = bias_profile(det, flip_pairs(clf, X[held]))
print(f"most biased layer {profile.most_biased_layer}, {profile.n_biased} neurons")
cfg = GenerationConfig(rng_seed=0)
guided = image_global_generate(det, clf, X[1400:1600], profile, cfg)
rand = image_random_baseline(det, clf, X[1400:1600], cfg)
print(f"guided: {len(guided)} of 200 seeds; random: {len(rand)} of 200")

# %% Perturbation sizes on seeds both methods had to move
g = {p["seed"]: p["l2_bias"] for p in guided.provenance if p["iteration"] > 0}
r = {p["seed"]: p["l2_bias"] for p in rand.provenance if p["iteration"] > 0}
common = sorted(set(g) & set(r))
print(f"{len(common)} common seeds; median L2 of the search perturbation: "
      f"guided {np.median([g[s] for s in common]):.2f}, random {np.median([r[s] for s in common]):.2f}")
