"""Walk through the tabular workflow on a synthetic census-like table.

Run with ``python3 demos/tabular_pipeline.py``; it takes about ten seconds.
"""
# %% Data: the label leans on ``sex`` only near the decision boundary
import numpy as np

from fairprobe import nn
from fairprobe.data import kmeans_seeds
from fairprobe.generate import GenerationConfig, IDISet, generate
from fairprobe.interpret import profile_from_data
from fairprobe.metrics import dm_rs, gd, gsr, random_baseline, retrain_fairness
from fairprobe.synthetic import adult_like

ds = adult_like(10_000, seed=0)
train, val, test = ds.split(0)
print(f"{len(train)} train / {len(val)} val / {len(test)} test rows, "
      f"sensitive: {sorted(ds.schema.sensitive)}")

# %% Model: five ReLU hidden layers and a softmax head
net = nn.init_network(13, [64, 32, 16, 8, 4], 2, seed=0)
net = nn.train(net, train.X, train.y, nn.TrainConfig(epochs=30, batch_size=64, rng_seed=0))
print(f"test accuracy {nn.accuracy(net, test.X, test.y):.4f}")

# %% Interpretation: which layer reacts most to flipping the sensitive attribute?
profile = profile_from_data(net, test.X, ds.schema)
for layer, auc in enumerate(profile.aucs):
    marker = "  <- most biased" if layer == profile.most_biased_layer else ""
    print(f"layer {layer}: AUC {auc:.3f}{marker}")
print(f"threshold {profile.threshold:.3f}, {profile.n_biased} biased neurons")

# %% Search: guided global phase, then local exploration around each hit
seeds = train.X[kmeans_seeds(train.X, 4, 1000, rng_seed=0)]
cfg = GenerationConfig(rng_seed=0, max_iter_l=200)
found_g, found_l = generate(net, seeds, profile, ds.schema, cfg)
baseline = random_baseline(net, seeds, ds.schema, cfg)
print(f"guided global: {len(found_g)} IDIs, GSR {gsr(len(found_g), found_g.n_generated):.3f}")
print(f"random walk:   {len(baseline)} IDIs, GSR {gsr(len(baseline), baseline.n_generated):.3f}")
print(f"local phase added {len(found_l)} IDIs")
print(f"diversity vs random (rho=0.02): {gd(found_g, baseline, 0.02, ds.schema):.2f}")

# %% One instance and its witness
pair = found_g.pairs[0]
names = ds.schema.names
changed = [names[i] for i in np.flatnonzero(pair.a != pair.b)]
print(f"{dict(zip(names, pair.a.astype(int).tolist()))}\n  flips on {changed}: "
      f"{net.predict(pair.a)} -> {net.predict(pair.b)}")

# %% Repair: fine-tune on 10% of the instances labelled with the original prediction
idis = IDISet()
idis.extend(found_g)
idis.extend(found_l)
res = retrain_fairness(net, idis, train.X, train.y, ds.schema, repeats=3, X_eval=test.X,
                       X_test=test.X, y_test=test.y, rng_seed=0, profile=profile)
print(f"DM-RS {res.dm_rs_before:.4f} -> {res.dm_rs_after:.4f}, "
      f"accuracy {res.accuracy_before:.4f} -> {res.accuracy_after:.4f}")
print(f"uniform-sample DM-RS of the first repaired model: "
      f"{dm_rs(res.models[0], ds.schema, 10_000, 1):.4f}")
