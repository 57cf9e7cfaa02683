"""How the activation-difference profile singles out a biased layer.

A hand-built network lets the sensitive input reach only its third hidden
layer with any strength.  The profile should pick that layer, and zeroing
the selected neurons should close the gap.
"""
# %% A network with a planted path from the sensitive input
import numpy as np

from fairprobe import nn
from fairprobe.interpret import actdiff, as_curve, bias_profile

w = [np.array([[1.0, 1, 1, 0], [0, 0, 0, 0.05]]), np.eye(4),
     np.vstack([np.eye(4)[:3], np.full((1, 4), 20.0)]), np.array([[1.0, 0], [1, 0], [1, 0], [0, 1]])]
layers = [nn.LayerSpec(4, "relu")] * 3 + [nn.LayerSpec(2, "softmax")]
net = nn.Network(2, layers, w, [np.zeros(4)] * 3 + [np.zeros(2)])

# %% Pairs that differ only in column 1
A = np.column_stack([np.linspace(0, 1, 21), np.zeros(21)])
B = A.copy()
B[:, 1] = 1.0
profile = bias_profile(net, (A, B))

# %% Per-layer curves: the fraction of neurons above each threshold
for layer, (diff, curve) in enumerate(profile.per_layer):
    spark = "".join("#" if v > 0.5 else "." for v in curve.sen_neu_r[::10])
    print(f"layer {layer}: z={np.round(diff.z, 3)} AUC {curve.auc:.3f} {spark}")
print(f"selected layer {profile.most_biased_layer}, threshold {profile.threshold:.3f}, "
      f"neurons {np.flatnonzero(profile.positions).tolist()}")

# %% Zero the selected neurons and measure again on the same pairs
layer = profile.most_biased_layer
masked = nn.mask_neurons(net, layer, profile.positions)
after = as_curve(actdiff(masked, (A, B), layer).z).auc
print(f"AUC of layer {layer}: {profile.aucs[layer]:.3f} -> {after:.3f}")
gap = np.abs(net.predict_proba(A) - net.predict_proba(B)).max()
gap_masked = np.abs(masked.predict_proba(A) - masked.predict_proba(B)).max()
print(f"largest output change from the flip: {gap:.3f} -> {gap_masked:.3f}")
