"""
Where does the gating put its weight?
=====================================

On the four-blob XOR problem no single bandwidth fits everywhere, so the
learned gating should differ between the classes. Summing the gating
matrix over training samples gives one weight per kernel; averaging that
over each class shows the pattern.
"""

import numpy as np

from lmklnet import TrainConfig, accuracy, class_gating_stats, kernels, marginalize_gating, synth, train

Xtr, ytr, Xte, yte = synth.generate("xor4", 300, 200, seed=0)
ytr = (ytr > 0).astype(int)
yte = (yte > 0).astype(int)

grid = kernels.bandwidth_grid(kernels.max_pairwise_distance(Xtr))
Ktr = kernels.build_train_kernels(Xtr, grid)
Kte = kernels.build_cross_kernels(Xte, Xtr, grid)

params, _ = train(Ktr, ytr, Kte, yte, TrainConfig(epochs=80, batch_size=64, hidden=32, seed=0))
print(f"test accuracy {accuracy(params, Kte, yte):.3f}")

# One test point: its kernel weights form a probability vector.
w = marginalize_gating(params, Kte.values[0])
print("weights for test point 0:", np.round(w, 3), "sum", round(w.sum(), 12))

mean, std = class_gating_stats(params, Kte, yte)
np.set_printoptions(precision=3, suppress=True)
print("ratio:     ", np.round(np.linspace(0.1, 1.0, 10), 1))
print("class -1:  ", mean[0])
print("class +1:  ", mean[1])
print("spread:    ", std.max(axis=0))
print(f"L1 distance between class rows: {np.abs(mean[0] - mean[1]).sum():.3f}")
