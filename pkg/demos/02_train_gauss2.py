"""
Training on two Gaussians
=========================

Fit the gating network and the classifier jointly with ADAM and compare
the two ways of wiring the first fully connected layer.
"""

import numpy as np
from scipy.stats import norm

from lmklnet import TrainConfig, accuracy, kernels, synth, train

Xtr, ytr, Xte, yte = synth.generate("gauss2", 300, 200, seed=0)
ytr = (ytr > 0).astype(int)
yte = (yte > 0).astype(int)

grid = kernels.bandwidth_grid(kernels.max_pairwise_distance(Xtr))
Ktr = kernels.build_train_kernels(Xtr, grid)
Kte = kernels.build_cross_kernels(Xte, Xtr, grid)

# Centers sit at (+-2, 0) with unit variance, so the best possible accuracy
# is Phi(2).
print(f"Bayes rate: {norm.cdf(2.0):.4f}")

for arch in ("shared", "separate"):
    cfg = TrainConfig(epochs=60, batch_size=64, hidden=32, seed=0, architecture=arch, eval_every=20)
    params, metrics = train(Ktr, ytr, Kte, yte, cfg)
    for rec in metrics.records:
        print(f"  {arch:8s} epoch {rec.epoch:3d}  train loss {rec.train_loss:.4f}  test acc {rec.test_acc:.3f}")
    print(f"{arch}: final test accuracy {accuracy(params, Kte, yte):.3f}")

# In the shared wiring the attention network and the classifier use the
# same first layer, so the separate model has N*H more parameters.
print("extra parameters in the separate model:", params.W0_mlp.size)
