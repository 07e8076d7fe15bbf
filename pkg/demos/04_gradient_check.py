"""
Checking backpropagation against finite differences
===================================================

The gradients are written out by hand, including the full batch-norm
Jacobian and the softmax over all N*M gating scores. A central-difference
oracle checks every scalar parameter.
"""

import numpy as np

from lmklnet import backward, grad_check, init_params
from lmklnet.cli import make_check_problem

K, y = make_check_problem(N=16, M=4, C=3, B=4, seed=0)

for arch in ("shared", "separate"):
    for pool in ("sum", "mean"):
        params = init_params(16, 8, 3, seed=0, architecture=arch, pool=pool)
        rep = grad_check(params, K, y, epsilon=1e-5, tol=1e-4)
        print(f"{arch:8s} {pool:4s}  max rel error {rep.max_rel_error:.2e}  "
              f"checked {rep.n_checked}, rejected {rep.n_rejected}  {'ok' if rep.passed else 'FAILED'}")

# Probes that flip a ReLU are rejected, since the difference quotient then
# straddles a kink. Corrupting one analytic entry is caught and located.
params = init_params(16, 8, 3, seed=0)
_, grads, _ = backward(params, K, y)
k = int(np.argmax(np.abs(grads["bn.gamma"])))
grads["bn.gamma"].flat[k] *= 2
rep = grad_check(params, K, y, analytic=grads)
print("with a corrupted entry:")
print(rep.to_text())
