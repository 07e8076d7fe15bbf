"""Localized multiple kernel learning with an attentional gating network.

The pipeline: parse LIBSVM data (:mod:`lmklnet.dataio`), precompute a stack
of RBF kernels (:mod:`lmklnet.kernels`), train the gating network and MLP
with hand-written backprop and ADAM (:mod:`lmklnet.network`,
:mod:`lmklnet.grads`, :mod:`lmklnet.optim`) and inspect the result
(:mod:`lmklnet.analysis`).
"""

from .analysis import accuracy, class_gating_stats, class_mean_gating, marginalize_gating, predict
from .dataio import Dataset, LabeledExample, load_dataset, subsample
from .grads import backward, grad_check
from .kernels import (
    CrossKernelStack,
    KernelStack,
    bandwidth_grid,
    build_cross_kernels,
    build_train_kernels,
    max_pairwise_distance,
)
from .network import ModelParams, an_forward, forward, init_params
from .optim import TrainConfig, train

__version__ = "0.1.0"
