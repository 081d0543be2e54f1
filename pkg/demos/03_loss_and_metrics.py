"""The square-root scale-invariant log loss and the standard depth metrics.

Run: python3 demos/03_loss_and_metrics.py
"""

import math

import numpy as np

from sidert.loss import silog_sqrt_loss
from sidert.metrics import compute_metrics
from sidert.tensor import Tensor

gt = np.array([[[2.0]]])
print("pred = e * gt, lambda 0.85:", silog_sqrt_loss(Tensor(math.e * gt), gt, np.ones_like(gt), 0.85).item())
print("sqrt(0.15)               :", math.sqrt(0.15))

# With lambda = 1 a global rescale of the prediction costs nothing.
rng = np.random.default_rng(0)
pred, gt = rng.uniform(1, 5, size=(1, 4, 4)), rng.uniform(1, 5, size=(1, 4, 4))
ones = np.ones_like(gt)
for c in (0.5, 1.0, 10.0):
    print(f"lambda 1, pred x {c:>4}:", silog_sqrt_loss(Tensor(c * pred), gt, ones, 1.0).item())

report = compute_metrics(np.array([2.0, 3.0]), np.array([1.0, 3.0]))
print(report.to_table())

# delta thresholds are strict: a ratio of exactly 1.25 misses delta1.
print(compute_metrics(np.array([1.0]), np.array([1.25])).delta)
