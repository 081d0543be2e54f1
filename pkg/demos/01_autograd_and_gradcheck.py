"""Reverse-mode autodiff on numpy arrays, checked against central differences.

Run: python3 demos/01_autograd_and_gradcheck.py
"""

import numpy as np

from sidert import tensor as T
from sidert.gradcheck import grad_check
from sidert.tensor import Tensor, backward

rng = np.random.default_rng(0)

# A leaf records gradients; every op output remembers how to push them back.
x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
w = Tensor(rng.normal(size=(4, 2)), requires_grad=True)
loss = T.sum(T.sigmoid(T.matmul(x, w)))
backward(loss)
print("loss", loss.item())
print("dloss/dw\n", w.grad)

# The same function, differentiated numerically.
err = grad_check(lambda w_: T.sum(T.sigmoid(T.matmul(Tensor(x.data), w_))), w.data)
print(f"max relative error vs finite differences: {err:.2e}")

# Bilinear upsampling is linear, so its backward pass is its exact adjoint.
a, b = rng.normal(size=(1, 3, 3)), rng.normal(size=(1, 6, 6))
leaf = Tensor(a, requires_grad=True)
backward(T.sum(T.bilinear_upsample(leaf, 2) * Tensor(b)))
print("<Up a, b> =", np.sum(T.bilinear_upsample(Tensor(a), 2).data * b))
print("<a, Up^T b> =", np.sum(a * leaf.grad))
