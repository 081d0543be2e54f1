"""Cross-scale attention by hand: each fine position attends over all coarse positions.

Run: python3 demos/02_cross_scale_attention.py
"""

import numpy as np

from sidert.decoder import CsaParams, csa_forward
from sidert.tensor import Tensor

eye = CsaParams(Tensor(np.eye(2)), Tensor(np.zeros(2)), Tensor(np.eye(2)), Tensor(np.zeros(2)))

# One fine query q = [1, 0] against coarse keys [1, 0] and [0, 1].
fine = Tensor(np.array([1.0, 0.0]).reshape(2, 1, 1))
coarse = Tensor(np.array([[1.0, 0.0], [0.0, 1.0]]).T.reshape(2, 1, 2))
out, attn = csa_forward(fine, coarse, eye, return_attention=True)
print("attention", attn.data)  # [e/(e+1), 1/(e+1)]
print("output   ", out.data[:, 0, 0])  # q + attention-weighted keys

# Shuffling coarse positions leaves the fused map unchanged.
rng = np.random.default_rng(1)
p = CsaParams(*(Tensor(rng.normal(size=s)) for s in ((4, 4), (4,), (8, 4), (4,))))
f1, f2 = Tensor(rng.normal(size=(4, 4, 4))), rng.normal(size=(8, 2, 2))
shuffled = f2.reshape(8, 4)[:, rng.permutation(4)].reshape(8, 2, 2)
same = np.array_equal(csa_forward(f1, Tensor(f2), p).data, csa_forward(f1, Tensor(shuffled), p).data)
print("permutation invariant:", same)
