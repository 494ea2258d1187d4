"""
Multi-head attention, checked by hand
=====================================

The vectorised attention in the model module is compared against a loop
written directly from the definition: per head, score every query against
every key, softmax, and mix the value rows.
"""

import math

import numpy as np

from logsentinel import model as M

rng = np.random.default_rng(0)
T, D, H = 5, 8, 2
dv = D // H
X = rng.standard_normal((T, D))
Wq, Wk, Wv = rng.standard_normal((3, H, D, dv))
Wo = rng.standard_normal((H * dv, D))

# the last position is padding and must receive no attention
mask = np.array([True, True, True, True, False])

fast = M.multi_head(X, Wq, Wk, Wv, Wo, mask)

heads = []
for h in range(H):
    Q, K, V = X @ Wq[h], X @ Wk[h], X @ Wv[h]
    out = np.zeros((T, dv))
    for i in range(T):
        s = [Q[i] @ K[j] / math.sqrt(dv) if mask[j] else -math.inf for j in range(T)]
        w = np.exp(np.array(s) - max(s))
        out[i] = (w / w.sum()) @ V
    heads.append(out)
slow = np.concatenate(heads, axis=1) @ Wo

print("max |vectorised - loop| =", np.abs(fast - slow).max())

# position tables: the first row is (0, 1, 0, 1, ...) and row 1 starts with sin(1)
P = M.positional_encoding(4, 6)
print(np.round(P, 4))
