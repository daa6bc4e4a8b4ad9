"""
Building the network and checking its gradients
===============================================

The item network is three conv/relu/pool blocks followed by a dense head.
Every backward pass can be compared against central finite differences.
"""

import numpy as np

from ipost.layers import build_ipost_cnn

net = build_ipost_cnn((1, 32, 32), num_classes=2, labels=["cross", "disc"], seed=0)
print("layers:")
for i, (spec, shape) in enumerate(zip(net.layers, net.shapes[1:])):
    print(f"  {i:2d} {spec.kind:8s} -> {shape}")
print("parameters:", net.parameter_count())

# probabilities of a random image
x = np.random.default_rng(0).random((1, 32, 32))
print("eval-mode output:", net.predict(x).round(4))

# finite-difference check on a small network, one weight tensor at a time
# dropout off: a fully dropped input would sit exactly on a relu kink
small = build_ipost_cnn((1, 22, 22), 3, filters=(2, 3, 4), hidden=6, dropout_rate=0.0, seed=1)
batch = np.random.default_rng(1).random((2, 1, 22, 22))
r = np.random.default_rng(2).normal(size=(2, 3))


def objective():
    return float(np.sum(small.forward(batch, seed=5, mode="train")[0] * r))


_, caches = small.forward(batch, seed=5, mode="train")
_, grads = small.backward(caches, r)
eps = 1e-5
for p, g in zip(small.parameters(), grads):
    num = np.zeros_like(p)
    for i in np.ndindex(p.shape):
        keep = p[i]
        p[i] = keep + eps
        up = objective()
        p[i] = keep - eps
        down = objective()
        p[i] = keep
        num[i] = (up - down) / (2 * eps)
    err = np.max(np.abs(num - g) / np.maximum(np.abs(num) + np.abs(g), 1e-8))
    print(f"  tensor {str(p.shape):16s} max relative error {err:.1e}")
