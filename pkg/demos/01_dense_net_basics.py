"""Build a small dense network, train it on a toy regression, and confirm the
analytic gradients against central finite differences.

Run: python3 demos/01_dense_net_basics.py
"""

import numpy as np

from epgt import nn
from epgt.oracle import finite_diff_grad, max_relative_error

rng = np.random.default_rng(0)

print("== a 2-layer tanh network on y = sin(3x) ==")
net = nn.init_net([1, 16, 1], ["tanh", "identity"], seed=1)
opt = nn.OptimizerState("adam", net)

xs = rng.uniform(-1, 1, size=(256, 1))
ys = np.sin(3 * xs)

for step in range(2001):
    pred, cache = nn.forward(net, xs)
    diff = pred - ys
    loss = float(np.mean(diff ** 2))
    grads, _ = nn.backward(net, cache, 2.0 * diff / len(xs))
    nn.apply_update(net, grads, opt, lr=1e-2)
    if step % 500 == 0:
        print(f"  step {step:4d}  mse {loss:.5f}")

print("\n== gradient check against finite differences ==")
x = rng.normal(size=1)
target = rng.normal(size=1)


def loss_fn():
    y, _ = nn.forward(net, x)
    return float(np.sum((y - target) ** 2))


y, cache = nn.forward(net, x)
analytic, _ = nn.backward(net, cache, 2.0 * (y - target))
numeric = finite_diff_grad(loss_fn, net.parameter_arrays(), step=1e-5)
err = max_relative_error(analytic.parameter_arrays(), numeric)
print(f"  max relative error vs central differences: {err:.2e}")

print("\n== snapshots round-trip bit-exactly ==")
nn.save_net(net, "/tmp/demo_net.npz")
loaded = nn.load_net("/tmp/demo_net.npz")
same = all(np.array_equal(a, b) for a, b in
           zip(loaded.parameter_arrays(), net.parameter_arrays()))
print(f"  reloaded equals original: {same}")
