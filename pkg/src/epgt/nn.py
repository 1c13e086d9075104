"""Minimal dense-network engine: forward pass, exact backprop, first-order optimizers.

Everything is float64 and deterministic for fixed seeds. Networks are plain
value objects owned by a single thread; no operation shares mutable state.

Inputs may be a single vector ``(in,)`` or a batch ``(n, in)``. Gradients
returned by :func:`backward` are summed over batch rows, so a caller that
wants the mean gradient scales ``output_grad`` by ``1/n`` (or divides after).
"""

from __future__ import annotations

import numpy as np

ACTIVATIONS = ("tanh", "relu", "sigmoid", "identity")


def _activate(name, z):
    if name == "tanh":
        return np.tanh(z)
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "sigmoid":
        return 1.0 / (1.0 + np.exp(-z))
    if name == "identity":
        return z
    raise ValueError(f"unknown activation {name!r}")


def _activate_grad(name, z, a):
    """Derivative of the activation w.r.t. its pre-activation z, given a = act(z)."""
    if name == "tanh":
        return 1.0 - a * a
    if name == "relu":
        return (z > 0.0).astype(np.float64)
    if name == "sigmoid":
        return a * (1.0 - a)
    if name == "identity":
        return np.ones_like(z)
    raise ValueError(f"unknown activation {name!r}")


class DenseNet:
    """Stack of affine-plus-activation layers.

    ``weights[m]`` has shape ``[out_m, in_m]`` and ``biases[m]`` shape
    ``[out_m]``; adjacent layers must agree on inner dimensions.
    """

    def __init__(self, weights, biases, activations):
        if len(weights) == 0:
            raise ValueError("a network needs at least one layer")
        if not (len(weights) == len(biases) == len(activations)):
            raise ValueError("weights, biases and activations must have equal length")
        self.weights = [np.array(w, dtype=np.float64) for w in weights]
        self.biases = [np.array(b, dtype=np.float64) for b in biases]
        self.activations = list(activations)
        for m, (w, b, act) in enumerate(zip(self.weights, self.biases, self.activations)):
            if act not in ACTIVATIONS:
                raise ValueError(f"layer {m}: unknown activation {act!r}")
            if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
                raise ValueError(f"layer {m}: weight {w.shape} and bias {b.shape} mismatch")
            if m > 0 and w.shape[1] != self.weights[m - 1].shape[0]:
                raise ValueError(
                    f"layer {m}: input dim {w.shape[1]} != previous output "
                    f"{self.weights[m - 1].shape[0]}"
                )

    @property
    def num_layers(self):
        return len(self.weights)

    @property
    def input_dim(self):
        return self.weights[0].shape[1]

    @property
    def output_dim(self):
        return self.weights[-1].shape[0]

    @property
    def layer_sizes(self):
        return [self.input_dim] + [w.shape[0] for w in self.weights]

    def parameter_arrays(self):
        """Flat [W0, b0, W1, b1, ...] view; arrays alias network storage."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def copy(self):
        return DenseNet(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            list(self.activations),
        )

    def all_finite(self):
        return all(np.all(np.isfinite(a)) for a in self.parameter_arrays())


def init_net(layer_sizes, activations=None, seed=0):
    """Build a DenseNet with Glorot-uniform weights and zero biases.

    ``layer_sizes`` is ``[input_dim, out_1, ..., out_M]``. The default
    activation stack is tanh on hidden layers and identity on the output.
    """
    sizes = list(layer_sizes)
    if len(sizes) < 2:
        raise ValueError("layer_sizes needs an input dim and at least one layer")
    if any(int(s) <= 0 for s in sizes):
        raise ValueError(f"all layer sizes must be positive, got {sizes}")
    n_layers = len(sizes) - 1
    if activations is None:
        activations = ["tanh"] * (n_layers - 1) + ["identity"]
    if len(activations) != n_layers:
        raise ValueError(f"need {n_layers} activations, got {len(activations)}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return DenseNet(weights, biases, activations)


class ForwardCache:
    """Per-layer inputs and pre-activations kept for the backward pass."""

    def __init__(self, inputs, preacts, outputs, batched):
        self.inputs = inputs      # a_{m-1} for each layer, 2-D
        self.preacts = preacts    # z_m for each layer, 2-D
        self.outputs = outputs    # a_m for each layer, 2-D
        self.batched = batched


def forward(net, x):
    """Run the network; returns ``(output, cache)``.

    Pure: identical (net, input) give identical output.
    """
    arr = np.asarray(x, dtype=np.float64)
    batched = arr.ndim == 2
    if not batched:
        if arr.ndim != 1:
            raise ValueError(f"input must be 1-D or 2-D, got shape {arr.shape}")
        arr = arr[None, :]
    if arr.shape[1] != net.input_dim:
        raise ValueError(f"input dim {arr.shape[1]} != network input {net.input_dim}")
    inputs, preacts, outputs = [], [], []
    a = arr
    for w, b, act in zip(net.weights, net.biases, net.activations):
        z = a @ w.T + b
        inputs.append(a)
        preacts.append(z)
        a = _activate(act, z)
        outputs.append(a)
    cache = ForwardCache(inputs, preacts, outputs, batched)
    y = a if batched else a[0]
    return y, cache


class Gradients:
    """Per-layer weight and bias gradients, shape-congruent with a DenseNet."""

    def __init__(self, weight_grads, bias_grads):
        self.weights = weight_grads
        self.biases = bias_grads

    @classmethod
    def zeros_like(cls, net):
        return cls([np.zeros_like(w) for w in net.weights],
                   [np.zeros_like(b) for b in net.biases])

    def parameter_arrays(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def all_finite(self):
        return all(np.all(np.isfinite(a)) for a in self.parameter_arrays())

    def congruent_with(self, net):
        if len(self.weights) != len(net.weights):
            return False
        return all(
            gw.shape == w.shape and gb.shape == b.shape
            for gw, w, gb, b in zip(self.weights, net.weights, self.biases, net.biases)
        )

    def scale(self, factor):
        for a in self.parameter_arrays():
            a *= factor
        return self


def backward(net, cache, output_grad):
    """Exact reverse-mode gradients.

    ``output_grad`` is dL/d(output) for a scalar loss L. Returns
    ``(Gradients, input_grad)``. For batched caches the gradients are summed
    over rows, i.e. they are exact for ``L = sum_rows L_row``.
    """
    if cache is None or len(cache.preacts) != net.num_layers:
        raise ValueError("forward cache missing or not from this network")
    g = np.asarray(output_grad, dtype=np.float64)
    if not cache.batched:
        g = g[None, :]
    if g.shape != cache.outputs[-1].shape:
        raise ValueError(
            f"output_grad shape {g.shape} != output shape {cache.outputs[-1].shape}"
        )
    weight_grads = [None] * net.num_layers
    bias_grads = [None] * net.num_layers
    for m in range(net.num_layers - 1, -1, -1):
        z, a, a_prev = cache.preacts[m], cache.outputs[m], cache.inputs[m]
        gz = g * _activate_grad(net.activations[m], z, a)
        weight_grads[m] = gz.T @ a_prev
        bias_grads[m] = gz.sum(axis=0)
        g = gz @ net.weights[m]
    input_grad = g if cache.batched else g[0]
    return Gradients(weight_grads, bias_grads), input_grad


class OptimizerState:
    """Moment accumulators and step counter for a list of parameter arrays.

    ``algorithm`` is one of sgd / rmsprop / adam. Constructed either from a
    DenseNet or from an explicit list of shapes so that loose parameters
    (e.g. a learned log-std vector) can share the same update rules.
    """

    ALGORITHMS = ("sgd", "rmsprop", "adam")

    def __init__(self, algorithm, net_or_shapes, decay=0.99, epsilon=1e-8,
                 betas=(0.9, 0.999)):
        if algorithm not in self.ALGORITHMS:
            raise ValueError(f"unknown optimizer {algorithm!r}")
        if isinstance(net_or_shapes, DenseNet):
            shapes = [a.shape for a in net_or_shapes.parameter_arrays()]
        else:
            shapes = [tuple(s) for s in net_or_shapes]
        self.algorithm = algorithm
        self.shapes = shapes
        self.decay = float(decay)
        self.epsilon = float(epsilon)
        self.betas = (float(betas[0]), float(betas[1]))
        self.step = 0
        if algorithm == "rmsprop":
            self.square_avg = [np.zeros(s) for s in shapes]
        elif algorithm == "adam":
            self.exp_avg = [np.zeros(s) for s in shapes]
            self.exp_avg_sq = [np.zeros(s) for s in shapes]
        if algorithm != "sgd":
            self._scratch = [np.empty(s) for s in shapes]

    def update(self, params, grads, lr):
        """One in-place update of ``params`` given ``grads``.

        Gradients are validated for shape congruence and finiteness before
        any parameter is touched.
        """
        if lr < 0.0:
            raise ValueError("learning rate must be non-negative")
        if len(params) != len(self.shapes):
            raise ValueError("parameter count does not match optimizer state")
        for p, g, s in zip(params, grads, self.shapes):
            if p.shape != s or np.asarray(g).shape != s:
                raise ValueError(f"shape mismatch: {p.shape} vs {np.asarray(g).shape} vs {s}")
        if not all(np.all(np.isfinite(g)) for g in grads):
            raise ValueError("non-finite gradient rejected; parameters untouched")
        self.step += 1
        if self.algorithm == "sgd":
            for p, g in zip(params, grads):
                p -= lr * g
        elif self.algorithm == "rmsprop":
            # epsilon inside the root (TF formulation): damps the step when the
            # second-moment estimate is tiny, which matters for small-batch RL
            for p, g, sq, tmp in zip(params, grads, self.square_avg,
                                     self._scratch):
                g = np.asarray(g)
                sq *= self.decay
                np.multiply(g, g, out=tmp)
                tmp *= 1.0 - self.decay
                sq += tmp
                np.add(sq, self.epsilon, out=tmp)
                np.sqrt(tmp, out=tmp)
                np.divide(g, tmp, out=tmp)
                tmp *= lr
                p -= tmp
        else:  # adam
            b1, b2 = self.betas
            bc1 = 1.0 - b1 ** self.step
            bc2 = 1.0 - b2 ** self.step
            for p, g, m, v, tmp in zip(params, grads, self.exp_avg,
                                       self.exp_avg_sq, self._scratch):
                g = np.asarray(g)
                m *= b1
                np.multiply(g, 1.0 - b1, out=tmp)
                m += tmp
                v *= b2
                np.multiply(g, g, out=tmp)
                tmp *= 1.0 - b2
                v += tmp
                np.divide(v, bc2, out=tmp)
                np.sqrt(tmp, out=tmp)
                tmp += self.epsilon
                np.divide(m, tmp, out=tmp)
                tmp *= lr / bc1
                p -= tmp


def apply_update(net, grads, opt, lr):
    """Apply one optimizer step to ``net`` in place; returns ``(net, opt)``.

    Non-finite gradients are rejected before any mutation.
    """
    if not isinstance(grads, Gradients) or not grads.congruent_with(net):
        raise ValueError("gradients not shape-congruent with network")
    opt.update(net.parameter_arrays(), grads.parameter_arrays(), lr)
    return net, opt


def global_grad_norm(arrays):
    """L2 norm over a list of gradient arrays taken jointly."""
    total = 0.0
    for a in arrays:
        total += float(np.sum(np.square(a)))
    return float(np.sqrt(total))


def clip_grad_norm(arrays, max_norm):
    """Scale ``arrays`` in place so their joint L2 norm is at most ``max_norm``.

    Returns the pre-clip norm.
    """
    norm = global_grad_norm(arrays)
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        for a in arrays:
            a *= scale
    return norm


NET_FORMAT_VERSION = 1


def net_to_arrays(net, prefix=""):
    """Flatten a network into an npz-ready dict of arrays."""
    out = {
        f"{prefix}version": np.int64(NET_FORMAT_VERSION),
        f"{prefix}num_layers": np.int64(net.num_layers),
        f"{prefix}activations": np.array(net.activations, dtype="U10"),
    }
    for m, (w, b) in enumerate(zip(net.weights, net.biases)):
        out[f"{prefix}w{m}"] = w
        out[f"{prefix}b{m}"] = b
    return out


def net_from_arrays(data, prefix=""):
    """Inverse of :func:`net_to_arrays`; round trips bit-exactly."""
    version = int(data[f"{prefix}version"])
    if version != NET_FORMAT_VERSION:
        raise ValueError(f"unsupported network snapshot version {version}")
    n = int(data[f"{prefix}num_layers"])
    activations = [str(a) for a in data[f"{prefix}activations"]]
    weights = [data[f"{prefix}w{m}"] for m in range(n)]
    biases = [data[f"{prefix}b{m}"] for m in range(n)]
    return DenseNet(weights, biases, activations)


def save_net(net, path):
    """Write a versioned network snapshot (.npz); round trips bit-exactly."""
    np.savez(path, **net_to_arrays(net))


def load_net(path):
    with np.load(path) as data:
        return net_from_arrays(data)
