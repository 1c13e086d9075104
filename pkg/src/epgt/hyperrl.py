"""The outer scheduling MDP over policy-gradient hyperparameters.

Hyper-actions are points of a quantized Cartesian product of per-knob bins;
hyper-states are projected signatures of the learner's parameters and recent
gradients; the hyper-reward is sparse, equal to the environment-phase return
at the last of the U update steps of a learning episode and zero elsewhere.
:func:`run_learning_episode` runs one full update-phase/environment-phase
cycle against the episodic memory.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .memory import select_action

MAX_ACTION_SPACE = 144


@dataclass
class HyperparamSpec:
    """One schedulable knob: explicit uniform bins or the learning-rate rule.

    ``uniform_bins`` takes ``values`` verbatim; ``lr_multiplicative`` derives
    ``bins`` values around the default: {default/k, ..., default/2, default,
    2*default, ..., k*default} with k = 2..(bins+1)/2, so the set always
    contains the default, has exactly ``bins`` members, and is symmetric in
    log space. The multiplicative rule needs an odd bin count.
    """

    name: str
    kind: str
    default: float
    bins: int = 0
    values: list = field(default_factory=list)

    def derive_bins(self):
        if self.kind == "uniform_bins":
            values = [float(v) for v in self.values]
            if not values:
                raise ValueError(f"{self.name}: uniform_bins needs explicit values")
            if self.bins and self.bins != len(values):
                raise ValueError(f"{self.name}: bin count {self.bins} != "
                                 f"{len(values)} values")
            if len(set(values)) != len(values):
                raise ValueError(f"{self.name}: duplicate bin values")
            if not any(np.isclose(self.default, v, rtol=1e-12) for v in values):
                raise ValueError(f"{self.name}: default {self.default} not in bins")
            return values
        if self.kind == "lr_multiplicative":
            b = int(self.bins)
            if b < 1 or b % 2 == 0:
                raise ValueError(f"{self.name}: multiplicative rule needs an odd "
                                 f"bin count, got {b}")
            if self.default <= 0:
                raise ValueError(f"{self.name}: default must be positive")
            half = (b + 1) // 2
            lower = [self.default / k for k in range(half, 1, -1)]
            upper = [self.default * k for k in range(2, half + 1)]
            return lower + [self.default] + upper
        raise ValueError(f"{self.name}: unknown kind {self.kind!r}")


class HyperActionSpace:
    """Enumerated Cartesian product of per-knob bins with flat indexing."""

    def __init__(self, specs):
        if not specs:
            raise ValueError("need at least one hyperparameter spec")
        self.specs = list(specs)
        self.bins = [spec.derive_bins() for spec in self.specs]
        self.sizes = [len(b) for b in self.bins]
        size = 1
        for s in self.sizes:
            size *= s
        if size > MAX_ACTION_SPACE:
            raise ValueError(f"action space size {size} exceeds the supported "
                             f"limit of {MAX_ACTION_SPACE}")
        self.size = size
        self.names = [spec.name for spec in self.specs]

    def tuple_at(self, index):
        """Flat index -> value tuple; the first knob varies slowest."""
        index = int(index)
        if not 0 <= index < self.size:
            raise ValueError(f"action index {index} outside [0, {self.size})")
        values = []
        for bins in reversed(self.bins):
            index, pos = divmod(index, len(bins))
            values.append(bins[pos])
        return tuple(reversed(values))

    def index_of(self, values):
        """Value tuple -> flat index (inverse of :meth:`tuple_at`)."""
        if len(values) != len(self.bins):
            raise ValueError("value tuple length mismatch")
        index = 0
        for bins, v in zip(self.bins, values):
            matches = [i for i, b in enumerate(bins) if np.isclose(b, v, rtol=1e-12)]
            if not matches:
                raise ValueError(f"value {v} not among bins {bins}")
            index = index * len(bins) + matches[0]
        return index

    def decode(self, index):
        """Flat index -> {knob name: value} for PGHyperparams overrides."""
        return dict(zip(self.names, self.tuple_at(index)))

    def default_index(self):
        return self.index_of(tuple(spec.default for spec in self.specs))


def build_action_space(specs):
    return HyperActionSpace(specs)


class GradHistory:
    """Ring buffer of the last n_order gradient snapshots, newest first."""

    def __init__(self, tensor_shapes, n_order):
        self.tensor_shapes = [tuple(s) for s in tensor_shapes]
        self.n_order = int(n_order)
        self._buf = deque(maxlen=max(self.n_order, 1))

    def push(self, grads):
        if len(grads) != len(self.tensor_shapes):
            raise ValueError("gradient snapshot has the wrong tensor count")
        for g, s in zip(grads, self.tensor_shapes):
            if g.shape != s:
                raise ValueError(f"gradient shape {g.shape} != {s}")
        if self.n_order > 0:
            self._buf.append(grads)

    def orders(self):
        """n_order tensor lists, most recent first, zero-filled when short."""
        recent = list(self._buf)[::-1]
        out = []
        for n in range(self.n_order):
            if n < len(recent):
                out.append(recent[n])
            else:
                out.append([np.zeros(s) for s in self.tensor_shapes])
        return out


def raw_snapshot(nets, history):
    """Copy of the learner's weight matrices plus the gradient history,
    arranged as snapshot[order][tensor]."""
    weights = [w.copy() for w in nets.weight_matrices()]
    return [weights] + history.orders()


def capture_hyper_state(params, history, proj):
    """Project the current parameters and gradient history to the state vector.

    ``params`` is the list of dense networks whose layer weight matrices form
    the order-0 tensors.
    """
    weights = [w.copy() for net in params for w in net.weights]
    snapshot = [weights] + history.orders()
    return proj.project(snapshot)


class EpisodeBuffer:
    """Per-episode record of (key, action, reward) plus hyper-returns."""

    def __init__(self, expected_steps):
        if expected_steps < 1:
            raise ValueError("an episode needs at least one step")
        self.expected_steps = int(expected_steps)
        self.keys = []
        self.actions = []
        self.rewards = None
        self.hyper_returns = None

    def __len__(self):
        return len(self.keys)

    def append(self, key, action):
        if len(self.keys) >= self.expected_steps:
            raise ValueError("buffer already holds a full episode")
        self.keys.append(np.asarray(key, dtype=np.float64))
        self.actions.append(int(action))

    @property
    def complete(self):
        return self.rewards is not None

    def records(self):
        """(key, action, hyper-return) triples for the memory writer."""
        if not self.complete:
            raise ValueError("rewards not assigned yet")
        return list(zip(self.keys, self.actions, self.hyper_returns))


def assign_hyper_rewards(buffer, g, num_steps):
    """Sparse reward assignment: zero everywhere except G at the final step.

    The per-step hyper-return is G itself (a learning episode spans exactly
    one update phase). Rejects buffers whose length is not ``num_steps``.
    """
    if len(buffer) != num_steps:
        raise ValueError(f"buffer length {len(buffer)} != expected {num_steps}")
    buffer.rewards = [0.0] * (num_steps - 1) + [float(g)]
    buffer.hyper_returns = [float(g)] * num_steps
    return buffer


def run_learning_episode(learner, memory, embedder, history, space, num_steps,
                         epsilon, rng, defaults, rng_encoder=None,
                         global_step=0, on_step=None):
    """One learning episode: U scheduled policy updates, then the environment
    phase whose return becomes the sparse hyper-reward.

    Per step: capture and embed the training state, query the memory for all
    action values, pick a hyper-action epsilon-greedily, run the policy update
    with the decoded hyperparameters, and record the transition. A skipped
    (non-finite) policy update still records the attempted action and pushes a
    zero gradient snapshot. After the phase, rewards are assigned and the
    buffer is flushed into the memory.

    ``epsilon`` is a constant or a callable over the global update step.
    Returns (G, completed buffer).
    """
    buffer = EpisodeBuffer(num_steps)
    for i in range(num_steps):
        step = global_step + i
        eps = epsilon(step) if callable(epsilon) else float(epsilon)
        snapshot = raw_snapshot(learner.nets, history)
        state = embedder.project(snapshot)
        key = embedder.embed(state)
        q = np.empty(space.size)
        for a in range(space.size):
            q[a], _ = memory.read(key, a)
        action = select_action(q, eps, rng)
        hp = defaults.with_values(**space.decode(action))
        result = learner.policy_update(hp, want_weight_grads=True)
        if result.weight_grads is not None:
            history.push(result.weight_grads)
        else:
            history.push(learner.nets.zero_weight_grads())
        buffer.append(key, action)
        if rng_encoder is not None:
            embedder.observe(snapshot, step, rng_encoder)
        if on_step is not None:
            on_step(step, action, hp, result, eps)
    g = learner.environment_phase()
    assign_hyper_rewards(buffer, g, num_steps)
    memory.update(buffer)
    return g, buffer
