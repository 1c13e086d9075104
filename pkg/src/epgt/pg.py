"""Policy-gradient learners (A2C and PPO).

These are the inner learners whose hyperparameters the outer scheduling MDP
acts on. Policies are dense networks from :mod:`epgt.nn` with analytically
assembled loss gradients: categorical logits for discrete actions, a diagonal
Gaussian with a state-independent learned log-std for continuous ones.

Rollouts report termination and truncation separately; GAE bootstraps through
truncation so advantage estimates stay unbiased at episode caps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import nn

GRAD_CLIP = 0.5
LOG_STD_MIN, LOG_STD_MAX = -5.0, 2.0
LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class PGHyperparams:
    """Tunable knobs of the PG learners; every field is a hyper-action target."""

    learning_rate: float = 7e-4
    gae_lambda: float = 0.95
    clip: float = 0.2            # PPO only
    batch_size: int = 256        # PPO only
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    discount: float = 0.99
    horizon: int = 5
    ppo_epochs: int = 10

    def validate(self, num_workers=1, for_ppo=False):
        if self.learning_rate < 0:  # 0 is allowed and is a parameter no-op
            raise ValueError("learning_rate must be non-negative")
        if not 0.0 < self.gae_lambda <= 1.0:
            raise ValueError("gae_lambda must be in (0, 1]")
        if not 0.0 < self.discount <= 1.0:
            raise ValueError("discount must be in (0, 1]")
        if self.value_coef < 0 or self.entropy_coef < 0:
            raise ValueError("loss coefficients must be non-negative")
        if self.horizon < 1 or self.ppo_epochs < 1:
            raise ValueError("horizon and ppo_epochs must be positive")
        if for_ppo:
            if not 0.0 < self.clip < 1.0:
                raise ValueError("clip must be in (0, 1)")
            if not 1 <= self.batch_size <= self.horizon * num_workers:
                raise ValueError("batch_size must be in [1, horizon * workers]")
        return self

    def with_values(self, **overrides):
        return replace(self, **overrides)


def a2c_defaults():
    return PGHyperparams(learning_rate=7e-4, horizon=5)


def ppo_defaults():
    return PGHyperparams(learning_rate=3e-4, horizon=2048, batch_size=256)


class PolicyValueNet:
    """Separate policy and value networks over the same observation space.

    The default body is a two-layer net (one tanh hidden layer of 32 units,
    linear head) for each of the policy and value functions.
    """

    def __init__(self, obs_dim, discrete, n_actions=0, action_dim=0,
                 hidden=(32,), seed=0):
        self.obs_dim = int(obs_dim)
        self.discrete = bool(discrete)
        out_dim = int(n_actions) if discrete else int(action_dim)
        if out_dim < 1:
            raise ValueError("need a positive action count / dimension")
        self.out_dim = out_dim
        acts = ["tanh"] * len(hidden) + ["identity"]
        self.policy = nn.init_net([obs_dim, *hidden, out_dim], acts, seed=seed)
        self.value = nn.init_net([obs_dim, *hidden, 1], acts, seed=seed + 1)
        self.log_std = None if discrete else np.zeros(out_dim)

    @classmethod
    def for_env(cls, env, hidden=(32,), seed=0):
        return cls(env.observation_dim, env.discrete, n_actions=env.n_actions,
                   action_dim=env.action_dim, hidden=hidden, seed=seed)

    def weight_matrices(self):
        """Layer weight matrices (policy then value) used as the training-state
        signature; biases and the log-std vector are not part of it."""
        return list(self.policy.weights) + list(self.value.weights)

    def zero_weight_grads(self):
        return [np.zeros_like(w) for w in self.weight_matrices()]

    def value_of(self, obs):
        out, _ = nn.forward(self.value, np.asarray(obs, dtype=np.float64))
        return float(out[0])

    def _std(self):
        return np.exp(np.clip(self.log_std, LOG_STD_MIN, LOG_STD_MAX))

    def act(self, obs, rng):
        """Sample an action for one observation; returns (action, logp, value)."""
        obs = np.asarray(obs, dtype=np.float64)
        out, _ = nn.forward(self.policy, obs)
        value = self.value_of(obs)
        if self.discrete:
            logits = out - np.max(out)
            probs = np.exp(logits)
            probs /= probs.sum()
            u = rng.random()
            action = int(min(np.searchsorted(np.cumsum(probs), u, side="right"),
                             self.out_dim - 1))
            logp = float(np.log(probs[action]))
            return action, logp, value
        std = self._std()
        action = out + std * rng.standard_normal(self.out_dim)
        logp = float(-0.5 * np.sum(((action - out) / std) ** 2)
                     - np.sum(np.log(std)) - 0.5 * self.out_dim * LOG_2PI)
        return action, logp, value

    def greedy_action(self, obs):
        out, _ = nn.forward(self.policy, np.asarray(obs, dtype=np.float64))
        return int(np.argmax(out)) if self.discrete else out

    def snapshot_arrays(self):
        data = nn.net_to_arrays(self.policy, prefix="policy_")
        data.update(nn.net_to_arrays(self.value, prefix="value_"))
        if self.log_std is not None:
            data["log_std"] = self.log_std
        return data


@dataclass
class OptimizerBundle:
    policy: nn.OptimizerState
    value: nn.OptimizerState
    log_std: nn.OptimizerState | None = None

    @classmethod
    def for_nets(cls, nets, algorithm, **kw):
        return cls(
            policy=nn.OptimizerState(algorithm, nets.policy, **kw),
            value=nn.OptimizerState(algorithm, nets.value, **kw),
            log_std=(None if nets.log_std is None
                     else nn.OptimizerState(algorithm, [nets.log_std.shape], **kw)),
        )


def make_optimizers(nets, algorithm):
    """Optimizer bundle with the conventional constants per algorithm."""
    if algorithm == "rmsprop":
        return OptimizerBundle.for_nets(nets, "rmsprop", decay=0.99, epsilon=1e-5)
    if algorithm == "adam":
        return OptimizerBundle.for_nets(nets, "adam", epsilon=1e-8)
    return OptimizerBundle.for_nets(nets, algorithm)


@dataclass
class Rollout:
    """One horizon of environment interaction under the current policy."""

    observations: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    log_probs: np.ndarray
    dones: np.ndarray
    truncateds: np.ndarray
    bootstrap_value: float
    truncation_values: np.ndarray
    episode_records: list = field(default_factory=list)  # (step index, return)

    def __len__(self):
        return len(self.rewards)

    def empirical_return(self, gamma):
        """Discounted sum of the collected rewards."""
        discounts = gamma ** np.arange(len(self.rewards))
        return float(np.sum(discounts * self.rewards))


def collect_rollout(env, nets, horizon, rng):
    """Sample ``horizon`` transitions, auto-resetting finished episodes.

    The environment keeps its state between calls, so consecutive rollouts
    continue the same episode stream. The value of the state reached after
    the final step is recorded for bootstrapping; truncated episodes store
    the pre-reset state's value so GAE can treat them as non-terminal.
    """
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    obs = env.reset() if env.needs_reset else env.observation()
    observations = np.empty((horizon, env.observation_dim))
    if env.discrete:
        actions = np.empty(horizon, dtype=np.int64)
    else:
        actions = np.empty((horizon, env.action_dim))
    rewards = np.empty(horizon)
    values = np.empty(horizon)
    log_probs = np.empty(horizon)
    dones = np.zeros(horizon, dtype=bool)
    truncateds = np.zeros(horizon, dtype=bool)
    truncation_values = np.zeros(horizon)
    episode_records = []
    for t in range(horizon):
        action, logp, value = nets.act(obs, rng)
        res = env.step(action)
        observations[t] = obs
        actions[t] = action
        rewards[t] = res.reward
        values[t] = value
        log_probs[t] = logp
        dones[t] = res.done
        truncateds[t] = res.truncated
        if res.done or res.truncated:
            if res.truncated:
                truncation_values[t] = nets.value_of(res.observation)
            episode_records.append((t, env.episode_return))
            obs = env.reset()
        else:
            obs = res.observation
    last_reset = dones[-1] or truncateds[-1]
    bootstrap = 0.0 if last_reset else nets.value_of(obs)
    return Rollout(observations, actions, rewards, values, log_probs, dones,
                   truncateds, bootstrap, truncation_values, episode_records)


def compute_gae(rollout, gamma, lam):
    """Generalized advantage estimates and value targets.

    delta_t = r_t + gamma * V(s_{t+1}) * (1 - done_t) - V(s_t), where the
    next value at a truncated step is the stored pre-reset value (bootstraps
    as non-terminal) and the lambda-recursion stops at every episode
    boundary. Targets are advantages plus values.
    """
    T = len(rollout)
    adv = np.empty(T)
    running = 0.0
    for t in range(T - 1, -1, -1):
        reset = rollout.dones[t] or rollout.truncateds[t]
        if rollout.dones[t]:
            next_value = 0.0
        elif rollout.truncateds[t]:
            next_value = rollout.truncation_values[t]
        elif t == T - 1:
            next_value = rollout.bootstrap_value
        else:
            next_value = rollout.values[t + 1]
        delta = rollout.rewards[t] + gamma * next_value - rollout.values[t]
        running = delta + (0.0 if reset else gamma * lam * running)
        adv[t] = running
    return adv, adv + rollout.values


@dataclass
class UpdateResult:
    policy_loss: float
    value_loss: float
    entropy: float
    total_loss: float
    grad_norm: float
    skipped: bool = False
    num_steps: int = 1
    weight_grads: list | None = None

    def as_dict(self):
        return {
            "policy_loss": self.policy_loss,
            "value_loss": self.value_loss,
            "entropy": self.entropy,
            "total_loss": self.total_loss,
            "grad_norm": self.grad_norm,
            "skipped": self.skipped,
        }


def _categorical_stats(logits, actions):
    """Per-sample log-prob of the taken action, all log-probs, probs, entropy."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp_all = shifted - logz
    probs = np.exp(logp_all)
    idx = np.arange(len(actions))
    logp = logp_all[idx, actions]
    entropy = -np.sum(probs * logp_all, axis=1)
    return logp, logp_all, probs, entropy


def _gaussian_stats(means, log_std, actions):
    std = np.exp(np.clip(log_std, LOG_STD_MIN, LOG_STD_MAX))
    z = (actions - means) / std
    logp = -0.5 * np.sum(z ** 2, axis=1) - np.sum(np.log(std)) \
        - 0.5 * means.shape[1] * LOG_2PI
    entropy = float(np.sum(np.log(std) + 0.5 * (1.0 + LOG_2PI)))
    return logp, z, std, np.full(len(means), entropy)


def _policy_backward(nets, pcache, pg_coef, ent_scale, actions, dist):
    """Gradients of pg_coef . logp - ent_scale-weighted entropy w.r.t. params.

    ``pg_coef`` is dL/dlogp per sample; ``ent_scale`` multiplies dL/dH per
    sample (already including the 1/n of a batch mean). Returns
    (policy Gradients, log_std gradient or None).
    """
    if nets.discrete:
        _, logp_all, probs, entropy = dist
        onehot = np.zeros_like(probs)
        onehot[np.arange(len(actions)), actions] = 1.0
        gz = pg_coef[:, None] * (onehot - probs)
        gz += ent_scale[:, None] * (-probs * (logp_all + entropy[:, None]))
        pol_grads, _ = nn.backward(nets.policy, pcache, gz)
        return pol_grads, None
    _, z, std, _ = dist
    gmean = pg_coef[:, None] * (z / std)
    pol_grads, _ = nn.backward(nets.policy, pcache, gmean)
    glogstd = np.sum(pg_coef[:, None] * (z ** 2 - 1.0), axis=0)
    glogstd += np.sum(ent_scale) * np.ones_like(nets.log_std)
    return pol_grads, glogstd


def _apply_bundle(nets, pol_grads, val_grads, logstd_grad, opts, lr,
                  want_weight_grads):
    """Clip jointly, record pre-clip weight grads, and step every parameter."""
    weight_grads = None
    if want_weight_grads:
        weight_grads = [g.copy() for g in pol_grads.weights] + \
                       [g.copy() for g in val_grads.weights]
    arrays = pol_grads.parameter_arrays() + val_grads.parameter_arrays()
    if logstd_grad is not None:
        arrays = arrays + [logstd_grad]
    norm = nn.clip_grad_norm(arrays, GRAD_CLIP)
    nn.apply_update(nets.policy, pol_grads, opts.policy, lr)
    nn.apply_update(nets.value, val_grads, opts.value, lr)
    if logstd_grad is not None:
        opts.log_std.update([nets.log_std], [logstd_grad], lr)
        np.clip(nets.log_std, LOG_STD_MIN, LOG_STD_MAX, out=nets.log_std)
    return norm, weight_grads


def a2c_update(nets, rollout, hp, opts, want_weight_grads=False):
    """One advantage actor-critic gradient step over a full rollout.

    Loss: -mean(logp * A) + value_coef * mean((V - target)^2)
    - entropy_coef * mean(entropy), gradient norm clipped at 0.5.
    A non-finite loss skips the update and flags the statistics.
    """
    hp.validate()
    adv, targets = compute_gae(rollout, hp.discount, hp.gae_lambda)
    obs = rollout.observations
    n = len(rollout)
    pol_out, pcache = nn.forward(nets.policy, obs)
    val_out, vcache = nn.forward(nets.value, obs)
    values = val_out[:, 0]
    if nets.discrete:
        dist = _categorical_stats(pol_out, rollout.actions)
    else:
        dist = _gaussian_stats(pol_out, nets.log_std, rollout.actions)
    logp, entropy = dist[0], dist[3]
    policy_loss = float(-np.mean(logp * adv))
    value_loss = float(np.mean((values - targets) ** 2))
    entropy_mean = float(np.mean(entropy))
    total = policy_loss + hp.value_coef * value_loss - hp.entropy_coef * entropy_mean
    if not np.isfinite(total):
        return UpdateResult(policy_loss, value_loss, entropy_mean, total,
                            0.0, skipped=True)
    pg_coef = -adv / n
    ent_scale = np.full(n, -hp.entropy_coef / n)
    pol_grads, logstd_grad = _policy_backward(nets, pcache, pg_coef, ent_scale,
                                              rollout.actions, dist)
    vgrad = (hp.value_coef * 2.0 * (values - targets) / n)[:, None]
    val_grads, _ = nn.backward(nets.value, vcache, vgrad)
    norm, wgrads = _apply_bundle(nets, pol_grads, val_grads, logstd_grad, opts,
                                 hp.learning_rate, want_weight_grads)
    return UpdateResult(policy_loss, value_loss, entropy_mean, total, norm,
                        weight_grads=wgrads)


def normalize_advantages(adv):
    return (adv - adv.mean()) / (adv.std() + 1e-8)


def ppo_minibatch_step(nets, rollout, adv_norm, targets, idx, hp, opts, *,
                       want_weight_grads=False):
    """One clipped-surrogate gradient step on the rows ``idx`` of a rollout."""
    obs = rollout.observations[idx]
    actions = rollout.actions[idx]
    adv = adv_norm[idx]
    tgt = targets[idx]
    old_logp = rollout.log_probs[idx]
    n = len(idx)
    pol_out, pcache = nn.forward(nets.policy, obs)
    val_out, vcache = nn.forward(nets.value, obs)
    values = val_out[:, 0]
    if nets.discrete:
        dist = _categorical_stats(pol_out, actions)
    else:
        dist = _gaussian_stats(pol_out, nets.log_std, actions)
    logp, entropy = dist[0], dist[3]
    ratio = np.exp(logp - old_logp)
    clipped = np.clip(ratio, 1.0 - hp.clip, 1.0 + hp.clip)
    surr1 = ratio * adv
    surr2 = clipped * adv
    policy_loss = float(-np.mean(np.minimum(surr1, surr2)))
    value_loss = float(np.mean((values - tgt) ** 2))
    entropy_mean = float(np.mean(entropy))
    total = policy_loss + hp.value_coef * value_loss - hp.entropy_coef * entropy_mean
    if not np.isfinite(total):
        return UpdateResult(policy_loss, value_loss, entropy_mean, total,
                            0.0, skipped=True)
    active = surr1 <= surr2  # gradient flows only through the selected branch
    pg_coef = -adv * ratio * active / n
    ent_scale = np.full(n, -hp.entropy_coef / n)
    pol_grads, logstd_grad = _policy_backward(nets, pcache, pg_coef, ent_scale,
                                              actions, dist)
    vgrad = (hp.value_coef * 2.0 * (values - tgt) / n)[:, None]
    val_grads, _ = nn.backward(nets.value, vcache, vgrad)
    norm, wgrads = _apply_bundle(nets, pol_grads, val_grads, logstd_grad, opts,
                                 hp.learning_rate, want_weight_grads)
    return UpdateResult(policy_loss, value_loss, entropy_mean, total, norm,
                        weight_grads=wgrads)


def ppo_update(nets, rollout, hp, opts, rng=None):
    """Full PPO cycle: ppo_epochs shuffled passes in minibatches of batch_size.

    The number of gradient steps, ppo_epochs * ceil(samples / batch_size), is
    returned as ``num_steps``; it is the update-phase length of the outer
    scheduling MDP.
    """
    hp.validate(for_ppo=True)
    if rng is None:
        rng = np.random.default_rng(0)
    samples = len(rollout)
    adv, targets = compute_gae(rollout, hp.discount, hp.gae_lambda)
    adv_norm = normalize_advantages(adv)
    expected = hp.ppo_epochs * math.ceil(samples / hp.batch_size)
    agg = []
    for _ in range(hp.ppo_epochs):
        perm = rng.permutation(samples)
        for start in range(0, samples, hp.batch_size):
            idx = perm[start:start + hp.batch_size]
            agg.append(ppo_minibatch_step(nets, rollout, adv_norm, targets,
                                          idx, hp, opts))
    assert len(agg) == expected
    return UpdateResult(
        policy_loss=float(np.mean([r.policy_loss for r in agg])),
        value_loss=float(np.mean([r.value_loss for r in agg])),
        entropy=float(np.mean([r.entropy for r in agg])),
        total_loss=float(np.mean([r.total_loss for r in agg])),
        grad_norm=float(np.mean([r.grad_norm for r in agg])),
        skipped=all(r.skipped for r in agg),
        num_steps=expected,
    )


class A2CLearner:
    """Stepwise A2C driver: one rollout feeds one gradient step.

    The rollout collected by :meth:`environment_phase` is handed to the next
    :meth:`policy_update`, so measuring the phase return costs no extra
    environment steps.
    """

    def __init__(self, env, nets, defaults, opts, rng, updates_per_episode=10):
        self.env = env
        self.nets = nets
        self.defaults = defaults
        self.opts = opts
        self.rng = rng
        self.updates_per_episode = int(updates_per_episode)
        self.env_steps = 0
        self.episode_log = []  # (env step at completion, undiscounted return)
        self._pending = None

    def _collect(self):
        base = self.env_steps
        rollout = collect_rollout(self.env, self.nets, self.defaults.horizon,
                                  self.rng)
        self.env_steps += len(rollout)
        for t, ret in rollout.episode_records:
            self.episode_log.append((base + t + 1, ret))
        return rollout

    def begin_episode(self):
        return self.updates_per_episode

    def policy_update(self, hp, want_weight_grads=False):
        rollout = self._pending if self._pending is not None else self._collect()
        self._pending = None
        return a2c_update(self.nets, rollout, hp, self.opts,
                          want_weight_grads=want_weight_grads)

    def environment_phase(self):
        """Run the evaluation rollout; its return is the phase outcome G."""
        self._pending = self._collect()
        return self._pending.empirical_return(self.defaults.discount)

    def updates_for_budget(self, total_env_steps):
        return max(1, total_env_steps // self.defaults.horizon)


class PPOLearner:
    """Stepwise PPO driver: an update phase is the minibatch pass over one
    collected horizon, so each minibatch gradient step is one scheduling step.

    The episode length is fixed from the default batch size; a scheduled
    batch size changes how many rows the current step consumes, drawn from a
    reshuffled circular order. Scheduling a new GAE lambda recomputes
    advantages for the cached horizon.
    """

    def __init__(self, env, nets, defaults, opts, rng):
        defaults.validate(for_ppo=True)
        self.env = env
        self.nets = nets
        self.defaults = defaults
        self.opts = opts
        self.rng = rng
        self.env_steps = 0
        self.episode_log = []
        self._pending = None
        self._data = None
        self._adv_cache = {}
        self._order = None
        self._cursor = 0

    def _collect(self):
        base = self.env_steps
        rollout = collect_rollout(self.env, self.nets, self.defaults.horizon,
                                  self.rng)
        self.env_steps += len(rollout)
        for t, ret in rollout.episode_records:
            self.episode_log.append((base + t + 1, ret))
        return rollout

    def begin_episode(self):
        if self._pending is None:
            self._pending = self._collect()
        self._data = self._pending
        self._pending = None
        self._adv_cache = {}
        self._order = self.rng.permutation(len(self._data))
        self._cursor = 0
        return self.defaults.ppo_epochs * math.ceil(
            len(self._data) / self.defaults.batch_size)

    def _advantages(self, hp):
        cache_key = (hp.discount, hp.gae_lambda)
        if cache_key not in self._adv_cache:
            adv, targets = compute_gae(self._data, hp.discount, hp.gae_lambda)
            self._adv_cache[cache_key] = (normalize_advantages(adv), targets)
        return self._adv_cache[cache_key]

    def _take_indices(self, count):
        idx = []
        while len(idx) < count:
            if self._cursor >= len(self._order):
                self._order = self.rng.permutation(len(self._data))
                self._cursor = 0
            take = min(count - len(idx), len(self._order) - self._cursor)
            idx.extend(self._order[self._cursor:self._cursor + take])
            self._cursor += take
        return np.array(idx)

    def policy_update(self, hp, want_weight_grads=False):
        if self._data is None:
            raise RuntimeError("begin_episode() must run before policy_update()")
        hp.validate(for_ppo=True)
        adv_norm, targets = self._advantages(hp)
        idx = self._take_indices(min(hp.batch_size, len(self._data)))
        return ppo_minibatch_step(self.nets, self._data, adv_norm, targets,
                                  idx, hp, self.opts,
                                  want_weight_grads=want_weight_grads)

    def environment_phase(self):
        self._pending = self._collect()
        return self._pending.empirical_return(self.defaults.discount)

    def updates_for_budget(self, total_env_steps):
        per_episode = self.defaults.ppo_epochs * math.ceil(
            self.defaults.horizon / self.defaults.batch_size)
        episodes = max(1, total_env_steps // self.defaults.horizon)
        return episodes * per_episode
