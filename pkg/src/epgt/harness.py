"""Experiment runner: seeded training matrices with streaming metrics.

A run is fully determined by (config, seed): every random draw comes from a
named stream derived from the seed, and the metrics file holds no clocks, so
identical runs produce byte-identical streams. Wall-clock time lives in the
per-run summary file instead.

Metrics are line-delimited JSON, appended record by record, so a killed run
still leaves a parseable prefix. Record kinds:

* ``update``: one policy-update step (losses, chosen hyper-action, epsilon).
* ``return``: a finished environment episode and its undiscounted return.
* ``phase``: end of a learning episode (scheduler ``epgt`` only): the phase
  return G, memory occupancy, and the latest reconstruction loss.
"""

from __future__ import annotations

import dataclasses
import json
import os
import time
import traceback
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import encoder as encoder_mod
from . import hyperrl, pg
from .envs import make_env
from .memory import EpisodicMemory, epsilon_schedule
from .seeding import derived_seed, stream

OUT_DIR_ENV = "EPGT_OUT_DIR"
PARALLEL_ENV = "EPGT_PARALLEL"

ALGORITHMS = ("a2c", "ppo")
SCHEDULERS = ("fixed", "rnd", "epgt")


@dataclass
class MemorySettings:
    n_mem: int | None = None  # None: half the planned policy-update count
    k_read: int = 3
    k_write: int = 3
    beta: float = 0.5
    kernel_eps: float = 1e-3


@dataclass
class EncoderSettings:
    h: int = 32
    d: int = 4
    n_order: int = 2
    beta_kl: float = 1e-3
    mode: str = "vae"
    lr: float = 1e-3
    batch_size: int = 8
    train_interval: int = 10
    reservoir: int = 256


@dataclass
class EarlyStop:
    return_threshold: float | None = None
    window: int = 100


@dataclass
class ExperimentConfig:
    environment: str = "cartpole"
    algorithm: str = "a2c"
    scheduler: str = "fixed"
    total_env_steps: int = 100_000
    seeds: list = field(default_factory=lambda: [0])
    updates_per_episode: int = 10
    hyperparams: list = field(default_factory=list)
    pg_overrides: dict = field(default_factory=dict)
    hidden: list = field(default_factory=lambda: [32])
    optimizer: str | None = None  # default: rmsprop for a2c, adam for ppo
    memory: MemorySettings = field(default_factory=MemorySettings)
    encoder: EncoderSettings = field(default_factory=EncoderSettings)
    early_stop: EarlyStop = field(default_factory=EarlyStop)
    out_dir: str = "runs"

    def validate(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.scheduler not in SCHEDULERS:
            raise ValueError(f"unknown scheduler {self.scheduler!r}")
        if self.total_env_steps <= 0:
            raise ValueError("total_env_steps must be positive")
        if not self.seeds:
            raise ValueError("need at least one seed")
        if self.updates_per_episode < 1:
            raise ValueError("updates_per_episode must be positive")
        if self.scheduler in ("rnd", "epgt") and not self.hyperparams:
            raise ValueError(f"scheduler {self.scheduler!r} needs hyperparams")
        make_env(self.environment)  # raises on unknown id
        self.defaults()  # raises on bad overrides
        return self

    def defaults(self):
        base = pg.a2c_defaults() if self.algorithm == "a2c" else pg.ppo_defaults()
        hp = base.with_values(**self.pg_overrides)
        return hp.validate(for_ppo=self.algorithm == "ppo")

    def specs(self):
        return [hyperrl.HyperparamSpec(**s) if isinstance(s, dict) else s
                for s in self.hyperparams]

    def optimizer_name(self):
        if self.optimizer:
            return self.optimizer
        return "rmsprop" if self.algorithm == "a2c" else "adam"

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        kwargs = dict(data)
        if "memory" in kwargs:
            kwargs["memory"] = MemorySettings(**kwargs["memory"])
        if "encoder" in kwargs:
            kwargs["encoder"] = EncoderSettings(**kwargs["encoder"])
        if "early_stop" in kwargs:
            kwargs["early_stop"] = EarlyStop(**kwargs["early_stop"])
        return cls(**kwargs).validate()

    @classmethod
    def load(cls, path):
        with open(path) as f:
            return cls.from_dict(json.load(f))


class MetricsWriter:
    """Append-only line-delimited JSON stream.

    Records are flushed in small batches, so a killed run loses at most the
    buffered tail and the file always parses as a valid prefix.
    """

    FLUSH_EVERY = 64

    def __init__(self, path):
        self.path = Path(path)
        self._file = open(self.path, "w")
        self._since_flush = 0

    def write(self, record):
        self._file.write(json.dumps(record, separators=(",", ":")) + "\n")
        self._since_flush += 1
        if self._since_flush >= self.FLUSH_EVERY:
            self._file.flush()
            self._since_flush = 0

    def close(self):
        self._file.close()


def read_metrics(path):
    """Parse a metrics stream; a truncated final line (killed run) is dropped."""
    records = []
    with open(path) as f:
        lines = f.readlines()
    for i, line in enumerate(lines):
        line = line.strip()
        if not line:
            continue
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError:
            if i == len(lines) - 1:
                break
            raise
    return records


def planned_updates(cfg):
    """Total policy-update steps implied by the environment-step budget."""
    hp = cfg.defaults()
    episodes = max(1, cfg.total_env_steps // hp.horizon)
    if cfg.algorithm == "a2c":
        return episodes
    per_episode = hp.ppo_epochs * -(-hp.horizon // hp.batch_size)
    return episodes * per_episode


def _build_learner(cfg, seed):
    env = make_env(cfg.environment)
    env.reset(seed=derived_seed(seed, "env"))
    nets = pg.PolicyValueNet.for_env(env, hidden=tuple(cfg.hidden),
                                     seed=derived_seed(seed, "nets"))
    opts = pg.make_optimizers(nets, cfg.optimizer_name())
    defaults = cfg.defaults()
    rng = stream(seed, "policy")
    if cfg.algorithm == "a2c":
        return pg.A2CLearner(env, nets, defaults, opts, rng,
                             updates_per_episode=cfg.updates_per_episode)
    return pg.PPOLearner(env, nets, defaults, opts, rng)


class _RunState:
    """Shared bookkeeping for one training run."""

    def __init__(self, cfg, seed, run_dir):
        self.cfg = cfg
        self.seed = seed
        self.run_id = f"{cfg.environment}-{cfg.algorithm}-{cfg.scheduler}-seed{seed}"
        self.run_dir = Path(run_dir)
        self.run_dir.mkdir(parents=True, exist_ok=True)
        self.metrics = MetricsWriter(self.run_dir / "metrics.jsonl")
        self.learner = _build_learner(cfg, seed)
        self.defaults = cfg.defaults()
        self.update_step = 0
        self.solved_at = None
        self._returns_flushed = 0

    def base_record(self, kind):
        return {"kind": kind, "run_id": self.run_id, "seed": self.seed,
                "env_step": self.learner.env_steps,
                "update_step": self.update_step}

    def emit_update(self, result, hyper_action=None, eps=None):
        rec = self.base_record("update")
        rec["losses"] = result.as_dict()
        rec["hyper_action"] = hyper_action
        rec["epsilon"] = eps
        self.metrics.write(rec)
        self.update_step += 1

    def flush_returns(self):
        log = self.learner.episode_log
        stop = self.cfg.early_stop
        while self._returns_flushed < len(log):
            env_step, ret = log[self._returns_flushed]
            self._returns_flushed += 1
            rec = self.base_record("return")
            rec["env_step"] = env_step
            rec["episode_return"] = ret
            self.metrics.write(rec)
        if stop.return_threshold is not None and self.solved_at is None \
                and len(log) >= stop.window:
            recent = [r for _, r in log[-stop.window:]]
            if float(np.mean(recent)) >= stop.return_threshold:
                self.solved_at = log[-1][0]

    def should_stop(self):
        if self.learner.env_steps >= self.cfg.total_env_steps:
            return True
        return self.solved_at is not None

    def save_networks(self):
        np.savez(self.run_dir / "networks.npz",
                 **self.learner.nets.snapshot_arrays())

    def finish(self, extra=None):
        self.metrics.close()
        summary = {
            "run_id": self.run_id,
            "seed": self.seed,
            "env_steps": self.learner.env_steps,
            "update_steps": self.update_step,
            "episodes_completed": len(self.learner.episode_log),
            "solved_at_env_step": self.solved_at,
            "crashed": False,
        }
        if extra:
            summary.update(extra)
        with open(self.run_dir / "summary.json", "w") as f:
            json.dump(summary, f, indent=2)
        return summary


def _run_fixed_or_rnd(cfg, state):
    """Baseline schedulers: defaults throughout, or a uniform hyper-action
    sampled at every policy update step."""
    space = None
    rng_sched = None
    if cfg.scheduler == "rnd":
        space = hyperrl.build_action_space(cfg.specs())
        rng_sched = stream(state.seed, "rnd-scheduler")
    while not state.should_stop():
        num_steps = state.learner.begin_episode()
        for _ in range(num_steps):
            if state.should_stop():
                break
            if space is None:
                hp, action_values = state.defaults, None
            else:
                action = int(rng_sched.integers(space.size))
                hp = state.defaults.with_values(**space.decode(action))
                action_values = list(space.tuple_at(action))
            result = state.learner.policy_update(hp)
            state.emit_update(result, hyper_action=action_values)
            state.flush_returns()


def _run_epgt(cfg, state):
    """Full Algorithm-1 loop: episodic memory over embedded training states."""
    space = hyperrl.build_action_space(cfg.specs())
    shapes = [w.shape for w in state.learner.nets.weight_matrices()]
    enc = cfg.encoder
    embedder = encoder_mod.StateEmbedder(
        shapes, enc.n_order, d=enc.d, h=enc.h,
        seed=derived_seed(state.seed, "encoder-init"), mode=enc.mode,
        beta_kl=enc.beta_kl, lr=enc.lr, batch_size=enc.batch_size,
        train_interval=enc.train_interval, reservoir_size=enc.reservoir)
    total_updates = planned_updates(cfg)
    capacity = cfg.memory.n_mem or max(1, total_updates // 2)
    memory = EpisodicMemory(embedder.key_dim, space.size, capacity,
                            k_read=cfg.memory.k_read, k_write=cfg.memory.k_write,
                            beta=cfg.memory.beta,
                            kernel_eps=cfg.memory.kernel_eps)
    history = hyperrl.GradHistory(shapes, enc.n_order)
    rng_eps = stream(state.seed, "eps-greedy")
    rng_enc = stream(state.seed, "encoder")

    def eps_fn(step):
        return epsilon_schedule(min(step, total_updates), total_updates)

    def on_step(step, action, hp, result, eps):
        state.emit_update(result, hyper_action=list(space.tuple_at(action)),
                          eps=eps)
        state.flush_returns()

    while not state.should_stop():
        num_steps = state.learner.begin_episode()
        g, _ = hyperrl.run_learning_episode(
            state.learner, memory, embedder, history, space, num_steps,
            eps_fn, rng_eps, state.defaults, rng_encoder=rng_enc,
            global_step=state.update_step, on_step=on_step)
        rec = state.base_record("phase")
        rec["G"] = g
        rec["memory_size"] = len(memory)
        rec["l_rec"] = embedder.last_rec_loss
        state.metrics.write(rec)
        state.flush_returns()
    memory.save(state.run_dir / "memory.bin")
    embedder.save(state.run_dir / "embedder.npz")


def run_single(cfg, seed, run_dir):
    """One seeded training run; returns the summary dict."""
    cfg.validate()
    t0 = time.time()
    state = _RunState(cfg, seed, run_dir)
    try:
        if cfg.scheduler == "epgt":
            _run_epgt(cfg, state)
        else:
            _run_fixed_or_rnd(cfg, state)
        state.save_networks()
    except Exception:
        state.metrics.close()
        raise
    return state.finish(extra={"wall_clock_seconds": time.time() - t0})


def _run_single_entry(args):
    cfg_dict, seed, run_dir = args
    cfg = _config_from_plain(cfg_dict)
    return run_single(cfg, seed, run_dir)


def _config_to_plain(cfg):
    return dataclasses.asdict(cfg)


def _config_from_plain(data):
    data = dict(data)
    data["memory"] = MemorySettings(**data["memory"])
    data["encoder"] = EncoderSettings(**data["encoder"])
    data["early_stop"] = EarlyStop(**data["early_stop"])
    return ExperimentConfig(**data)


def run_experiment(cfg, seeds=None, out_dir=None):
    """Run every seed of the experiment; crashes are isolated per seed.

    Runs go to ``<out_dir>/<run_id>/``. ``EPGT_OUT_DIR`` overrides the output
    directory and ``EPGT_PARALLEL`` sets the process count (default 1).
    Returns the list of per-seed summaries.
    """
    cfg.validate()
    seeds = list(cfg.seeds if seeds is None else seeds)
    out = Path(os.environ.get(OUT_DIR_ENV) or out_dir or cfg.out_dir)
    parallel = int(os.environ.get(PARALLEL_ENV, "1"))
    jobs = []
    for seed in seeds:
        run_id = f"{cfg.environment}-{cfg.algorithm}-{cfg.scheduler}-seed{seed}"
        jobs.append((seed, out / run_id))
    summaries = []
    if parallel > 1 and len(jobs) > 1:
        from concurrent.futures import ProcessPoolExecutor

        plain = _config_to_plain(cfg)
        with ProcessPoolExecutor(max_workers=parallel) as ex:
            futures = [ex.submit(_run_single_entry, (plain, seed, str(path)))
                       for seed, path in jobs]
            for (seed, path), fut in zip(jobs, futures):
                summaries.append(_collect(fut.result, seed, path))
    else:
        for seed, path in jobs:
            summaries.append(_collect(lambda: run_single(cfg, seed, path),
                                      seed, path))
    return summaries


def _collect(thunk, seed, path):
    try:
        return thunk()
    except Exception:
        summary = {"seed": seed, "crashed": True,
                   "traceback": traceback.format_exc()}
        Path(path).mkdir(parents=True, exist_ok=True)
        with open(Path(path) / "summary.json", "w") as f:
            json.dump(summary, f, indent=2)
        return summary


def inspect_memory(path, csv_path=None):
    """Summarize a memory snapshot; optionally export (key, action, value) rows.

    Returns the summary dict and prints a human-readable report.
    """
    mem = EpisodicMemory.load(path)
    entries = mem.entries()
    values = np.array([v for _, _, v in entries]) if entries else np.empty(0)
    summary = {
        "occupancy": len(mem),
        "capacity": mem.capacity,
        "key_dim": mem.key_dim,
        "n_actions": mem.n_actions,
        "per_action_counts": mem.action_counts(),
        "value_min": float(values.min()) if values.size else None,
        "value_mean": float(values.mean()) if values.size else None,
        "value_max": float(values.max()) if values.size else None,
    }
    print(f"memory snapshot {path}")
    print(f"  occupancy {summary['occupancy']} / capacity {summary['capacity']}")
    print(f"  key dim {summary['key_dim']}, actions {summary['n_actions']}")
    print(f"  per-action counts: {summary['per_action_counts']}")
    if values.size:
        print(f"  values: min {summary['value_min']:.4f} "
              f"mean {summary['value_mean']:.4f} max {summary['value_max']:.4f}")
    if csv_path is not None:
        with open(csv_path, "w") as f:
            header = ",".join([f"k{i}" for i in range(mem.key_dim)]
                              + ["action", "value"])
            f.write(header + "\n")
            for key, action, value in entries:
                row = ",".join([repr(float(x)) for x in key]
                               + [str(action), repr(float(value))])
                f.write(row + "\n")
        print(f"  exported {len(entries)} rows to {csv_path}")
    return summary
