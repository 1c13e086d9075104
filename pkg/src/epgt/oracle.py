"""Independent brute-force validators.

These live in the shipped library (not just the test tree) so the CLI can
expose a ``verify`` report. Each one re-derives a result the fast paths are
supposed to produce: exact KNN by linear scan, a stochastic write-convergence
simulator, and a central finite-difference gradient checker.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def brute_knn(entries, query, action, k):
    """Kernel-weighted KNN estimate by exhaustive scan.

    ``entries`` is an iterable of ``(key, action, value)``. Same-action
    entries are sorted by Euclidean distance to ``query`` (stable, so ties
    keep insertion order), the nearest ``k`` are kept, and the estimate is
    the similarity-weighted average of their values with the
    ``1/(distance + 0.001)`` kernel. Returns 0.0 on an empty match set.
    """
    query = np.asarray(query, dtype=np.float64)
    matches = [(np.asarray(key, dtype=np.float64), float(value))
               for key, a, value in entries if a == action]
    if not matches:
        return 0.0
    dists = np.array([np.linalg.norm(key - query) for key, _ in matches])
    order = np.argsort(dists, kind="stable")[: max(1, int(k))]
    sims = 1.0 / (dists[order] + 1e-3)
    values = np.array([matches[i][1] for i in order])
    return float(np.sum(sims * values) / np.sum(sims))


@dataclass
class WriteSimConfig:
    """Synthetic replay of the multi-slot write rule.

    ``n_keys`` fixed slots sit at pairwise distance ``key_distance`` (an
    equidistant simplex) and start at value 0. Each write draws a return from
    N(``mean``, ``std``), picks a writer slot uniformly, and adjusts every
    slot toward the return with similarity-normalized speeds. ``beta_mode``
    is ``"constant"`` or ``"harmonic"`` (rate 1/(n+1) with n the slot's own
    update count). ``rule`` is ``"average"`` or, as a test-only flag,
    ``"max"`` which overwrites the writer's slot with the running maximum.
    """

    mean: float = 1.0
    std: float = 0.5
    beta: float = 0.5
    beta_mode: str = "constant"
    writes: int = 10_000
    n_keys: int = 1
    key_distance: float = 1.0
    trials: int = 1
    kernel_eps: float = 1e-3
    rule: str = "average"

    def validate(self):
        if self.std < 0:
            raise ValueError("std must be non-negative")
        if self.writes < 1:
            raise ValueError("write count must be at least 1")
        if self.n_keys < 1:
            raise ValueError("need at least one key")
        if self.beta_mode not in ("constant", "harmonic"):
            raise ValueError(f"unknown beta mode {self.beta_mode!r}")
        if self.rule not in ("average", "max"):
            raise ValueError(f"unknown write rule {self.rule!r}")


def simulate_writes(cfg, seed=0):
    """Replay the write rule against synthetic returns.

    Returns a dict with ``values`` (trials x writes x n_keys trajectory of
    stored values after each write), ``terminal`` (trials x n_keys) and
    ``running_mean`` (trials x writes mean over slots).
    """
    cfg.validate()
    rng = np.random.default_rng(seed)
    n = cfg.n_keys
    # similarity matrix of the equidistant topology: self-distance 0
    dist = np.full((n, n), float(cfg.key_distance))
    np.fill_diagonal(dist, 0.0)
    sim = 1.0 / (dist + cfg.kernel_eps)
    traj = np.zeros((cfg.trials, cfg.writes, n))
    for trial in range(cfg.trials):
        values = np.zeros(n)
        counts = np.zeros(n, dtype=np.int64)
        for w in range(cfg.writes):
            g = cfg.mean if cfg.std == 0 else rng.normal(cfg.mean, cfg.std)
            j = 0 if n == 1 else int(rng.integers(n))
            if cfg.rule == "max":
                values[j] = max(values[j], g)
                counts[j] += 1
            else:
                weights = sim[j] / np.sum(sim[j])
                for i in range(n):
                    counts[i] += 1
                    beta = cfg.beta if cfg.beta_mode == "constant" else 1.0 / (counts[i] + 1)
                    values[i] += beta * weights[i] * (g - values[i])
            traj[trial, w] = values
    return {
        "values": traj,
        "terminal": traj[:, -1, :].copy(),
        "running_mean": traj.mean(axis=2),
    }


def finite_diff_grad(loss_fn, params, step=1e-5):
    """Central finite differences of ``loss_fn()`` w.r.t. each array in ``params``.

    ``loss_fn`` takes no arguments and reads the parameter arrays in place;
    each scalar entry is perturbed by ±``step`` and restored bit-exactly.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    grads = []
    for p in params:
        g = np.zeros_like(p)
        flat_p = p.reshape(-1)
        flat_g = g.reshape(-1)
        for i in range(flat_p.size):
            orig = flat_p[i]
            flat_p[i] = orig + step
            up = loss_fn()
            flat_p[i] = orig - step
            down = loss_fn()
            flat_p[i] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise ValueError("loss is non-finite during finite differencing")
            flat_g[i] = (up - down) / (2.0 * step)
        grads.append(g)
    return grads


def max_relative_error(analytic, numeric, floor=1e-8):
    """Worst-case |a - n| / max(|a|, |n|, floor) over paired gradient arrays."""
    worst = 0.0
    for a, b in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
        worst = max(worst, float(np.max(np.abs(a - b) / denom)))
    return worst


def run_verification(quick=True):
    """Re-check the core properties against their independent oracles.

    Returns a list of (name, passed, detail) triples; the CLI prints them as a
    pass/fail report. ``quick=False`` uses the full acceptance-sized fuzz.
    """
    # local imports keep this module importable by the low-level tests
    from . import encoder as encoder_mod
    from . import hyperrl, nn
    from .memory import EpisodicMemory, epsilon_schedule

    rng = np.random.default_rng(2024)
    results = []

    def check(name, passed, detail=""):
        results.append((name, bool(passed), detail))

    # gradient integrity: analytic backprop vs central differences
    worst = 0.0
    for trial in range(5):
        sizes = [int(rng.integers(2, 8)) for _ in range(3)]
        acts = [str(rng.choice(["tanh", "relu", "sigmoid"])), "identity"]
        net = nn.init_net(sizes, acts, seed=trial)
        x = rng.normal(size=sizes[0])
        target = rng.normal(size=sizes[-1])

        def loss():
            y, _ = nn.forward(net, x)
            return float(np.sum((y - target) ** 2))

        y, cache = nn.forward(net, x)
        grads, _ = nn.backward(net, cache, 2.0 * (y - target))
        numeric = finite_diff_grad(loss, net.parameter_arrays())
        worst = max(worst, max_relative_error(grads.parameter_arrays(), numeric))
    check("gradient-check-backprop", worst < 1e-4, f"max rel err {worst:.2e}")

    # encoder training gradients with the target held constant
    shapes = [(3, 4), (2, 3)]
    proj = encoder_mod.Projections(shapes, n_order=1, d=2, seed=1)
    encdec = encoder_mod.EncoderDecoder(proj.state_dim, h=4, seed=2)
    snaps = [[[0.5 * rng.normal(size=s) for s in shapes] for _ in range(2)]
             for _ in range(2)]
    noise = rng.standard_normal((2, 4))
    targets = np.stack([proj.project(s) for s in snaps])

    def enc_loss():
        value, _ = encoder_mod.elbo_loss(encdec, proj, snaps, noise,
                                         targets=targets)
        return value

    _, _, enc_g, dec_g, proj_g = encoder_mod.elbo_grads(encdec, proj, snaps,
                                                        noise)
    params = encdec.encoder.parameter_arrays() + \
        encdec.decoder.parameter_arrays() + proj.matrices_flat()
    numeric = finite_diff_grad(enc_loss, params, step=1e-6)
    analytic = enc_g.parameter_arrays() + dec_g.parameter_arrays() + proj_g
    err = max_relative_error(analytic, numeric, floor=1e-6)
    check("gradient-check-embedding", err < 1e-4, f"max rel err {err:.2e}")

    # KNN read equals the linear-scan oracle
    stores = 100 if quick else 1000
    worst = 0.0
    for _ in range(stores):
        size = int(rng.integers(1, 120 if quick else 500))
        mem = EpisodicMemory(4, 3, capacity=1000)
        entries = []
        for _ in range(size):
            key, action, value = rng.normal(size=4), int(rng.integers(3)), \
                float(rng.normal())
            mem.insert(key, action, value)
            entries.append((key, action, value))
        for k in (1, 3, 5):
            q = rng.normal(size=4)
            a = int(rng.integers(3))
            got, found = mem.read(q, a, k=k)
            want = brute_knn(entries, q, a, k)
            if found:
                worst = max(worst, abs(got - want) / max(abs(want), 1e-12))
    check("knn-read-oracle", worst < 1e-9, f"max rel dev {worst:.2e}")

    # decaying write rate converges to the return mean
    trials = 20 if quick else 100
    out = simulate_writes(WriteSimConfig(mean=1.0, std=0.5,
                                         beta_mode="harmonic",
                                         writes=10_000, trials=trials), seed=5)
    se = 0.5 / np.sqrt(10_000)
    hits = int(np.sum(np.abs(out["terminal"][:, 0] - 1.0) <= 3 * se))
    check("write-convergence", hits >= int(0.95 * trials),
          f"{hits}/{trials} within 3 standard errors")

    # max writing dominates averaging on the same return stream
    ok = True
    for seed in range(trials):
        avg = simulate_writes(WriteSimConfig(writes=500), seed=seed)
        mx = simulate_writes(WriteSimConfig(writes=500, rule="max"), seed=seed)
        ok = ok and mx["terminal"][0, 0] >= avg["terminal"][0, 0]
    check("max-rule-dominates-average", ok)

    # quantizer fidelity
    lam = hyperrl.HyperparamSpec("gae_lambda", "uniform_bins", 0.95,
                                 values=[0.95, 0.975, 0.99])
    clip = hyperrl.HyperparamSpec("clip", "uniform_bins", 0.2,
                                  values=[0.1, 0.2, 0.3])
    ok = lam.derive_bins() == [0.95, 0.975, 0.99]
    ok = ok and clip.derive_bins() == [0.1, 0.2, 0.3]
    for b in (3, 5, 15):
        bins = hyperrl.HyperparamSpec("learning_rate", "lr_multiplicative",
                                      7e-4, bins=b).derive_bins()
        ok = ok and len(bins) == b and 7e-4 in bins
    check("quantizer-fidelity", ok)

    # sparse reward structure
    ok = True
    for _ in range(100 if quick else 1000):
        u = int(rng.integers(1, 30))
        g = float(rng.normal()) or 1.0
        buf = hyperrl.EpisodeBuffer(u)
        for _ in range(u):
            buf.append(np.zeros(2), 0)
        hyperrl.assign_hyper_rewards(buf, g, u)
        nonzero = [i for i, r in enumerate(buf.rewards) if r != 0.0]
        ok = ok and nonzero == [u - 1] and buf.hyper_returns == [g] * u
    check("sparse-hyper-reward", ok)

    # epsilon schedule endpoints and linearity
    total = 12_345
    ok = epsilon_schedule(0, total) == 1.0 and epsilon_schedule(total, total) == 0.0
    steps = rng.integers(0, total, size=100)
    ok = ok and all(epsilon_schedule(int(s), total) == 1.0 - int(s) / total
                    for s in steps)
    check("epsilon-schedule", ok)

    # FIFO eviction under fuzz
    mem = EpisodicMemory(3, 2, capacity=50)
    inserted = []
    ok = True
    for i in range(2000 if quick else 10_000):
        mem.insert(rng.normal(size=3), int(rng.integers(2)), float(i))
        inserted.append(float(i))
        ok = ok and len(mem) <= 50
    ok = ok and [v for _, _, v in mem.entries()] == inserted[-50:]
    check("fifo-eviction", ok)

    return results
