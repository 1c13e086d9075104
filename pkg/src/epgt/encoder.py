"""Learned embedding of the training state.

A training-state snapshot is the list of layer weight matrices of the PG
networks plus their recent gradient history, arranged as ``snapshot[n][m]``
(order n = 0 for parameters, n >= 1 for the n-th most recent gradient; m
indexes layers). Per-tensor linear projections compress each matrix, the
flattened blocks concatenate into the state vector, and a small VAE encoder
maps that vector to the memory key.

Training minimizes reconstruction error plus a lightly weighted KL term with
the gradient stopped at the target: the target state vector is treated as a
constant even though it depends on the projections, so the projections learn
only through the prediction path.
"""

from __future__ import annotations

import numpy as np

from . import nn

DEFAULT_EMBED_DIM = 32
DEFAULT_PROJ_DIM = 4
DEFAULT_BETA_KL = 1e-3
DEFAULT_TRAIN_LR = 1e-3
DEFAULT_BATCH_SIZE = 8
DEFAULT_TRAIN_INTERVAL = 10
DEFAULT_RESERVOIR = 256
LOG_STD_MIN, LOG_STD_MAX = -5.0, 2.0


def training_cadence(update_step, interval=DEFAULT_TRAIN_INTERVAL):
    """True on the update steps where the embedding trains (every 10th)."""
    return update_step % interval == 0


class Projections:
    """Per-tensor linear maps C[n][m] of shape (cols(W_m), d)."""

    def __init__(self, tensor_shapes, n_order, d=DEFAULT_PROJ_DIM, seed=0):
        if d < 1 or n_order < 0:
            raise ValueError("d must be positive and n_order non-negative")
        self.tensor_shapes = [tuple(s) for s in tensor_shapes]
        self.n_order = int(n_order)
        self.d = int(d)
        rng = np.random.default_rng(seed)
        self.matrices = []
        for _ in range(self.n_order + 1):
            row = []
            for rows, cols in self.tensor_shapes:
                limit = np.sqrt(6.0 / (cols + d))
                row.append(rng.uniform(-limit, limit, size=(cols, d)))
            self.matrices.append(row)

    @property
    def state_dim(self):
        per_order = sum(rows * self.d for rows, _ in self.tensor_shapes)
        return (self.n_order + 1) * per_order

    def matrices_flat(self):
        return [c for row in self.matrices for c in row]

    def project(self, snapshot):
        """Concatenate vec(W[n][m] @ C[n][m]) blocks, outer loop over order."""
        blocks = []
        for n, row in enumerate(self.matrices):
            tensors = snapshot[n]
            if len(tensors) != len(row):
                raise ValueError(f"order {n}: snapshot has {len(tensors)} tensors, "
                                 f"expected {len(row)}")
            for m, c in enumerate(row):
                w = tensors[m]
                if w.shape != self.tensor_shapes[m]:
                    raise ValueError(
                        f"tensor ({n},{m}) shape {w.shape} != {self.tensor_shapes[m]}")
                blocks.append((w @ c).ravel())
        return np.concatenate(blocks)

    def grad_from_state_grad(self, snapshots, state_grads):
        """dL/dC for each projection given dL/d(state vector) rows.

        ``snapshots`` and ``state_grads`` are parallel batches; returns one
        gradient array per matrix in :meth:`matrices_flat` order.
        """
        grads = [np.zeros_like(c) for c in self.matrices_flat()]
        for snap, sg in zip(snapshots, state_grads):
            offset = 0
            flat = 0
            for n, row in enumerate(self.matrices):
                for m, c in enumerate(row):
                    rows, _ = self.tensor_shapes[m]
                    block = sg[offset:offset + rows * self.d].reshape(rows, self.d)
                    grads[flat] += snap[n][m].T @ block
                    offset += rows * self.d
                    flat += 1
        return grads

    def snapshot_arrays(self):
        data = {
            "proj_version": np.int64(1),
            "proj_d": np.int64(self.d),
            "proj_n_order": np.int64(self.n_order),
            "proj_shapes": np.array(self.tensor_shapes, dtype=np.int64),
        }
        for n, row in enumerate(self.matrices):
            for m, c in enumerate(row):
                data[f"proj_c{n}_{m}"] = c
        return data


class EncoderDecoder:
    """VAE over state vectors; the deterministic key is the posterior mean.

    Encoder: state_dim -> state_dim/4 -> 2h, tanh hidden; the mean half is
    squashed by tanh so keys stay in [-1, 1], the log-std half is clamped to
    [-5, 2]. Decoder: h -> state_dim/4 -> state_dim, sigmoid hidden with a
    linear output so signed targets are reconstructible.
    """

    def __init__(self, state_dim, h=DEFAULT_EMBED_DIM, seed=0):
        if state_dim < 1 or h < 1:
            raise ValueError("state_dim and h must be positive")
        hidden = max(state_dim // 4, 4)
        self.h = int(h)
        self.state_dim = int(state_dim)
        self.encoder = nn.init_net([state_dim, hidden, 2 * h],
                                   ["tanh", "identity"], seed=seed)
        self.decoder = nn.init_net([h, hidden, state_dim],
                                   ["sigmoid", "identity"], seed=seed + 1)

    def posterior(self, states):
        """Batch posterior (mu, log_std) plus the forward cache and raw output."""
        raw, cache = nn.forward(self.encoder, states)
        mu = np.tanh(raw[..., :self.h])
        log_std = np.clip(raw[..., self.h:], LOG_STD_MIN, LOG_STD_MAX)
        return mu, log_std, cache, raw

    def parameter_arrays(self):
        return self.encoder.parameter_arrays() + self.decoder.parameter_arrays()


def embed(encdec, state):
    """Deterministic memory key: the posterior mean of one state vector."""
    state = np.asarray(state, dtype=np.float64)
    if state.shape != (encdec.state_dim,):
        raise ValueError(f"state shape {state.shape} != ({encdec.state_dim},)")
    mu, _, _, _ = encdec.posterior(state)
    return mu


def elbo_loss(encdec, proj, snapshots, noise, beta_kl=DEFAULT_BETA_KL,
              targets=None):
    """Forward-only loss: mean reconstruction error + beta_kl * mean KL.

    ``targets`` defaults to the projected states themselves (the stop-gradient
    target); passing precomputed targets keeps them constant under parameter
    perturbation, which is what the finite-difference oracle needs.
    Returns (total, reconstruction term).
    """
    states = np.stack([proj.project(snap) for snap in snapshots])
    target = states if targets is None else targets
    mu, log_std, _, _ = encdec.posterior(states)
    std = np.exp(log_std)
    z = mu + std * noise
    recon, _ = nn.forward(encdec.decoder, z)
    rec = float(np.mean(np.sum((recon - target) ** 2, axis=1)))
    kl = float(np.mean(np.sum(0.5 * (mu ** 2 + std ** 2 - 1.0) - log_std, axis=1)))
    return rec + beta_kl * kl, rec


def elbo_grads(encdec, proj, snapshots, noise, beta_kl=DEFAULT_BETA_KL):
    """Analytic gradients of :func:`elbo_loss` with the target held constant.

    Returns (total, rec, encoder Gradients, decoder Gradients, projection
    gradient list). The gradient reaches the projections only through the
    prediction path (encoder input), never through the target.
    """
    states = np.stack([proj.project(snap) for snap in snapshots])
    batch = len(snapshots)
    mu, log_std, enc_cache, raw = encdec.posterior(states)
    std = np.exp(log_std)
    z = mu + std * noise
    recon, dec_cache = nn.forward(encdec.decoder, z)
    diff = recon - states
    rec = float(np.mean(np.sum(diff ** 2, axis=1)))
    kl = float(np.mean(np.sum(0.5 * (mu ** 2 + std ** 2 - 1.0) - log_std, axis=1)))
    total = rec + beta_kl * kl

    dec_grads, dz = nn.backward(encdec.decoder, dec_cache, 2.0 * diff / batch)
    dmu = dz + beta_kl * mu / batch
    dlog_std = dz * std * noise + beta_kl * (std ** 2 - 1.0) / batch
    raw_mu = raw[..., :encdec.h]
    raw_ls = raw[..., encdec.h:]
    draw = np.concatenate([
        dmu * (1.0 - np.tanh(raw_mu) ** 2),
        dlog_std * ((raw_ls > LOG_STD_MIN) & (raw_ls < LOG_STD_MAX)),
    ], axis=1)
    enc_grads, dstates = nn.backward(encdec.encoder, enc_cache, draw)
    proj_grads = proj.grad_from_state_grad(snapshots, dstates)
    return total, rec, enc_grads, dec_grads, proj_grads


def make_train_optimizer(encdec, proj):
    shapes = [a.shape for a in encdec.parameter_arrays()] + \
             [c.shape for c in proj.matrices_flat()]
    return nn.OptimizerState("adam", shapes)


def train_step(encdec, proj, snapshots, opt, rng, beta_kl=DEFAULT_BETA_KL,
               lr=DEFAULT_TRAIN_LR):
    """One reparameterized gradient step on the VAE and the projections.

    Returns (reconstruction loss, skipped flag); a non-finite loss skips the
    update and flags it.
    """
    noise = rng.standard_normal((len(snapshots), encdec.h))
    total, rec, enc_g, dec_g, proj_g = elbo_grads(encdec, proj, snapshots,
                                                  noise, beta_kl=beta_kl)
    if not np.isfinite(total):
        return rec, True
    params = encdec.parameter_arrays() + proj.matrices_flat()
    grads = enc_g.parameter_arrays() + dec_g.parameter_arrays() + proj_g
    opt.update(params, grads, lr)
    return rec, False


class Reservoir:
    """Uniform reservoir of raw snapshots for training batches (algorithm R)."""

    def __init__(self, capacity=DEFAULT_RESERVOIR):
        self.capacity = int(capacity)
        self.items = []
        self.seen = 0

    def __len__(self):
        return len(self.items)

    def offer(self, item, rng):
        self.seen += 1
        if len(self.items) < self.capacity:
            self.items.append(item)
        else:
            j = int(rng.integers(self.seen))
            if j < self.capacity:
                self.items[j] = item

    def sample(self, count, rng):
        idx = rng.choice(len(self.items), size=min(count, len(self.items)),
                         replace=False)
        return [self.items[int(i)] for i in idx]


class StateEmbedder:
    """Projections + VAE + reservoir bundle driven by the episode loop.

    ``mode`` is "vae" (online training) or "random_projection" (frozen random
    maps, the ablation baseline). ``observe`` feeds the reservoir every step
    and trains on the cadence steps once a full batch is available.
    """

    def __init__(self, tensor_shapes, n_order, d=DEFAULT_PROJ_DIM,
                 h=DEFAULT_EMBED_DIM, seed=0, mode="vae",
                 beta_kl=DEFAULT_BETA_KL, lr=DEFAULT_TRAIN_LR,
                 batch_size=DEFAULT_BATCH_SIZE,
                 train_interval=DEFAULT_TRAIN_INTERVAL,
                 reservoir_size=DEFAULT_RESERVOIR):
        if mode not in ("vae", "random_projection"):
            raise ValueError(f"unknown embedder mode {mode!r}")
        self.proj = Projections(tensor_shapes, n_order, d=d, seed=seed)
        self.encdec = EncoderDecoder(self.proj.state_dim, h=h, seed=seed + 1)
        self.mode = mode
        self.beta_kl = beta_kl
        self.lr = lr
        self.batch_size = int(batch_size)
        self.train_interval = int(train_interval)
        self.reservoir = Reservoir(reservoir_size)
        self.opt = make_train_optimizer(self.encdec, self.proj)
        self.last_rec_loss = None

    @property
    def key_dim(self):
        return self.encdec.h

    def project(self, snapshot):
        return self.proj.project(snapshot)

    def embed(self, state):
        return embed(self.encdec, state)

    def observe(self, snapshot, update_step, rng):
        """Feed the reservoir; on cadence steps run one training step."""
        self.reservoir.offer(snapshot, rng)
        if self.mode != "vae":
            return None
        if not training_cadence(update_step, self.train_interval):
            return None
        if len(self.reservoir) < self.batch_size:
            return None
        batch = self.reservoir.sample(self.batch_size, rng)
        rec, skipped = train_step(self.encdec, self.proj, batch, self.opt, rng,
                                  beta_kl=self.beta_kl, lr=self.lr)
        if not skipped:
            self.last_rec_loss = rec
        return rec

    def snapshot_arrays(self):
        data = nn.net_to_arrays(self.encdec.encoder, prefix="encoder_")
        data.update(nn.net_to_arrays(self.encdec.decoder, prefix="decoder_"))
        data.update(self.proj.snapshot_arrays())
        return data

    def save(self, path):
        np.savez(path, **self.snapshot_arrays())
