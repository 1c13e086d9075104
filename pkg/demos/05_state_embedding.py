"""Capture training-state snapshots from a live learner, project them, and
train the VAE embedding online; the reconstruction loss should fall.

Run: python3 demos/05_state_embedding.py
"""

import numpy as np

from epgt import encoder, hyperrl, pg
from epgt.envs import make_env

env = make_env("cartpole")
env.reset(seed=1)
nets = pg.PolicyValueNet.for_env(env, seed=1)
opts = pg.make_optimizers(nets, "rmsprop")
defaults = pg.a2c_defaults()
learner = pg.A2CLearner(env, nets, defaults, opts, np.random.default_rng(2))

shapes = [w.shape for w in nets.weight_matrices()]
print(f"tracked weight tensors: {shapes}")
emb = encoder.StateEmbedder(shapes, n_order=2, d=4, h=32, seed=3)
print(f"projected state dimension: {emb.proj.state_dim}, key dimension: {emb.key_dim}")

history = hyperrl.GradHistory(shapes, n_order=2)
rng = np.random.default_rng(4)

losses = []
for step in range(600):
    snapshot = hyperrl.raw_snapshot(nets, history)
    result = learner.policy_update(defaults, want_weight_grads=True)
    history.push(result.weight_grads)
    rec = emb.observe(snapshot, step, rng)
    if rec is not None:
        losses.append(rec)
    if step % 100 == 0:
        state = emb.project(snapshot)
        key = emb.embed(state)
        tail = f", reconstruction loss {losses[-1]:.3f}" if losses else ""
        print(f"  update {step:3d}: key[:4] = {np.round(key[:4], 3)}{tail}")

print(f"\nreconstruction loss over training: first {losses[0]:.3f}, "
      f"last {losses[-1]:.3f} ({len(losses)} training steps)")

state = emb.project(hyperrl.raw_snapshot(nets, history))
k1, k2 = emb.embed(state), emb.embed(state)
print(f"embedding is deterministic: {np.array_equal(k1, k2)}; "
      f"keys stay inside [-1, 1]: {bool(np.all(np.abs(k1) <= 1))}")
