"""Step the native environments with scripted policies and show the reward
conventions, determinism, and termination/truncation bookkeeping.

Run: python3 demos/02_classic_control.py
"""

import numpy as np

from epgt.envs import make_env

print("== CartPole: alternating pushes ==")
env = make_env("cartpole")
obs = env.reset(seed=42)
print(f"  initial state {np.round(obs, 4)}")
steps = 0
while True:
    res = env.step(steps % 2)
    steps += 1
    if res.done or res.truncated:
        break
print(f"  episode ended after {steps} steps "
      f"(done={res.done}, truncated={res.truncated}), return {env.episode_return:.0f}")

print("\n== determinism: same seed, same trajectory ==")
a = make_env("cartpole").reset(seed=7)
b = make_env("cartpole").reset(seed=7)
print(f"  reset observations equal: {np.array_equal(a, b)}")

print("\n== MountainCarContinuous: full throttle with momentum ==")
env = make_env("mountaincar_continuous")
env.reset(seed=3)
direction = 1.0
total = 0.0
for step in range(999):
    obs = env.observation()
    direction = 1.0 if obs[1] >= 0 else -1.0  # push with the velocity
    res = env.step(direction)
    total += res.reward
    if res.done or res.truncated:
        break
print(f"  reached goal: {res.done} after {step + 1} steps, return {total:.2f}")

print("\n== SparseGrid: reward only at the goal ==")
env = make_env("sparsegrid")
env.reset(seed=0)
path = [1] * 4 + [3] * 4  # down four, right four
for action in path:
    res = env.step(action)
print(f"  followed the shortest path: reward {res.reward:.0f}, done {res.done}")
