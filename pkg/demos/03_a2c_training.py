"""Train A2C on CartPole for a short budget and watch the return climb.

Uses the same learner the experiment harness drives. Finishes in about a
minute; training to the full 195-average solve bar takes a larger budget
(see the acceptance suite).

Run: python3 demos/03_a2c_training.py
"""

import numpy as np

from epgt import pg
from epgt.envs import make_env

BUDGET = 60_000

env = make_env("cartpole")
env.reset(seed=7)
nets = pg.PolicyValueNet.for_env(env, seed=7)
opts = pg.make_optimizers(nets, "rmsprop")
defaults = pg.a2c_defaults()
learner = pg.A2CLearner(env, nets, defaults, opts, np.random.default_rng(8))

print(f"A2C on CartPole, defaults (lr {defaults.learning_rate}, "
      f"horizon {defaults.horizon}), budget {BUDGET} env steps")
next_report = 0
while learner.env_steps < BUDGET:
    result = learner.policy_update(defaults)
    if learner.env_steps >= next_report:
        next_report += 10_000
        log = learner.episode_log
        recent = [r for _, r in log[-20:]] or [0.0]
        print(f"  {learner.env_steps:6d} steps | last-20 episode return "
              f"{np.mean(recent):6.1f} | entropy {result.entropy:.3f}")

log = learner.episode_log
print(f"finished: {len(log)} episodes, best return "
      f"{max(r for _, r in log):.0f}, "
      f"final-50 mean {np.mean([r for _, r in log[-50:]]):.1f}")
