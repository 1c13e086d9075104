"""Episodic Policy Gradient Training: online hyperparameter scheduling for
policy-gradient learners through a KNN episodic memory.

The package splits into the inner learners and the outer scheduling layer:

* :mod:`epgt.nn` dense networks with exact backprop and first-order optimizers
* :mod:`epgt.envs` native CartPole / MountainCarContinuous / SparseGrid
* :mod:`epgt.pg` A2C and PPO learners, rollouts, GAE
* :mod:`epgt.hyperrl` quantized hyper-actions, state capture, episode loop
* :mod:`epgt.memory` the episodic store: kernel KNN reads, multi-slot writes
* :mod:`epgt.encoder` projections plus the VAE that produces memory keys
* :mod:`epgt.oracle` brute-force validators behind the ``verify`` report
* :mod:`epgt.harness` seeded experiment runner and the metrics format
"""

from . import encoder, envs, harness, hyperrl, memory, nn, oracle, pg, seeding

__version__ = "0.1.0"

__all__ = [
    "encoder",
    "envs",
    "harness",
    "hyperrl",
    "memory",
    "nn",
    "oracle",
    "pg",
    "seeding",
    "__version__",
]
