"""Run the full scheduling loop end to end on SparseGrid with a small budget,
then inspect the resulting memory snapshot.

This is the same code path as `epgt train --config ...` with scheduler
"epgt"; SparseGrid keeps it fast. The learning-rate action space here uses
five multiplicative bins around the A2C default.

Run: python3 demos/06_epgt_end_to_end.py
"""

import json
from pathlib import Path

from epgt.harness import ExperimentConfig, inspect_memory, read_metrics, run_experiment

out = Path("/tmp/epgt_demo_runs")
cfg = ExperimentConfig.from_dict({
    "environment": "sparsegrid",
    "algorithm": "a2c",
    "scheduler": "epgt",
    "total_env_steps": 4000,
    "seeds": [0],
    "updates_per_episode": 10,
    "hidden": [8],
    "hyperparams": [
        {"name": "learning_rate", "kind": "lr_multiplicative",
         "default": 7e-4, "bins": 5},
    ],
    "encoder": {"h": 16, "d": 2, "n_order": 1},
    "out_dir": str(out),
})

print("running one EPGT seed on SparseGrid ...")
summary = run_experiment(cfg)[0]
run_dir = out / summary["run_id"]
print(json.dumps(summary, indent=2))

records = read_metrics(run_dir / "metrics.jsonl")
updates = [r for r in records if r["kind"] == "update"]
phases = [r for r in records if r["kind"] == "phase"]
print(f"\nmetrics: {len(updates)} update records, {len(phases)} learning "
      f"episodes")
print(f"epsilon decayed {updates[0]['epsilon']:.3f} -> {updates[-1]['epsilon']:.3f}")
chosen = [tuple(r["hyper_action"]) for r in updates]
for value in sorted(set(chosen)):
    share = sum(1 for c in chosen if c == value) / len(chosen)
    print(f"  learning rate {value[0]:.2e} chosen {share:5.1%} of steps")
print(f"phase returns (first 5): {[round(p['G'], 3) for p in phases[:5]]}")

print("\ninspecting the saved memory:")
inspect_memory(run_dir / "memory.bin", csv_path=run_dir / "memory.csv")
