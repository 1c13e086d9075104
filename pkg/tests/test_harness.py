import json

import numpy as np
import pytest
from scipy.stats import chisquare

from epgt import cli
from epgt.harness import (
    EarlyStop,
    ExperimentConfig,
    MemorySettings,
    inspect_memory,
    planned_updates,
    read_metrics,
    run_experiment,
    run_single,
)
from epgt.memory import EpisodicMemory


LR_SPEC = {"name": "learning_rate", "kind": "lr_multiplicative",
           "default": 7e-4, "bins": 5}


def tiny_config(**kw):
    base = dict(environment="sparsegrid", algorithm="a2c", scheduler="fixed",
                total_env_steps=600, seeds=[0, 1], updates_per_episode=4,
                hidden=[4], encoder={"h": 8, "d": 2, "n_order": 1,
                                     "batch_size": 4})
    base.update(kw)
    return ExperimentConfig.from_dict(base)


def test_config_validation_errors():
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({"algorithm": "dqn"})
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({"environment": "pong"})
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({"scheduler": "epgt"})  # no hyperparams
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({"bogus_field": 1})
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({"seeds": []})


def test_planned_updates_arithmetic():
    cfg = tiny_config(total_env_steps=1000)
    assert planned_updates(cfg) == 200  # horizon 5
    ppo = ExperimentConfig.from_dict(dict(
        environment="cartpole", algorithm="ppo", scheduler="fixed",
        total_env_steps=4096, seeds=[0],
        pg_overrides={"horizon": 2048, "batch_size": 512, "ppo_epochs": 10}))
    assert planned_updates(ppo) == 2 * 40


def test_fixed_scheduler_writes_metrics_no_memory(tmp_path):
    cfg = tiny_config()
    summaries = run_experiment(cfg, out_dir=tmp_path)
    assert len(summaries) == 2
    for summary in summaries:
        assert not summary["crashed"]
        run_dir = tmp_path / summary["run_id"]
        assert (run_dir / "metrics.jsonl").exists()
        assert (run_dir / "networks.npz").exists()
        assert not (run_dir / "memory.bin").exists()
        records = read_metrics(run_dir / "metrics.jsonl")
        updates = [r for r in records if r["kind"] == "update"]
        assert len(updates) == summary["update_steps"]
        assert all(r["hyper_action"] is None for r in updates)


def test_rnd_scheduler_uniform_hyper_actions(tmp_path):
    cfg = tiny_config(scheduler="rnd", total_env_steps=4000, seeds=[0],
                      hyperparams=[LR_SPEC])
    summary = run_experiment(cfg, out_dir=tmp_path)[0]
    records = read_metrics(tmp_path / summary["run_id"] / "metrics.jsonl")
    chosen = [tuple(r["hyper_action"]) for r in records if r["kind"] == "update"]
    assert len(chosen) == 800
    values = sorted(set(chosen))
    assert len(values) == 5
    counts = [sum(1 for c in chosen if c == v) for v in values]
    _, p = chisquare(counts)
    assert p > 0.01


def test_epgt_scheduler_end_to_end(tmp_path):
    cfg = tiny_config(scheduler="epgt", total_env_steps=800, seeds=[3],
                      hyperparams=[LR_SPEC])
    summary = run_experiment(cfg, out_dir=tmp_path)[0]
    assert not summary["crashed"]
    run_dir = tmp_path / summary["run_id"]
    assert (run_dir / "memory.bin").exists()
    assert (run_dir / "embedder.npz").exists()
    records = read_metrics(run_dir / "metrics.jsonl")
    phases = [r for r in records if r["kind"] == "phase"]
    updates = [r for r in records if r["kind"] == "update"]
    assert phases, "learning episodes should emit phase records"
    assert all("G" in p and p["memory_size"] >= 0 for p in phases)
    # memory grows with flushed episode buffers
    assert phases[-1]["memory_size"] > 0
    # epsilon decays across the run
    eps = [r["epsilon"] for r in updates]
    assert eps[0] > eps[-1]
    mem = EpisodicMemory.load(run_dir / "memory.bin")
    assert len(mem) == phases[-1]["memory_size"]


def test_epgt_determinism_byte_identical(tmp_path):
    cfg = tiny_config(scheduler="epgt", total_env_steps=600, seeds=[7],
                      hyperparams=[LR_SPEC])
    a = run_experiment(cfg, out_dir=tmp_path / "a")[0]
    b = run_experiment(cfg, out_dir=tmp_path / "b")[0]
    bytes_a = (tmp_path / "a" / a["run_id"] / "metrics.jsonl").read_bytes()
    bytes_b = (tmp_path / "b" / b["run_id"] / "metrics.jsonl").read_bytes()
    assert bytes_a == bytes_b


def test_seed_isolation_on_crash(tmp_path, monkeypatch):
    import epgt.harness as harness_mod

    real = harness_mod.run_single

    def flaky(cfg, seed, run_dir):
        if seed == 1:
            raise RuntimeError("boom")
        return real(cfg, seed, run_dir)

    monkeypatch.setattr(harness_mod, "run_single", flaky)
    cfg = tiny_config(seeds=[0, 1, 2])
    summaries = run_experiment(cfg, out_dir=tmp_path)
    assert [s.get("crashed", False) for s in summaries] == [False, True, False]
    assert "boom" in summaries[1]["traceback"]


def test_early_stop_records_solve_step(tmp_path):
    cfg = tiny_config(total_env_steps=100_000, seeds=[0],
                      early_stop={"return_threshold": 0.0, "window": 5})
    summary = run_experiment(cfg, out_dir=tmp_path)[0]
    assert summary["solved_at_env_step"] is not None
    assert summary["env_steps"] < 100_000


def test_ppo_run_smoke(tmp_path):
    cfg = ExperimentConfig.from_dict(dict(
        environment="cartpole", algorithm="ppo", scheduler="rnd",
        total_env_steps=256, seeds=[0], hidden=[8],
        hyperparams=[{"name": "clip", "kind": "uniform_bins", "default": 0.2,
                      "values": [0.1, 0.2, 0.3]}],
        pg_overrides={"horizon": 64, "batch_size": 16, "ppo_epochs": 2},
        encoder={"h": 8, "d": 2, "n_order": 1}))
    summary = run_experiment(cfg, out_dir=tmp_path)[0]
    assert not summary["crashed"]
    records = read_metrics(tmp_path / summary["run_id"] / "metrics.jsonl")
    updates = [r for r in records if r["kind"] == "update"]
    assert len(updates) == summary["update_steps"]
    assert summary["update_steps"] >= 2 * 4  # epochs * ceil(64/16) per episode


def test_ppo_epgt_minibatch_steps_are_hyper_steps(tmp_path):
    cfg = ExperimentConfig.from_dict(dict(
        environment="cartpole", algorithm="ppo", scheduler="epgt",
        total_env_steps=128, seeds=[0], hidden=[8],
        hyperparams=[LR_SPEC | {"default": 3e-4}],
        pg_overrides={"horizon": 64, "batch_size": 16, "ppo_epochs": 2},
        encoder={"h": 8, "d": 2, "n_order": 1, "batch_size": 4}))
    summary = run_experiment(cfg, out_dir=tmp_path)[0]
    assert not summary["crashed"]
    records = read_metrics(tmp_path / summary["run_id"] / "metrics.jsonl")
    phases = [r for r in records if r["kind"] == "phase"]
    updates = [r for r in records if r["kind"] == "update"]
    # one learning episode per collected horizon, epochs*ceil(64/16) steps each
    assert len(updates) == len(phases) * 8
    assert (tmp_path / summary["run_id"] / "memory.bin").exists()


def test_metrics_survive_truncated_tail(tmp_path):
    cfg = tiny_config(seeds=[0])
    summary = run_experiment(cfg, out_dir=tmp_path)[0]
    path = tmp_path / summary["run_id"] / "metrics.jsonl"
    records = read_metrics(path)
    with open(path, "ab") as f:
        f.write(b'{"kind": "upd')  # simulate a kill mid-write
    assert read_metrics(path) == records


def test_inspect_memory_summary_and_csv(tmp_path, capsys):
    mem = EpisodicMemory(3, 2, capacity=500)
    rng = np.random.default_rng(0)
    for i in range(100):
        mem.insert(rng.normal(size=3), int(rng.integers(2)), float(i))
    path = tmp_path / "memory.bin"
    mem.save(path)
    csv_path = tmp_path / "export.csv"
    summary = inspect_memory(path, csv_path=csv_path)
    assert summary["occupancy"] == 100
    assert sum(summary["per_action_counts"]) == 100
    rows = csv_path.read_text().strip().splitlines()
    assert len(rows) == 101  # header + entries
    assert rows[0].startswith("k0,k1,k2,action,value")
    out = capsys.readouterr().out
    assert "occupancy 100" in out


def test_inspect_memory_empty(tmp_path, capsys):
    mem = EpisodicMemory(3, 2, capacity=10)
    path = tmp_path / "empty.bin"
    mem.save(path)
    csv_path = tmp_path / "empty.csv"
    summary = inspect_memory(path, csv_path=csv_path)
    assert summary["occupancy"] == 0
    assert summary["value_mean"] is None
    assert len(csv_path.read_text().strip().splitlines()) == 1


def test_cli_train_verify_inspect_replay(tmp_path, capsys):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(dict(
        environment="sparsegrid", algorithm="a2c", scheduler="epgt",
        total_env_steps=400, seeds=[0], updates_per_episode=4, hidden=[4],
        hyperparams=[LR_SPEC],
        encoder={"h": 8, "d": 2, "n_order": 1, "batch_size": 4},
        out_dir=str(tmp_path / "runs"))))
    assert cli.main(["train", "--config", str(cfg_path)]) == 0
    out = capsys.readouterr().out
    assert "env steps" in out

    run_dir = tmp_path / "runs" / "sparsegrid-a2c-epgt-seed0"
    assert cli.main(["inspect-memory", str(run_dir / "memory.bin")]) == 0
    capsys.readouterr()

    assert cli.main(["replay", "--config", str(cfg_path), "--seed", "0",
                     "--out", str(tmp_path / "replay1")]) == 0
    hash1 = [l for l in capsys.readouterr().out.splitlines()
             if l.startswith("metrics sha256")][0]
    assert cli.main(["replay", "--config", str(cfg_path), "--seed", "0",
                     "--out", str(tmp_path / "replay2")]) == 0
    hash2 = [l for l in capsys.readouterr().out.splitlines()
             if l.startswith("metrics sha256")][0]
    assert hash1 == hash2
    # the replay reproduces the original training stream byte for byte
    original = (run_dir / "metrics.jsonl").read_bytes()
    replayed = (tmp_path / "replay1" / "metrics.jsonl").read_bytes()
    assert original == replayed


def test_cli_verify_quick(capsys):
    assert cli.main(["verify"]) == 0
    out = capsys.readouterr().out
    assert "[PASS]" in out and "[FAIL]" not in out


def test_parallel_env_var(tmp_path, monkeypatch):
    monkeypatch.setenv("EPGT_PARALLEL", "2")
    cfg = tiny_config(seeds=[0, 1])
    summaries = run_experiment(cfg, out_dir=tmp_path)
    assert all(not s["crashed"] for s in summaries)
    monkeypatch.setenv("EPGT_OUT_DIR", str(tmp_path / "override"))
    summaries = run_experiment(cfg, seeds=[0])
    assert (tmp_path / "override" / summaries[0]["run_id"] / "metrics.jsonl").exists()
