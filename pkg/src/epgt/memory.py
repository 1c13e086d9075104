"""Episodic memory for the hyperparameter MDP.

The store binds (embedding key, hyper-action) pairs to estimated
hyper-returns. Reads are kernel-weighted KNN averages over the K nearest
same-action keys; writes adjust the K_w nearest same-action slots toward the
observed hyper-return with speeds proportional to similarity, then insert the
fresh key if it is not already stored. Capacity overflow evicts the earliest
inserted entry.

Neighbor search uses one index per action: a scipy kd-tree over large stores
with a linear-scan path below 64 entries (the scan doubles as the semantics
the oracle re-derives). Mutations keep every index consistent via pending
buffers and amortized rebuilds.
"""

from __future__ import annotations

import struct

import numpy as np
from scipy.spatial import cKDTree

KERNEL_EPS = 1e-3
EXACT_MATCH_TOL = 1e-12
LINEAR_SCAN_LIMIT = 64
REBUILD_PENDING = 64
REBUILD_DEAD = 64


def similarity(key_a, key_b, kernel_eps=KERNEL_EPS):
    """Inverse-distance kernel 1 / (||a - b|| + eps); symmetric and positive."""
    a = np.asarray(key_a, dtype=np.float64)
    b = np.asarray(key_b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"key dimension mismatch: {a.shape} vs {b.shape}")
    return 1.0 / (float(np.linalg.norm(a - b)) + kernel_eps)


def epsilon_schedule(step, total_steps):
    """Linear exploration schedule: 1 at step 0, exactly 0 at the final step."""
    if total_steps <= 0:
        raise ValueError("total_steps must be positive")
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    return 1.0 - step / total_steps


def select_action(q_values, epsilon, rng):
    """Epsilon-greedy over action values; greedy ties break to the lowest index."""
    q = np.asarray(q_values, dtype=np.float64)
    if q.size == 0:
        raise ValueError("no actions to select from")
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon {epsilon} outside [0, 1]")
    if rng.random() < epsilon:
        return int(rng.integers(q.size))
    return int(np.argmax(q))


class _ActionIndex:
    """Append-only key store for one action with amortized kd-tree rebuilds.

    Entries are never moved; eviction marks them dead. The kd-tree covers a
    prefix of the entries, later insertions sit in a pending range scanned
    with vectorized distances. Rebuilds compact nothing (positions are
    stable) but re-index all alive keys.
    """

    INITIAL_CAPACITY = 64

    def __init__(self, key_dim):
        self.key_dim = key_dim
        self.size = 0
        self.keys = np.empty((self.INITIAL_CAPACITY, key_dim))
        self.values = np.empty(self.INITIAL_CAPACITY)
        self.seqs = np.empty(self.INITIAL_CAPACITY, dtype=np.int64)
        self.write_counts = np.zeros(self.INITIAL_CAPACITY, dtype=np.int64)
        self.alive = np.zeros(self.INITIAL_CAPACITY, dtype=bool)
        self.tree = None
        self.tree_positions = np.empty(0, dtype=np.int64)
        self.dead_in_tree = 0
        self.pending_start = 0  # positions >= this are not in the tree

    def _grow(self):
        if self.size < len(self.keys):
            return
        new = max(2 * len(self.keys), self.INITIAL_CAPACITY)
        for name in ("keys", "values", "seqs", "write_counts", "alive"):
            arr = getattr(self, name)
            shape = (new,) + arr.shape[1:]
            fresh = np.zeros(shape, dtype=arr.dtype)
            fresh[: self.size] = arr[: self.size]
            setattr(self, name, fresh)

    def insert(self, key, value, seq):
        self._grow()
        pos = self.size
        self.keys[pos] = key
        self.values[pos] = value
        self.seqs[pos] = seq
        self.write_counts[pos] = 0
        self.alive[pos] = True
        self.size += 1
        self._maybe_rebuild()
        return pos

    def kill(self, pos):
        if self.alive[pos]:
            self.alive[pos] = False
            if self.tree is not None and pos < self.pending_start:
                self.dead_in_tree += 1
            self._maybe_rebuild()

    def alive_count(self):
        return int(np.sum(self.alive[: self.size]))

    def _maybe_rebuild(self):
        pending = self.size - self.pending_start
        if pending <= REBUILD_PENDING and self.dead_in_tree <= REBUILD_DEAD:
            return
        positions = np.flatnonzero(self.alive[: self.size])
        if len(positions) >= LINEAR_SCAN_LIMIT:
            self.tree = cKDTree(self.keys[positions])
            self.tree_positions = positions
            self.dead_in_tree = 0
            self.pending_start = self.size
        else:
            self.tree = None
            self.tree_positions = np.empty(0, dtype=np.int64)
            self.dead_in_tree = 0
            self.pending_start = 0

    def _scan(self, key, positions):
        return np.sqrt(np.sum((self.keys[positions] - key) ** 2, axis=1))

    def nearest(self, key, k):
        """Positions and distances of the k nearest alive entries (ascending)."""
        key = np.asarray(key, dtype=np.float64)
        if self.tree is None:
            cands = np.flatnonzero(self.alive[: self.size])
            if cands.size == 0:
                return [], np.empty(0)
            dists = self._scan(key, cands)
        else:
            want = min(len(self.tree_positions), k + self.dead_in_tree)
            d, idx = self.tree.query(key, k=want)
            tree_pos = self.tree_positions[np.atleast_1d(idx)]
            keep = self.alive[tree_pos]
            cands = tree_pos[keep]
            dists = np.atleast_1d(d)[keep]
            pending = self.pending_start + np.flatnonzero(
                self.alive[self.pending_start: self.size])
            if pending.size:
                cands = np.concatenate([cands, pending])
                dists = np.concatenate([dists, self._scan(key, pending)])
            if cands.size == 0:
                return [], np.empty(0)
        order = np.argsort(dists, kind="stable")[:k]
        return cands[order].tolist(), dists[order]


class EpisodicMemory:
    """Capacity-bounded (key, action) -> hyper-return store with KNN access."""

    def __init__(self, key_dim, n_actions, capacity, k_read=3, k_write=3,
                 beta=0.5, kernel_eps=KERNEL_EPS, beta_mode="constant",
                 write_rule="average"):
        if capacity < 1:
            raise ValueError("capacity must be at least 1")
        if not 0.0 < beta <= 1.0:
            raise ValueError("beta must be in (0, 1]")
        if beta_mode not in ("constant", "harmonic"):
            raise ValueError(f"unknown beta mode {beta_mode!r}")
        if write_rule not in ("average", "max"):
            raise ValueError(f"unknown write rule {write_rule!r}")
        self.key_dim = int(key_dim)
        self.n_actions = int(n_actions)
        self.capacity = int(capacity)
        self.k_read = int(k_read)
        self.k_write = int(k_write)
        self.beta = float(beta)
        self.kernel_eps = float(kernel_eps)
        self.beta_mode = beta_mode
        self.write_rule = write_rule  # "max" exists only to reproduce the ablation
        self._indices = [_ActionIndex(self.key_dim) for _ in range(self.n_actions)]
        self._fifo = []            # (seq, action, position), append-only with head pointer
        self._fifo_head = 0
        self._next_seq = 0
        self._size = 0

    def __len__(self):
        return self._size

    def occupancy(self):
        return self._size

    def action_counts(self):
        return [idx.alive_count() for idx in self._indices]

    def _check_key(self, key):
        key = np.asarray(key, dtype=np.float64)
        if key.shape != (self.key_dim,):
            raise ValueError(f"key shape {key.shape} != ({self.key_dim},)")
        return key

    def _check_action(self, action):
        action = int(action)
        if not 0 <= action < self.n_actions:
            raise ValueError(f"action {action} outside [0, {self.n_actions})")
        return action

    def read(self, key, action, k=None):
        """Kernel-weighted average of the k nearest same-action values.

        Returns ``(estimate, found)``; an empty match set yields (0.0, False).
        """
        key = self._check_key(key)
        action = self._check_action(action)
        k = self.k_read if k is None else int(k)
        index = self._indices[action]
        positions, dists = index.nearest(key, k)
        if not positions:
            return 0.0, False
        sims = 1.0 / (dists + self.kernel_eps)
        values = index.values[positions]
        return float(np.sum(sims * values) / np.sum(sims)), True

    def insert(self, key, action, value):
        """Add a fresh (key, action, value) entry, evicting FIFO at capacity."""
        key = self._check_key(key)
        action = self._check_action(action)
        seq = self._next_seq
        self._next_seq += 1
        pos = self._indices[action].insert(key, value, seq)
        self._fifo.append((seq, action, pos))
        self._size += 1
        while self._size > self.capacity:
            _, old_action, old_pos = self._fifo[self._fifo_head]
            self._fifo_head += 1
            self._indices[old_action].kill(old_pos)
            self._size -= 1
        if self._fifo_head > 1024 and self._fifo_head * 2 > len(self._fifo):
            self._fifo = self._fifo[self._fifo_head:]
            self._fifo_head = 0

    def update(self, buffer):
        """Write one learning-episode buffer into the memory.

        For each (key, action, hyper-return) record, the k_write nearest
        same-action slots move toward the return with similarity-normalized
        speeds, then the key is inserted if no stored same-action key matches
        it within 1e-12. Entries under other actions are never touched.
        """
        records = buffer.records() if hasattr(buffer, "records") else buffer
        for key, action, g in records:
            key = self._check_key(key)
            action = self._check_action(action)
            index = self._indices[action]
            positions, dists = index.nearest(key, self.k_write)
            exact = len(positions) > 0 and dists[0] <= EXACT_MATCH_TOL
            if self.write_rule == "max":
                # test-only ablation: overwrite the exact slot with the best return
                if exact:
                    p = positions[0]
                    index.values[p] = max(index.values[p], float(g))
                    index.write_counts[p] += 1
                else:
                    self.insert(key, action, g)
                continue
            if positions:
                sims = 1.0 / (dists + self.kernel_eps)
                denom = float(np.sum(sims))
                for p, sim in zip(positions, sims):
                    index.write_counts[p] += 1
                    beta = (self.beta if self.beta_mode == "constant"
                            else 1.0 / (index.write_counts[p] + 1))
                    delta = float(g) - index.values[p]
                    index.values[p] += beta * delta * sim / denom
            if not exact:
                self.insert(key, action, g)

    def entries(self):
        """Alive (key, action, value) triples in insertion order."""
        out = []
        for seq, action, pos in self._fifo[self._fifo_head:]:
            index = self._indices[action]
            if index.alive[pos]:
                out.append((index.keys[pos].copy(), action,
                            float(index.values[pos])))
        return out

    def _records_in_order(self):
        for seq, action, pos in self._fifo[self._fifo_head:]:
            index = self._indices[action]
            if index.alive[pos]:
                yield (seq, action, index.keys[pos], float(index.values[pos]),
                       int(index.write_counts[pos]))

    # --- serialization -----------------------------------------------------
    #
    # Byte layout (little-endian):
    #   magic   4s   b"EPGM"
    #   version u32  = 1
    #   key_dim u32, n_actions u32, k_read u32, k_write u32
    #   flags   u32  bit0: beta_mode harmonic, bit1: write_rule max
    #   capacity u64, count u64, next_seq u64
    #   beta f64, kernel_eps f64
    # then `count` records in insertion order:
    #   seq u64, action u32, write_count u32, value f64, key f64[key_dim]

    MAGIC = b"EPGM"
    FORMAT_VERSION = 1
    _HEADER = struct.Struct("<4sIIIIIIQQQdd")

    def snapshot(self):
        """Serialize to bytes; restore() round trips bit-exactly."""
        flags = (1 if self.beta_mode == "harmonic" else 0) | \
                (2 if self.write_rule == "max" else 0)
        parts = [self._HEADER.pack(
            self.MAGIC, self.FORMAT_VERSION, self.key_dim, self.n_actions,
            self.k_read, self.k_write, flags, self.capacity, self._size,
            self._next_seq, self.beta, self.kernel_eps)]
        rec = struct.Struct(f"<QIId{self.key_dim}d")
        for seq, action, key, value, wc in self._records_in_order():
            parts.append(rec.pack(seq, action, wc, value, *key.tolist()))
        return b"".join(parts)

    @classmethod
    def restore(cls, payload):
        """Rebuild a memory from snapshot bytes; rejects corrupt payloads."""
        h = cls._HEADER
        if len(payload) < h.size:
            raise ValueError("corrupt memory snapshot: truncated header")
        (magic, version, key_dim, n_actions, k_read, k_write, flags,
         capacity, count, next_seq, beta, kernel_eps) = h.unpack_from(payload, 0)
        if magic != cls.MAGIC:
            raise ValueError("corrupt memory snapshot: bad magic")
        if version != cls.FORMAT_VERSION:
            raise ValueError(f"unsupported memory snapshot version {version}")
        mem = cls(key_dim, n_actions, capacity, k_read=k_read, k_write=k_write,
                  beta=beta, kernel_eps=kernel_eps,
                  beta_mode="harmonic" if flags & 1 else "constant",
                  write_rule="max" if flags & 2 else "average")
        rec = struct.Struct(f"<QIId{key_dim}d")
        offset = h.size
        for _ in range(count):
            if offset + rec.size > len(payload):
                raise ValueError("corrupt memory snapshot: truncated entries")
            fields = rec.unpack_from(payload, offset)
            offset += rec.size
            seq, action, wc, value = fields[0], fields[1], fields[2], fields[3]
            key = np.array(fields[4:], dtype=np.float64)
            pos = mem._indices[action].insert(key, value, seq)
            mem._indices[action].write_counts[pos] = wc
            mem._fifo.append((seq, action, pos))
            mem._size += 1
        if offset != len(payload):
            raise ValueError("corrupt memory snapshot: trailing bytes")
        mem._next_seq = next_seq
        return mem

    def save(self, path):
        with open(path, "wb") as f:
            f.write(self.snapshot())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as f:
            return cls.restore(f.read())
