"""Proportional prioritized replay backed by a sum tree."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .lattice import N_ACTIONS


@dataclass
class Transition:
    obs: np.ndarray
    action: int
    reward: float
    next_obs: np.ndarray
    done: int
    # legal actions in next_obs; used to mask the double-DQN argmax
    next_mask: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.done not in (0, 1, True, False):
            raise ValueError(f"done flag must be 0 or 1, got {self.done!r}")
        if self.reward < 0:
            raise ValueError(f"rewards are non-negative, got {self.reward}")


@dataclass
class Batch:
    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_obs: np.ndarray
    dones: np.ndarray
    next_masks: np.ndarray

    def __len__(self) -> int:
        return len(self.actions)


@dataclass
class BetaSchedule:
    start: float = 0.4
    end: float = 1.0
    horizon: int = 100_000

    def __call__(self, step: int) -> float:
        return beta_at(self, step)


def beta_at(schedule: BetaSchedule, step: int) -> float:
    """Linear ramp from start to end over the horizon, then flat."""
    if step < 0:
        raise ValueError("step must be non-negative")
    if schedule.horizon <= 0 or step >= schedule.horizon:
        return schedule.end
    frac = step / schedule.horizon
    return schedule.start + frac * (schedule.end - schedule.start)


class SumTree:
    """Complete binary tree over a power-of-two leaf array; node 1 is the root."""

    def __init__(self, capacity: int):
        self.leaves = 1
        while self.leaves < capacity:
            self.leaves *= 2
        self.sums = np.zeros(2 * self.leaves, dtype=np.float64)
        self.maxes = np.zeros(2 * self.leaves, dtype=np.float64)

    @property
    def total(self) -> float:
        return float(self.sums[1])

    @property
    def max(self) -> float:
        return float(self.maxes[1])

    def leaf(self, idx) -> np.ndarray:
        return self.sums[np.asarray(idx) + self.leaves]

    def set(self, idx, sum_values, max_values) -> None:
        nodes = np.asarray(idx, dtype=np.int64).reshape(-1) + self.leaves
        self.sums[nodes] = sum_values
        self.maxes[nodes] = max_values
        nodes = np.unique(nodes // 2)
        while nodes[0] >= 1:
            self.sums[nodes] = self.sums[2 * nodes] + self.sums[2 * nodes + 1]
            self.maxes[nodes] = np.maximum(self.maxes[2 * nodes], self.maxes[2 * nodes + 1])
            if nodes[0] == 1:
                break
            nodes = np.unique(nodes // 2)

    def find(self, mass: np.ndarray) -> np.ndarray:
        """Leaf index whose cumulative-sum interval contains each mass value."""
        u = np.array(mass, dtype=np.float64)
        node = np.ones(u.shape, dtype=np.int64)
        while node[0] < self.leaves:
            left = self.sums[2 * node]
            right = u >= left
            u = np.where(right, u - left, u)
            node = 2 * node + right
        return node - self.leaves


class PrioritizedReplayBuffer:
    def __init__(self, capacity: int = 100_000, alpha: float = 0.6, eps: float = 1e-5,
                 normalize_weights: bool = True, rng: Optional[np.random.Generator] = None):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        if not 0.0 <= alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if eps <= 0:
            raise ValueError("eps must be positive")
        self.capacity = capacity
        self.alpha = alpha
        self.eps = eps
        self.normalize_weights = normalize_weights
        self.rng = rng if rng is not None else np.random.default_rng()
        self.tree = SumTree(capacity)
        self.priorities = np.zeros(capacity, dtype=np.float64)
        self.size = 0
        self.cursor = 0
        self._storage: Optional[dict] = None

    def __len__(self) -> int:
        return self.size

    def _allocate(self, obs_dim: int) -> None:
        cap = self.capacity
        self._storage = {
            "obs": np.zeros((cap, obs_dim), dtype=np.float32),
            "actions": np.zeros(cap, dtype=np.int64),
            "rewards": np.zeros(cap, dtype=np.float32),
            "next_obs": np.zeros((cap, obs_dim), dtype=np.float32),
            "dones": np.zeros(cap, dtype=np.float32),
            "next_masks": np.ones((cap, N_ACTIONS), dtype=bool),
        }

    def push(self, t: Transition) -> int:
        """Store with the current maximum priority (1 when empty); returns the slot."""
        obs = np.asarray(t.obs, dtype=np.float32).reshape(-1)
        if self._storage is None:
            self._allocate(obs.size)
        st = self._storage
        if obs.size != st["obs"].shape[1]:
            raise ValueError(f"observation width {obs.size} != buffer width {st['obs'].shape[1]}")
        slot = self.cursor
        st["obs"][slot] = obs
        st["actions"][slot] = int(t.action)
        st["rewards"][slot] = t.reward
        st["next_obs"][slot] = np.asarray(t.next_obs, dtype=np.float32).reshape(-1)
        st["dones"][slot] = float(t.done)
        st["next_masks"][slot] = True if t.next_mask is None else np.asarray(t.next_mask, dtype=bool)
        # evicted slot must not leak its priority into the max
        self.tree.set([slot], 0.0, 0.0)
        p = self.tree.max if self.size > 0 else 1.0
        if p <= 0:
            p = 1.0
        self._set_priority(np.array([slot]), np.array([p]))
        self.cursor = (self.cursor + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        return slot

    def _set_priority(self, idx: np.ndarray, p: np.ndarray) -> None:
        self.priorities[idx] = p
        self.tree.set(idx, np.power(p, self.alpha), p)

    def probabilities(self) -> np.ndarray:
        """Sampling probability of each stored slot."""
        scaled = np.power(self.priorities[:self.size], self.alpha)
        return scaled / scaled.sum()

    def sample(self, batch_size: int, beta: float):
        """Stratified proportional draw; returns (Batch, indices, weights)."""
        if batch_size <= 0:
            raise ValueError("batch_size must be positive")
        if self.size < batch_size:
            raise ValueError(f"buffer holds {self.size} transitions, fewer than batch size {batch_size}")
        total = self.tree.total
        seg = total / batch_size
        mass = (np.arange(batch_size) + self.rng.random(batch_size)) * seg
        mass = np.minimum(mass, np.nextafter(total, 0.0))
        idx = self.tree.find(mass)
        idx = np.minimum(idx, self.size - 1)
        probs = self.tree.leaf(idx) / total
        weights = np.power(self.size * probs, -beta)
        if self.normalize_weights:
            weights = weights / weights.max()
        st = self._storage
        batch = Batch(
            obs=st["obs"][idx], actions=st["actions"][idx], rewards=st["rewards"][idx],
            next_obs=st["next_obs"][idx], dones=st["dones"][idx], next_masks=st["next_masks"][idx],
        )
        return batch, idx, weights

    def update_priorities(self, indices, td_errors) -> None:
        idx = np.asarray(indices, dtype=np.int64).reshape(-1)
        err = np.asarray(td_errors, dtype=np.float64).reshape(-1)
        if idx.shape != err.shape:
            raise ValueError("indices and td_errors differ in length")
        if idx.size == 0:
            return
        if idx.min() < 0 or idx.max() >= self.size:
            raise IndexError(f"priority index out of range for buffer of size {self.size}")
        if not np.isfinite(err).all():
            raise FloatingPointError("non-finite TD error")
        self._set_priority(idx, np.abs(err) + self.eps)
