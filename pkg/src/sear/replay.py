"""Per-step ring buffer that re-slices stored transitions into chunks.

Chunks may start at any stored step. Steps that fall past the end of the
start's episode (or past the newest transition) are marked invalid; their
rewards and actions are zeroed and their bootstrap states repeat the last
valid one so downstream forward passes stay finite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .envs import Transition, dump_transitions


@dataclass
class ChunkBatch:
    states: np.ndarray  # (B, dS)          s_t
    actions: np.ndarray  # (B, N, dA)
    rewards: np.ndarray  # (B, N)
    next_states: np.ndarray  # (B, N, dS)  next_states[:, n-1] = s_{t+n}
    valid: np.ndarray  # (B, N) bool, prefix-closed
    terminal_within: np.ndarray  # (B, N) bool, terminal at or before step i

    @property
    def bootstrap_states(self) -> np.ndarray:
        """s_{t+N} for every row."""
        return self.next_states[:, -1]

    @property
    def chunk_size(self) -> int:
        return self.actions.shape[1]

    def __len__(self) -> int:
        return self.states.shape[0]


class ReplayBuffer:
    def __init__(self, capacity: int, state_dim: int, action_dim: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self.states = np.zeros((capacity, state_dim))
        self.actions = np.zeros((capacity, action_dim))
        self.rewards = np.zeros(capacity)
        self.next_states = np.zeros((capacity, state_dim))
        self.terminals = np.zeros(capacity, dtype=bool)
        self.truncateds = np.zeros(capacity, dtype=bool)
        self.episode_ids = np.zeros(capacity, dtype=np.int64)
        self.size = 0
        self._head = 0
        self._episode = 0

    def __len__(self) -> int:
        return self.size

    def push(self, tr: Transition) -> None:
        i = self._head
        self.states[i] = tr.state
        self.actions[i] = tr.action
        self.rewards[i] = tr.reward
        self.next_states[i] = tr.next_state
        self.terminals[i] = tr.terminal
        self.truncateds[i] = tr.truncated
        self.episode_ids[i] = self._episode
        if tr.terminal or tr.truncated:
            self._episode += 1
        self._head = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def _physical(self, logical: np.ndarray) -> np.ndarray:
        oldest = (self._head - self.size) % self.capacity
        return (oldest + logical) % self.capacity

    def chunks_at(self, starts, chunk_size: int) -> ChunkBatch:
        """Chunks whose first step is the ``starts``-th oldest stored transition."""
        if self.size == 0:
            raise ValueError("replay buffer is empty")
        starts = np.asarray(starts, dtype=np.int64)
        offsets = starts[:, None] + np.arange(chunk_size)[None, :]
        in_range = offsets < self.size
        phys = self._physical(np.minimum(offsets, self.size - 1))
        same_episode = self.episode_ids[phys] == self.episode_ids[phys[:, :1]]
        valid = np.logical_and.accumulate(in_range & same_episode, axis=1)
        terminal_within = np.logical_or.accumulate(self.terminals[phys] & valid, axis=1)

        last_valid = valid.sum(axis=1) - 1
        rows = np.arange(len(starts))[:, None]
        fill_idx = np.where(valid, np.arange(chunk_size)[None, :], last_valid[:, None])
        next_phys = phys[rows, fill_idx]

        return ChunkBatch(
            states=self.states[phys[:, 0]],
            actions=np.where(valid[..., None], self.actions[phys], 0.0),
            rewards=np.where(valid, self.rewards[phys], 0.0),
            next_states=self.next_states[next_phys],
            valid=valid,
            terminal_within=terminal_within,
        )

    def sample_chunk_batch(self, batch_size: int, chunk_size: int, rng: np.random.Generator) -> ChunkBatch:
        """Uniform start indices over every stored step."""
        if self.size == 0:
            raise ValueError("cannot sample from an empty replay buffer")
        return self.chunks_at(rng.integers(0, self.size, size=batch_size), chunk_size)

    def transitions(self) -> list[Transition]:
        """Stored transitions, oldest first."""
        out = []
        for p in self._physical(np.arange(self.size)):
            out.append(
                Transition(
                    self.states[p].copy(),
                    self.actions[p].copy(),
                    float(self.rewards[p]),
                    self.next_states[p].copy(),
                    bool(self.terminals[p]),
                    bool(self.truncateds[p]),
                )
            )
        return out

    def snapshot(self, path) -> None:
        dump_transitions(self.transitions(), path)
