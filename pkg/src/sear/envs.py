"""Seedable toy environments with a shared ``reset``/``step`` interface.

``PointMass`` is a 2-D point moved by bounded displacements toward a goal
disc. ``ChainMDP`` is a five-state chain whose 1-D action sign picks a left or
right move, so chunk values are computable exactly by
enumerating move sequences (see :mod:`sear.oracles`).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np


class EpisodeOverError(RuntimeError):
    pass


@dataclass(frozen=True)
class EnvSpec:
    state_dim: int
    action_dim: int
    max_episode_steps: int
    reward_min: float
    reward_max: float


@dataclass
class Transition:
    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    terminal: bool = False
    truncated: bool = False


@dataclass
class Episode:
    transitions: list[Transition] = field(default_factory=list)
    successes: list[bool] = field(default_factory=list)
    replan_steps: list[int] = field(default_factory=list)

    @property
    def episode_return(self) -> float:
        return float(sum(t.reward for t in self.transitions))

    def __len__(self) -> int:
        return len(self.transitions)


def success(episode: Episode) -> bool:
    """True iff the success predicate holds at the episode's final step."""
    if not episode.successes:
        raise ValueError("success() of an empty episode")
    return bool(episode.successes[-1])


class Env:
    spec: EnvSpec

    def __init__(self):
        self.t = 0
        self.done = True
        self.obs: np.ndarray | None = None

    def _check_action(self, action) -> np.ndarray:
        if self.done:
            raise EpisodeOverError("step() called on a finished episode; call reset()")
        action = np.asarray(action, dtype=np.float64).reshape(self.spec.action_dim)
        if not np.isfinite(action).all() or np.any(np.abs(action) > 1.0):
            raise ValueError(f"action {action} outside [-1, 1]^{self.spec.action_dim}")
        return action

    def is_success(self) -> bool:
        return False


class PointMass(Env):
    """Point in [-1, 1]^2; ``x' = clip(x + step_size * a)``.

    Start region (random mode) is the box ``start_low``..``start_high``; the
    fixed start is its centre. Defaults put the goal 1.5 away from the fixed
    start, so a straight-line policy needs 25 full-magnitude steps.
    """

    start_low = np.array([-0.9, -0.3])
    start_high = np.array([-0.6, 0.3])

    def __init__(
        self,
        reward: str = "dense",
        start: str = "random",
        step_size: float = 0.06,
        goal=(0.75, 0.0),
        goal_radius: float = 0.1,
        max_episode_steps: int = 100,
    ):
        super().__init__()
        if reward not in ("dense", "sparse"):
            raise ValueError(f"reward must be 'dense' or 'sparse', got {reward!r}")
        if start not in ("fixed", "random"):
            raise ValueError(f"start must be 'fixed' or 'random', got {start!r}")
        self.reward_mode = reward
        self.start_mode = start
        self.step_size = float(step_size)
        self.goal = np.asarray(goal, dtype=np.float64)
        self.goal_radius = float(goal_radius)
        r_min = -2.0 * math.sqrt(2.0) if reward == "dense" else 0.0
        r_max = 0.0 if reward == "dense" else 1.0
        self.spec = EnvSpec(2, 2, int(max_episode_steps), r_min, r_max)

    def reset(self, seed: int | None = None) -> np.ndarray:
        if self.start_mode == "fixed":
            pos = 0.5 * (self.start_low + self.start_high)
        else:
            rng = np.random.default_rng(seed)
            pos = rng.uniform(self.start_low, self.start_high)
        self.obs = pos.astype(np.float64)
        self.t = 0
        self.done = False
        return self.obs.copy()

    def _distance(self, pos) -> float:
        return float(np.linalg.norm(pos - self.goal))

    def is_success(self) -> bool:
        return self._distance(self.obs) <= self.goal_radius

    def step(self, action):
        action = self._check_action(action)
        nxt = np.clip(self.obs + self.step_size * action, -1.0, 1.0)
        dist = self._distance(nxt)
        if self.reward_mode == "dense":
            reward = float(np.clip(-dist, self.spec.reward_min, 0.0))
        else:
            reward = 1.0 if dist <= self.goal_radius else 0.0
        self.obs = nxt
        self.t += 1
        truncated = self.t >= self.spec.max_episode_steps
        self.done = truncated
        return nxt.copy(), reward, False, truncated


# Reward for (state, move) with move 0 = left, 1 = right.
CHAIN_REWARDS = np.array(
    [
        [0.2, 0.0],
        [0.0, 0.0],
        [0.0, 0.1],
        [0.0, 0.3],
        [0.0, 1.0],
    ]
)

# Centres of the left and right action bins.
CHAIN_BIN_CENTERS = np.array([-0.5, 0.5])


def chain_move(action: float) -> int:
    """1 (right) for a positive action, else 0 (left)."""
    return 1 if action > 0.0 else 0


class ChainMDP(Env):
    """Five-state chain with one-hot observations and deterministic moves.

    The sign of the 1-D action picks a left or right move (:func:`chain_move`);
    walls clip. The reward depends on (state, move) through
    :data:`CHAIN_REWARDS`, so every chunk of N actions maps to one of 2^N move
    sequences and chunk values can be enumerated exactly. Episodes end by
    time limit, or by termination when ``terminal_state`` is reached.
    """

    n_states = 5

    def __init__(self, max_episode_steps: int = 20, start: str = "random", terminal_state: int | None = None):
        super().__init__()
        if start not in ("fixed", "random"):
            raise ValueError(f"start must be 'fixed' or 'random', got {start!r}")
        self.start_mode = start
        self.terminal_state = terminal_state
        self.rewards = CHAIN_REWARDS.copy()
        self.spec = EnvSpec(self.n_states, 1, int(max_episode_steps), float(self.rewards.min()), float(self.rewards.max()))
        self.position = 0

    def observe(self, position: int) -> np.ndarray:
        obs = np.zeros(self.n_states)
        obs[position] = 1.0
        return obs

    def reset(self, seed: int | None = None) -> np.ndarray:
        if self.start_mode == "fixed":
            self.position = self.n_states // 2
        else:
            self.position = int(np.random.default_rng(seed).integers(self.n_states))
        self.obs = self.observe(self.position)
        self.t = 0
        self.done = False
        return self.obs.copy()

    def step(self, action):
        action = self._check_action(action)
        move = chain_move(float(action[0]))
        reward = float(self.rewards[self.position, move])
        self.position = int(np.clip(self.position + 2 * move - 1, 0, self.n_states - 1))
        self.obs = self.observe(self.position)
        self.t += 1
        terminal = self.terminal_state is not None and self.position == self.terminal_state
        truncated = (not terminal) and self.t >= self.spec.max_episode_steps
        self.done = terminal or truncated
        return self.obs.copy(), reward, terminal, truncated


def make_env(name: str, **params) -> Env:
    if name == "point_mass":
        return PointMass(**params)
    if name == "chain":
        return ChainMDP(**params)
    raise ValueError(f"unknown env {name!r}; expected 'point_mass' or 'chain'")


def _to_jsonable(tr: Transition) -> dict:
    row = asdict(tr)
    row["state"] = [float(x) for x in tr.state]
    row["action"] = [float(x) for x in tr.action]
    row["next_state"] = [float(x) for x in tr.next_state]
    row["reward"] = float(tr.reward)
    row["terminal"] = bool(tr.terminal)
    row["truncated"] = bool(tr.truncated)
    return row


def dump_transitions(transitions: Iterable[Transition], path) -> None:
    """One JSON object per line: state, action, reward, next_state, terminal, truncated."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for tr in transitions:
            fh.write(json.dumps(_to_jsonable(tr), sort_keys=True) + "\n")


def load_transitions(path) -> list[Transition]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            row = json.loads(line)
            out.append(
                Transition(
                    state=np.asarray(row["state"], dtype=np.float64),
                    action=np.asarray(row["action"], dtype=np.float64),
                    reward=float(row["reward"]),
                    next_state=np.asarray(row["next_state"], dtype=np.float64),
                    terminal=bool(row["terminal"]),
                    truncated=bool(row["truncated"]),
                )
            )
    return out
