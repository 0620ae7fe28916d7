"""Chunked max-entropy actor-critic: targets, losses, collection, training loop.

Shapes used throughout: B rows, chunk size N, action dim dA. Critic outputs
are (B, N) for the transformer critic (one value per prefix) and (B, 1) for
the MLP critic (full-chunk value only).
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import AdamW, NonFiniteError, Tensor, frozen, no_grad
from .config import RunConfig, save_config
from .envs import Env, Episode, Transition, make_env, success
from .nets import (
    Actor,
    MLPCritic,
    Module,
    TransformerCritic,
    deterministic_chunk,
    polyak_update,
    sample_chunk,
)
from .replay import ChunkBatch, ReplayBuffer

METRIC_COLUMNS = (
    "env_step",
    "loss_critic",
    "loss_actor",
    "alpha",
    "chunk_entropy",
    "eval_success",
    "eval_return",
    "wallclock",
)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class AblationSwitches:
    chunk_size: int = 10
    eval_receding_horizon: int = 5
    multi_horizon: bool = True
    random_replanning: bool = True
    transformer_critic: bool = True

    def __post_init__(self):
        if self.chunk_size < 1:
            raise ValueError("chunk_size must be >= 1")
        if not 1 <= self.eval_receding_horizon <= self.chunk_size:
            raise ValueError(f"receding horizon {self.eval_receding_horizon} outside [1, {self.chunk_size}]")

    @classmethod
    def from_config(cls, config: RunConfig) -> "AblationSwitches":
        return cls(
            chunk_size=config.chunk_size,
            eval_receding_horizon=config.receding_horizon,
            multi_horizon=config.switches.multi_horizon,
            random_replanning=config.switches.random_replanning,
            transformer_critic=config.switches.transformer_critic,
        )


class Temperature:
    def __init__(self, init_alpha: float, target_entropy: float):
        self.log_alpha = Tensor(np.array(np.log(init_alpha)), requires_grad=True)
        self.target_entropy = float(target_entropy)

    @property
    def alpha(self) -> float:
        return float(np.exp(self.log_alpha.data))


@dataclass
class TargetBatch:
    values: np.ndarray  # (B, N) G^(n) in column n-1
    mask: np.ndarray  # (B, N) bool, horizons that enter the loss


def _as_list(x) -> list:
    return list(x) if isinstance(x, (list, tuple)) else [x]


def _discounts(gamma: float, n: int) -> np.ndarray:
    return gamma ** np.arange(n, dtype=np.float64)


def _full_chunk_value(critic: Module, states, actions) -> Tensor:
    """Q^(N) as a (B,) tensor for either critic type."""
    q = critic(states, actions)
    return q[:, q.shape[1] - 1]


def compute_targets(
    batch: ChunkBatch,
    actor: Actor,
    target_critics,
    alpha: float,
    gamma: float,
    noise: np.ndarray | None = None,
    rng: np.random.Generator | None = None,
    last_only: bool = False,
) -> TargetBatch:
    """Multi-horizon regression targets, gradient-free.

    ``noise`` has shape (B, H, N, dA) where H is N (all horizons) or 1 when
    ``last_only``; one chunk is drawn per (row, horizon) at s_{t+n}.
    """
    if not 0.0 <= gamma < 1.0:
        raise ValueError(f"gamma must lie in [0, 1), got {gamma}")
    critics = _as_list(target_critics)
    n = batch.chunk_size
    if actor.chunk_size != n or any(c.chunk_size != n for c in critics):
        raise ValueError("actor, target critics and batch disagree on chunk size")
    rows = len(batch)
    horizons = np.array([n]) if last_only else np.arange(1, n + 1)
    cols = horizons - 1
    boot_states = batch.next_states[:, cols].reshape(rows * len(cols), -1)
    noise_shape = (rows, len(cols), n, actor.action_dim)
    if noise is None:
        if rng is None:
            raise ValueError("compute_targets needs either noise or rng")
        noise = rng.standard_normal(noise_shape)
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != noise_shape:
        raise ad.ShapeError(f"target noise must have shape {noise_shape}, got {noise.shape}")

    disc = _discounts(gamma, n)
    with no_grad():
        dist = actor(boot_states)
        actions, logp = sample_chunk(dist, noise.reshape(rows * len(cols), n, -1))
        q = np.min([_full_chunk_value(c, boot_states, actions).data for c in critics], axis=0)
        soft = (q - alpha * (logp.data @ disc)).reshape(rows, len(cols))

    partial_returns = np.cumsum(batch.rewards * disc, axis=1)
    bootstrap = (gamma ** horizons) * (~batch.terminal_within[:, cols]) * soft
    values = np.zeros((rows, n))
    mask = np.zeros((rows, n), dtype=bool)
    values[:, cols] = partial_returns[:, cols] + bootstrap
    mask[:, cols] = batch.valid[:, cols]
    return TargetBatch(values, mask)


def critic_loss(predictions, targets: TargetBatch, multi_horizon: bool = True) -> Tensor:
    """Sum over critics of masked squared error averaged over valid (row, horizon) cells, halved.

    ``predictions`` is one (B, N) or (B, 1) tensor or a list of them. (B, 1)
    predictions, and every prediction when ``multi_horizon`` is off, are scored
    on horizon N only.
    """
    total = None
    rows, n = targets.values.shape
    for pred in _as_list(predictions):
        if pred.ndim != 2 or pred.shape[0] != rows or pred.shape[1] not in (1, n):
            raise ad.ShapeError(f"predictions {pred.shape} do not match targets {targets.values.shape}")
        if multi_horizon and pred.shape[1] == n:
            g, m = targets.values, targets.mask
        else:
            pred = pred[:, pred.shape[1] - 1 :]
            g, m = targets.values[:, -1:], targets.mask[:, -1:]
        count = int(m.sum())
        if count == 0:
            raise ValueError("critic loss over a batch with no valid horizons")
        err = ad.square(pred - g) * m.astype(np.float64)
        term = err.sum() * (0.5 / count)
        total = term if total is None else total + term
    return total


def actor_loss(states, actor: Actor, critics, alpha: float, gamma: float, noise) -> tuple[Tensor, np.ndarray]:
    """Reparameterized chunk objective; returns (loss, per-action log-probs (B, N))."""
    critics = _as_list(critics)
    if any(c.chunk_size != actor.chunk_size for c in critics):
        raise ValueError("actor and critic disagree on chunk size")
    critic_params = [p for c in critics for p in c.parameters()]
    with frozen(critic_params):
        dist = actor(states)
        actions, logp = sample_chunk(dist, noise)
        q = _full_chunk_value(critics[0], states, actions)
        for c in critics[1:]:
            q = ad.minimum(q, _full_chunk_value(c, states, actions))
        entropy_term = (logp * _discounts(gamma, actor.chunk_size)).sum(axis=1)
        loss = (alpha * entropy_term - q).mean()
    return loss, logp.data


def temperature_loss(log_probs: np.ndarray, temp: Temperature) -> Tensor:
    chunk_logp = np.asarray(log_probs, dtype=np.float64).sum(axis=1)
    return (-(ad.exp(temp.log_alpha) * (chunk_logp + temp.target_entropy))).mean()


def temperature_update(log_probs: np.ndarray, temp: Temperature, optimizer: AdamW) -> float:
    loss = temperature_loss(log_probs, temp)
    optimizer.step(ad.backward(loss, [temp.log_alpha]))
    return loss.item()


# ---------------------------------------------------------------- rollouts


def _policy_chunk(actor: Actor, state: np.ndarray, rng: np.random.Generator | None) -> np.ndarray:
    with no_grad():
        dist = actor(state[None, :])
        if rng is None:
            return deterministic_chunk(dist)[0]
        actions, _ = sample_chunk(dist, rng.standard_normal(dist.means.shape))
    return actions.data[0]


def _execute(env: Env, state: np.ndarray, chunk: np.ndarray, k: int, trace: list[Transition], successes=None):
    for action in chunk[:k]:
        nxt, reward, terminal, truncated = env.step(action)
        trace.append(Transition(state, action.copy(), reward, nxt, terminal, truncated))
        if successes is not None:
            successes.append(env.is_success())
        state = nxt
        if terminal or truncated:
            break
    return state


def collect_step(
    env: Env,
    actor: Actor,
    rng: np.random.Generator,
    switches: AblationSwitches,
    random_actions: bool = False,
) -> list[Transition]:
    """Sample one chunk at the current state and execute a prefix of it."""
    n = switches.chunk_size
    state = env.obs.copy()
    if random_actions:
        chunk = rng.uniform(-1.0, 1.0, size=(n, env.spec.action_dim))
    else:
        chunk = _policy_chunk(actor, state, rng)
    k = int(rng.integers(1, n + 1)) if switches.random_replanning else n
    out: list[Transition] = []
    _execute(env, state, chunk, k, out)
    return out


def receding_horizon_rollout(env: Env, actor: Actor, k: int, n: int | None = None, seed: int | None = None) -> Episode:
    """Deterministic episode: predict N actions, run the first k, replan."""
    n = actor.chunk_size if n is None else n
    if n != actor.chunk_size:
        raise ValueError(f"actor emits chunks of {actor.chunk_size}, not {n}")
    if not 1 <= k <= n:
        raise ValueError(f"receding horizon k={k} outside [1, {n}]")
    state = env.reset(seed)
    episode = Episode()
    while not env.done:
        episode.replan_steps.append(env.t)
        state = _execute(env, state, _policy_chunk(actor, state, None), k, episode.transitions, episode.successes)
    return episode


@dataclass
class EvalResult:
    success_rate: float
    mean_return: float
    episodes: list[Episode] = field(default_factory=list, repr=False)


def evaluate(actor: Actor, env: Env, k: int, episodes: int, seed: int) -> EvalResult:
    """Success is read at each episode's final step; episode i uses seed ``seed + i``."""
    runs = [receding_horizon_rollout(env, actor, k, seed=seed + i) for i in range(episodes)]
    return EvalResult(
        success_rate=float(np.mean([success(ep) for ep in runs])),
        mean_return=float(np.mean([ep.episode_return for ep in runs])),
        episodes=runs,
    )


# ---------------------------------------------------------------- agent


class Agent:
    """Actor, twin critics with Polyak targets, temperature, and their optimizers."""

    def __init__(self, state_dim: int, action_dim: int, config: RunConfig, rng: np.random.Generator):
        self.config = config
        self.switches = AblationSwitches.from_config(config)
        net = config.network
        n = config.chunk_size
        self.actor = Actor(state_dim, action_dim, n, net.actor_hidden, net.actor_blocks, rng, net.log_std_init)
        self.critics = [self._make_critic(state_dim, action_dim, rng) for _ in range(2)]
        self.targets = [c.clone() for c in self.critics]
        target_entropy = -float(n * action_dim) if config.target_entropy is None else config.target_entropy
        self.temperature = Temperature(config.init_alpha, target_entropy)
        opt = dict(lr=config.lr, beta1=config.beta1, beta2=config.beta2, eps=config.adam_eps)
        self.actor_opt = AdamW(self.actor.parameters(), weight_decay=config.weight_decay, **opt)
        self.critic_opts = [AdamW(c.parameters(), weight_decay=config.weight_decay, **opt) for c in self.critics]
        self.alpha_opt = AdamW([self.temperature.log_alpha], weight_decay=0.0, **opt)

    def _make_critic(self, state_dim, action_dim, rng):
        net, n = self.config.network, self.config.chunk_size
        if self.switches.transformer_critic:
            return TransformerCritic(
                state_dim, action_dim, n, net.critic_width, net.critic_heads, net.critic_blocks, net.critic_ffn, rng
            )
        return MLPCritic(state_dim, action_dim, n, net.mlp_critic_hidden, net.mlp_critic_blocks, rng)

    def update(self, batch: ChunkBatch, rng: np.random.Generator) -> dict[str, float]:
        cfg = self.config
        multi = self.switches.multi_horizon and self.switches.transformer_critic
        alpha = self.temperature.alpha
        targets = compute_targets(batch, self.actor, self.targets, alpha, cfg.gamma, rng=rng, last_only=not multi)

        loss_c = 0.0
        for critic, opt in zip(self.critics, self.critic_opts):
            loss = critic_loss(critic(batch.states, batch.actions), targets, multi_horizon=multi)
            opt.step(ad.backward(loss, critic.parameters()))
            loss_c += loss.item()

        noise = rng.standard_normal((len(batch), cfg.chunk_size, self.actor.action_dim))
        # Keep the critics frozen through backward too, so no critic-weight gradients are formed.
        with frozen([p for c in self.critics for p in c.parameters()]):
            loss_a, logp = actor_loss(batch.states, self.actor, self.critics, alpha, cfg.gamma, noise)
            self.actor_opt.step(ad.backward(loss_a, self.actor.parameters()))

        temperature_update(logp, self.temperature, self.alpha_opt)
        for target, critic in zip(self.targets, self.critics):
            polyak_update(target, critic, cfg.tau)
        return {
            "loss_critic": loss_c,
            "loss_actor": loss_a.item(),
            "chunk_entropy": float(-logp.sum(axis=1).mean()),
        }

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {}
        for prefix, module in [("actor", self.actor)] + [
            (f"{kind}{j}", m) for kind, group in (("critic", self.critics), ("target", self.targets)) for j, m in enumerate(group)
        ]:
            out.update({f"{prefix}.{k}": v for k, v in module.state_dict().items()})
        out["log_alpha"] = np.asarray(self.temperature.log_alpha.data).copy()
        return out

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        modules = [("actor", self.actor)]
        modules += [(f"critic{j}", m) for j, m in enumerate(self.critics)]
        modules += [(f"target{j}", m) for j, m in enumerate(self.targets)]
        for prefix, module in modules:
            module.load_state_dict({k[len(prefix) + 1 :]: v for k, v in state.items() if k.startswith(prefix + ".")})
        self.temperature.log_alpha.data = np.asarray(state["log_alpha"], dtype=np.float64).copy()


def checkpoint_meta(config: RunConfig, env_step: int, state_dim: int, action_dim: int) -> dict:
    return {
        "env_step": env_step,
        "state_dim": state_dim,
        "action_dim": action_dim,
        "chunk_size": config.chunk_size,
        "switches": config.to_dict()["switches"],
        "network": config.to_dict()["network"],
        "env": config.to_dict()["env"],
    }


def save_agent(agent: Agent, path, env_step: int) -> None:
    spec_dims = (agent.actor.state_dim, agent.actor.action_dim)
    ad.save_checkpoint(path, agent.state_dict(), checkpoint_meta(agent.config, env_step, *spec_dims))


def load_agent(path, config: RunConfig | None = None) -> tuple[Agent, dict]:
    """Rebuild an agent from a checkpoint; network sizes come from its header."""
    arrays, meta = ad.load_checkpoint(path)
    from .config import config_from_dict

    base = (config or RunConfig()).to_dict()
    base.update(chunk_size=meta["chunk_size"], switches=meta["switches"], network=meta["network"], env=meta["env"])
    base["receding_horizon"] = min(base["receding_horizon"], meta["chunk_size"])
    agent = Agent(meta["state_dim"], meta["action_dim"], config_from_dict(base), np.random.default_rng(0))
    agent.load_state_dict(arrays)
    return agent, meta


# ---------------------------------------------------------------- training loop


def _episode_seed(seed: int, episode: int) -> int:
    return int(np.random.SeedSequence([seed, 7, episode]).generate_state(1)[0])


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


@dataclass
class TrainLog:
    rows: list[dict] = field(default_factory=list)
    run_dir: Path | None = None
    agent: "Agent | None" = None

    def final(self) -> dict:
        return self.rows[-1]

    def success_curve(self) -> tuple[np.ndarray, np.ndarray]:
        steps = np.array([r["env_step"] for r in self.rows])
        return steps, np.array([r["eval_success"] for r in self.rows])


def _write_diagnostics(run_dir: Path | None, info: dict) -> None:
    if run_dir is None:
        return
    (run_dir / "diagnostics.json").write_text(json.dumps(info, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def train(config: RunConfig, run_dir=None, seed: int | None = None, progress=None) -> TrainLog:
    """Interleaved collect / update loop at one update per environment step.

    A new chunk is collected whenever the buffer holds fewer transitions than
    the number of updates performed so far. Metric rows are written at every
    evaluation point (every ``eval_every`` env steps and at the end).
    """
    config.validate()
    seed = config.seeds[0] if seed is None else int(seed)
    run_dir = Path(run_dir) if run_dir is not None else None
    if run_dir is not None:
        (run_dir / "checkpoints").mkdir(parents=True, exist_ok=True)
        save_config(config, run_dir / "config.json")

    env = make_env(config.env.name, **config.env.params)
    eval_env = make_env(config.env.name, **config.env.params)
    spec = env.spec
    agent = Agent(spec.state_dim, spec.action_dim, config, np.random.default_rng([seed, 0]))
    collect_rng = np.random.default_rng([seed, 1])
    update_rng = np.random.default_rng([seed, 2])
    buffer = ReplayBuffer(min(config.buffer_capacity, config.total_timesteps), spec.state_dim, spec.action_dim)
    switches = agent.switches

    log = TrainLog(run_dir=run_dir)
    csv_file = None
    writer = None
    if run_dir is not None:
        csv_file = open(run_dir / "metrics.csv", "w", newline="", encoding="utf-8")
        writer = csv.writer(csv_file, lineterminator="\n")
        writer.writerow(METRIC_COLUMNS)
        csv_file.flush()

    start = time.perf_counter()
    episode = 0
    env.reset(_episode_seed(seed, episode))
    env_steps = 0
    updates = 0
    next_eval = config.eval_every
    pending: dict[str, list[float]] = {"loss_critic": [], "loss_actor": [], "chunk_entropy": []}
    last_ckpt = None
    stopped = False

    def record(step: int) -> None:
        nonlocal last_ckpt
        ev = evaluate(agent.actor, eval_env, config.receding_horizon, config.eval_episodes, config.eval_seed)
        row = {
            "env_step": step,
            "loss_critic": float(np.mean(pending["loss_critic"])) if pending["loss_critic"] else None,
            "loss_actor": float(np.mean(pending["loss_actor"])) if pending["loss_actor"] else None,
            "alpha": agent.temperature.alpha,
            "chunk_entropy": float(np.mean(pending["chunk_entropy"])) if pending["chunk_entropy"] else None,
            "eval_success": ev.success_rate,
            "eval_return": ev.mean_return,
            "wallclock": time.perf_counter() - start if config.log_wallclock else None,
        }
        for v in pending.values():
            v.clear()
        log.rows.append(row)
        if writer is not None:
            writer.writerow([_fmt(row[c]) for c in METRIC_COLUMNS])
            csv_file.flush()
            last_ckpt = run_dir / "checkpoints" / f"step_{step:08d}.ckpt"
            save_agent(agent, last_ckpt, step)
        if progress is not None:
            progress(row)

    try:
        while env_steps < config.total_timesteps:
            if env_steps <= updates:
                if env.done:
                    episode += 1
                    env.reset(_episode_seed(seed, episode))
                explore = env_steps < config.seed_timesteps
                for tr in collect_step(env, agent.actor, collect_rng, switches, random_actions=explore):
                    if env_steps >= config.total_timesteps:
                        break
                    buffer.push(tr)
                    env_steps += 1
                while env_steps >= next_eval:
                    record(next_eval)
                    next_eval += config.eval_every
                if config.stop_success is not None and log.rows and log.rows[-1]["eval_success"] >= config.stop_success:
                    stopped = True
                    break
                continue
            if env_steps >= config.seed_timesteps:
                for _ in range(config.utd):
                    batch = buffer.sample_chunk_batch(config.batch_size, config.chunk_size, update_rng)
                    stats = agent.update(batch, update_rng)
                    if not all(np.isfinite(v) for v in stats.values()):
                        raise NonFiniteError(f"non-finite training statistics {stats}")
                    for key, value in stats.items():
                        pending[key].append(value)
            updates += 1
        if not stopped and (not log.rows or log.rows[-1]["env_step"] != env_steps):
            record(env_steps)
    except NonFiniteError as exc:
        info = {
            "error": str(exc),
            "env_step": env_steps,
            "updates": updates,
            "last_checkpoint": str(last_ckpt) if last_ckpt else None,
        }
        _write_diagnostics(run_dir, info)
        raise TrainingDiverged(
            f"non-finite value at env step {env_steps}: {exc}; last good checkpoint: {info['last_checkpoint']}"
        ) from exc
    finally:
        if csv_file is not None:
            csv_file.close()

    if run_dir is not None:
        save_agent(agent, run_dir / "checkpoints" / "final.ckpt", env_steps)
    log.agent = agent
    return log
