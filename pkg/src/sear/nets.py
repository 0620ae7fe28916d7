"""Actor and critic networks built on :mod:`sear.autodiff`.

The actor maps one state to a tanh-squashed diagonal Gaussian over a chunk of
``N`` actions. The causal transformer critic reads the token sequence
``[state, a_t, ..., a_{t+N-1}]`` and emits one value per chunk prefix: the
head at token ``n`` is ``Q^(n)``, which can only see the state and the first
``n`` actions.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


class Module:
    """Parameter container; parameters are discovered in attribute order."""

    def named_parameters(self, prefix: str = ""):
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{name}.")
            elif isinstance(value, list):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        if missing:
            raise KeyError(f"missing parameters: {sorted(missing)}")
        for name, p in own.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise ad.ShapeError(f"{name}: {arr.shape} != {p.shape}")
            p.data = arr.copy()

    def clone(self):
        return copy.deepcopy(self)


def _param(arr) -> Tensor:
    return Tensor(np.asarray(arr, dtype=np.float64), requires_grad=True)


def orthogonal(shape: tuple[int, int], gain: float, rng: np.random.Generator) -> np.ndarray:
    rows, cols = shape
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return np.ascontiguousarray(gain * q[:rows, :cols])


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, gain: float | None = None):
        if gain is None:
            bound = 1.0 / math.sqrt(n_in)
            self.weight = _param(rng.uniform(-bound, bound, (n_in, n_out)))
        else:
            self.weight = _param(orthogonal((n_in, n_out), gain, rng))
        self.bias = _param(np.zeros(n_out))

    def __call__(self, x: Tensor) -> Tensor:
        x = ad.as_tensor(x)
        if x.ndim == 2:
            return ad.matmul(x, self.weight) + self.bias
        lead = x.shape[:-1]
        flat = ad.matmul(x.reshape(-1, x.shape[-1]), self.weight) + self.bias
        return flat.reshape(*lead, self.weight.shape[1])


class LayerNorm(Module):
    def __init__(self, width: int):
        self.weight = _param(np.ones(width))
        self.bias = _param(np.zeros(width))

    def __call__(self, x: Tensor) -> Tensor:
        return ad.layer_norm(x, self.weight, self.bias)


class ResidualBlock(Module):
    """Pre-norm residual MLP block: ``h + fc2(silu(fc1(ln(h))))``."""

    def __init__(self, width: int, rng: np.random.Generator):
        self.norm = LayerNorm(width)
        self.fc1 = Linear(width, width, rng)
        self.fc2 = Linear(width, width, rng)

    def __call__(self, h: Tensor) -> Tensor:
        return h + self.fc2(ad.silu(self.fc1(self.norm(h))))


# ---------------------------------------------------------------- actor


@dataclass
class ChunkDistribution:
    """Pre-squash Gaussian parameters, each of shape (batch, N, action_dim)."""

    means: Tensor
    log_stds: Tensor

    @property
    def chunk_size(self) -> int:
        return self.means.shape[1]


class Actor(Module):
    def __init__(
        self,
        state_dim: int,
        action_dim: int,
        chunk_size: int,
        hidden: int = 512,
        blocks: int = 1,
        rng: np.random.Generator | None = None,
        log_std_init: float = 0.0,
    ):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.chunk_size = chunk_size
        self.inp = Linear(state_dim, hidden, rng)
        self.blocks = [ResidualBlock(hidden, rng) for _ in range(blocks)]
        self.norm = LayerNorm(hidden)
        self.head = Linear(hidden, 2 * chunk_size * action_dim, rng, gain=0.01)
        bias = self.head.bias.data.reshape(chunk_size, 2 * action_dim)
        bias[:, action_dim:] = log_std_init

    def __call__(self, states) -> ChunkDistribution:
        states = ad.as_tensor(states)
        if states.ndim != 2 or states.shape[1] != self.state_dim:
            raise ad.ShapeError(f"actor expects (batch, {self.state_dim}) states, got {states.shape}")
        h = ad.silu(self.inp(states))
        for block in self.blocks:
            h = block(h)
        out = self.head(self.norm(h)).reshape(states.shape[0], self.chunk_size, 2 * self.action_dim)
        means = out[:, :, : self.action_dim]
        log_stds = ad.clip(out[:, :, self.action_dim :], LOG_STD_MIN, LOG_STD_MAX)
        return ChunkDistribution(means, log_stds)


def tanh_log_det(u: Tensor) -> Tensor:
    """log(1 - tanh(u)^2), stable for large |u|."""
    return 2.0 * (math.log(2.0) - u - ad.softplus(-2.0 * u))


def sample_chunk(dist: ChunkDistribution, noise) -> tuple[Tensor, Tensor]:
    """Reparameterized sample and per-action log-probabilities.

    Returns actions of shape (batch, N, action_dim) and log-probs of shape
    (batch, N), one entry per action with the squashing correction summed over
    action dimensions.
    """
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != dist.means.shape:
        raise ad.ShapeError(f"noise {noise.shape} does not match distribution {dist.means.shape}")
    if not np.isfinite(noise).all():
        raise ad.NonFiniteError("non-finite noise")
    pre = dist.means + ad.exp(dist.log_stds) * noise
    actions = ad.tanh(pre)
    gauss = -0.5 * noise * noise - _HALF_LOG_2PI - dist.log_stds
    log_probs = (gauss - tanh_log_det(pre)).sum(axis=-1)
    return actions, log_probs


def log_prob(dist: ChunkDistribution, actions) -> Tensor:
    """Per-action log-density of given squashed actions in (-1, 1)."""
    actions = np.asarray(actions, dtype=np.float64)
    pre = Tensor(np.arctanh(actions))
    std = ad.exp(dist.log_stds)
    z = (pre - dist.means) / std
    gauss = -0.5 * z * z - _HALF_LOG_2PI - dist.log_stds
    return (gauss - tanh_log_det(pre)).sum(axis=-1)


def deterministic_chunk(dist: ChunkDistribution) -> np.ndarray:
    return np.tanh(dist.means.data)


# ---------------------------------------------------------------- critics


def causal_mask(length: int) -> np.ndarray:
    """Boolean (length, length) mask, true where query i may attend key j (j <= i)."""
    return np.tril(np.ones((length, length), dtype=bool))


class CausalSelfAttention(Module):
    def __init__(self, width: int, heads: int, rng: np.random.Generator):
        if width % heads:
            raise ValueError(f"width {width} not divisible by {heads} heads")
        self.heads = heads
        self.qkv = Linear(width, 3 * width, rng)
        self.proj = Linear(width, width, rng)

    def __call__(self, x: Tensor) -> Tensor:
        batch, length, width = x.shape
        dh = width // self.heads
        qkv = self.qkv(x).reshape(batch, length, 3, self.heads, dh).transpose(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        scores = ad.matmul(q, k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(dh))
        scores = ad.masked_fill(scores, np.broadcast_to(~causal_mask(length), scores.shape), ad.MASK_VALUE)
        attn = ad.softmax(scores, axis=-1)
        out = ad.matmul(attn, v).transpose(0, 2, 1, 3).reshape(batch, length, width)
        return self.proj(out)


class TransformerBlock(Module):
    def __init__(self, width: int, heads: int, ffn: int, rng: np.random.Generator):
        self.norm1 = LayerNorm(width)
        self.attn = CausalSelfAttention(width, heads, rng)
        self.norm2 = LayerNorm(width)
        self.fc1 = Linear(width, ffn, rng)
        self.fc2 = Linear(ffn, width, rng)

    def __call__(self, x: Tensor) -> Tensor:
        x = x + self.attn(self.norm1(x))
        return x + self.fc2(ad.silu(self.fc1(self.norm2(x))))


def _check_critic_inputs(states, actions, state_dim, action_dim, chunk_size):
    states, actions = ad.as_tensor(states), ad.as_tensor(actions)
    if states.ndim != 2 or states.shape[1] != state_dim:
        raise ad.ShapeError(f"critic expects (batch, {state_dim}) states, got {states.shape}")
    if actions.shape != (states.shape[0], chunk_size, action_dim):
        raise ad.ShapeError(
            f"critic expects ({states.shape[0]}, {chunk_size}, {action_dim}) actions, got {actions.shape}"
        )
    return states, actions


class TransformerCritic(Module):
    """Causal transformer returning ``(batch, N)`` prefix values Q^(1..N)."""

    def __init__(
        self,
        state_dim: int,
        action_dim: int,
        chunk_size: int,
        width: int = 512,
        heads: int = 16,
        blocks: int = 2,
        ffn: int | None = None,
        rng: np.random.Generator | None = None,
    ):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.chunk_size = chunk_size
        self.state_embed = Linear(state_dim, width, rng)
        self.action_embed = Linear(action_dim, width, rng)
        self.positions = _param(0.02 * rng.standard_normal((chunk_size + 1, width)))
        self.blocks = [TransformerBlock(width, heads, ffn or 2 * width, rng) for _ in range(blocks)]
        self.norm = LayerNorm(width)
        self.head = Linear(width, 1, rng, gain=0.01)

    def __call__(self, states, actions) -> Tensor:
        states, actions = _check_critic_inputs(
            states, actions, self.state_dim, self.action_dim, self.chunk_size
        )
        batch = states.shape[0]
        s_tok = self.state_embed(states).reshape(batch, 1, -1)
        a_tok = self.action_embed(actions)
        x = ad.concat([s_tok, a_tok], axis=1) + self.positions
        for block in self.blocks:
            x = block(x)
        q = self.head(self.norm(x[:, 1:, :]))
        return q.reshape(batch, self.chunk_size)


class MLPCritic(Module):
    """Flattened (state, chunk) -> single Q^(N); returned as shape (batch, 1)."""

    def __init__(
        self,
        state_dim: int,
        action_dim: int,
        chunk_size: int,
        hidden: int = 512,
        blocks: int = 2,
        rng: np.random.Generator | None = None,
    ):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.chunk_size = chunk_size
        self.inp = Linear(state_dim + chunk_size * action_dim, hidden, rng)
        self.blocks = [ResidualBlock(hidden, rng) for _ in range(blocks)]
        self.norm = LayerNorm(hidden)
        self.head = Linear(hidden, 1, rng, gain=0.01)

    def __call__(self, states, actions) -> Tensor:
        states, actions = _check_critic_inputs(
            states, actions, self.state_dim, self.action_dim, self.chunk_size
        )
        batch = states.shape[0]
        flat = ad.concat([states, actions.reshape(batch, -1)], axis=1)
        h = ad.silu(self.inp(flat))
        for block in self.blocks:
            h = block(h)
        return self.head(self.norm(h))


def polyak_update(target: Module, online: Module, tau: float) -> None:
    """In-place ``target <- tau * online + (1 - tau) * target``."""
    pairs = list(zip(target.parameters(), online.parameters()))
    if len(pairs) != len(online.parameters()) or len(pairs) != len(target.parameters()):
        raise ad.ShapeError("target and online networks have different parameter counts")
    for t, o in pairs:
        if t.shape != o.shape:
            raise ad.ShapeError(f"polyak: {t.shape} != {o.shape}")
    for t, o in pairs:
        if tau == 1.0:
            t.data = o.data.copy()
        elif tau != 0.0:
            t.data = tau * o.data + (1.0 - tau) * t.data
