"""Reference computations written without the autodiff engine.

Everything here is plain numpy (or plain Python) and is used only to check the
main implementation: network forwards from raw parameter dicts, a textbook
single-step soft actor-critic update, exact chunk values on the chain MDP,
and sort-based IQM / loop-based bootstrap statistics.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

# ---------------------------------------------------------------- network forwards


def _silu(x):
    return x / (1.0 + np.exp(-x))


def _ln(x, w, b, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * w + b


def _lin(p, name, x):
    return x @ p[f"{name}.weight"] + p[f"{name}.bias"]


def _mlp_trunk(p, x):
    h = _silu(_lin(p, "inp", x))
    i = 0
    while f"blocks.{i}.fc1.weight" in p:
        pre = f"blocks.{i}"
        z = _ln(h, p[f"{pre}.norm.weight"], p[f"{pre}.norm.bias"])
        h = h + _lin(p, f"{pre}.fc2", _silu(_lin(p, f"{pre}.fc1", z)))
        i += 1
    return _ln(h, p["norm.weight"], p["norm.bias"])


def actor_forward(p: dict, states: np.ndarray, chunk_size: int, action_dim: int):
    """(means, log_stds), each (B, N, dA), from an actor parameter dict."""
    out = _lin(p, "head", _mlp_trunk(p, states)).reshape(len(states), chunk_size, 2 * action_dim)
    return out[..., :action_dim], np.clip(out[..., action_dim:], -5.0, 2.0)


def transformer_critic_forward(p: dict, states: np.ndarray, actions: np.ndarray, heads: int) -> np.ndarray:
    batch, n, _ = actions.shape
    x = np.concatenate([_lin(p, "state_embed", states)[:, None, :], _lin(p, "action_embed", actions)], axis=1)
    x = x + p["positions"]
    length, width = n + 1, x.shape[-1]
    dh = width // heads
    allowed = np.tril(np.ones((length, length), dtype=bool))
    i = 0
    while f"blocks.{i}.fc1.weight" in p:
        pre = f"blocks.{i}"
        z = _ln(x, p[f"{pre}.norm1.weight"], p[f"{pre}.norm1.bias"])
        qkv = _lin(p, f"{pre}.attn.qkv", z)
        q, k, v = (qkv[..., j * width : (j + 1) * width].reshape(batch, length, heads, dh) for j in range(3))
        out = np.zeros((batch, length, heads, dh))
        for h in range(heads):
            scores = np.einsum("btd,bsd->bts", q[:, :, h], k[:, :, h]) / math.sqrt(dh)
            scores = np.where(allowed, scores, -np.inf)
            scores = scores - scores.max(axis=-1, keepdims=True)
            w = np.exp(scores)
            w /= w.sum(axis=-1, keepdims=True)
            out[:, :, h] = np.einsum("bts,bsd->btd", w, v[:, :, h])
        x = x + _lin(p, f"{pre}.attn.proj", out.reshape(batch, length, width))
        z = _ln(x, p[f"{pre}.norm2.weight"], p[f"{pre}.norm2.bias"])
        x = x + _lin(p, f"{pre}.fc2", _silu(_lin(p, f"{pre}.fc1", z)))
        i += 1
    x = _ln(x[:, 1:], p["norm.weight"], p["norm.bias"])
    return _lin(p, "head", x)[..., 0]


def mlp_critic_forward(p: dict, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
    flat = np.concatenate([states, actions.reshape(len(actions), -1)], axis=1)
    return _lin(p, "head", _mlp_trunk(p, flat))


# ---------------------------------------------------------------- single-step SAC


def sac_logp(mean, log_std, eps):
    """tanh-Gaussian sample and log-density summed over the trailing action axis."""
    std = np.exp(log_std)
    u = mean + std * eps
    a = np.tanh(u)
    gauss = -0.5 * eps**2 - log_std - 0.5 * np.log(2.0 * np.pi)
    # log(1 - tanh(u)^2) = -2 log cosh(u)
    return a, (gauss + 2.0 * np.log(np.cosh(u))).sum(axis=-1)


def sac_target(reward, next_state, terminal, actor_fn, q_fns, alpha, gamma, eps):
    """y = r + gamma (1 - d) [min_j Q_j(s', a') - alpha log pi(a'|s')], a' ~ pi(s')."""
    mean, log_std = actor_fn(next_state)
    a, logp = sac_logp(mean, log_std, eps)
    q = np.minimum(q_fns[0](next_state, a), q_fns[1](next_state, a))
    return reward + gamma * (1.0 - terminal) * (q - alpha * logp)


def sac_critic_loss(q_preds: list[np.ndarray], y: np.ndarray) -> float:
    return float(sum(0.5 * np.mean((q - y) ** 2) for q in q_preds))


def sac_actor_loss(state, actor_fn, q_fns, alpha, eps) -> tuple[float, np.ndarray]:
    mean, log_std = actor_fn(state)
    a, logp = sac_logp(mean, log_std, eps)
    q = np.minimum(q_fns[0](state, a), q_fns[1](state, a))
    return float(np.mean(alpha * logp - q)), logp


# ---------------------------------------------------------------- chain MDP exact values


def _phi(x: float) -> float:
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


def chain_bin_probs(mean, std) -> np.ndarray:
    """Pr(left), Pr(right) for a = tanh(mean + std * z); the move is right iff a > 0."""
    mean = np.asarray(mean, dtype=np.float64)
    std = np.broadcast_to(np.asarray(std, dtype=np.float64), mean.shape)
    out = np.zeros(mean.shape + (2,))
    for idx in np.ndindex(mean.shape):
        left = _phi(-float(mean[idx]) / float(std[idx]))
        out[idx] = (left, 1.0 - left)
    return out


def _bin(a: float) -> int:
    return 1 if a > 0.0 else 0


def _walk(rewards: np.ndarray, start: int, moves, gamma: float) -> tuple[float, int]:
    ret, pos = 0.0, start
    for i, m in enumerate(moves):
        ret += gamma**i * rewards[pos, m]
        pos = min(max(pos + 2 * m - 1, 0), rewards.shape[0] - 1)
    return ret, pos


def chain_state_values(rewards: np.ndarray, move_probs: np.ndarray, gamma: float) -> np.ndarray:
    """Values of a chunk policy that picks moves with ``move_probs`` (S, N, 2) from each replanning state.

    Enumerates all 2^N move sequences and solves v = c + P v, where c(s) is
    the expected discounted chunk reward and P(s, s') = gamma^N Pr(chunk ends in s').
    """
    n_states, n, _ = move_probs.shape
    c = np.zeros(n_states)
    P = np.zeros((n_states, n_states))
    for s in range(n_states):
        for moves in itertools.product(range(2), repeat=n):
            prob = math.prod(move_probs[s, i, m] for i, m in enumerate(moves))
            ret, end = _walk(rewards, s, moves, gamma)
            c[s] += prob * ret
            P[s, end] += prob * gamma**n
    return np.linalg.solve(np.eye(n_states) - P, c)


def chain_prefix_value(rewards: np.ndarray, actions, start: int, gamma: float, v: np.ndarray) -> float:
    """Q^(n)(start, a_1..a_n): the n moves are deterministic, then the policy takes over."""
    moves = [_bin(float(a)) for a in np.ravel(actions)]
    ret, end = _walk(rewards, start, moves, gamma)
    return ret + gamma ** len(moves) * v[end]


def chain_exact_q(rewards, move_probs, gamma, state: int, actions) -> float:
    return chain_prefix_value(rewards, actions, state, gamma, chain_state_values(rewards, move_probs, gamma))


# ---------------------------------------------------------------- IQM / bootstrap


def iqm_sorted_trim(values) -> float:
    xs = sorted(float(x) for x in np.ravel(values))
    if not xs:
        raise ValueError("empty")
    k = len(xs) // 4
    kept = xs[k : len(xs) - k]
    return math.fsum(kept) / len(kept)


def _percentile_linear(sorted_xs: list[float], q: float) -> float:
    h = (len(sorted_xs) - 1) * q
    lo = math.floor(h)
    hi = min(lo + 1, len(sorted_xs) - 1)
    return sorted_xs[lo] + (h - lo) * (sorted_xs[hi] - sorted_xs[lo])


def bootstrap_loop(values, resamples: int, level: float, seed: int) -> tuple[float, float]:
    """Percentile bootstrap of the IQM; rows are runs, columns tasks (resampled per task)."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    runs, tasks = arr.shape
    rng = np.random.default_rng(seed)
    stats = []
    for _ in range(resamples):
        pooled = []
        for j in range(tasks):
            idx = rng.integers(0, runs, size=runs)
            pooled.extend(arr[i, j] for i in idx)
        stats.append(iqm_sorted_trim(pooled))
    stats.sort()
    tail = (1.0 - level) / 2.0
    return _percentile_linear(stats, tail), _percentile_linear(stats, 1.0 - tail)
