"""Oracle checks shared by ``sear verify`` and the acceptance tests.

Each check returns a :class:`CheckResult`. The defaults are sized for the CLI
(a few minutes on one core); the acceptance tests call the same functions
with the full trial counts.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import nets, oracles
from .algo import (
    AblationSwitches,
    Temperature,
    TargetBatch,
    actor_loss,
    collect_step,
    compute_targets,
    critic_loss,
    temperature_loss,
)
from .autodiff import AdamW, Tensor, no_grad
from .envs import CHAIN_BIN_CENTERS, CHAIN_REWARDS, ChainMDP, PointMass, Transition
from .metrics import bootstrap_ci, iqm
from .replay import ChunkBatch, ReplayBuffer


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    value: float = float("nan")
    seconds: float = 0.0

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail} ({self.seconds:.1f}s)"


def _timed(name, fn, *args, **kwargs) -> CheckResult:
    start = time.perf_counter()
    res = fn(*args, **kwargs)
    res.name = name
    res.seconds = time.perf_counter() - start
    return res


# ---------------------------------------------------------------- fixtures


def random_chunk_batch(rng, batch, n, state_dim, action_dim, p_end=0.3) -> ChunkBatch:
    """Synthetic batch with random early endings (truncated or terminal)."""
    valid = np.ones((batch, n), dtype=bool)
    terminal = np.zeros((batch, n), dtype=bool)
    for b in range(batch):
        if rng.random() < p_end:
            last = int(rng.integers(0, n))
            valid[b, last + 1 :] = False
            if rng.random() < 0.5:
                terminal[b, last:] = True
    next_states = rng.standard_normal((batch, n, state_dim))
    return ChunkBatch(
        states=rng.standard_normal((batch, state_dim)),
        actions=np.where(valid[..., None], rng.uniform(-0.95, 0.95, (batch, n, action_dim)), 0.0),
        rewards=np.where(valid, rng.standard_normal((batch, n)), 0.0),
        next_states=next_states,
        valid=valid,
        terminal_within=terminal,
    )


def tiny_nets(rng, n, state_dim=3, action_dim=2, width=8, heads=2, hidden=8):
    actor = nets.Actor(state_dim, action_dim, n, hidden=hidden, blocks=1, rng=rng, log_std_init=-0.5)
    # Scale the head up so the distribution is not nearly constant.
    actor.head.weight.data = actor.head.weight.data * 50.0
    critics = [nets.TransformerCritic(state_dim, action_dim, n, width, heads, 1, 2 * width, rng) for _ in range(2)]
    for c in critics:
        c.head.weight.data = c.head.weight.data * 50.0
        c.head.bias.data = rng.standard_normal(1)
    return actor, critics


def _coords(params, rng, per_tensor=1):
    out = []
    for i, p in enumerate(params):
        for j in rng.choice(p.size, size=min(per_tensor, p.size), replace=False):
            out.append((i, int(j)))
    return out


# ---------------------------------------------------------------- gradient checks


def gradient_errors(seed: int) -> dict[str, float]:
    """Finite-difference discrepancies of the critic, actor and temperature losses at one seed."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 4))
    actor, critics = tiny_nets(rng, n)
    targets_nets = [c.clone() for c in critics]
    batch = random_chunk_batch(rng, 4, n, 3, 2)
    alpha = float(np.exp(rng.uniform(-2, 0)))
    tb = compute_targets(batch, actor, targets_nets, alpha, 0.9, rng=rng)
    if not tb.mask.any():
        tb.mask[0, 0] = True

    params = [p for c in critics for p in c.parameters()]
    err_c = ad.check_gradient(
        lambda: critic_loss([c(batch.states, batch.actions) for c in critics], tb),
        params,
        coords=_coords(params, rng),
    )

    noise = rng.standard_normal((4, n, 2))
    aparams = actor.parameters()
    err_a = ad.check_gradient(
        lambda: actor_loss(batch.states, actor, critics, alpha, 0.9, noise)[0],
        aparams,
        coords=_coords(aparams, rng, per_tensor=2),
    )

    temp = Temperature(alpha, -float(n * 2))
    logp = rng.normal(-1.0, 2.0, size=(16, n))
    err_t = ad.check_gradient(lambda: temperature_loss(logp, temp), [temp.log_alpha])
    return {"critic": err_c, "actor": err_a, "temperature": err_t}


def check_gradients(seeds: int = 10, tol: float = 1e-4) -> CheckResult:
    worst = {"critic": 0.0, "actor": 0.0, "temperature": 0.0}
    for s in range(seeds):
        for k, v in gradient_errors(s).items():
            worst[k] = max(worst[k], v)
    value = max(worst.values())
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + f" over {seeds} seeds (tol {tol:g})"
    return CheckResult("gradients", value <= tol, detail, value)


# ---------------------------------------------------------------- causality


def check_causality(trials: int = 500, seed: int = 0) -> CheckResult:
    """Perturbing action j must leave Q^(n), n <= j, bitwise unchanged (0-based j)."""
    rng = np.random.default_rng(seed)
    violations = 0
    nets_cache = {}
    for t in range(trials):
        n = int(rng.integers(2, 7))
        key = (n, t % 5)
        if key not in nets_cache:
            sub = np.random.default_rng([seed, n, t % 5])
            nets_cache[key] = nets.TransformerCritic(3, 2, n, 8, 2, 2, 16, sub)
        critic = nets_cache[key]
        states = rng.standard_normal((1, 3))
        actions = rng.uniform(-1, 1, (1, n, 2))
        j = int(rng.integers(0, n))
        bumped = actions.copy()
        bumped[0, j] = rng.uniform(-1, 1, 2)
        with no_grad():
            q0 = critic(states, actions).data[0]
            q1 = critic(states, bumped).data[0]
        # Q^(n) with n <= j sits in columns 0..j-1.
        if not np.array_equal(q0[:j], q1[:j]):
            violations += 1
    return CheckResult("causality", violations == 0, f"{violations} violations in {trials} trials", violations)


# ---------------------------------------------------------------- N = 1 reduction


def n1_discrepancy(seed: int) -> float:
    rng = np.random.default_rng(seed)
    actor, critics = tiny_nets(rng, 1)
    targets_nets = [c.clone() for c in critics]
    for t in targets_nets:
        for p in t.parameters():
            p.data = p.data + 0.1 * rng.standard_normal(p.shape)
    batch = random_chunk_batch(rng, 6, 1, 3, 2, p_end=0.0)
    batch.terminal_within[:2] = True
    alpha, gamma = 0.3, 0.95
    target_noise = rng.standard_normal((6, 1, 1, 2))
    tb = compute_targets(batch, actor, targets_nets, alpha, gamma, noise=target_noise)

    ap = actor.state_dict()
    heads = critics[0].blocks[0].attn.heads

    def actor_fn(s):
        m, ls = oracles.actor_forward(ap, s, 1, 2)
        return m[:, 0], ls[:, 0]

    def q_fns_of(nets_):
        dicts = [c.state_dict() for c in nets_]
        return [lambda s, a, p=p: oracles.transformer_critic_forward(p, s, a[:, None, :], heads)[:, 0] for p in dicts]

    y = oracles.sac_target(
        batch.rewards[:, 0],
        batch.next_states[:, 0],
        batch.terminal_within[:, 0].astype(float),
        actor_fn,
        q_fns_of(targets_nets),
        alpha,
        gamma,
        target_noise[:, 0, 0],
    )
    errs = [np.max(np.abs(tb.values[:, 0] - y))]

    q_online = [c(batch.states, batch.actions).data[:, 0] for c in critics]
    loss = critic_loss([c(batch.states, batch.actions) for c in critics], tb).item()
    errs.append(abs(loss - oracles.sac_critic_loss(q_online, y)))

    noise = rng.standard_normal((6, 1, 2))
    la, logp = actor_loss(batch.states, actor, critics, alpha, gamma, noise)
    ref, ref_logp = oracles.sac_actor_loss(batch.states, actor_fn, q_fns_of(critics), alpha, noise[:, 0])
    errs.append(abs(la.item() - ref))
    errs.append(np.max(np.abs(logp[:, 0] - ref_logp)))
    return float(max(errs))


def check_n1_reduction(seeds: int = 20, tol: float = 1e-10) -> CheckResult:
    worst = max(n1_discrepancy(s) for s in range(seeds))
    return CheckResult("n1-reduction", worst <= tol, f"max |diff| {worst:.1e} over {seeds} seeds (tol {tol:g})", worst)


# ---------------------------------------------------------------- squashed density


def quadrature_mass(mean: float, log_std: float, points: int = 100_000) -> float:
    """Integral of exp(log_prob) over (-1, 1) using the substitution a = tanh(u).

    A midpoint rule in u over mean +- 12 std avoids the endpoint singularity of
    the density in a; the change of variables is exact, so the result is the
    quadrature of the density on a 1e5-point grid.
    """
    std = np.exp(log_std)
    lo, hi = mean - 12 * std, mean + 12 * std
    h = (hi - lo) / points
    u = lo + h * (np.arange(points) + 0.5)
    a = np.tanh(u)
    keep = np.abs(a) < 1.0
    u, a = u[keep], a[keep]
    dist = nets.ChunkDistribution(Tensor(np.full((len(a), 1, 1), mean)), Tensor(np.full((len(a), 1, 1), log_std)))
    lp = nets.log_prob(dist, a.reshape(-1, 1, 1)).data[:, 0]
    da_du = 1.0 - a**2
    return float(np.sum(np.exp(lp) * da_du) * h)


def check_density(pairs: int = 50, tol: float = 1e-3, seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(pairs):
        mean = rng.uniform(-2.0, 2.0)
        log_std = rng.uniform(-2.0, 1.0)
        worst = max(worst, abs(quadrature_mass(mean, log_std) - 1.0))
    return CheckResult("squashed-density", worst <= tol, f"max |mass - 1| {worst:.1e} over {pairs} pairs", worst)


# ---------------------------------------------------------------- temperature


def temperature_stationarity(
    n: int = 4, action_dim: int = 2, steps: int = 2000, seed: int = 0, target_entropy: float | None = None
) -> dict:
    """Actor trained against a fixed quadratic critic while the temperature adapts.

    Returns the converged E[sum log pi] and the target entropy. The critic is
    frozen (not learned), so only the actor and alpha move.
    """
    rng = np.random.default_rng(seed)
    state_dim = 3
    actor = nets.Actor(state_dim, action_dim, n, hidden=16, blocks=1, rng=rng)
    centre = rng.uniform(-0.5, 0.5, (n, action_dim))

    class QuadraticCritic(nets.Module):
        chunk_size = n

        def __call__(self, states, actions):
            d = ad.as_tensor(actions) - centre
            return (-10.0 * (d * d).sum(axis=-1)).sum(axis=1, keepdims=True)

    critic = QuadraticCritic()
    temp = Temperature(1.0, -float(n * action_dim) if target_entropy is None else target_entropy)
    lr = 1e-2
    actor_opt = AdamW(actor.parameters(), lr=lr, weight_decay=0.0)
    alpha_opt = AdamW([temp.log_alpha], lr=lr, weight_decay=0.0)
    states = np.tile(rng.standard_normal((1, state_dim)), (64, 1))
    for step in range(steps):
        actor_opt.lr = alpha_opt.lr = lr * (0.05 + 0.95 * 0.5 * (1.0 + np.cos(np.pi * step / steps)))
        noise = rng.standard_normal((64, n, action_dim))
        loss, logp = actor_loss(states, actor, critic, temp.alpha, 0.99, noise)
        actor_opt.step(ad.backward(loss, actor.parameters()))
        alpha_opt.step(ad.backward(temperature_loss(logp, temp), [temp.log_alpha]))
    with no_grad():
        big = np.tile(states[:1], (20_000, 1))
        _, logp = nets.sample_chunk(actor(big), rng.standard_normal((20_000, n, action_dim)))
    return {
        "mean_logp": float(logp.data.sum(axis=1).mean()),
        "target_entropy": temp.target_entropy,
        "alpha": temp.alpha,
    }


def check_temperature(steps: int = 2000) -> CheckResult:
    n, da = 4, 2
    out = temperature_stationarity(n, da, steps)
    gap = abs(out["mean_logp"] + out["target_entropy"])
    tol = 0.05 * n * da
    detail = f"|E[sum log pi] + H_target| = {gap:.3f} (tol {tol:.2f}, alpha {out['alpha']:.3g})"
    return CheckResult("temperature", gap <= tol, detail, gap)


# ---------------------------------------------------------------- coverage


def replan_residues(random_replanning: bool, episodes: int = 200, n: int = 4, seed: int = 0) -> set[int]:
    rng = np.random.default_rng(seed)
    env = PointMass(start="fixed")
    actor = nets.Actor(2, 2, n, hidden=16, rng=rng)
    switches = AblationSwitches(chunk_size=n, eval_receding_horizon=n, random_replanning=random_replanning)
    residues = set()
    for ep in range(episodes):
        env.reset(ep)
        while not env.done:
            residues.add(env.t % n)
            collect_step(env, actor, rng, switches)
    return residues


def check_coverage(episodes: int = 200) -> CheckResult:
    fixed = replan_residues(False, episodes)
    rand = replan_residues(True, episodes)
    ok = fixed == {0} and rand == {0, 1, 2, 3}
    return CheckResult("coverage", ok, f"residues without random replanning {sorted(fixed)}, with {sorted(rand)}")


# ---------------------------------------------------------------- chain MDP critic oracle


@dataclass
class ChainOracleResult:
    max_error: float
    per_horizon: list[float]
    pairs: int


def chain_policy(n: int, seed: int, std: float = 0.05) -> nets.Actor:
    """Frozen random chain actor whose per-state mean actions sit on random bin centres.

    The head is solved by least squares against the trunk features of the five
    one-hot states, so each state gets its own chunk; the small std keeps
    samples well inside their bins without making the policy deterministic.
    """
    rng = np.random.default_rng(seed)
    actor = nets.Actor(ChainMDP.n_states, 1, n, hidden=16, rng=rng)
    with no_grad():
        h = ad.silu(actor.inp(np.eye(ChainMDP.n_states)))
        for block in actor.blocks:
            h = block(h)
        feats = actor.norm(h).data
    means = np.arctanh(rng.choice(CHAIN_BIN_CENTERS, size=(ChainMDP.n_states, n)))
    weight = np.zeros_like(actor.head.weight.data).reshape(-1, n, 2)
    bias = np.zeros((n, 2))
    weight[:, :, 0] = np.linalg.lstsq(feats, means, rcond=None)[0]
    bias[:, 1] = np.log(std)
    actor.head.weight.data = weight.reshape(actor.head.weight.shape)
    actor.head.bias.data = bias.reshape(-1)
    return actor


def policy_move_probs(actor: nets.Actor) -> np.ndarray:
    """(S, N, 2) left / right probabilities of the actor at every chain state."""
    with no_grad():
        dist = actor(np.eye(ChainMDP.n_states))
    return oracles.chain_bin_probs(dist.means.data[..., 0], np.exp(dist.log_stds.data[..., 0]))


def chain_grid(n_max: int, levels=tuple(CHAIN_BIN_CENTERS)):
    import itertools

    for n in range(1, n_max + 1):
        for actions in itertools.product(levels, repeat=n):
            yield n, np.array(actions)


def chain_dataset(steps: int, rng: np.random.Generator, jitter: float = 0.25) -> ReplayBuffer:
    """Uniform random moves: bin-centre actions plus uniform jitter, random starts."""
    env = ChainMDP(max_episode_steps=20)
    buffer = ReplayBuffer(steps, env.spec.state_dim, 1)
    state = env.reset(seed=int(rng.integers(2**31)))
    while len(buffer) < steps:
        if env.done:
            state = env.reset(seed=int(rng.integers(2**31)))
        action = rng.choice(CHAIN_BIN_CENTERS, size=1) + rng.uniform(-jitter, jitter, size=1)
        nxt, reward, terminal, truncated = env.step(action)
        buffer.push(Transition(state, action, reward, nxt, terminal, truncated))
        state = nxt
    return buffer


def chain_critic_oracle(
    n: int = 4,
    gamma: float = 0.8,
    updates: int = 3000,
    batch_size: int = 64,
    width: int = 32,
    heads: int = 2,
    lr: float = 1e-3,
    tau: float = 0.05,
    data_steps: int = 20_000,
    seed: int = 0,
) -> ChainOracleResult:
    """Critic-only training with alpha = 0 on random-move chain data, compared to exact values."""
    rng = np.random.default_rng(seed)
    actor = chain_policy(n, seed)
    buffer = chain_dataset(data_steps, rng)

    crng = np.random.default_rng([seed, 1])
    critics = [nets.TransformerCritic(ChainMDP.n_states, 1, n, width, heads, 2, 2 * width, crng) for _ in range(2)]
    targets = [c.clone() for c in critics]
    opts = [AdamW(c.parameters(), lr=lr, weight_decay=0.0) for c in critics]
    for step in range(updates):
        frac = step / updates
        for opt in opts:
            opt.lr = lr * (0.02 + 0.98 * 0.5 * (1.0 + np.cos(np.pi * frac)))
        batch = buffer.sample_chunk_batch(batch_size, n, crng)
        tb = compute_targets(batch, actor, targets, 0.0, gamma, rng=crng)
        for c, opt in zip(critics, opts):
            loss = critic_loss(c(batch.states, batch.actions), tb)
            opt.step(ad.backward(loss, c.parameters()))
        for t, c in zip(targets, critics):
            nets.polyak_update(t, c, tau)

    v = oracles.chain_state_values(CHAIN_REWARDS, policy_move_probs(actor), gamma)
    per_h = [0.0] * n
    pairs = 0
    # Q^(n) reads only the first n actions, so the rest of the chunk is padding.
    for n_h, actions in chain_grid(n):
        for s in range(ChainMDP.n_states):
            exact = oracles.chain_prefix_value(CHAIN_REWARDS, actions, s, gamma, v)
            chunk = np.zeros((1, n, 1))
            chunk[0, :n_h, 0] = actions
            with no_grad():
                preds = [c(np.eye(ChainMDP.n_states)[s : s + 1], chunk).data[0, n_h - 1] for c in critics]
            per_h[n_h - 1] = max(per_h[n_h - 1], max(abs(p - exact) for p in preds))
            pairs += 1
    return ChainOracleResult(max(per_h), per_h, pairs)


# Settings that reach the 0.05 tolerance in a few minutes on one core.
ACCEPTANCE_CHAIN = {"updates": 2000, "lr": 3e-3, "batch_size": 64, "width": 32, "gamma": 0.8}


def check_chain_oracle(tol: float = 0.05, **kwargs) -> CheckResult:
    res = chain_critic_oracle(**{**ACCEPTANCE_CHAIN, **kwargs})
    detail = "max |Q - Q_exact| per horizon " + ", ".join(f"{e:.3f}" for e in res.per_horizon) + f" (tol {tol})"
    return CheckResult("chain-oracle", res.max_error <= tol, detail, res.max_error)


# ---------------------------------------------------------------- IQM oracle


def check_iqm(inputs: int = 200, seed: int = 0, ci_every: int = 10) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst_iqm = 0.0
    worst_ci = 0.0
    for i in range(inputs):
        size = int(rng.integers(1, 40))
        vals = rng.random(size) if i % 2 else rng.integers(0, 11, size) / 10.0
        worst_iqm = max(worst_iqm, abs(iqm(vals) - oracles.iqm_sorted_trim(vals)))
        if i % ci_every == 0:
            a = bootstrap_ci(vals, 1000, 0.95, seed=i)
            b = oracles.bootstrap_loop(vals, 1000, 0.95, seed=i)
            worst_ci = max(worst_ci, abs(a[0] - b[0]), abs(a[1] - b[1]))
    ok = worst_iqm <= 1e-12 and worst_ci <= 1e-12
    return CheckResult("iqm-oracle", ok, f"iqm diff {worst_iqm:.1e}, CI diff {worst_ci:.1e} over {inputs} inputs")


# ---------------------------------------------------------------- suite


def run_suite(quick: bool = False) -> list[CheckResult]:
    checks = [
        ("gradients", check_gradients, {"seeds": 5 if quick else 20}),
        ("causality", check_causality, {"trials": 200 if quick else 1000}),
        ("n1-reduction", check_n1_reduction, {"seeds": 5 if quick else 20}),
        ("squashed-density", check_density, {"pairs": 10 if quick else 50}),
        ("temperature", check_temperature, {}),
        ("coverage", check_coverage, {"episodes": 50 if quick else 200}),
        ("chain-oracle", check_chain_oracle, {"updates": 800, "data_steps": 5000, "tol": 0.15} if quick else {}),
        ("iqm-oracle", check_iqm, {"inputs": 100 if quick else 200}),
    ]
    return [_timed(name, fn, **kw) for name, fn, kw in checks]
