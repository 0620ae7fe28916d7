"""The reference implementations are only useful if they are right; check them independently."""

import numpy as np
import pytest

from sear import nets, oracles, verify
from sear.autodiff import Tensor, no_grad
from sear.envs import CHAIN_REWARDS, ChainMDP


def test_bin_probs_match_sampling():
    rng = np.random.default_rng(0)
    mean, std = np.array([0.1, -0.6, 1.2]), np.array([0.7, 0.3, 1.5])
    exact = oracles.chain_bin_probs(mean, std)
    a = np.tanh(mean + std * rng.standard_normal((200_000, 3)))
    empirical = np.stack([(a <= 0).mean(0), (a > 0).mean(0)], axis=-1)
    np.testing.assert_allclose(empirical, exact, atol=5e-3)
    np.testing.assert_allclose(exact.sum(-1), 1.0)


def test_chain_values_match_monte_carlo():
    n, gamma = 2, 0.7
    actor = nets.Actor(5, 1, n, hidden=8, rng=np.random.default_rng(1))
    actor.head.weight.data = actor.head.weight.data * 50
    probs = verify.policy_move_probs(actor)
    v = oracles.chain_state_values(CHAIN_REWARDS, probs, gamma)
    rng = np.random.default_rng(2)
    env = ChainMDP(max_episode_steps=10**6)
    for s in (0, 2, 4):
        rets = []
        for _ in range(400):
            env.reset()
            env.position, env.obs = s, env.observe(s)
            obs, ret, t = env.obs, 0.0, 0
            while t < 30:
                with no_grad():
                    chunk, _ = nets.sample_chunk(actor(obs[None]), rng.standard_normal((1, n, 1)))
                for a in chunk.data[0]:
                    obs, r, _, _ = env.step(a)
                    ret += gamma**t * r
                    t += 1
            rets.append(ret)
        assert np.mean(rets) == pytest.approx(v[s], abs=4 * np.std(rets) / np.sqrt(len(rets)) + 1e-3)


def test_prefix_value_by_hand():
    v = np.arange(5.0)
    # From state 3: right (0.3), right at the wall (1.0), then bootstrap v[4].
    assert oracles.chain_prefix_value(CHAIN_REWARDS, [0.9, 0.9], 3, 0.5, v) == pytest.approx(0.3 + 0.5 * 1.0 + 0.25 * 4)
    assert oracles.chain_prefix_value(CHAIN_REWARDS, [-0.2], 2, 0.5, v) == pytest.approx(0.0 + 0.5 * 1)


def test_chain_policy_is_sharp_and_state_dependent():
    actor = verify.chain_policy(4, 0)
    probs = verify.policy_move_probs(actor)
    assert probs.max(-1).min() > 1 - 1e-9
    assert len({tuple(probs[s].argmax(-1)) for s in range(5)}) > 1


def test_sac_reference_log_prob():
    mean, log_std = np.array([[0.1, -1.0]]), np.array([[-0.5, 0.2]])
    eps = np.array([[0.4, -0.1]])
    a, ref = oracles.sac_logp(mean, log_std, eps)
    dist = nets.ChunkDistribution(Tensor(mean[:, None]), Tensor(log_std[:, None]))
    actions, lp = nets.sample_chunk(dist, eps[:, None])
    np.testing.assert_allclose(actions.data[:, 0], a, atol=1e-15)
    np.testing.assert_allclose(lp.data[:, 0], ref, atol=1e-12)


def test_iqm_oracle_hand():
    assert oracles.iqm_sorted_trim([3, 1, 2, 100, -100]) == 2.0
    assert oracles._percentile_linear([0.0, 1.0], 0.25) == 0.25
