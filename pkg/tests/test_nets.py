import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sear import autodiff as ad
from sear import nets, oracles
from sear.autodiff import Tensor, no_grad
from sear.verify import quadrature_mass


def small_critic(n=4, seed=0, **kw):
    return nets.TransformerCritic(3, 2, n, width=8, heads=2, blocks=2, ffn=16, rng=np.random.default_rng(seed), **kw)


def test_actor_shapes_and_n1():
    actor = nets.Actor(3, 2, 1, hidden=16, rng=np.random.default_rng(0))
    dist = actor(np.zeros((5, 3)))
    assert dist.means.shape == (5, 1, 2) and dist.log_stds.shape == (5, 1, 2)
    with pytest.raises(ad.ShapeError):
        actor(np.zeros((5, 4)))


def test_zero_weight_actor_returns_bias():
    actor = nets.Actor(3, 2, 4, hidden=16, rng=np.random.default_rng(0), log_std_init=-1.3)
    for p in actor.parameters():
        if p is not actor.head.bias:
            p.data = np.zeros_like(p.data)
    dist = actor(np.random.default_rng(1).standard_normal((2, 3)))
    assert np.all(dist.means.data == 0.0)
    np.testing.assert_allclose(dist.log_stds.data, -1.3)


def test_actor_deterministic():
    actor = nets.Actor(3, 2, 4, hidden=16, rng=np.random.default_rng(0))
    s = np.random.default_rng(1).standard_normal((3, 3))
    assert actor(s).means.data.tobytes() == actor(s).means.data.tobytes()


def test_log_std_is_clamped():
    actor = nets.Actor(3, 1, 2, hidden=8, rng=np.random.default_rng(0))
    actor.head.bias.data[:] = 50.0
    assert actor(np.zeros((1, 3))).log_stds.data.max() == nets.LOG_STD_MAX
    actor.head.bias.data[:] = -50.0
    assert actor(np.zeros((1, 3))).log_stds.data.min() == nets.LOG_STD_MIN


def test_zero_noise_gives_tanh_mean():
    actor = nets.Actor(3, 2, 4, hidden=16, rng=np.random.default_rng(0))
    dist = actor(np.ones((2, 3)))
    a, lp = nets.sample_chunk(dist, np.zeros((2, 4, 2)))
    assert a.data.tobytes() == np.tanh(dist.means.data).tobytes()
    assert lp.shape == (2, 4)


def test_sample_chunk_errors():
    dist = nets.ChunkDistribution(Tensor(np.zeros((1, 2, 1))), Tensor(np.zeros((1, 2, 1))))
    with pytest.raises(ad.ShapeError):
        nets.sample_chunk(dist, np.zeros((1, 3, 1)))
    with pytest.raises(ad.NonFiniteError):
        nets.sample_chunk(dist, np.full((1, 2, 1), np.inf))


@settings(max_examples=50, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 1.5), st.integers(0, 2**31 - 1))
def test_samples_strictly_inside_and_finite(mean, log_std, seed):
    dist = nets.ChunkDistribution(Tensor(np.full((64, 3, 2), mean)), Tensor(np.full((64, 3, 2), log_std)))
    a, lp = nets.sample_chunk(dist, np.random.default_rng(seed).standard_normal((64, 3, 2)) * 3)
    assert np.all(np.abs(a.data) <= 1.0)
    assert np.isfinite(lp.data).all()


def test_log_prob_matches_sample_log_prob():
    rng = np.random.default_rng(0)
    dist = nets.ChunkDistribution(Tensor(rng.standard_normal((4, 3, 2))), Tensor(rng.uniform(-1, 0.5, (4, 3, 2))))
    a, lp = nets.sample_chunk(dist, rng.standard_normal((4, 3, 2)))
    np.testing.assert_allclose(nets.log_prob(dist, a.data).data, lp.data, atol=1e-8)


def test_tanh_log_det_stable_formula():
    u = np.linspace(-8, 8, 101)
    np.testing.assert_allclose(nets.tanh_log_det(Tensor(u)).data, np.log(1 - np.tanh(u) ** 2), atol=1e-9)
    assert np.isfinite(nets.tanh_log_det(Tensor(np.array([-400.0, 400.0]))).data).all()


@pytest.mark.parametrize("mean,log_std", [(0.0, 0.0), (1.5, -1.0), (-0.7, 0.8), (2.0, -2.0)])
def test_squashed_density_integrates_to_one(mean, log_std):
    assert abs(quadrature_mass(mean, log_std) - 1.0) <= 1e-3


def test_density_check_catches_sign_flip(monkeypatch):
    monkeypatch.setattr(nets, "tanh_log_det", lambda u: -2.0 * (np.log(2.0) - u - ad.softplus(-2.0 * u)))
    assert abs(quadrature_mass(0.3, 0.0) - 1.0) > 1e-3


def test_wide_distribution_entropy_approaches_uniform():
    rng = np.random.default_rng(0)
    # About 0.85 std keeps the squashed density near flat; very wide ones pile mass at the edges.
    dist = nets.ChunkDistribution(Tensor(np.zeros((100_000, 1, 1))), Tensor(np.full((100_000, 1, 1), np.log(0.87))))
    _, lp = nets.sample_chunk(dist, rng.standard_normal((100_000, 1, 1)))
    entropy = -lp.data.mean()
    assert entropy <= np.log(2.0) + 0.01
    assert entropy > np.log(2.0) - 0.05


def test_reparameterized_gradient_matches_finite_differences():
    rng = np.random.default_rng(3)
    actor = nets.Actor(3, 2, 3, hidden=8, rng=rng)
    actor.head.weight.data = actor.head.weight.data * 40
    s = rng.standard_normal((4, 3))
    noise = rng.standard_normal((4, 3, 2))
    err = ad.check_gradient(lambda: nets.sample_chunk(actor(s), noise)[0].mean(), actor.parameters())
    assert err <= 1e-4


# ---------------------------------------------------------------- critics


def test_critic_shape_and_errors():
    c = small_critic()
    assert c(np.zeros((2, 3)), np.zeros((2, 4, 2))).shape == (2, 4)
    with pytest.raises(ad.ShapeError):
        c(np.zeros((2, 3)), np.zeros((2, 3, 2)))
    with pytest.raises(ad.ShapeError):
        c(np.zeros((2, 5)), np.zeros((2, 4, 2)))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_critic_causality_bitwise(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 7))
    c = small_critic(n, seed % 7)
    s, a = rng.standard_normal((3, 3)), rng.uniform(-1, 1, (3, n, 2))
    j = int(rng.integers(0, n))
    b = a.copy()
    b[:, j:] = rng.uniform(-1, 1, b[:, j:].shape)
    with no_grad():
        q0, q1 = c(s, a).data, c(s, b).data
    assert q0[:, :j].tobytes() == q1[:, :j].tobytes()


def test_acausal_mask_breaks_causality(monkeypatch):
    from sear.verify import check_causality

    assert check_causality(50).passed
    monkeypatch.setattr(nets, "causal_mask", lambda n: np.ones((n, n), dtype=bool))
    assert not check_causality(50).passed


def test_critic_zero_head_returns_bias():
    c = small_critic()
    c.head.weight.data[:] = 0.0
    c.head.bias.data[:] = 1.25
    q = c(np.random.default_rng(0).standard_normal((3, 3)), np.zeros((3, 4, 2))).data
    assert np.all(q == 1.25)


def test_critic_matches_plain_numpy_forward():
    rng = np.random.default_rng(5)
    c = small_critic(seed=5)
    s, a = rng.standard_normal((4, 3)), rng.uniform(-1, 1, (4, 4, 2))
    ref = oracles.transformer_critic_forward(c.state_dict(), s, a, heads=2)
    np.testing.assert_allclose(c(s, a).data, ref, atol=1e-12)


def test_mlp_critic_shape_zero_and_oracle():
    rng = np.random.default_rng(0)
    c = nets.MLPCritic(3, 2, 4, hidden=16, blocks=2, rng=rng)
    s, a = rng.standard_normal((5, 3)), rng.uniform(-1, 1, (5, 4, 2))
    assert c(s, a).shape == (5, 1)
    np.testing.assert_allclose(c(s, a).data, oracles.mlp_critic_forward(c.state_dict(), s, a), atol=1e-12)
    assert c(s, a).data.tobytes() == c(s, a).data.tobytes()
    c.head.weight.data[:] = 0.0
    assert np.all(c(s, a).data == 0.0)
    with pytest.raises(ad.ShapeError):
        c(s, a[:, :3])


def test_actor_matches_plain_numpy_forward():
    rng = np.random.default_rng(1)
    actor = nets.Actor(3, 2, 4, hidden=16, blocks=2, rng=rng)
    actor.head.weight.data = actor.head.weight.data * 30
    s = rng.standard_normal((6, 3))
    m, ls = oracles.actor_forward(actor.state_dict(), s, 4, 2)
    d = actor(s)
    np.testing.assert_allclose(d.means.data, m, atol=1e-12)
    np.testing.assert_allclose(d.log_stds.data, ls, atol=1e-12)


def test_twin_critics_independent_but_identical_architecture():
    rng = np.random.default_rng(0)
    c1, c2 = (nets.TransformerCritic(3, 2, 4, 8, 2, 2, 16, rng) for _ in range(2))
    assert [n for n, _ in c1.named_parameters()] == [n for n, _ in c2.named_parameters()]
    assert not np.array_equal(c1.state_embed.weight.data, c2.state_embed.weight.data)


# ---------------------------------------------------------------- polyak


def test_polyak_endpoints_and_midpoint():
    online, target = small_critic(seed=1), small_critic(seed=2)
    before = target.state_dict()
    nets.polyak_update(target, online, 0.0)
    assert all(before[k].tobytes() == v.tobytes() for k, v in target.state_dict().items())
    nets.polyak_update(target, online, 1.0)
    assert all(online.state_dict()[k].tobytes() == v.tobytes() for k, v in target.state_dict().items())

    a, b = small_critic(), small_critic()
    for p in a.parameters():
        p.data = np.zeros_like(p.data)
    for p in b.parameters():
        p.data = np.full_like(p.data, 2.0)
    nets.polyak_update(a, b, 0.5)
    assert all(np.all(p.data == 1.0) for p in a.parameters())


def test_polyak_shape_mismatch():
    with pytest.raises(ad.ShapeError):
        nets.polyak_update(small_critic(4), small_critic(5), 0.5)


def test_state_dict_round_trip():
    a, b = small_critic(seed=1), small_critic(seed=2)
    b.load_state_dict(a.state_dict())
    s, x = np.ones((1, 3)), np.zeros((1, 4, 2))
    assert a(s, x).data.tobytes() == b(s, x).data.tobytes()
    with pytest.raises(KeyError):
        b.load_state_dict({})
