import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sear import autodiff as ad
from sear.autodiff import AdamW, Graph, Tensor


def leaf(x):
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=True)


def test_forward_examples():
    g = Graph(lambda x, y: {"out": ad.add(x, y)})
    np.testing.assert_array_equal(g.forward(x=np.array([1.0, 2.0]), y=np.array([3.0, 4.0]))["out"].data, [4.0, 6.0])
    m = np.random.default_rng(0).standard_normal((3, 3))
    np.testing.assert_array_equal(ad.matmul(np.eye(3), m).data, m)
    assert ad.tanh(np.array([0.0])).data[0] == 0.0


def test_forward_errors():
    with pytest.raises(ad.ShapeError):
        ad.matmul(np.ones((2, 3)), np.ones((2, 3)))
    with pytest.raises(ad.ShapeError):
        ad.add(np.ones(3), np.ones(4))
    with pytest.raises(ad.NonFiniteError):
        ad.log(np.array([-1.0]))
    with pytest.raises(ad.NonFiniteError):
        ad.exp(np.array([1000.0]))


def test_backward_square():
    x = leaf([1.0, -2.0, 3.0])
    (g,) = ad.backward((x * x).sum(), [x])
    np.testing.assert_array_equal(g, [2.0, -4.0, 6.0])


def test_backward_constant_and_unreachable():
    x, y = leaf([1.0, 2.0]), leaf([3.0])
    gx, gy = ad.backward(Tensor(np.array(5.0)), [x, y])
    assert not gx.any() and not gy.any()
    gx, gy = ad.backward(x.sum(), [x, y])
    np.testing.assert_array_equal(gx, [1.0, 1.0])
    np.testing.assert_array_equal(gy, [0.0])


def test_backward_errors():
    x = leaf([1.0, 2.0])
    with pytest.raises(ad.GraphError):
        ad.backward(x * 2.0, [x])
    with pytest.raises(ad.GraphError):
        Graph(lambda x: {"y": x.sum()}).backward("y", [x])


def test_graph_forward_then_backward():
    w = leaf(np.random.default_rng(1).standard_normal((3, 2)))
    g = Graph(lambda x: {"loss": ad.tanh(ad.matmul(x, w)).sum()})
    g.forward(x=np.ones((4, 3)))
    (grad,) = g.backward("loss", [w])
    assert grad.shape == (3, 2)


def test_diamond_graph_visits_each_node_once():
    x = leaf([0.5, -1.5])
    h = ad.tanh(x)
    loss = (h * h + h).sum()
    (g,) = ad.backward(loss, [x])
    t = np.tanh(x.data)
    np.testing.assert_allclose(g, (2 * t + 1) * (1 - t**2))


def test_check_gradient_simple_cases():
    assert ad.check_gradient(lambda x: x.sum(), np.random.default_rng(0).standard_normal(5)) < 1e-9
    x = leaf([0.0, 0.0])
    (g,) = ad.backward(ad.logsumexp(x), [x])
    np.testing.assert_allclose(g, [0.5, 0.5])
    assert ad.check_gradient(lambda x: ad.logsumexp(x), np.zeros(2)) <= 1e-6


def test_tanh_wx_against_finite_differences():
    rng = np.random.default_rng(2)
    W = leaf(rng.standard_normal((4, 3)))
    x = rng.standard_normal((3, 1))
    assert ad.check_gradient(lambda: ad.tanh(ad.matmul(W, x)).sum(), [W]) <= 1e-5


def test_check_gradient_restores_noncontiguous_leaves():
    base = np.asfortranarray(np.random.default_rng(3).standard_normal((3, 4)))
    w = leaf(base)
    before = w.data.copy()
    err = ad.check_gradient(lambda: (ad.tanh(w) * w).sum(), [w])
    assert err < 1e-6
    np.testing.assert_array_equal(w.data, before)


OPS = {
    "add": lambda a, b: ad.add(a, b),
    "sub": lambda a, b: ad.sub(a, b),
    "mul": lambda a, b: ad.mul(a, b),
    "div": lambda a, b: ad.div(a, ad.exp(b)),
    "matmul": lambda a, b: ad.matmul(a, b.transpose()),
    "tanh": lambda a, b: ad.tanh(a) * b,
    "exp": lambda a, b: ad.exp(a * 0.3) + b,
    "log": lambda a, b: ad.log(ad.exp(a) + 1.0) * b,
    "sigmoid": lambda a, b: ad.sigmoid(a) * b,
    "silu": lambda a, b: ad.silu(a) + b,
    "softplus": lambda a, b: ad.softplus(a) * b,
    "square": lambda a, b: ad.square(a) + b,
    "power": lambda a, b: ad.power(ad.exp(a), 1.5) * b,
    "softmax": lambda a, b: ad.softmax(a, axis=-1) * b,
    "logsumexp": lambda a, b: ad.logsumexp(a + b, axis=1),
    "layer_norm": lambda a, b: ad.layer_norm(a, b[0], b[1]),
    "concat": lambda a, b: ad.concat([a, b * 2.0], axis=0),
    "stack": lambda a, b: ad.stack([a, b], axis=1),
    "slice": lambda a, b: a[:, 1:] * b[:, :-1],
    "fancy_index": lambda a, b: a[np.array([0, 0, 1])] + b[np.array([1, 0, 1])],
    "masked_fill": lambda a, b: ad.masked_fill(a, np.eye(2, 3, dtype=bool), -3.0) * b,
    "sum_mean": lambda a, b: a.sum(axis=0) + b.mean(axis=1, keepdims=True),
    "reshape_transpose": lambda a, b: a.reshape(3, 2).transpose() * b,
    "minimum": lambda a, b: ad.minimum(a, b + 0.5),
    "clip": lambda a, b: ad.clip(a, -0.7, 0.7) * b,
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_every_op_matches_finite_differences(name):
    fn = OPS[name]
    for seed in range(100):
        rng = np.random.default_rng(seed)
        a, b = leaf(rng.standard_normal((2, 3))), leaf(rng.standard_normal((2, 3)))
        weights = rng.standard_normal(np.shape(fn(a, b).data))
        err = ad.check_gradient(lambda: (fn(a, b) * weights).sum(), [a, b])
        assert err <= 1e-4, (name, seed, err)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_forward_is_deterministic(seed):
    rng = np.random.default_rng(seed)
    w = leaf(rng.standard_normal((3, 3)))
    x = rng.standard_normal((5, 3))
    f = lambda: ad.softmax(ad.layer_norm(ad.matmul(x, w), np.ones(3), np.zeros(3))).data
    assert f().tobytes() == f().tobytes()


def test_no_grad_records_nothing():
    x = leaf([1.0])
    with ad.no_grad():
        y = x * 2.0
    assert not y.requires_grad


def test_frozen_blocks_parameter_gradients_but_restores_flag():
    w, x = leaf([2.0]), leaf([3.0])
    with ad.frozen([w]):
        loss = (w * x).sum()
    gw, gx = ad.backward(loss, [w, x])
    assert gw[0] == 0.0 and gx[0] == 2.0
    assert w.requires_grad


# ---------------------------------------------------------------- AdamW


def test_adamw_fixed_point_and_bounded_step():
    p = leaf([1.0, -2.0])
    AdamW([p], lr=0.1, weight_decay=0.0).step([np.zeros(2)])
    np.testing.assert_array_equal(p.data, [1.0, -2.0])
    theta = leaf([1.0])
    AdamW([theta], lr=0.1, weight_decay=0.0).step([theta.data.copy()])
    assert 0.0 <= 1.0 - theta.data[0] <= 0.1 + 1e-12


def test_adamw_decay_is_decoupled():
    p = leaf([2.0])
    AdamW([p], lr=0.1, weight_decay=0.5).step([np.zeros(1)])
    # Zero gradient: only the multiplicative decay acts.
    assert p.data[0] == pytest.approx(2.0 * (1 - 0.05))


def test_adamw_quadratic_converges():
    rng = np.random.default_rng(0)
    q = np.array([[3.0, 0.5], [0.5, 1.0]])
    b = rng.standard_normal(2)
    opt_x = np.linalg.solve(q, b)
    x = leaf([2.0, -1.0])
    opt = AdamW([x], lr=0.1, weight_decay=0.0)

    def f():
        return 0.5 * (x * ad.matmul(Tensor(q), x.reshape(2, 1)).reshape(2)).sum() - (x * b).sum()

    f_star = -0.5 * b @ opt_x
    for step in range(200):
        opt.lr = 0.1 * (1 - step / 200) + 1e-3
        opt.step(ad.backward(f(), [x]))
    assert f().item() - f_star < 1e-6


def test_adamw_errors_and_state():
    p = leaf([1.0, 2.0])
    opt = AdamW([p])
    with pytest.raises(ad.NonFiniteError):
        opt.step([np.array([np.nan, 0.0])])
    np.testing.assert_array_equal(p.data, [1.0, 2.0])
    with pytest.raises(ad.ShapeError):
        opt.step([np.zeros(3)])
    opt.step([np.ones(2)])
    opt.step([np.ones(2)])
    assert opt.state.step == 2
    assert opt.state.m[0].shape == p.shape


# ---------------------------------------------------------------- checkpoints


def test_checkpoint_round_trip(tmp_path):
    arrays = {"a": np.arange(6.0).reshape(2, 3), "b": np.array([np.pi])}
    path = tmp_path / "x.ckpt"
    ad.save_checkpoint(path, arrays, {"step": 7})
    back, meta = ad.load_checkpoint(path)
    assert meta["step"] == 7
    for k in arrays:
        assert back[k].tobytes() == arrays[k].tobytes()
    header = path.read_bytes().split(b"\n", 1)[0]
    assert b"sear-autodiff" in header


def test_checkpoint_detects_truncation(tmp_path):
    path = tmp_path / "x.ckpt"
    ad.save_checkpoint(path, {"a": np.ones(4)})
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(ValueError):
        ad.load_checkpoint(path)
