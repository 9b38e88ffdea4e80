import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mmfusion import tensor as T
from mmfusion.rng import Streams, stream
from mmfusion.tensor import Tensor

from gradcheck import TOL, check_op

SEEDS = range(20)


def _away_from_zero(rng, shape, margin=0.05):
    x = rng.standard_normal(shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * margin, x)


def _distinct(rng, shape):
    # Values separated by far more than the finite-difference step, so max-type
    # ops never switch their argmax while being probed.
    n = int(np.prod(shape))
    return (rng.permutation(n) * 0.1 + rng.uniform(-0.01, 0.01, n)).reshape(shape)


# ---------------------------------------------------------------------------
# finite-difference checks, twenty random instances per op

GRAD_CASES = {
    "add": (lambda a, b: a + b, lambda r: (r.standard_normal((3, 4)), r.standard_normal((4,)))),
    "mul": (lambda a, b: a * b, lambda r: (r.standard_normal((3, 4)), r.standard_normal((3, 4)))),
    "sub_neg": (lambda a, b: a - b, lambda r: (r.standard_normal((2, 5)), r.standard_normal((1, 5)))),
    "matmul": (T.matmul, lambda r: (r.standard_normal((3, 4)), r.standard_normal((4, 2)))),
    "matmul_batched": (T.matmul, lambda r: (r.standard_normal((2, 3, 4)), r.standard_normal((4, 2)))),
    "linear": (T.linear, lambda r: (r.standard_normal((3, 4)), r.standard_normal((4, 2)), r.standard_normal((2,)))),
    "reshape": (lambda a: T.reshape(a, (6, 2)), lambda r: (r.standard_normal((3, 4)),)),
    "concat": (lambda a, b: T.concat([a, b], -1), lambda r: (r.standard_normal((2, 3)), r.standard_normal((2, 2)))),
    "sum": (lambda a: T.tsum(a), lambda r: (r.standard_normal((3, 4)),)),
    "mean": (lambda a: T.tmean(a), lambda r: (r.standard_normal((3, 4)),)),
    "relu": (T.relu, lambda r: (_away_from_zero(r, (4, 5)),)),
    "sigmoid": (T.sigmoid, lambda r: (3 * r.standard_normal((4, 5)),)),
    "softmax": (T.softmax, lambda r: (2 * r.standard_normal((3, 6)),)),
    "embedding": (lambda t: T.embedding_gather(t, [2, 0, 2, 4]), lambda r: (r.standard_normal((5, 3)),)),
    "conv1d": (T.conv1d_valid, lambda r: (r.standard_normal((6, 4)), r.standard_normal((2, 3, 4)))),
    "conv1d_batched": (T.conv1d_valid, lambda r: (r.standard_normal((2, 7, 3)), r.standard_normal((3, 4, 3)))),
    "conv2d": (T.conv2d_same, lambda r: (r.standard_normal((5, 5, 2)), r.standard_normal((3, 3, 3, 2)))),
    "conv2d_batched": (T.conv2d_same, lambda r: (r.standard_normal((2, 4, 3, 2)), r.standard_normal((2, 3, 3, 2)))),
    "maxpool2d": (T.maxpool2d, lambda r: (_distinct(r, (4, 4, 2)),)),
    "maxpool2d_odd": (T.maxpool2d, lambda r: (_distinct(r, (5, 3, 2)),)),
    "max_over_time": (T.max_over_time, lambda r: (_distinct(r, (6, 3)),)),
}


@pytest.mark.parametrize("name", sorted(GRAD_CASES))
def test_gradient_matches_finite_differences(name):
    op, make = GRAD_CASES[name]
    worst = 0.0
    for seed in SEEDS:
        rng = stream(seed, "gradcheck", name)
        worst = max(worst, check_op(op, *make(rng), rng=rng))
    assert worst < TOL, f"{name}: relative error {worst:.2e}"


def test_dropout_gradient_uses_the_same_mask():
    for seed in SEEDS:
        x = stream(seed, "x").standard_normal((4, 6))
        op = lambda t: T.dropout(t, 0.5, True, stream(seed, "mask"))
        assert check_op(op, x, rng=stream(seed, "w")) < TOL


# ---------------------------------------------------------------------------
# worked examples

def test_matmul_examples():
    eye = Tensor([[1.0, 0.0], [0.0, 1.0]])
    assert np.array_equal(T.matmul(eye, Tensor([[3.0], [4.0]])).data, [[3], [4]])
    assert np.array_equal(T.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]])).data, [[11]])


def test_matmul_shape_error_names_both_dims():
    with pytest.raises(T.ShapeError, match="3.*5"):
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((5, 2))))


def test_conv1d_examples():
    out = T.conv1d_valid(Tensor(np.zeros((40, 100))), Tensor(np.zeros((128, 3, 100))))
    assert out.shape == (38, 128)
    ones = T.conv1d_valid(Tensor(np.ones((5, 1))), Tensor(np.ones((1, 3, 1))))
    assert np.array_equal(ones.data[:, 0], [3, 3, 3])
    with pytest.raises(T.ShapeError):
        T.conv1d_valid(Tensor(np.ones((2, 1))), Tensor(np.ones((1, 3, 1))))


def test_conv2d_examples():
    out = T.conv2d_same(Tensor(np.zeros((8, 8, 3))), Tensor(np.zeros((16, 3, 3, 3))))
    assert out.shape == (8, 8, 16)
    img = np.random.default_rng(0).standard_normal((6, 7, 1))
    delta = np.zeros((1, 3, 3, 1))
    delta[0, 1, 1, 0] = 1
    assert np.allclose(T.conv2d_same(Tensor(img), Tensor(delta)).data, img)
    with pytest.raises(T.UnsupportedConfigError):
        T.conv2d_same(Tensor(img), Tensor(np.zeros((1, 5, 5, 1))))


def test_maxpool_examples():
    x = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]])[:, :, None], requires_grad=True)
    out = T.maxpool2d(x)
    assert out.data.reshape(-1).tolist() == [4.0]
    out.sum().backward()
    assert x.grad[:, :, 0].tolist() == [[0, 0], [0, 1]]
    const = T.maxpool2d(Tensor(np.full((6, 4, 2), 2.5)))
    assert const.shape == (3, 2, 2) and np.all(const.data == 2.5)


def test_maxpool_odd_sides_and_ties():
    assert T.maxpool2d(Tensor(np.ones((5, 3, 1)))).shape == (3, 2, 1)
    x = Tensor(np.zeros((2, 2, 1)), requires_grad=True)
    T.maxpool2d(x).sum().backward()
    assert x.grad[:, :, 0].tolist() == [[1, 0], [0, 0]]


def test_max_over_time_examples():
    assert T.max_over_time(Tensor([[1.0, 5.0], [3.0, 2.0]])).data.tolist() == [3, 5]
    row = np.array([[0.5, -1.0, 2.0]])
    assert np.array_equal(T.max_over_time(Tensor(row)).data, row[0])
    x = np.random.default_rng(1).standard_normal((7, 4))
    perm = np.random.default_rng(2).permutation(7)
    assert np.array_equal(T.max_over_time(Tensor(x)).data, T.max_over_time(Tensor(x[perm])).data)


def test_sigmoid_and_softmax_examples():
    x = Tensor([0.0], requires_grad=True)
    y = T.sigmoid(x)
    y.sum().backward()
    assert y.data[0] == 0.5 and x.grad[0] == 0.25
    assert np.allclose(T.softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5])
    big = T.softmax(Tensor(np.array([1000.0, 0.0]))).data
    assert np.all(np.isfinite(big)) and big[0] == 1.0 and big[1] == 0.0


def test_dropout_examples():
    x = Tensor(np.arange(12.0).reshape(3, 4))
    assert T.dropout(x, 0.5, False) is x
    assert np.array_equal(T.dropout(x, 0.0, True, stream(0, "d")).data, x.data)
    big = T.dropout(Tensor(np.ones(100_000)), 0.5, True, stream(0, "d")).data
    frac = np.mean(big != 0)
    assert 0.49 <= frac <= 0.51
    assert np.allclose(big[big != 0], 2.0)
    with pytest.raises(T.ConfigError):
        T.dropout(x, 1.0, True, stream(0, "d"))


def test_embedding_examples():
    table = Tensor(np.eye(3), requires_grad=True)
    rows = T.embedding_gather(table, [0, 0])
    assert np.array_equal(rows.data[0], rows.data[1])
    assert np.array_equal(T.embedding_gather(table, [2, 1]).data, np.eye(3)[[2, 1]])
    g = np.array([[1.0, 2.0, 3.0], [10.0, 20.0, 30.0]])
    T.embedding_gather(table, [1, 1]).backward(g)
    assert np.array_equal(table.grad[1], g.sum(0))
    assert not table.grad[[0, 2]].any()
    with pytest.raises(T.VocabularyError):
        T.embedding_gather(table, [3])


# ---------------------------------------------------------------------------
# properties

# Logits on a 1/64 grid: distinct values differ by far more than rounding.
finite_rows = arrays(np.int64, st.tuples(st.integers(1, 4), st.integers(1, 8)),
                     elements=st.integers(-32_000, 32_000)).map(lambda a: a / 64.0)


@settings(max_examples=60, deadline=None)
@given(finite_rows)
def test_softmax_is_a_distribution_and_keeps_argmax(x):
    p = T.stable_softmax(x)
    assert np.all((p >= 0) & (p <= 1))
    assert np.allclose(p.sum(-1), 1, atol=1e-6)
    assert np.array_equal(np.argmax(p, -1), np.argmax(x, -1))


def test_backward_is_linear_in_the_loss():
    for seed in range(10):
        rng = stream(seed, "linearity")
        a = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
        w = Tensor(rng.standard_normal((4, 2)), requires_grad=True)
        f1 = lambda: T.tsum(T.relu(T.matmul(a, w)))
        f2 = lambda: T.tsum(T.sigmoid(T.matmul(a, w)) * Tensor(rng_w))
        rng_w = rng.standard_normal((3, 2))
        (f1() + f2()).backward()
        joint = a.grad.copy(), w.grad.copy()
        a.grad = w.grad = None
        f1().backward()
        f2().backward()
        assert np.allclose(joint[0], a.grad) and np.allclose(joint[1], w.grad)


def test_gradients_accumulate_only_on_leaves_that_ask():
    a = Tensor(np.ones((2, 2)), requires_grad=True)
    b = Tensor(np.ones((2, 2)))
    (a * b).sum().backward()
    assert a.grad is not None and b.grad is None


def test_float32_storage_and_float64_reductions():
    x = Tensor(np.full(10_000_000 // 100, 0.1, dtype=np.float32))
    assert x.dtype == np.float32
    assert abs(T.tsum(x).item() - 10_000.0) < 1e-2


def test_same_seed_same_masks_and_independent_streams():
    a = T.dropout(Tensor(np.ones(1000)), 0.5, True, Streams(5)("dropout", 0)).data
    b = T.dropout(Tensor(np.ones(1000)), 0.5, True, Streams(5)("dropout", 0)).data
    c = T.dropout(Tensor(np.ones(1000)), 0.5, True, Streams(5)("dropout", 1)).data
    assert np.array_equal(a, b) and not np.array_equal(a, c)
    # Drawing from one labelled stream does not shift another.
    s = Streams(5)
    s("init", "x").random(100)
    assert np.array_equal(s("dropout", 0).random(3), Streams(5)("dropout", 0).random(3))
    assert np.array_equal(Streams(5).child("policy")("init").random(3), Streams(5)("policy", "init").random(3))
