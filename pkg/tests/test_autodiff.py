import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from viper import autodiff as ad
from viper.autodiff import DegenerateInputError, DomainError, GraphError, ShapeError, Tensor


def leaf(x):
    return Tensor(np.asarray(x, dtype=float), requires_grad=True)


def test_matmul_examples():
    np.testing.assert_array_equal(ad.matmul(np.eye(2), np.eye(2)).data, np.eye(2))
    out = ad.matmul([[1, 2], [3, 4]], [[1], [1]])
    np.testing.assert_array_equal(out.data, [[3], [7]])


def test_matmul_gradient_is_broadcast_column_sums():
    rng = np.random.default_rng(0)
    a = leaf(rng.standard_normal((3, 4)))
    b = Tensor(rng.standard_normal((4, 5)))
    ad.backward(ad.tsum(ad.matmul(a, b)))
    np.testing.assert_allclose(a.grad, np.tile(b.data.sum(axis=1), (3, 1)))


def test_matmul_shape_errors():
    with pytest.raises(ShapeError):
        ad.matmul(np.ones((2, 3)), np.ones((2, 3)))
    with pytest.raises(ShapeError):
        ad.matmul(np.ones(3), np.ones((3, 1)))


def test_elementwise_examples():
    assert ad.max0(-3.0).item() == 0.0
    np.testing.assert_array_equal(ad.pow([4.0], 0.5).data, [2.0])
    assert ad.elementwise("exp", 0.0).item() == 1.0
    assert ad.elementwise("add", 1.0, 2.0).item() == 3.0


def test_exp_derivative_at_one():
    x = leaf(1.0)
    ad.backward(ad.exp(x))
    h = 1e-6
    fd = (np.exp(1 + h) - np.exp(1 - h)) / (2 * h)
    assert abs(x.grad - fd) / fd < 1e-6


def test_elementwise_rejects_mismatched_shapes():
    with pytest.raises(ShapeError):
        ad.add(np.ones((2, 3)), np.ones((3, 2)))


def test_domain_errors():
    with pytest.raises(DomainError):
        ad.log(-1.0)
    with pytest.raises(DomainError):
        ad.div(1.0, 0.0)


def test_reductions():
    assert ad.frobenius_norm([[3, 4], [0, 0]]).item() == 5.0
    np.testing.assert_array_equal(ad.reduce("sum", [[1, 2], [3, 4]], axis=0).data, [4, 6])
    with pytest.raises(ShapeError):
        ad.tsum(np.ones((2, 2)), axis=2)


def test_frobenius_gradient():
    x = np.random.default_rng(1).standard_normal((3, 3))
    rep = ad.gradcheck(ad.frobenius_norm, x)
    assert rep.max_rel_error < 1e-5


def test_softmax_examples():
    np.testing.assert_array_equal(ad.softmax_rows([[0.0, 0.0]]).data, [[0.5, 0.5]])
    x = np.random.default_rng(2).standard_normal((4, 6))
    np.testing.assert_allclose(ad.softmax_rows(x).data.sum(axis=1), 1.0, atol=1e-12)
    w = np.random.default_rng(3).standard_normal((4, 6))
    rep = ad.gradcheck(lambda t: ad.tsum(ad.mul(ad.softmax_rows(t), Tensor(w))), x)
    assert rep.max_rel_error < 1e-5


@settings(max_examples=50, deadline=None)
@given(
    arrays(np.float64, (3, 5), elements=st.floats(-30, 30)),
    arrays(np.float64, (3, 1), elements=st.floats(-50, 50)),
)
def test_softmax_row_shift_invariance(x, c):
    a = ad.softmax_rows(x).data
    b = ad.softmax_rows(x + c).data
    np.testing.assert_allclose(a.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_l2_normalize():
    np.testing.assert_allclose(ad.l2_normalize([3.0, 4.0]).data, [0.6, 0.8])
    u = np.array([0.0, 1.0, 0.0])
    np.testing.assert_array_equal(ad.l2_normalize(u).data, u)
    with pytest.raises(DegenerateInputError):
        ad.l2_normalize(np.zeros(4))
    np.testing.assert_array_equal(ad.l2_normalize(np.zeros(4), strict=False).data, np.zeros(4))
    x = np.random.default_rng(4).standard_normal(8)
    w = np.random.default_rng(5).standard_normal(8)
    assert ad.gradcheck(lambda t: ad.dot(ad.l2_normalize(t), w), x).max_rel_error < 1e-5


def test_gradcheck_sum_is_exact():
    # integer inputs and a power-of-two step leave no round-off in the difference quotient
    x = np.arange(-3.0, 3.0).reshape(2, 3)
    rep = ad.gradcheck(ad.tsum, x, step=2.0**-20)
    assert rep.max_rel_error == 0.0


def test_gradcheck_flags_a_wrong_gradient():
    class Bad(ad.Function):
        name = "bad_square"

        def forward(self, x):
            self.x = x
            return x * x

        def backward(self, g):
            return (g * self.x,)  # should be 2x

    rep = ad.gradcheck(lambda t: ad.tsum(Bad.apply(t)), np.array([1.0, 2.0]))
    assert not rep.passed


def test_shared_subexpression_accumulates():
    x = leaf(3.0)
    y = ad.mul(x, x)
    z = ad.add(y, y)  # 2 x^2
    ad.backward(z)
    assert x.grad == pytest.approx(12.0)


def test_backward_consumes_graph_but_grad_does_not():
    x = leaf([1.0, 2.0])
    out = ad.tsum(ad.mul(x, x))
    (g1,) = ad.grad(out, [x])
    (g2,) = ad.grad(out, [x])
    np.testing.assert_array_equal(g1, g2)
    assert x.grad is None
    ad.backward(out)
    np.testing.assert_array_equal(x.grad, [2.0, 4.0])
    with pytest.raises(GraphError):
        ad.backward(out)


def test_backward_requires_scalar_root():
    with pytest.raises(GraphError):
        ad.backward(ad.mul(leaf([1.0, 2.0]), 2.0))


def test_no_grad_records_nothing():
    x = leaf(2.0)
    with ad.no_grad():
        y = ad.mul(x, x)
    assert not y.requires_grad and y.is_leaf


def test_constant_inputs_get_no_gradient():
    x = leaf([1.0, 2.0])
    c = Tensor([3.0, 4.0])
    ad.backward(ad.dot(x, c))
    assert c.grad is None
    np.testing.assert_array_equal(x.grad, [3.0, 4.0])


def test_graph_replay_is_deterministic():
    def run():
        rng = np.random.default_rng(7)
        w = leaf(rng.standard_normal((4, 3)))
        x = Tensor(rng.standard_normal((5, 4)))
        out = ad.tsum(ad.log_softmax_rows(ad.max0(ad.matmul(x, w))))
        ad.backward(out)
        return out.data.tobytes(), w.grad.tobytes()

    assert run() == run()


def test_indexing_and_stack():
    x = leaf(np.arange(6.0).reshape(3, 2))
    row = x[1]
    np.testing.assert_array_equal(row.data, [2.0, 3.0])
    s = ad.stack([x[0], x[2]])
    ad.backward(ad.tsum(s))
    np.testing.assert_array_equal(x.grad, [[1, 1], [0, 0], [1, 1]])
    with pytest.raises(TypeError):
        x[0:1]


def test_max_routes_gradient_to_argmax():
    x = leaf([[1.0, 5.0], [4.0, 2.0]])
    ad.backward(ad.tsum(ad.tmax(x, axis=0)))
    np.testing.assert_array_equal(x.grad, [[0, 1], [1, 0]])


def test_broadcast_to_rules():
    with pytest.raises(ShapeError):
        ad.broadcast_to(np.ones(3), (3, 2))
    x = leaf([1.0, 2.0])
    ad.backward(ad.tsum(ad.broadcast_to(x, (4, 2))))
    np.testing.assert_array_equal(x.grad, [4.0, 4.0])
