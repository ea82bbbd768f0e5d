import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from v2m.autodiff import (OP_KINDS, GraphError, ShapeError, Tensor, apply_op, backward, concat,
                          grad_check, mse_loss, no_grad, trace)
from v2m.checks import op_cases

F64 = np.float64


def test_float32_default():
    assert Tensor([1.0, 2.0]).dtype == np.float32
    assert Tensor(np.zeros(3, dtype=np.float64)).dtype == np.float32
    assert Tensor(np.zeros(3), dtype=F64).dtype == F64


def test_matmul_shape():
    out = Tensor(np.ones((2, 3))) @ Tensor(np.ones((3, 4)))
    assert out.shape == (2, 4)


def test_matmul_shape_error_names_dims():
    with pytest.raises(ShapeError, match="matmul"):
        Tensor(np.ones((2, 3))) @ Tensor(np.ones((4, 4)))


def test_add_requires_equal_shapes():
    with pytest.raises(ShapeError, match="add"):
        apply_op("add", [Tensor(np.ones((2, 3))), Tensor(np.ones((3, 2)))])


def test_unknown_kind():
    with pytest.raises(GraphError, match="unknown op"):
        apply_op("conv2d", [Tensor([1.0])])


def test_softmax_rows_sum_to_one():
    x = Tensor(np.random.default_rng(0).standard_normal((5, 7)) * 10)
    s = x.softmax(axis=-1).data
    assert np.all(s > 0) and np.all(s < 1)
    np.testing.assert_allclose(s.sum(axis=-1), 1.0, atol=1e-6)


def test_layer_norm_constant_row_is_zero():
    out = Tensor(np.full((2, 6), 3.5)).layer_norm(eps=1e-5).data
    assert np.all(out == 0)


def test_square_gradient():
    x = Tensor([3.0], requires_grad=True)
    (x * x).sum().backward()
    np.testing.assert_allclose(x.grad, [6.0])


def test_gradients_accumulate_over_uses():
    x = Tensor(np.arange(4.0), requires_grad=True)
    (x.sum() + x.sum()).backward()
    np.testing.assert_array_equal(x.grad, 2 * np.ones(4))


def test_mse_linear_system_matches_finite_differences():
    rng = np.random.default_rng(1)
    A = Tensor(rng.standard_normal((4, 4)), dtype=F64)
    y = Tensor(rng.standard_normal((4, 1)), dtype=F64)
    x = Tensor(rng.standard_normal((4, 1)), dtype=F64)
    assert grad_check(lambda v: mse_loss(A @ v, y), x, h=1e-3) < 1e-4


def test_sigmoid_and_gelu_grad_check():
    x = Tensor(np.random.default_rng(2).uniform(-2, 2, (5, 4)), dtype=F64)
    assert grad_check(lambda v: v.sigmoid().sum(), x, h=1e-3) < 1e-4
    assert grad_check(lambda v: v.gelu().sum(), x, h=1e-3) < 1e-3


def test_linear_function_grad_check_exact():
    x = Tensor(np.random.default_rng(3).standard_normal(6), dtype=F64)
    assert grad_check(lambda v: v.sum(), x, h=1e-3) < 1e-9


def test_non_scalar_loss_rejected():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(GraphError, match="scalar"):
        backward(x * 2.0)


def test_detached_loss_rejected():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(GraphError):
        backward(x.sum().detach())


def test_no_grad_records_nothing():
    x = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        y = (x * 2.0).sum()
    assert y.node is None and not y.requires_grad


def test_trace_is_topological():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    loss = ((x @ x).softmax() + x).sum()
    nodes = trace(loss)
    ids = [n.id for n in nodes]
    assert ids == sorted(ids)
    seen = set()
    for n in nodes:
        for inp in n.inputs:
            if inp.node is not None:
                assert inp.node.id in seen
        seen.add(n.id)


def test_grad_present_only_after_backward_reaches_leaf():
    a = Tensor(np.ones(2), requires_grad=True)
    b = Tensor(np.ones(2), requires_grad=True)
    assert a.grad is None
    (a * 3.0).sum().backward()
    assert a.grad is not None and a.grad.shape == a.shape
    assert b.grad is None


@pytest.mark.parametrize("kind", OP_KINDS)
def test_every_op_gradient(kind):
    fn, x = op_cases(seed=7)[kind]
    assert grad_check(fn, Tensor(x, dtype=F64), h=1e-6) < 1e-3


@pytest.mark.parametrize("shape", [(3,), (2, 5), (2, 3, 4)])
@pytest.mark.parametrize("kind", ["softmax", "layer_norm", "sigmoid", "gelu", "sum", "mean"])
def test_unary_ops_three_shapes(kind, shape):
    rng = np.random.default_rng(len(shape))
    w = Tensor(rng.standard_normal(shape), dtype=F64)
    x = Tensor(rng.standard_normal(shape), dtype=F64)
    attrs = {"axis": -1} if kind in ("softmax", "layer_norm") else None

    def fn(v):
        out = apply_op(kind, [v], attrs)
        return (out * w).sum() if out.shape == shape else out.sum()

    assert grad_check(fn, x, h=1e-6) < 1e-3


@given(arrays(np.float32, st.tuples(st.integers(1, 4), st.integers(1, 4), st.integers(1, 4)),
              elements=st.floats(-10, 10, width=32)))
def test_reshape_transpose_bijections(a):
    x = Tensor(a)
    back = x.transpose(2, 0, 1).transpose(1, 2, 0)
    assert back.data.tobytes() == x.data.tobytes()
    r = x.reshape(-1).reshape(*a.shape)
    assert r.data.tobytes() == x.data.tobytes()


@settings(max_examples=30)
@given(st.integers(1, 4), st.integers(0, 1000))
def test_fanout_gradient_is_sum_of_paths(k, seed):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.standard_normal(3), requires_grad=True, dtype=F64)
    ws = [rng.standard_normal(3) for _ in range(k)]
    loss = None
    for w in ws:
        term = (x * Tensor(w, dtype=F64)).sum()
        loss = term if loss is None else loss + term
    loss.backward()
    np.testing.assert_allclose(x.grad, np.sum(ws, axis=0), rtol=1e-12)


@settings(max_examples=30)
@given(arrays(np.float32, st.tuples(st.integers(1, 5), st.integers(1, 5)),
              elements=st.floats(-50, 50, width=32)))
def test_ops_stay_finite(a):
    x = Tensor(a)
    for out in (x.softmax(), x.layer_norm(), x.sigmoid(), x.gelu(), x.mean(), concat([x, x], 0)):
        assert np.all(np.isfinite(out.data))
