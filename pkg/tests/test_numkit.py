import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from corgcn import numkit as nk
from corgcn.numkit import Tensor
from oracles import central_differences, relative_error


def _param(rng, *shape, positive=False):
    data = rng.normal(size=shape)
    if positive:
        data = np.abs(data) + 0.5
    return Tensor(data, requires_grad=True)


# each case builds a scalar loss from freshly drawn parameters
def _cases():
    w = np.random.default_rng(7).normal(size=(3, 4))  # fixed weighting of outputs

    def weighted(t):
        return (t * Tensor(w[: t.shape[0], : t.shape[1]])).sum()

    return {
        "add": (lambda r: [_param(r, 3, 4), _param(r, 1, 4)], lambda a, b: weighted(a + b)),
        "sub": (lambda r: [_param(r, 3, 4), _param(r, 3, 1)], lambda a, b: weighted(a - b)),
        "mul": (lambda r: [_param(r, 3, 4), _param(r, 3, 4)], lambda a, b: weighted(a * b)),
        "div": (lambda r: [_param(r, 3, 4), _param(r, 3, 4, positive=True)],
                lambda a, b: weighted(a / b)),
        "neg": (lambda r: [_param(r, 3, 4)], lambda a: weighted(-a)),
        "power": (lambda r: [_param(r, 3, 4, positive=True)], lambda a: weighted(a ** 2.5)),
        "exp": (lambda r: [_param(r, 3, 4)], lambda a: weighted(nk.exp(a))),
        "log": (lambda r: [_param(r, 3, 4, positive=True)], lambda a: weighted(nk.log(a))),
        "sigmoid": (lambda r: [_param(r, 3, 4)], lambda a: weighted(nk.sigmoid(a * 3.0))),
        "relu": (lambda r: [_param(r, 3, 4)], lambda a: weighted(nk.relu(a))),
        "matmul": (lambda r: [_param(r, 3, 5), _param(r, 5, 4)], lambda a, b: weighted(a @ b)),
        "batched_matmul": (lambda r: [_param(r, 2, 3, 5), _param(r, 5, 4)],
                           lambda a, b: weighted((a @ b).sum(axis=0))),
        "swapaxes": (lambda r: [_param(r, 4, 3)], lambda a: weighted(a.T)),
        "reshape": (lambda r: [_param(r, 12)], lambda a: weighted(a.reshape(3, 4))),
        "take": (lambda r: [_param(r, 5, 4)], lambda a: weighted(a[np.array([0, 2, 2])])),
        "concat": (lambda r: [_param(r, 3, 2), _param(r, 3, 2)],
                   lambda a, b: weighted(nk.concat([a, b], axis=1))),
        "sum_axis": (lambda r: [_param(r, 3, 4, 2)], lambda a: weighted(a.sum(axis=2))),
        "mean": (lambda r: [_param(r, 3, 4, 2)], lambda a: weighted(a.mean(axis=-1))),
        "softmax": (lambda r: [_param(r, 3, 4)], lambda a: weighted(nk.softmax(a, axis=-1))),
        "softmax_axis0": (lambda r: [_param(r, 3, 4)], lambda a: weighted(nk.softmax(a, axis=0))),
        "log_softmax": (lambda r: [_param(r, 3, 4)], lambda a: weighted(nk.log_softmax(a))),
        "l2_normalize": (lambda r: [_param(r, 3, 4)], lambda a: weighted(nk.l2_normalize(a))),
        "clamp": (lambda r: [_param(r, 3, 4)], lambda a: weighted(nk.clamp(a, -0.5, 0.5))),
    }


CASES = _cases()


@pytest.mark.parametrize("op", sorted(CASES))
def test_gradient_matches_central_differences(op, rng):
    make, fn = CASES[op]
    params = make(rng)
    nk.backward(fn(*params))
    for p in params:
        def loss():
            with nk.no_grad():
                return float(fn(*params).data)
        numeric = central_differences(loss, p)
        assert relative_error(p.grad, numeric) < 1e-4, op


def test_matmul_identity_keeps_row():
    row = np.array([[1.5, -2.0, 3.0]])
    np.testing.assert_array_equal((Tensor(np.eye(1)) @ Tensor(row)).data, row)


def test_softmax_of_equal_row_is_uniform():
    np.testing.assert_allclose(nk.softmax(Tensor(np.full((1, 5), 3.3))).data, 0.2)


def test_sigmoid_at_zero():
    assert nk.sigmoid(Tensor(0.0)).data == 0.5


def test_sigmoid_is_stable_for_large_inputs():
    out = nk.sigmoid(Tensor([-800.0, 800.0])).data
    assert np.all(np.isfinite(out))
    assert out[0] == 0.0 and out[1] == 1.0


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (4, 6), elements=st.floats(-50, 50)))
def test_softmax_rows_sum_to_one(x):
    out = nk.softmax(Tensor(x), axis=-1).data
    assert np.all(out >= 0)
    np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-9)


def test_grad_of_sum_is_ones():
    w = Tensor(np.arange(4.0).reshape(2, 2), requires_grad=True)
    nk.backward(w.sum())
    np.testing.assert_array_equal(w.grad, np.ones((2, 2)))


def test_grad_of_sum_of_squares():
    w = Tensor([[1.0, 2.0], [3.0, 4.0]], requires_grad=True)
    nk.backward((w * w).sum())
    np.testing.assert_array_equal(w.grad, [[2.0, 4.0], [6.0, 8.0]])


def test_fan_out_accumulates(rng):
    w = _param(rng, 3)
    nk.backward((w * 2.0).sum() + (w * 3.0).sum() + w.sum())
    np.testing.assert_allclose(w.grad, 6.0)


def test_gradient_linearity(rng):
    w = _param(rng, 3, 3)
    x = Tensor(rng.normal(size=(3, 3)))

    def l1():
        return nk.sigmoid(w @ x).sum()

    def l2():
        return (nk.exp(w * 0.3) * x).mean()

    nk.backward(l1() + l2())
    together = w.grad
    w.grad = None
    nk.backward(l1())
    g1 = w.grad
    w.grad = None
    nk.backward(l2())
    np.testing.assert_allclose(together, g1 + w.grad, rtol=1e-12, atol=1e-14)


def test_backward_requires_scalar():
    w = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError):
        nk.backward(w * 2.0)


def test_backward_twice_fails():
    w = Tensor(np.ones(3), requires_grad=True)
    loss = (w * w).sum()
    nk.backward(loss)
    with pytest.raises(RuntimeError):
        nk.backward(loss)


def test_backward_clears_tape():
    w = Tensor(np.ones(3), requires_grad=True)
    nk.backward((w * w).sum())
    assert len(nk.get_tape()) == 0


def test_no_grad_records_nothing():
    w = Tensor(np.ones(3), requires_grad=True)
    with nk.no_grad():
        out = (w * w).sum()
    assert len(nk.get_tape()) == 0
    assert not out.requires_grad


def test_non_finite_loss_raises():
    w = Tensor([1.0], requires_grad=True)
    with pytest.raises(FloatingPointError):
        nk.backward((w * np.inf).sum())


@pytest.mark.parametrize("bad", [
    lambda: Tensor(np.ones((2, 3))) @ Tensor(np.ones((2, 3))),
    lambda: Tensor(np.ones((2, 3))) + Tensor(np.ones((3, 2))),
    lambda: nk.log(Tensor([1.0, 0.0])),
    lambda: nk.power(Tensor([-1.0]), 0.5),
    lambda: Tensor([1.0]) / Tensor([0.0]),
])
def test_domain_and_shape_errors(bad):
    with pytest.raises((ValueError, ZeroDivisionError)):
        bad()


def test_l2_normalize_zero_row_is_zero():
    out = nk.l2_normalize(Tensor([[0.0, 0.0], [3.0, 4.0]])).data
    np.testing.assert_array_equal(out, [[0.0, 0.0], [0.6, 0.8]])


def test_dropout_eval_is_identity_and_train_is_inverted(rng):
    x = Tensor(np.ones((200, 50)))
    assert nk.dropout(x, 0.3, rng, training=False) is x
    out = nk.dropout(x, 0.3, rng, training=True).data
    kept = out[out > 0]
    np.testing.assert_allclose(kept, 1.0 / 0.7)
    assert abs((out == 0).mean() - 0.3) < 0.02


# ---------------------------------------------------------------- adam

def test_adam_zero_gradient_is_fixed_point():
    p = Tensor([1.0, -2.0], requires_grad=True)
    state = nk.AdamState(lr=0.1)
    for _ in range(3):
        p.grad = np.zeros(2)
        nk.adam_step([p], state)
    np.testing.assert_array_equal(p.data, [1.0, -2.0])


def test_adam_first_step_moves_by_lr():
    p = Tensor([0.0], requires_grad=True)
    p.grad = np.array([1.0])
    nk.adam_step([p], nk.AdamState(lr=0.001))
    np.testing.assert_allclose(p.data, [-0.001], rtol=1e-6)
    assert p.grad is None


def test_adam_reduces_quadratic():
    x = Tensor([1.0], requires_grad=True)
    state = nk.AdamState(lr=0.1)
    losses = []
    for _ in range(3):
        loss = (x * x).sum()
        losses.append(float(loss.data))
        nk.backward(loss)
        nk.adam_step([x], state)
    assert losses[0] > losses[1] > losses[2]
    assert state.step == 3
    assert state.m[0].shape == x.shape


def test_adam_missing_grad_raises():
    p = Tensor([1.0], requires_grad=True, name="w")
    with pytest.raises(ValueError, match="w"):
        nk.adam_step([p], nk.AdamState())
