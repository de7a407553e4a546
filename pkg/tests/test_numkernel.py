import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from scafds.numkernel import (
    AdamW,
    NumericError,
    ShapeError,
    Tape,
    Tensor,
    cosine_lr,
    finite_diff_check,
    no_tape,
    ops,
)


def T(x, grad=True):
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=grad)


def test_matmul_examples():
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(ops.matmul(Tensor(np.eye(2)), Tensor(a)).values, a)
    assert np.array_equal(ops.matmul(Tensor(np.eye(2)), Tensor(np.zeros((2, 3)))).values, np.zeros((2, 3)))
    assert np.array_equal(ops.matmul(Tensor(a), Tensor([[5.0], [6.0]])).values, [[17.0], [39.0]])


def test_matmul_shape_mismatch():
    with pytest.raises(ShapeError):
        ops.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


def test_softmax_examples():
    assert np.allclose(ops.softmax(Tensor([0.0, 0.0])).values, [0.5, 0.5], atol=0, rtol=0)
    assert ops.softmax(Tensor([123.4])).values[0] == 1.0
    x = np.array([1.0, 2.0, 3.0])
    ref = np.array([math.exp(v) for v in x])
    assert np.allclose(ops.softmax(Tensor(x)).values, ref / ref.sum(), rtol=1e-14)


@given(arrays(np.float64, st.integers(1, 12), elements=st.floats(-1e6, 1e6)))
@settings(max_examples=200, deadline=None)
def test_softmax_on_simplex(x):
    p = ops.softmax(Tensor(x)).values
    assert np.all(p >= 0)
    assert abs(p.sum() - 1.0) <= 1e-12


def test_leaky_relu_examples():
    assert ops.leaky_relu(Tensor(5.0), 0.2).item() == 5.0
    assert ops.leaky_relu(Tensor(0.0), 0.2).item() == 0.0
    assert ops.leaky_relu(Tensor(-2.0), 0.2).item() == pytest.approx(-0.4, abs=1e-15)


def test_sigmoid_examples():
    assert ops.sigmoid(Tensor(0.0)).item() == 0.5
    assert abs(ops.sigmoid(Tensor(50.0)).item() - 1.0) < 1e-12
    assert ops.sigmoid(Tensor(1.0)).item() == pytest.approx(0.7310585786, abs=1e-10)
    assert np.isfinite(ops.sigmoid(Tensor([-1000.0, 1000.0])).values).all()


def test_log_sigmoid_stable():
    x = np.array([-800.0, -3.0, 0.0, 3.0, 800.0])
    got = ops.log_sigmoid(Tensor(x)).values
    assert np.isfinite(got).all()
    assert got[2] == pytest.approx(-math.log(2.0))
    assert got[0] == pytest.approx(-800.0)


def test_fd_check_quadratic_and_constant():
    x = T([3.0])
    rep = finite_diff_check(lambda a: ops.sum(a * a), [x])
    assert x.grad[0] == pytest.approx(6.0)
    assert rep.passed
    c = T([1.0, 2.0])
    rep = finite_diff_check(lambda a: ops.sum(a * 0.0) + 4.0, [c])
    assert np.array_equal(c.grad, [0.0, 0.0])
    assert rep.worst == 0.0


def test_fd_check_rejects_bad_epsilon_and_nonscalar():
    with pytest.raises(ValueError):
        finite_diff_check(lambda a: ops.sum(a), [T([1.0])], epsilon=1.0)
    with pytest.raises(NumericError):
        finite_diff_check(lambda a: a * 2.0, [T([1.0, 2.0])])
    with pytest.raises(NumericError), np.errstate(invalid="ignore"):
        finite_diff_check(lambda a: ops.sum(ops.log(a)), [T([-1.0])])


PRIMITIVES = {
    "add": (lambda a, b: ops.sum((a + b) * (a - b))),
    "div": (lambda a, b: ops.sum(a / (ops.exp(b) + 1.0))),
    "power": (lambda a, b: ops.sum(ops.power(ops.exp(a), 3) * b)),
    "matmul": (lambda a, b: ops.sum(ops.tanh(ops.matmul(a, ops.transpose(b))))),
    "sigmoid": (lambda a, b: ops.sum(ops.sigmoid(a) * b)),
    "log_sigmoid": (lambda a, b: ops.sum(ops.log_sigmoid(a * b))),
    "elu": (lambda a, b: ops.sum(ops.elu(a) * b)),
    "leaky": (lambda a, b: ops.sum(ops.leaky_relu(a, 0.2) * b)),
    "softmax": (lambda a, b: ops.sum(ops.softmax(a, axis=1) * b)),
    "mean": (lambda a, b: ops.mean(a * b, axis=0).sum()),
    "getitem": (lambda a, b: ops.sum(ops.getitem(a, np.array([0, 2, 2])) * ops.getitem(b, slice(0, 3)))),
    "reshape": (lambda a, b: ops.sum(ops.reshape(a, (-1,)) * ops.reshape(b, (-1,)))),
    "concat": (lambda a, b: ops.sum(ops.square(ops.concat([a, b], axis=1)))),
    "stack": (lambda a, b: ops.sum(ops.tanh(ops.stack([a, b], axis=0)))),
    "gather_scatter": (lambda a, b: ops.sum(ops.scatter_add_rows(ops.gather_rows(a, np.array([0, 1, 1, 3])),
                                                                  np.array([2, 2, 0, 1]), 4) * b)),
    "segment_softmax": (lambda a, b: ops.sum(ops.segment_softmax(a, np.array([0, 1, 4])) * b)),
    "where": (lambda a, b: ops.sum(ops.where(np.array([[True, False, True]] * 4), a, b) ** 2)),
    "dot_rows": (lambda a, b: ops.sum(ops.dot_rows(a, b) ** 2)),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_gradients(name):
    rng = np.random.default_rng(len(name))
    a, b = T(rng.normal(size=(4, 3))), T(rng.normal(size=(4, 3)))
    if name == "gather_scatter":
        b = T(rng.normal(size=(4, 3)))
    rep = finite_diff_check(PRIMITIVES[name], [a, b])
    assert rep.worst < 1e-4, rep.max_rel_error


def test_gradient_accumulates_over_reuse():
    x = T([2.0])
    with Tape() as tape:
        y = ops.sum(x * x * x + x)
    tape.backward(y)
    assert x.grad[0] == pytest.approx(13.0)


def test_unused_leaf_gets_zero_grad():
    x, y = T([1.0, 2.0]), T([3.0])
    with Tape() as tape:
        z = ops.sum(x * 2.0) + ops.sum(y * 0.0)
    tape.backward(z)
    assert np.array_equal(x.grad, [2.0, 2.0])
    assert np.array_equal(y.grad, [0.0])


def test_tape_order_and_replay():
    rng = np.random.default_rng(0)
    a, b = T(rng.normal(size=(3, 3))), T(rng.normal(size=(3, 2)))
    with Tape() as tape:
        out = ops.sum(ops.softmax(ops.tanh(ops.matmul(a, b)), axis=0))
    produced = set()
    for node in tape.nodes:
        for t in node.inputs:
            assert not t.requires_grad or id(t) in produced or t is a or t is b
        produced.add(id(node.output))
    assert tape.replay_exact()
    assert out.size == 1


def test_no_tape_records_nothing():
    x = T([1.0])
    with Tape() as tape:
        with no_tape():
            ops.exp(x)
    assert len(tape) == 0


def test_cosine_schedule_and_adamw_step():
    assert cosine_lr(1.0, 0, 10) == 1.0
    assert cosine_lr(1.0, 10, 10, min_lr=0.1) == pytest.approx(0.1)
    assert cosine_lr(1.0, 5, 10) == pytest.approx(0.5)
    p = {"w": T([1.0])}
    opt = AdamW(p, lr=0.1, weight_decay=0.0, total_steps=0)
    p["w"].grad = np.array([0.5])
    opt.step()
    # first Adam step moves by lr * sign(g) up to eps
    assert p["w"].values[0] == pytest.approx(0.9, abs=1e-6)


def test_adamw_state_round_trip():
    p = {"w": T(np.ones(3))}
    opt = AdamW(p, lr=0.05, total_steps=10)
    for _ in range(3):
        p["w"].grad = p["w"].values.copy()
        opt.step()
    other = AdamW({"w": T(p["w"].values.copy())}, lr=0.05, total_steps=10)
    other.load_state_dict(opt.state_dict())
    for o in (opt, other):
        o.params["w"].grad = np.ones(3)
        o.step()
    assert np.array_equal(opt.params["w"].values, other.params["w"].values)
