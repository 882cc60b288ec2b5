import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fdcheck import central_diff, max_rel_error
from pscpc.autograd import Tensor, concat, l2_normalize, log_softmax, logsumexp


def _leaf(rng, *shape):
    return Tensor(rng.normal(size=shape), requires_grad=True)


def _check(build, leaves, tol=1e-6):
    for t in leaves:
        t.zero_grad()
    out = build()
    out.backward()
    numeric = central_diff(lambda: float(build().value), [t.value for t in leaves], step=1e-6)
    assert max_rel_error([t.grad for t in leaves], numeric) < tol


@pytest.mark.parametrize("case", ["arith", "matmul", "index", "reduce", "unary", "concat"])
def test_ops_match_finite_differences(case):
    rng = np.random.default_rng(7)
    a, b = _leaf(rng, 3, 4), _leaf(rng, 4)
    c = _leaf(rng, 4, 2)
    builds = {
        "arith": lambda: ((a * b - a / (b * b + 2.0) + 3.0 - (-a)) * 0.5).sum(),
        "matmul": lambda: ((a @ c) * (a @ c)).sum() + (1.0 / (a.T.T @ c + 5.0)).mean(),
        "index": lambda: (a[[0, 2, 0], [1, 3, 1]] * 2.0).sum() + a[1].sum(),
        "reduce": lambda: (a.sum(axis=0) * b).sum() + a.mean(axis=1, keepdims=True).sum(),
        "unary": lambda: ((a.tanh() + a.relu() + (a * 0.3).exp()) * ((a * a + 1.0).log())).sum(),
        "concat": lambda: (concat([a, b.reshape(1, 4)], axis=0) * c.T[0]).sum(),
    }
    _check(builds[case], [a, b, c])


def test_logsumexp_softmax_normalize_gradients():
    rng = np.random.default_rng(8)
    x = _leaf(rng, 4, 5)
    w = rng.normal(size=(4, 5))
    mask = rng.random((4, 5)) > 0.3
    mask[:, 0] = True
    _check(lambda: (logsumexp(x, axis=1, mask=mask) * np.arange(1.0, 5.0)).sum(), [x])
    _check(lambda: (log_softmax(x) * w).sum(), [x])
    _check(lambda: (l2_normalize(x) * w).sum(), [x])


def test_logsumexp_is_shift_stable():
    x = Tensor(np.array([[1000.0, 1000.0], [-1000.0, -1001.0]]))
    out = logsumexp(x, axis=1).value
    assert np.allclose(out, [1000 + np.log(2), -1000 + np.log(1 + np.exp(-1))])


def test_zero_row_stays_zero_after_normalize():
    x = Tensor(np.array([[0.0, 0.0], [3.0, 4.0]]), requires_grad=True)
    y = l2_normalize(x)
    assert y.value.tolist() == [[0.0, 0.0], [0.6, 0.8]]
    y.sum().backward()
    assert np.all(np.isfinite(x.grad))


def test_backward_accumulates_and_zero_grad_resets():
    x = Tensor(np.array([2.0]), requires_grad=True)
    (x * x).sum().backward()
    (x * x).sum().backward()
    assert x.grad.tolist() == [8.0]
    x.zero_grad()
    assert x.grad.tolist() == [0.0]


def test_shared_subexpression_accumulates():
    x = Tensor(np.array([3.0]), requires_grad=True)
    y = x * 2.0
    (y * y + y).sum().backward()
    assert x.grad.tolist() == [2 * 2 * 6.0 + 2.0]


def test_untracked_backward_raises():
    with pytest.raises(RuntimeError):
        Tensor(np.ones(2)).sum().backward()


def test_nonscalar_backward_needs_seed():
    x = Tensor(np.ones(2), requires_grad=True)
    with pytest.raises(RuntimeError):
        (x * 2.0).backward()
    (x * 2.0).backward(np.array([1.0, -1.0]))
    assert x.grad.tolist() == [2.0, -2.0]


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(0, 2 ** 31))
def test_broadcast_gradients_have_leaf_shape(n, m, seed):
    rng = np.random.default_rng(seed)
    a, row, col = _leaf(rng, n, m), _leaf(rng, m), _leaf(rng, n, 1)
    out = ((a + row) * col - row).sum()
    out.backward()
    assert a.grad.shape == (n, m) and row.grad.shape == (m,) and col.grad.shape == (n, 1)
    assert np.allclose(row.grad, col.value.sum() - n)
