"""Finite-difference checks for every engine op."""

import numpy as np
import pytest

from tablemt import autograd as ag
from tablemt.autograd import Tensor


def fd_check(fn, arrays, eps=1e-6, rtol=1e-5):
    """Compare backward() grads of scalar fn(*tensors) against central FD."""
    tensors = [Tensor(a.copy()) for a in arrays]
    out = fn(*tensors)
    out.backward()

    def feval(ai, idx, delta):
        mod = [a.copy() for a in arrays]
        mod[ai][idx] += delta
        return fn(*[Tensor(m) for m in mod]).item()

    for ai, (t, base) in enumerate(zip(tensors, arrays)):
        grad = t.grad if t.grad is not None else np.zeros_like(base)
        for pos in range(min(base.size, 6)):
            idx = np.unravel_index(pos, base.shape)
            fd = (feval(ai, idx, eps) - feval(ai, idx, -eps)) / (2 * eps)
            assert grad[idx] == pytest.approx(fd, rel=rtol, abs=1e-7), f"grad mismatch at {idx}"


rng = np.random.default_rng(42)


def test_add_mul_broadcast():
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(4,))
    fd_check(lambda x, y: ((x + y) * (x * 0.5 + 2.0)).sum(), [a, b])


def test_sub_div_pow():
    a = rng.normal(size=(3, 3)) + 3.0
    b = rng.normal(size=(3, 3)) + 3.0
    fd_check(lambda x, y: ((x - y) / (y**2.0)).sum(), [a, b])


def test_matmul_transpose():
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(4, 2))
    fd_check(lambda x, y: ((x @ y) * (x @ y)).sum(), [a, b])
    fd_check(lambda x: (x.T @ x).sum(), [a])


def test_nonlinearities():
    a = rng.normal(size=(2, 5))
    fd_check(lambda x: x.tanh().sum(), [a])
    fd_check(lambda x: x.sigmoid().sum(), [a])
    fd_check(lambda x: (x * x + 0.5).sqrt().sum(), [a])
    fd_check(lambda x: x.exp().sum(), [a])
    fd_check(lambda x: (x * x + 1.0).log().sum(), [a])


def test_relu_and_clamp_away_from_kinks():
    a = rng.normal(size=(4, 4))
    a[np.abs(a) < 0.1] = 0.5
    fd_check(lambda x: x.relu().sum(), [a])
    fd_check(lambda x: x.clamp_min(0.0).sum(), [a])


def test_reductions():
    a = rng.normal(size=(3, 4, 2))
    fd_check(lambda x: x.sum(axis=1).tanh().sum(), [a])
    fd_check(lambda x: x.mean(axis=(0, 2)).tanh().sum(), [a])
    fd_check(lambda x: x.max(axis=(0, 1)).sum(), [a])
    fd_check(lambda x: x.max().reshape(1).sum(), [a])


def test_max_tie_splits_gradient():
    a = Tensor(np.array([[1.0, 1.0, 0.0]]))
    out = a.max(axis=1)
    out.backward()
    assert np.allclose(a.grad, [[0.5, 0.5, 0.0]])


def test_getitem_slices_and_fancy():
    a = rng.normal(size=(5, 3))
    idx = np.array([0, 2, 2, 4])
    fd_check(lambda x: x[1:4, :2].sum(), [a])
    fd_check(lambda x: x[idx].sum(), [a])  # repeated index accumulates
    fd_check(lambda x: x[(np.array([0, 1]), np.array([2, 0]))].sum(), [a])


def test_reshape_concat_stack():
    a = rng.normal(size=(2, 3))
    b = rng.normal(size=(2, 3))
    fd_check(lambda x, y: ag.concat([x, y], axis=1).tanh().sum(), [a, b])
    fd_check(lambda x: x.reshape(6).tanh().sum(), [a])
    v1 = rng.normal(size=(4,))
    v2 = rng.normal(size=(4,))
    fd_check(lambda x, y: ag.stack_rows([x, y]).tanh().sum(), [v1, v2])


def test_range_rowmax_matches_loop_and_grads():
    h = rng.normal(size=(6, 3))
    starts = np.array([0, 2, 1, 5])
    stops = np.array([3, 6, 2, 6])
    out = ag.range_rowmax(Tensor(h), starts, stops)
    expected = np.stack([h[s:e].max(axis=0) for s, e in zip(starts, stops)])
    assert np.array_equal(out.data, expected)
    fd_check(lambda x: ag.range_rowmax(x, starts, stops).tanh().sum(), [h])


def test_conv3x3_shapes_and_grads():
    x = rng.normal(size=(4, 4, 3))
    w = rng.normal(size=(3, 3, 3, 2))
    b = rng.normal(size=(2,))
    out = ag.conv3x3(Tensor(x), Tensor(w), Tensor(b))
    assert out.shape == (4, 4, 2)
    fd_check(lambda xx, ww, bb: ag.conv3x3(xx, ww, bb).tanh().sum(), [x, w, b])


def test_conv3x3_single_cell_is_center_tap():
    x = rng.normal(size=(1, 1, 3))
    w = rng.normal(size=(3, 3, 3, 2))
    b = rng.normal(size=(2,))
    out = ag.conv3x3(Tensor(x), Tensor(w), Tensor(b))
    dense = x[0, 0] @ w[1, 1] + b
    assert np.allclose(out.data[0, 0], dense)


def test_no_grad_suppresses_graph():
    a = Tensor(np.ones((2, 2)))
    with ag.no_grad():
        out = (a * 3.0).sum()
    assert out._parents == ()
    out_g = (a * 3.0).sum()
    assert out_g._parents != ()


def test_backward_accumulates_through_shared_nodes():
    a = Tensor(np.array([2.0]))
    b = a * a  # a appears twice
    (b + a).backward()
    assert np.allclose(a.grad, [5.0])  # 2a + 1


def test_zero_upstream_gives_zero_param_grad():
    a = Tensor(rng.normal(size=(3, 3)))
    (a.tanh() * 0.0).sum().backward()
    assert np.allclose(a.grad, 0.0)
