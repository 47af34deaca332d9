import logging

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from tsner.errors import InvalidInputError
from tsner.numerics import (
    AdamState,
    adam_step,
    finite_diff_grad,
    max_relative_error,
    mse_mean,
    nll,
    ortho_penalty,
    ortho_penalty_grad,
    population_variance,
    softmax,
)

finite = st.floats(-700, 700, allow_nan=False, allow_infinity=False)
logit_vectors = arrays(np.float64, st.integers(1, 12), elements=finite)


def prob_vectors(n):
    return arrays(np.float64, n, elements=st.floats(0.01, 1.0)).map(lambda a: a / a.sum())


# softmax


def test_softmax_uniform():
    np.testing.assert_allclose(softmax([0.0, 0.0, 0.0]), [1 / 3] * 3, rtol=0, atol=1e-15)


@pytest.mark.parametrize("c", [-50.0, 0.0, 3.7, 600.0])
def test_softmax_log2_gap(c):
    np.testing.assert_allclose(softmax([c, c + np.log(2.0)]), [1 / 3, 2 / 3], atol=1e-12)


def test_softmax_matches_high_precision_reference():
    # 200-digit evaluation, frozen
    expected = [0.7855970345892758580910113, 0.0391125732706874519544254, 0.1752903921400366899545633]
    np.testing.assert_allclose(softmax([2.0, -1.0, 0.5]), expected, rtol=0, atol=1e-12)
    mp.mp.dps = 200
    ex = [mp.e ** mp.mpf(v) for v in (2, -1, mp.mpf("0.5"))]
    live = [float(e / sum(ex)) for e in ex]
    np.testing.assert_allclose(softmax([2.0, -1.0, 0.5]), live, rtol=0, atol=1e-12)


def test_softmax_rejects_non_finite():
    for bad in ([1.0, np.nan], [np.inf, 0.0], []):
        with pytest.raises(InvalidInputError):
            softmax(bad)


def test_softmax_rows():
    z = np.array([[0.0, 0.0], [0.0, np.log(3.0)]])
    np.testing.assert_allclose(softmax(z), [[0.5, 0.5], [0.25, 0.75]], atol=1e-15)


@given(logit_vectors)
def test_softmax_is_distribution(z):
    p = softmax(z)
    assert p.shape == z.shape
    assert np.all(p >= 0) and np.all(p <= 1)
    assert abs(p.sum() - 1.0) < 1e-9


@given(arrays(np.float64, st.integers(1, 12), elements=st.floats(-100, 100)), st.floats(-100, 100))
def test_softmax_shift_invariance(z, c):
    np.testing.assert_allclose(softmax(z + c), softmax(z), rtol=0, atol=1e-12)


# mse_mean


def test_mse_identity_and_forced_value():
    p = np.array([0.2, 0.3, 0.5])
    assert mse_mean(p, p) == 0.0
    assert mse_mean([1.0, 0.0], [0.0, 1.0]) == 1.0


def test_mse_matches_loop(rng):
    for _ in range(50):
        n = int(rng.integers(1, 10))
        p, q = rng.dirichlet(np.ones(n)), rng.dirichlet(np.ones(n))
        ref = 0.0
        for a, b in zip(p, q):
            ref += (a - b) ** 2
        assert abs(mse_mean(p, q) - ref / n) <= 1e-15


def test_mse_length_mismatch():
    with pytest.raises(InvalidInputError):
        mse_mean([0.5, 0.5], [1.0, 0.0, 0.0])


@given(st.integers(2, 9).flatmap(lambda n: st.tuples(prob_vectors(n), prob_vectors(n))))
def test_mse_symmetric_nonnegative(pq):
    p, q = pq
    assert mse_mean(p, q) == mse_mean(q, p)
    assert mse_mean(p, q) >= 0
    assert mse_mean(p, p) == 0.0


# nll


def test_nll_values():
    assert nll([1.0, 0.0, 0.0], 0) == 0.0
    assert abs(nll([0.25] * 4, 2) - 1.386294361119890618834464) < 1e-12
    assert abs(nll([0.2, 0.5, 0.3], 1) - 0.6931471805599453094172321) < 1e-12


def test_nll_clamps_and_warns(caplog):
    with caplog.at_level(logging.WARNING, logger="tsner.numerics"):
        v = nll([1.0, 0.0], 1)
    assert v == pytest.approx(-np.log(1e-12))
    assert "clamped" in caplog.text


def test_nll_bad_index():
    with pytest.raises(InvalidInputError):
        nll([0.5, 0.5], 2)


# ortho_penalty


def test_ortho_penalty_projection_and_square():
    m, K = 5, 2
    assert ortho_penalty(np.eye(m)[:, :K]) == pytest.approx(m - K, abs=1e-15)
    Q, _ = np.linalg.qr(np.random.default_rng(0).normal(size=(4, 4)))
    assert ortho_penalty(Q) == pytest.approx(0.0, abs=1e-24)
    assert ortho_penalty(np.eye(m)[:, :K], gram="inner") == 0.0


def test_ortho_penalty_elementwise(rng):
    P = rng.normal(size=(4, 2))
    ref = 0.0
    for i in range(4):
        for j in range(4):
            g = sum(P[i, k] * P[j, k] for k in range(2))
            ref += (g - (1.0 if i == j else 0.0)) ** 2
    assert abs(ortho_penalty(P) - ref) < 1e-12


@pytest.mark.parametrize("gram", ["outer", "inner"])
def test_ortho_penalty_grad(rng, gram):
    P = rng.normal(size=(5, 3))
    num = finite_diff_grad(lambda a: ortho_penalty(a[0], gram), [P])
    assert max_relative_error([ortho_penalty_grad(P, gram)], num) < 1e-6


def test_ortho_penalty_shape_check():
    with pytest.raises(InvalidInputError):
        ortho_penalty(np.ones(3))


@given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 5)), elements=st.floats(-3, 3)))
def test_ortho_penalty_nonnegative(P):
    assert ortho_penalty(P) >= 0


# adam_step


def test_adam_zero_gradient_no_decay():
    p = [np.array([1.0, -2.0])]
    new, state = adam_step(p, [np.zeros(2)], AdamState(), lr=0.1, weight_decay=0.0)
    np.testing.assert_array_equal(new[0], p[0])
    assert state.step == 1


def test_adam_first_step_magnitude():
    new, _ = adam_step([np.zeros(3)], [np.array([0.3, -5.0, 1e-3])], AdamState(), lr=0.01, eps=1e-16, weight_decay=0.0)
    np.testing.assert_allclose(np.abs(new[0]), 0.01, rtol=1e-9)


def _reference_adamw(theta, grad_fn, steps, lr, b1=0.9, b2=0.999, eps=1e-8, wd=0.01):
    theta = list(theta)
    m = [0.0] * len(theta)
    v = [0.0] * len(theta)
    trace = []
    for t in range(1, steps + 1):
        g = grad_fn(theta)
        for i in range(len(theta)):
            m[i] = b1 * m[i] + (1 - b1) * g[i]
            v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i]
            mh = m[i] / (1 - b1**t)
            vh = v[i] / (1 - b2**t)
            theta[i] = theta[i] - lr * wd * theta[i] - lr * mh / (vh**0.5 + eps)
        trace.append(list(theta))
    return trace


def test_adam_three_step_trace():
    grad = lambda th: [2 * th[0], 6 * th[1]]
    ref = _reference_adamw([1.0, -2.0], grad, 3, lr=0.1)
    # 50-digit evaluation of the same recurrence, frozen
    frozen = [
        [0.8990000004999999975, -1.8980000000833333333],
        [0.79851902716852091622, -1.7962725883079602435],
        [0.69891118315823152646, -1.6949445138748256611],
    ]
    params, state = [np.array([1.0, -2.0])], AdamState()
    for t in range(3):
        params, state = adam_step(params, [np.array(grad(params[0]))], state, lr=0.1)
        np.testing.assert_allclose(params[0], ref[t], rtol=0, atol=1e-12)
        np.testing.assert_allclose(params[0], frozen[t], rtol=0, atol=1e-12)
    assert state.step == 3


def test_adam_is_pure(rng):
    p = [rng.normal(size=(3, 2)), rng.normal(size=4)]
    g = [rng.normal(size=(3, 2)), rng.normal(size=4)]
    s0 = AdamState.zeros_like(p)
    a, sa = adam_step(p, g, s0, lr=0.01)
    b, sb = adam_step(p, g, s0, lr=0.01)
    for x, y in zip(a + sa.m + sa.v, b + sb.m + sb.v):
        assert x.tobytes() == y.tobytes()
    assert s0.step == 0 and not np.any(s0.m[0])


def test_adam_errors():
    with pytest.raises(InvalidInputError):
        adam_step([np.zeros(2)], [np.zeros(3)], AdamState(), lr=0.1)
    with pytest.raises(InvalidInputError):
        adam_step([np.zeros(2)], [np.zeros(2)], AdamState(), lr=0.0)


# finite differences


def test_finite_diff_quadratic_and_constant():
    g = finite_diff_grad(lambda a: float(np.sum(a[0] ** 2)), [np.array([1.0, 2.0])], eps=1e-5)
    np.testing.assert_allclose(g[0], [2.0, 4.0], atol=1e-6)
    z = finite_diff_grad(lambda a: 3.0, [np.ones((2, 2))])
    assert not np.any(z[0])


def test_finite_diff_leaves_input_untouched():
    x = np.array([0.5, -1.0])
    finite_diff_grad(lambda a: float(np.sum(np.sin(a[0]))), [x])
    np.testing.assert_array_equal(x, [0.5, -1.0])


def test_max_relative_error_floor():
    assert max_relative_error([np.array([0.0])], [np.array([1e-10])]) == pytest.approx(1e-2)
    assert max_relative_error([np.array([2.0])], [np.array([1.0])]) == 0.5


def test_population_variance():
    assert population_variance([1.0, 3.0]) == 1.0
    assert population_variance(np.full((3, 2), 4.2)) == 0.0
