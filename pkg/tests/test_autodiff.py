"""Tape autodiff: per-primitive gradient checks and tape invariants.

Analytic oracles, stated before each assertion:
- sum(square(mul(x, y))): d/dx = 2 x y^2.
- Adam from a zero state at t=1 has m_hat = g and v_hat = g^2, so the first
  step is exactly theta - lr * g / (|g| + eps).
- For Hermitian base S, the csolve_hpd adjoint matches entrywise central
  differences on s_re, s_im, and mu even though single-entry perturbations
  are not Hermitian (the real parts of the two sensitivity expressions
  coincide when S = S^H).
"""

import numpy as np
import pytest

from metabeam import autodiff as ad
from metabeam.errors import SingularMatrixError
from metabeam.nn import AdamState, adam_step, sgd_step


def check_grad(build, x0, rel_tol=5e-5, h=1e-6):
    """FD-check d(scalar)/d(leaf) for loss = build(tape, leaf(x0))."""
    x0 = np.asarray(x0, dtype=np.float64)

    def f(vec):
        tape = ad.Tape()
        leaf = tape.leaf(vec.reshape(x0.shape))
        loss = build(tape, leaf)
        (g,) = ad.grad(tape, loss, [leaf])
        return float(loss.value), np.asarray(g).ravel()

    err, ok, _ = ad.finite_diff_check(f, x0.ravel(), h=h, rel_tol=rel_tol)
    assert ok, f"max relative error {err:.3e}"


def rand(rng, *shape):
    return rng.standard_normal(shape)


def test_elementwise_primitives_match_fd():
    rng = np.random.default_rng(0)
    x = rand(rng, 3, 4)
    y = rand(rng, 3, 4)
    cases = {
        "add": lambda t, a: ad.reduce_sum(ad.square(ad.add(a, t.const(y)))),
        "sub": lambda t, a: ad.reduce_sum(ad.square(ad.sub(a, t.const(y)))),
        "mul": lambda t, a: ad.reduce_sum(ad.square(ad.mul(a, t.const(y)))),
        "div": lambda t, a: ad.reduce_sum(ad.square(ad.div(a, t.const(y**2 + 1.0)))),
        "neg": lambda t, a: ad.reduce_sum(ad.square(ad.neg(a))),
        "add_const": lambda t, a: ad.reduce_sum(ad.square(ad.add_const(a, 1.7))),
        "scale": lambda t, a: ad.reduce_sum(ad.square(ad.scale(a, -2.3))),
        "square": lambda t, a: ad.reduce_sum(ad.square(ad.square(a))),
        "softplus": lambda t, a: ad.reduce_sum(ad.square(ad.softplus(a))),
    }
    for name, build in cases.items():
        check_grad(build, x)


def test_positive_domain_primitives_match_fd():
    rng = np.random.default_rng(1)
    x = np.abs(rand(rng, 3, 4)) + 0.5  # keep sqrt/log1p away from 0
    check_grad(lambda t, a: ad.reduce_sum(ad.square(ad.sqrt(a))), x)
    check_grad(lambda t, a: ad.reduce_sum(ad.square(ad.log1p(a))), x)


def test_relu_gradient_away_from_kink():
    rng = np.random.default_rng(2)
    x = rand(rng, 4, 3)
    x[np.abs(x) < 0.1] = 0.5
    check_grad(lambda t, a: ad.reduce_sum(ad.square(ad.relu(a))), x)


def test_matmul_and_reductions_match_fd():
    rng = np.random.default_rng(3)
    x = rand(rng, 4, 3)
    w = rand(rng, 3, 5)
    check_grad(lambda t, a: ad.reduce_sum(ad.square(ad.matmul(a, t.const(w)))), x)
    check_grad(lambda t, a: ad.reduce_sum(ad.square(ad.matmul(t.const(rand(np.random.default_rng(4), 6, 4)), a))), x)
    check_grad(lambda t, a: ad.reduce_mean(ad.square(a)), x)
    check_grad(lambda t, a: ad.reduce_sum(ad.square(ad.reduce_sum(a, axis=1))), x)
    check_grad(
        lambda t, a: ad.reduce_sum(ad.square(ad.reduce_sum(a, axis=0, keepdims=True))),
        x,
    )


def test_shape_primitives_match_fd():
    rng = np.random.default_rng(5)
    x = rand(rng, 2, 6)
    check_grad(lambda t, a: ad.reduce_sum(ad.square(ad.reshape(a, (3, 4)))), x)
    check_grad(lambda t, a: ad.reduce_sum(ad.square(ad.take_cols(a, 1, 4))), x)
    xb = rand(rng, 3, 4, 4)
    check_grad(lambda t, a: ad.reduce_sum(ad.square(ad.bdiag(a))), xb)


def test_structured_const_products_match_fd():
    rng = np.random.default_rng(6)
    tensors = rand(rng, 2, 3, 4, 4)
    coeff = rand(rng, 2, 3)
    check_grad(
        lambda t, a: ad.reduce_sum(ad.square(ad.weighted_const_sum(a, tensors))),
        coeff,
    )
    c = rand(rng, 2, 3, 4)
    x = rand(rng, 2, 4, 5)
    check_grad(lambda t, a: ad.reduce_sum(ad.square(ad.bmm_const_left(c, a))), x)


def test_broadcast_gradients_exact():
    # loss = sum(a * b) with a (3,1) and b (1,4): da = sum_j b_j per row,
    # db = sum_i a_i per column, shapes preserved by unbroadcasting.
    a0 = np.array([[1.0], [2.0], [3.0]])
    b0 = np.array([[4.0, 5.0, 6.0, 7.0]])
    tape = ad.Tape()
    a, b = tape.leaf(a0), tape.leaf(b0)
    loss = ad.reduce_sum(ad.mul(a, b))
    ga, gb = ad.grad(tape, loss, [a, b])
    np.testing.assert_allclose(ga, np.full((3, 1), b0.sum()))
    np.testing.assert_allclose(gb, np.full((1, 4), a0.sum()))


def test_mul_gradient_closed_form():
    # d/dx sum((x y)^2) = 2 x y^2.
    rng = np.random.default_rng(7)
    x0, y0 = rand(rng, 5), rand(rng, 5)
    tape = ad.Tape()
    x = tape.leaf(x0)
    loss = ad.reduce_sum(ad.square(ad.mul(x, tape.const(y0))))
    (g,) = ad.grad(tape, loss, [x])
    np.testing.assert_allclose(g, 2.0 * x0 * y0**2, rtol=1e-14)


def test_grad_does_not_grow_tape():
    tape = ad.Tape()
    x = tape.leaf(np.arange(4.0))
    loss = ad.reduce_sum(ad.square(x))
    before = len(tape)
    ad.grad(tape, loss, [x])
    ad.grad(tape, loss, [x])
    assert len(tape) == before


def test_grad_unused_leaf_is_zero():
    tape = ad.Tape()
    x = tape.leaf(np.ones(3))
    y = tape.leaf(np.ones(2))
    loss = ad.reduce_sum(ad.square(x))
    gx, gy = ad.grad(tape, loss, [x, y])
    np.testing.assert_array_equal(gy, np.zeros(2))
    np.testing.assert_allclose(gx, 2.0 * np.ones(3))


def test_grad_rejects_nonscalar_loss():
    tape = ad.Tape()
    x = tape.leaf(np.ones(3))
    y = ad.square(x)
    with pytest.raises(ValueError):
        ad.grad(tape, y, [x])


def make_hermitian_system(rng, b, n, kk):
    a = rand(rng, b, n, n) + 1j * rand(rng, b, n, n)
    s = a @ np.conj(np.swapaxes(a, 1, 2)) + 2.0 * np.eye(n)
    rhs = rand(rng, b, n, kk) + 1j * rand(rng, b, n, kk)
    mu = np.abs(rand(rng, b)) + 0.5
    return s, mu, rhs


def test_csolve_hpd_forward_matches_numpy():
    rng = np.random.default_rng(8)
    s, mu, rhs = make_hermitian_system(rng, 2, 3, 2)
    tape = ad.Tape()
    out = ad.csolve_hpd(tape.leaf(s.real), tape.leaf(s.imag), tape.leaf(mu), rhs)
    expected = np.linalg.solve(s + mu[:, None, None] * np.eye(3), rhs)
    np.testing.assert_allclose(out.value[:, 0], expected.real, atol=1e-12)
    np.testing.assert_allclose(out.value[:, 1], expected.imag, atol=1e-12)


def test_csolve_hpd_adjoint_matches_fd():
    rng = np.random.default_rng(9)
    s, mu, rhs = make_hermitian_system(rng, 2, 3, 2)
    shapes = [s.real.shape, s.imag.shape, mu.shape]
    sizes = [int(np.prod(sh)) for sh in shapes]

    def f(vec):
        parts = np.split(vec, np.cumsum(sizes)[:-1])
        tape = ad.Tape()
        leaves = [tape.leaf(p.reshape(sh)) for p, sh in zip(parts, shapes)]
        out = ad.csolve_hpd(leaves[0], leaves[1], leaves[2], rhs)
        loss = ad.reduce_sum(ad.square(out))
        grads = ad.grad(tape, loss, leaves)
        return float(loss.value), np.concatenate([g.ravel() for g in grads])

    x0 = np.concatenate([s.real.ravel(), s.imag.ravel(), mu.ravel()])
    err, ok, _ = ad.finite_diff_check(f, x0, h=1e-6, rel_tol=5e-5, coords=40)
    assert ok, f"max relative error {err:.3e}"


def test_csolve_hpd_rejects_indefinite():
    tape = ad.Tape()
    n = 3
    s_re = tape.leaf(-np.eye(n)[None])
    s_im = tape.leaf(np.zeros((1, n, n)))
    mu = tape.leaf(np.zeros(1))
    with pytest.raises(SingularMatrixError):
        ad.csolve_hpd(s_re, s_im, mu, np.ones((1, n, 1), dtype=complex))


def test_take_part_adjoint_scatters():
    tape = ad.Tape()
    x0 = np.arange(12.0).reshape(1, 2, 3, 2)
    x = tape.leaf(x0)
    loss = ad.reduce_sum(ad.take_part(x, 1))
    (g,) = ad.grad(tape, loss, [x])
    expected = np.zeros_like(x0)
    expected[:, 1] = 1.0
    np.testing.assert_array_equal(g, expected)


def test_sgd_step_formula():
    vec = np.array([1.0, -2.0, 3.0])
    g = np.array([0.5, 0.5, -1.0])
    np.testing.assert_allclose(sgd_step(vec, g, 0.1), vec - 0.1 * g, rtol=1e-15)


def test_adam_first_step_closed_form():
    vec = np.array([1.0, -2.0, 0.0])
    g = np.array([0.3, -0.7, 2.0])
    state = AdamState.init(3)
    new_vec, new_state = adam_step(vec, g, state, lr=0.01)
    expected = vec - 0.01 * g / (np.abs(g) + 1e-8)
    np.testing.assert_allclose(new_vec, expected, rtol=1e-12)
    assert new_state.t == 1
    np.testing.assert_allclose(new_state.m, 0.1 * g)
    np.testing.assert_allclose(new_state.v, 0.001 * g * g)


def test_finite_diff_check_accepts_true_gradient():
    def f(x):
        return 0.5 * float(x @ x), x

    err, ok, skipped = ad.finite_diff_check(f, np.arange(1.0, 6.0), h=1e-6)
    assert ok and skipped == 0
    assert err < 1e-6


def test_finite_diff_check_flags_corrupted_gradient():
    def f(x):
        g = x.copy()
        g[0] += 0.5  # wrong by a constant in one coordinate
        return 0.5 * float(x @ x), g

    _, ok, _ = ad.finite_diff_check(f, np.arange(1.0, 6.0), h=1e-6)
    assert not ok


def test_finite_diff_check_skips_relu_kink():
    # Coordinate sitting exactly on the kink: one-sided differences are 1
    # and 0, so the probe must be skipped instead of reported as an error.
    def f(x):
        return float(np.maximum(x, 0.0).sum()), (x > 0).astype(float)

    x0 = np.array([0.0, 1.0, -1.0])
    err, ok, skipped = ad.finite_diff_check(f, x0, h=1e-6)
    assert skipped >= 1
    assert ok, f"smooth coordinates should still pass, err {err:.3e}"
