"""Tape engine: primitive gradients, replay, and the grad() contract."""

import numpy as np
import pytest

from ninode.errors import ContractError, NumericError
from ninode.tape import OPS, GradientTape, grad

RNG = np.random.default_rng(20240811)


def _rand(shape):
    if shape == ():
        return np.float64(RNG.uniform(0.5, 2.0))
    return RNG.uniform(-2.0, 2.0, shape)


def _skew_vec(m):
    return RNG.uniform(-2.0, 2.0, m * (m - 1) // 2)


# (op, input shapes or explicit arrays, aux)
PRIMITIVE_CASES = [
    ("add", [(5,), (5,)], None),
    ("sub", [(5,), (5,)], None),
    ("neg", [(5,)], None),
    ("mul", [(5,), (5,)], None),
    ("smul", [(5,)], 1.7),
    ("axpy", [(5,), (5,)], 0.37),
    ("cmulv", [(5,)], RNG.uniform(0.5, 2.0, 5)),
    ("matvec", [(4, 6), (6,)], None),
    ("matvec_t", [(4, 6), (4,)], None),
    ("affine", [(4, 6), (6,), (4,)], None),
    ("tanh", [(5,)], None),
    ("dtanh_mul", [(5,), (5,)], None),
    ("dot", [(5,), (5,)], None),
    ("sumsq", [(5,)], None),
    ("quadform", [(4,)], RNG.uniform(-1.0, 1.0, (4, 4))),
    ("concat", [(3,), (4,)], None),
    ("head", [(6,)], 3),
    ("pad", [(3,)], 6),
    ("skew_from_vec", [(6,)], 4),
    ("lowtri_from_vec", [(10,)], 4),
    ("gram_eps", [(4, 4)], 0.25),
    (
        "specnorm_uv",
        [(4, 6)],
        (RNG.standard_normal(4), RNG.standard_normal(6)),
    ),
    ("scale_to", [(4, 6), ()], 0.8),
    (
        "spring_force",
        [(4,)],
        (RNG.uniform(0.5, 2.0, 4), RNG.uniform(0.5, 2.0, 4)),
    ),
    ("rk4_combine", [(5,), (5,), (5,), (5,), (5,)], 0.01),
    ("cayley", ["skew4"], None),
]


def _build(op, arrays, aux, tape):
    nodes = [tape.param(f"p{i}", a) for i, a in enumerate(arrays)]
    out = tape.apply(op, *nodes, aux=aux)
    # contract any output down to a scalar with fixed weights
    if np.ndim(out.value) == 1:
        w = tape.leaf(_CONTRACT1[: out.value.shape[0]])
        out = tape.dot(out, w)
    elif np.ndim(out.value) == 2:
        r, c = out.value.shape
        v = tape.leaf(_CONTRACT1[:c])
        u = tape.leaf(_CONTRACT2[:r])
        out = tape.dot(tape.matvec(out, v), u)
    return out


_CONTRACT1 = RNG.standard_normal(16)
_CONTRACT2 = RNG.standard_normal(16)


def _materialize(spec):
    if spec == "skew4":
        v = _skew_vec(4)
        A = np.zeros((4, 4))
        A[np.triu_indices(4, k=1)] = v
        return A - A.T
    return _rand(spec)


@pytest.mark.parametrize("op,shapes,aux", PRIMITIVE_CASES, ids=[c[0] for c in PRIMITIVE_CASES])
def test_primitive_gradients_match_finite_differences(op, shapes, aux):
    """Analytic gradient of every primitive vs central differences, random
    inputs in [-2, 2]."""
    arrays = [_materialize(s) for s in shapes]
    tape = GradientTape()
    out = _build(op, arrays, aux, tape)
    analytic = grad(tape, out)

    eps = 1e-6
    for i, base in enumerate(arrays):
        base = np.atleast_1d(np.asarray(base, dtype=np.float64))
        fd = np.zeros_like(base)
        for idx in np.ndindex(base.shape):
            for sign in (+1, -1):
                pert = [np.array(a, dtype=np.float64, copy=True) for a in arrays]
                pa = np.atleast_1d(pert[i])
                pa[idx] += sign * eps
                pert[i] = pa if np.ndim(arrays[i]) else np.float64(pa[0])
                if op == "cayley":  # keep the input exactly skew
                    pert[i] = 0.5 * (pert[i] - pert[i].T)
                t2 = GradientTape()
                val = float(_build(op, pert, aux, t2).value)
                fd[idx] += sign * val
        fd /= 2 * eps
        got = np.atleast_1d(analytic[f"p{i}"])
        if op == "cayley":  # projected perturbation halves the skew components
            fd = fd  # analytic adjoint of the projection is (g - g.T)/2
            got = 0.5 * (got - got.T)
        denom = np.maximum(np.abs(fd), 1e-6)
        assert np.max(np.abs(got - fd) / denom) < 1e-6, op


def test_every_primitive_is_covered():
    assert {c[0] for c in PRIMITIVE_CASES} == set(OPS)


def test_grad_of_half_norm_squared():
    tape = GradientTape()
    x = tape.param("x", np.array([1.0, 2.0]))
    loss = tape.smul(tape.sumsq(x), 0.5)
    g = grad(tape, loss)
    np.testing.assert_allclose(g["x"], [1.0, 2.0])


def test_grad_of_quadratic_form():
    tape = GradientTape()
    x = tape.param("x", np.array([1.0, 1.0]))
    loss = tape.quadform(x, np.array([[2.0, 0.0], [0.0, 3.0]]))
    g = grad(tape, loss)
    np.testing.assert_allclose(g["x"], [4.0, 6.0])


def test_replay_reproduces_values_bit_for_bit():
    tape = GradientTape()
    x = tape.param("x", RNG.standard_normal(6))
    W = tape.param("W", RNG.standard_normal((6, 6)))
    h = tape.tanh(tape.matvec(W, x))
    tape.dot(h, tape.leaf(RNG.standard_normal(6)))
    assert tape.replay_equal()


def test_backward_visits_reverse_order_via_chain():
    # f(x) = sum((2x)^2): d/dx = 8x; exercises two dependent ops
    tape = GradientTape()
    x = tape.param("x", np.array([1.0, -2.0, 3.0]))
    y = tape.smul(x, 2.0)
    loss = tape.sumsq(y)
    g = grad(tape, loss)
    np.testing.assert_allclose(g["x"], 8.0 * x.value)


def test_non_scalar_loss_rejected():
    tape = GradientTape()
    x = tape.param("x", np.ones(3))
    y = tape.smul(x, 2.0)
    with pytest.raises(ContractError):
        grad(tape, y)


def test_nan_in_backward_carries_op_index():
    tape = GradientTape()
    x = tape.param("x", np.array([1.0, np.inf]))
    y = tape.mul(x, tape.leaf(np.array([1.0, 0.0])))  # value finite, grad not
    loss = tape.sumsq(y)
    with pytest.raises(NumericError) as err:
        grad(tape, loss)
    assert err.value.op_index is not None and err.value.op_index >= 0


def test_duplicate_parameter_slot_rejected():
    tape = GradientTape()
    tape.param("x", np.ones(2))
    with pytest.raises(ContractError):
        tape.param("x", np.ones(2))


def test_unused_parameter_gets_zero_gradient():
    tape = GradientTape()
    x = tape.param("x", np.ones(2))
    tape.param("unused", np.ones(3))
    loss = tape.sumsq(x)
    g = grad(tape, loss)
    np.testing.assert_array_equal(g["unused"], np.zeros(3))
