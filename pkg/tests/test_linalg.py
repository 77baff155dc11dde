"""Spectral-norm estimation and Cayley orthogonalization."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ninode.errors import ContractError, InvalidInputError
from ninode.linalg import SpectralNormState, cayley_orthogonal, spectral_norm

RNG = np.random.default_rng(7)


def _random_skew(rng, m, scale=1.0):
    A = np.zeros((m, m))
    iu = np.triu_indices(m, k=1)
    A[iu] = scale * rng.uniform(-1, 1, len(iu[0]))
    return A - A.T


class TestSpectralNorm:
    def test_identity(self):
        assert spectral_norm(np.eye(3)) == pytest.approx(1.0, abs=1e-12)

    def test_diagonal(self):
        assert spectral_norm(np.diag([3.0, 1.0])) == pytest.approx(3.0, abs=1e-12)

    def test_power_iteration_agrees_with_svd(self):
        W = RNG.standard_normal((5, 5))
        exact = spectral_norm(W, mode="exact-svd")
        est = spectral_norm(W, mode="power-iteration", iters=50)
        assert abs(est - exact) / exact < 1e-6

    def test_power_iteration_never_overshoots(self):
        for _ in range(50):
            W = RNG.standard_normal((RNG.integers(1, 8), RNG.integers(1, 8)))
            exact = spectral_norm(W, mode="exact-svd")
            for iters in (1, 3, 10, 50):
                est = spectral_norm(W, mode="power-iteration", iters=iters)
                assert exact >= est - 1e-9

    def test_warm_start_converges_across_calls(self):
        rng = np.random.default_rng(11)
        W = rng.standard_normal((12, 12))
        exact = spectral_norm(W, mode="exact-svd")
        state = SpectralNormState()
        state.seed(12, rng)
        errs = []
        for _ in range(6):
            est = spectral_norm(W, mode="power-iteration", iters=3, state=state)
            errs.append(abs(est - exact))
        # geometric convergence across warm-started calls
        assert all(b < a for a, b in zip(errs, errs[1:]))
        assert errs[-1] < 1e-4 * errs[0]

    def test_state_vector_persisted(self):
        W = RNG.standard_normal((6, 4))
        state = SpectralNormState()
        spectral_norm(W, mode="power-iteration", iters=2, state=state)
        v1 = state.v.copy()
        spectral_norm(W, mode="power-iteration", iters=2, state=state)
        assert state.v.shape == (4,)
        assert not np.array_equal(v1, state.v) or np.allclose(
            W.T @ (W @ v1), np.linalg.norm(W.T @ (W @ v1)) * v1
        )

    def test_non_finite_rejected(self):
        with pytest.raises(InvalidInputError):
            spectral_norm(np.array([[1.0, np.nan], [0.0, 1.0]]))

    def test_empty_rejected(self):
        with pytest.raises(InvalidInputError):
            spectral_norm(np.zeros((0, 3)))

    def test_unknown_mode_rejected(self):
        with pytest.raises(ContractError):
            spectral_norm(np.eye(2), mode="guess")

    def test_zero_matrix(self):
        assert spectral_norm(np.zeros((3, 3)), mode="power-iteration") == 0.0


class TestCayley:
    def test_zero_gives_identity(self):
        np.testing.assert_allclose(cayley_orthogonal(np.zeros((2, 2))), np.eye(2))

    def test_rotation_generator_is_orthogonal(self):
        A = np.array([[0.0, 1.0], [-1.0, 0.0]])
        Q = cayley_orthogonal(A)
        assert np.max(np.abs(Q.T @ Q - np.eye(2))) <= 1e-12

    def test_random_skew_has_unit_determinant(self):
        for _ in range(20):
            Q = cayley_orthogonal(_random_skew(RNG, 4))
            assert abs(np.linalg.det(Q) - 1.0) <= 1e-9

    @settings(max_examples=40, deadline=None)
    @given(
        st.integers(min_value=2, max_value=6),
        st.floats(min_value=0.01, max_value=10.0),
        st.integers(min_value=0, max_value=2**31 - 1),
    )
    def test_orthogonality_up_to_norm_ten(self, m, scale, seed):
        rng = np.random.default_rng(seed)
        A = _random_skew(rng, m, scale=1.0)
        norm = np.linalg.norm(A, 2)
        if norm > 0:
            A *= min(scale, 10.0) / norm
        Q = cayley_orthogonal(A)
        assert np.max(np.abs(Q.T @ Q - np.eye(m))) <= 1e-10

    def test_non_skew_rejected(self):
        with pytest.raises(ContractError):
            cayley_orthogonal(np.array([[0.0, 1.0], [1.0, 0.0]]))

    def test_non_square_rejected(self):
        with pytest.raises(ContractError):
            cayley_orthogonal(np.zeros((2, 3)))
