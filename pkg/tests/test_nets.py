"""Certified network building blocks: constants, sampled bounds, exactness."""

import numpy as np
import pytest

from ninode.errors import CertificationError, ContractError
from ninode.nets import (
    BiLipNet,
    LipschitzMlp,
    PlnetHamiltonian,
    SkewHead,
    SpdHead,
    bilip_constants,
    bilip_forward,
    plnet_grad,
    plnet_value,
    skew_head_eval,
    spd_head_eval,
)
from ninode.tape import GradientTape, grad

RNG = np.random.default_rng(123)


def _ball(rng, count, dim, radius=5.0):
    x = rng.standard_normal((count, dim))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    return x * (radius * rng.random(count) ** (1.0 / dim))[:, None]


def identity_net(dim, scale=1.0):
    """L=1, alpha=1, beta=0 (no residual correction): net(x) = scale*x."""
    return BiLipNet(dim, n_layers=1, beta=0.0, scale=scale)


class TestLipschitzMlp:
    def test_effective_weights_hit_target_norm(self):
        mlp = LipschitzMlp([6, 32, 6], beta=0.5, rng=np.random.default_rng(0))
        target = 0.5 ** 0.5
        for W in mlp.effective_weights():
            sigma = np.linalg.svd(W, compute_uv=False)[0]
            assert sigma == pytest.approx(target, rel=1e-9)

    def test_certified_bound_below_beta_with_slack(self):
        mlp = LipschitzMlp([6, 32, 6], beta=0.5, rng=np.random.default_rng(1))
        assert mlp.lipschitz_certified() == pytest.approx(0.5, rel=1e-8)

    def test_sampled_lipschitz_bound(self):
        mlp = LipschitzMlp([4, 16, 4], beta=0.7, rng=np.random.default_rng(2))
        beta_cert = mlp.lipschitz_certified()
        xa = _ball(RNG, 2000, 4)
        xb = _ball(RNG, 2000, 4)
        dy = np.linalg.norm(mlp.forward(xa) - mlp.forward(xb), axis=1)
        dx = np.linalg.norm(xa - xb, axis=1)
        assert np.all(dy <= beta_cert * dx + 1e-9)

    def test_vjp_matches_jacobian_columns(self):
        mlp = LipschitzMlp([3, 8, 3], beta=0.5, rng=np.random.default_rng(3))
        x = RNG.standard_normal(3)
        _, acts = mlp.forward_with_acts(x)
        eps = 1e-7
        for j in range(3):
            e = np.zeros(3)
            e[j] = 1.0
            row = mlp.vjp(acts, e)
            fd = np.zeros(3)
            for i in range(3):
                dx = np.zeros(3)
                dx[i] = eps
                fd[i] = (mlp.forward(x + dx)[j] - mlp.forward(x - dx)[j]) / (2 * eps)
            np.testing.assert_allclose(row, fd, atol=1e-6)


class TestBiLipNet:
    def test_identity_configuration(self):
        net = identity_net(2)
        np.testing.assert_allclose(bilip_forward(net, np.array([3.0, 4.0])), [3.0, 4.0])

    def test_zero_maps_to_zero_exactly(self):
        net = BiLipNet(6, rng=np.random.default_rng(4))
        np.testing.assert_array_equal(bilip_forward(net, np.zeros(6)), np.zeros(6))
        # stays exact after biases move
        for b in net.layers[0].g.b:
            b += 0.3
        net.refresh()
        np.testing.assert_array_equal(bilip_forward(net, np.zeros(6)), np.zeros(6))

    def test_certified_constants_single_layer(self):
        net = BiLipNet(4, n_layers=1, alpha=1.0, beta=0.5, rng=np.random.default_rng(5))
        mu, nu = bilip_constants(net)
        assert mu == pytest.approx(0.5, rel=1e-8)
        assert nu == pytest.approx(1.5, rel=1e-8)

    def test_certified_constants_three_layers(self):
        net = BiLipNet(4, n_layers=3, alpha=1.0, beta=0.2, rng=np.random.default_rng(6))
        mu, nu = bilip_constants(net)
        assert mu == pytest.approx(0.8**3, rel=1e-8)
        assert nu == pytest.approx(1.2**3, rel=1e-8)

    def test_sampled_pairs_respect_certified_bounds(self):
        net = BiLipNet(4, n_layers=2, alpha=1.0, beta=0.5, rng=np.random.default_rng(7))
        mu, nu = bilip_constants(net)
        assert mu == pytest.approx(0.25, rel=1e-6)
        assert nu == pytest.approx(2.25, rel=1e-6)
        xa = _ball(RNG, 10_000, 4)
        xb = _ball(RNG, 10_000, 4)
        dx = np.linalg.norm(xa - xb, axis=1)
        dy = np.linalg.norm(net.forward(xa) - net.forward(xb), axis=1)
        assert np.all(dy >= mu * dx - 1e-9)
        assert np.all(dy <= nu * dx + 1e-9)

    def test_scale_enters_constants(self):
        net = identity_net(3, scale=2.5)
        mu, nu = bilip_constants(net)
        assert mu == nu == pytest.approx(2.5)

    def test_orthogonal_layers_are_isometries(self):
        net = BiLipNet(4, n_layers=2, orthogonal=True, rng=np.random.default_rng(8))
        for a in net.skew:
            a[...] = 0.2 * np.random.default_rng(9).standard_normal(a.shape)
        net.refresh()
        mu, nu = bilip_constants(net)
        assert mu == pytest.approx(0.25, rel=1e-6)
        assert nu == pytest.approx(2.25, rel=1e-6)
        xa = _ball(RNG, 5000, 4)
        xb = _ball(RNG, 5000, 4)
        dx = np.linalg.norm(xa - xb, axis=1)
        dy = np.linalg.norm(net.forward(xa) - net.forward(xb), axis=1)
        assert np.all(dy >= mu * dx - 1e-9)
        assert np.all(dy <= nu * dx + 1e-9)

    def test_certification_failure_when_gain_exceeds_alpha(self):
        net = BiLipNet(4, n_layers=1, alpha=1.0, beta=0.5, rng=np.random.default_rng(10))
        mlp = net.layers[0].g
        mlp._Weff[0] = mlp._Weff[0] * 3.0  # corrupt the executed weight
        with pytest.raises(CertificationError):
            net.certify()

    def test_dimension_mismatch_rejected(self):
        net = BiLipNet(4, rng=np.random.default_rng(11))
        with pytest.raises(ContractError):
            net.forward(np.zeros(5))

    def test_vjp_consistent_with_finite_differences(self):
        net = BiLipNet(3, n_layers=2, width=8, rng=np.random.default_rng(12))
        x = RNG.standard_normal(3)
        _, ctx = net.forward_with_ctx(x)
        v = RNG.standard_normal(3)
        got = net.vjp(ctx, v)
        eps = 1e-7
        fd = np.zeros(3)
        for i in range(3):
            dx = np.zeros(3)
            dx[i] = eps
            fd[i] = v @ (net.forward(x + dx) - net.forward(x - dx)) / (2 * eps)
        np.testing.assert_allclose(got, fd, atol=1e-6)


class TestPlnetHamiltonian:
    def test_identity_core_values(self):
        H = PlnetHamiltonian(identity_net(2))
        x = np.array([3.0, 4.0])
        assert plnet_value(H, x) == pytest.approx(12.5)
        np.testing.assert_allclose(plnet_grad(H, x), [3.0, 4.0])

    def test_zero_point(self):
        H = PlnetHamiltonian(BiLipNet(4, rng=np.random.default_rng(13)))
        assert plnet_value(H, np.zeros(4)) == 0.0
        np.testing.assert_array_equal(plnet_grad(H, np.zeros(4)), np.zeros(4))

    def test_gradient_domination_sampled(self):
        H = PlnetHamiltonian(BiLipNet(4, rng=np.random.default_rng(14)))
        gamma = H.gamma
        x = _ball(RNG, 1000, 4)
        val, g = H.value_and_grad(x)
        assert np.all(0.5 * np.sum(g * g, axis=1) >= gamma**2 * val - 1e-9)

    def test_quadratic_lower_bound_sampled(self):
        H = PlnetHamiltonian(BiLipNet(4, rng=np.random.default_rng(15)))
        gamma = H.gamma
        x = _ball(RNG, 1000, 4)
        val = H.value(x)
        assert np.all(val >= 0.5 * gamma**2 * np.sum(x * x, axis=1) - 1e-9)

    def test_grad_matches_finite_differences(self):
        H = PlnetHamiltonian(BiLipNet(3, width=8, rng=np.random.default_rng(16)))
        x = RNG.standard_normal(3)
        g = plnet_grad(H, x)
        eps = 1e-6
        fd = np.zeros(3)
        for i in range(3):
            dx = np.zeros(3)
            dx[i] = eps
            fd[i] = (plnet_value(H, x + dx) - plnet_value(H, x - dx)) / (2 * eps)
        np.testing.assert_allclose(g, fd, rtol=1e-6, atol=1e-8)


class TestSkewHead:
    def test_zero_features_give_zero_matrix(self):
        head = SkewHead(4, rng=np.random.default_rng(17))
        for W in head.features.W:
            W[...] = 0.0
        np.testing.assert_array_equal(
            skew_head_eval(head, RNG.standard_normal(4)), np.zeros((4, 4))
        )

    def test_single_upper_entry(self):
        head = SkewHead(2, rng=np.random.default_rng(18))
        # force the feature output to the constant [1]
        for W in head.features.W:
            W[...] = 0.0
        head.features.b[-1][...] = 1.0
        J = skew_head_eval(head, np.zeros(2))
        np.testing.assert_array_equal(J, [[0.0, 1.0], [-1.0, 0.0]])

    def test_exact_skew_symmetry_sampled(self):
        head = SkewHead(6, rng=np.random.default_rng(19))
        x = _ball(RNG, 1000, 6)
        J = skew_head_eval(head, x)
        assert np.max(np.abs(J + np.swapaxes(J, -1, -2))) == 0.0

    def test_dimension_mismatch_rejected(self):
        head = SkewHead(4, rng=np.random.default_rng(20))
        with pytest.raises(ContractError):
            skew_head_eval(head, np.zeros(3))

    def test_extra_signal_dimension_checked(self):
        head = SkewHead(4, l=2, rng=np.random.default_rng(21))
        out = skew_head_eval(head, np.zeros(4), np.ones(2))
        assert out.shape == (4, 4)
        with pytest.raises(ContractError):
            skew_head_eval(head, np.zeros(4), np.ones(3))
        with pytest.raises(ContractError):
            skew_head_eval(head, np.zeros(4))


class TestSpdHead:
    def test_zero_features_give_floor(self):
        head = SpdHead(3, eps=0.1, rng=np.random.default_rng(22))
        for W in head.features.W:
            W[...] = 0.0
        np.testing.assert_allclose(
            spd_head_eval(head, RNG.standard_normal(3)), 0.1 * np.eye(3)
        )

    def test_identity_factor(self):
        head = SpdHead(2, eps=0.1, rng=np.random.default_rng(23))
        for W in head.features.W:
            W[...] = 0.0
        # lower-triangular vector [1, 0, 1] -> L = I
        head.features.b[-1][...] = np.array([1.0, 0.0, 1.0])
        np.testing.assert_allclose(spd_head_eval(head, np.zeros(2)), 1.1 * np.eye(2))

    def test_floor_eigenvalue_sampled(self):
        head = SpdHead(5, eps=0.1, rng=np.random.default_rng(24))
        x = _ball(RNG, 1000, 5)
        R = spd_head_eval(head, x)
        np.testing.assert_allclose(R, np.swapaxes(R, -1, -2))
        assert np.min(np.linalg.eigvalsh(R)) >= 0.1 - 1e-9

    def test_positive_floor_required(self):
        with pytest.raises(ContractError):
            SpdHead(3, eps=0.0)


class TestTracedHeads:
    """Gradient checks of every head through the tape."""

    def _fd_check(self, build, raw, params, tol=1e-4):
        tape = GradientTape()
        loss = build(tape)
        g = grad(tape, loss)
        for name, arr in params.items():
            for idx in np.ndindex(arr.shape):
                keep = arr[idx]
                arr[idx] = keep + 1e-6
                fp = raw()
                arr[idx] = keep - 1e-6
                fm = raw()
                arr[idx] = keep
                fd = (fp - fm) / 2e-6
                got = g[name][idx]
                assert abs(got - fd) <= tol * max(1.0, abs(fd)), (name, idx)

    def test_skew_head_gradients(self):
        head = SkewHead(3, width=4, rng=np.random.default_rng(25))
        x2 = RNG.standard_normal(3)
        v = RNG.standard_normal(3)

        def build(tape):
            b = head.bind(tape, "J")
            return tape.sumsq(tape.matvec(b.eval(tape.leaf(x2)), tape.leaf(v)))

        def raw():
            return float(np.sum((head.eval(x2) @ v) ** 2))

        self._fd_check(build, raw, dict(head.param_items("J")))

    def test_spd_head_gradients(self):
        head = SpdHead(3, width=4, rng=np.random.default_rng(26))
        x2 = RNG.standard_normal(3)
        v = RNG.standard_normal(3)

        def build(tape):
            b = head.bind(tape, "R")
            return tape.sumsq(tape.matvec(b.eval(tape.leaf(x2)), tape.leaf(v)))

        def raw():
            return float(np.sum((head.eval(x2) @ v) ** 2))

        self._fd_check(build, raw, dict(head.param_items("R")))

    def test_bilip_gradients_including_normalization(self):
        net = BiLipNet(3, n_layers=2, width=6, rng=np.random.default_rng(27))
        x = RNG.standard_normal(3)

        def build(tape):
            b = net.bind(tape, "C")
            y, _ = b.forward(tape.leaf(x))
            return tape.sumsq(y)

        def raw():
            net.recompute_effective()
            y = net.forward(x)
            return float(y @ y)

        self._fd_check(build, raw, dict(net.param_items("C")))
        net.recompute_effective()

    def test_plnet_grad_node_gradients(self):
        net = BiLipNet(3, n_layers=1, width=6, rng=np.random.default_rng(28))
        x = RNG.standard_normal(3)

        def build(tape):
            b = net.bind(tape, "G")
            y, ctx = b.forward(tape.leaf(x))
            return tape.sumsq(b.vjp(ctx, y))

        def raw():
            net.recompute_effective()
            H = PlnetHamiltonian(net)
            g = H.grad(x)
            return float(g @ g)

        self._fd_check(build, raw, dict(net.param_items("G")))
        net.recompute_effective()
