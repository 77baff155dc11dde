"""Mechanical plant: dynamics, energy, stiffness assembly, eta certification."""

import numpy as np
import pytest

from ninode.errors import CertificationError, ContractError, NumericError
from ninode.plant import (
    ChainPotential,
    MechanicalPlant,
    PlantState,
    SpringChainParams,
    assemble_stiffness,
    estimate_eta,
    plant_dynamics,
    plant_hamiltonian,
    plant_output,
    spring_chain,
)

RNG = np.random.default_rng(99)

# stiffness of the reference chain; only used as the expected assembly result
K_REF = np.array([[25.0, -10.0, 0.0], [-10.0, 30.0, -20.0], [0.0, -20.0, 20.0]])


def _char_poly_eigmin(K: np.ndarray) -> float:
    """Independent eigen oracle: smallest root of the characteristic
    polynomial, assembled by hand (no eigensolver involved)."""
    a = -float(np.trace(K))
    b = 0.5 * (np.trace(K) ** 2 - np.trace(K @ K))
    c = -float(np.linalg.det(K))
    roots = np.roots([1.0, a, b, c])
    return float(np.min(roots.real))


class TestDynamics:
    def test_reference_forces_at_unit_displacements(self):
        # springs stretched by [1, 1, 1]: forces 15+5, 10+2, 20+3 pull the
        # masses toward equilibrium through the chain coupling
        plant = spring_chain()
        state = PlantState(np.array([1.0, 2.0, 3.0]), np.zeros(3))
        qdot, pdot = plant_dynamics(plant, state, np.zeros(3))
        np.testing.assert_allclose(qdot, np.zeros(3))
        np.testing.assert_allclose(pdot, [-8.0, 11.0, -23.0])

    def test_equilibrium_is_fixed_point(self):
        plant = spring_chain()
        qdot, pdot = plant_dynamics(plant, PlantState(np.zeros(3), np.zeros(3)), np.zeros(3))
        np.testing.assert_array_equal(qdot, np.zeros(3))
        np.testing.assert_array_equal(pdot, np.zeros(3))

    def test_force_enters_momentum_only(self):
        plant = spring_chain()
        u = np.array([1.0, 0.0, 0.0])
        qdot, pdot = plant_dynamics(plant, PlantState(np.zeros(3), np.zeros(3)), u)
        np.testing.assert_array_equal(qdot, np.zeros(3))
        np.testing.assert_allclose(pdot, u)

    def test_damping_term(self):
        damping = np.diag([0.1, 0.2, 0.3])
        plant = spring_chain(damping=damping)
        p = np.array([0.02, 0.01, 0.03])
        _, pdot = plant_dynamics(plant, PlantState(np.zeros(3), p), np.zeros(3))
        np.testing.assert_allclose(pdot, -damping @ (p / plant.masses))

    def test_non_finite_state_rejected(self):
        plant = spring_chain()
        with pytest.raises(NumericError):
            plant_dynamics(plant, PlantState(np.array([1.0, np.nan, 0.0]), np.zeros(3)), np.zeros(3))

    def test_dimension_mismatch_rejected(self):
        plant = spring_chain()
        with pytest.raises(ContractError):
            plant_dynamics(plant, PlantState(np.zeros(3), np.zeros(3)), np.zeros(2))


class TestOutput:
    def test_returns_positions(self):
        plant = spring_chain()
        state = PlantState(np.array([1.0, 2.0, 3.0]), np.array([9.0, 9.0, 9.0]))
        np.testing.assert_array_equal(plant_output(plant, state), [1.0, 2.0, 3.0])

    def test_zero_state(self):
        plant = spring_chain()
        np.testing.assert_array_equal(
            plant_output(plant, PlantState(np.zeros(3), np.zeros(3))), np.zeros(3)
        )

    def test_independent_of_momentum(self):
        plant = spring_chain()
        q = RNG.standard_normal(3)
        out1 = plant_output(plant, PlantState(q, RNG.standard_normal(3)))
        out2 = plant_output(plant, PlantState(q, RNG.standard_normal(3)))
        np.testing.assert_array_equal(out1, out2)


class TestHamiltonian:
    def test_reference_potential_energy(self):
        # 0.5*15 + 0.25*5 + 0.5*10 + 0.25*2 + 0.5*20 + 0.25*3 = 25
        plant = spring_chain()
        state = PlantState(np.array([1.0, 2.0, 3.0]), np.zeros(3))
        assert plant_hamiltonian(plant, state) == pytest.approx(25.0)

    def test_zero_state(self):
        plant = spring_chain()
        assert plant_hamiltonian(plant, PlantState(np.zeros(3), np.zeros(3))) == 0.0

    def test_kinetic_energy(self):
        plant = spring_chain()
        state = PlantState(np.zeros(3), np.array([0.02, 0.0, 0.0]))
        assert plant_hamiltonian(plant, state) == pytest.approx(0.01)

    def test_positive_away_from_origin(self):
        plant = spring_chain()
        for _ in range(100):
            q = RNG.standard_normal(3)
            p = RNG.standard_normal(3)
            if np.linalg.norm(q) + np.linalg.norm(p) > 1e-9:
                assert plant_hamiltonian(plant, PlantState(q, p)) > 0.0


class TestGradient:
    def test_grad_matches_finite_differences(self):
        pot = ChainPotential(SpringChainParams())
        for _ in range(20):
            q = RNG.uniform(-3, 3, 3)
            g = pot.grad(q)
            eps = 1e-6
            for i in range(3):
                dq = np.zeros(3)
                dq[i] = eps
                fd = (pot.value(q + dq) - pot.value(q - dq)) / (2 * eps)
                assert abs(g[i] - fd) <= 1e-6 * max(1.0, abs(fd))

    def test_grad_zero_at_origin(self):
        pot = ChainPotential(SpringChainParams())
        np.testing.assert_array_equal(pot.grad(np.zeros(3)), np.zeros(3))


class TestStiffness:
    def test_reference_assembly(self):
        np.testing.assert_allclose(assemble_stiffness(SpringChainParams()), K_REF)

    def test_single_mass(self):
        params = SpringChainParams(
            masses=[1.0], linear_stiffness=[15.0], cubic_stiffness=[1.0]
        )
        np.testing.assert_allclose(assemble_stiffness(params), [[15.0]])

    def test_symmetric_positive_definite_for_random_params(self):
        for _ in range(20):
            k = RNG.uniform(0.5, 30.0, 3)
            params = SpringChainParams(linear_stiffness=k)
            K = assemble_stiffness(params)
            np.testing.assert_allclose(K, K.T)
            assert np.min(np.linalg.eigvalsh(K)) > 0.0

    def test_matches_hessian_of_potential_at_origin(self):
        pot = ChainPotential(SpringChainParams())
        K = assemble_stiffness(SpringChainParams())
        eps = 1e-5
        hess = np.zeros((3, 3))
        for i in range(3):
            dq = np.zeros(3)
            dq[i] = eps
            hess[:, i] = (pot.grad(dq) - pot.grad(-dq)) / (2 * eps)
        np.testing.assert_allclose(K, hess, atol=1e-6)


class TestEta:
    def test_reference_chain_certifies_at_lambda_min(self):
        plant = spring_chain()
        report = estimate_eta(plant, radius=5.0, samples=100_000, rng=np.random.default_rng(0))
        assert report.halvings == 0
        assert report.eta == pytest.approx(_char_poly_eigmin(K_REF), abs=1e-9)
        assert report.worst_quadratic_margin >= 0.0
        assert report.worst_gradient_margin >= 0.0
        assert plant.eta == report.eta

    def test_pure_quadratic_is_tight(self):
        params = SpringChainParams(
            masses=[1.0], linear_stiffness=[15.0], cubic_stiffness=[1e-12]
        )
        plant = spring_chain(params)
        report = estimate_eta(plant, radius=5.0, samples=10_000, rng=np.random.default_rng(1))
        assert report.eta == pytest.approx(15.0, rel=1e-9)
        assert report.halvings == 0

    def test_cubic_term_only_helps(self):
        params = SpringChainParams(
            masses=[1.0], linear_stiffness=[15.0], cubic_stiffness=[5.0]
        )
        plant = spring_chain(params)
        report = estimate_eta(plant, radius=5.0, samples=10_000, rng=np.random.default_rng(2))
        assert report.eta == pytest.approx(15.0, rel=1e-9)
        assert report.worst_quadratic_margin >= 0.0
        assert report.worst_gradient_margin >= 0.0

    def test_failure_when_potential_violates_bound(self):
        # a potential with a flat direction far from the origin cannot
        # certify any positive constant on a wide ball
        plant = spring_chain()

        class FlatPotential(ChainPotential):
            def value(self, q):
                return np.minimum(super().value(q), 1.0)

            def grad(self, q):
                base = super().value(q)
                g = super().grad(q)
                return np.where((base < 1.0)[..., None], g, 0.0)

        plant.potential = FlatPotential(SpringChainParams())
        with pytest.raises(CertificationError):
            estimate_eta(plant, radius=5.0, samples=20_000, rng=np.random.default_rng(3))


class TestParams:
    def test_positivity_enforced(self):
        with pytest.raises(ContractError):
            SpringChainParams(masses=[0.02, -0.01, 0.03])

    def test_length_mismatch_rejected(self):
        with pytest.raises(ContractError):
            SpringChainParams(linear_stiffness=[15.0, 10.0])

    def test_damping_must_be_psd(self):
        with pytest.raises(ContractError):
            MechanicalPlant(
                np.array([1.0]), ChainPotential(
                    SpringChainParams(masses=[1.0], linear_stiffness=[1.0], cubic_stiffness=[1.0])
                ),
                damping=np.array([[-0.1]]),
            )
