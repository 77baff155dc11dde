"""Mechanical Hamiltonian plant with position output.

State x1 = (q, p) with p = M qdot evolves as

    qdot = M^{-1} p
    pdot = -grad V(q) - 0.5*grad_q(p' M(q)^{-1} p) - r1(x1) M^{-1} p + u1
    y1   = q

for a constant diagonal mass matrix M, a positive-definite potential V with
V(0) = 0 and grad V(0) = 0, and symmetric PSD damping r1.  The built-in
instance is a chain of three masses coupled through springs with force law
F = k_l * d + k_n * d^3 per spring elongation d.

The storage-function constant eta certifies the two potential-energy
conditions

    V(q) >= 0.5 * eta * |q|^2          (quadratic lower bound)
    0.5 * |grad V(q)|^2 >= eta * V(q)  (gradient domination)

on a sampling ball; lambda_min of the linearized stiffness seeds the value
and sampling verifies it (halving on any violation).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CertificationError, ContractError, NumericError
from .tape import GradientTape, Node

__all__ = [
    "PlantState",
    "SpringChainParams",
    "ChainPotential",
    "MechanicalPlant",
    "EtaReport",
    "spring_chain",
    "plant_dynamics",
    "plant_output",
    "plant_hamiltonian",
    "assemble_stiffness",
    "estimate_eta",
]


@dataclass
class PlantState:
    """Position / generalized-momentum pair."""

    q: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=np.float64)
        self.p = np.asarray(self.p, dtype=np.float64)
        if self.q.shape != self.p.shape:
            raise ContractError("q and p must have equal dimension")


@dataclass
class SpringChainParams:
    """Masses plus linear/cubic spring constants of the serial chain."""

    masses: np.ndarray = field(default_factory=lambda: np.array([0.02, 0.01, 0.03]))
    linear_stiffness: np.ndarray = field(
        default_factory=lambda: np.array([15.0, 10.0, 20.0])
    )
    cubic_stiffness: np.ndarray = field(
        default_factory=lambda: np.array([5.0, 2.0, 3.0])
    )

    def __post_init__(self):
        self.masses = np.asarray(self.masses, dtype=np.float64)
        self.linear_stiffness = np.asarray(self.linear_stiffness, dtype=np.float64)
        self.cubic_stiffness = np.asarray(self.cubic_stiffness, dtype=np.float64)
        n = self.masses.shape[0]
        if self.linear_stiffness.shape != (n,) or self.cubic_stiffness.shape != (n,):
            raise ContractError("per-spring constants must match the mass count")
        if np.any(self.masses <= 0) or np.any(self.linear_stiffness <= 0) or np.any(
            self.cubic_stiffness <= 0
        ):
            raise ContractError("spring-chain parameters must be positive")


class ChainPotential:
    """Potential of the serial spring chain.

    Elongations d = D q (first spring anchored to the wall), with
    V = sum 0.5*k_l*d^2 + 0.25*k_n*d^4 and grad V = D'(k_l d + k_n d^3).
    """

    def __init__(self, params: SpringChainParams):
        n = params.masses.shape[0]
        D = np.eye(n)
        for i in range(1, n):
            D[i, i - 1] = -1.0
        self.D = D
        self.kl = params.linear_stiffness.copy()
        self.kn = params.cubic_stiffness.copy()

    def value(self, q: np.ndarray):
        d = q @ self.D.T
        return np.sum(0.5 * self.kl * d**2 + 0.25 * self.kn * d**4, axis=-1)

    def grad(self, q: np.ndarray) -> np.ndarray:
        d = q @ self.D.T
        return (self.kl * d + self.kn * d**3) @ self.D

    def hessian_origin(self) -> np.ndarray:
        return self.D.T @ (self.kl[:, None] * self.D)


class MechanicalPlant:
    """Constant-diagonal-mass mechanical plant with position output.

    ``damping`` is an optional constant symmetric PSD matrix; the built-in
    chain is frictionless.  ``mass_gradient_term`` supplies
    grad_q(p' M(q)^{-1} p) and returns zero for the constant-mass case.
    """

    def __init__(
        self,
        masses: np.ndarray,
        potential,
        damping: np.ndarray | None = None,
        mass_gradient_term=None,
    ):
        self.masses = np.asarray(masses, dtype=np.float64)
        if np.any(self.masses <= 0):
            raise ContractError("masses must be positive")
        self.n = self.masses.shape[0]
        self.potential = potential
        if damping is not None:
            damping = np.asarray(damping, dtype=np.float64)
            if damping.shape != (self.n, self.n):
                raise ContractError("damping matrix dimension mismatch")
            if np.max(np.abs(damping - damping.T)) > 1e-12:
                raise ContractError("damping matrix must be symmetric")
            if np.min(np.linalg.eigvalsh(damping)) < -1e-12:
                raise ContractError("damping matrix must be PSD")
        self.damping = damping
        self.mass_gradient_term = mass_gradient_term
        self.minv = 1.0 / self.masses
        self.eta: float | None = None
        self.eta_report: EtaReport | None = None

    @property
    def mass_matrix(self) -> np.ndarray:
        return np.diag(self.masses)

    # -- continuous dynamics ------------------------------------------------

    def dynamics(self, state: PlantState, u1: np.ndarray):
        q, p = state.q, state.p
        if q.shape[-1] != self.n or np.shape(u1)[-1] != self.n:
            raise ContractError("plant dynamics dimension mismatch")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(p))):
            raise NumericError("non-finite plant state")
        return self._deriv(q, p, np.asarray(u1, dtype=np.float64))

    def _deriv(self, q, p, u1):
        qdot = p * self.minv
        pdot = u1 - self.potential.grad(q)
        if self.mass_gradient_term is not None:
            pdot = pdot - 0.5 * self.mass_gradient_term(q, p)
        if self.damping is not None:
            pdot = pdot - qdot @ self.damping.T
        return qdot, pdot

    def output(self, state: PlantState) -> np.ndarray:
        return state.q.copy()

    def hamiltonian(self, state: PlantState):
        return self.potential.value(state.q) + 0.5 * np.sum(
            state.p**2 * self.minv, axis=-1
        )

    # -- tracing --------------------------------------------------------------

    def bind(self, tape: GradientTape) -> "TracedPlant":
        return TracedPlant(self, tape)


class TracedPlant:
    """Tape-recorded stage derivative of the plant (chain potential only)."""

    def __init__(self, plant: MechanicalPlant, tape: GradientTape):
        if not isinstance(plant.potential, ChainPotential):
            raise ContractError("traced rollouts support the chain potential")
        self.plant = plant
        self.tape = tape
        self.D = tape.leaf(plant.potential.D)
        self.damping = (
            tape.leaf(plant.damping) if plant.damping is not None else None
        )

    def stage(self, q: Node, p: Node, u1: Node):
        t = self.tape
        plant = self.plant
        qdot = t.cmulv(p, plant.minv)
        d = t.matvec(self.D, q)
        force = t.spring_force(d, plant.potential.kl, plant.potential.kn)
        grad_v = t.matvec_t(self.D, force)
        pdot = t.sub(u1, grad_v)
        if self.damping is not None:
            pdot = t.sub(pdot, t.matvec(self.damping, qdot))
        return qdot, pdot


# -- operations ---------------------------------------------------------------


def spring_chain(
    params: SpringChainParams | None = None, damping: np.ndarray | None = None
) -> MechanicalPlant:
    """Built-in three-mass nonlinear spring chain (frictionless by default)."""
    params = params if params is not None else SpringChainParams()
    plant = MechanicalPlant(params.masses, ChainPotential(params), damping=damping)
    plant.chain_params = params
    return plant


def plant_dynamics(plant: MechanicalPlant, state: PlantState, u1: np.ndarray):
    """State derivative (qdot, pdot) under input force u1."""
    return plant.dynamics(state, u1)


def plant_output(plant: MechanicalPlant, state: PlantState) -> np.ndarray:
    """Position output y1 = q (independent of p)."""
    return plant.output(state)


def plant_hamiltonian(plant: MechanicalPlant, state: PlantState) -> float:
    """Total energy V(q) + 0.5 p' M^{-1} p."""
    return float(plant.hamiltonian(state))


def assemble_stiffness(params: SpringChainParams) -> np.ndarray:
    """Stiffness matrix of the linearized chain (Hessian of V at q = 0)."""
    return ChainPotential(params).hessian_origin()


ETA_ROUNDOFF = 1e-12  # relative slack: PL holds with equality for quadratics


@dataclass
class EtaReport:
    """Certification record for the potential-energy constant.

    Margins are normalized (violation / max(1, bound)), so a clean
    certificate has both margins >= -ETA_ROUNDOFF.
    """

    eta: float
    radius: float
    samples: int
    worst_quadratic_margin: float
    worst_gradient_margin: float
    halvings: int

    def passed(self) -> bool:
        return (
            self.worst_quadratic_margin >= -ETA_ROUNDOFF
            and self.worst_gradient_margin >= -ETA_ROUNDOFF
        )


def estimate_eta(
    plant: MechanicalPlant,
    radius: float = 5.0,
    samples: int = 100_000,
    rng: np.random.Generator | None = None,
) -> EtaReport:
    """Certify eta by sampling the quadratic-bound and gradient-domination
    conditions on a ball of positions.

    Starts from lambda_min of the linearized stiffness, halves on any
    violated sample, and stores the certified value on the plant.  Fails if
    eta shrinks below 1e-6.
    """
    if not isinstance(plant.potential, ChainPotential):
        raise ContractError("eta estimation needs an assembled stiffness matrix")
    rng = rng if rng is not None else np.random.default_rng(0)
    K = plant.potential.hessian_origin()
    eta = float(np.min(np.linalg.eigvalsh(K)))

    n = plant.n
    directions = rng.standard_normal((samples, n))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    radii = radius * rng.random(samples) ** (1.0 / n)
    q = directions * radii[:, None]

    v = plant.potential.value(q)
    g2 = 0.5 * np.sum(plant.potential.grad(q) ** 2, axis=1)
    qq = 0.5 * np.sum(q * q, axis=1)

    halvings = 0
    while eta >= 1e-6:
        quad_margin = float(np.min((v - eta * qq) / np.maximum(1.0, eta * qq)))
        grad_margin = float(np.min((g2 - eta * v) / np.maximum(1.0, eta * v)))
        if quad_margin >= -ETA_ROUNDOFF and grad_margin >= -ETA_ROUNDOFF:
            report = EtaReport(
                eta=eta,
                radius=float(radius),
                samples=int(samples),
                worst_quadratic_margin=quad_margin,
                worst_gradient_margin=grad_margin,
                halvings=halvings,
            )
            plant.eta = eta
            plant.eta_report = report
            return report
        eta *= 0.5
        halvings += 1
    raise CertificationError(
        f"eta certification failed: shrank below 1e-6 after {halvings} halvings"
    )
