"""Controllers with built-in stability certificates.

Both controllers realize the state-space family

    x2dot = [J2(x2,z) - R2(x2,z)] (grad H2(x2) - Jac(C2,x2)' u2)
    y2    = C2(x2) = first n rows of C2bar(x2)

with J2 skew-symmetric, R2 symmetric with eigenvalues >= eps, H2 a
gradient-dominated storage function with H2(x) >= 0.5*gamma^2*|x|^2, and
C2bar bi-Lipschitz with |C2bar(x)| <= mu_bar*|x|.  Closed-loop asymptotic
stability against a mechanical plant with potential constant eta reduces
to the regularity constraint

    mu_bar < sqrt(eta) * gamma      (strict),

which is enforced here by construction: the storage core is rescaled to
gamma = 1 and the output net to mu_bar = kappa*sqrt(eta) with a safety
factor kappa < 1, and the spectral reparameterization of every weight
keeps the constants pinned through arbitrary parameter updates.

``NinodeController`` uses neural heads; ``LinearNiController`` is the
baseline with constant matrices and a quadratic storage function
H2(x2) = x2' P2 x2 (certified via gamma = sqrt(2*lambda_min(P2))).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CertificationError, ContractError
from .linalg import SpectralNormState, power_vectors
from .nets import (
    BiLipNet,
    PlnetHamiltonian,
    SkewHead,
    SpdHead,
    _orthogonalish,
)
from .seeding import rng_stream
from .tape import GradientTape, Node

__all__ = [
    "RegularityReport",
    "NinodeController",
    "LinearNiController",
    "build_ninode",
    "build_linear_ni",
    "validate_regularity",
]


@dataclass
class RegularityReport:
    """Certificate record for the coupling constraint mu_bar < sqrt(eta)*gamma."""

    gamma: float
    mu_bar: float
    eta: float
    threshold: float
    margin: float
    passed: bool

    def as_dict(self) -> dict:
        return {
            "gamma": self.gamma,
            "mu_bar": self.mu_bar,
            "eta": self.eta,
            "threshold": self.threshold,
            "margin": self.margin,
            "passed": self.passed,
        }


def validate_regularity(ctrl, eta: float) -> RegularityReport:
    """Check mu_bar < sqrt(eta)*gamma with exact-SVD certified constants.

    Returns the report on success; raises CertificationError (carrying all
    three constants) on violation, including the equality case.
    """
    if eta is None or eta <= 0:
        raise ContractError("validate_regularity needs a certified positive eta")
    consts = ctrl.certify()
    gamma, mu_bar = consts["gamma"], consts["mu_bar"]
    threshold = float(np.sqrt(eta) * gamma)
    margin = threshold - mu_bar
    report = RegularityReport(
        gamma=gamma,
        mu_bar=mu_bar,
        eta=float(eta),
        threshold=threshold,
        margin=margin,
        passed=margin > 0.0,
    )
    if not report.passed:
        raise CertificationError(
            "regularity constraint violated: "
            f"mu_bar={mu_bar:.9g} >= sqrt(eta)*gamma={threshold:.9g} "
            f"(gamma={gamma:.9g}, eta={eta:.9g})"
        )
    return report


class NinodeController:
    """Neural controller assembled from certified heads."""

    kind = "ninode"

    def __init__(
        self,
        n: int,
        m: int,
        l: int,
        hamiltonian: PlnetHamiltonian,
        c2bar: BiLipNet,
        j2: SkewHead,
        r2: SpdHead,
        kappa: float,
    ):
        if m < n:
            raise ContractError("controller state dimension m must be >= n")
        self.n = int(n)
        self.m = int(m)
        self.l = int(l)
        self.hamiltonian = hamiltonian
        self.c2bar = c2bar
        self.j2 = j2
        self.r2 = r2
        self.kappa = float(kappa)

    # -- certified constants --------------------------------------------------

    def certify(self) -> dict:
        g_mu, g_nu = self.hamiltonian.core.certify()
        c_mu, c_nu = self.c2bar.certify()
        return {
            "gamma": g_mu,
            "storage_upper": g_nu,
            "mu_lower": c_mu,
            "mu_bar": c_nu,
            "eps": self.r2.eps,
        }

    def refresh(self, iters: int = 20) -> None:
        self.hamiltonian.core.refresh(iters=iters)
        self.c2bar.refresh(iters=iters)

    def recompute_effective(self) -> None:
        self.hamiltonian.core.recompute_effective()
        self.c2bar.recompute_effective()

    # -- raw evaluation ---------------------------------------------------------

    def output(self, x2: np.ndarray) -> np.ndarray:
        """y2 = first n components of C2bar(x2); |y2| <= mu_bar*|x2|."""
        return self.c2bar.forward(x2)[..., : self.n]

    def hamiltonian_value(self, x2: np.ndarray):
        return self.hamiltonian.value(x2)

    def hamiltonian_grad(self, x2: np.ndarray) -> np.ndarray:
        return self.hamiltonian.grad(x2)

    def j_matrix(self, x2: np.ndarray, z=None) -> np.ndarray:
        return self.j2.eval(x2, z)

    def r_matrix(self, x2: np.ndarray, z=None) -> np.ndarray:
        return self.r2.eval(x2, z)

    def effort_direction(self, x2: np.ndarray, u2: np.ndarray) -> np.ndarray:
        """w = grad H2(x2) - Jac(C2,x2)' u2 (the vector R2 dissipates)."""
        grad_h = self.hamiltonian.grad(x2)
        _, ctx = self.c2bar.forward_with_ctx(x2)
        u_full = np.zeros(x2.shape[:-1] + (self.m,))
        u_full[..., : self.n] = u2
        return grad_h - self.c2bar.vjp(ctx, u_full)

    def dynamics(self, x2: np.ndarray, u2: np.ndarray, z=None) -> np.ndarray:
        if x2.shape[-1] != self.m or np.shape(u2)[-1] != self.n:
            raise ContractError("controller dynamics dimension mismatch")
        w = self.effort_direction(x2, u2)
        A = self.j2.eval(x2, z) - self.r2.eval(x2, z)
        return np.einsum("...ij,...j->...i", A, w)

    def c2_jacobian(self, x2: np.ndarray) -> np.ndarray:
        """n x m Jacobian of the output map at one point."""
        _, ctx = self.c2bar.forward_with_ctx(x2)
        rows = []
        for i in range(self.n):
            e = np.zeros(self.m)
            e[i] = 1.0
            rows.append(self.c2bar.vjp(ctx, e))
        return np.stack(rows, axis=0)

    # -- parameters / tracing -----------------------------------------------------

    def parameters(self) -> dict[str, np.ndarray]:
        out = {}
        out.update(self.hamiltonian.core.param_items("G"))
        out.update(self.c2bar.param_items("C2"))
        out.update(self.j2.param_items("J2"))
        out.update(self.r2.param_items("R2"))
        return dict(out)

    def power_states(self) -> dict[str, np.ndarray]:
        out = {}
        out.update(self.hamiltonian.core.state_items("G"))
        out.update(self.c2bar.state_items("C2"))
        return dict(out)

    def load_power_states(self, arrays: dict) -> None:
        self.hamiltonian.core.load_state("G", arrays)
        self.c2bar.load_state("C2", arrays)

    def bind(self, tape: GradientTape) -> "TracedNinode":
        return TracedNinode(self, tape)

    def topology(self) -> dict:
        return {
            "m": self.m,
            "n": self.n,
            "l": self.l,
            "kappa": self.kappa,
            "eps": self.r2.eps,
            "storage_core": self.hamiltonian.core.topology(),
            "output_net": self.c2bar.topology(),
            "head_width": self.j2.features.dims[1],
            "head_depth": self.j2.features.depth,
        }


class TracedNinode:
    """Per-rollout tape view of a NinodeController."""

    def __init__(self, ctrl: NinodeController, tape: GradientTape):
        self.ctrl = ctrl
        self.tape = tape
        self.g = ctrl.hamiltonian.core.bind(tape, "G")
        self.c2 = ctrl.c2bar.bind(tape, "C2")
        self.j2 = ctrl.j2.bind(tape, "J2")
        self.r2 = ctrl.r2.bind(tape, "R2")

    def stage(self, x2: Node, u2: Node, z: Node | None = None):
        """(x2dot, y2) at one integration stage."""
        t = self.tape
        ctrl = self.ctrl
        g_out, g_ctx = self.g.forward(x2)
        grad_h = self.g.vjp(g_ctx, g_out)
        c_out, c_ctx = self.c2.forward(x2)
        y2 = t.head(c_out, ctrl.n)
        jac_u = self.c2.vjp(c_ctx, t.pad(u2, ctrl.m))
        w = t.sub(grad_h, jac_u)
        A = t.sub(self.j2.eval(x2, z), self.r2.eval(x2, z))
        return t.matvec(A, w), y2


def build_ninode(
    n: int,
    eta: float,
    m: int | None = None,
    l: int = 0,
    seed: int = 0,
    n_layers: int = 2,
    alpha: float = 1.0,
    beta: float = 0.5,
    width: int = 32,
    mlp_depth: int = 2,
    head_width: int = 32,
    head_depth: int = 2,
    kappa: float = 0.9,
    eps: float = 0.1,
    orthogonal: bool = False,
) -> NinodeController:
    """Construct a certified controller for a plant with constant eta.

    The storage core is rescaled to gamma = 1 and the output net to
    mu_bar = kappa*sqrt(eta)*gamma, so the regularity constraint holds with
    relative margin 1 - kappa before any training.
    """
    if eta is None or eta <= 0:
        raise ContractError("build_ninode needs a certified positive eta")
    if not (0 < kappa < 1):
        raise ContractError("safety factor kappa must lie in (0, 1)")
    m = 2 * n if m is None else int(m)
    core = BiLipNet(
        m,
        n_layers=n_layers,
        alpha=alpha,
        beta=beta,
        width=width,
        mlp_depth=mlp_depth,
        orthogonal=orthogonal,
        rng=rng_stream(seed, 0),
    )
    mu_g, _ = core.certify()
    core.set_scale(1.0 / mu_g)
    gamma = core.certify()[0]

    c2bar = BiLipNet(
        m,
        n_layers=n_layers,
        alpha=alpha,
        beta=beta,
        width=width,
        mlp_depth=mlp_depth,
        orthogonal=orthogonal,
        rng=rng_stream(seed, 1),
    )
    _, nu_c = c2bar.certify()
    c2bar.set_scale(kappa * float(np.sqrt(eta)) * gamma / nu_c)
    c2bar.certify()

    j2 = SkewHead(m, l, width=head_width, depth=head_depth, rng=rng_stream(seed, 2))
    r2 = SpdHead(
        m, l, eps=eps, width=head_width, depth=head_depth, rng=rng_stream(seed, 3)
    )
    return NinodeController(
        n=n, m=m, l=l, hamiltonian=PlnetHamiltonian(core), c2bar=c2bar, j2=j2, r2=r2, kappa=kappa
    )


class LinearNiController:
    """Baseline with constant J2, R2, C2 and quadratic storage x2' P2 x2.

    Structural floors keep the certificate valid through training:
    P2 = Lp Lp' + 0.5*gamma0^2*I pins gamma >= gamma0 and the output matrix
    is spectrally rescaled to mu_bar = kappa*sqrt(eta)*gamma0.
    """

    kind = "linear_ni"

    def __init__(
        self,
        n: int,
        m: int,
        eta: float,
        kappa: float = 0.9,
        eps: float = 0.1,
        gamma0: float = 1.0,
        seed: int = 0,
    ):
        if m < n:
            raise ContractError("controller state dimension m must be >= n")
        self.n = int(n)
        self.m = int(m)
        self.l = 0
        self.kappa = float(kappa)
        self.eps = float(eps)
        self.gamma0 = float(gamma0)
        self.p_floor = 0.5 * gamma0 * gamma0
        self.mu_bar_target = kappa * float(np.sqrt(eta)) * gamma0

        rng = rng_stream(seed, 0)
        self.skew_vec = 0.1 * rng.standard_normal(m * (m - 1) // 2)
        self.lr_vec = 0.1 * rng.standard_normal(m * (m + 1) // 2)
        self.lp_vec = 0.1 * rng.standard_normal(m * (m + 1) // 2)
        self.c2_raw = _orthogonalish(rng, m, m)
        self._c2_state = SpectralNormState()
        self._c2_u = None
        self._c2_v = None
        self._c2_sigma = None
        self._c2_eff = None
        self.refresh(iters=100)

    # -- assembled matrices ----------------------------------------------------

    def refresh(self, iters: int = 20) -> None:
        u, v, sigma = power_vectors(self.c2_raw, iters=iters, state=self._c2_state)
        self._c2_u, self._c2_v, self._c2_sigma = u, v, float(sigma)
        self._c2_eff = self.c2_raw * (self.mu_bar_target / self._c2_sigma)

    def recompute_effective(self) -> None:
        self._c2_sigma = float(self._c2_u @ self.c2_raw @ self._c2_v)
        self._c2_eff = self.c2_raw * (self.mu_bar_target / self._c2_sigma)

    def _tri(self, vec, strictly_upper=False):
        mat = np.zeros((self.m, self.m))
        if strictly_upper:
            iu = np.triu_indices(self.m, k=1)
            mat[iu] = vec
        else:
            il = np.tril_indices(self.m)
            mat[il] = vec
        return mat

    @property
    def j2_matrix(self) -> np.ndarray:
        A = self._tri(self.skew_vec, strictly_upper=True)
        return A - A.T

    @property
    def r2_matrix(self) -> np.ndarray:
        L = self._tri(self.lr_vec)
        return L @ L.T + self.eps * np.eye(self.m)

    @property
    def p2_matrix(self) -> np.ndarray:
        L = self._tri(self.lp_vec)
        return L @ L.T + self.p_floor * np.eye(self.m)

    @property
    def c2bar_matrix(self) -> np.ndarray:
        return self._c2_eff

    def certify(self) -> dict:
        p2 = self.p2_matrix
        gamma = float(np.sqrt(2.0 * np.min(np.linalg.eigvalsh(p2))))
        svals = np.linalg.svd(self._c2_eff, compute_uv=False)
        return {
            "gamma": gamma,
            "mu_lower": float(svals[-1]),
            "mu_bar": float(svals[0]),
            "eps": self.eps,
        }

    # -- raw evaluation -----------------------------------------------------------

    def hamiltonian_value(self, x2: np.ndarray):
        p2 = self.p2_matrix
        return np.sum((x2 @ p2) * x2, axis=-1)

    def hamiltonian_grad(self, x2: np.ndarray) -> np.ndarray:
        return 2.0 * x2 @ self.p2_matrix

    def output(self, x2: np.ndarray) -> np.ndarray:
        return x2 @ self._c2_eff.T[:, : self.n]

    def j_matrix(self, x2: np.ndarray, z=None) -> np.ndarray:
        out = self.j2_matrix
        return np.broadcast_to(out, x2.shape[:-1] + out.shape).copy()

    def r_matrix(self, x2: np.ndarray, z=None) -> np.ndarray:
        out = self.r2_matrix
        return np.broadcast_to(out, x2.shape[:-1] + out.shape).copy()

    def effort_direction(self, x2: np.ndarray, u2: np.ndarray) -> np.ndarray:
        u_full = np.zeros(x2.shape[:-1] + (self.m,))
        u_full[..., : self.n] = u2
        return self.hamiltonian_grad(x2) - u_full @ self._c2_eff

    def dynamics(self, x2: np.ndarray, u2: np.ndarray, z=None) -> np.ndarray:
        if x2.shape[-1] != self.m or np.shape(u2)[-1] != self.n:
            raise ContractError("controller dynamics dimension mismatch")
        w = self.effort_direction(x2, u2)
        A = self.j2_matrix - self.r2_matrix
        return w @ A.T

    def c2_jacobian(self, x2: np.ndarray) -> np.ndarray:
        return self._c2_eff[: self.n].copy()

    # -- parameters / tracing --------------------------------------------------------

    def parameters(self) -> dict[str, np.ndarray]:
        return {
            "J2.vec": self.skew_vec,
            "R2.vec": self.lr_vec,
            "P2.vec": self.lp_vec,
            "C2.V": self.c2_raw,
        }

    def power_states(self) -> dict[str, np.ndarray]:
        return {"C2.pi_u": self._c2_u, "C2.pi_v": self._c2_v}

    def load_power_states(self, arrays: dict) -> None:
        if "C2.pi_u" in arrays and "C2.pi_v" in arrays:
            self._c2_u = np.asarray(arrays["C2.pi_u"], dtype=np.float64)
            self._c2_v = np.asarray(arrays["C2.pi_v"], dtype=np.float64)
            self._c2_state.v = self._c2_v.copy()
            self._c2_sigma = float(self._c2_u @ self.c2_raw @ self._c2_v)
            self._c2_eff = self.c2_raw * (self.mu_bar_target / self._c2_sigma)

    def bind(self, tape: GradientTape) -> "TracedLinearNi":
        return TracedLinearNi(self, tape)

    def topology(self) -> dict:
        return {
            "m": self.m,
            "n": self.n,
            "l": self.l,
            "kappa": self.kappa,
            "eps": self.eps,
            "gamma0": self.gamma0,
        }


class TracedLinearNi:
    """Per-rollout tape view of the linear baseline (constant matrices are
    recorded once and shared by every stage)."""

    def __init__(self, ctrl: LinearNiController, tape: GradientTape):
        self.ctrl = ctrl
        self.tape = tape
        t = tape
        m = ctrl.m
        a = t.param("J2.vec", ctrl.skew_vec)
        lr = t.param("R2.vec", ctrl.lr_vec)
        lp = t.param("P2.vec", ctrl.lp_vec)
        v = t.param("C2.V", ctrl.c2_raw)
        j2 = t.skew_from_vec(a, m)
        r2 = t.gram_eps(t.lowtri_from_vec(lr, m), ctrl.eps)
        self.p2 = t.gram_eps(t.lowtri_from_vec(lp, m), ctrl.p_floor)
        sn = t.specnorm_uv(v, ctrl._c2_u, ctrl._c2_v)
        self.c2 = t.scale_to(v, sn, ctrl.mu_bar_target)
        self.a_matrix = t.sub(j2, r2)

    def stage(self, x2: Node, u2: Node, z: Node | None = None):
        t = self.tape
        ctrl = self.ctrl
        grad_h = t.smul(t.matvec(self.p2, x2), 2.0)
        c_full = t.matvec(self.c2, x2)
        y2 = t.head(c_full, ctrl.n)
        jac_u = t.matvec_t(self.c2, t.pad(u2, ctrl.m))
        w = t.sub(grad_h, jac_u)
        return t.matvec(self.a_matrix, w), y2


def build_linear_ni(
    m: int,
    n: int,
    seed: int,
    eta: float,
    kappa: float = 0.9,
    eps: float = 0.1,
) -> LinearNiController:
    """Random linear baseline whose regularity certificate passes by scaling."""
    if eta is None or eta <= 0:
        raise ContractError("build_linear_ni needs a certified positive eta")
    return LinearNiController(n=n, m=m, eta=eta, kappa=kappa, eps=eps, seed=seed)
