"""Numerical audit of every certificate the closed-loop analysis rests on.

Each check samples its own region with an RNG stream derived from the
master seed, records the worst observed violation against a fixed
tolerance, and cites the property it audits.  A fresh randomly initialized
certified controller passes the full suite with zero configuration; checks
never assume what they are supposed to establish, so an uncertified
controller can be audited too (with the rollout override flag) and simply
reports its failures.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .controller import validate_regularity
from .errors import CertificationError
from .plant import MechanicalPlant, estimate_eta
from .seeding import rng_stream
from .simulate import Trajectory, rollout
from .tape import GradientTape, grad
from .train import quadratic_loss, quadratic_loss_node

__all__ = [
    "CheckRecord",
    "VerificationReport",
    "check_ni_plant",
    "check_ni_controller",
    "check_lyapunov",
    "check_certified_nets",
    "check_gradients",
    "run_suite",
]


@dataclass
class CheckRecord:
    """One audited property: pass iff worst <= tol (strict < when flagged)."""

    name: str
    samples: int
    worst: float
    tol: float
    passed: bool
    anchor: str

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "samples": self.samples,
            "worst": self.worst,
            "tol": self.tol,
            "pass": self.passed,
            "anchor": self.anchor,
        }


def _record(name, samples, worst, tol, anchor, strict=False) -> CheckRecord:
    worst = float(worst)
    passed = worst < tol if strict else worst <= tol
    return CheckRecord(name, int(samples), worst, float(tol), bool(passed), anchor)


@dataclass
class VerificationReport:
    checks: list[CheckRecord] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def extend(self, records):
        self.checks.extend(records)

    def to_json(self) -> str:
        return json.dumps(
            {"checks": [c.as_dict() for c in self.checks], "pass": self.passed},
            indent=2,
        )

    def format_text(self) -> str:
        lines = []
        for c in self.checks:
            status = "PASS" if c.passed else "FAIL"
            lines.append(
                f"[{status}] {c.name}: worst={c.worst:.3e} tol={c.tol:.1e} "
                f"samples={c.samples}  ({c.anchor})"
            )
        lines.append(f"overall: {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines)


def _ball(rng, count, dim, radius):
    x = rng.standard_normal((count, dim))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    return x * (radius * rng.random(count) ** (1.0 / dim))[:, None]


# -- plant dissipation ---------------------------------------------------------


def check_ni_plant(
    plant: MechanicalPlant,
    trials: int = 10_000,
    radius: float = 5.0,
    force_radius: float = 10.0,
    rng: np.random.Generator | None = None,
) -> list[CheckRecord]:
    """Dissipation identity of the plant at sampled states and inputs.

    Momenta are sampled through a velocity ball (p = M v with |v| <= radius)
    so the identity's floating-point cancellation stays far below the
    tolerance at the chain's small masses.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    n = plant.n
    q = _ball(rng, trials, n, radius)
    v = _ball(rng, trials, n, radius)
    p = v * plant.masses
    u1 = _ball(rng, trials, n, force_radius)

    qdot = p * plant.minv
    pdot = u1 - plant.potential.grad(q)
    if plant.damping is not None:
        pdot = pdot - qdot @ plant.damping.T
    h1dot = np.sum(plant.potential.grad(q) * qdot, axis=1) + np.sum(qdot * pdot, axis=1)
    supply = np.sum(u1 * qdot, axis=1)
    lhs = h1dot - supply

    if plant.damping is None:
        expected = np.zeros(trials)
    else:
        expected = -np.sum(qdot * (qdot @ plant.damping.T), axis=1)

    records = [
        _record(
            "ni_plant_identity",
            trials,
            np.max(np.abs(lhs - expected)),
            1e-10,
            "dH1/dt - u1'*dy1/dt = -(M^-1 p)' r1 (M^-1 p) along plant dynamics",
        )
    ]
    if plant.damping is not None:
        records.append(
            _record(
                "ni_plant_dissipation_sign",
                trials,
                np.max(lhs),
                1e-10,
                "dH1/dt <= u1'*dy1/dt with damping on",
            )
        )
    return records


# -- controller dissipation ------------------------------------------------------


def _output_jacobians(ctrl, x2_batch: np.ndarray) -> np.ndarray:
    """Batched n x m Jacobians of the output map (one vjp per output row)."""
    trials = x2_batch.shape[0]
    if ctrl.kind == "linear_ni":
        jac = ctrl.c2_jacobian(np.zeros(ctrl.m))
        return np.broadcast_to(jac, (trials, ctrl.n, ctrl.m)).copy()
    _, ctx = ctrl.c2bar.forward_with_ctx(x2_batch)
    rows = []
    for i in range(ctrl.n):
        seed = np.zeros((trials, ctrl.m))
        seed[:, i] = 1.0
        rows.append(ctrl.c2bar.vjp(ctx, seed))
    return np.stack(rows, axis=1)


def check_ni_controller(
    ctrl,
    trials: int = 10_000,
    radius: float = 5.0,
    rng: np.random.Generator | None = None,
) -> list[CheckRecord]:
    """Controller dissipation identity with both sides computed independently:
    the rate side from dynamics outputs, the quadratic side from -w'R2w."""
    rng = rng if rng is not None else np.random.default_rng(0)
    x2 = _ball(rng, trials, ctrl.m, radius)
    u2 = _ball(rng, trials, ctrl.n, radius)

    x2dot = ctrl.dynamics(x2, u2)
    grad_h = ctrl.hamiltonian_grad(x2)
    jac = _output_jacobians(ctrl, x2)
    y2dot = np.einsum("tij,tj->ti", jac, x2dot)
    lhs = np.sum(grad_h * x2dot, axis=1) - np.sum(u2 * y2dot, axis=1)

    w = ctrl.effort_direction(x2, u2)
    r = ctrl.r_matrix(x2)
    rhs = -np.einsum("ti,tij,tj->t", w, r, w)

    return [
        _record(
            "ni_controller_identity",
            trials,
            np.max(np.abs(lhs - rhs)),
            1e-9,
            "dH2/dt - u2'*dy2/dt = -w' R2 w with w = grad H2 - Jac(C2)' u2",
        ),
        _record(
            "ni_controller_dissipation_sign",
            trials,
            np.max(lhs),
            1e-9,
            "dH2/dt <= u2'*dy2/dt",
        ),
    ]


# -- closed-loop storage --------------------------------------------------------


def check_lyapunov(traj: Trajectory) -> list[CheckRecord]:
    """Positivity, per-step monotonicity (with integration slack), and strict
    net decrease of W along a recorded trajectory."""
    w = traj.W
    steps = len(w) - 1
    increase = (w[1:] - w[:-1]) / np.maximum(1.0, w[:-1])
    return [
        _record(
            "lyapunov_positive",
            len(w),
            -np.min(w),
            1e-12,
            "W(x1,x2) = H1 + H2 - y1'C2(x2) >= 0 along the closed loop",
        ),
        _record(
            "lyapunov_monotone",
            steps,
            np.max(increase) if steps else 0.0,
            1e-6,
            "W(k+1) - W(k) <= 1e-6*max(1, W(k)) per integration step",
        ),
        _record(
            "lyapunov_net_decrease",
            2,
            w[-1] - w[0],
            0.0,
            "W(T) < W(0) (strict dissipation away from equilibrium)",
            strict=True,
        ),
    ]


# -- structural certificates -------------------------------------------------------


def _bilip_maps(ctrl):
    if ctrl.kind == "linear_ni":
        consts = ctrl.certify()
        return [
            (
                "output_net",
                lambda x: x @ ctrl.c2bar_matrix.T,
                consts["mu_lower"],
                consts["mu_bar"],
            )
        ]
    g_mu, g_nu = ctrl.hamiltonian.core.certify()
    c_mu, c_nu = ctrl.c2bar.certify()
    return [
        ("storage_core", ctrl.hamiltonian.core.forward, g_mu, g_nu),
        ("output_net", ctrl.c2bar.forward, c_mu, c_nu),
    ]


def check_certified_nets(
    ctrl,
    trials: int = 10_000,
    matrix_trials: int = 1_000,
    radius: float = 5.0,
    rng: np.random.Generator | None = None,
) -> list[CheckRecord]:
    """Sampling audit of every by-construction property of the heads."""
    rng = rng if rng is not None else np.random.default_rng(0)
    m = ctrl.m
    records = []

    for name, fwd, mu, nu in _bilip_maps(ctrl):
        xa = _ball(rng, trials, m, radius)
        xb = _ball(rng, trials, m, radius)
        dx = np.linalg.norm(xa - xb, axis=1)
        dy = np.linalg.norm(fwd(xa) - fwd(xb), axis=1)
        worst = np.max(np.maximum(mu * dx - dy, dy - nu * dx))
        records.append(
            _record(
                f"bilip_bounds_{name}",
                trials,
                worst,
                1e-9,
                "mu*|xa-xb| <= |net(xa)-net(xb)| <= nu*|xa-xb|",
            )
        )

    consts = ctrl.certify()
    gamma = consts["gamma"]
    x = _ball(rng, trials, m, radius)
    if ctrl.kind == "linear_ni":
        h_val = ctrl.hamiltonian_value(x)
        h_grad = ctrl.hamiltonian_grad(x)
    else:
        h_val, h_grad = ctrl.hamiltonian.value_and_grad(x)
    grad_sq = 0.5 * np.sum(h_grad**2, axis=1)
    records.append(
        _record(
            "plnet_pl_inequality",
            trials,
            np.max(gamma**2 * h_val - grad_sq),
            1e-9,
            "0.5*|grad H2|^2 >= gamma^2 * H2",
        )
    )
    records.append(
        _record(
            "plnet_quadratic_bound",
            trials,
            np.max(0.5 * gamma**2 * np.sum(x * x, axis=1) - h_val),
            1e-9,
            "H2(x) >= 0.5*gamma^2*|x|^2",
        )
    )

    x2s = _ball(rng, matrix_trials, m, radius)
    j = ctrl.j_matrix(x2s)
    records.append(
        _record(
            "skew_exact",
            matrix_trials,
            np.max(np.abs(j + np.swapaxes(j, -1, -2))),
            1e-15,
            "J2(x2,z) + J2(x2,z)' = 0",
        )
    )
    r = ctrl.r_matrix(x2s)
    eigmin = np.min(np.linalg.eigvalsh(r), axis=-1)
    eps = consts["eps"]
    records.append(
        _record(
            "spd_floor",
            matrix_trials,
            np.max(eps - eigmin),
            1e-9,
            "R2(x2,z) = R2(x2,z)' with eigmin >= eps",
        )
    )

    jac = _output_jacobians(ctrl, x2s)
    sigma_min = np.linalg.svd(jac, compute_uv=False)[..., -1]
    records.append(
        _record(
            "c2_jacobian_full_rank",
            matrix_trials,
            np.max(consts["mu_lower"] - sigma_min),
            1e-9,
            "sigma_min(Jac C2) >= mu_lower (output Jacobian keeps full row rank)",
        )
    )
    return records


# -- gradient correctness ------------------------------------------------------------


def check_gradients(
    plant: MechanicalPlant,
    ctrl,
    n_steps: int = 10,
    h: float = 0.002,
    fd_step: float = 1e-5,
    initial=None,
    allow_uncertified: bool = False,
) -> list[CheckRecord]:
    """Tape gradient of the rollout cost versus central finite differences,
    swept over every parameter entry."""
    from .train import TrainConfig

    if initial is None:
        initial = TrainConfig(n_steps=n_steps, h=h).initial_state(ctrl.m)

    tape = GradientTape()
    traj = rollout(
        plant, ctrl, initial, n_steps, h,
        tape=tape, allow_uncertified=allow_uncertified, record_energies=False,
    )
    loss_node = quadratic_loss_node(tape, traj)
    grads = grad(tape, loss_node)

    params = ctrl.parameters()

    def loss_eval():
        ctrl.recompute_effective()
        t = rollout(
            plant, ctrl, initial, n_steps, h,
            allow_uncertified=True, record_energies=False,
        )
        return quadratic_loss(t)

    fd = {}
    for name, arr in params.items():
        out = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            keep = arr[idx]
            arr[idx] = keep + fd_step
            f_plus = loss_eval()
            arr[idx] = keep - fd_step
            f_minus = loss_eval()
            arr[idx] = keep
            out[idx] = (f_plus - f_minus) / (2.0 * fd_step)
        fd[name] = out
    ctrl.recompute_effective()

    g_all = np.concatenate([grads[k].reshape(-1) for k in sorted(params)])
    f_all = np.concatenate([fd[k].reshape(-1) for k in sorted(params)])
    # central differences of a loss of size |L| resolve gradients only down to
    # ~eps*|L|/fd_step; entries below that floor are compared absolutely
    tol = 1e-4
    noise = 10.0 * np.finfo(float).eps * max(1.0, abs(float(loss_node.value))) / fd_step
    denom = noise / tol + np.maximum(np.abs(f_all), np.abs(g_all))
    rel = np.abs(g_all - f_all) / denom
    return [
        _record(
            "bptt_gradient_check",
            g_all.size,
            np.max(rel),
            tol,
            "reverse-mode rollout gradient matches central finite differences",
        )
    ]


# -- suite ----------------------------------------------------------------------------


def run_suite(
    plant: MechanicalPlant,
    ctrl,
    seed: int = 0,
    radius: float = 5.0,
    trials: int = 10_000,
    matrix_trials: int = 1_000,
    eta_trials: int = 100_000,
    lyapunov_steps: int = 5_000,
    lyapunov_h: float = 0.002,
    initial=None,
    include_gradients: bool = True,
    allow_uncertified: bool = False,
) -> VerificationReport:
    """Run every check with per-check RNG streams derived from ``seed``."""
    from .train import TrainConfig

    report = VerificationReport()

    # eta certificate (re-verified on this suite's own stream)
    eta_report = estimate_eta(
        plant, radius=radius, samples=eta_trials, rng=rng_stream(seed, 10)
    )
    report.extend(
        [
            _record(
                "eta_certificate",
                eta_report.samples,
                -min(
                    eta_report.worst_quadratic_margin,
                    eta_report.worst_gradient_margin,
                ),
                0.0,
                "V(q) >= 0.5*eta*|q|^2 and 0.5*|grad V|^2 >= eta*V on the sampling ball",
            )
        ]
    )

    # regularity certificate
    try:
        reg = validate_regularity(ctrl, plant.eta)
        margin, passed = reg.margin, True
    except CertificationError:
        consts = ctrl.certify()
        margin = float(np.sqrt(plant.eta) * consts["gamma"] - consts["mu_bar"])
        passed = False
    report.extend(
        [
            CheckRecord(
                "regularity_certificate",
                1,
                -margin,
                0.0,
                passed,
                "mu_bar < sqrt(eta)*gamma (strict coupling constraint)",
            )
        ]
    )

    report.extend(check_ni_plant(plant, trials, radius, rng=rng_stream(seed, 11)))
    report.extend(check_ni_controller(ctrl, trials, radius, rng=rng_stream(seed, 12)))
    report.extend(
        check_certified_nets(
            ctrl, trials, matrix_trials, radius, rng=rng_stream(seed, 13)
        )
    )

    if initial is None:
        initial = TrainConfig().initial_state(ctrl.m)
    traj = rollout(
        plant, ctrl, initial, lyapunov_steps, lyapunov_h,
        allow_uncertified=allow_uncertified,
    )
    report.extend(check_lyapunov(traj))

    if include_gradients:
        report.extend(
            check_gradients(
                plant, ctrl, initial=None, allow_uncertified=allow_uncertified
            )
        )
    return report
