"""Fixed-step integration of the positive-feedback interconnection.

The closed loop couples plant and controller through u1 = y2 = C2(x2) and
u2 = y1 = q, both re-evaluated at every integration stage of the classical
4th-order scheme.  Along certified closed loops the storage sum

    W(x1, x2) = H1(x1) + H2(x2) - q' C2(x2)

is positive definite and non-increasing up to integration error; rollouts
record it together with every interconnection signal.

``rollout`` with a tape produces the same trajectory while recording the
step recursion as a differentiable computation; node handles for the
per-step states and inputs are kept on the returned trajectory so a
training loss can be assembled on the tape.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .controller import validate_regularity
from .errors import ContractError, DivergenceError
from .plant import MechanicalPlant, PlantState
from .tape import GradientTape

__all__ = [
    "ClosedLoopState",
    "Trajectory",
    "lyapunov_W",
    "step",
    "rollout",
    "write_trajectory_csv",
]

DIVERGENCE_LIMIT = 1e6


@dataclass
class ClosedLoopState:
    """Plant state, controller state, and time."""

    plant: PlantState
    x2: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.x2 = np.asarray(self.x2, dtype=np.float64)


@dataclass
class TracedSignals:
    """Per-step tape nodes of a traced rollout (index 0 = initial state)."""

    q: list = field(default_factory=list)
    p: list = field(default_factory=list)
    x2: list = field(default_factory=list)
    u1: list = field(default_factory=list)


class Trajectory:
    """Uniform-grid record of a closed-loop rollout (n_steps + 1 rows)."""

    def __init__(self, h: float, n_steps: int, n: int, m: int):
        self.h = float(h)
        self.n_steps = int(n_steps)
        rows = n_steps + 1
        self.t = np.zeros(rows)
        self.q = np.zeros((rows, n))
        self.p = np.zeros((rows, n))
        self.x2 = np.zeros((rows, m))
        self.u1 = np.zeros((rows, n))
        self.H1 = np.zeros(rows)
        self.H2 = np.zeros(rows)
        self.W = np.zeros(rows)
        self.traced: TracedSignals | None = None

    @property
    def y1(self) -> np.ndarray:
        """Plant output (u2 of the controller) at every step."""
        return self.q

    def final_state(self) -> ClosedLoopState:
        return ClosedLoopState(
            plant=PlantState(self.q[-1].copy(), self.p[-1].copy()),
            x2=self.x2[-1].copy(),
            t=float(self.t[-1]),
        )


def lyapunov_W(plant: MechanicalPlant, ctrl, state: ClosedLoopState) -> float:
    """W = H1(x1) + H2(x2) - q' C2(x2).

    Positive for every nonzero state once the controller has passed
    ``validate_regularity`` against the plant's certified eta.
    """
    w = plant.hamiltonian(state.plant)
    if ctrl is not None:
        w = w + ctrl.hamiltonian_value(state.x2) - state.plant.q @ ctrl.output(state.x2)
    return float(w)


def _stage_deriv(plant, ctrl, q, p, x2, z):
    if ctrl is None:
        u1 = np.zeros_like(q)
        x2dot = np.zeros_like(x2)
    else:
        u1 = ctrl.output(x2)
        x2dot = ctrl.dynamics(x2, q, z)
    qdot, pdot = plant._deriv(q, p, u1)
    return qdot, pdot, x2dot


def _rk4_raw(plant, ctrl, q, p, x2, h, z):
    k1 = _stage_deriv(plant, ctrl, q, p, x2, z)
    k2 = _stage_deriv(
        plant, ctrl, q + 0.5 * h * k1[0], p + 0.5 * h * k1[1], x2 + 0.5 * h * k1[2], z
    )
    k3 = _stage_deriv(
        plant, ctrl, q + 0.5 * h * k2[0], p + 0.5 * h * k2[1], x2 + 0.5 * h * k2[2], z
    )
    k4 = _stage_deriv(plant, ctrl, q + h * k3[0], p + h * k3[1], x2 + h * k3[2], z)
    c = h / 6.0
    return (
        q + c * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        p + c * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
        x2 + c * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2]),
    )


def _check_finite(q, p, x2, t, k):
    mx = max(
        np.max(np.abs(q)),
        np.max(np.abs(p)),
        np.max(np.abs(x2)) if x2.size else 0.0,
    )
    if not np.isfinite(mx) or mx > DIVERGENCE_LIMIT:
        raise DivergenceError(
            f"trajectory diverged at t={t:.6g} (step {k}): state norm {mx:.3g}",
            t=float(t),
            step=int(k),
        )


def step(plant: MechanicalPlant, ctrl, state: ClosedLoopState, h: float, z=None) -> ClosedLoopState:
    """One classical 4th-order step of the coupled ODE."""
    if h <= 0:
        raise ContractError("step size must be positive")
    q, p, x2 = _rk4_raw(plant, ctrl, state.plant.q, state.plant.p, state.x2, h, z)
    t = state.t + h
    _check_finite(q, p, x2, t, 0)
    return ClosedLoopState(plant=PlantState(q, p), x2=x2, t=t)


def rollout(
    plant: MechanicalPlant,
    ctrl,
    initial: ClosedLoopState,
    n_steps: int,
    h: float,
    z_source=None,
    tape: GradientTape | None = None,
    allow_uncertified: bool = False,
    record_energies: bool = True,
) -> Trajectory:
    """Integrate the interconnection for ``n_steps`` fixed steps.

    ``ctrl`` may be None for the open-loop (u = 0) plant.  Unless
    ``allow_uncertified`` is set, the controller must pass the regularity
    check against the plant's certified eta before anything is integrated.
    With a tape, the recursion is recorded end-to-end and node handles are
    attached as ``trajectory.traced``.
    """
    if n_steps < 0:
        raise ContractError("n_steps must be >= 0")
    if h <= 0:
        raise ContractError("step size must be positive")
    if ctrl is not None:
        if allow_uncertified:
            warnings.warn(
                "rolling out without a validated regularity certificate",
                stacklevel=2,
            )
        else:
            validate_regularity(ctrl, plant.eta)
    m = ctrl.m if ctrl is not None else 0
    if initial.x2.shape != (m,):
        raise ContractError(
            f"initial controller state has dimension {initial.x2.shape}, expected ({m},)"
        )
    if tape is None:
        return _rollout_raw(
            plant, ctrl, initial, n_steps, h, z_source, record_energies
        )
    return _rollout_traced(
        plant, ctrl, initial, n_steps, h, z_source, tape, record_energies
    )


def _record(traj, k, t, q, p, x2, u1, plant, ctrl, record_energies):
    traj.t[k] = t
    traj.q[k] = q
    traj.p[k] = p
    traj.x2[k] = x2
    traj.u1[k] = u1
    if record_energies:
        h1 = float(plant.hamiltonian(PlantState(q, p)))
        h2 = float(ctrl.hamiltonian_value(x2)) if ctrl is not None else 0.0
        traj.H1[k] = h1
        traj.H2[k] = h2
        traj.W[k] = h1 + h2 - float(q @ u1)


def _rollout_raw(plant, ctrl, initial, n_steps, h, z_source, record_energies):
    n = plant.n
    m = ctrl.m if ctrl is not None else 0
    traj = Trajectory(h, n_steps, n, m)
    q, p, x2 = initial.plant.q.copy(), initial.plant.p.copy(), initial.x2.copy()
    t = float(initial.t)
    for k in range(n_steps + 1):
        z = z_source(t) if z_source is not None else None
        u1 = ctrl.output(x2) if ctrl is not None else np.zeros(n)
        _record(traj, k, t, q, p, x2, u1, plant, ctrl, record_energies)
        if k == n_steps:
            break
        q, p, x2 = _rk4_raw(plant, ctrl, q, p, x2, h, z)
        t = initial.t + (k + 1) * h
        _check_finite(q, p, x2, t, k + 1)
    return traj


def _rollout_traced(plant, ctrl, initial, n_steps, h, z_source, tape, record_energies):
    n = plant.n
    m = ctrl.m if ctrl is not None else 0
    traj = Trajectory(h, n_steps, n, m)
    traj.traced = TracedSignals()
    t_plant = plant.bind(tape)
    t_ctrl = ctrl.bind(tape) if ctrl is not None else None

    def stage(qn, pn, x2n, zn):
        if t_ctrl is None:
            u1 = tape.leaf(np.zeros(n))
            x2dot = tape.leaf(np.zeros(m))
        else:
            x2dot, u1 = t_ctrl.stage(x2n, qn, zn)
        qdot, pdot = t_plant.stage(qn, pn, u1)
        return qdot, pdot, x2dot, u1

    q = tape.leaf(initial.plant.q)
    p = tape.leaf(initial.plant.p)
    x2 = tape.leaf(initial.x2)
    t = float(initial.t)
    for k in range(n_steps + 1):
        z = z_source(t) if z_source is not None else None
        zn = tape.leaf(z) if z is not None else None
        k1 = stage(q, p, x2, zn)
        _record(
            traj, k, t, q.value, p.value, x2.value, k1[3].value,
            plant, ctrl, record_energies,
        )
        traj.traced.q.append(q)
        traj.traced.p.append(p)
        traj.traced.x2.append(x2)
        traj.traced.u1.append(k1[3])
        if k == n_steps:
            break
        half = 0.5 * h
        k2 = stage(
            tape.axpy(half, k1[0], q), tape.axpy(half, k1[1], p),
            tape.axpy(half, k1[2], x2), zn,
        )
        k3 = stage(
            tape.axpy(half, k2[0], q), tape.axpy(half, k2[1], p),
            tape.axpy(half, k2[2], x2), zn,
        )
        k4 = stage(
            tape.axpy(h, k3[0], q), tape.axpy(h, k3[1], p),
            tape.axpy(h, k3[2], x2), zn,
        )
        q = tape.rk4_combine(q, k1[0], k2[0], k3[0], k4[0], h)
        p = tape.rk4_combine(p, k1[1], k2[1], k3[1], k4[1], h)
        x2 = tape.rk4_combine(x2, k1[2], k2[2], k3[2], k4[2], h)
        t = initial.t + (k + 1) * h
        _check_finite(q.value, p.value, x2.value, t, k + 1)
    return traj


def write_trajectory_csv(path, traj: Trajectory) -> None:
    """CSV export: t,q1..qn,p1..pn,x2_1..x2_m,u1..un,H1,H2,W with 17
    significant digits per value."""
    n = traj.q.shape[1]
    m = traj.x2.shape[1]
    cols = (
        ["t"]
        + [f"q{i+1}" for i in range(n)]
        + [f"p{i+1}" for i in range(n)]
        + [f"x2_{i+1}" for i in range(m)]
        + [f"u{i+1}" for i in range(n)]
        + ["H1", "H2", "W"]
    )
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for k in range(traj.n_steps + 1):
            row = (
                [traj.t[k]]
                + list(traj.q[k])
                + list(traj.p[k])
                + list(traj.x2[k])
                + list(traj.u1[k])
                + [traj.H1[k], traj.H2[k], traj.W[k]]
            )
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
