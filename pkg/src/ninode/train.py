"""Gradient-descent training of controller parameters through the rollout.

The quadratic rollout cost

    J = sum_{k=1..N_s} x_k' Q x_k + u_k' R u_k

is minimized with an adaptive-moment first-order method; gradients come
from reverse-mode differentiation of the recorded rollout.  The summed
state x_k is the plant state (q, p) by default, with an opt-in switch to
append the controller state.  Structural reparameterization keeps the
stability certificate valid under arbitrary parameter updates; the
post-update re-validation exists to catch implementation bugs, and a
failed re-validation rejects the update and halves the step size.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .controller import validate_regularity
from .errors import CertificationError, ContractError, DivergenceError, NumericError
from .plant import PlantState
from .simulate import ClosedLoopState, Trajectory, rollout
from .tape import GradientTape, grad

__all__ = [
    "TrainConfig",
    "HistoryRow",
    "quadratic_loss",
    "quadratic_loss_node",
    "train",
    "write_loss_history_csv",
]


@dataclass
class TrainConfig:
    """Settings of one training run."""

    n_steps: int = 5000
    h: float = 0.002
    epochs: int = 200
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    q0: np.ndarray = field(default_factory=lambda: np.array([1.0, 2.0, 3.0]))
    scale: float = 1.0
    state_cost: np.ndarray | None = None  # None -> identity
    control_cost: np.ndarray | None = None  # None -> 0.1*identity
    include_controller_state: bool = False
    truncation: int | None = None  # BPTT window; None = full horizon

    def __post_init__(self):
        self.q0 = np.asarray(self.q0, dtype=np.float64)
        if self.n_steps < 1:
            raise ContractError("n_steps must be >= 1")
        if self.state_cost is not None:
            self.state_cost = np.asarray(self.state_cost, dtype=np.float64)
            if not np.allclose(self.state_cost, self.state_cost.T):
                raise ContractError("state cost matrix must be symmetric")
            if np.min(np.linalg.eigvalsh(self.state_cost)) < -1e-12:
                raise ContractError("state cost matrix must be PSD")
        if self.control_cost is not None:
            self.control_cost = np.asarray(self.control_cost, dtype=np.float64)
            if not np.allclose(self.control_cost, self.control_cost.T):
                raise ContractError("control cost matrix must be symmetric")
            if np.min(np.linalg.eigvalsh(self.control_cost)) <= 0:
                raise ContractError("control cost matrix must be PD")

    def initial_state(self, m: int) -> ClosedLoopState:
        q = self.scale * self.q0
        return ClosedLoopState(
            plant=PlantState(q, np.zeros_like(q)), x2=np.zeros(m), t=0.0
        )


@dataclass
class HistoryRow:
    epoch: int
    loss: float
    grad_norm: float
    step_size: float
    certificate_margin: float


def _summed_state(traj: Trajectory, k: int, include_x2: bool) -> np.ndarray:
    if include_x2:
        return np.concatenate((traj.q[k], traj.p[k], traj.x2[k]))
    return np.concatenate((traj.q[k], traj.p[k]))


def quadratic_loss(
    traj: Trajectory,
    state_cost: np.ndarray | None = None,
    control_cost: np.ndarray | None = None,
    include_controller_state: bool = False,
) -> float:
    """Rollout cost summed over k = 1..N_s (the initial record is excluded).

    ``state_cost`` defaults to the identity and ``control_cost`` to
    0.1*identity, matching the reference experiment.
    """
    x_dim = _summed_state(traj, 0, include_controller_state).shape[0]
    u_dim = traj.u1.shape[1]
    if state_cost is not None and state_cost.shape != (x_dim, x_dim):
        raise ContractError(
            f"state cost has shape {state_cost.shape}, expected {(x_dim, x_dim)}"
        )
    if control_cost is not None and control_cost.shape != (u_dim, u_dim):
        raise ContractError(
            f"control cost has shape {control_cost.shape}, expected {(u_dim, u_dim)}"
        )
    total = 0.0
    for k in range(1, traj.n_steps + 1):
        x = _summed_state(traj, k, include_controller_state)
        u = traj.u1[k]
        total += x @ x if state_cost is None else x @ state_cost @ x
        total += 0.1 * (u @ u) if control_cost is None else u @ control_cost @ u
    return float(total)


def quadratic_loss_node(
    tape: GradientTape,
    traj: Trajectory,
    state_cost: np.ndarray | None = None,
    control_cost: np.ndarray | None = None,
    include_controller_state: bool = False,
):
    """Same cost assembled on the tape from a traced rollout."""
    if traj.traced is None:
        raise ContractError("quadratic_loss_node needs a traced rollout")
    tr = traj.traced
    total = None
    for k in range(1, traj.n_steps + 1):
        x = tape.concat(tr.q[k], tr.p[k])
        if include_controller_state:
            x = tape.concat(x, tr.x2[k])
        if state_cost is None:
            lx = tape.sumsq(x)
        else:
            lx = tape.quadform(x, state_cost)
        if control_cost is None:
            lu = tape.smul(tape.sumsq(tr.u1[k]), 0.1)
        else:
            lu = tape.quadform(tr.u1[k], control_cost)
        step_loss = tape.add(lx, lu)
        total = step_loss if total is None else tape.add(total, step_loss)
    return total


class _Adam:
    def __init__(self, names, params, beta1, beta2, eps):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(params[k]) for k in names}
        self.v = {k: np.zeros_like(params[k]) for k in names}
        self.t = 0

    def update(self, params, grads, lr):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for k, g in grads.items():
            self.m[k] = b1 * self.m[k] + (1.0 - b1) * g
            self.v[k] = b2 * self.v[k] + (1.0 - b2) * g * g
            params[k] -= lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def _loss_and_grads(plant, ctrl, config, initial):
    """One (possibly truncation-chunked) differentiable rollout."""
    chunk = config.truncation or config.n_steps
    total_loss = 0.0
    grads: dict[str, np.ndarray] | None = None
    state = initial
    done = 0
    while done < config.n_steps:
        steps = min(chunk, config.n_steps - done)
        tape = GradientTape()
        traj = rollout(
            plant, ctrl, state, steps, config.h,
            tape=tape, record_energies=False,
        )
        loss = quadratic_loss_node(
            tape, traj, config.state_cost, config.control_cost,
            config.include_controller_state,
        )
        g = grad(tape, loss)
        total_loss += float(loss.value)
        if grads is None:
            grads = g
        else:
            for k in g:
                grads[k] = grads[k] + g[k]
        state = traj.final_state()
        done += steps
    return total_loss, grads


def train(plant, ctrl, config: TrainConfig):
    """Minimize the rollout cost over the controller parameters.

    Returns (controller, history); the controller is updated in place and
    every accepted update re-passes exact-SVD certification.  A failed
    re-validation rejects the update, halves the step size, and retries up
    to 10 times before aborting.
    """
    report = validate_regularity(ctrl, plant.eta)
    initial = config.initial_state(ctrl.m)
    params = ctrl.parameters()
    names = sorted(params)
    opt = _Adam(names, params, config.beta1, config.beta2, config.adam_eps)
    lr = config.learning_rate
    history: list[HistoryRow] = []

    if config.epochs == 0:
        traj = rollout(plant, ctrl, initial, config.n_steps, config.h,
                       record_energies=False)
        loss = quadratic_loss(
            traj, config.state_cost, config.control_cost,
            config.include_controller_state,
        )
        history.append(HistoryRow(0, loss, 0.0, lr, report.margin))
        return ctrl, history

    for epoch in range(config.epochs):
        ctrl.refresh(iters=20)
        loss, grads = _loss_and_grads(plant, ctrl, config, initial)
        gnorm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))

        # an update is rejected when it breaks re-certification or makes the
        # next rollout numerically diverge (stiff gains vs the fixed step)
        accepted = False
        for _attempt in range(10):
            backup = {k: params[k].copy() for k in names}
            moments = (
                {k: opt.m[k].copy() for k in names},
                {k: opt.v[k].copy() for k in names},
                opt.t,
            )
            opt.update(params, grads, lr)
            ctrl.refresh(iters=20)
            try:
                report = validate_regularity(ctrl, plant.eta)
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    rollout(
                        plant, ctrl, initial, config.n_steps, config.h,
                        allow_uncertified=True, record_energies=False,
                    )
                accepted = True
                break
            except (CertificationError, DivergenceError, NumericError):
                for k in names:
                    params[k][...] = backup[k]
                opt.m, opt.v, opt.t = moments
                ctrl.refresh(iters=20)
                lr *= 0.5
        if not accepted:
            raise CertificationError(
                f"training aborted at epoch {epoch}: update rejected 10 times "
                f"(last step size {lr:.3g})"
            )
        history.append(HistoryRow(epoch, loss, gnorm, lr, report.margin))
    return ctrl, history


def write_loss_history_csv(path, history: list[HistoryRow]) -> None:
    with open(path, "w") as fh:
        fh.write("epoch,loss,grad_norm,step_size,certificate_margin\n")
        for row in history:
            fh.write(
                f"{row.epoch},{row.loss:.17g},{row.grad_norm:.17g},"
                f"{row.step_size:.17g},{row.certificate_margin:.17g}\n"
            )
