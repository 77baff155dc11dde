"""Experiment configuration: one JSON document per experiment.

Parsing either succeeds completely or fails with a dotted field path (or a
line diagnostic for malformed JSON); unknown fields are rejected so typos
cannot silently fall back to defaults.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .controller import build_ninode
from .errors import ConfigError
from .plant import MechanicalPlant, SpringChainParams, spring_chain
from .train import TrainConfig

__all__ = ["ExperimentConfig", "parse_config", "parse_config_dict", "load_sensor_csv"]

_SWEEP_DEFAULT_FACTORS = [0.125, 0.25, 0.5, 1.0, 2.0, 4.0]


def _expect(block: dict, path: str, known: dict):
    """Reject unknown fields and return values with defaults applied."""
    if not isinstance(block, dict):
        raise ConfigError(path, f"expected an object, got {type(block).__name__}")
    for key in block:
        if key not in known:
            raise ConfigError(f"{path}.{key}" if path else key, "unknown field")
    return {k: block.get(k, default) for k, default in known.items()}


def _number(value, path, positive=False):
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        raise ConfigError(path, f"expected a number, got {type(value).__name__}")
    if positive and value <= 0:
        raise ConfigError(path, "must be positive")
    return float(value)


def _integer(value, path, minimum=None):
    if not isinstance(value, int) or isinstance(value, bool):
        raise ConfigError(path, f"expected an integer, got {type(value).__name__}")
    if minimum is not None and value < minimum:
        raise ConfigError(path, f"must be >= {minimum}")
    return int(value)


def _vector(value, path, length=None, positive=False):
    if not isinstance(value, list) or not all(
        isinstance(v, (int, float)) and not isinstance(v, bool) for v in value
    ):
        raise ConfigError(path, "expected a list of numbers")
    if length is not None and len(value) != length:
        raise ConfigError(path, f"expected {length} entries, got {len(value)}")
    arr = np.asarray(value, dtype=np.float64)
    if positive and np.any(arr <= 0):
        raise ConfigError(path, "entries must be positive")
    return arr


def _matrix(value, path, dim=None):
    if not isinstance(value, list) or not all(isinstance(r, list) for r in value):
        raise ConfigError(path, "expected a list of rows")
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ConfigError(path, "expected a square matrix")
    if dim is not None and arr.shape[0] != dim:
        raise ConfigError(path, f"expected dimension {dim}, got {arr.shape[0]}")
    return arr


@dataclass
class ControllerSettings:
    state_dim: int | None = None  # m; None -> 2n
    extra_dim: int = 0
    n_layers: int = 2
    alpha: float = 1.0
    beta: float = 0.5
    width: int = 32
    mlp_depth: int = 2
    head_width: int = 32
    head_depth: int = 2
    kappa: float = 0.9
    eps: float = 0.1
    orthogonal: bool = False


@dataclass
class SweepSettings:
    factors: list[float] = field(default_factory=lambda: list(_SWEEP_DEFAULT_FACTORS))
    epochs: int | None = None
    steps: int | None = None
    workers: int | None = None


@dataclass
class ExperimentConfig:
    seed: int = 0
    output_dir: str = "out"
    plant_params: SpringChainParams = field(default_factory=SpringChainParams)
    damping: np.ndarray | None = None
    eta_radius: float | None = None
    eta_samples: int = 100_000
    controller: ControllerSettings = field(default_factory=ControllerSettings)
    train: TrainConfig = field(default_factory=TrainConfig)
    sweep: SweepSettings | None = None
    sensor_csv: str | None = None
    sensor_columns: list[str] | None = None
    raw: dict = field(default_factory=dict)

    # -- derived -------------------------------------------------------------

    def sampling_radius(self) -> float:
        q0 = self.train.scale * self.train.q0
        return max(5.0, 1.2 * float(np.linalg.norm(q0)))

    def build_plant(self) -> MechanicalPlant:
        damping = np.diag(self.damping) if self.damping is not None else None
        return spring_chain(self.plant_params, damping=damping)

    def build_controller(self, eta: float, seed: int | None = None):
        c = self.controller
        n = self.plant_params.masses.shape[0]
        return build_ninode(
            n=n,
            eta=eta,
            m=c.state_dim,
            l=c.extra_dim,
            seed=self.seed if seed is None else seed,
            n_layers=c.n_layers,
            alpha=c.alpha,
            beta=c.beta,
            width=c.width,
            mlp_depth=c.mlp_depth,
            head_width=c.head_width,
            head_depth=c.head_depth,
            kappa=c.kappa,
            eps=c.eps,
            orthogonal=c.orthogonal,
        )

    def z_source(self):
        if self.controller.extra_dim == 0:
            return None
        if self.sensor_csv is None:
            l = self.controller.extra_dim
            return lambda t: np.zeros(l)
        return load_sensor_csv(self.sensor_csv, self.sensor_columns)


def parse_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(str(path), "config file not found") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:line {exc.lineno}", f"invalid JSON: {exc.msg}") from exc
    return parse_config_dict(raw)


def parse_config_dict(raw: dict) -> ExperimentConfig:
    top = _expect(
        raw,
        "",
        {
            "seed": 0,
            "output_dir": "out",
            "plant": {},
            "controller": {},
            "train": {},
            "sweep": None,
            "sensor_csv": None,
            "sensor_columns": None,
        },
    )
    cfg = ExperimentConfig(raw=raw)
    cfg.seed = _integer(top["seed"], "seed", minimum=0)
    if not isinstance(top["output_dir"], str):
        raise ConfigError("output_dir", "expected a string")
    cfg.output_dir = top["output_dir"]

    # plant block
    pb = _expect(
        top["plant"],
        "plant",
        {
            "masses": [0.02, 0.01, 0.03],
            "linear_stiffness": [15.0, 10.0, 20.0],
            "cubic_stiffness": [5.0, 2.0, 3.0],
            "damping": None,
            "eta_radius": None,
            "eta_samples": 100_000,
        },
    )
    masses = _vector(pb["masses"], "plant.masses", positive=True)
    n = masses.shape[0]
    cfg.plant_params = SpringChainParams(
        masses=masses,
        linear_stiffness=_vector(
            pb["linear_stiffness"], "plant.linear_stiffness", length=n, positive=True
        ),
        cubic_stiffness=_vector(
            pb["cubic_stiffness"], "plant.cubic_stiffness", length=n, positive=True
        ),
    )
    if pb["damping"] is not None:
        damping = _vector(pb["damping"], "plant.damping", length=n)
        if np.any(damping < 0):
            raise ConfigError("plant.damping", "diagonal entries must be >= 0")
        cfg.damping = damping
    if pb["eta_radius"] is not None:
        cfg.eta_radius = _number(pb["eta_radius"], "plant.eta_radius", positive=True)
    cfg.eta_samples = _integer(pb["eta_samples"], "plant.eta_samples", minimum=100)

    # controller block
    cb = _expect(
        top["controller"],
        "controller",
        {
            "state_dim": None,
            "extra_dim": 0,
            "n_layers": 2,
            "alpha": 1.0,
            "beta": 0.5,
            "width": 32,
            "mlp_depth": 2,
            "head_width": 32,
            "head_depth": 2,
            "kappa": 0.9,
            "eps": 0.1,
            "orthogonal": False,
        },
    )
    cs = ControllerSettings()
    if cb["state_dim"] is not None:
        cs.state_dim = _integer(cb["state_dim"], "controller.state_dim", minimum=n)
    cs.extra_dim = _integer(cb["extra_dim"], "controller.extra_dim", minimum=0)
    cs.n_layers = _integer(cb["n_layers"], "controller.n_layers", minimum=1)
    cs.alpha = _number(cb["alpha"], "controller.alpha", positive=True)
    cs.beta = _number(cb["beta"], "controller.beta")
    if not 0 <= cs.beta < cs.alpha:
        raise ConfigError("controller.beta", "needs 0 <= beta < alpha")
    cs.width = _integer(cb["width"], "controller.width", minimum=1)
    cs.mlp_depth = _integer(cb["mlp_depth"], "controller.mlp_depth", minimum=1)
    cs.head_width = _integer(cb["head_width"], "controller.head_width", minimum=1)
    cs.head_depth = _integer(cb["head_depth"], "controller.head_depth", minimum=1)
    cs.kappa = _number(cb["kappa"], "controller.kappa", positive=True)
    if cs.kappa >= 1.0:
        raise ConfigError("controller.kappa", "safety factor must be < 1")
    cs.eps = _number(cb["eps"], "controller.eps", positive=True)
    if not isinstance(cb["orthogonal"], bool):
        raise ConfigError("controller.orthogonal", "expected a boolean")
    cs.orthogonal = cb["orthogonal"]
    cfg.controller = cs

    # train block
    tb = _expect(
        top["train"],
        "train",
        {
            "steps": 5000,
            "h": 0.002,
            "epochs": 200,
            "learning_rate": 1e-3,
            "beta1": 0.9,
            "beta2": 0.999,
            "initial_position": [1.0, 2.0, 3.0],
            "scale": 1.0,
            "state_cost": None,
            "control_cost": None,
            "include_controller_state": False,
            "truncation": None,
        },
    )
    include_x2 = tb["include_controller_state"]
    if not isinstance(include_x2, bool):
        raise ConfigError("train.include_controller_state", "expected a boolean")
    m_for_cost = cs.state_dim if cs.state_dim is not None else 2 * n
    x_dim = 2 * n + (m_for_cost if include_x2 else 0)
    state_cost = None
    if tb["state_cost"] is not None:
        state_cost = _matrix(tb["state_cost"], "train.state_cost", dim=x_dim)
    control_cost = None
    if tb["control_cost"] is not None:
        if isinstance(tb["control_cost"], (int, float)) and not isinstance(
            tb["control_cost"], bool
        ):
            control_cost = _number(
                tb["control_cost"], "train.control_cost", positive=True
            ) * np.eye(n)
        else:
            control_cost = _matrix(tb["control_cost"], "train.control_cost", dim=n)
    truncation = None
    if tb["truncation"] is not None:
        truncation = _integer(tb["truncation"], "train.truncation", minimum=1)
    cfg.train = TrainConfig(
        n_steps=_integer(tb["steps"], "train.steps", minimum=1),
        h=_number(tb["h"], "train.h", positive=True),
        epochs=_integer(tb["epochs"], "train.epochs", minimum=0),
        learning_rate=_number(tb["learning_rate"], "train.learning_rate", positive=True),
        beta1=_number(tb["beta1"], "train.beta1"),
        beta2=_number(tb["beta2"], "train.beta2"),
        q0=_vector(tb["initial_position"], "train.initial_position", length=n),
        scale=_number(tb["scale"], "train.scale", positive=True),
        state_cost=state_cost,
        control_cost=control_cost,
        include_controller_state=include_x2,
        truncation=truncation,
    )

    # sweep block
    if top["sweep"] is not None:
        sb = _expect(
            top["sweep"],
            "sweep",
            {
                "factors": list(_SWEEP_DEFAULT_FACTORS),
                "epochs": None,
                "steps": None,
                "workers": None,
            },
        )
        sw = SweepSettings()
        factors = sb["factors"]
        if not isinstance(factors, list):
            raise ConfigError("sweep.factors", "expected a list of numbers")
        sw.factors = [
            _number(f, f"sweep.factors[{i}]", positive=True)
            for i, f in enumerate(factors)
        ]
        if sb["epochs"] is not None:
            sw.epochs = _integer(sb["epochs"], "sweep.epochs", minimum=0)
        if sb["steps"] is not None:
            sw.steps = _integer(sb["steps"], "sweep.steps", minimum=1)
        if sb["workers"] is not None:
            sw.workers = _integer(sb["workers"], "sweep.workers", minimum=1)
        cfg.sweep = sw

    if top["sensor_csv"] is not None:
        if not isinstance(top["sensor_csv"], str):
            raise ConfigError("sensor_csv", "expected a string path")
        cfg.sensor_csv = top["sensor_csv"]
    if top["sensor_columns"] is not None:
        cols = top["sensor_columns"]
        if not isinstance(cols, list) or not all(isinstance(c, str) for c in cols):
            raise ConfigError("sensor_columns", "expected a list of column names")
        cfg.sensor_columns = cols
    return cfg


def load_sensor_csv(path, columns):
    """Zero-order-hold sensor signal from a CSV file with a ``t`` column."""
    import csv

    with open(path) as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "t" not in reader.fieldnames:
            raise ConfigError(str(path), "sensor CSV needs a 't' column")
        if columns is None:
            columns = [c for c in reader.fieldnames if c != "t"]
        for c in columns:
            if c not in reader.fieldnames:
                raise ConfigError(str(path), f"sensor CSV missing column {c!r}")
        rows = sorted(
            ((float(r["t"]), np.array([float(r[c]) for c in columns])) for r in reader),
            key=lambda kv: kv[0],
        )
    if not rows:
        raise ConfigError(str(path), "sensor CSV has no data rows")
    times = np.array([r[0] for r in rows])
    values = np.stack([r[1] for r in rows])

    def z(t: float) -> np.ndarray:
        idx = int(np.searchsorted(times, t, side="right") - 1)
        return values[max(idx, 0)].copy()

    return z
