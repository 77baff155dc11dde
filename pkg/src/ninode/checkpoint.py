"""Controller checkpoints: one JSON document per controller.

The document carries net topology, raw parameter arrays (flat lists of
decimal doubles), the power-iteration pairs of every spectrally
reparameterized weight, certified constants, the safety factor, the RNG
seed, and the embedded regularity-certificate report.  Restoring the
power-iteration pairs reproduces the executed function bit-for-bit.
"""

from __future__ import annotations

import json

import numpy as np

from .controller import (
    LinearNiController,
    NinodeController,
    RegularityReport,
    build_ninode,
)
from .errors import ConfigError

__all__ = ["checkpoint_payload", "save_checkpoint", "load_checkpoint"]

FORMAT = "ninode-checkpoint-v1"


def _arrays_out(arrays: dict) -> tuple[dict, dict]:
    flat = {k: [float(x) for x in np.asarray(v).reshape(-1)] for k, v in arrays.items()}
    shapes = {k: list(np.asarray(v).shape) for k, v in arrays.items()}
    return flat, shapes


def _arrays_in(flat: dict, shapes: dict) -> dict:
    return {
        k: np.asarray(flat[k], dtype=np.float64).reshape(shapes[k]) for k in flat
    }


def checkpoint_payload(ctrl, eta: float, seed: int, certificate: RegularityReport) -> dict:
    params, param_shapes = _arrays_out(ctrl.parameters())
    power, power_shapes = _arrays_out(ctrl.power_states())
    return {
        "format": FORMAT,
        "kind": ctrl.kind,
        "seed": int(seed),
        "m": ctrl.m,
        "n": ctrl.n,
        "l": ctrl.l,
        "kappa": ctrl.kappa,
        "eta": float(eta),
        "topology": ctrl.topology(),
        "constants": ctrl.certify(),
        "certificate": certificate.as_dict(),
        "params": params,
        "param_shapes": param_shapes,
        "power": power,
        "power_shapes": power_shapes,
    }


def save_checkpoint(path, ctrl, eta: float, seed: int, certificate: RegularityReport) -> None:
    with open(path, "w") as fh:
        json.dump(checkpoint_payload(ctrl, eta, seed, certificate), fh, indent=1)
        fh.write("\n")


def _rebuild_ninode(doc: dict) -> NinodeController:
    topo = doc["topology"]
    core = topo["storage_core"]
    out = topo["output_net"]
    ctrl = build_ninode(
        n=doc["n"],
        eta=doc["eta"],
        m=doc["m"],
        l=doc["l"],
        seed=doc["seed"],
        n_layers=core["n_layers"],
        alpha=core["alpha"],
        beta=core["beta"],
        width=core["width"],
        mlp_depth=core["mlp_depth"],
        head_width=topo["head_width"],
        head_depth=topo["head_depth"],
        kappa=doc["kappa"],
        eps=topo["eps"],
        orthogonal=core["orthogonal"],
    )
    # exact scales recorded at save time override the rebuilt ones
    ctrl.hamiltonian.core.scale = float(core["scale"])
    ctrl.c2bar.scale = float(out["scale"])
    return ctrl


def load_checkpoint(path):
    """Rebuild the controller; returns (controller, document)."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(str(path), "checkpoint file not found") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}", f"invalid JSON: {exc.msg}") from exc
    if doc.get("format") != FORMAT:
        raise ConfigError(str(path), f"unsupported checkpoint format {doc.get('format')!r}")

    if doc["kind"] == "ninode":
        ctrl = _rebuild_ninode(doc)
    elif doc["kind"] == "linear_ni":
        topo = doc["topology"]
        ctrl = LinearNiController(
            n=doc["n"],
            m=doc["m"],
            eta=doc["eta"],
            kappa=doc["kappa"],
            eps=topo["eps"],
            gamma0=topo["gamma0"],
            seed=doc["seed"],
        )
    else:
        raise ConfigError(str(path), f"unknown controller kind {doc['kind']!r}")

    stored = _arrays_in(doc["params"], doc["param_shapes"])
    live = ctrl.parameters()
    for name, arr in stored.items():
        if name not in live:
            raise ConfigError(str(path), f"unknown parameter slot {name!r}")
        if live[name].shape != arr.shape:
            raise ConfigError(
                str(path),
                f"parameter {name!r} has shape {arr.shape}, expected {live[name].shape}",
            )
        live[name][...] = arr
    ctrl.load_power_states(_arrays_in(doc["power"], doc["power_shapes"]))
    ctrl.recompute_effective()
    return ctrl, doc
