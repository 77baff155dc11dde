"""Command-line entry point.

Commands:
  train     -- certify the plant, build + train a controller, write artifacts
  simulate  -- roll out a (fresh or checkpointed) controller, write the trajectory
  verify    -- re-derive every certificate for a checkpoint, write the report
  sweep     -- train NINODE and linear-NI controllers per initial-condition scale

Exit codes: 0 ok, 1 usage/config error, 2 certification/verification
failure, 3 numeric divergence.  All commands are pure functions of
(config, seed): re-running reproduces artifacts byte-for-byte on one
platform, and no command mutates its input files.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import ExperimentConfig, parse_config, parse_config_dict
from .controller import build_linear_ni, validate_regularity
from .errors import CertificationError, ConfigError, ContractError, DivergenceError
from .plant import estimate_eta
from .seeding import rng_stream
from .simulate import rollout, write_trajectory_csv
from .train import quadratic_loss, train, write_loss_history_csv
from .verify import run_suite

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CERTIFICATION = 2
EXIT_DIVERGENCE = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(EXIT_USAGE)


def _build_parser() -> _Parser:
    parser = _Parser(prog="ninode", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in ("train", "simulate", "verify", "sweep"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="experiment config JSON")
        p.add_argument("--checkpoint", help="controller checkpoint JSON")
        p.add_argument("--out", help="output directory (overrides config)")
        p.add_argument("--seed", type=int, help="master seed (overrides config)")
        p.add_argument(
            "--allow-uncertified",
            action="store_true",
            help="roll out without a validated certificate (ablation only)",
        )
    return parser


def _prepare(args) -> tuple[ExperimentConfig, str]:
    cfg = parse_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    out_dir = args.out or cfg.output_dir
    os.makedirs(out_dir, exist_ok=True)
    return cfg, out_dir


def _certified_plant(cfg: ExperimentConfig):
    plant = cfg.build_plant()
    radius = cfg.eta_radius if cfg.eta_radius is not None else cfg.sampling_radius()
    estimate_eta(plant, radius=radius, samples=cfg.eta_samples, rng=rng_stream(cfg.seed, 100))
    return plant


def cmd_train(args) -> int:
    cfg, out_dir = _prepare(args)
    plant = _certified_plant(cfg)
    ctrl = cfg.build_controller(plant.eta)
    report = validate_regularity(ctrl, plant.eta)
    ctrl, history = train(plant, ctrl, cfg.train)
    report = validate_regularity(ctrl, plant.eta)

    save_checkpoint(os.path.join(out_dir, "checkpoint.json"), ctrl, plant.eta, cfg.seed, report)
    write_loss_history_csv(os.path.join(out_dir, "loss_history.csv"), history)
    traj = rollout(
        plant, ctrl, cfg.train.initial_state(ctrl.m), cfg.train.n_steps, cfg.train.h,
        z_source=cfg.z_source(),
    )
    write_trajectory_csv(os.path.join(out_dir, "final_trajectory.csv"), traj)
    print(f"train: wrote checkpoint.json, loss_history.csv, final_trajectory.csv to {out_dir}")
    print(f"train: final loss {history[-1].loss:.6g}, certificate margin {report.margin:.6g}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg, out_dir = _prepare(args)
    plant = _certified_plant(cfg)
    if args.checkpoint:
        ctrl, _doc = load_checkpoint(args.checkpoint)
    else:
        ctrl = cfg.build_controller(plant.eta)
    traj = rollout(
        plant, ctrl, cfg.train.initial_state(ctrl.m), cfg.train.n_steps, cfg.train.h,
        z_source=cfg.z_source(), allow_uncertified=args.allow_uncertified,
    )
    path = os.path.join(out_dir, "trajectory.csv")
    write_trajectory_csv(path, traj)
    print(f"simulate: wrote {path} (W {traj.W[0]:.6g} -> {traj.W[-1]:.6g})")
    return EXIT_OK


def cmd_verify(args) -> int:
    cfg, out_dir = _prepare(args)
    if not args.checkpoint:
        raise ConfigError("--checkpoint", "verify needs a checkpoint path")
    ctrl, doc = load_checkpoint(args.checkpoint)
    plant = _certified_plant(cfg)

    # stored constants must match the re-derived ones (tamper detection)
    recomputed = ctrl.certify()
    stored = doc.get("constants", {})
    for key, value in recomputed.items():
        if key in stored and abs(stored[key] - value) > 1e-9:
            sys.stderr.write(
                f"verify: stored constant {key}={stored[key]:.12g} does not match "
                f"re-derived {value:.12g}\n"
            )
            return EXIT_CERTIFICATION

    report = run_suite(
        plant,
        ctrl,
        seed=cfg.seed,
        radius=cfg.sampling_radius(),
        initial=cfg.train.initial_state(ctrl.m),
        allow_uncertified=args.allow_uncertified,
    )
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        fh.write(report.to_json() + "\n")
    text = report.format_text()
    with open(os.path.join(out_dir, "report.txt"), "w") as fh:
        fh.write(text + "\n")
    print(text)
    return EXIT_OK if report.passed else EXIT_CERTIFICATION


def _sweep_cell(payload: dict) -> dict:
    """One sweep cell: train both controllers at one scaling factor."""
    cfg = parse_config_dict(payload["raw"])
    if payload["seed"] is not None:
        cfg.seed = payload["seed"]
    r = payload["factor"]
    idx = payload["index"]
    sweep = cfg.sweep
    cfg.train.scale = r
    if sweep.epochs is not None:
        cfg.train.epochs = sweep.epochs
    if sweep.steps is not None:
        cfg.train.n_steps = sweep.steps

    plant = cfg.build_plant()
    radius = max(cfg.sampling_radius(), 1.2 * r * float(np.linalg.norm(cfg.train.q0)))
    estimate_eta(plant, radius=radius, samples=cfg.eta_samples, rng=rng_stream(cfg.seed, 100))

    result = {"factor": r}
    initial = None
    for kind, key_seed in (("ninode", 0), ("linear_ni", 1)):
        try:
            if kind == "ninode":
                ctrl = cfg.build_controller(plant.eta, seed=int(rng_stream(cfg.seed, 200 + idx, key_seed).integers(2**32)))
            else:
                m = cfg.controller.state_dim or 2 * plant.n
                ctrl = build_linear_ni(
                    m, plant.n,
                    seed=int(rng_stream(cfg.seed, 200 + idx, key_seed).integers(2**32)),
                    eta=plant.eta, kappa=cfg.controller.kappa, eps=cfg.controller.eps,
                )
            ctrl, _history = train(plant, ctrl, cfg.train)
            initial = cfg.train.initial_state(ctrl.m)
            traj = rollout(plant, ctrl, initial, cfg.train.n_steps, cfg.train.h,
                           record_energies=False)
            result[kind] = quadratic_loss(
                traj, cfg.train.state_cost, cfg.train.control_cost,
                cfg.train.include_controller_state,
            )
        except Exception as exc:  # per-cell failures recorded, sweep continues
            result[kind] = float("nan")
            result.setdefault("errors", []).append(f"{kind}: {exc}")

    open_initial = cfg.train.initial_state(0)
    open_traj = rollout(plant, None, open_initial, cfg.train.n_steps, cfg.train.h,
                        record_energies=False)
    result["open_loop"] = quadratic_loss(
        open_traj, cfg.train.state_cost, cfg.train.control_cost,
        cfg.train.include_controller_state,
    )
    return result


def cmd_sweep(args) -> int:
    cfg, out_dir = _prepare(args)
    if cfg.sweep is None or not cfg.sweep.factors:
        raise ConfigError("sweep.factors", "sweep needs a non-empty factor list")
    payloads = [
        {"raw": cfg.raw, "factor": r, "index": i, "seed": args.seed}
        for i, r in enumerate(cfg.sweep.factors)
    ]
    workers = cfg.sweep.workers or min(len(payloads), os.cpu_count() or 1)
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_cell, payloads))
    else:
        results = [_sweep_cell(p) for p in payloads]

    table = os.path.join(out_dir, "sweep.csv")
    with open(table, "w") as fh:
        fh.write("r,ninode_loss,linear_ni_loss,ninode_norm,linear_ni_norm\n")
        for res in results:
            open_loss = res["open_loop"]
            fh.write(
                f"{res['factor']:.17g},{res['ninode']:.17g},{res['linear_ni']:.17g},"
                f"{res['ninode'] / open_loss:.17g},{res['linear_ni'] / open_loss:.17g}\n"
            )
    log = os.path.join(out_dir, "sweep_log.txt")
    with open(log, "w") as fh:
        for res in results:
            fh.write(f"r={res['factor']:g}: ninode={res['ninode']:.6g} "
                     f"linear_ni={res['linear_ni']:.6g} open_loop={res['open_loop']:.6g}\n")
            for err in res.get("errors", []):
                fh.write(f"  error: {err}\n")
    print(f"sweep: wrote {table}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.command == "train":
            return cmd_train(args)
        if args.command == "simulate":
            return cmd_simulate(args)
        if args.command == "verify":
            return cmd_verify(args)
        if args.command == "sweep":
            return cmd_sweep(args)
        return EXIT_USAGE
    except (ConfigError, ContractError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_USAGE
    except CertificationError as exc:
        sys.stderr.write(f"certification failure: {exc}\n")
        return EXIT_CERTIFICATION
    except DivergenceError as exc:
        sys.stderr.write(f"divergence: {exc}\n")
        return EXIT_DIVERGENCE


if __name__ == "__main__":
    raise SystemExit(main())
