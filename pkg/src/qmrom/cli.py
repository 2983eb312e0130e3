"""Command line interface: ``qmrom <subcommand> --config cfg.json``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from .errors import ConfigError, NumericalError
from .harness import (ExperimentConfig, calibrate_load, force_balance_report, gre_metric,
                      read_trajectory_csv, run_experiment, normalize_technique)
from .integrate import newmark_full
from .manifold import mmi_weights, mvw_weights, select_top_k
from .modal import linear_modal_run, modal_derivatives, static_modal_derivatives

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3

log = logging.getLogger("qmrom")


def _emit(text: str, out: str | None, filename: str):
    if out:
        os.makedirs(out, exist_ok=True)
        with open(os.path.join(out, filename), "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    sys.stdout.write(text)


def _load_cfg(args) -> ExperimentConfig:
    if not args.config:
        raise ConfigError("--config is required")
    cfg = ExperimentConfig.load(args.config)
    if args.steps is not None:
        if args.steps < 1:
            raise ConfigError("--steps must be positive")
        cfg.n_steps = args.steps
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def cmd_modes(args) -> int:
    cfg = _load_cfg(args)
    model, _, _, basis = cfg.build()
    lines = [f"# model {model.name}, {model.n} free DOFs", "mode,omega_rad_s,freq_hz"]
    for k, w in zip(basis.mode_numbers, basis.omega):
        lines.append(f"{k},{w:.17g},{w / (2 * np.pi):.17g}")
    _emit("\n".join(lines) + "\n", args.out, "modes.csv")
    return EXIT_OK


def cmd_mds(args) -> int:
    cfg = _load_cfg(args)
    model, _, _, basis = cfg.build()
    kind = args.kind.upper()
    if kind == "SMD":
        derivs = static_modal_derivatives(model, basis, both_orders=True)
    else:
        derivs = modal_derivatives(model, basis)
    nums = basis.mode_numbers
    lines = [f"# {kind} tensor, n={basis.n}, modes={list(nums)}, pairs 1-based in retained order"]
    for i in range(basis.m):
        for j in range(basis.m):
            vals = ",".join("%.17g" % x for x in derivs.vector(i, j))
            lines.append(f"{kind} {i + 1} {j + 1} {vals}")
    res = derivs.symmetry_residual()
    lines.append("# symmetry residual |theta_ij - theta_ji| / max(|theta_ij|, 1)")
    for i in range(basis.m):
        for j in range(i + 1, basis.m):
            lines.append(f"SYM {i + 1} {j + 1} {res[i, j]:.3e}")
    lines.append(f"SYM max {res.max():.3e}")
    _emit("\n".join(lines) + "\n", args.out, f"{kind.lower()}s.txt")
    return EXIT_OK


def cmd_select(args) -> int:
    cfg = _load_cfg(args)
    model, load, params, basis = cfg.build()
    hist = linear_modal_run(model, basis, load, params.t_max, params.n_steps, zeta=cfg.zeta_linear)
    heuristic = args.heuristic.upper()
    W = mmi_weights(hist) if heuristic == "MMI" else mvw_weights(hist, model, basis)
    k = args.k if args.k is not None else basis.m
    pairs, weights = select_top_k(W, k)
    Wn = W.normalized()
    lines = [f"# {heuristic} normalized weights (rows i, columns j, 1-based)"]
    lines.append("      " + "".join(f"{j + 1:>10d}" for j in range(basis.m)))
    for i in range(basis.m):
        lines.append(f"{i + 1:>6d}" + "".join(f"{Wn[i, j]:>10.4f}" for j in range(basis.m)))
    lines.append(f"# top {k}")
    for rank, ((i, j), w) in enumerate(zip(pairs, weights), 1):
        lines.append(f"{rank:>4d}  ({i + 1},{j + 1})  {w:.4f}")
    records = [{"rank": r, "i": i + 1, "j": j + 1, "weight": w}
               for r, ((i, j), w) in enumerate(zip(pairs, weights), 1)]
    lines.append(json.dumps({"technique": heuristic, "matrix": Wn.tolist(), "selected": records}))
    _emit("\n".join(lines) + "\n", args.out, f"select_{heuristic.lower()}.txt")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _load_cfg(args)
    if args.technique:
        techs = [normalize_technique(t) for t in args.technique]
        if not any(t["name"] == "full" for t in techs):
            techs.insert(0, {"name": "full"})
        cfg.techniques = techs
    if args.out:
        cfg.output = args.out
    report = run_experiment(cfg)
    sys.stdout.write(report.to_text())
    return EXIT_NUMERICAL if report.failed else EXIT_OK


def cmd_compare(args) -> int:
    cfg = _load_cfg(args)
    model = cfg.build()[0]
    t_ref, u_ref, _ = read_trajectory_csv(args.reference)
    t_can, u_can, _ = read_trajectory_csv(args.candidate)
    if t_ref.shape != t_can.shape or not np.allclose(t_ref, t_can, rtol=0, atol=1e-12 * max(1.0, abs(t_ref[-1]))):
        raise ConfigError("trajectories are not on the same time grid")
    if u_ref.shape[1] != model.n:
        raise ConfigError(f"trajectory has {u_ref.shape[1]} DOFs, model has {model.n}")
    g = gre_metric(u_ref, u_can, model.M, cfg.sample_set)
    sys.stdout.write(f"GRE_M {g:.2f} %\n")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    cfg = _load_cfg(args)
    model, load, params, _ = cfg.build()
    load, ratio = calibrate_load(model, load, params, cfg.calibration_target)
    traj = newmark_full(model, load, None, params)
    fb = force_balance_report(model, traj)
    text = (f"amplitude {load.amplitude:.17g}\nmax_force_ratio {ratio:.17g}\n")
    if args.out:
        rows = "\n".join(f"{t:.17g},{a:.17g},{b:.17g},{r:.17g}" for t, a, b, r in
                         zip(traj.times, fb.linear,
                             fb.nonlinear, fb.ratio))
        _emit("t,linear_norm,nonlinear_norm,ratio\n" + rows + "\n", args.out, "force_balance.csv")
    sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment JSON file")
    common.add_argument("--out", help="output directory")
    common.add_argument("--steps", type=int, help="override the number of time steps")
    common.add_argument("--seed", type=int, help="seed for randomized utilities (pipeline is deterministic)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="qmrom", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("modes", parents=[common], help="vibration modes of the model")
    s = sub.add_parser("mds", parents=[common], help="modal derivative tensor as text records")
    s.add_argument("--kind", choices=["SMD", "MD", "smd", "md"], default="SMD")
    s = sub.add_parser("select", parents=[common], help="rank (S)MDs with MMI or MVW")
    s.add_argument("--heuristic", choices=["MMI", "MVW", "mmi", "mvw"], default="MMI")
    s.add_argument("--k", type=int)
    s = sub.add_parser("run", parents=[common], help="run an experiment and write the report")
    s.add_argument("--technique", action="append", help="technique name (repeatable)")
    s = sub.add_parser("compare", parents=[common], help="GRE between two trajectory CSVs")
    s.add_argument("reference")
    s.add_argument("candidate")
    sub.add_parser("calibrate", parents=[common], help="scale the load to the target force ratio")
    return p


_COMMANDS = {"modes": cmd_modes, "mds": cmd_mds, "select": cmd_select, "run": cmd_run,
             "compare": cmd_compare, "calibrate": cmd_calibrate}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (OSError, ValueError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
