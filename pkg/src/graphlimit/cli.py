"""Command line entry point.

Exit codes: 0 success, 2 configuration or usage error, 3 numerical
precondition failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .calculus import upwind_flux
from .dynamics import GraphStepper, read_trajectory, solve_nl2ie, solve_nlie_local, write_trajectory
from .energetics import dissipation_ledger
from .errors import ConfigError, InvalidArgument, PreconditionError
from .geometry import ball_moment_constant, tensor_closed_form, tensor_eps, validate_assumptions
from .harness import ExperimentConfig, run_convergence_sweep


def _out_dir(args, cfg: ExperimentConfig) -> Path:
    return Path(args.out or cfg.out_dir or ".")


def _sample_indices(nodes: np.ndarray, box: np.ndarray, count: int = 5) -> list:
    """Nodes closest to evenly spaced points across the middle half of the box."""
    lo, hi = box[:, 0], box[:, 1]
    mid, half = (lo + hi) / 2, (hi - lo) / 4
    targets = mid + np.linspace(-1, 1, count)[:, None] * half
    return [int(np.argmin(np.linalg.norm(nodes - t, axis=1))) for t in targets]


def cmd_tensor(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    spec, base = cfg.connectivity_spec(), cfg.base_spec()
    limit = cfg.limit_tensor()
    closed = None
    if spec.kind == "ball":
        d = cfg.dimension
        closed = tensor_closed_form(np.eye(d), spec.params["radius"], spec.params["value"])
    elif spec.kind == "anisotropic":
        p = spec.params
        closed = tensor_closed_form(np.asarray(p["tensor"], dtype=float), p["radius"], p["normalization"]
                                    or 2 / (ball_moment_constant(cfg.dimension) * p["radius"] ** (cfg.dimension + 2)
                                            * np.sqrt(np.linalg.det(np.asarray(p["tensor"], dtype=float)))))
    print(f"{'eps':>8s} {'x':>20s} {'T_eps':>34s} {'T_limit':>34s} {'closed_form':>34s} {'frob_err':>10s}")
    for eps in cfg.eps_list:
        graph, _ = cfg.build(eps)
        for i in _sample_indices(graph.nodes, cfg.box):
            x = graph.nodes[i]
            te = tensor_eps(graph, i)
            tl = limit(x)
            cf = closed * base(x)[0] if closed is not None else None
            err = np.linalg.norm(te - tl)
            fmt = lambda m: np.array2string(np.asarray(m).ravel(), precision=6, separator=",")
            print(f"{eps:8.4g} {fmt(x):>20s} {fmt(te):>34s} {fmt(tl):>34s} "
                  f"{(fmt(cf) if cf is not None else '-'):>34s} {err:10.3e}")
    return 0


def cmd_simulate(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    out = _out_dir(args, cfg)
    kernel, policy = cfg.kernel_spec(), cfg.dt_policy()
    snaps = [s for s in cfg.snapshots if 0 < s < cfg.t_end]
    if args.local:
        state = cfg.local_state()
        traj = solve_nlie_local(state, kernel, cfg.t_end, policy, checkpoints=snaps, stride=args.stride)
        path = write_trajectory(traj, out / "trajectory_local.csv", cfg.raw)
    else:
        eps = args.eps if args.eps is not None else cfg.eps_list[0]
        graph, rho0 = cfg.build(eps)
        traj = solve_nl2ie(rho0, graph, kernel, cfg.t_end, policy, checkpoints=snaps, stride=args.stride)
        path = write_trajectory(traj, out / f"trajectory_eps{eps:g}.csv", cfg.raw)
    print(f"wrote {path} ({len(traj.times)} states)")
    return 0


def cmd_converge(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    cfg.out_dir = str(_out_dir(args, cfg))
    report = run_convergence_sweep(cfg)
    for row in report.rows:
        errs = " ".join(f"t={float(t):g}:{e:.4e}" for t, e in row["errors"].items())
        print(f"eps={row['eps']:<8g} h={row['h']:<10g} {errs} de_giorgi={row['de_giorgi']:.3e}")
    for k, v in report.checks.items():
        print(f"{k}: {'PASS' if v else 'FAIL'}")
    print(f"wrote {Path(cfg.out_dir) / 'report.json'}")
    return 0


def cmd_dissipation(args) -> int:
    """Ledger for a graph trajectory; fluxes are recomputed from the stored states."""
    cfg = ExperimentConfig.load(args.config)
    traj = read_trajectory(args.trajectory)
    eps = traj.meta.get("eps", cfg.eps_list[0])
    if eps == "local":
        raise ConfigError("dissipation ledgers are only defined for graph trajectories")
    graph, _ = cfg.build(float(eps))
    if len(traj.positions) != graph.n_nodes or not np.allclose(traj.positions, graph.nodes):
        raise ConfigError("trajectory nodes do not match the graph built from the config")
    kernel = cfg.kernel_spec()
    stepper = GraphStepper(graph, kernel)
    traj.fluxes = [upwind_flux(s, graph, stepper.velocity(s)) for s in traj.states[:-1]]
    led = dissipation_ledger(traj, kernel, graph)
    path = led.write_csv(Path(args.out or Path(args.trajectory).parent) / "ledger.csv")
    print(f"wrote {path}; de_giorgi={led.de_giorgi:.6e}")
    return 0


def cmd_validate(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    report = validate_assumptions(cfg.connectivity_spec(), cfg.base_spec())
    for line in report.lines():
        print(line)
    print("all assumptions pass" if report.passed else "some assumptions fail")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="graphlimit", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", required=True, help="JSON experiment config")
        sp.add_argument("--out", help="output directory")
        sp.set_defaults(func=fn)
        return sp

    add("tensor", cmd_tensor, "compare T^eps, the limit tensor and closed forms")
    sp = add("simulate", cmd_simulate, "run one graph or local simulation")
    sp.add_argument("--eps", type=float, help="scale for a graph run (default: first in eps_list)")
    sp.add_argument("--local", action="store_true", help="run the local reference solver instead")
    sp.add_argument("--stride", type=int, default=1, help="record every n-th step")
    add("converge", cmd_converge, "full eps sweep against the local solver")
    sp = add("dissipation", cmd_dissipation, "dissipation ledger for a trajectory CSV")
    sp.add_argument("--trajectory", required=True)
    add("validate", cmd_validate, "empirical assumption report")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except (ConfigError, InvalidArgument, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except PreconditionError as exc:
        print(f"numerical precondition failed: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
