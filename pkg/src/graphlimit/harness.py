"""Experiment orchestration: configs, epsilon sweeps and error metrics."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .calculus import InteractionKernel, NodeMeasure
from .dynamics import (DtPolicy, LocalGrid, LocalState, solve_nl2ie, solve_nlie_local,
                       write_trajectory)
from .energetics import _quantile_w2_sq, de_giorgi_local, dissipation_ledger, interaction_energy
from .errors import ConfigError, InvalidArgument, PreconditionError
from .geometry import BaseMeasureSpec, ConnectivitySpec, TensorField, build_graph, second_moment

log = logging.getLogger(__name__)

REQUIRED_KEYS = ("dimension", "box", "h", "eps_list", "connectivity", "base_density", "kernel", "t_end")


def lattice_nodes(box: np.ndarray, h: float) -> np.ndarray:
    """Points ``lower + h k`` covering the closed box."""
    axes = []
    for lo, hi in box:
        n = int(math.floor((hi - lo) / h + 1e-9))
        axes.append(lo + h * np.arange(n + 1))
    return np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)


def riemann_counting_measure(base: BaseMeasureSpec, level: int, box):
    """Midpoint-rule measure on the dyadic lattice (Z^d / 2^n) within a half-open box.

    Returns ``(nodes, NodeMeasure)`` with weights ``mu(x) 2^{-dn}``.
    """
    if level < 0:
        raise InvalidArgument("level must be nonnegative")
    box = np.atleast_2d(np.asarray(box, dtype=float))
    step = 2.0 ** -level
    axes = []
    for lo, hi in box:
        k0, k1 = math.ceil(lo / step), math.ceil(hi / step)
        axes.append(step * np.arange(k0, k1))
    if any(len(a) == 0 for a in axes):
        raise InvalidArgument("box contains no lattice points at this level")
    nodes = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)
    d = box.shape[0]
    return nodes, NodeMeasure(base(nodes) * step**d)


def _connectivity(cfg: dict, d: int) -> ConnectivitySpec:
    kind = cfg.get("id", "ball")
    p = {k: v for k, v in cfg.items() if k != "id"}
    try:
        if kind == "ball":
            return ConnectivitySpec.ball(d, p.get("radius", 1.0), p.get("value", 1.0))
        if kind == "annulus":
            return ConnectivitySpec.annulus(d, p["inner"], p["outer"], p.get("value", 1.0))
        if kind == "anisotropic":
            return ConnectivitySpec.anisotropic(d, np.asarray(p["tensor"], dtype=float), p.get("radius", 1.0),
                                                p.get("normalization"))
    except KeyError as exc:
        raise ConfigError(f"connectivity {kind!r} is missing parameter {exc}") from None
    raise ConfigError(f"unknown connectivity id {kind!r}")


def _base_density(cfg: dict) -> BaseMeasureSpec:
    kind = cfg.get("id", "uniform")
    if kind == "uniform":
        return BaseMeasureSpec.uniform(cfg.get("value", 1.0))
    if kind == "sinusoidal":
        return BaseMeasureSpec.sinusoidal(cfg.get("amplitude", 0.4), cfg.get("offset", 1.0))
    raise ConfigError(f"unknown base density id {kind!r}")


def _kernel(cfg: dict) -> InteractionKernel:
    kind = cfg.get("id", "quadratic")
    if kind == "quadratic":
        return InteractionKernel.quadratic()
    if kind == "gaussian":
        return InteractionKernel.gaussian(cfg.get("width", 1.0))
    if kind == "zero":
        return InteractionKernel.zero()
    raise ConfigError(f"unknown kernel id {kind!r}")


def initial_density(cfg: dict, points: np.ndarray) -> np.ndarray:
    """Unnormalized initial weights at ``points``.

    ``uniform``: 1 everywhere.  ``interval``: ``1 + slope x_1`` on the box
    ``[lower, upper]^d`` (closed, with a 1e-12 margin), 0 outside.
    ``gaussian``: ``exp(-|x - center|^2 / (2 width^2))`` truncated at
    ``cutoff`` widths.
    """
    kind = cfg.get("id", "uniform")
    if kind == "uniform":
        return np.ones(len(points))
    if kind == "interval":
        lo, hi, slope = cfg.get("lower", -1.0), cfg.get("upper", 1.0), cfg.get("slope", 0.0)
        inside = np.all((points >= lo - 1e-12) & (points <= hi + 1e-12), axis=1)
        return np.where(inside, 1.0 + slope * points[:, 0], 0.0)
    if kind == "gaussian":
        c = np.asarray(cfg.get("center", 0.0), dtype=float)
        w = cfg.get("width", 0.5)
        r2 = np.sum((points - c) ** 2, axis=1)
        return np.where(r2 <= (cfg.get("cutoff", 2.0) * w) ** 2, np.exp(-r2 / (2 * w * w)), 0.0)
    raise ConfigError(f"unknown initial density id {kind!r}")


@dataclass
class ExperimentConfig:
    """Validated experiment description; see :meth:`from_dict` for keys."""

    dimension: int
    box: np.ndarray
    h: float
    eps_list: list
    connectivity: dict
    base_density: dict
    kernel: dict
    t_end: float
    dt: dict = field(default_factory=lambda: {"policy": "adaptive", "safety": 0.5, "dt_max": 0.01})
    snapshots: list | None = None
    out_dir: str | None = None
    seed: int = 0
    initial: dict = field(default_factory=lambda: {"id": "uniform"})
    eps_to_h: float | None = None
    local_h: float | None = None
    quadrature: int = 400
    raw: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, cfg: dict) -> "ExperimentConfig":
        missing = [k for k in REQUIRED_KEYS if k not in cfg]
        if missing:
            raise ConfigError(f"config is missing keys: {', '.join(missing)}")
        d = int(cfg["dimension"])
        box = np.asarray(cfg["box"], dtype=float).reshape(-1, 2)
        if box.shape[0] != d or np.any(box[:, 1] <= box[:, 0]):
            raise ConfigError("box must list one [lower, upper] pair per dimension")
        eps = [float(e) for e in np.atleast_1d(cfg["eps_list"])]
        if any(e <= 0 for e in eps) or any(b >= a for a, b in zip(eps, eps[1:])):
            raise ConfigError("eps_list must be positive and strictly decreasing")
        ratio = cfg.get("eps_to_h")
        h = float(cfg["h"])
        if ratio is not None:
            if ratio < 4:
                raise ConfigError("eps_to_h must be at least 4")
        elif h > min(eps) / 4 * (1 + 1e-12):
            raise ConfigError(f"h={h} must not exceed min(eps)/4={min(eps) / 4}")
        t_end = float(cfg["t_end"])
        if t_end < 0:
            raise ConfigError("t_end must be nonnegative")
        snaps = cfg.get("snapshots")
        if snaps is None:
            snaps = [t_end / 4, t_end / 2, t_end] if t_end > 0 else [0.0]
        known = set(REQUIRED_KEYS) | {"dt", "snapshots", "out_dir", "seed", "initial", "eps_to_h",
                                      "local_h", "quadrature"}
        unknown = set(cfg) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        out = cls(d, box, h, eps, dict(cfg["connectivity"]), dict(cfg["base_density"]),
                  dict(cfg["kernel"]), t_end, dict(cfg.get("dt", cls.__dataclass_fields__["dt"].default_factory())),
                  [float(s) for s in snaps], cfg.get("out_dir"), int(cfg.get("seed", 0)),
                  dict(cfg.get("initial", {"id": "uniform"})), ratio, cfg.get("local_h"),
                  int(cfg.get("quadrature", 400)), dict(cfg))
        # surface unknown ids and bad parameters at load time
        try:
            out.connectivity_spec()
            out.base_spec()
            out.kernel_spec()
            initial_density(out.initial, box[:, 0][None, :])
        except InvalidArgument as exc:
            raise ConfigError(str(exc)) from None
        out.dt_policy()
        return out

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be an object")
        return cls.from_dict(data)

    def spacing(self, eps: float) -> float:
        return eps / self.eps_to_h if self.eps_to_h else self.h

    def connectivity_spec(self) -> ConnectivitySpec:
        return _connectivity(self.connectivity, self.dimension)

    def base_spec(self) -> BaseMeasureSpec:
        return _base_density(self.base_density)

    def kernel_spec(self) -> InteractionKernel:
        return _kernel(self.kernel)

    def dt_policy(self) -> DtPolicy:
        dt = self.dt
        try:
            if dt.get("policy", "adaptive") == "fixed":
                return DtPolicy.fixed(float(dt["dt"]))
            return DtPolicy.adaptive(float(dt.get("safety", 0.5)), float(dt.get("dt_max", 0.01)))
        except (KeyError, InvalidArgument) as exc:
            raise ConfigError(f"invalid dt policy: {exc}") from None

    def build(self, eps: float):
        """Graph and initial measure at scale ``eps``."""
        h = self.spacing(eps)
        nodes = lattice_nodes(self.box, h)
        graph = build_graph(nodes, self.base_spec(), self.connectivity_spec(), eps, h**self.dimension)
        w = initial_density(self.initial, nodes) * (graph.mu > 0)
        if w.sum() <= 0:
            raise ConfigError("initial density vanishes on every node")
        return graph, NodeMeasure(w / w.sum())

    def limit_tensor(self) -> TensorField:
        return limit_tensor_field(self.connectivity_spec(), self.base_spec(), self.quadrature)

    def local_state(self) -> LocalState:
        h = self.local_h or min(self.spacing(e) for e in self.eps_list) / 4
        grid = LocalGrid.covering(self.box[:, 0], self.box[:, 1], h)
        w = initial_density(self.initial, grid.centers)
        if w.sum() <= 0:
            raise ConfigError("initial density vanishes on every cell")
        return LocalState(grid, NodeMeasure(w / w.sum()), self.limit_tensor())


def limit_tensor_field(spec: ConnectivitySpec, base: BaseMeasureSpec, resolution: int = 400) -> TensorField:
    """Limit tensor field, reusing one quadrature when theta ignores its first argument."""
    if spec.kind in ("ball", "annulus"):
        M = 0.5 * second_moment(spec, np.zeros(spec.dim), resolution)
        if base.name == "uniform":
            return TensorField("limit_tensor", spec.dim,
                               lambda x: base(x)[:, None, None] * M, base.lower_bound * M)
        return TensorField("limit_tensor", spec.dim, lambda x: base(x)[:, None, None] * M)
    return TensorField.limit(spec, base, resolution)


def _bl_dictionary(lo: np.ndarray, hi: np.ndarray, n: int = 41):
    """1-Lipschitz test functions bounded by 1: ramps along each axis and tents."""
    fns = []
    d = len(lo)
    for k in range(d):
        for s in np.linspace(lo[k] - 1, hi[k] + 1, n):
            fns.append(lambda x, k=k, s=s: np.clip(x[:, k] - s, -1.0, 1.0))
    centers = np.stack([g.ravel() for g in np.meshgrid(
        *[np.linspace(lo[k], hi[k], max(2, int(round(n ** (1 / d))))) for k in range(d)], indexing="ij")], axis=1)
    for c in centers:
        fns.append(lambda x, c=c: np.maximum(0.0, 1.0 - np.linalg.norm(x - c, axis=1)))
    return fns


def error_metric(a: NodeMeasure, xa, b: NodeMeasure, xb, kind: str = "quantile_w2",
                 bandwidth: float | None = None) -> float:
    """Distance between two discrete measures on their own point sets.

    ``quantile_w2`` (d = 1 only) is the exact 1D 2-Wasserstein distance.
    ``smoothed_L1`` compares Gaussian-smoothed densities on a common grid.
    ``bounded_lipschitz`` maximizes ``|int f d(a - b)|`` over a fixed
    dictionary of 1-Lipschitz functions bounded by 1.
    """
    xa = np.asarray(xa, dtype=float).reshape(len(a), -1)
    xb = np.asarray(xb, dtype=float).reshape(len(b), -1)
    if xa.shape[1] != xb.shape[1]:
        raise InvalidArgument("measures live in different dimensions")
    d = xa.shape[1]
    if kind == "quantile_w2":
        if d != 1:
            raise InvalidArgument("quantile_w2 requires d = 1")
        if abs(a.total - b.total) > 1e-10 * max(a.total, 1.0):
            raise InvalidArgument("quantile_w2 requires equal masses")
        return math.sqrt(max(_quantile_w2_sq(xa[:, 0], a.masses, xb[:, 0], b.masses), 0.0))
    pts = np.vstack([xa, xb])
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    if kind == "smoothed_L1":
        if bandwidth is None or bandwidth <= 0:
            raise InvalidArgument("smoothed_L1 needs a positive bandwidth")
        step = bandwidth / 2
        axes = [np.arange(lo[k] - 4 * bandwidth, hi[k] + 4 * bandwidth + step, step) for k in range(d)]
        grid = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)
        norm = (2 * math.pi * bandwidth**2) ** (-d / 2)

        def smooth(x, m):
            out = np.zeros(len(grid))
            for s in range(0, len(x), 256):
                r2 = ((grid[:, None, :] - x[None, s:s + 256, :]) ** 2).sum(axis=2)
                out += np.exp(-r2 / (2 * bandwidth**2)) @ m[s:s + 256]
            return norm * out
        return float(np.abs(smooth(xa, a.masses) - smooth(xb, b.masses)).sum() * step**d)
    if kind == "bounded_lipschitz":
        return float(max(abs(f(xa) @ a.masses - f(xb) @ b.masses) for f in _bl_dictionary(lo, hi)))
    raise InvalidArgument(f"unknown error metric {kind!r}")


@dataclass
class ConvergenceReport:
    rows: list
    observed_order: dict
    local: dict
    checks: dict

    def to_dict(self) -> dict:
        return {"rows": self.rows, "observed_order": self.observed_order, "local": self.local,
                "checks": self.checks}

    def errors(self) -> np.ndarray:
        """Error table, one row per eps (descending) and one column per snapshot."""
        return np.array([[r["errors"][k] for k in sorted(r["errors"], key=float)] for r in self.rows])


def _fmt_eps(eps: float) -> str:
    return f"{eps:g}".replace(".", "p")


def run_convergence_sweep(config: ExperimentConfig, write: bool = True) -> ConvergenceReport:
    """Graph run per eps, one local reference run, errors at every snapshot time."""
    kernel = config.kernel_spec()
    policy = config.dt_policy()
    snaps = [s for s in config.snapshots if s > 0] if config.t_end > 0 else []
    out = Path(config.out_dir) if (write and config.out_dir) else None

    local0 = config.local_state()
    local = solve_nlie_local(local0, kernel, config.t_end, policy, checkpoints=snaps, store_fluxes=True)
    xl = local.positions
    local_info = {"h": local0.grid.h, "n_cells": local0.grid.n_cells, "steps": len(local.times) - 1,
                  "de_giorgi": de_giorgi_local(local, kernel, local0.tensor)}
    if out:
        write_trajectory(local, out / "trajectory_local.csv", config.raw)
    # drop per-step fluxes once used
    local.fluxes = None

    kind = "quantile_w2" if config.dimension == 1 else "smoothed_L1"
    times = snaps if snaps else [0.0]
    rows = []
    for eps in config.eps_list:
        graph, rho0 = config.build(eps)
        try:
            traj = solve_nl2ie(rho0, graph, kernel, config.t_end, policy, checkpoints=snaps,
                               store_fluxes=True)
        except PreconditionError as exc:
            raise PreconditionError(f"eps={eps}: {exc}") from exc
        led = dissipation_ledger(traj, kernel, graph) if len(traj.times) > 1 else None
        kmat = kernel.matrix(graph.nodes)
        energies = np.array([interaction_energy(kernel, s, graph, kmat) for s in traj.states])
        dts = np.diff(traj.times)
        scale = max(1.0, float(np.abs(energies).max()))
        monotone = bool(np.all(np.diff(energies) <= 10 * dts**2 * scale))
        errors = {}
        for t in times:
            bw = 2 * config.spacing(eps)
            errors[repr(t)] = error_metric(traj.state_at(t), graph.nodes, local.state_at(t), xl, kind,
                                           bandwidth=bw)
        row = {
            "eps": eps,
            "h": config.spacing(eps),
            "n_nodes": graph.n_nodes,
            "steps": len(traj.times) - 1,
            "errors": errors,
            "energy_times": [float(t) for t in traj.times[::max(1, len(traj.times) // 200)]],
            "energy": [float(e) for e in energies[::max(1, len(traj.times) // 200)]],
            "energy_monotone": monotone,
            "mass_drift": float(max(abs(s.total - rho0.total) for s in traj.states)),
            "min_mass": float(min(s.masses.min() for s in traj.states)),
            "de_giorgi": led.de_giorgi if led else 0.0,
            "max_legendre_gap": float(max(led.legendre_gap)) if led else 0.0,
        }
        rows.append(row)
        log.info("eps=%g done: %s", eps, errors)
        if out:
            tag = _fmt_eps(eps)
            traj.fluxes = None
            write_trajectory(traj, out / f"trajectory_eps{tag}.csv", config.raw)
            if led:
                led.write_csv(out / f"ledger_eps{tag}.csv")

    order = {}
    for r1, r2 in zip(rows, rows[1:]):
        key = f"{r1['eps']:g}->{r2['eps']:g}"
        order[key] = {t: (math.log(r1["errors"][t] / r2["errors"][t]) / math.log(r1["eps"] / r2["eps"])
                          if r1["errors"][t] > 0 and r2["errors"][t] > 0 else None) for t in r1["errors"]}
    checks = {
        "errors_strictly_decreasing": all(
            all(r1["errors"][t] > r2["errors"][t] for t in r1["errors"]) for r1, r2 in zip(rows, rows[1:])),
        "energy_monotone": all(r["energy_monotone"] for r in rows),
    }
    report = ConvergenceReport(rows, order, local_info, checks)
    if out:
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(json.dumps(report.to_dict(), indent=2))
    return report
