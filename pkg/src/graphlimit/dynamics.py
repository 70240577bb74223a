"""Explicit upwind time stepping for the graph equation and the local PDE.

Both solvers are forward Euler with upwind fluxes.  The graph step moves
mass along edges with the upwind flux of the nonlocal velocity; the local
step is a donor-cell finite-volume scheme with face velocities
``-(T g) . n`` where ``g`` is the exact gradient of ``K * rho + P`` at the
face center.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .calculus import (EdgeField, InteractionKernel, NodeMeasure, nonlocal_divergence,
                       upwind_flux, velocity_field)
from .errors import InvalidArgument, PreconditionError
from .geometry import EpsGraph, TensorField

MASS_RTOL = 1e-10


@dataclass(frozen=True)
class DtPolicy:
    """``fixed`` uses ``value`` as the step; ``adaptive`` uses it as CFL safety."""

    kind: str = "adaptive"
    value: float = 0.5
    dt_max: float = 0.1

    def __post_init__(self):
        if self.kind not in ("fixed", "adaptive"):
            raise InvalidArgument(f"unknown dt policy {self.kind!r}")
        if self.value <= 0 or (self.kind == "adaptive" and self.value > 1):
            raise InvalidArgument("dt value must be positive (safety in (0, 1])")
        if self.dt_max <= 0:
            raise InvalidArgument("dt_max must be positive")

    @classmethod
    def fixed(cls, dt: float) -> "DtPolicy":
        return cls("fixed", dt, dt)

    @classmethod
    def adaptive(cls, safety: float = 0.5, dt_max: float = 0.1) -> "DtPolicy":
        return cls("adaptive", safety, dt_max)


@dataclass
class Trajectory:
    """Recorded states of a run.

    ``fluxes[k]`` is the flux used on ``[times[k], times[k+1]]``; it is an
    :class:`EdgeField` for graph runs and an ``(N, d)`` array of cell mass
    fluxes for local runs.  Fluxes are only kept when every step is recorded.
    """

    times: np.ndarray
    states: list
    positions: np.ndarray
    fluxes: list | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if len(self.times) != len(self.states):
            raise InvalidArgument("times and states differ in length")
        if np.any(np.diff(self.times) <= 0):
            raise InvalidArgument("times must be strictly increasing")

    @property
    def masses(self) -> np.ndarray:
        return np.array([s.masses for s in self.states])

    def state_at(self, t: float, atol: float = 1e-12) -> NodeMeasure:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > atol * max(1.0, abs(t)):
            raise InvalidArgument(f"no recorded state at t={t}")
        return self.states[k]

    def reversed(self) -> "Trajectory":
        """Same states run backwards in time; fluxes are negated and shifted."""
        T = self.times[-1] + self.times[0]
        fl = None
        if self.fluxes is not None:
            fl = [f * -1.0 if isinstance(f, EdgeField) else -f for f in self.fluxes[::-1]]
        return Trajectory(T - self.times[::-1], self.states[::-1], self.positions, fl, dict(self.meta))


def _check_probability(rho: NodeMeasure, n: int) -> None:
    if len(rho) != n:
        raise InvalidArgument(f"measure has {len(rho)} entries, expected {n}")
    if abs(rho.total - 1.0) > MASS_RTOL:
        raise InvalidArgument(f"initial measure must have mass 1, got {rho.total!r}")


def outflow_rates(graph: EpsGraph, v: EdgeField) -> np.ndarray:
    """sum_j eta_ij (v_ij)_+ mu_j per node."""
    rate = graph.eta * np.maximum(v.values, 0.0) * graph.mu[graph.dst]
    return np.bincount(graph.src, weights=rate, minlength=graph.n_nodes)


def cfl_dt(rho: NodeMeasure, graph: EpsGraph, v: EdgeField, safety: float = 0.5,
           dt_max: float = math.inf) -> float:
    """safety / max_i sum_j eta_ij (v_ij)_+ mu_j, or ``dt_max`` when v = 0."""
    if not 0 < safety <= 1:
        raise InvalidArgument("safety must lie in (0, 1]")
    rates = outflow_rates(graph, v)
    peak = rates.max() if len(rates) else 0.0
    if peak <= 0:
        return dt_max
    return min(safety / peak, dt_max)


class GraphStepper:
    """Caches the kernel matrix on the fixed node set."""

    def __init__(self, graph: EpsGraph, kernel: InteractionKernel):
        self.graph = graph
        self.kernel = kernel
        self.kmat = kernel.matrix(graph.nodes)

    def velocity(self, rho: NodeMeasure) -> EdgeField:
        return velocity_field(self.kernel, rho, self.graph, self.kmat)

    def step(self, rho: NodeMeasure, dt: float, v: EdgeField | None = None):
        graph = self.graph
        v = self.velocity(rho) if v is None else v
        rates = outflow_rates(graph, v)
        worst = int(np.argmax(rates)) if len(rates) else 0
        if len(rates) and dt * rates[worst] > 1.0 + 1e-12:
            raise PreconditionError(
                f"dt={dt:.6g} exceeds the CFL bound {1.0 / rates[worst]:.6g} at node {worst}")
        j = upwind_flux(rho, graph, v)
        m = rho.masses - dt * nonlocal_divergence(j, graph)
        # roundoff can leave -1e-17 on a node drained exactly to zero
        m = np.where((m < 0) & (m > -1e-14), 0.0, m)
        return NodeMeasure(m), j


def step_nl2ie(rho: NodeMeasure, graph: EpsGraph, kernel: InteractionKernel, dt: float):
    """One explicit upwind step; returns the new measure and the flux used."""
    return GraphStepper(graph, kernel).step(rho, dt)


def _advance(rho0, t_end, policy, checkpoints, stride, store_fluxes, step_fn, cfl_fn):
    if t_end < 0:
        raise InvalidArgument("t_end must be nonnegative")
    if store_fluxes and stride != 1:
        raise InvalidArgument("storing fluxes requires snapshot stride 1")
    marks = sorted({float(c) for c in (checkpoints or []) if 0 < c < t_end} | {float(t_end)})
    times, states, fluxes = [0.0], [rho0], [] if store_fluxes else None
    t, rho, k, nm = 0.0, rho0, 0, 0
    while t_end > 0 and t < t_end * (1 - 1e-14):
        dt = policy.value if policy.kind == "fixed" else cfl_fn(rho, policy.value, policy.dt_max)
        target = marks[nm]
        hit = t + dt >= target * (1 - 1e-12)
        if hit:
            dt = target - t
        rho, flux = step_fn(rho, dt)
        k += 1
        t = target if hit else t + dt
        if hit:
            nm += 1
        if store_fluxes:
            fluxes.append(flux)
        if hit or k % stride == 0:
            times.append(t)
            states.append(rho)
    return times, states, fluxes


def solve_nl2ie(rho0: NodeMeasure, graph: EpsGraph, kernel: InteractionKernel, t_end: float,
                dt_policy: DtPolicy | None = None, checkpoints=None, stride: int = 1,
                store_fluxes: bool = False) -> Trajectory:
    """Integrate the graph equation on ``[0, t_end]``.

    Steps are shortened to land exactly on each time in ``checkpoints``,
    which are always recorded in addition to every ``stride``-th step.
    """
    _check_probability(rho0, graph.n_nodes)
    if np.any((rho0.masses > 0) & (graph.mu <= 0)):
        raise InvalidArgument("initial mass sits on nodes with zero base weight")
    policy = dt_policy or DtPolicy.adaptive()
    stepper = GraphStepper(graph, kernel)

    def cfl(rho, safety, dt_max):
        return cfl_dt(rho, graph, stepper.velocity(rho), safety, dt_max)

    times, states, fluxes = _advance(rho0, t_end, policy, checkpoints, stride, store_fluxes,
                                     stepper.step, cfl)
    meta = {"eps": graph.eps, "dt_policy": [policy.kind, policy.value, policy.dt_max],
            "kernel": kernel.kind, "n_nodes": graph.n_nodes, "dim": graph.dim}
    return Trajectory(np.array(times), states, graph.nodes, fluxes, meta)


@dataclass(frozen=True)
class LocalGrid:
    """Uniform cell grid: ``shape[a]`` cells of width ``h`` from ``lower[a]``."""

    lower: np.ndarray
    h: float
    shape: tuple

    def __post_init__(self):
        object.__setattr__(self, "lower", np.atleast_1d(np.asarray(self.lower, dtype=float)))
        object.__setattr__(self, "shape", tuple(int(s) for s in np.atleast_1d(self.shape)))
        if self.h <= 0 or min(self.shape) < 1 or len(self.shape) != len(self.lower):
            raise InvalidArgument("invalid local grid")

    @classmethod
    def covering(cls, lower, upper, h: float) -> "LocalGrid":
        lower = np.atleast_1d(np.asarray(lower, dtype=float))
        upper = np.atleast_1d(np.asarray(upper, dtype=float))
        shape = np.round((upper - lower) / h).astype(int)
        return cls(lower, h, tuple(shape))

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.shape))

    @property
    def upper(self) -> np.ndarray:
        return self.lower + self.h * np.array(self.shape)

    @property
    def centers(self) -> np.ndarray:
        axes = [self.lower[a] + self.h * (np.arange(n) + 0.5) for a, n in enumerate(self.shape)]
        grids = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)

    def faces(self, axis: int):
        """Interior faces normal to ``axis``: (left cell, right cell, face centers)."""
        idx = np.arange(self.n_cells).reshape(self.shape)
        lo = [slice(None)] * self.dim
        hi = [slice(None)] * self.dim
        lo[axis] = slice(0, -1)
        hi[axis] = slice(1, None)
        left = idx[tuple(lo)].ravel()
        right = idx[tuple(hi)].ravel()
        c = self.centers
        return left, right, 0.5 * (c[left] + c[right])


@dataclass(frozen=True)
class LocalState:
    grid: LocalGrid
    density: NodeMeasure
    tensor: TensorField


def kernel_gradient(kernel: InteractionKernel, points: np.ndarray, sources: np.ndarray,
                    masses: np.ndarray, chunk: int = 2048) -> np.ndarray:
    """sum_k grad_x K(x, y_k) m_k + grad P(x) at each point, by direct summation."""
    out = np.zeros_like(points)
    for s in range(0, len(points), chunk):
        p = points[s:s + chunk]
        out[s:s + chunk] = np.einsum("nmd,m->nd", kernel.grad(p, sources), masses)
    return out + kernel.potential_gradient(points)


class LocalStepper:
    """Donor-cell finite volumes with precomputed face geometry and tensors."""

    def __init__(self, grid: LocalGrid, tensor: TensorField, kernel: InteractionKernel):
        self.grid = grid
        self.kernel = kernel
        self.tensor = tensor
        self.centers = grid.centers
        self.axes = []
        for a in range(grid.dim):
            left, right, xf = grid.faces(a)
            row = tensor(xf)[:, a, :] if len(xf) else np.zeros((0, grid.dim))
            self.axes.append((left, right, xf, row))
        self.face_points = np.concatenate([ax[2] for ax in self.axes]) if grid.dim else None
        self.cell_tensor = tensor(self.centers)
        n_face = len(self.face_points)
        # cache the kernel gradient matrix when it is small enough
        self.face_grad = None
        if n_face * grid.n_cells * grid.dim <= 2e7:
            self.face_grad = kernel.grad(self.face_points, self.centers)

    def face_speeds(self, masses: np.ndarray) -> list:
        if self.face_grad is not None:
            g = np.einsum("nmd,m->nd", self.face_grad, masses) + self.kernel.potential_gradient(self.face_points)
        else:
            g = kernel_gradient(self.kernel, self.face_points, self.centers, masses)
        out, s = [], 0
        for left, right, xf, row in self.axes:
            n = len(xf)
            out.append(-np.einsum("nd,nd->n", row, g[s:s + n]))
            s += n
        return out

    def cfl_dt(self, masses: np.ndarray, safety: float = 0.5, dt_max: float = math.inf) -> float:
        """safety * h / max over cells of the summed outflow face speeds."""
        out = self._outflow(self.face_speeds(masses))
        peak = out.max() if len(out) else 0.0
        return dt_max if peak <= 0 else min(safety * self.grid.h / peak, dt_max)

    def _outflow(self, speeds) -> np.ndarray:
        out = np.zeros(self.grid.n_cells)
        for (left, right, _, _), u in zip(self.axes, speeds):
            out += np.bincount(left, weights=np.maximum(u, 0.0), minlength=self.grid.n_cells)
            out += np.bincount(right, weights=np.maximum(-u, 0.0), minlength=self.grid.n_cells)
        return out

    def cell_flux(self, masses: np.ndarray) -> np.ndarray:
        """Kinetic-relation mass flux -m_i T(x_i) g(x_i) per cell."""
        g = kernel_gradient(self.kernel, self.centers, self.centers, masses)
        return -masses[:, None] * np.einsum("nij,nj->ni", self.cell_tensor, g)

    def step(self, rho: NodeMeasure, dt: float, store_flux: bool = True):
        m = rho.masses
        speeds = self.face_speeds(m)
        out = self._outflow(speeds)
        worst = int(np.argmax(out))
        if dt * out[worst] > self.grid.h * (1 + 1e-12):
            raise PreconditionError(
                f"dt={dt:.6g} exceeds the local CFL bound {self.grid.h / out[worst]:.6g} at cell {worst}")
        dm = np.zeros_like(m)
        for (left, right, _, _), u in zip(self.axes, speeds):
            donor = np.where(u > 0, m[left], m[right])
            F = u * donor / self.grid.h
            dm -= np.bincount(left, weights=F, minlength=len(m))
            dm += np.bincount(right, weights=F, minlength=len(m))
        new = m + dt * dm
        new = np.where((new < 0) & (new > -1e-14), 0.0, new)
        flux = self.cell_flux(m) if store_flux else None
        return NodeMeasure(new), flux


def step_local(state: LocalState, kernel: InteractionKernel, dt: float) -> LocalState:
    stepper = LocalStepper(state.grid, state.tensor, kernel)
    rho, _ = stepper.step(state.density, dt, store_flux=False)
    return LocalState(state.grid, rho, state.tensor)


def solve_nlie_local(rho0: LocalState, kernel: InteractionKernel, t_end: float,
                     dt_policy: DtPolicy | None = None, checkpoints=None, stride: int = 1,
                     store_fluxes: bool = False) -> Trajectory:
    """Reference solver for the tensor-mobility interaction equation."""
    grid = rho0.grid
    _check_probability(rho0.density, grid.n_cells)
    policy = dt_policy or DtPolicy.adaptive()
    stepper = LocalStepper(grid, rho0.tensor, kernel)

    def cfl(rho, safety, dt_max):
        return stepper.cfl_dt(rho.masses, safety, dt_max)

    def step(rho, dt):
        return stepper.step(rho, dt, store_flux=store_fluxes)

    times, states, fluxes = _advance(rho0.density, t_end, policy, checkpoints, stride,
                                     store_fluxes, step, cfl)
    meta = {"eps": "local", "dt_policy": [policy.kind, policy.value, policy.dt_max],
            "kernel": kernel.kind, "grid": {"lower": grid.lower.tolist(), "h": grid.h,
                                            "shape": list(grid.shape)}, "dim": grid.dim}
    return Trajectory(np.array(times), states, stepper.centers, fluxes, meta)


def config_hash(config) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha1(blob).hexdigest()[:12]


def write_trajectory(traj: Trajectory, path, config=None) -> Path:
    """CSV with ``t, node_or_cell_id, x1..xd, mass`` and a ``.json`` sidecar."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pos = traj.positions
    d = pos.shape[1]
    n = len(pos)
    blocks = []
    for t, s in zip(traj.times, traj.states):
        blocks.append(np.column_stack([np.full(n, t), np.arange(n), pos, s.masses]))
    data = np.vstack(blocks)
    header = ",".join(["t", "node_or_cell_id"] + [f"x{k + 1}" for k in range(d)] + ["mass"])
    fmt = ["%.17g", "%d"] + ["%.17g"] * (d + 1)
    np.savetxt(path, data, delimiter=",", header=header, comments="", fmt=fmt)
    meta = dict(traj.meta)
    steps = np.diff(traj.times)
    meta["dt"] = {"min": float(steps.min()), "max": float(steps.max())} if len(steps) else None
    meta["config_hash"] = config_hash(config if config is not None else traj.meta)
    path.with_suffix(".json").write_text(json.dumps(meta, indent=2, default=str))
    return path


def read_trajectory(path) -> Trajectory:
    """Inverse of :func:`write_trajectory` (fluxes are not stored in the CSV)."""
    path = Path(path)
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    meta_path = path.with_suffix(".json")
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    times = np.unique(data[:, 0])
    n = int(data[:, 1].max()) + 1
    pos = data[:n, 2:-1]
    states = [NodeMeasure(data[data[:, 0] == t][:, -1]) for t in times]
    return Trajectory(times, states, pos, None, meta)
