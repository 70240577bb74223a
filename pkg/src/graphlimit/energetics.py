"""Energy, action, dissipation potentials, slopes and De Giorgi functionals.

Infinity is represented by ``math.inf``; any sum containing it is infinite.
The primal dissipation ``R`` equals half the action.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import linprog

from .calculus import (EdgeField, InteractionKernel, NodeMeasure, convolve, nonlocal_gradient,
                       velocity_field)
from .dynamics import Trajectory, kernel_gradient
from .errors import InvalidArgument, UnsupportedSize
from .geometry import EpsGraph, TensorField, dT_distance

INF = math.inf
MAX_ATOMS = 64


def interaction_energy(kernel: InteractionKernel, rho: NodeMeasure, positions,
                       kmat: np.ndarray | None = None) -> float:
    """1/2 sum_ik K(x_i, x_k) m_i m_k + sum_i P(x_i) m_i."""
    x = positions.nodes if isinstance(positions, EpsGraph) else np.asarray(positions, dtype=float)
    m = rho.masses
    if kmat is None:
        kmat = kernel.matrix(x)
    return float(0.5 * m @ kmat @ m + kernel.potential_values(x) @ m)


def second_moment(rho: NodeMeasure, positions) -> float:
    x = np.asarray(positions, dtype=float).reshape(len(rho), -1)
    return float(np.einsum("n,nd,nd->", rho.masses, x, x))


@dataclass(frozen=True)
class EnergyReport:
    energy: float
    slope_graph: float
    slope_local: float
    second_moment: float


def alpha(j, r):
    """(j_+)^2 / r for r > 0; 0 if j <= 0 and r = 0; infinity if j > 0 and r = 0.

    Works elementwise on arrays.
    """
    j = np.asarray(j, dtype=float)
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise InvalidArgument("alpha requires r >= 0")
    jp = np.maximum(j, 0.0)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):  # tiny r overflows to inf, the right limit
        out = np.where(r > 0, jp**2 / np.where(r > 0, r, 1.0), np.where(jp > 0, INF, 0.0))
    return float(out) if out.ndim == 0 else out


def _fluxvals(j) -> np.ndarray:
    return j.values if isinstance(j, EdgeField) else np.asarray(j, dtype=float)


def action(rho: NodeMeasure, graph: EpsGraph, j) -> float:
    """1/2 sum over ordered edges of [alpha(J_ij, m_i mu_j) + alpha(-J_ij, mu_i m_j)] eta_ij."""
    J = _fluxvals(j)
    m, mu = rho.masses, graph.mu
    s, t = graph.src, graph.dst
    terms = alpha(J, m[s] * mu[t]) + alpha(-J, mu[s] * m[t])
    if np.any(np.isinf(terms) & (graph.eta > 0)):
        return INF
    return float(0.5 * np.sum(terms * graph.eta))


def primal_dissipation(rho: NodeMeasure, graph: EpsGraph, j) -> float:
    """R(rho, j), half the action."""
    return 0.5 * action(rho, graph, j)


def dual_dissipation(rho: NodeMeasure, graph: EpsGraph, v: EdgeField) -> float:
    """sum over ordered edges of [(v_+)^2 m_i mu_j + (v_-)^2 mu_i m_j] eta / 4."""
    m, mu = rho.masses, graph.mu
    s, t = graph.src, graph.dst
    vp = np.maximum(v.values, 0.0)
    vm = np.maximum(-v.values, 0.0)
    return float(np.sum((vp**2 * m[s] * mu[t] + vm**2 * mu[s] * m[t]) * graph.eta) / 4)


def eta_pairing(v: EdgeField, j, graph: EpsGraph) -> float:
    """<v, j>_eta = 1/2 sum over ordered edges v_ij eta_ij J_ij."""
    return float(0.5 * np.sum(v.values * graph.eta * _fluxvals(j)))


def legendre_gap(rho: NodeMeasure, graph: EpsGraph, v: EdgeField, j) -> float:
    """R(rho, j) + R*(rho, v) - <v, j>_eta, nonnegative by Fenchel-Young."""
    R = primal_dissipation(rho, graph, j)
    if math.isinf(R):
        return INF
    return R + dual_dissipation(rho, graph, v) - eta_pairing(v, j, graph)


def metric_slope_graph(kernel: InteractionKernel, rho: NodeMeasure, graph: EpsGraph,
                       kmat: np.ndarray | None = None) -> float:
    """sum over ordered edges of [(grad(K*rho + P))_-]^2 eta m_i mu_j."""
    potential = convolve(kernel, rho, graph, kmat) + kernel.potential_values(graph.nodes)
    g = nonlocal_gradient(potential, graph).values
    gm = np.maximum(-g, 0.0)
    return float(np.sum(gm**2 * graph.eta * rho.masses[graph.src] * graph.mu[graph.dst]))


def energy_gradient(kernel: InteractionKernel, rho: NodeMeasure, positions) -> np.ndarray:
    """(grad K * rho + grad P) at each support point, by exact summation."""
    x = np.asarray(positions, dtype=float).reshape(len(rho), -1)
    return kernel_gradient(kernel, x, x, rho.masses)


def metric_slope_local(kernel: InteractionKernel, state, tensor: TensorField,
                       positions=None) -> float:
    """sum_i <g_i, T(x_i) g_i> m_i with g = grad K * rho + grad P.

    ``state`` is a :class:`LocalState` or a :class:`NodeMeasure` together
    with ``positions``.
    """
    if positions is None:
        positions, rho = state.grid.centers, state.density
    else:
        rho = state
    x = np.asarray(positions, dtype=float).reshape(len(rho), -1)
    g = energy_gradient(kernel, rho, x)
    T = tensor(x).reshape(len(x), x.shape[1], x.shape[1])
    return float(np.einsum("n,ni,nij,nj->", rho.masses, g, T, g))


def local_metric_derivative(rho: NodeMeasure, flux: np.ndarray, tensor_at_cells: np.ndarray) -> float:
    """sum_i <T^{-1} j_i, j_i> / m_i; infinite if flux leaves an empty cell."""
    m = rho.masses
    flux = np.asarray(flux, dtype=float)
    moving = np.any(flux != 0, axis=1)
    if np.any(moving & (m <= 0)):
        return INF
    sol = np.linalg.solve(tensor_at_cells[moving], flux[moving][..., None])[..., 0]
    return float(np.sum(np.einsum("ni,ni->n", sol, flux[moving]) / m[moving]))


@dataclass
class DissipationLedger:
    """Per-step dissipation records of a graph run."""

    step: list = field(default_factory=list)
    t: list = field(default_factory=list)
    energy: list = field(default_factory=list)
    R: list = field(default_factory=list)
    R_star: list = field(default_factory=list)
    pairing: list = field(default_factory=list)
    legendre_gap: list = field(default_factory=list)
    slope: list = field(default_factory=list)
    de_giorgi: float = float("nan")
    meta: dict = field(default_factory=lambda: {
        "metric_derivative": "action of the stored step flux; forward and backward derivatives not distinguished",
        "time_quadrature": "left endpoint",
    })

    columns = ("step", "t", "energy", "R", "R_star", "pairing", "legendre_gap", "slope")

    def rows(self):
        return list(zip(*(getattr(self, c) for c in self.columns)))

    def write_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.columns)
            for row in self.rows():
                w.writerow([row[0]] + [repr(float(x)) for x in row[1:]])
        meta = dict(self.meta, de_giorgi=self.de_giorgi)
        path.with_suffix(".json").write_text(json.dumps(meta, indent=2))
        return path


def _require_fluxes(traj: Trajectory) -> None:
    if traj.fluxes is None or len(traj.fluxes) != len(traj.times) - 1:
        raise InvalidArgument("trajectory does not carry one stored flux per step")


def dissipation_ledger(traj: Trajectory, kernel: InteractionKernel, graph: EpsGraph) -> DissipationLedger:
    """Evaluate R, R*, pairing, gap and slope at every step of a graph run."""
    _require_fluxes(traj)
    kmat = kernel.matrix(graph.nodes)
    led = DissipationLedger()
    for k, (t, rho, j) in enumerate(zip(traj.times[:-1], traj.states[:-1], traj.fluxes)):
        v = velocity_field(kernel, rho, graph, kmat)
        R = primal_dissipation(rho, graph, j)
        Rs = dual_dissipation(rho, graph, v)
        pr = eta_pairing(v, j, graph)
        led.step.append(k)
        led.t.append(float(t))
        led.energy.append(interaction_energy(kernel, rho, graph, kmat))
        led.R.append(R)
        led.R_star.append(Rs)
        led.pairing.append(pr)
        led.legendre_gap.append(INF if math.isinf(R) else R + Rs - pr)
        led.slope.append(metric_slope_graph(kernel, rho, graph, kmat))
    led.de_giorgi = de_giorgi_graph(traj, kernel, graph)
    return led


def de_giorgi_terms(traj: Trajectory, kernel: InteractionKernel, graph: EpsGraph) -> dict:
    """Energy drop and left-endpoint integrals of slope and action."""
    _require_fluxes(traj)
    kmat = kernel.matrix(graph.nodes)
    dts = np.diff(traj.times)
    slope = np.array([metric_slope_graph(kernel, r, graph, kmat) for r in traj.states[:-1]])
    act = np.array([action(r, graph, j) for r, j in zip(traj.states[:-1], traj.fluxes)])
    e0 = interaction_energy(kernel, traj.states[0], graph, kmat)
    e1 = interaction_energy(kernel, traj.states[-1], graph, kmat)
    return {"energy_change": e1 - e0, "slope_integral": float(dts @ slope),
            "action_integral": float(dts @ act) if np.all(np.isfinite(act)) else INF}


def de_giorgi_graph(traj: Trajectory, kernel: InteractionKernel, graph: EpsGraph) -> float:
    """E(end) - E(start) + 1/2 int (D_eps + |rho'|^2) dt with the stored-flux action."""
    if len(traj.times) == 1:
        return 0.0
    terms = de_giorgi_terms(traj, kernel, graph)
    return terms["energy_change"] + 0.5 * (terms["slope_integral"] + terms["action_integral"])


def de_giorgi_local(traj: Trajectory, kernel: InteractionKernel, tensor: TensorField) -> float:
    """Local counterpart with cell fluxes weighted by T^{-1}."""
    if len(traj.times) == 1:
        return 0.0
    _require_fluxes(traj)
    x = traj.positions
    Tc = tensor(x).reshape(len(x), x.shape[1], x.shape[1])
    dts = np.diff(traj.times)
    slope = np.array([metric_slope_local(kernel, r, tensor, x) for r in traj.states[:-1]])
    speed = np.array([local_metric_derivative(r, f, Tc) for r, f in zip(traj.states[:-1], traj.fluxes)])
    e0 = interaction_energy(kernel, traj.states[0], x)
    e1 = interaction_energy(kernel, traj.states[-1], x)
    return e1 - e0 + 0.5 * float(dts @ slope + dts @ speed)


def chain_rule_residual(traj: Trajectory, kernel: InteractionKernel, graph: EpsGraph) -> np.ndarray:
    """r_k = [E(rho_{k+1}) - E(rho_k)] - dt_k <grad(K*rho_k + P), j_k>_eta."""
    _require_fluxes(traj)
    kmat = kernel.matrix(graph.nodes)
    out = np.zeros(len(traj.fluxes))
    energies = [interaction_energy(kernel, r, graph, kmat) for r in traj.states]
    for k, (rho, j) in enumerate(zip(traj.states[:-1], traj.fluxes)):
        v = velocity_field(kernel, rho, graph, kmat)
        dt = traj.times[k + 1] - traj.times[k]
        # grad(K*rho + P) = -v
        out[k] = energies[k + 1] - energies[k] - dt * eta_pairing(v * -1.0, j, graph)
    return out


def _quantile_w2_sq(xa, ma, xb, mb) -> float:
    oa, ob = np.argsort(xa, kind="stable"), np.argsort(xb, kind="stable")
    xa, ma, xb, mb = xa[oa], ma[oa], xb[ob], mb[ob]
    ca, cb = np.cumsum(ma), np.cumsum(mb)
    total = ca[-1]
    cuts = np.unique(np.concatenate([[0.0], ca, cb * (total / cb[-1])]))
    cuts = cuts[cuts <= total]
    mids = 0.5 * (cuts[1:] + cuts[:-1])
    ia = np.minimum(np.searchsorted(ca, mids), len(xa) - 1)
    ib = np.minimum(np.searchsorted(cb * (total / cb[-1]), mids), len(xb) - 1)
    return float(np.sum(np.diff(cuts) * (xa[ia] - xb[ib]) ** 2))


def wasserstein_T_small(a: NodeMeasure, xa, b: NodeMeasure, xb, tensor: TensorField) -> float:
    """W_T between two discrete measures of equal mass.

    In d = 1 with a constant tensor the quantile coupling is used, rescaled by
    T^{-1/2}.  Otherwise an exact transport linear program over the d_T cost
    matrix is solved; each measure may have at most 64 atoms.
    """
    xa = np.asarray(xa, dtype=float).reshape(len(a), -1)
    xb = np.asarray(xb, dtype=float).reshape(len(b), -1)
    if xa.shape[1] != xb.shape[1]:
        raise InvalidArgument("measures live in different dimensions")
    if abs(a.total - b.total) > 1e-12 * max(a.total, 1.0):
        raise InvalidArgument("measures must have equal mass")
    if xa.shape[1] == 1 and tensor.is_constant:
        w2 = _quantile_w2_sq(xa[:, 0], a.masses, xb[:, 0], b.masses) / float(tensor.matrix[0, 0])
        return math.sqrt(w2)
    ka, kb = a.masses > 0, b.masses > 0
    xa, ma, xb, mb = xa[ka], a.masses[ka], xb[kb], b.masses[kb]
    if len(ma) > MAX_ATOMS or len(mb) > MAX_ATOMS:
        raise UnsupportedSize(f"exact transport limited to {MAX_ATOMS} atoms per measure")
    cost = np.array([[dT_distance(tensor, p, q) ** 2 for q in xb] for p in xa])
    na, nb = len(ma), len(mb)
    A = np.zeros((na + nb, na * nb))
    for i in range(na):
        A[i, i * nb:(i + 1) * nb] = 1
    for k in range(nb):
        A[na + k, k::nb] = 1
    res = linprog(cost.ravel(), A_eq=A, b_eq=np.concatenate([ma, mb]), bounds=(0, None),
                  method="highs")
    return math.sqrt(max(res.fun, 0.0))
