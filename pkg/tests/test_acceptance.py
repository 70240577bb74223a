"""Acceptance criteria, one test each.

Every test records a verdict in ``RESULTS``; ``conftest.py`` prints one
PASS/FAIL line per criterion at the end of the session.  Runtime bounds are
part of each criterion.
"""

import functools
import math
import time
from pathlib import Path

import numpy as np
from scipy import integrate

from graphlimit.calculus import EdgeField, NodeMeasure, upwind_flux, velocity_field
from graphlimit.dynamics import DtPolicy, LocalGrid, LocalState, cfl_dt, solve_nl2ie
from graphlimit.energetics import (chain_rule_residual, de_giorgi_graph, de_giorgi_terms, dual_dissipation, interaction_energy,
                                   legendre_gap, metric_slope_graph, metric_slope_local)
from graphlimit.geometry import (BaseMeasureSpec, ConnectivitySpec, TensorField, ball_moment_constant, build_graph,
                                 tensor_closed_form, tensor_eps, tensor_limit)
from graphlimit.harness import ExperimentConfig, run_convergence_sweep
from graphlimit.reconstruction import CellGrid, TestFunction, divergence_identity_check, reconstruct_local_flux

from helpers import BALL1, QUADRATIC, line_nodes, line_setup

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
RESULTS = {}


def criterion(number, title, seconds):
    """Record PASS/FAIL for ``number``; the test body returns a detail string."""
    def wrap(fn):
        @functools.wraps(fn)
        def run(*args, **kwargs):
            start = time.perf_counter()
            try:
                detail = fn(*args, **kwargs) or ""
                elapsed = time.perf_counter() - start
                assert elapsed < seconds, f"took {elapsed:.1f} s, bound {seconds} s"
            except BaseException as exc:
                RESULTS[number] = (title, False, str(exc).splitlines()[0] if str(exc) else type(exc).__name__)
                raise
            RESULTS[number] = (title, True, f"{detail} [{elapsed:.1f} s]")
        return run
    return wrap


def cfl_at_start(h):
    g, rho = line_setup(h)
    return cfl_dt(rho, g, velocity_field(QUADRATIC, rho, g), 0.5)


def run4(h=0.05, dt=None):
    """81-node run (h = 0.05): eps 0.2, quadratic kernel, t_end 1, fixed dt = CFL(0.5) at t = 0."""
    g, rho = line_setup(h)
    dt = cfl_at_start(h) if dt is None else dt
    return g, solve_nl2ie(rho, g, QUADRATIC, 1.0, DtPolicy.fixed(dt), checkpoints=[0.25, 0.5],
                          store_fluxes=True)


@criterion(1, "tensor closed form for diag(2,1)", 5)
def test_tensor_closed_form():
    D = np.diag([2.0, 1.0])
    spec = ConnectivitySpec.anisotropic(2, D, 1.0)
    got = tensor_limit(spec, BaseMeasureSpec.uniform(), np.zeros(2), resolution=400)
    err = np.linalg.norm(got - D) / np.linalg.norm(D)
    closed = tensor_closed_form(D, 1.0, 2 / (ball_moment_constant(2) * math.sqrt(2.0)))
    np.testing.assert_allclose(closed, D, rtol=1e-12)
    assert err <= 1e-3, f"relative Frobenius error {err:.2e}"
    return f"relative Frobenius error {err:.2e}"


@criterion(2, "ball moment constants", 5)
def test_ball_moment_constants():
    c1, c2 = ball_moment_constant(1), ball_moment_constant(2)
    assert abs(c1 - 2 / 3) <= 1e-12 and abs(c2 - math.pi / 4) <= 1e-12
    q1 = integrate.quad(lambda w: w * w, -1, 1, epsabs=1e-13)[0]
    q2 = integrate.dblquad(lambda y, x: x * x, -1, 1, lambda x: -math.sqrt(1 - x * x),
                           lambda x: math.sqrt(1 - x * x), epsabs=1e-12)[0]
    assert abs(c1 - q1) <= 1e-6 and abs(c2 - q2) <= 1e-6
    return f"C1 - 2/3 = {c1 - 2 / 3:.1e}, C2 - pi/4 = {c2 - math.pi / 4:.1e}"


@criterion(3, "T^eps -> limit tensor at h = eps/8", 10)
def test_tensor_eps_converges():
    base = BaseMeasureSpec.sinusoidal()
    samples = np.array([-1.0, -0.5, 0.0, 0.5, 1.0])
    errors = []
    for eps in (0.4, 0.2, 0.1):
        h = eps / 8
        x = line_nodes(h)
        g = build_graph(x, base, BALL1, eps, h)
        idx = [int(np.argmin(np.abs(x - s))) for s in samples]
        assert np.allclose(x[idx], samples, atol=1e-12)
        errors.append([np.linalg.norm(tensor_eps(g, i) - tensor_limit(BALL1, base, x[i:i + 1]))
                       for i in idx])
    errors = np.array(errors)
    table = "; ".join(f"x={s:g}: " + ", ".join(f"{e:.4g}" for e in errors[:, k]) for k, s in enumerate(samples))
    assert np.all(np.diff(errors, axis=0) < 0), f"not strictly decreasing: {table}"
    return table


@criterion(4, "conservation, positivity, energy decay", 30)
def test_conservation_positivity_energy():
    g, rho = line_setup(0.05)
    assert g.n_nodes == 81
    traj = solve_nl2ie(rho, g, QUADRATIC, 1.0, DtPolicy.adaptive(0.5, math.inf))
    drift = max(abs(s.total - 1.0) for s in traj.states)
    low = min(s.masses.min() for s in traj.states)
    kmat = QUADRATIC.matrix(g.nodes)
    energy = np.array([interaction_energy(QUADRATIC, s, g, kmat) for s in traj.states])
    excess = np.diff(energy) - 10 * np.diff(traj.times) ** 2
    assert drift <= 1e-12, f"mass drift {drift:.2e}"
    assert low >= 0, f"min mass {low:.2e}"
    assert np.all(excess <= 0), f"energy increase beyond slack {excess.max():.2e}"
    return f"{len(traj.times) - 1} steps, drift {drift:.1e}, min mass {low:.1e}, max dE {np.diff(energy).max():.2e}"


@criterion(5, "graph-to-local limit, quantile W2", 300)
def test_graph_to_local_limit():
    cfg = ExperimentConfig.load(CONFIGS / "converge1d.json")
    report = run_convergence_sweep(cfg, write=False)
    errs = report.errors()
    assert errs.shape == (3, 3)
    table = " / ".join(", ".join(f"{e:.4f}" for e in col) for col in errs.T)
    assert np.all(np.diff(errs, axis=0) < 0), f"not strictly decreasing: {table}"
    ratio = errs[2, 2] / errs[0, 2]
    assert ratio <= 0.5, f"ratio {ratio:.3f}"
    return f"errors by t (eps 0.4, 0.2, 0.1): {table}; ratio at t=1 {ratio:.3f}"


@criterion(6, "Legendre duality on 100 random instances", 5)
def test_legendre_duality():
    rng = np.random.default_rng(2024)
    g = build_graph(rng.uniform(-1, 1, size=(20, 2)), BaseMeasureSpec.sinusoidal(), ConnectivitySpec.ball(2),
                    1.0, 0.1)
    worst_upwind, worst_scaled, checked = 0.0, math.inf, 0
    for _ in range(100):
        rho = NodeMeasure.normalized(rng.uniform(size=20))
        raw = rng.normal(size=g.n_edges)
        v = EdgeField(raw - raw[g.rev])
        j = upwind_flux(rho, g, v)
        gap = legendre_gap(rho, g, v, j)
        worst_upwind = max(worst_upwind, abs(gap))
        rstar = dual_dissipation(rho, g, v)
        if rstar >= 1e-8:
            checked += 1
            worst_scaled = min(worst_scaled, legendre_gap(rho, g, v, j * 2.0) / rstar)
    assert worst_upwind <= 1e-12, f"upwind gap {worst_upwind:.2e}"
    assert worst_scaled >= 1e-6, f"scaled gap / R* {worst_scaled:.2e}"
    return f"max |gap| {worst_upwind:.1e}; min gap(2j)/R* {worst_scaled:.3f} over {checked} instances"


@criterion(7, "chain-rule residual, Richardson factor", 60)
def test_chain_rule_richardson():
    dt = cfl_at_start(0.05)
    g, a = run4(dt=dt)
    _, b = run4(dt=dt / 2)
    ra = np.abs(chain_rule_residual(a, QUADRATIC, g)).max()
    rb = np.abs(chain_rule_residual(b, QUADRATIC, g)).max()
    assert 3 <= ra / rb <= 5, f"factor {ra / rb:.3f}"
    return f"max residual {ra:.3e} -> {rb:.3e}, factor {ra / rb:.4f}"


@criterion(8, "De Giorgi functional near zero", 60)
def test_de_giorgi_near_zero():
    g, traj = run4()
    g2, traj2 = run4(0.025, cfl_at_start(0.05) / 2)
    G, G2 = de_giorgi_graph(traj, QUADRATIC, g), de_giorgi_graph(traj2, QUADRATIC, g2)
    slope = de_giorgi_terms(traj, QUADRATIC, g)["slope_integral"]
    assert abs(G) <= 0.05 * slope, f"|G| {abs(G):.2e} vs 0.05 * {slope:.3e}"
    assert abs(G2) < abs(G), f"|G| {abs(G):.2e} -> {abs(G2):.2e}"
    return f"|G| {abs(G):.2e} (bound {0.05 * slope:.2e}) -> {abs(G2):.2e} with h and dt halved"


@criterion(9, "flux reconstruction identity", 30)
def test_flux_reconstruction():
    linear = [TestFunction.linear([1.0]), TestFunction.linear([-2.5])]
    quadratic = [TestFunction.quadratic([[1.0]]), TestFunction.quadratic([[-2.0]], [0.5])]
    worst_linear, worst_quad = 0.0, []
    for h in (0.05, 0.025):
        g, traj = run4(h, cfl_at_start(0.05) * h / 0.05)
        grid = CellGrid.covering([-2 - 0.3 * h], [2 + h], h)
        q = 0.0
        for t in (0.25, 0.5, 1.0):
            rho = traj.state_at(t)
            j = upwind_flux(rho, g, velocity_field(QUADRATIC, rho, g))
            jhat = reconstruct_local_flux(j, g, grid)
            worst_linear = max(worst_linear, divergence_identity_check(j, g, jhat, linear))
            dq = divergence_identity_check(j, g, jhat, quadratic)
            assert dq <= h * jhat.total_variation(), f"quadratic {dq:.2e} > h TV at t={t}"
            q = max(q, dq)
        worst_quad.append(q)
    assert worst_linear <= 1e-12, f"linear {worst_linear:.2e}"
    assert worst_quad[1] <= 0.5 * worst_quad[0], f"quadratic {worst_quad[0]:.2e} -> {worst_quad[1]:.2e}"
    return f"linear {worst_linear:.1e}; quadratic {worst_quad[0]:.2e} -> {worst_quad[1]:.2e}"


@criterion(10, "graph slope -> local slope", 30)
def test_slope_consistency():
    def profile(x):
        return np.where(np.abs(x - 0.2) <= 1.0, np.exp(-(x - 0.2) ** 2 / (2 * 0.5**2)), 0.0)

    fine = LocalGrid.covering([-2.0], [2.0], 1e-3)
    w = profile(fine.centers[:, 0])
    state = LocalState(fine, NodeMeasure(w / w.sum()), TensorField.constant([[1 / 3]]))
    local = metric_slope_local(QUADRATIC, state, state.tensor)
    gaps = []
    for eps in (0.4, 0.2, 0.1):
        h = eps / 8
        x = line_nodes(h)
        g = build_graph(x, BaseMeasureSpec.uniform(), BALL1, eps, h)
        p = profile(x)
        gaps.append(abs(metric_slope_graph(QUADRATIC, NodeMeasure(p / p.sum()), g) - local))
    assert np.all(np.diff(gaps) < 0), f"gaps {gaps}"
    return "gaps " + ", ".join(f"{e:.4f}" for e in gaps) + f" (local slope {local:.4f})"

