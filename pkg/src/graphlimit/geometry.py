"""Graph structure (mu, eta^eps), epsilon-tensors and the limiting tensor.

A graph at scale ``eps`` is the pair of node weights ``mu_i`` and symmetric
edge weights

    eta^eps(x, y) = eps^{-(d+2)} theta((x + y) / 2, (x - y) / eps)

for a reference connectivity ``theta(z, w)``.  Edges are stored once per
ordered pair, so every undirected edge appears twice.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import dijkstra
from scipy.spatial import cKDTree
from scipy.special import gamma

from .errors import InvalidArgument

# Relative shrink of indicator radii.  Nodes on a uniform lattice whose distance
# is exactly the support radius would otherwise be in or out depending on
# rounding.  Such points are treated as outside (open ball).
BOUNDARY_RTOL = 1e-9


def ball_moment_constant(d: int) -> float:
    """C_d = int_{B_1} y_1^2 dy = pi^{d/2} / (2 Gamma(d/2 + 2))."""
    if d < 1:
        raise InvalidArgument(f"dimension must be >= 1, got {d}")
    return math.pi ** (d / 2) / (2.0 * gamma(d / 2 + 2))


def unit_ball_volume(d: int) -> float:
    return math.pi ** (d / 2) / gamma(d / 2 + 1)


def _as_points(x, dim: int | None = None) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1, 1)
    elif x.ndim == 1:
        x = x.reshape(-1, 1) if dim == 1 else x.reshape(1, -1)
    return x


def _field(value, dim: int, shape: tuple) -> Callable[[np.ndarray], np.ndarray]:
    """Wrap a constant or a callable z -> value into a batched map."""
    if callable(value):
        def f(z):
            return np.asarray([np.asarray(value(zz), dtype=float) for zz in z]).reshape((len(z),) + shape)
        return f
    const = np.asarray(value, dtype=float).reshape(shape)

    def f(z):
        return np.broadcast_to(const, (len(z),) + shape)
    return f


@dataclass(frozen=True)
class ConnectivitySpec:
    """Reference connectivity theta(z, w) with its assumption constants.

    ``theta`` is evaluated batched: ``theta(z, w)`` with ``z`` and ``w`` of
    shape ``(n, d)`` returns ``(n,)``.
    """

    kind: str
    dim: int
    theta: Callable[[np.ndarray, np.ndarray], np.ndarray]
    support_radius: float
    mom_bound: float
    params: dict = field(default_factory=dict)

    def __call__(self, z, w) -> np.ndarray:
        z = np.atleast_2d(np.asarray(z, dtype=float))
        w = np.atleast_2d(np.asarray(w, dtype=float))
        z, w = np.broadcast_arrays(z, w)
        return np.asarray(self.theta(z, w), dtype=float)

    @classmethod
    def ball(cls, dim: int, radius: float = 1.0, value: float = 1.0) -> "ConnectivitySpec":
        if radius <= 0 or value < 0:
            raise InvalidArgument("ball connectivity needs radius > 0 and value >= 0")
        r2 = (radius * (1.0 - BOUNDARY_RTOL)) ** 2

        def theta(z, w):
            return np.where(np.einsum("ni,ni->n", w, w) < r2, value, 0.0)

        return cls("ball", dim, theta, float(radius), float(value * radius**2),
                   {"radius": radius, "value": value})

    @classmethod
    def annulus(cls, dim: int, inner: float, outer: float, value: float = 1.0) -> "ConnectivitySpec":
        if not 0 <= inner < outer:
            raise InvalidArgument("annulus needs 0 <= inner < outer")
        lo2 = (inner * (1.0 + BOUNDARY_RTOL)) ** 2
        hi2 = (outer * (1.0 - BOUNDARY_RTOL)) ** 2

        def theta(z, w):
            q = np.einsum("ni,ni->n", w, w)
            return np.where((q > lo2) & (q < hi2), value, 0.0)

        return cls("annulus", dim, theta, float(outer), float(value * outer**2),
                   {"inner": inner, "outer": outer, "value": value})

    @classmethod
    def anisotropic(cls, dim: int, tensor, radius=1.0, normalization=None,
                    support_radius: float | None = None,
                    mom_bound: float | None = None) -> "ConnectivitySpec":
        """theta(z, w) = d(z) on the ellipsoid <w, D(z)^{-1} w> < R(z)^2.

        ``tensor``, ``radius`` and ``normalization`` are constants or callables
        of a single point.  The default normalization
        ``2 / (C_d R^{d+2} sqrt(det D))`` makes the limiting tensor equal ``D``
        when mu = Lebesgue.  Support and moment bounds must be given for
        callable fields.
        """
        D = _field(tensor, dim, (dim, dim))
        R = _field(radius, dim, ())
        cd = ball_moment_constant(dim)
        if normalization is None:
            def dn(z):
                Dz = D(z)
                return 2.0 / (cd * R(z) ** (dim + 2) * np.sqrt(np.linalg.det(Dz)))
        else:
            dn = _field(normalization, dim, ())

        def theta(z, w):
            Dz = D(z)
            q = np.einsum("ni,ni->n", w, np.linalg.solve(Dz, w[..., None])[..., 0])
            r2 = (R(z) * (1.0 - BOUNDARY_RTOL)) ** 2
            return np.where(q < r2, dn(z), 0.0)

        if support_radius is None or mom_bound is None:
            if callable(tensor) or callable(radius) or callable(normalization):
                raise InvalidArgument("support_radius and mom_bound are required for variable fields")
            z0 = np.zeros((1, dim))
            lam = np.linalg.eigvalsh(D(z0)[0]).max()
            csupp = float(R(z0)[0] * math.sqrt(lam))
            support_radius = csupp if support_radius is None else support_radius
            if mom_bound is None:
                mom_bound = float(csupp**2 * dn(z0)[0])
        return cls("anisotropic", dim, theta, float(support_radius), float(mom_bound),
                   {"tensor": tensor, "radius": radius, "normalization": normalization})

    @classmethod
    def tabulated(cls, dim: int, func, support_radius: float,
                  mom_bound: float | None = None) -> "ConnectivitySpec":
        """Arbitrary batched callback ``func(z, w) -> values``.

        Values outside ``|w| < support_radius`` are forced to zero so the
        support assumption holds by construction.
        """
        r2 = (support_radius * (1.0 - BOUNDARY_RTOL)) ** 2

        def theta(z, w):
            vals = np.asarray(func(z, w), dtype=float)
            return np.where(np.einsum("ni,ni->n", w, w) < r2, vals, 0.0)

        return cls("tabulated", dim, theta, float(support_radius),
                   float("inf") if mom_bound is None else float(mom_bound), {"func": func})


@dataclass(frozen=True)
class BaseMeasureSpec:
    """Density of the base measure mu with its declared bounds."""

    density: Callable[[np.ndarray], np.ndarray]
    lower_bound: float
    upper_bound: float
    name: str = "custom"

    def __call__(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.asarray(self.density(x), dtype=float).reshape(len(x))

    @classmethod
    def uniform(cls, value: float = 1.0) -> "BaseMeasureSpec":
        return cls(lambda x: np.full(len(x), float(value)), value, value, "uniform")

    @classmethod
    def sinusoidal(cls, amplitude: float = 0.4, offset: float = 1.0) -> "BaseMeasureSpec":
        """mu(x) = offset + amplitude * sin(x_1)."""
        return cls(lambda x: offset + amplitude * np.sin(x[:, 0]),
                   offset - abs(amplitude), offset + abs(amplitude), "sinusoidal")


@dataclass(frozen=True)
class EpsGraph:
    """Nodes, base weights and the symmetric edge list at one scale eps.

    ``src``, ``dst``, ``eta`` list every ordered pair; ``rev[k]`` is the index
    of the reversed edge ``(dst[k], src[k])``.
    """

    eps: float
    nodes: np.ndarray
    mu: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    eta: np.ndarray
    rev: np.ndarray
    cell_volume: float = float("nan")

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def dim(self) -> int:
        return self.nodes.shape[1]

    @property
    def n_edges(self) -> int:
        return len(self.src)

    @property
    def offsets(self) -> np.ndarray:
        """x_dst - x_src per ordered edge."""
        return self.nodes[self.dst] - self.nodes[self.src]

    def neighbors(self, i: int) -> np.ndarray:
        lo, hi = np.searchsorted(self.src, [i, i + 1])
        return self.dst[lo:hi]

    @classmethod
    def from_pairs(cls, eps, nodes, mu, i, j, eta, cell_volume=float("nan")) -> "EpsGraph":
        """Assemble from undirected pairs ``(i, j, eta)``, mirroring each one."""
        nodes = _as_points(nodes)
        i = np.asarray(i, dtype=np.int64)
        j = np.asarray(j, dtype=np.int64)
        eta = np.asarray(eta, dtype=float)
        src = np.concatenate([i, j])
        dst = np.concatenate([j, i])
        w = np.concatenate([eta, eta])
        order = np.lexsort((dst, src))
        src, dst, w = src[order], dst[order], w[order]
        n = len(nodes)
        key = src * n + dst
        rev = np.searchsorted(key, dst * n + src)
        return cls(float(eps), nodes, np.asarray(mu, dtype=float), src, dst, w, rev, float(cell_volume))


def eval_eta(spec: ConnectivitySpec, eps: float, x, y) -> float:
    """eta^eps(x, y) for a single pair of distinct points."""
    if eps <= 0:
        raise InvalidArgument(f"eps must be positive, got {eps}")
    x = np.asarray(x, dtype=float).reshape(1, -1)
    y = np.asarray(y, dtype=float).reshape(1, -1)
    if np.array_equal(x, y):
        raise InvalidArgument("eta is only defined for x != y")
    d = x.shape[1]
    return float(spec((x + y) / 2, (x - y) / eps)[0] / eps ** (d + 2))


def build_graph(nodes, base: BaseMeasureSpec, spec: ConnectivitySpec, eps: float,
                cell_volume: float) -> EpsGraph:
    """Discretize (mu, eta^eps) on a point set.

    ``mu_i = mu(x_i) * cell_volume``; candidate pairs come from a k-d tree
    query at radius ``C_supp * eps`` and are kept when eta > 0.
    """
    if eps <= 0:
        raise InvalidArgument(f"eps must be positive, got {eps}")
    if cell_volume <= 0:
        raise InvalidArgument(f"cell_volume must be positive, got {cell_volume}")
    nodes = _as_points(nodes, spec.dim)
    if nodes.shape[1] != spec.dim:
        raise InvalidArgument(f"nodes have dimension {nodes.shape[1]}, connectivity has {spec.dim}")
    if len(np.unique(nodes, axis=0)) != len(nodes):
        raise InvalidArgument("nodes must be pairwise distinct")
    d = spec.dim
    mu = base(nodes) * cell_volume
    if len(nodes) < 2:
        empty = np.zeros(0, dtype=np.int64)
        return EpsGraph(float(eps), nodes, mu, empty, empty, np.zeros(0), empty, float(cell_volume))
    tree = cKDTree(nodes)
    pairs = tree.query_pairs(spec.support_radius * eps, output_type="ndarray")
    if len(pairs) == 0:
        return EpsGraph.from_pairs(eps, nodes, mu, [], [], [], cell_volume)
    i, j = pairs[:, 0], pairs[:, 1]
    xi, xj = nodes[i], nodes[j]
    eta = spec((xi + xj) / 2, (xi - xj) / eps) / eps ** (d + 2)
    keep = eta > 0
    return EpsGraph.from_pairs(eps, nodes, mu, i[keep], j[keep], eta[keep], cell_volume)


def tensor_eps_all(graph: EpsGraph) -> np.ndarray:
    """T^eps at every node, shape ``(N, d, d)``."""
    d = graph.dim
    off = graph.offsets
    wt = 0.5 * graph.eta * graph.mu[graph.dst]
    out = np.zeros((graph.n_nodes, d, d))
    for a in range(d):
        for b in range(a, d):
            out[:, a, b] = np.bincount(graph.src, weights=wt * off[:, a] * off[:, b],
                                       minlength=graph.n_nodes)
            out[:, b, a] = out[:, a, b]
    return out


def tensor_eps(graph: EpsGraph, x_index: int) -> np.ndarray:
    """T^eps(x_i) = 1/2 sum_j (x_i - x_j)(x_i - x_j)^T eta_ij mu_j."""
    if not 0 <= x_index < graph.n_nodes:
        raise InvalidArgument(f"node id {x_index} out of range")
    lo, hi = np.searchsorted(graph.src, [x_index, x_index + 1])
    off = graph.offsets[lo:hi]
    wt = 0.5 * graph.eta[lo:hi] * graph.mu[graph.dst[lo:hi]]
    return np.einsum("k,ki,kj->ij", wt, off, off)


def _box_midpoints(radius: float, d: int, resolution: int):
    h = 2.0 * radius / resolution
    axis = -radius + h * (np.arange(resolution) + 0.5)
    grids = np.meshgrid(*([axis] * d), indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1), h**d


def second_moment(spec: ConnectivitySpec, z, resolution: int = 400) -> np.ndarray:
    """Midpoint-rule value of int w (x) w theta(z, w) dw over the support box."""
    if resolution < 2:
        raise InvalidArgument("quadrature resolution must be >= 2")
    d = spec.dim
    w, vol = _box_midpoints(spec.support_radius, d, resolution)
    z = np.asarray(z, dtype=float).reshape(1, d)
    th = spec(np.broadcast_to(z, w.shape), w)
    mask = th != 0
    w, th = w[mask], th[mask]
    return vol * np.einsum("k,ki,kj->ij", th, w, w)


def tensor_limit(spec: ConnectivitySpec, base: BaseMeasureSpec, x, resolution: int = 400) -> np.ndarray:
    """Limit tensor 1/2 mu(x) int w (x) w theta(x, w) dw by the midpoint rule."""
    x = np.asarray(x, dtype=float).reshape(1, spec.dim)
    return 0.5 * base(x)[0] * second_moment(spec, x, resolution)


def _check_spd(D: np.ndarray) -> None:
    if D.ndim != 2 or D.shape[0] != D.shape[1]:
        raise InvalidArgument("tensor must be a square matrix")
    if not np.allclose(D, D.T, rtol=1e-12, atol=1e-14 * max(1.0, np.abs(D).max())):
        raise InvalidArgument("tensor must be symmetric")
    if np.linalg.eigvalsh(D).min() <= 0:
        raise InvalidArgument("tensor must be positive definite")


def tensor_closed_form(D, R: float, d_norm: float, x=None) -> np.ndarray:
    """1/2 d_norm sqrt(det D) C_d R^{d+2} D for the ellipsoidal connectivity.

    ``x`` is unused for constant data and kept for call symmetry with the
    variable case, where ``D``, ``R`` and ``d_norm`` are callables of x.
    """
    if callable(D):
        D, R, d_norm = D(x), (R(x) if callable(R) else R), (d_norm(x) if callable(d_norm) else d_norm)
    D = np.atleast_2d(np.asarray(D, dtype=float))
    _check_spd(D)
    if R <= 0 or d_norm <= 0:
        raise InvalidArgument("R and d_norm must be positive")
    d = D.shape[0]
    return 0.5 * d_norm * math.sqrt(np.linalg.det(D)) * ball_moment_constant(d) * R ** (d + 2) * D


@dataclass(frozen=True)
class TensorField:
    """A map x -> d x d matrix.

    ``func`` is batched: points of shape ``(n, d)`` to ``(n, d, d)``.
    ``matrix`` is set for constant fields.
    """

    kind: str
    dim: int
    func: Callable[[np.ndarray], np.ndarray]
    matrix: np.ndarray | None = None

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        single = x.ndim <= 1
        pts = x.reshape(-1, self.dim)
        out = np.asarray(self.func(pts), dtype=float).reshape(len(pts), self.dim, self.dim)
        return out[0] if single else out

    @property
    def is_constant(self) -> bool:
        return self.matrix is not None

    def scaled(self, c: float) -> "TensorField":
        m = None if self.matrix is None else c * self.matrix
        return TensorField(self.kind, self.dim, lambda x: c * self.func(x), m)

    @classmethod
    def constant(cls, matrix) -> "TensorField":
        m = np.atleast_2d(np.asarray(matrix, dtype=float))
        d = m.shape[0]
        return cls("constant", d, lambda x: np.broadcast_to(m, (len(x), d, d)), m)

    @classmethod
    def limit(cls, spec: ConnectivitySpec, base: BaseMeasureSpec, resolution: int = 400) -> "TensorField":
        def f(x):
            return np.stack([tensor_limit(spec, base, p, resolution) for p in x])
        return cls("limit_tensor", spec.dim, f)

    @classmethod
    def closed_form(cls, D, R, d_norm, dim: int) -> "TensorField":
        def f(x):
            return np.stack([tensor_closed_form(D, R, d_norm, p) for p in x])
        if not (callable(D) or callable(R) or callable(d_norm)):
            m = tensor_closed_form(D, R, d_norm)
            return cls("closed_form", dim, f, m)
        return cls("closed_form", dim, f)

    @classmethod
    def epsilon(cls, graph: EpsGraph, spec: ConnectivitySpec) -> "TensorField":
        """T^eps at arbitrary points, summing over the graph's nodes."""
        tree = cKDTree(graph.nodes)
        d = graph.dim

        def f(x):
            out = np.zeros((len(x), d, d))
            for k, p in enumerate(x):
                idx = np.asarray(tree.query_ball_point(p, spec.support_radius * graph.eps), dtype=int)
                off = graph.nodes[idx] - p
                keep = np.any(off != 0, axis=1)
                idx, off = idx[keep], off[keep]
                eta = spec(np.broadcast_to(p, off.shape) + off / 2, -off / graph.eps) / graph.eps ** (d + 2)
                out[k] = 0.5 * np.einsum("k,ki,kj->ij", eta * graph.mu[idx], off, off)
            return out
        return cls("epsilon_tensor", d, f)


def dT_distance(tensor: TensorField, x, y, lattice_spacing: float | None = None,
                padding: float = 0.5) -> float:
    """Distance induced by the Riemannian metric T^{-1}.

    Exact for constant tensors.  Otherwise a shortest path on a lattice over
    the padded bounding box of x and y, moving to the 3^d - 1 neighbours with
    cost sqrt(dx . T^{-1}(midpoint) dx); endpoints are snapped to the lattice,
    so the result is an approximation of order ``lattice_spacing``.
    """
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    diff = y - x
    if tensor.is_constant:
        return float(math.sqrt(max(diff @ np.linalg.solve(tensor.matrix, diff), 0.0)))
    d = len(x)
    if not np.any(diff):
        return 0.0
    h = lattice_spacing or float(np.linalg.norm(diff)) / 32
    lo = np.minimum(x, y) - padding
    hi = np.maximum(x, y) + padding
    shape = np.ceil((hi - lo) / h).astype(int) + 1
    grids = np.meshgrid(*[lo[k] + h * np.arange(shape[k]) for k in range(d)], indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    index = np.arange(len(pts)).reshape(shape)
    rows, cols, costs = [], [], []
    for step in np.ndindex(*([3] * d)):
        step = np.array(step) - 1
        if not np.any(step) or tuple(step) < tuple(-step):
            continue
        sl_a = tuple(slice(max(0, -s), shape[k] - max(0, s)) for k, s in enumerate(step))
        sl_b = tuple(slice(max(0, s), shape[k] - max(0, -s)) for k, s in enumerate(step))
        a = index[sl_a].ravel()
        b = index[sl_b].ravel()
        mid = (pts[a] + pts[b]) / 2
        dx = pts[b] - pts[a]
        Tinv_dx = np.linalg.solve(tensor(mid), dx[..., None])[..., 0]
        c = np.sqrt(np.einsum("ni,ni->n", dx, Tinv_dx))
        rows += [a, b]
        cols += [b, a]
        costs += [c, c]
    n = len(pts)
    adj = sparse.csr_matrix((np.concatenate(costs), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    ia = int(np.argmin(np.linalg.norm(pts - x, axis=1)))
    ib = int(np.argmin(np.linalg.norm(pts - y, axis=1)))
    return float(dijkstra(adj, indices=ia)[ib])


@dataclass
class SamplePlan:
    """Finite sample of (z, w) pairs and base-measure points."""

    z: np.ndarray
    w: np.ndarray
    x: np.ndarray
    quadrature_resolution: int = 200

    @classmethod
    def box(cls, dim: int, support_radius: float, half_width: float = 2.0, n_z: int = 5,
            n_w: int = 41, n_x: int = 201) -> "SamplePlan":
        z_axis = np.linspace(-half_width, half_width, n_z)
        w_axis = np.linspace(-1.2 * support_radius, 1.2 * support_radius, n_w)
        x_axis = np.linspace(-half_width, half_width, n_x if dim == 1 else max(3, int(round(n_x ** (1 / dim)))))
        mk = lambda ax: np.stack([g.ravel() for g in np.meshgrid(*([ax] * dim), indexing="ij")], axis=1)
        res = 200 if dim <= 2 else 40
        return cls(mk(z_axis), mk(w_axis), mk(x_axis), res)


@dataclass
class AssumptionReport:
    constants: dict
    checks: dict

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def lines(self) -> list[str]:
        out = [f"{k:<24s} {'PASS' if v else 'FAIL'}" for k, v in self.checks.items()]
        out += [f"{k:<24s} {v:.6g}" for k, v in self.constants.items()]
        return out


def _lipschitz_estimate(points: np.ndarray, values: np.ndarray) -> float:
    if len(points) < 2:
        return 0.0
    tree = cKDTree(points)
    dist, idx = tree.query(points, k=2)
    dv = np.abs(values - values[idx[:, 1]])
    return float(np.max(dv / np.maximum(dist[:, 1], 1e-300)))


def validate_assumptions(spec: ConnectivitySpec, base: BaseMeasureSpec,
                         plan: SamplePlan | None = None) -> AssumptionReport:
    """Empirical check of the graph assumptions on a finite sample.

    Failures are reported, never raised.  Nondegeneracy is tested through the
    smallest eigenvalue of the quadrature second-moment matrix, which covers
    every direction including the canonical ones.
    """
    d = spec.dim
    plan = plan or SamplePlan.box(d, spec.support_radius)
    z, w, x = plan.z, plan.w, plan.x
    zz = np.repeat(z, len(w), axis=0)
    ww = np.tile(w, (len(z), 1))
    th = spec(zz, ww)
    th_neg = spec(zz, -ww)
    scale = max(1.0, float(np.abs(th).max()))
    wn = np.linalg.norm(ww, axis=1)

    sym_err = float(np.abs(th - th_neg).max())
    support_obs = float(wn[th > 0].max()) if np.any(th > 0) else 0.0
    mom_obs = float((wn**2 * th).max())
    c_nd = min(np.linalg.eigvalsh(second_moment(spec, zi, plan.quadrature_resolution)).min() for zi in z)

    mu_vals = base(x)
    c_mu, C_mu = float(mu_vals.min()), float(mu_vals.max())
    c_meas = unit_ball_volume(d) * spec.support_radius**d
    c_mom = spec.mom_bound if math.isfinite(spec.mom_bound) else mom_obs
    theta_lip = 0.0
    for wk in w[::max(1, len(w) // 50)]:
        theta_lip = max(theta_lip, _lipschitz_estimate(z, spec(z, np.broadcast_to(wk, z.shape))))

    constants = {
        "C_supp": spec.support_radius,
        "support_observed": support_obs,
        "C_mom": c_mom,
        "moment_observed": mom_obs,
        "c_nd": float(c_nd),
        "c_mu": c_mu,
        "C_mu": C_mu,
        "C_meas": c_meas,
        "C_int": C_mu * c_mom * c_meas,
        "lipschitz_mu": _lipschitz_estimate(x, mu_vals),
        "lipschitz_theta_z": theta_lip,
    }
    checks = {
        "theta1_symmetry": sym_err <= 1e-12 * scale,
        "theta3_support": support_obs <= spec.support_radius,
        "theta4_moment": mom_obs <= c_mom * (1 + 1e-12),
        "theta5_nondegenerate": c_nd > 0,
        "mu2_lower_bound": c_mu > 0 and c_mu >= base.lower_bound * (1 - 1e-12),
        "mu2_upper_bound": C_mu <= base.upper_bound * (1 + 1e-12),
    }
    return AssumptionReport(constants, checks)


def write_graph(graph: EpsGraph, path) -> None:
    """Columnar text export; each undirected edge is listed once with i < j."""
    lines = [f"# epsgraph d={graph.dim} eps={graph.eps!r} n={graph.n_nodes}"]
    for i, (p, m) in enumerate(zip(graph.nodes, graph.mu)):
        lines.append("v " + " ".join([str(i)] + [repr(float(c)) for c in p] + [repr(float(m))]))
    once = graph.src < graph.dst
    for i, j, e in zip(graph.src[once], graph.dst[once], graph.eta[once]):
        lines.append(f"e {i} {j} {float(e)!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_graph(path) -> EpsGraph:
    text = Path(path).read_text().splitlines()
    header = text[0].split()
    if header[:2] != ["#", "epsgraph"]:
        raise InvalidArgument(f"{path}: not an epsgraph file")
    meta = dict(tok.split("=") for tok in header[2:])
    d, n, eps = int(meta["d"]), int(meta["n"]), float(meta["eps"])
    nodes = np.zeros((n, d))
    mu = np.zeros(n)
    ei, ej, ee = [], [], []
    for line in text[1:]:
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            k = int(parts[1])
            nodes[k] = [float(c) for c in parts[2:2 + d]]
            mu[k] = float(parts[2 + d])
        elif parts[0] == "e":
            ei.append(int(parts[1]))
            ej.append(int(parts[2]))
            ee.append(float(parts[3]))
    return EpsGraph.from_pairs(eps, nodes, mu, ei, ej, ee)
