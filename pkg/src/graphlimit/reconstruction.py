"""Local vector flux from a nonlocal edge flux by needle superposition.

Each undirected edge ``[x_i, x_j]`` carries the segment measure
``1/2 eta_ij (J_ij - J_ji) nu_ij H^1|segment`` with ``nu_ij`` the unit vector
from ``x_i`` to ``x_j``.  The measure is clipped exactly against an
axis-aligned cell grid and accumulated per cell.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .calculus import EdgeField
from .errors import OutOfBounds
from .geometry import EpsGraph


@dataclass(frozen=True)
class CellGrid:
    """Axis-aligned uniform cells of width ``h``; ``shape[a]`` cells per axis."""

    lower: np.ndarray
    h: float
    shape: tuple

    @classmethod
    def covering(cls, lower, upper, h: float) -> "CellGrid":
        lower = np.atleast_1d(np.asarray(lower, dtype=float))
        upper = np.atleast_1d(np.asarray(upper, dtype=float))
        shape = tuple(int(n) for n in np.ceil((upper - lower) / h - 1e-9).astype(int))
        return cls(lower, float(h), shape)

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.shape))

    @property
    def upper(self) -> np.ndarray:
        return self.lower + self.h * np.asarray(self.shape)

    @property
    def centers(self) -> np.ndarray:
        axes = [self.lower[a] + self.h * (np.arange(n) + 0.5) for a, n in enumerate(self.shape)]
        return np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)

    def locate(self, points: np.ndarray) -> np.ndarray:
        idx = np.floor((points - self.lower) / self.h).astype(int)
        idx = np.clip(idx, 0, np.asarray(self.shape) - 1)
        return np.ravel_multi_index(tuple(idx.T), self.shape)


@dataclass(frozen=True)
class CellVectorFlux:
    """One d-vector per cell plus the point where gradients are sampled.

    ``rep_points`` is the centroid of the needle pieces in each cell,
    weighted by piece length times flux magnitude (cell center for cells
    without flux).
    """

    grid: CellGrid
    vectors: np.ndarray
    rep_points: np.ndarray

    def total_variation(self) -> float:
        return float(np.linalg.norm(self.vectors, axis=1).sum())

    def write_csv(self, path) -> Path:
        """Columns ``cell_id, x1..xd, v1..vd`` at cell centers."""
        path = Path(path)
        d = self.grid.dim
        data = np.column_stack([np.arange(self.grid.n_cells), self.grid.centers, self.vectors])
        header = ",".join(["cell_id"] + [f"x{k + 1}" for k in range(d)] + [f"v{k + 1}" for k in range(d)])
        np.savetxt(path, data, delimiter=",", header=header, comments="",
                   fmt=["%d"] + ["%.17g"] * (2 * d))
        return path


def _segment_pieces(a: np.ndarray, b: np.ndarray, grid: CellGrid):
    """Split segments ``a -> b`` at every grid plane.

    Returns (edge index, piece midpoint, piece length) for pieces of
    positive length.
    """
    E, d = a.shape
    delta = b - a
    cuts = [np.zeros((E, 1)), np.ones((E, 1))]
    for k in range(d):
        lo = np.minimum(a[:, k], b[:, k])
        hi = np.maximum(a[:, k], b[:, k])
        first = np.ceil((lo - grid.lower[k]) / grid.h)
        last = np.floor((hi - grid.lower[k]) / grid.h)
        count = np.maximum(last - first + 1, 0).astype(int)
        width = int(count.max()) if E else 0
        if width == 0:
            continue
        planes = grid.lower[k] + grid.h * (first[:, None] + np.arange(width)[None, :])
        valid = np.arange(width)[None, :] < count[:, None]
        moving = delta[:, k] != 0
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (planes - a[:, k, None]) / delta[:, k, None]
        t = np.where(valid & moving[:, None], t, np.nan)
        cuts.append(np.clip(t, 0.0, 1.0))
    T = np.sort(np.concatenate(cuts, axis=1), axis=1)  # NaNs sort last
    t0, t1 = T[:, :-1], T[:, 1:]
    ok = np.isfinite(t1) & (t1 > t0)
    e_idx = np.nonzero(ok)[0]
    tm = 0.5 * (t0 + t1)[ok]
    frac = (t1 - t0)[ok]
    mid = a[e_idx] + tm[:, None] * delta[e_idx]
    length = frac * np.linalg.norm(delta[e_idx], axis=1)
    return e_idx, mid, length


def needle_pieces(j: EdgeField, graph: EpsGraph, grid: CellGrid):
    """Per-piece data: (cell index, midpoint, vector contribution)."""
    once = np.nonzero(graph.src < graph.dst)[0]
    i, k = graph.src[once], graph.dst[once]
    a, b = graph.nodes[i], graph.nodes[k]
    lo, hi = grid.lower, grid.upper
    tol = 1e-12 * max(1.0, float(np.abs(hi).max()), float(np.abs(lo).max()))
    outside = np.any((a < lo - tol) | (a > hi + tol) | (b < lo - tol) | (b > hi + tol), axis=1)
    if np.any(outside):
        e = int(np.argmax(outside))
        raise OutOfBounds(f"edge ({i[e]}, {k[e]}) leaves the cell grid")
    J = j.values
    weight = 0.5 * graph.eta[once] * (J[once] - J[graph.rev[once]])
    diff = b - a
    nu = diff / np.linalg.norm(diff, axis=1)[:, None]
    e_idx, mid, length = _segment_pieces(a, b, grid)
    vec = (weight[e_idx] * length)[:, None] * nu[e_idx]
    return grid.locate(mid), mid, vec


def reconstruct_local_flux(j: EdgeField, graph: EpsGraph, grid: CellGrid) -> CellVectorFlux:
    """Accumulate the needle measures of all edges into the cells."""
    d = graph.dim
    cells, mid, vec = needle_pieces(j, graph, grid)
    n = grid.n_cells
    vectors = np.zeros((n, d))
    for a in range(d):
        vectors[:, a] = np.bincount(cells, weights=vec[:, a], minlength=n)
    w = np.linalg.norm(vec, axis=1)
    wsum = np.bincount(cells, weights=w, minlength=n)
    rep = grid.centers.copy()
    has = wsum > 0
    for a in range(d):
        num = np.bincount(cells, weights=w * mid[:, a], minlength=n)
        rep[has, a] = num[has] / wsum[has]
    return CellVectorFlux(grid, vectors, rep)


@dataclass(frozen=True)
class TestFunction:
    """A scalar function with its gradient, both batched over points."""

    __test__ = False  # keep pytest from collecting it

    value: Callable[[np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray], np.ndarray]
    name: str = ""

    @classmethod
    def linear(cls, a) -> "TestFunction":
        a = np.asarray(a, dtype=float)
        return cls(lambda x: x @ a, lambda x: np.broadcast_to(a, x.shape), f"linear{a.tolist()}")

    @classmethod
    def quadratic(cls, A, b=None) -> "TestFunction":
        """phi(x) = 1/2 x.A x + b.x with symmetric A."""
        A = np.atleast_2d(np.asarray(A, dtype=float))
        A = 0.5 * (A + A.T)
        b = np.zeros(len(A)) if b is None else np.asarray(b, dtype=float)
        return cls(lambda x: 0.5 * np.einsum("ni,ij,nj->n", x, A, x) + x @ b,
                   lambda x: x @ A + b, "quadratic")

    @classmethod
    def trigonometric(cls, freq) -> "TestFunction":
        """phi(x) = prod_k sin(freq_k x_k + 1)."""
        f = np.asarray(freq, dtype=float)

        def value(x):
            return np.prod(np.sin(x * f + 1.0), axis=1)

        def grad(x):
            s = np.sin(x * f + 1.0)
            c = np.cos(x * f + 1.0) * f
            out = np.empty_like(x)
            for k in range(x.shape[1]):
                others = np.prod(np.delete(s, k, axis=1), axis=1) if x.shape[1] > 1 else 1.0
                out[:, k] = c[:, k] * others
            return out
        return cls(value, grad, "trigonometric")

    @classmethod
    def bump(cls, center, radius: float) -> "TestFunction":
        """Tensor-product C^1 bump prod_k (1 - s_k^2)^2 with s_k = (x_k - c_k)/radius."""
        c = np.asarray(center, dtype=float)

        def parts(x):
            s = (x - c) / radius
            inside = np.abs(s) < 1
            f = np.where(inside, (1 - s**2) ** 2, 0.0)
            df = np.where(inside, -4 * s * (1 - s**2) / radius, 0.0)
            return f, df

        def value(x):
            return np.prod(parts(x)[0], axis=1)

        def grad(x):
            f, df = parts(x)
            out = np.empty_like(x)
            for k in range(x.shape[1]):
                others = np.prod(np.delete(f, k, axis=1), axis=1) if x.shape[1] > 1 else 1.0
                out[:, k] = df[:, k] * others
            return out
        return cls(value, grad, "bump")


def divergence_identity_check(j: EdgeField, graph: EpsGraph, jhat: CellVectorFlux,
                              test_fns: Sequence[TestFunction]) -> float:
    """Max over test functions of |1/2 sum grad(phi) eta J - sum_cells grad phi(rep) . vector|."""
    worst = 0.0
    for phi in test_fns:
        vals = phi.value(graph.nodes)
        lhs = 0.5 * np.sum((vals[graph.dst] - vals[graph.src]) * graph.eta * j.values)
        rhs = float(np.sum(phi.grad(jhat.rep_points) * jhat.vectors))
        worst = max(worst, abs(lhs - rhs))
    return worst
