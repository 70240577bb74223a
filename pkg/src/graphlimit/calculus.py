"""Nonlocal calculus on an :class:`EpsGraph`.

Edge fields are arrays aligned with ``graph.src`` / ``graph.dst``.  The
nonlocal gradient of a node function is ``phi[dst] - phi[src]`` and the
divergence is the negative eta-weighted adjoint of that gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import InvalidArgument
from .geometry import EpsGraph


@dataclass(frozen=True)
class NodeMeasure:
    """Nonnegative masses on a fixed node set."""

    masses: np.ndarray
    total: float = field(init=False)

    def __post_init__(self):
        m = np.asarray(self.masses, dtype=float)
        if m.ndim != 1:
            raise InvalidArgument("masses must be one-dimensional")
        if np.any(m < 0) or not np.all(np.isfinite(m)):
            raise InvalidArgument("masses must be finite and nonnegative")
        object.__setattr__(self, "masses", m)
        object.__setattr__(self, "total", float(m.sum()))

    def __len__(self):
        return len(self.masses)

    @classmethod
    def dirac(cls, n: int, k: int) -> "NodeMeasure":
        m = np.zeros(n)
        m[k] = 1.0
        return cls(m)

    @classmethod
    def normalized(cls, weights) -> "NodeMeasure":
        w = np.asarray(weights, dtype=float)
        return cls(w / w.sum())


@dataclass(frozen=True)
class EdgeField:
    """One value per ordered edge of a graph.

    Both orientations are stored explicitly; ``antisymmetric`` records that
    ``values[rev] == -values`` holds.
    """

    values: np.ndarray
    antisymmetric: bool = True

    def __len__(self):
        return len(self.values)

    def check_antisymmetry(self, graph: EpsGraph, atol: float = 1e-12) -> bool:
        return bool(np.all(np.abs(self.values + self.values[graph.rev]) <= atol))

    def __add__(self, other: "EdgeField") -> "EdgeField":
        return EdgeField(self.values + other.values, self.antisymmetric and other.antisymmetric)

    def __mul__(self, c: float) -> "EdgeField":
        return EdgeField(c * self.values, self.antisymmetric)

    __rmul__ = __mul__

    @classmethod
    def zeros(cls, graph: EpsGraph) -> "EdgeField":
        return cls(np.zeros(graph.n_edges))


def _pairwise_diff(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return x[:, None, :] - y[None, :, :]


@dataclass(frozen=True)
class InteractionKernel:
    """Symmetric interaction kernel K with an optional external potential P.

    ``value(x, y)`` and ``grad(x, y)`` act on point batches ``(n, d)`` and
    ``(m, d)`` and return ``(n, m)`` and ``(n, m, d)`` arrays; ``grad`` is the
    gradient in the first argument.  ``potential`` and ``potential_grad`` map
    ``(n, d)`` to ``(n,)`` and ``(n, d)``.
    """

    kind: str
    value: Callable[[np.ndarray, np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray, np.ndarray], np.ndarray]
    potential: Callable[[np.ndarray], np.ndarray] | None = None
    potential_grad: Callable[[np.ndarray], np.ndarray] | None = None
    lipschitz_data: tuple | None = None
    params: dict = field(default_factory=dict)

    @classmethod
    def quadratic(cls, **kw) -> "InteractionKernel":
        """Attractive K(x, y) = |x - y|^2 / 2."""
        def value(x, y):
            diff = _pairwise_diff(x, y)
            return 0.5 * np.einsum("nmd,nmd->nm", diff, diff)

        def grad(x, y):
            return _pairwise_diff(x, y)

        return cls("quadratic", value, grad, lipschitz_data=(1.0, 0.0), **kw)

    @classmethod
    def gaussian(cls, width: float = 1.0, **kw) -> "InteractionKernel":
        """Attractive K(x, y) = -exp(-|x - y|^2 / (2 width^2))."""
        if width <= 0:
            raise InvalidArgument("gaussian width must be positive")
        s2 = width**2

        def value(x, y):
            diff = _pairwise_diff(x, y)
            return -np.exp(-np.einsum("nmd,nmd->nm", diff, diff) / (2 * s2))

        def grad(x, y):
            diff = _pairwise_diff(x, y)
            k = np.exp(-np.einsum("nmd,nmd->nm", diff, diff) / (2 * s2))
            return diff * (k / s2)[..., None]

        return cls("gaussian", value, grad, lipschitz_data=(1.0 / s2, 0.0),
                   params={"width": width}, **kw)

    @classmethod
    def zero(cls, **kw) -> "InteractionKernel":
        return cls("zero", lambda x, y: np.zeros((len(x), len(y))),
                   lambda x, y: np.zeros((len(x), len(y), x.shape[1])), **kw)

    @classmethod
    def custom(cls, value, grad, **kw) -> "InteractionKernel":
        return cls("custom", value, grad, **kw)

    def with_potential(self, potential, potential_grad) -> "InteractionKernel":
        return InteractionKernel(self.kind, self.value, self.grad, potential, potential_grad,
                                 self.lipschitz_data, dict(self.params))

    def scaled(self, c: float) -> "InteractionKernel":
        """Kernel and potential multiplied by ``c``."""
        P = None if self.potential is None else (lambda x: c * self.potential(x))
        dP = None if self.potential_grad is None else (lambda x: c * self.potential_grad(x))
        return InteractionKernel(self.kind, lambda x, y: c * self.value(x, y),
                                 lambda x, y: c * self.grad(x, y), P, dP,
                                 self.lipschitz_data, dict(self.params))

    def potential_values(self, x: np.ndarray) -> np.ndarray:
        if self.potential is None:
            return np.zeros(len(x))
        return np.asarray(self.potential(x), dtype=float).reshape(len(x))

    def potential_gradient(self, x: np.ndarray) -> np.ndarray:
        if self.potential_grad is None:
            return np.zeros_like(x)
        return np.asarray(self.potential_grad(x), dtype=float).reshape(x.shape)

    def matrix(self, nodes: np.ndarray) -> np.ndarray:
        return np.asarray(self.value(nodes, nodes), dtype=float)


def nonlocal_gradient(phi, graph: EpsGraph) -> EdgeField:
    """Edge field ``phi_j - phi_i`` on each ordered edge ``(i, j)``."""
    phi = np.asarray(phi, dtype=float)
    if phi.shape != (graph.n_nodes,):
        raise InvalidArgument(f"phi must have shape ({graph.n_nodes},)")
    return EdgeField(phi[graph.dst] - phi[graph.src], True)


def nonlocal_divergence(j: EdgeField, graph: EpsGraph) -> np.ndarray:
    """(div j)_i = 1/2 sum_j eta_ij (j_ij - j_ji)."""
    vals = j.values
    flux = 0.5 * graph.eta * (vals - vals[graph.rev])
    return np.bincount(graph.src, weights=flux, minlength=graph.n_nodes)


def convolve(kernel: InteractionKernel, rho: NodeMeasure, graph: EpsGraph,
             kmat: np.ndarray | None = None) -> np.ndarray:
    """(K * rho)_i = sum_k K(x_i, x_k) m_k by direct summation.

    ``kmat`` lets time-steppers reuse the kernel matrix on fixed nodes.
    """
    if kmat is None:
        kmat = kernel.matrix(graph.nodes)
    return kmat @ rho.masses


def velocity_field(kernel: InteractionKernel, rho: NodeMeasure, graph: EpsGraph,
                   kmat: np.ndarray | None = None) -> EdgeField:
    """v = -grad(K * rho + P) as an antisymmetric edge field."""
    potential = convolve(kernel, rho, graph, kmat) + kernel.potential_values(graph.nodes)
    g = nonlocal_gradient(potential, graph)
    return EdgeField(-g.values, True)


def upwind_flux(rho: NodeMeasure, graph: EpsGraph, v: EdgeField) -> EdgeField:
    """j_ij = (v_ij)_+ m_i mu_j - (v_ij)_- mu_i m_j.

    At ``v_ij = 0`` both parts vanish, so no tie-breaking is needed.
    """
    m, mu = rho.masses, graph.mu
    s, t = graph.src, graph.dst
    vp = np.maximum(v.values, 0.0)
    vm = np.maximum(-v.values, 0.0)
    return EdgeField(vp * m[s] * mu[t] - vm * mu[s] * m[t], True)
