"""Shared setups for the test suites."""

import numpy as np

from graphlimit.calculus import InteractionKernel, NodeMeasure
from graphlimit.geometry import BaseMeasureSpec, ConnectivitySpec, build_graph

QUADRATIC = InteractionKernel.quadratic()
BALL1 = ConnectivitySpec.ball(1)
UNIFORM = BaseMeasureSpec.uniform()


def line_nodes(h, lo=-2.0, hi=2.0):
    return lo + h * np.arange(int(round((hi - lo) / h)) + 1)


def interval_profile(x, slope=0.5, lo=-1.0, hi=1.0):
    """Normalized weights proportional to 1 + slope x on [lo, hi]."""
    w = np.where((x >= lo - 1e-12) & (x <= hi + 1e-12), 1.0 + slope * x, 0.0)
    return w / w.sum()


def line_setup(h=0.05, eps=0.2, slope=0.5, base=UNIFORM):
    """Graph on [-2, 2] with spacing h and rho0 ~ (1 + slope x) on [-1, 1]."""
    x = line_nodes(h)
    graph = build_graph(x, base, BALL1, eps, h)
    return graph, NodeMeasure(interval_profile(x, slope))
