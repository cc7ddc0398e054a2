"""Karcher mean of registered bodies under the elastic distance.

The mean is searched as ``f_bar = f_init + sum_j beta_j D_j`` where ``f_init``
is one of the input shapes (the first by default) and ``D_j`` a deformation
basis; ``beta`` minimises the sum of squared distances to all shapes. The
result therefore depends on which shape seeds the search.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateFaceError, TopologyMismatchError
from .geodesic import DeformationBasis
from .mesh import RegisteredMesh, extract_geometry, geometry_backprop
from .metric import MetricParams, pair_value_and_grads
from .optim import OptimConfig, minimize


@dataclass(eq=False)
class KarcherProblem:
    shapes: list
    basis: DeformationBasis
    params: MetricParams
    init_index: int = 0

    def __post_init__(self):
        self.shapes = list(self.shapes)
        if not self.shapes:
            raise ValueError("need at least one shape")
        self.params = MetricParams.parse(self.params)
        topo = self.shapes[0].topology
        for s in self.shapes[1:]:
            if s.topology is not topo:
                raise TopologyMismatchError("all shapes must share one template topology")
        if self.basis.vertex_count != topo.vertex_count:
            raise TopologyMismatchError("basis vertex count differs from the shapes")
        if not 0 <= self.init_index < len(self.shapes):
            raise ValueError(f"init_index {self.init_index} out of range for {len(self.shapes)} shapes")
        self._geoms = None

    @property
    def seed(self):
        return self.shapes[self.init_index]

    def mean_for(self, beta):
        return self.seed.with_positions(self.seed.positions + self.basis.combine(beta))

    def geometries(self):
        if self._geoms is None:
            self._geoms = [extract_geometry(s) for s in self.shapes]
        return self._geoms


def karcher_objective(beta, problem, want_grad=True):
    """Sum of squared distances from ``f_bar(beta)`` to every shape, and its gradient."""
    beta = np.asarray(beta, dtype=float).ravel()
    mean = problem.mean_for(beta)
    G = extract_geometry(mean)
    nf = len(G)
    dg = np.zeros((nf, 3))
    dn = np.zeros((nf, 3))
    values = []
    for Gi in problem.geometries():
        v, _, (gb, nb) = pair_value_and_grads(Gi, G, problem.params, want_grad)
        values.append(v)
        if want_grad:
            dg += gb
            dn += nb
    # correctly rounded sum: the value does not depend on the order of the shapes
    V = math.fsum(values)
    if not want_grad:
        return V, None
    return V, problem.basis.project(geometry_backprop(mean, G, dg, dn))


def per_shape_distances(problem, mean):
    from .metric import body_distance_sq

    G = extract_geometry(mean)
    return [body_distance_sq(Gi, G, problem.params).distance for Gi in problem.geometries()]


def compute_karcher_mean(problem, config=None):
    """Minimise the Karcher functional from ``beta = 0``.

    Returns
    -------
    (RegisteredMesh, OptimReport)
    """

    def fun(beta):
        try:
            return karcher_objective(beta, problem)
        except DegenerateFaceError:
            return np.inf, np.full(problem.basis.size, np.nan)

    report = minimize(fun, np.zeros(problem.basis.size), config or OptimConfig())
    return problem.mean_for(report.final_point), report


def write_report(path, problem, mean, report):
    dists = per_shape_distances(problem, mean)
    data = {
        "params": list(problem.params.as_tuple()),
        "init_index": problem.init_index,
        "final_value": report.final_value,
        "initial_value": report.value_history[0],
        "per_shape_distances": dists,
        "iterations": report.iterations,
        "converged": bool(report.converged),
        "message": report.message,
        "beta": [float(b) for b in report.final_point],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return data
