"""Retrieval scores (NN, first tier, second tier) over a labelled distance matrix.

For a query of class size ``C`` there are ``C - 1`` relevant items (the query
itself is excluded from its ranking). Rankings sort by ascending distance and
break ties by ascending index, so scores are deterministic.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np


@dataclass
class LabeledDistanceMatrix:
    """Symmetric pairwise distances ``D`` with optional labels and item names."""

    D: np.ndarray
    labels: list | None = None
    names: list | None = field(default=None)

    def __post_init__(self):
        self.D = np.asarray(self.D, dtype=float)
        n = len(self.D)
        if self.D.shape != (n, n):
            raise ValueError(f"distance matrix must be square, got {self.D.shape}")
        if self.labels is not None:
            self.labels = list(self.labels)
            if len(self.labels) != n:
                raise ValueError(f"{len(self.labels)} labels for {n} items")
        if self.names is not None:
            self.names = list(self.names)
            if len(self.names) != n:
                raise ValueError(f"{len(self.names)} names for {n} items")

    def __len__(self):
        return len(self.D)

    def validate(self, rtol=1e-9):
        D = self.D
        if np.any(np.diag(D) != 0):
            raise ValueError("distance matrix diagonal must be zero")
        if np.any(D < 0):
            raise ValueError("distances must be nonnegative")
        scale = np.maximum(np.abs(D), np.abs(D.T))
        if np.any(np.abs(D - D.T) > rtol * scale):
            raise ValueError("distance matrix is not symmetric")

    def with_labels(self, labels):
        return LabeledDistanceMatrix(self.D, labels=labels, names=self.names)


def ranking(D, i):
    """Indices of all items except ``i`` by ascending distance, then index."""
    n = len(D)
    others = np.array([j for j in range(n) if j != i], dtype=np.int64)
    order = np.lexsort((others, D[i, others]))
    return others[order]


def evaluate_retrieval(M, labels=None):
    """NN, FT and ST percentages for a labelled distance matrix.

    Parameters
    ----------
    M : LabeledDistanceMatrix
    labels : sequence, optional
        Overrides ``M.labels``.

    Returns
    -------
    dict
        ``{"NN": float, "FT": float, "ST": float, "queries": int,
        "tier_queries": int}``; percentages in ``[0, 100]``.

    Notes
    -----
    Queries whose class has a single member count for NN but are skipped for
    FT/ST (a warning is emitted).
    """
    labels = list(M.labels if labels is None else labels)
    M.validate()
    n = len(M)
    if n < 2:
        raise ValueError("retrieval needs at least two items")
    if len(labels) != n:
        raise ValueError(f"{len(labels)} labels for {n} items")
    lab = np.array([str(x) for x in labels])
    nn_hits = 0
    ft, st = [], []
    singletons = []
    for i in range(n):
        order = ranking(M.D, i)
        same = lab[order] == lab[i]
        nn_hits += bool(same[0])
        relevant = int(np.sum(lab == lab[i])) - 1
        if relevant == 0:
            singletons.append(i)
            continue
        ft.append(same[:relevant].sum() / relevant)
        st.append(same[: 2 * relevant].sum() / relevant)
    if singletons:
        warnings.warn(
            f"{len(singletons)} queries belong to single-member classes and were skipped for FT/ST",
            RuntimeWarning,
            stacklevel=2,
        )
    return {
        "NN": 100.0 * nn_hits / n,
        "FT": 100.0 * float(np.mean(ft)) if ft else float("nan"),
        "ST": 100.0 * float(np.mean(st)) if st else float("nan"),
        "queries": n,
        "tier_queries": len(ft),
    }


def run_retrieval_experiment(meshes, label_sets, params_list, threads=None, names=None):
    """Distance matrix per metric, scored against every label set.

    Parameters
    ----------
    meshes : list of RegisteredMesh
    label_sets : dict
        Label-set name (e.g. ``"shape"``, ``"pose"``) -> labels per mesh.
    params_list : list of MetricParams or "a,lam,c" strings

    Returns
    -------
    list of dict
        One row per (params, label set).
    """
    from .metric import MetricParams, distance_matrix

    rows = []
    for p in params_list:
        p = MetricParams.parse(p)
        M = distance_matrix(meshes, p, names=names, threads=threads)
        for set_name, labels in label_sets.items():
            scores = evaluate_retrieval(M, labels)
            rows.append({"params": list(p.as_tuple()), "labels": set_name, **scores})
    return rows


def format_table(rows):
    lines = [f"{'Metric':<28} {'Labels':<10} {'NN':>6} {'FT':>6} {'ST':>6}", "-" * 60]
    for r in rows:
        a, lam, c = r["params"]
        name = f"Metric ({a:g}, {lam:g}, {c:g})"
        lines.append(f"{name:<28} {r['labels']:<10} {r['NN']:6.1f} {r['FT']:6.1f} {r['ST']:6.1f}")
    return "\n".join(lines)


def write_report(path, rows):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"results": rows}, fh, indent=2, sort_keys=True)
        fh.write("\n")
