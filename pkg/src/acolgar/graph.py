"""Example-similarity graphs from network activations (YYᵀ and BBᵀ) and their
connected-component structure."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np


@dataclass
class ActivityGraph:
    m: int
    adjacency: np.ndarray
    tau: float
    edges: np.ndarray  # E × 2, i < j


@dataclass
class ComponentStats:
    delta: int
    sizes: list
    mean_degree: list
    spanning_subgraph: Optional[bool] = None


def percentile_threshold(adjacency: np.ndarray, q: float = 90.0) -> float:
    """q-th percentile of the off-diagonal entries."""
    m = adjacency.shape[0]
    iu = np.triu_indices(m, k=1)
    if iu[0].size == 0:
        return 0.0
    return float(np.percentile(adjacency[iu], q))


def build_graph(features: np.ndarray, tau: Optional[float] = None, q: float = 90.0) -> ActivityGraph:
    """Adjacency A = features·featuresᵀ; edge (i, j), i != j, iff A_ij > tau.

    With ``tau=None`` the threshold is the ``q``-th percentile of off-diagonal A.
    """
    f = np.asarray(features, dtype=np.float64)
    a = f @ f.T
    a = np.triu(a) + np.triu(a, 1).T  # exact symmetry
    if tau is None:
        tau = percentile_threshold(a, q)
    if tau < 0:
        raise ValueError("tau must be non-negative")
    iu = np.triu_indices(len(f), k=1)
    keep = a[iu] > tau
    edges = np.stack([iu[0][keep], iu[1][keep]], axis=1)
    return ActivityGraph(m=len(f), adjacency=a, tau=float(tau), edges=edges)


class UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))
        self.rank = [0] * n

    def find(self, x: int) -> int:
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return
        if self.rank[ra] < self.rank[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        if self.rank[ra] == self.rank[rb]:
            self.rank[ra] += 1


def component_labels(m: int, edges: np.ndarray) -> np.ndarray:
    uf = UnionFind(m)
    for i, j in edges:
        uf.union(int(i), int(j))
    roots = np.array([uf.find(i) for i in range(m)])
    _, labels = np.unique(roots, return_inverse=True)
    return labels


def connected_components(g: ActivityGraph) -> ComponentStats:
    labels = component_labels(g.m, g.edges)
    degree = np.zeros(g.m, dtype=np.int64)
    if len(g.edges):
        np.add.at(degree, g.edges[:, 0], 1)
        np.add.at(degree, g.edges[:, 1], 1)
    delta = int(labels.max()) + 1 if g.m else 0
    sizes = np.bincount(labels, minlength=delta)
    mean_deg = np.bincount(labels, weights=degree, minlength=delta) / sizes
    # largest components first
    order = np.argsort(-sizes, kind="stable")
    return ComponentStats(delta=delta, sizes=sizes[order].tolist(), mean_degree=mean_deg[order].tolist())


@dataclass
class SpanningReport:
    fraction: float
    is_subset: bool
    edges_m: int
    edges_y: int


def spanning_check(g_y: ActivityGraph, g_m: ActivityGraph) -> SpanningReport:
    """Fraction of G_M's edges that are also edges of G_Y."""
    if g_y.m != g_m.m:
        raise ValueError(f"graphs have different vertex counts ({g_y.m} vs {g_m.m})")
    ey = {(int(i), int(j)) for i, j in g_y.edges}
    em = [(int(i), int(j)) for i, j in g_m.edges]
    if not em:
        return SpanningReport(1.0, True, 0, len(ey))
    hit = sum(1 for e in em if e in ey)
    return SpanningReport(hit / len(em), hit == len(em), len(em), len(ey))


def write_edges_csv(path, g: ActivityGraph) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["i", "j", "weight"])
        for i, j in g.edges:
            w.writerow([int(i), int(j), repr(float(g.adjacency[i, j]))])


def stats_json(stats: ComponentStats, **extra) -> str:
    d = asdict(stats)
    d.update(extra)
    return json.dumps(d, indent=2, sort_keys=True)
