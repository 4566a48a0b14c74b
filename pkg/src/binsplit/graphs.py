"""Weighted graphs and site-weights on which the mass/particle dynamics run.

A graph is undirected and connected, with a strictly positive conductance
c_xy (rate units, 1/time) on every edge.  Site-weights are a strictly
positive probability vector over the vertices; they control how an edge
splits the pooled mass or particles between its endpoints.

Vertex indexing conventions of the builders:

* ``path``, ``cycle``, ``complete``: vertices are 0..n-1 in the obvious order.
* ``torus``: coordinates map to indices row-major (last axis fastest),
  i.e. ``index = ravel_multi_index(coord, dims)``.
* ``sierpinski``: vertices are the lattice points of the level-L gasket,
  sorted lexicographically by their integer (row, col) coordinates.
* ``percolation_box``: vertices of the retained cluster keep the row-major
  box order and are re-indexed densely in increasing order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

MAX_SIERPINSKI_LEVEL = 7  # level-8 gasket would hold ~10k vertices; cap memory

__all__ = [
    "WeightedGraph",
    "SiteWeights",
    "PercolationRetry",
    "build_graph",
    "path_graph",
    "cycle_graph",
    "torus_graph",
    "complete_graph",
    "sierpinski_graph",
    "percolation_box_graph",
    "custom_graph",
    "uniform_weights",
    "site_weights",
    "ellipticity_ratio",
    "load_edge_list",
    "load_site_weights",
]


class PercolationRetry(ValueError):
    """Open cluster too small to be usable; retry with another seed."""


def _check_connected(n: int, edges) -> bool:
    if n == 1:
        return True
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for x, y, _ in edges:
        rx, ry = find(x), find(y)
        if rx != ry:
            parent[rx] = ry
    root = find(0)
    return all(find(v) == root for v in range(n))


@dataclass(frozen=True, eq=False)
class WeightedGraph:
    """Undirected connected graph with positive edge conductances.

    ``edges`` is a tuple of (x, y, c_xy) with x < y after normalization.
    Derived arrays (``edge_x``, ``edge_y``, ``edge_c``) and the adjacency
    index are built once; instances are immutable (identity-hashed, so they
    can key per-graph caches) and safe to share across threads.
    """

    n: int
    edges: tuple
    edge_x: np.ndarray = field(init=False, repr=False, compare=False)
    edge_y: np.ndarray = field(init=False, repr=False, compare=False)
    edge_c: np.ndarray = field(init=False, repr=False, compare=False)
    neighbors: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("graph needs at least one vertex")
        norm = []
        seen = set()
        for (x, y, c) in self.edges:
            x, y = int(x), int(y)
            if not (0 <= x < self.n and 0 <= y < self.n):
                raise ValueError(f"edge ({x},{y}) out of range for n={self.n}")
            if x == y:
                raise ValueError(f"self-loop at vertex {x}")
            c = float(c)
            if not (c > 0.0) or not math.isfinite(c):
                raise ValueError(f"conductance on edge ({x},{y}) must be positive, got {c}")
            key = (min(x, y), max(x, y))
            if key in seen:
                raise ValueError(f"duplicate undirected edge {key}")
            seen.add(key)
            norm.append((key[0], key[1], c))
        if not _check_connected(self.n, norm):
            raise ValueError("graph is not connected")
        object.__setattr__(self, "edges", tuple(norm))
        object.__setattr__(self, "edge_x", np.array([e[0] for e in norm], dtype=np.int64))
        object.__setattr__(self, "edge_y", np.array([e[1] for e in norm], dtype=np.int64))
        object.__setattr__(self, "edge_c", np.array([e[2] for e in norm], dtype=float))
        adj = [[] for _ in range(self.n)]
        for (x, y, c) in norm:
            adj[x].append((y, c))
            adj[y].append((x, c))
        object.__setattr__(self, "neighbors", tuple(tuple(a) for a in adj))

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def total_conductance(self) -> float:
        return float(self.edge_c.sum())

    def degree_annotated_canonical(self):
        """Canonical sort of degree-annotated edges, for isomorphism fingerprints."""
        deg = [len(a) for a in self.neighbors]
        items = sorted(
            (tuple(sorted((deg[x], deg[y]))), round(c, 12)) for (x, y, c) in self.edges
        )
        return tuple(items)


@dataclass(frozen=True, eq=False)
class SiteWeights:
    """Strictly positive probability vector over the vertices."""

    pi: np.ndarray

    def __post_init__(self):
        pi = np.asarray(self.pi, dtype=float)
        if pi.ndim != 1 or pi.size < 1:
            raise ValueError("site-weights must be a non-empty 1-d vector")
        if not np.all(pi > 0.0):
            raise ValueError("site-weights must be strictly positive everywhere")
        if abs(float(pi.sum()) - 1.0) > 1e-12:
            raise ValueError(f"site-weights must sum to 1 within 1e-12, got {pi.sum()!r}")
        object.__setattr__(self, "pi", pi)

    @property
    def n(self) -> int:
        return self.pi.size


def uniform_weights(n: int) -> SiteWeights:
    """Uniform site-weights 1/n on n vertices."""
    if n < 1:
        raise ValueError("need at least one vertex")
    return SiteWeights(np.full(n, 1.0 / n))


def site_weights(values) -> SiteWeights:
    """Site-weights from an arbitrary positive vector, normalized to sum 1."""
    v = np.asarray(values, dtype=float)
    if v.ndim != 1 or v.size < 1 or not np.all(v > 0):
        raise ValueError("site-weights must be a positive 1-d vector")
    return SiteWeights(v / v.sum())


def ellipticity_ratio(weights: SiteWeights) -> float:
    """max pi(x) / min pi(y); equals 1 exactly for uniform weights."""
    pi = weights.pi
    return float(pi.max() / pi.min())


def _apply_conductance(pairs, conductance):
    if np.isscalar(conductance):
        c = float(conductance)
        if not c > 0:
            raise ValueError("conductance must be positive")
        return [(x, y, c) for (x, y) in pairs]
    cs = [float(c) for c in conductance]
    if len(cs) != len(pairs):
        raise ValueError(f"need {len(pairs)} conductances, got {len(cs)}")
    return [(x, y, c) for (x, y), c in zip(pairs, cs)]


def path_graph(size: int, conductance=1.0) -> WeightedGraph:
    if size < 1:
        raise ValueError("path size must be >= 1")
    pairs = [(i, i + 1) for i in range(size - 1)]
    return WeightedGraph(size, tuple(_apply_conductance(pairs, conductance)))


def cycle_graph(size: int, conductance=1.0) -> WeightedGraph:
    if size < 2:
        raise ValueError("cycle size must be >= 2")
    if size == 2:
        # wrap-around duplicates the single edge; keep one
        pairs = [(0, 1)]
    else:
        pairs = [(i, (i + 1) % size) for i in range(size)]
    return WeightedGraph(size, tuple(_apply_conductance(pairs, conductance)))


def torus_graph(dims, conductance=1.0) -> WeightedGraph:
    """Periodic lattice on prod(dims) vertices; row-major coordinate order.

    Axes of size 1 contribute no edges; axes of size 2 contribute a single
    (not doubled) edge per wrap pair.
    """
    dims = [int(d) for d in dims]
    if len(dims) < 1 or any(d < 1 for d in dims):
        raise ValueError("torus dims must be >= 1")
    n = int(np.prod(dims))
    pairs = []
    seen = set()
    for flat in range(n):
        coord = list(np.unravel_index(flat, dims))
        for ax, d in enumerate(dims):
            if d == 1:
                continue
            nb = coord.copy()
            nb[ax] = (nb[ax] + 1) % d
            j = int(np.ravel_multi_index(nb, dims))
            if j == flat:
                continue
            key = (min(flat, j), max(flat, j))
            if key not in seen:
                seen.add(key)
                pairs.append(key)
    pairs.sort()
    return WeightedGraph(n, tuple(_apply_conductance(pairs, conductance)))


def complete_graph(size: int, conductance=1.0) -> WeightedGraph:
    if size < 2:
        raise ValueError("complete graph size must be >= 2")
    pairs = [(i, j) for i in range(size) for j in range(i + 1, size)]
    return WeightedGraph(size, tuple(_apply_conductance(pairs, conductance)))


def sierpinski_graph(level: int, conductance=1.0) -> WeightedGraph:
    """Level-L gasket approximation with unit-side triangles.

    Vertices are integer points (row, col) with 0 <= col <= row <= 2**L that
    survive the recursive corner subdivision; the index map sorts them
    lexicographically.
    """
    if level < 0:
        raise ValueError("level must be >= 0")
    if level > MAX_SIERPINSKI_LEVEL:
        raise ValueError(f"level capped at {MAX_SIERPINSKI_LEVEL} to bound memory")
    edges = set()

    def recurse(r, c, size):
        # triangle with apex (r, c), spanning `size` rows downward
        if size == 1:
            v0 = (r, c)
            v1 = (r + 1, c)
            v2 = (r + 1, c + 1)
            for a, b in ((v0, v1), (v0, v2), (v1, v2)):
                edges.add((min(a, b), max(a, b)))
            return
        half = size // 2
        recurse(r, c, half)
        recurse(r + half, c, half)
        recurse(r + half, c + half, half)

    recurse(0, 0, 2 ** level)
    verts = sorted({v for e in edges for v in e})
    index = {v: i for i, v in enumerate(verts)}
    pairs = sorted((index[a], index[b]) for (a, b) in edges)
    return WeightedGraph(len(verts), tuple(_apply_conductance(pairs, conductance)))


def percolation_box_graph(dims, p_open: float, seed: int, conductance=1.0) -> WeightedGraph:
    """Largest open cluster of bond percolation in a (non-periodic) box.

    Each nearest-neighbor bond of the box is kept independently with
    probability ``p_open``, using a counter-based stream keyed by ``seed``
    (bit-identical across runs).  The largest connected cluster is retained;
    a cluster below 2 vertices, or below half the box volume, raises
    :class:`PercolationRetry` (supercritical fingerprint regime only).
    """
    dims = [int(d) for d in dims]
    if any(d < 1 for d in dims):
        raise ValueError("box dims must be >= 1")
    if not (0.0 < p_open <= 1.0):
        raise ValueError("p_open must lie in (0, 1]")
    n = int(np.prod(dims))
    bonds = []
    for flat in range(n):
        coord = list(np.unravel_index(flat, dims))
        for ax, d in enumerate(dims):
            if coord[ax] + 1 < d:
                nb = coord.copy()
                nb[ax] += 1
                bonds.append((flat, int(np.ravel_multi_index(nb, dims))))
    rng = np.random.Generator(np.random.Philox(key=np.array([seed, 0], dtype=np.uint64)))
    keep = rng.random(len(bonds)) < p_open
    open_bonds = [b for b, k in zip(bonds, keep) if k]

    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for x, y in open_bonds:
        rx, ry = find(x), find(y)
        if rx != ry:
            parent[rx] = ry
    comp = {}
    for v in range(n):
        comp.setdefault(find(v), []).append(v)
    cluster = max(comp.values(), key=len)
    if len(cluster) < 2:
        raise PercolationRetry(
            f"largest open cluster has {len(cluster)} vertex; retry with another seed"
        )
    if len(cluster) < n / 2:
        raise PercolationRetry(
            f"largest open cluster covers {len(cluster)}/{n} vertices (< half the box); "
            "increase p_open or retry with another seed"
        )
    cluster_sorted = sorted(cluster)
    remap = {v: i for i, v in enumerate(cluster_sorted)}
    inside = set(cluster_sorted)
    pairs = sorted(
        (remap[min(x, y)], remap[max(x, y)])
        for (x, y) in open_bonds
        if x in inside and y in inside
    )
    return WeightedGraph(len(cluster_sorted), tuple(_apply_conductance(pairs, conductance)))


def custom_graph(edge_list, n: int | None = None, conductance=None) -> WeightedGraph:
    """Graph from explicit (x, y[, c]) triples; rejected if disconnected."""
    triples = []
    for e in edge_list:
        if len(e) == 3:
            triples.append((int(e[0]), int(e[1]), float(e[2])))
        elif len(e) == 2:
            triples.append((int(e[0]), int(e[1]), 1.0))
        else:
            raise ValueError(f"edge entries must be (x, y) or (x, y, c), got {e!r}")
    if conductance is not None:
        triples = _apply_conductance([(x, y) for (x, y, _) in triples], conductance)
    if n is None:
        n = 1 + max(max(x, y) for (x, y, _) in triples) if triples else 1
    return WeightedGraph(n, tuple(triples))


def build_graph(kind: str, *, size=None, dims=None, level=None, p_open=None,
                seed=None, edge_list=None, conductance=1.0) -> WeightedGraph:
    """Dispatch builder: kind in {path, cycle, torus, complete, sierpinski,
    percolation_box, custom}."""
    if kind == "path":
        return path_graph(size, conductance)
    if kind == "cycle":
        return cycle_graph(size, conductance)
    if kind == "torus":
        return torus_graph(dims, conductance)
    if kind == "complete":
        return complete_graph(size, conductance)
    if kind == "sierpinski":
        return sierpinski_graph(level, conductance)
    if kind == "percolation_box":
        if seed is None:
            raise ValueError("percolation_box needs a seed")
        return percolation_box_graph(dims, p_open, seed, conductance)
    if kind == "custom":
        return custom_graph(edge_list, conductance=None if conductance == 1.0 else conductance)
    raise ValueError(f"unknown graph kind {kind!r}")


def load_edge_list(path) -> list:
    """Read `x y c_xy` triples, one per line; `#` starts a comment."""
    triples = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 3:
                raise ValueError(f"{path}:{lineno}: expected 'x y c_xy', got {line!r}")
            triples.append((int(parts[0]), int(parts[1]), float(parts[2])))
    return triples


def load_site_weights(path) -> SiteWeights:
    """Read one weight per line (comments allowed); normalizes to sum 1."""
    vals = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if line:
                vals.append(float(line))
    return site_weights(vals)
