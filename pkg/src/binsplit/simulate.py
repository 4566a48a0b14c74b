"""Event-driven continuous-time simulation of the averaging dynamics, the
particle-splitting dynamics (unlabeled, labeled, and multicolored), with
reproducible counter-based random streams.

Scheduling draws one global exponential clock at the total conductance rate
and picks the edge proportionally to its conductance, which is equal in law
to independent per-edge clocks.  Each replica owns a Philox stream keyed by
(seed, replica_id), so replicas parallelize with no shared state and results
do not depend on thread count.  Per event the draw order is fixed: holding
time, edge choice, then the redistribution draws; in the per-particle mode
the redistribution consumes one uniform per pooled particle in canonical
(color ascending by source vertex, particle index) order, which makes the
color-blind sum of the multicolored run coincide pathwise with an uncolored
run under the same seed.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .graphs import SiteWeights, WeightedGraph

__all__ = [
    "SimOptions",
    "make_rng",
    "sample_binomial",
    "next_event",
    "simulate_averaging",
    "simulate_splitting",
    "simulate_splitting_labeled",
    "simulate_multicolored",
    "dump_trajectories_csv",
]

COUPLING_MODES = ("fast_binomial", "per_particle_bernoulli")


def make_rng(seed: int, replica_id: int = 0, stream: int = 0) -> np.random.Generator:
    """Philox stream keyed by (seed, replica_id, stream); bit-stable across runs.

    ``stream`` separates independent draw purposes inside one replica (0 for
    the event stream, nonzero for auxiliary draws such as random initial
    states), so consumers never share or reuse a stream.
    """
    if not (0 <= replica_id < 1 << 56):
        raise ValueError("replica_id must fit in 56 bits")
    key = np.array([seed & 0xFFFFFFFFFFFFFFFF,
                    (replica_id | (stream << 56)) & 0xFFFFFFFFFFFFFFFF],
                   dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class SimOptions:
    """Run length, snapshot times, and stream identity for one trajectory."""

    t_end: float
    record_times: tuple = ()
    seed: int = 0
    replica_id: int = 0
    coupling_mode: str = "fast_binomial"

    def __post_init__(self):
        rec = tuple(float(t) for t in self.record_times)
        if any(b < a for a, b in zip(rec, rec[1:])):
            raise ValueError("record_times must be sorted ascending")
        if rec and (rec[0] < 0.0 or rec[-1] > self.t_end):
            raise ValueError("record_times must lie inside [0, t_end]")
        if self.coupling_mode not in COUPLING_MODES:
            raise ValueError(f"coupling_mode must be one of {COUPLING_MODES}")
        object.__setattr__(self, "record_times", rec)


def sample_binomial(m: int, p: float, rng: np.random.Generator) -> int:
    """Exact Binomial(m, p) draw.

    CDF inversion (single uniform, success ratio kept <= 1/2 via symmetry)
    for m <= 64; above that, the generator's exact rejection sampler.  Never
    a normal approximation.
    """
    if not (0.0 <= p <= 1.0):
        raise ValueError("p must lie in [0, 1]")
    if m < 0:
        raise ValueError("m must be nonnegative")
    if m == 0 or p == 0.0:
        return 0
    if p == 1.0:
        return m
    if m > 64:
        return int(rng.binomial(m, p))
    if p > 0.5:
        return m - sample_binomial(m, 1.0 - p, rng)
    u = rng.random()
    q = (1.0 - p) ** m
    ratio = p / (1.0 - p)
    cdf = q
    j = 0
    while u > cdf and j < m:
        j += 1
        q *= (m - j + 1) / j * ratio
        cdf += q
    return j


class _EdgePicker:
    """Cumulative-conductance table for O(log E) proportional edge choice."""

    def __init__(self, graph: WeightedGraph):
        self.cum = np.cumsum(graph.edge_c).tolist()
        self.total = self.cum[-1]
        self.n_edges = len(self.cum)

    def pick(self, u: float) -> int:
        idx = bisect_right(self.cum, u * self.total)
        return min(idx, self.n_edges - 1)


@lru_cache(maxsize=16)
def _sim_tables(graph: WeightedGraph, weights: SiteWeights):
    """Per-(graph, weights) tables shared by replicas: edge picker, endpoint
    lists, and the x-side split probability of every edge."""
    pi = weights.pi
    xs = [int(x) for x in graph.edge_x]
    ys = [int(y) for y in graph.edge_y]
    px = [float(pi[x] / (pi[x] + pi[y])) for x, y in zip(xs, ys)]
    return _EdgePicker(graph), xs, ys, px


def next_event(graph: WeightedGraph, rng: np.random.Generator,
               picker: _EdgePicker | None = None):
    """Holding time (exponential at the total conductance) and edge index."""
    if graph.n_edges == 0:
        raise ValueError("graph has no edges")
    if picker is None:
        picker = _EdgePicker(graph)
    dt = rng.standard_exponential() / picker.total
    edge = picker.pick(rng.random())
    return dt, edge


def simulate_averaging(graph: WeightedGraph, weights: SiteWeights, eta0,
                       opts: SimOptions, return_drift: bool = False):
    """States of the averaging dynamics at the requested record times.

    Long trajectories are guarded against float drift: if the running mass
    leaves 1 by more than 1e-12 the state is rescaled and a drift counter
    incremented (dynamics unchanged within rounding).
    """
    rng = make_rng(opts.seed, opts.replica_id)
    picker, exs, eys, px = _sim_tables(graph, weights)
    eta = [float(v) for v in np.asarray(eta0, dtype=float)]
    total = math.fsum(eta)
    drift = 0
    rec = opts.record_times
    out = []
    t = 0.0
    i = 0
    while i < len(rec):
        dt = rng.standard_exponential() / picker.total
        e = picker.pick(rng.random())
        t_new = t + dt
        while i < len(rec) and rec[i] < t_new:
            out.append(np.array(eta))
            i += 1
        if i >= len(rec):
            break
        x, y = exs[e], eys[e]
        pooled = eta[x] + eta[y]
        new_x = px[e] * pooled
        new_y = pooled - new_x
        total += (new_x + new_y) - pooled
        eta[x] = new_x
        eta[y] = new_y
        if abs(total - 1.0) > 1e-12:
            eta = [v / total for v in eta]
            total = math.fsum(eta)
            drift += 1
        t = t_new
    if return_drift:
        return out, drift
    return out


def _redistribute_counts(state, x: int, y: int, p: float, mode: str,
                         rng: np.random.Generator) -> None:
    """Re-split the particles sitting on one edge of a single occupation list."""
    m = state[x] + state[y]
    if mode == "fast_binomial":
        if m == 0:
            return
        k_x = sample_binomial(m, p, rng)
    else:
        u = rng.random(m)
        k_x = int(np.count_nonzero(u < p))
    state[x] = k_x
    state[y] = m - k_x


def simulate_splitting(graph: WeightedGraph, weights: SiteWeights, xi0,
                       opts: SimOptions):
    """Occupation vectors of the unlabeled particle system at record times."""
    rng = make_rng(opts.seed, opts.replica_id)
    picker, exs, eys, px = _sim_tables(graph, weights)
    xi = [int(v) for v in np.asarray(xi0)]
    if any(v < 0 for v in xi):
        raise ValueError("occupation counts must be nonnegative")
    rec = opts.record_times
    out = []
    t = 0.0
    i = 0
    while i < len(rec):
        dt = rng.standard_exponential() / picker.total
        e = picker.pick(rng.random())
        t_new = t + dt
        while i < len(rec) and rec[i] < t_new:
            out.append(np.array(xi, dtype=np.int64))
            i += 1
        if i >= len(rec):
            break
        _redistribute_counts(xi, exs[e], eys[e], px[e], opts.coupling_mode, rng)
        t = t_new
    return out


def simulate_splitting_labeled(graph: WeightedGraph, weights: SiteWeights, xs0,
                               opts: SimOptions):
    """Position tuples of the labeled particle system at record times.

    Coordinates on the updated edge are re-placed independently, consuming
    one uniform per affected coordinate in coordinate order.
    """
    rng = make_rng(opts.seed, opts.replica_id)
    picker, exs, eys, px = _sim_tables(graph, weights)
    xs = [int(v) for v in xs0]
    rec = opts.record_times
    out = []
    t = 0.0
    i = 0
    while i < len(rec):
        dt = rng.standard_exponential() / picker.total
        e = picker.pick(rng.random())
        t_new = t + dt
        while i < len(rec) and rec[i] < t_new:
            out.append(tuple(xs))
            i += 1
        if i >= len(rec):
            break
        x, y, p = exs[e], eys[e], px[e]
        active = [j for j, v in enumerate(xs) if v == x or v == y]
        if active:
            u = rng.random(len(active))
            for t_idx, j in enumerate(active):
                xs[j] = x if u[t_idx] < p else y
        t = t_new
    return out


def simulate_multicolored(graph: WeightedGraph, weights: SiteWeights, xi0,
                          opts: SimOptions):
    """Color-resolved occupation matrices (color z = source vertex) at record
    times, all colors driven by one shared edge-update stream.

    Starts from the grand coupling of the configuration ``xi0``: the xi0(z)
    particles initially on vertex z carry color z.  Requires the
    per-particle coupling mode, because all colors must consume the shared
    per-particle draws; the faster single-binomial mode would break the
    pathwise color-sum identity.
    """
    if opts.coupling_mode != "per_particle_bernoulli":
        raise ValueError(
            "multicolored runs require coupling_mode='per_particle_bernoulli': "
            "colors share one per-particle draw stream, so the color-blind sum "
            "reproduces the uncolored run pathwise"
        )
    rng = make_rng(opts.seed, opts.replica_id)
    picker, exs, eys, px = _sim_tables(graph, weights)
    n = graph.n
    xi0 = np.asarray(xi0, dtype=np.int64)
    state = np.zeros((n, n), dtype=np.int64)  # row = color, col = vertex
    for z in range(n):
        state[z, z] = xi0[z]
    rec = opts.record_times
    out = []
    t = 0.0
    i = 0
    while i < len(rec):
        dt = rng.standard_exponential() / picker.total
        e = picker.pick(rng.random())
        t_new = t + dt
        while i < len(rec) and rec[i] < t_new:
            out.append(state.copy())
            i += 1
        if i >= len(rec):
            break
        x, y, p = exs[e], eys[e], px[e]
        m_per_color = state[:, x] + state[:, y]
        u = rng.random(int(m_per_color.sum()))
        offset = 0
        for z in range(n):
            m_z = int(m_per_color[z])
            if m_z == 0:
                continue
            k_x = int(np.count_nonzero(u[offset:offset + m_z] < p))
            offset += m_z
            state[z, x] = k_x
            state[z, y] = m_z - k_x
        t = t_new
    return out


def dump_trajectories_csv(path, results, record_times, kind: str) -> None:
    """Write trajectories as `replica,t,state...` rows.

    State column layout by process kind: ``avg`` mass per vertex 0..n-1;
    ``bin`` occupation per vertex; ``labeled`` position per particle 1..k;
    ``multicolored`` occupation flattened color-major (color 0 block first).
    """
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# trajectory dump kind={kind}; columns: replica,t,state...\n")
        first = next(iter(results.values()))[0]
        width = np.asarray(first).reshape(-1).size
        header = ",".join(f"s{j}" for j in range(width))
        fh.write(f"replica,t,{header}\n")
        for replica in sorted(results):
            states = results[replica]
            for t, state in zip(record_times, states):
                flat = np.asarray(state).reshape(-1)
                vals = ",".join(repr(float(v)) if kind == "avg" else str(int(v))
                                for v in flat)
                fh.write(f"{replica},{t!r},{vals}\n")
