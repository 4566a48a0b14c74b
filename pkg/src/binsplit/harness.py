"""Config-driven experiment runner: gap sweeps, cutoff profiles, averaging
mixing profiles, the complete-graph crossing experiment, heat-kernel
dimension fits, and the deterministic verification battery.

CSV contract: profile files carry the header
``experiment,k,t,t_normalized,value,stderr,kind`` after a single
``# generated ...`` timestamp comment; floats are written with ``repr`` so
re-runs with the same config and seed are byte-identical apart from the
timestamp line.  Every file the harness writes can be read back with
:func:`read_profile_csv` / :func:`read_table`.
"""

from __future__ import annotations

import datetime as _dt
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import yaml

from . import averaging, distances, duality, simulate, spectral
from .graphs import (SiteWeights, WeightedGraph, build_graph, load_edge_list,
                     load_site_weights, site_weights, uniform_weights)

__all__ = [
    "ProfileRecord",
    "ExperimentConfig",
    "load_config",
    "resolve_graph",
    "resolve_weights",
    "resolve_time_grid",
    "mixing_time",
    "window_times",
    "precutoff_exponents",
    "precutoff_times",
    "complete_graph_crossing_time",
    "level_crossing_time",
    "run_gap_sweep",
    "run_cutoff_bin",
    "run_avg_profile",
    "run_complete_cdsz",
    "run_nash",
    "run_verify",
    "write_profile_csv",
    "read_profile_csv",
    "write_table",
    "read_table",
    "write_svg_line",
    "VERIFY_CHECKS",
]

EXACT_MODE_STATE_CAP = 200_000
WORST_START_ENUM_MAX_N = 16


@dataclass(frozen=True)
class ProfileRecord:
    """One observation row of a profile experiment."""

    experiment: str
    k: int
    t: float
    t_normalized: float
    value: float
    stderr: float
    kind: str


@dataclass
class ExperimentConfig:
    """Declarative description of one experiment run."""

    graph: dict = field(default_factory=lambda: {"kind": "cycle", "size": 5})
    weights: dict = field(default_factory=lambda: {"kind": "uniform"})
    process: str = "bin"
    k: list = field(default_factory=lambda: [1])
    times: dict = field(default_factory=lambda: {"mode": "trel", "multiples": [0.5, 1, 2, 3, 4]})
    replicas: int = 200
    seed: int = 0
    tol: float = 1e-9
    out: str | None = None
    threads: int = 1
    p_norm: float = 2.0
    window_C: list = field(default_factory=lambda: [1.0])
    eta0: object = None
    extra: dict = field(default_factory=dict)


def load_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        raw = yaml.safe_load(fh) or {}
    known = {f for f in ExperimentConfig.__dataclass_fields__}
    kwargs = {k: v for k, v in raw.items() if k in known and k != "extra"}
    extra = {k: v for k, v in raw.items() if k not in known}
    extra.update(raw.get("extra") or {})
    return ExperimentConfig(**kwargs, extra=extra)


def resolve_graph(spec: dict) -> WeightedGraph:
    spec = dict(spec)
    spec.pop("label", None)
    kind = spec.pop("kind")
    if kind == "custom" and "path" in spec:
        spec["edge_list"] = load_edge_list(spec.pop("path"))
    return build_graph(kind, **spec)


def resolve_weights(spec: dict, n: int) -> SiteWeights:
    kind = spec.get("kind", "uniform")
    if kind == "uniform":
        return uniform_weights(n)
    if kind == "file":
        return load_site_weights(spec["path"])
    if kind == "values":
        return site_weights(spec["values"])
    raise ValueError(f"unknown weights kind {kind!r}")


def mixing_time(t_rel: float, k: int) -> float:
    """(t_rel / 2) log k, the reference time of the abrupt transition."""
    return 0.5 * t_rel * math.log(k)


def window_times(t_rel: float, k: int, C: float):
    """(t_minus, t_plus) around the mixing time, window C t_rel wide."""
    tm = mixing_time(t_rel, k)
    return tm - C * t_rel, tm + C * t_rel


def precutoff_exponents(n: int, k: int):
    """High-density slope corrections a = 2 log(k/n)/log k, b = 2 log n/log k."""
    if k <= 1:
        raise ValueError("need k > 1")
    a = 2.0 * math.log(k / n) / math.log(k)
    b = 2.0 * math.log(n) / math.log(k)
    return a, b


def precutoff_times(n: int, k: int, t_rel: float, C: float):
    """(T_plus, T_minus) bracketing times in the k >> n^2 regime."""
    a, b = precutoff_exponents(n, k)
    T_plus = a * 0.5 * t_rel * math.log(k) + C * t_rel
    T_minus = b * 0.5 * t_rel * math.log(k) - C * t_rel
    return T_plus, T_minus


def complete_graph_crossing_time(n: int) -> float:
    """log(n) / (n log 2): reference crossing time on the complete graph."""
    return math.log(n) / (n * math.log(2.0))


def resolve_time_grid(spec: dict, t_rel: float, k: int | None = None):
    """Concrete strictly increasing times from a declarative grid spec.

    Modes: ``absolute`` (values as given); ``trel`` (multiples of t_rel,
    either an explicit list or start/stop/num with linear or log spacing);
    ``tmix_window`` (the mixing time for k plus/minus C t_rel for each C).
    """
    mode = spec.get("mode", "absolute")
    if mode == "absolute":
        times = [float(t) for t in spec["values"]]
    elif mode == "trel":
        if "multiples" in spec:
            mult = [float(m) for m in spec["multiples"]]
        else:
            num = int(spec.get("num", 20))
            start, stop = float(spec["start"]), float(spec["stop"])
            if spec.get("spacing", "linear") == "log":
                mult = list(np.geomspace(start, stop, num))
            else:
                mult = list(np.linspace(start, stop, num))
        times = [m * t_rel for m in mult]
    elif mode == "tmix_window":
        if k is None:
            raise ValueError("tmix_window grid needs k")
        tm = mixing_time(t_rel, k)
        times = sorted({tm} | {tm + s * float(C) * t_rel
                               for C in spec.get("C", [1.0]) for s in (-1, 1)})
        times = [t for t in times if t > 0]
    else:
        raise ValueError(f"unknown time grid mode {mode!r}")
    if any(b <= a for a, b in zip(times, times[1:])):
        raise ValueError("time grid must be strictly increasing")
    return times


# ---------------------------------------------------------------------------
# CSV / SVG emission

PROFILE_COLUMNS = ("experiment", "k", "t", "t_normalized", "value", "stderr", "kind")


def write_table(path, columns, rows) -> None:
    """Comma-separated table with a timestamp comment and a header row."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# generated {_dt.datetime.now().isoformat()}\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(row[c]) for c in columns) + "\n")


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def read_table(path):
    """Read a harness CSV back: (columns, list of dicts with parsed values)."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh if not ln.startswith("#")]
    columns = lines[0].split(",")
    rows = []
    for ln in lines[1:]:
        if not ln:
            continue
        vals = ln.split(",")
        row = {}
        for c, v in zip(columns, vals):
            try:
                row[c] = int(v)
            except ValueError:
                try:
                    row[c] = float(v)
                except ValueError:
                    row[c] = v
        rows.append(row)
    return columns, rows


def write_profile_csv(path, records) -> None:
    rows = [{
        "experiment": r.experiment, "k": r.k, "t": r.t,
        "t_normalized": r.t_normalized, "value": r.value,
        "stderr": r.stderr, "kind": r.kind,
    } for r in records]
    write_table(path, PROFILE_COLUMNS, rows)


def read_profile_csv(path):
    _, rows = read_table(path)
    return [ProfileRecord(experiment=str(r["experiment"]), k=int(r["k"]),
                          t=float(r["t"]), t_normalized=float(r["t_normalized"]),
                          value=float(r["value"]), stderr=float(r["stderr"]),
                          kind=str(r["kind"]))
            for r in rows]


def write_svg_line(path, xs, ys, title: str = "", width: int = 640,
                   height: int = 400) -> None:
    """Minimal single-series SVG line chart (cosmetic; the CSV is the contract)."""
    xs = [float(x) for x in xs]
    ys = [float(y) for y in ys]
    pad = 40
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    xr = (x1 - x0) or 1.0
    yr = (y1 - y0) or 1.0

    def sx(x):
        return pad + (x - x0) / xr * (width - 2 * pad)

    def sy(y):
        return height - pad - (y - y0) / yr * (height - 2 * pad)

    pts = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(xs, ys))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">\n')
        fh.write(f'<text x="{width // 2}" y="16" text-anchor="middle" font-size="13">{title}</text>\n')
        fh.write(f'<rect x="{pad}" y="{pad}" width="{width - 2 * pad}" height="{height - 2 * pad}" '
                 f'fill="none" stroke="#999"/>\n')
        for frac in (0.0, 0.5, 1.0):
            fh.write(f'<text x="{sx(x0 + frac * xr):.1f}" y="{height - pad + 14}" '
                     f'text-anchor="middle" font-size="10">{x0 + frac * xr:.3g}</text>\n')
            fh.write(f'<text x="{pad - 4}" y="{sy(y0 + frac * yr):.1f}" '
                     f'text-anchor="end" font-size="10">{y0 + frac * yr:.3g}</text>\n')
        fh.write(f'<polyline fill="none" stroke="#1f77b4" stroke-width="1.5" points="{pts}"/>\n')
        fh.write("</svg>\n")


def level_crossing_time(ts, vals, level: float) -> float:
    """First time a decreasing profile crosses a level (linear interpolation)."""
    ts = list(ts)
    vals = list(vals)
    for i, v in enumerate(vals):
        if v <= level:
            if i == 0:
                return ts[0]
            t0, t1 = ts[i - 1], ts[i]
            v0, v1 = vals[i - 1], vals[i]
            if v0 == v1:
                return t1
            return t0 + (t1 - t0) * (v0 - level) / (v0 - v1)
    return math.nan


# ---------------------------------------------------------------------------
# Experiments


def run_gap_sweep(config: ExperimentConfig):
    """Spectral gaps of the k-particle systems across the graph suite,
    flagging any relative deviation from the single-particle gap above 1e-8."""
    graph_specs = config.extra.get("graphs") or [config.graph]
    rows = []
    for gspec in graph_specs:
        graph = resolve_graph(gspec)
        weights = resolve_weights(config.weights, graph.n)
        label = gspec.get("label") or gspec["kind"]
        gap1 = None
        for k in config.k:
            try:
                space = spectral.enumerate_configs(graph.n, k)
            except spectral.StateSpaceCapError as err:
                rows.append({"graph": label, "k": k, "gap": math.nan,
                             "rel_dev": math.nan, "status": f"skipped: {err}"})
                continue
            Q = spectral.generator_splitting(graph, weights, k, space)
            mu = spectral.multinomial_measure(weights, k, space)
            spec_k = spectral.spectral_gap(Q, mu)
            if gap1 is None:
                s1 = distances.single_particle_spectrum(graph, weights)
                gap1 = s1.gap
            rel = abs(spec_k.gap / gap1 - 1.0)
            rows.append({"graph": label, "k": k, "gap": spec_k.gap,
                         "rel_dev": rel,
                         "status": "ok" if rel <= 1e-8 else "FLAG"})
    if config.out:
        write_table(os.path.join(config.out, "gap_sweep.csv"),
                    ("graph", "k", "gap", "rel_dev", "status"), rows)
    return rows


def _worst_dirac_starts(graph: WeightedGraph, seed: int):
    if graph.n <= WORST_START_ENUM_MAX_N:
        return list(range(graph.n))
    rng = simulate.make_rng(seed, 0, stream=3)
    return sorted(rng.choice(graph.n, size=WORST_START_ENUM_MAX_N, replace=False).tolist())


def run_cutoff_bin(config: ExperimentConfig):
    """Worst-start TV profiles of the particle system for each k.

    Exact profiles (all particles piled on one vertex, worst over starts)
    when the occupation space fits; otherwise the upper/lower bracket from
    the averaged L^2 error and Wilson's statistic.  Rows tagged ``tmix``,
    ``t_plus``, ``t_minus`` annotate the reference times.
    """
    graph = resolve_graph(config.graph)
    weights = resolve_weights(config.weights, graph.n)
    spec1 = distances.single_particle_spectrum(graph, weights)
    t_rel = spec1.t_rel
    records = []
    for k in config.k:
        times = resolve_time_grid(config.times, t_rel, k)
        size = math.comb(graph.n + k - 1, k)
        exact = size <= EXACT_MODE_STATE_CAP
        if exact:
            space = spectral.enumerate_configs(graph.n, k)
            worst = np.zeros(len(times))
            for v in _worst_dirac_starts(graph, config.seed):
                xi0 = np.zeros(graph.n, dtype=np.int64)
                xi0[v] = k
                prof = distances.tv_profile_exact(graph, weights, k, xi0, times,
                                                  config.tol, space)
                worst = np.maximum(worst, [d for _, d in prof])
            for t, d in zip(times, worst):
                records.append(ProfileRecord("cutoff", k, t, t / t_rel, float(d),
                                             0.0, "exact_tv"))
        else:
            for t in times:
                w2 = distances.worst_l2_sq(graph, weights, t, config.tol,
                                           seed=config.seed)
                records.append(ProfileRecord("cutoff", k, t, t / t_rel,
                                             distances.tv_bound_from_l2(k, w2),
                                             0.0, "upper"))
                lb = 0.0
                for v in _worst_dirac_starts(graph, config.seed):
                    eta = np.zeros(graph.n)
                    eta[v] = 1.0
                    rep = distances.wilson_report(graph, weights, k, eta, t)
                    lb = max(lb, rep.lower_bound)
                records.append(ProfileRecord("cutoff", k, t, t / t_rel, lb,
                                             0.0, "lower"))
        tm = mixing_time(t_rel, k) if k > 1 else 0.0
        records.append(ProfileRecord("cutoff", k, tm, tm / t_rel, tm, 0.0, "tmix"))
        for C in config.window_C:
            lo, hi = window_times(t_rel, k, float(C)) if k > 1 else (0.0, 0.0)
            records.append(ProfileRecord("cutoff", k, hi, hi / t_rel, float(C), 0.0, "t_plus"))
            records.append(ProfileRecord("cutoff", k, lo, lo / t_rel, float(C), 0.0, "t_minus"))
        if k > 1 and k > graph.n ** 2:
            a, b = precutoff_exponents(graph.n, k)
            for C in config.window_C:
                Tp, Tm = precutoff_times(graph.n, k, t_rel, float(C))
                records.append(ProfileRecord("cutoff", k, Tp, Tp / t_rel, a, 0.0, "precutoff_t_plus"))
                records.append(ProfileRecord("cutoff", k, Tm, Tm / t_rel, b, 0.0, "precutoff_t_minus"))
    if config.out:
        write_profile_csv(os.path.join(config.out, "cutoff.csv"), records)
        _maybe_svg(config.out, "cutoff", records, "exact_tv")
    return records


def _resolve_eta0(config: ExperimentConfig, graph: WeightedGraph) -> np.ndarray:
    eta0 = config.eta0
    if eta0 is None:
        eta0 = {"dirac": 0}
    if isinstance(eta0, dict) and "dirac" in eta0:
        out = np.zeros(graph.n)
        out[int(eta0["dirac"])] = 1.0
        return out
    return averaging.as_simplex(np.asarray(eta0, float))


def run_avg_profile(config: ExperimentConfig):
    """Monte Carlo transport-distance profiles of the averaging dynamics,
    with the exact evolved-density lower curve alongside."""
    if config.replicas < 100:
        raise ValueError("averaging profiles need at least 100 replicas")
    graph = resolve_graph(config.graph)
    weights = resolve_weights(config.weights, graph.n)
    spec1 = distances.single_particle_spectrum(graph, weights)
    t_rel = spec1.t_rel
    eta0 = _resolve_eta0(config, graph)
    p = config.p_norm
    records = []
    for k in config.k:
        times = resolve_time_grid(config.times, t_rel, k)
        means, errs = _wasserstein_profile(graph, weights, eta0, times, p,
                                           config.replicas, config.seed,
                                           config.threads)
        scale = math.sqrt(k)
        for t, m, s in zip(times, means, errs):
            records.append(ProfileRecord("avg_profile", k, t, t / t_rel, m, s,
                                         "wasserstein"))
            records.append(ProfileRecord("avg_profile", k, t, t / t_rel,
                                         scale * m, scale * s, "wasserstein_scaled"))
        for t in times:
            h = distances.evolved_density(graph, weights, eta0, t)
            lower = float(np.sum(weights.pi * np.abs(h - 1.0) ** p) ** (1.0 / p))
            records.append(ProfileRecord("avg_profile", k, t, t / t_rel, lower,
                                         0.0, "lower"))
    if config.out:
        write_profile_csv(os.path.join(config.out, "avg_profile.csv"), records)
        _maybe_svg(config.out, "avg_profile", records, "wasserstein")
    return records


def _wasserstein_profile(graph, weights, eta0, times, p, replicas, seed, threads):
    def one(replica: int):
        opts = simulate.SimOptions(t_end=times[-1], record_times=tuple(times),
                                   seed=seed, replica_id=replica)
        states = simulate.simulate_averaging(graph, weights, eta0, opts)
        return [averaging.transport_norm(s, weights, p) for s in states]

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            all_vals = list(pool.map(one, range(replicas)))
    else:
        all_vals = [one(r) for r in range(replicas)]
    arr = np.array(all_vals)  # replicas x times
    means = arr.mean(axis=0)
    errs = arr.std(axis=0, ddof=1) / math.sqrt(replicas)
    return means, errs


def run_complete_cdsz(config: ExperimentConfig):
    """L^1 transport profile on the complete graph around the reference
    crossing time log(n)/(n log 2), with the crossing location reported.

    All Dirac starts are equivalent by vertex symmetry, so the sup over
    starts is realized by the single pile-at-0 profile.
    """
    graph = resolve_graph(config.graph)
    n = graph.n
    if n < 64:
        raise ValueError("complete-graph crossing experiment needs n >= 64")
    weights = resolve_weights(config.weights, n)
    t_star = complete_graph_crossing_time(n)
    tspec = config.times
    if tspec.get("mode") == "tstar":
        mult = tspec.get("multiples", list(np.linspace(0.3, 1.8, 25)))
        times = [float(m) * t_star for m in mult]
    else:
        spec1 = distances.single_particle_spectrum(graph, weights)
        times = resolve_time_grid(tspec, spec1.t_rel)
    eta0 = _resolve_eta0(config, graph)
    means, errs = _wasserstein_profile(graph, weights, eta0, times, 1.0,
                                       config.replicas, config.seed,
                                       config.threads)
    records = [ProfileRecord("cdsz", 1, t, t / t_star, float(m), float(s), "wasserstein")
               for t, m, s in zip(times, means, errs)]
    crossing = level_crossing_time(times, means, 1.0)
    records.append(ProfileRecord("cdsz", 1, crossing, crossing / t_star, crossing,
                                 0.0, "crossing"))
    records.append(ProfileRecord("cdsz", 1, crossing, crossing / t_star,
                                 crossing / t_star, 0.0, "crossing_ratio"))
    if config.out:
        write_profile_csv(os.path.join(config.out, "cdsz.csv"), records)
        _maybe_svg(config.out, "cdsz", records, "wasserstein")
    return records


def run_nash(config: ExperimentConfig):
    """Heat-kernel decay profiles and effective-dimension diagnoses."""
    graph_specs = config.extra.get("graphs") or [config.graph]
    rows = []
    records = []
    for gspec in graph_specs:
        graph = resolve_graph(gspec)
        weights = resolve_weights(config.weights, graph.n)
        label = gspec.get("label") or gspec["kind"]
        spec1 = distances.single_particle_spectrum(graph, weights)
        grid_spec = config.extra.get("nash_grid")
        if grid_spec:
            grid = resolve_time_grid(grid_spec, spec1.t_rel)
        else:
            grid = list(np.geomspace(spec1.t_rel / 100.0, spec1.t_rel, 48))
        prof = distances.heat_kernel_max_profile(graph, weights, grid)
        for t, h in zip(grid, prof):
            records.append(ProfileRecord("nash", 1, float(t), float(t / spec1.t_rel),
                                         float(h), 0.0, f"profile:{label}"))
        diag = distances.nash_diagnose(graph, weights, grid)
        rows.append({
            "graph": label,
            "d_hat": diag.fit.d_hat if diag.fit else math.nan,
            "t_nash_hat": diag.fit.t_nash_hat if diag.fit else math.nan,
            "r_squared": diag.fit.r_squared if diag.fit else math.nan,
            "finite_dimensional": diag.finite_dimensional,
            "reason": diag.reason.replace(",", ";"),
        })
    if config.out:
        write_table(os.path.join(config.out, "nash_summary.csv"),
                    ("graph", "d_hat", "t_nash_hat", "r_squared",
                     "finite_dimensional", "reason"), rows)
        write_profile_csv(os.path.join(config.out, "nash_profiles.csv"), records)
    return rows


def _maybe_svg(out_dir, name, records, kind):
    pts = [(r.t, r.value) for r in records if r.kind == kind]
    if len(pts) >= 2:
        xs, ys = zip(*sorted(pts))
        write_svg_line(os.path.join(out_dir, f"{name}.svg"), xs, ys, title=name)


# ---------------------------------------------------------------------------
# Deterministic verification battery


def _check_intertwining():
    graph = build_graph("path", size=3)
    weights = site_weights([0.2, 0.3, 0.5])
    rng = simulate.make_rng(7, 0, stream=4)
    worst = 0.0
    for k in (1, 2):
        space = spectral.enumerate_configs(3, k)
        for _ in range(25):
            f = rng.standard_normal(space.size)
            eta = rng.dirichlet(np.ones(3))
            worst = max(worst, duality.intertwining_residual(graph, weights, k,
                                                             f, eta, space))
    return worst, 1e-12


def _labeled_duality_residual(centered: bool) -> float:
    graph = build_graph("path", size=3)
    weights = site_weights([0.2, 0.3, 0.5])
    k = 2
    Q = spectral.generator_splitting_labeled(graph, weights, k).toarray()
    tuples = spectral.labeled_states(3, k)
    rng = simulate.make_rng(11, 0, stream=4)
    dual = duality.orthogonal_duality if centered else duality.moment_duality
    worst = 0.0
    for _ in range(30):
        eta = rng.dirichlet(np.ones(3))
        dvec = np.array([dual(xs, eta, weights) for xs in tuples])
        rhs = Q @ dvec
        for i, xs in enumerate(tuples):
            lhs = averaging.avg_generator_apply(lambda e: dual(xs, e, weights),
                                                eta, graph, weights)
            worst = max(worst, abs(lhs - rhs[i]))
    return worst


def _check_moment_duality():
    return _labeled_duality_residual(False), 1e-10


def _check_orthogonal_duality():
    return _labeled_duality_residual(True), 1e-10


def _check_self_duality():
    graph = build_graph("cycle", size=3)
    weights = uniform_weights(3)
    res = duality.selfduality_residual(graph, weights, k=1, ell=2, t=0.7, tol=1e-9)
    return res, 1e-7


def _check_jk_intertwining():
    graph = build_graph("path", size=3)
    weights = site_weights([0.25, 0.3, 0.45])
    s2 = spectral.enumerate_configs(3, 2)
    s3 = spectral.enumerate_configs(3, 3)
    Q2 = spectral.generator_splitting(graph, weights, 2, s2).toarray()
    Q3 = spectral.generator_splitting(graph, weights, 3, s3).toarray()
    J = duality.particle_removal_matrix(s3, s2)
    return float(np.max(np.abs(Q3 @ J - J @ Q2))), 1e-11


def _check_jk_injective():
    s2 = spectral.enumerate_configs(3, 2)
    s3 = spectral.enumerate_configs(3, 3)
    J = duality.particle_removal_matrix(s3, s2)
    deficiency = s2.size - np.linalg.matrix_rank(J)
    return float(deficiency), 0.5


def _check_adjointness():
    weights = site_weights([0.2, 0.3, 0.5])
    rng = simulate.make_rng(13, 0, stream=4)
    worst = 0.0
    for k in (2, 3):
        for i in (1, k):
            psi = duality.TensorFunction(3, k - 1, rng.standard_normal(3 ** (k - 1)))
            phi = duality.TensorFunction(3, k, rng.standard_normal(3 ** k))
            lhs = duality.inner_product(duality.annihilate(psi, i), phi, weights)
            rhs = duality.inner_product(psi, duality.create(phi, i, weights), weights)
            worst = max(worst, abs(lhs - rhs))
    return worst, 1e-12


def _check_f_psi_eigen():
    graph = build_graph("path", size=3)
    weights = site_weights([0.2, 0.3, 0.5])
    Q = spectral.generator_splitting_labeled(graph, weights, 2)
    mu2 = spectral.product_weights(weights, 2)
    lam = spectral.spectral_gap(Q, mu2).gap
    rng = simulate.make_rng(17, 0, stream=4)
    # all eigenfunctions at the gap eigenvalue
    A = -Q.toarray()
    A = (np.sqrt(mu2)[:, None] * A) / np.sqrt(mu2)[None, :]
    A = 0.5 * (A + A.T)
    w, V = np.linalg.eigh(A)
    worst = 0.0
    for j in np.nonzero(np.abs(w - lam) <= 1e-9 * max(lam, 1.0))[0]:
        psi = duality.TensorFunction(3, 2, V[:, j] / np.sqrt(mu2))
        for _ in range(10):
            eta = rng.dirichlet(np.ones(3))
            lhs = averaging.avg_generator_apply(
                lambda e: duality.eigenfunction_observable(psi, e, weights),
                eta, graph, weights)
            rhs = -lam * duality.eigenfunction_observable(psi, eta, weights)
            worst = max(worst, abs(lhs - rhs))
    return worst, 1e-9


def _check_dirichlet_ordering():
    graph = build_graph("cycle", size=4)
    weights = site_weights([0.1, 0.2, 0.3, 0.4])
    Q2 = spectral.generator_splitting_labeled(graph, weights, 2)
    mu2 = spectral.product_weights(weights, 2)
    rng = simulate.make_rng(19, 0, stream=4)
    worst = 0.0
    for _ in range(200):
        psi2 = rng.standard_normal(16)
        e_pair = spectral.dirichlet_form(Q2, mu2, psi2)
        e_ind = spectral.dirichlet_independent_pair(graph, weights, psi2)
        worst = max(worst, 0.5 * e_ind - e_pair, e_pair - e_ind)
    return worst, 1e-12


def _check_dirichlet_identity():
    graph = build_graph("cycle", size=4)
    weights = site_weights([0.1, 0.2, 0.3, 0.4])
    Q2 = spectral.generator_splitting_labeled(graph, weights, 2)
    mu2 = spectral.product_weights(weights, 2)
    rng = simulate.make_rng(23, 0, stream=4)
    worst = 0.0
    for _ in range(100):
        psi2 = rng.standard_normal(16)
        e_pair = spectral.dirichlet_form(Q2, mu2, psi2)
        e_ind = spectral.dirichlet_independent_pair(graph, weights, psi2)
        defect = spectral.dirichlet_defect_form(graph, weights, psi2)
        worst = max(worst, abs(e_pair - (e_ind - defect)))
    return worst, 1e-10


def _check_gap_identity():
    graph = build_graph("path", size=3)
    weights = site_weights([0.2, 0.3, 0.5])
    gap1 = distances.single_particle_spectrum(graph, weights).gap
    worst = 0.0
    for k in (2, 3):
        space = spectral.enumerate_configs(3, k)
        Q = spectral.generator_splitting(graph, weights, k, space)
        mu = spectral.multinomial_measure(weights, k, space)
        worst = max(worst, abs(spectral.spectral_gap(Q, mu).gap / gap1 - 1.0))
    return worst, 1e-9


def _check_aldous_lanoue():
    graph = build_graph("cycle", size=4)
    weights = site_weights([0.1, 0.2, 0.3, 0.4])
    rng = simulate.make_rng(29, 0, stream=4)
    worst = 0.0
    for _ in range(1000):
        eta = rng.dirichlet(np.ones(4))
        e = graph.edges[int(rng.integers(graph.n_edges))]
        before = averaging.transport_norm(eta, weights, 2.0) ** 2
        after = averaging.transport_norm(
            averaging.edge_update(eta, (e[0], e[1]), weights), weights, 2.0) ** 2
        worst = max(worst, abs((after - before) -
                               averaging.l2_drop(eta, (e[0], e[1]), weights)))
    return worst, 1e-12


def _check_multinomial_tv_bound():
    weights = site_weights([0.2, 0.3, 0.5])
    rng = simulate.make_rng(31, 0, stream=4)
    worst = -math.inf
    for k in (1, 2, 3, 4):
        space = spectral.enumerate_configs(3, k)
        for _ in range(20):
            eta = rng.dirichlet(np.ones(3))
            exact = distances.multinomial_tv_exact(eta, weights, k, space)
            bound = distances.tv_bound_multinomial(eta, weights, k)
            worst = max(worst, exact - bound)
    return max(worst, 0.0), 1e-12


def _check_chi2_formula():
    weights = site_weights([0.2, 0.3, 0.5])
    rng = simulate.make_rng(37, 0, stream=4)
    worst = 0.0
    for k in (1, 2, 3, 4):
        space = spectral.enumerate_configs(3, k)
        mu_pi = spectral.multinomial_measure(weights, k, space)
        for _ in range(10):
            eta = rng.dirichlet(np.ones(3))
            mu_eta = spectral.multinomial_measure(eta, k, space)
            chi2_enum = float(np.sum(mu_eta ** 2 / mu_pi) - 1.0)
            worst = max(worst, abs(chi2_enum - distances.chi2_multinomial(eta, weights, k)))
    return worst, 1e-10


def _check_nt_consistency():
    graph = build_graph("cycle", size=4)
    weights = site_weights([0.1, 0.2, 0.3, 0.4])
    rng = simulate.make_rng(41, 0, stream=4)
    worst = 0.0
    for _ in range(5):
        eta = rng.dirichlet(np.ones(4))
        for t in (0.4, 1.1):
            h_term, nt_term = distances.l2_decomposition(graph, weights, eta, t, 1e-10)
            direct = distances.l2_sq_exact(graph, weights, eta, t, 1e-10)
            worst = max(worst, abs(h_term + nt_term - direct))
    return worst, 1e-9


def _check_multicolored_intertwining():
    graph = build_graph("cycle", size=3)
    weights = site_weights([0.2, 0.3, 0.5])
    rng = simulate.make_rng(47, 0, stream=4)
    worst = 0.0
    for xi in ((1, 1, 1), (2, 1, 0), (3, 0, 0)):
        spaces = {kz: spectral.enumerate_configs(3, kz) for kz in set(xi)}
        for _ in range(10):
            fs = [rng.standard_normal(spaces[kz].size) for kz in xi]
            etas = [rng.dirichlet(np.ones(3)) for _ in range(3)]
            worst = max(worst, duality.multicolored_intertwining_residual(
                graph, weights, xi, fs, etas))
    return worst, 1e-11


def _check_multicolored_projection():
    graph = build_graph("path", size=3)
    weights = uniform_weights(3)
    xi0 = np.array([2, 1, 0])
    times = (0.3, 0.9, 1.7)
    worst = 0
    for rep in range(20):
        opts = simulate.SimOptions(t_end=times[-1], record_times=times, seed=43,
                                   replica_id=rep,
                                   coupling_mode="per_particle_bernoulli")
        colored = simulate.simulate_multicolored(graph, weights, xi0, opts)
        plain = simulate.simulate_splitting(graph, weights, xi0, opts)
        for c, p in zip(colored, plain):
            worst = max(worst, int(np.max(np.abs(c.sum(axis=0) - p))))
    return float(worst), 0.5


VERIFY_CHECKS = (
    ("intertwining", _check_intertwining),
    ("moment_duality", _check_moment_duality),
    ("orthogonal_duality", _check_orthogonal_duality),
    ("self_duality", _check_self_duality),
    ("jk_intertwining", _check_jk_intertwining),
    ("jk_injective", _check_jk_injective),
    ("adjointness", _check_adjointness),
    ("f_psi_eigen", _check_f_psi_eigen),
    ("dirichlet_ordering", _check_dirichlet_ordering),
    ("dirichlet_identity", _check_dirichlet_identity),
    ("gap_identity", _check_gap_identity),
    ("aldous_lanoue", _check_aldous_lanoue),
    ("multinomial_tv_bound", _check_multinomial_tv_bound),
    ("chi2_formula", _check_chi2_formula),
    ("nt_consistency", _check_nt_consistency),
    ("multicolored_intertwining", _check_multicolored_intertwining),
    ("multicolored_projection", _check_multicolored_projection),
)


def run_verify(config: ExperimentConfig | None = None, out: str | None = None):
    """Run the deterministic residual battery.

    Returns (exit_code, rows); exit code 0 only if every residual passes.
    Individual check failures (including exceptions) are reported, never
    raised.  Rows go to ``verify.jsonl`` under ``out`` when given.
    """
    out = out or (config.out if config else None)
    rows = []
    for name, fn in VERIFY_CHECKS:
        try:
            residual, tol = fn()
            rows.append({"check": name, "residual": float(residual),
                         "tolerance": float(tol),
                         "pass": bool(residual <= tol)})
        except Exception as err:  # a failing check must not kill the battery
            rows.append({"check": name, "residual": math.inf,
                         "tolerance": math.nan, "pass": False,
                         "error": f"{type(err).__name__}: {err}"})
    if out:
        os.makedirs(out, exist_ok=True)
        with open(os.path.join(out, "verify.jsonl"), "w", encoding="utf-8") as fh:
            for row in rows:
                fh.write(json.dumps(row) + "\n")
    exit_code = 0 if all(r["pass"] for r in rows) else 1
    return exit_code, rows
