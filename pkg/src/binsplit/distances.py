"""Distance-to-equilibrium functionals: exact total variation, transport
norms, heat kernels, chi-square/TV bounds between multinomial laws, the
sqrt(e k .) upper bound, Wilson's lower bound, the heat/noise split of the
averaged L^2 error, and the effective-dimension fit of heat-kernel decay.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh

from . import averaging
from .graphs import SiteWeights, WeightedGraph
from .simulate import SimOptions, make_rng, simulate_averaging, simulate_splitting
from .spectral import (
    Spectrum,
    UnlabeledSpace,
    enumerate_configs,
    evolve_observable,
    generator_single_particle,
    generator_splitting,
    generator_splitting_labeled,
    multinomial_measure,
    spectral_gap,
    transient_distribution,
)

NASH_WINDOW_FLOOR = 1.05          # exclude the saturated tail of the decay profile
NASH_WINDOW_CEIL_FRACTION = 0.5   # exclude the small-time plateau near max
NASH_MIN_POINTS = 4
NASH_R2_THRESHOLD = 0.97
NASH_DIM_CAP = 8.0
NASH_TIMESCALE_CAP = 4.0  # finite-dimensional geometries keep t_nash = O(t_rel)

__all__ = [
    "tv_distance",
    "HeatKernel",
    "heat_kernel",
    "evolved_density",
    "heat_kernel_max_profile",
    "chi2_multinomial",
    "tv_bound_multinomial",
    "multinomial_tv_exact",
    "wasserstein_estimate",
    "tv_profile_exact",
    "tv_bound_from_l2",
    "WilsonReport",
    "wilson_report",
    "NashFit",
    "NashDiagnosis",
    "nash_fit",
    "nash_diagnose",
    "l2_decomposition",
    "l2_sq_exact",
    "write_distance_csv",
    "read_distance_csv",
    "pair_kernel_max_dev",
    "worst_l2_sq",
    "single_particle_spectrum",
]


def tv_distance(p: np.ndarray, q: np.ndarray) -> float:
    """Total variation distance, half the L1 difference."""
    p = np.asarray(p, float)
    q = np.asarray(q, float)
    if p.shape != q.shape:
        raise ValueError("distributions must have the same length")
    for name, v in (("p", p), ("q", q)):
        if abs(float(v.sum()) - 1.0) > 1e-8:
            raise ValueError(f"{name} sums to {v.sum()!r}, expected 1 within 1e-8")
    return float(0.5 * np.abs(p - q).sum())


@dataclass(frozen=True)
class HeatKernel:
    """Transition density from x at time t relative to the site-weights."""

    x: int
    t: float
    values: np.ndarray  # h_t^x(y) = p_t(x, y) / pi(y)


def heat_kernel(graph: WeightedGraph, weights: SiteWeights, x: int, t: float,
                tol: float = 1e-11) -> HeatKernel:
    """Single-particle transition density relative to pi, by uniformization."""
    Q = generator_single_particle(graph, weights)
    init = np.zeros(graph.n)
    init[x] = 1.0
    p_t = transient_distribution(Q, init, t, tol)
    h = np.maximum(p_t, 0.0) / weights.pi
    return HeatKernel(x=int(x), t=float(t), values=h)


def evolved_density(graph: WeightedGraph, weights: SiteWeights, eta, t: float,
                    tol: float = 1e-11) -> np.ndarray:
    """The mass profile's density eta/pi evolved by the single-particle
    semigroup; the deterministic part of the averaging dynamics."""
    Q = generator_single_particle(graph, weights)
    u = np.asarray(eta, float) / weights.pi
    return evolve_observable(Q, u, t, tol)


def single_particle_spectrum(graph: WeightedGraph, weights: SiteWeights) -> Spectrum:
    Q = generator_single_particle(graph, weights)
    return spectral_gap(Q, weights.pi)


def heat_kernel_max_profile(graph: WeightedGraph, weights: SiteWeights,
                            times) -> np.ndarray:
    """max_{x,y} h_t^x(y) on a time grid, via the exact eigendecomposition."""
    pi = weights.pi
    Q = generator_single_particle(graph, weights).toarray()
    sq = np.sqrt(pi)
    A = (sq[:, None] * (-Q)) / sq[None, :]
    A = 0.5 * (A + A.T)
    lam, U = eigh(A)
    out = np.empty(len(times))
    denom = np.outer(sq, sq)
    for i, t in enumerate(times):
        M = (U * np.exp(-lam * t)) @ U.T
        out[i] = float((M / denom).max())
    return out


def chi2_multinomial(eta, weights: SiteWeights, k: int) -> float:
    """Chi-square divergence between Multinomial(k, eta) and Multinomial(k, pi):
    (1 + ||eta/pi - 1||_2^2)^k - 1, evaluated in the log domain."""
    if k < 0:
        raise ValueError("k must be nonnegative")
    w2 = averaging.transport_norm(np.asarray(eta, float), weights, 2.0) ** 2
    log_plus = k * math.log1p(w2)
    if log_plus > 700.0:
        return math.inf
    return float(math.expm1(log_plus))


def tv_bound_multinomial(eta, weights: SiteWeights, k: int) -> float:
    """min(1, sqrt(chi2)) upper bound on the multinomial TV distance."""
    w2 = averaging.transport_norm(np.asarray(eta, float), weights, 2.0) ** 2
    half_log = 0.5 * k * math.log1p(w2)
    if half_log >= 0.5 * math.log(1e300):
        return 1.0
    return min(1.0, math.sqrt(math.expm1(2.0 * half_log)))


def multinomial_tv_exact(eta, weights: SiteWeights, k: int,
                         space: UnlabeledSpace | None = None) -> float:
    """Exact TV between Multinomial(k, eta) and Multinomial(k, pi) by
    enumeration of the occupation space."""
    if space is None:
        space = enumerate_configs(weights.n, k)
    mu_eta = multinomial_measure(np.asarray(eta, float), k, space)
    mu_pi = multinomial_measure(weights, k, space)
    return float(0.5 * np.abs(mu_eta - mu_pi).sum())


def wasserstein_estimate(graph: WeightedGraph, weights: SiteWeights, eta0,
                         t: float, p: float, replicas: int, seed: int,
                         threads: int = 1):
    """Monte Carlo mean and standard error of ||eta_t/pi - 1||_p over
    independent averaging replicas (one Philox stream per replica)."""
    if replicas < 2:
        raise ValueError("need at least 2 replicas for a standard error")
    eta0 = np.asarray(eta0, float)

    def one(replica: int) -> float:
        opts = SimOptions(t_end=t, record_times=(t,), seed=seed, replica_id=replica)
        states = simulate_averaging(graph, weights, eta0, opts)
        return averaging.transport_norm(states[0], weights, p)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            vals = list(pool.map(one, range(replicas)))
    else:
        vals = [one(r) for r in range(replicas)]
    vals = np.array(vals)
    mean = float(vals.mean())
    stderr = float(vals.std(ddof=1) / math.sqrt(replicas)) if replicas > 1 else 0.0
    return mean, stderr


def tv_profile_exact(graph: WeightedGraph, weights: SiteWeights, k: int, xi0,
                     times, tol: float = 1e-9,
                     space: UnlabeledSpace | None = None,
                     cap: int = None):
    """Exact TV to the multinomial equilibrium at each time, from a fixed
    starting configuration, by incremental uniformized evolution."""
    from .spectral import DEFAULT_TRANSIENT_CAP, StateSpaceCapError
    if space is None:
        space = enumerate_configs(graph.n, k)
    cap = DEFAULT_TRANSIENT_CAP if cap is None else cap
    if space.size > cap:
        raise StateSpaceCapError(
            f"occupation space has {space.size} states, above the transient cap "
            f"of {cap}; use the bound-based profile (upper/lower bracket) instead")
    Q = generator_splitting(graph, weights, k, space)
    mu = multinomial_measure(weights, k, space)
    times = [float(t) for t in times]
    if any(b < a for a, b in zip(times, times[1:])):
        raise ValueError("times must be sorted ascending")
    step_tol = tol / max(1, len(times))
    law = np.zeros(space.size)
    law[space.index_of(xi0)] = 1.0
    out = []
    t_prev = 0.0
    for t in times:
        law = transient_distribution(Q, law, t - t_prev, step_tol, cap=cap)
        t_prev = t
        out.append((t, tv_distance(law / law.sum(), mu)))
    return out


def tv_bound_from_l2(k: int, w2_sq: float) -> float:
    """min(1, sqrt(e k w2_sq)): TV bound from the worst averaged L^2 error."""
    if w2_sq < 0:
        raise ValueError("w2_sq must be nonnegative")
    return min(1.0, math.sqrt(math.e * k * w2_sq))


@dataclass(frozen=True)
class WilsonReport:
    """Distinguishing-statistic report for the lower bound on TV mixing.

    The statistic is F(xi) = sum_x psi(x) xi(x) with psi the unit-norm gap
    eigenfunction of the single-particle system.  At equilibrium F has mean 0
    and variance k; out of equilibrium the mean decays at the gap rate.  The
    out-of-equilibrium variance, when requested, is estimated by Monte Carlo.
    """

    psi: np.ndarray
    gap: float
    k: int
    t: float
    mean_eq: float
    var_eq: float
    mean_out: float
    a_t: float
    lower_bound: float
    var_out_mc: float | None = None
    mc_mean_out: float | None = None
    mc_stderr: float | None = None


def wilson_report(graph: WeightedGraph, weights: SiteWeights, k: int, eta,
                  t: float, mc_replicas: int = 0, seed: int = 0) -> WilsonReport:
    """Wilson statistic built from the single-particle gap eigenfunction.

    Exact parts: equilibrium mean/variance from the multinomial moments, the
    out-of-equilibrium mean k e^(-t gap) <psi, eta/pi>, the ratio a_t, and
    the TV lower bound max(0, 1 - 8/a_t).  ``mc_replicas`` > 0 adds a Monte
    Carlo estimate of the statistic's out-of-equilibrium mean and variance.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    spec = single_particle_spectrum(graph, weights)
    psi = spec.psi
    pi = weights.pi
    eta = np.asarray(eta, float)
    mean_eq = k * float(np.sum(pi * psi))
    var_eq = k * float(np.sum(pi * psi ** 2) - np.sum(pi * psi) ** 2)
    overlap = float(np.sum(psi * eta))  # <psi, eta/pi> in L^2(pi)
    mean_out = k * math.exp(-t * spec.gap) * overlap
    dev_inf = float(np.max(eta / pi))
    n = graph.n
    denom = 1.0 + (k / n) * (dev_inf ** 2 + math.exp(t * spec.gap))
    a_t = k * overlap ** 2 / denom
    lower = max(0.0, 1.0 - 8.0 / a_t) if a_t > 0 else 0.0
    var_out = mc_mean = mc_stderr = None
    if mc_replicas > 0:
        vals = np.empty(mc_replicas)
        for r in range(mc_replicas):
            init_rng = make_rng(seed, r, stream=1)
            xi0 = init_rng.multinomial(k, eta)
            opts = SimOptions(t_end=t, record_times=(t,), seed=seed, replica_id=r)
            xi_t = simulate_splitting(graph, weights, xi0, opts)[0]
            vals[r] = float(np.dot(psi, xi_t))
        var_out = float(vals.var(ddof=1))
        mc_mean = float(vals.mean())
        mc_stderr = float(vals.std(ddof=1) / math.sqrt(mc_replicas))
    return WilsonReport(psi=psi, gap=spec.gap, k=k, t=t, mean_eq=mean_eq,
                        var_eq=var_eq, mean_out=mean_out, a_t=a_t,
                        lower_bound=lower, var_out_mc=var_out,
                        mc_mean_out=mc_mean, mc_stderr=mc_stderr)


@dataclass(frozen=True)
class NashFit:
    """Power-law fit of the heat-kernel decay profile.

    The decay max_{x,y} h_t^x(y) of a d-dimensional geometry follows
    (const/t)^(d/2) in a window between the small-time plateau and the
    saturated tail; d_hat = -2 (log-log slope) and t_nash_hat is recovered
    from the intercept of e (d t_N / 2t)^(d/2).
    """

    d_hat: float
    t_nash_hat: float
    t_lo: float
    t_hi: float
    r_squared: float
    n_points: int


@dataclass(frozen=True)
class NashDiagnosis:
    fit: NashFit | None
    finite_dimensional: bool
    reason: str


def nash_fit(graph: WeightedGraph, weights: SiteWeights, t_grid) -> NashFit:
    """Fit the effective dimension from the exact heat-kernel decay.

    Regresses log max h against log t on the sub-window where the profile
    lies within [1.05, half the grid maximum]; rejects when fewer than 4
    grid points qualify.
    """
    t_grid = np.asarray(sorted(float(t) for t in t_grid))
    if np.any(t_grid <= 0):
        raise ValueError("t_grid must be strictly positive")
    prof = heat_kernel_max_profile(graph, weights, t_grid)
    ceil = NASH_WINDOW_CEIL_FRACTION * prof.max()
    mask = (prof >= NASH_WINDOW_FLOOR) & (prof <= ceil)
    if int(mask.sum()) < NASH_MIN_POINTS:
        raise ValueError(
            f"only {int(mask.sum())} grid points fall in the fit window "
            f"[{NASH_WINDOW_FLOOR}, {ceil:.3g}]; need {NASH_MIN_POINTS}"
        )
    ts, hs = t_grid[mask], prof[mask]
    lx, ly = np.log(ts), np.log(hs)
    slope, intercept = np.polyfit(lx, ly, 1)
    pred = slope * lx + intercept
    ss_res = float(np.sum((ly - pred) ** 2))
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 0.0
    d_hat = -2.0 * slope
    if d_hat > 0:
        # intercept = 1 + (d/2) log(d t_N / 2)
        t_nash = (2.0 / d_hat) * math.exp((intercept - 1.0) * 2.0 / d_hat)
    else:
        t_nash = math.nan
    return NashFit(d_hat=float(d_hat), t_nash_hat=float(t_nash),
                   t_lo=float(ts[0]), t_hi=float(ts[-1]), r_squared=r2,
                   n_points=int(mask.sum()))


def nash_diagnose(graph: WeightedGraph, weights: SiteWeights,
                  t_grid=None) -> NashDiagnosis:
    """Run the dimension fit and flag geometries that are not finite-
    dimensional: no usable power-law window, an unstable fit, an unbounded
    fitted dimension, or a fitted burn-in time far above the relaxation time
    (on the complete graph the two scales separate while the window fit can
    still look locally like a power law)."""
    spec = single_particle_spectrum(graph, weights)
    if t_grid is None:
        t_grid = np.geomspace(spec.t_rel / 100.0, spec.t_rel, 48)
    try:
        fit = nash_fit(graph, weights, t_grid)
    except ValueError as err:
        return NashDiagnosis(fit=None, finite_dimensional=False,
                             reason=f"no power-law window: {err}")
    if fit.r_squared < NASH_R2_THRESHOLD:
        return NashDiagnosis(fit=fit, finite_dimensional=False,
                             reason=f"log-log fit unstable (R^2={fit.r_squared:.4f})")
    if not (0.0 < fit.d_hat <= NASH_DIM_CAP):
        return NashDiagnosis(fit=fit, finite_dimensional=False,
                             reason=f"fitted dimension {fit.d_hat:.2f} outside (0, {NASH_DIM_CAP:g}]")
    if fit.t_nash_hat > NASH_TIMESCALE_CAP * spec.t_rel:
        return NashDiagnosis(
            fit=fit, finite_dimensional=False,
            reason=(f"fitted burn-in time {fit.t_nash_hat:.3g} is "
                    f"{fit.t_nash_hat / spec.t_rel:.1f}x the relaxation time"))
    return NashDiagnosis(fit=fit, finite_dimensional=True, reason="ok")


def l2_decomposition(graph: WeightedGraph, weights: SiteWeights, eta, t: float,
                     tol: float = 1e-10):
    """Split the exact averaged L^2 error into heat and interaction parts.

    Returns (h_term, nt_term): the squared L^2 norm of the evolved density
    minus one, and the diagonal defect between the joint two-particle and
    the independent-pair evolutions of (eta/pi) tensor (eta/pi).  Their sum
    is the exact expected squared transport distance at time t.
    """
    pi = weights.pi
    eta = np.asarray(eta, float)
    u = eta / pi
    h = evolved_density(graph, weights, eta, t, tol)
    h_term = float(np.sum(pi * (h - 1.0) ** 2))
    Q2 = generator_splitting_labeled(graph, weights, 2)
    g = np.outer(u, u).reshape(-1)
    joint = evolve_observable(Q2, g, t, tol).reshape(graph.n, graph.n)
    nt_term = float(np.sum(pi * (np.diag(joint) - h * h)))
    return h_term, nt_term


def l2_sq_exact(graph: WeightedGraph, weights: SiteWeights, eta, t: float,
                tol: float = 1e-10) -> float:
    """Exact expected ||eta_t/pi - 1||_2^2 through the two-particle kernel:
    eta^T M_t eta - 1 with M_t the evolved diagonal-over-pi observable."""
    M = _pair_diagonal_kernel(graph, weights, t, tol)
    eta = np.asarray(eta, float)
    return float(eta @ M @ eta - 1.0)


def _pair_diagonal_kernel(graph: WeightedGraph, weights: SiteWeights, t: float,
                          tol: float) -> np.ndarray:
    n = graph.n
    pi = weights.pi
    Q2 = generator_splitting_labeled(graph, weights, 2)
    g0 = np.zeros((n, n))
    np.fill_diagonal(g0, 1.0 / pi)
    evolved = evolve_observable(Q2, g0.reshape(-1), t, tol)
    return evolved.reshape(n, n)


def worst_l2_sq(graph: WeightedGraph, weights: SiteWeights, t: float,
                tol: float = 1e-10, n_random: int = 100, seed: int = 0) -> float:
    """Approximate sup over starting profiles of the exact averaged squared
    L^2 error: maximize over all Dirac profiles plus random simplex points
    (worst cases sit at extreme points)."""
    M = _pair_diagonal_kernel(graph, weights, t, tol)
    best = float(np.max(np.diag(M))) - 1.0
    rng = make_rng(seed, 0, stream=2)
    for _ in range(n_random):
        eta = rng.dirichlet(np.ones(graph.n))
        best = max(best, float(eta @ M @ eta - 1.0))
    return max(best, 0.0)


DISTANCE_CSV_HEADER = "t,t_over_trel,value,stderr,kind"
DISTANCE_CSV_KINDS = ("exact_tv", "upper", "lower", "wasserstein")


def write_distance_csv(path, rows) -> None:
    """Write distance-profile rows as `t,t_over_trel,value,stderr,kind`.

    ``rows`` yields (t, t_over_trel, value, stderr, kind) tuples with kind in
    :data:`DISTANCE_CSV_KINDS`.
    """
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(DISTANCE_CSV_HEADER + "\n")
        for t, t_norm, value, stderr, kind in rows:
            if kind not in DISTANCE_CSV_KINDS:
                raise ValueError(f"kind must be one of {DISTANCE_CSV_KINDS}, got {kind!r}")
            fh.write(f"{float(t)!r},{float(t_norm)!r},{float(value)!r},"
                     f"{float(stderr)!r},{kind}\n")


def read_distance_csv(path):
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip() and not ln.startswith("#")]
    if lines[0] != DISTANCE_CSV_HEADER:
        raise ValueError(f"unexpected header {lines[0]!r}")
    out = []
    for ln in lines[1:]:
        t, t_norm, value, stderr, kind = ln.split(",")
        out.append((float(t), float(t_norm), float(value), float(stderr), kind))
    return out


def pair_kernel_max_dev(graph: WeightedGraph, weights: SiteWeights, t: float,
                        tol: float = 1e-10) -> float:
    """max over pairs |p_t((x,y),(z,w)) / (pi_z pi_w) - 1| for the labeled
    two-particle system."""
    n = graph.n
    pi = weights.pi
    Q2 = generator_splitting_labeled(graph, weights, 2)
    denom = np.outer(pi, pi).reshape(-1)
    worst = 0.0
    for start in range(n * n):
        init = np.zeros(n * n)
        init[start] = 1.0
        law = transient_distribution(Q2, init, t, tol)
        worst = max(worst, float(np.max(np.abs(law / denom - 1.0))))
    return worst
