"""Exact finite-state machinery: configuration spaces, rate matrices,
stationary measures, spectra, Dirichlet forms, and transient distributions.

Conventions.  A rate matrix Q acts on functions by (Qf)(i) = sum_j Q_ij f(j)
with zero row sums; measures evolve as nu_t = nu exp(tQ) (row vectors) and
observables as f_t = exp(tQ) f (column vectors).  Transients are evaluated by
uniformization: with L = max exit rate and P = I + Q/L, exp(tQ) equals the
Poisson(L t) mixture of powers of P, truncated at a certified tail below the
requested tolerance.  P is substochastic-free (entrywise nonnegative, rows sum
to one), so the output of a measure evolution stays a probability vector up to
the truncated tail.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.linalg import eigh
from scipy.sparse.linalg import eigsh
from scipy.special import gammaln
from scipy.stats import poisson

from .graphs import SiteWeights, WeightedGraph

DEFAULT_STATE_CAP = 2_000_000
DEFAULT_TRANSIENT_CAP = 200_000
DENSE_EIG_CUTOFF = 4096

__all__ = [
    "StateSpaceCapError",
    "UnlabeledSpace",
    "Spectrum",
    "enumerate_configs",
    "multinomial_measure",
    "generator_single_particle",
    "generator_splitting",
    "generator_splitting_labeled",
    "generator_independent_pair",
    "labeled_states",
    "reversibility_residual",
    "spectral_gap",
    "transient_distribution",
    "evolve_observable",
    "dirichlet_form",
    "dirichlet_single_particle",
    "dirichlet_independent_pair",
    "dirichlet_defect_form",
    "product_weights",
    "dump_rate_matrix",
]


class StateSpaceCapError(ValueError):
    """State space larger than the configured cap."""


@dataclass(frozen=True)
class UnlabeledSpace:
    """All occupation vectors of k unlabeled particles on n sites.

    Configurations are ordered heaviest-first lexicographically (the first
    coordinate runs k, k-1, ..., 0, recursively), so index 0 piles every
    particle on vertex 0.
    """

    n: int
    k: int
    configs: np.ndarray  # (size, n) int64

    @property
    def size(self) -> int:
        return self.configs.shape[0]

    def __post_init__(self):
        index = {tuple(int(v) for v in row): i for i, row in enumerate(self.configs)}
        object.__setattr__(self, "_index", index)

    def index_of(self, config) -> int:
        return self._index[tuple(int(v) for v in config)]

    def config(self, i: int) -> np.ndarray:
        return self.configs[i]


def _compositions(n: int, k: int):
    # weak compositions of k into n parts, first coordinate descending
    if n == 1:
        yield (k,)
        return
    for first in range(k, -1, -1):
        for rest in _compositions(n - 1, k - first):
            yield (first,) + rest


def enumerate_configs(n: int, k: int, cap: int = DEFAULT_STATE_CAP) -> UnlabeledSpace:
    """Enumerate the k-particle occupation vectors on n vertices."""
    if n < 1 or k < 0:
        raise ValueError("need n >= 1 and k >= 0")
    count = math.comb(n + k - 1, k)
    if count > cap:
        raise StateSpaceCapError(
            f"configuration space has {count} states, above the cap of {cap}"
        )
    configs = np.array(list(_compositions(n, k)), dtype=np.int64).reshape(count, n)
    return UnlabeledSpace(n, k, configs)


def multinomial_measure(weights, k: int, space: UnlabeledSpace) -> np.ndarray:
    """Multinomial(k, pi) probabilities aligned with ``space``.

    Accepts any probability vector (zeros allowed), so it also provides the
    sampling law of k particles dropped independently on a mass profile.
    """
    pi = weights.pi if isinstance(weights, SiteWeights) else np.asarray(weights, float)
    if pi.size != space.n:
        raise ValueError(f"weights have {pi.size} entries, space has n={space.n}")
    if space.k != k:
        raise ValueError(f"space was built for k={space.k}, asked for k={k}")
    xi = space.configs
    # zero-weight vertices: log factor replaced by 0, configs touching them masked out
    logpi = np.log(np.where(pi > 0, pi, 1.0))
    impossible = np.any((xi > 0) & (pi[None, :] == 0.0), axis=1)
    logp = gammaln(k + 1) - gammaln(xi + 1).sum(axis=1) + (xi * logpi[None, :]).sum(axis=1)
    out = np.exp(logp)
    out[impossible] = 0.0
    return out


def _edge_split_prob(pi: np.ndarray, x: int, y: int) -> float:
    return float(pi[x] / (pi[x] + pi[y]))


def _binom_pmf_table(m: int, p: float) -> np.ndarray:
    j = np.arange(m + 1)
    logc = gammaln(m + 1) - gammaln(j + 1) - gammaln(m - j + 1)
    if p == 0.0:
        out = np.zeros(m + 1)
        out[0] = 1.0
        return out
    if p == 1.0:
        out = np.zeros(m + 1)
        out[m] = 1.0
        return out
    logp = logc + j * math.log(p) + (m - j) * math.log1p(-p)
    return np.exp(logp)


def generator_single_particle(graph: WeightedGraph, weights: SiteWeights) -> sp.csr_matrix:
    """Rate matrix of one particle: an edge event at xy re-places a particle
    sitting on either endpoint to x with probability pi(x)/(pi(x)+pi(y))."""
    pi = weights.pi
    n = graph.n
    rows, cols, vals = [], [], []
    exit_rate = np.zeros(n)
    for (x, y, c) in graph.edges:
        p = _edge_split_prob(pi, x, y)
        # from x: move to y with prob 1-p; from y: move to x with prob p
        rows += [x, y]
        cols += [y, x]
        vals += [c * (1.0 - p), c * p]
        exit_rate[x] += c * (1.0 - p)
        exit_rate[y] += c * p
    rows += list(range(n))
    cols += list(range(n))
    vals += list(-exit_rate)
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def generator_splitting(graph: WeightedGraph, weights: SiteWeights, k: int,
                        space: UnlabeledSpace | None = None,
                        cap: int = DEFAULT_STATE_CAP) -> sp.csr_matrix:
    """Rate matrix of the k-particle splitting dynamics on occupation vectors.

    An edge event at xy pools the m = xi(x)+xi(y) particles and re-splits
    them with a Binomial(m, pi(x)/(pi(x)+pi(y))) draw for the x side.  The
    probability of reproducing the current split is folded into the diagonal.
    """
    if space is None:
        space = enumerate_configs(graph.n, k, cap)
    if space.n != graph.n or space.k != k:
        raise ValueError("space does not match (n, k)")
    pi = weights.pi
    size = space.size
    configs = space.configs
    index = space._index
    rows, cols, vals = [], [], []
    diag = np.zeros(size)
    pmf_cache = {}
    for (x, y, c) in graph.edges:
        p = _edge_split_prob(pi, x, y)
        for i in range(size):
            xi = configs[i]
            m = int(xi[x] + xi[y])
            key = (m, p)
            pmf = pmf_cache.get(key)
            if pmf is None:
                pmf = _binom_pmf_table(m, p)
                pmf_cache[key] = pmf
            cur = int(xi[x])
            diag[i] -= c * (1.0 - pmf[cur])
            if m == 0:
                continue
            target = xi.copy()
            for j in range(m + 1):
                if j == cur:
                    continue
                target[x] = j
                target[y] = m - j
                rows.append(i)
                cols.append(index[tuple(int(v) for v in target)])
                vals.append(c * pmf[j])
    rows += list(range(size))
    cols += list(range(size))
    vals += list(diag)
    Q = sp.csr_matrix((vals, (rows, cols)), shape=(size, size))
    Q.sum_duplicates()
    return Q


def labeled_states(n: int, k: int):
    """All position tuples of k labeled particles, row-major order."""
    return list(itertools.product(range(n), repeat=k))


def generator_splitting_labeled(graph: WeightedGraph, weights: SiteWeights, k: int,
                                cap: int = DEFAULT_TRANSIENT_CAP) -> sp.csr_matrix:
    """Rate matrix of the labeled k-particle dynamics on position tuples.

    At an edge event on xy, every particle currently on x or y independently
    re-places itself on x with probability pi(x)/(pi(x)+pi(y)), else on y.
    Self-adjoint in L^2 of the k-fold product of the site-weights.
    """
    size = graph.n ** k
    if size > cap:
        raise StateSpaceCapError(f"labeled space has {size} states, above the cap of {cap}")
    pi = weights.pi
    n = graph.n
    strides = np.array([n ** (k - 1 - i) for i in range(k)], dtype=np.int64)
    states = labeled_states(n, k)
    rows, cols, vals = [], [], []
    diag = np.zeros(size)
    for (x, y, c) in graph.edges:
        p = _edge_split_prob(pi, x, y)
        for i, xs in enumerate(states):
            active = [j for j, v in enumerate(xs) if v == x or v == y]
            s = len(active)
            if s == 0:
                continue
            stay = 1.0
            for j in active:
                stay *= p if xs[j] == x else (1.0 - p)
            diag[i] -= c * (1.0 - stay)
            base = i - int(sum(strides[j] * xs[j] for j in active))
            for outcome in itertools.product((x, y), repeat=s):
                if all(outcome[t] == xs[active[t]] for t in range(s)):
                    continue
                prob = 1.0
                tgt = base
                for t, pos in enumerate(outcome):
                    prob *= p if pos == x else (1.0 - p)
                    tgt += int(strides[active[t]]) * pos
                rows.append(i)
                cols.append(tgt)
                vals.append(c * prob)
    rows += list(range(size))
    cols += list(range(size))
    vals += list(diag)
    Q = sp.csr_matrix((vals, (rows, cols)), shape=(size, size))
    Q.sum_duplicates()
    return Q


def generator_independent_pair(graph: WeightedGraph, weights: SiteWeights) -> sp.csr_matrix:
    """Kronecker sum of two single-particle rate matrices (independent pair)."""
    Q1 = generator_single_particle(graph, weights)
    eye = sp.identity(graph.n, format="csr")
    return (sp.kron(Q1, eye) + sp.kron(eye, Q1)).tocsr()


def product_weights(weights: SiteWeights, k: int = 2) -> np.ndarray:
    """Flattened k-fold product of the site-weights, row-major."""
    pi = weights.pi
    out = pi
    for _ in range(k - 1):
        out = np.multiply.outer(out, pi)
    return out.reshape(-1)


def reversibility_residual(Q, mu: np.ndarray) -> float:
    """Max detailed-balance defect |mu_i Q_ij - mu_j Q_ji|."""
    Qc = sp.csr_matrix(Q)
    D = sp.diags(mu)
    flow = D @ Qc
    return float(abs(flow - flow.T).max())


@dataclass(frozen=True)
class Spectrum:
    """Eigenvalues of -Q sorted ascending, with the gap data.

    ``psi`` is the gap eigenfunction normalized to unit L^2(mu) norm; with a
    degenerate gap, the basis vector maximizing the L^1(mu) norm is chosen
    and its sign fixed so the first nonvanishing coordinate is positive.
    ``full`` records whether all eigenvalues were computed.
    """

    eigenvalues: np.ndarray
    gap: float
    t_rel: float
    psi: np.ndarray
    full: bool


def _tie_break_eigenfunction(vecs: np.ndarray, sqrt_mu: np.ndarray, mu: np.ndarray) -> np.ndarray:
    # vecs: orthonormal columns spanning the gap eigenspace (symmetrized coords)
    best, best_l1 = None, -1.0
    for j in range(vecs.shape[1]):
        psi = vecs[:, j] / sqrt_mu
        l1 = float(np.sum(mu * np.abs(psi)))
        if l1 > best_l1 + 1e-14:
            best, best_l1 = psi, l1
    nz = np.nonzero(np.abs(best) > 1e-12 * np.abs(best).max())[0]
    if nz.size and best[nz[0]] < 0:
        best = -best
    return best


def spectral_gap(Q, mu: np.ndarray, dense_cutoff: int = DENSE_EIG_CUTOFF,
                 reversibility_tol: float = 1e-8) -> Spectrum:
    """Spectrum of -Q for a chain reversible with respect to mu.

    Symmetrizes with D^(1/2) (-Q) D^(-1/2), D = diag(mu), then solves the
    symmetric eigenproblem (dense below ``dense_cutoff``, shift-invert
    Lanczos above).  Rejects non-reversible input, reporting the residual.
    """
    mu = np.asarray(mu, dtype=float)
    dim = mu.size
    res = reversibility_residual(Q, mu)
    scale = max(1.0, float(abs(sp.csr_matrix(Q)).max()))
    if res > reversibility_tol * scale:
        raise ValueError(f"rate matrix is not reversible w.r.t. mu: "
                         f"max detailed-balance residual {res:.3e}")
    sqrt_mu = np.sqrt(mu)
    if dim <= dense_cutoff:
        A = -np.asarray(sp.csr_matrix(Q).todense())
        A = (sqrt_mu[:, None] * A) / sqrt_mu[None, :]
        A = 0.5 * (A + A.T)
        evals, evecs = eigh(A)
        full = True
    else:
        Qc = sp.csr_matrix(Q)
        Dl = sp.diags(sqrt_mu)
        Dr = sp.diags(1.0 / sqrt_mu)
        A = (Dl @ (-Qc) @ Dr).tocsr()
        A = (A + A.T) * 0.5
        kk = min(8, dim - 1)
        # shift slightly below the spectrum: 0 is always an eigenvalue, so a
        # factorization exactly at 0 would hit a singular matrix
        sigma = -1e-6 * max(1.0, scale)
        evals, evecs = eigsh(A, k=kk, sigma=sigma, which="LM")
        order = np.argsort(evals)
        evals, evecs = evals[order], evecs[:, order]
        full = False
    lam_max = float(evals[-1]) if evals.size else 0.0
    zero_tol = max(1e-10, 1e-12 * max(lam_max, 1.0) * dim)
    positive = evals[evals > zero_tol]
    if positive.size == 0:
        raise ValueError("no positive eigenvalue found; is the chain connected?")
    gap = float(positive[0])
    in_gap = np.nonzero(np.abs(evals - gap) <= 1e-9 * max(gap, 1.0))[0]
    psi = _tie_break_eigenfunction(evecs[:, in_gap], sqrt_mu, mu)
    clean = np.maximum(evals, 0.0)
    clean[np.abs(evals) <= zero_tol] = 0.0
    return Spectrum(eigenvalues=clean, gap=gap, t_rel=1.0 / gap, psi=psi, full=full)


def _uniformization_terms(rate_t: float, tol: float):
    """Number of Poisson terms and weights for a certified tail below tol."""
    if rate_t <= 0.0:
        return np.array([1.0])
    m = int(poisson.isf(tol, rate_t)) if rate_t > 0 else 0
    m = max(m, 1)
    while poisson.sf(m, rate_t) >= tol:
        m += max(5, m // 10)
    return poisson.pmf(np.arange(m + 1), rate_t)


def transient_distribution(Q, init: np.ndarray, t: float, tol: float = 1e-9,
                           cap: int = DEFAULT_TRANSIENT_CAP) -> np.ndarray:
    """Distribution of the chain at time t started from ``init``.

    Uniformized evaluation with Poisson tail below ``tol``; the output is
    entrywise nonnegative and sums to 1 within 2 tol.
    """
    if t < 0:
        raise ValueError("time must be nonnegative")
    if not (0 < tol <= 1e-6):
        raise ValueError("tol must lie in (0, 1e-6]")
    init = np.asarray(init, dtype=float)
    if init.size > cap:
        raise StateSpaceCapError(f"transient vector has {init.size} entries, cap is {cap}")
    Qc = sp.csr_matrix(Q)
    if t == 0.0:
        return init.copy()
    rate = float(-Qc.diagonal().min())
    if rate <= 0.0:
        return init.copy()
    P = (sp.identity(Qc.shape[0], format="csr") + Qc / rate).tocsr()
    PT = P.T.tocsr()
    w = _uniformization_terms(rate * t, tol)
    v = init.copy()
    acc = w[0] * v
    for m in range(1, w.size):
        v = PT @ v
        acc += w[m] * v
    return acc


def evolve_observable(Q, f: np.ndarray, t: float, tol: float = 1e-9) -> np.ndarray:
    """Action of the semigroup on an observable: exp(tQ) f by uniformization."""
    if t < 0:
        raise ValueError("time must be nonnegative")
    f = np.asarray(f, dtype=float)
    Qc = sp.csr_matrix(Q)
    if t == 0.0:
        return f.copy()
    rate = float(-Qc.diagonal().min())
    if rate <= 0.0:
        return f.copy()
    P = (sp.identity(Qc.shape[0], format="csr") + Qc / rate).tocsr()
    w = _uniformization_terms(rate * t, tol)
    v = f.copy()
    acc = w[0] * v
    for m in range(1, w.size):
        v = P @ v
        acc += w[m] * v
    return acc


def dirichlet_form(Q, mu: np.ndarray, psi: np.ndarray) -> float:
    """Energy <psi, -Q psi> in L^2(mu)."""
    psi = np.asarray(psi, dtype=float)
    mu = np.asarray(mu, dtype=float)
    if psi.size != mu.size or psi.size != sp.csr_matrix(Q).shape[0]:
        raise ValueError("dimension mismatch")
    return float(-(mu * psi) @ (sp.csr_matrix(Q) @ psi))


def dirichlet_single_particle(graph: WeightedGraph, weights: SiteWeights,
                              psi: np.ndarray) -> float:
    """Closed form: sum over edges of c_xy pi(x)pi(y)/(pi(x)+pi(y)) (psi_x-psi_y)^2."""
    pi = weights.pi
    psi = np.asarray(psi, dtype=float)
    if psi.size != graph.n:
        raise ValueError("dimension mismatch")
    x, y, c = graph.edge_x, graph.edge_y, graph.edge_c
    w = pi[x] * pi[y] / (pi[x] + pi[y])
    return float(np.sum(c * w * (psi[x] - psi[y]) ** 2))


def dirichlet_independent_pair(graph: WeightedGraph, weights: SiteWeights,
                               psi2: np.ndarray) -> float:
    """Energy of a two-argument observable under two independent particles.

    psi2 is flat over pairs (z, w), row-major.
    """
    n = graph.n
    pi = weights.pi
    T = np.asarray(psi2, dtype=float).reshape(n, n)
    total = 0.0
    for (x, y, c) in graph.edges:
        w = pi[x] * pi[y] / (pi[x] + pi[y])
        total += c * w * float(np.sum(pi * ((T[x, :] - T[y, :]) ** 2 + (T[:, x] - T[:, y]) ** 2)))
    return total


def dirichlet_defect_form(graph: WeightedGraph, weights: SiteWeights,
                          psi2: np.ndarray) -> float:
    """Nonnegative defect between the independent-pair and the joint two-particle
    energies: sum over edges of c (pi_x pi_y/(pi_x+pi_y))^2
    (psi(x,x)+psi(y,y)-psi(x,y)-psi(y,x))^2."""
    n = graph.n
    pi = weights.pi
    T = np.asarray(psi2, dtype=float).reshape(n, n)
    total = 0.0
    for (x, y, c) in graph.edges:
        w = pi[x] * pi[y] / (pi[x] + pi[y])
        total += c * (w ** 2) * (T[x, x] + T[y, y] - T[x, y] - T[y, x]) ** 2
    return total


def dump_rate_matrix(Q, path) -> None:
    """Write `row col rate` lines (all stored entries, diagonal included)."""
    coo = sp.csr_matrix(Q).tocoo()
    with open(path, "w", encoding="utf-8") as fh:
        for r, c, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{r} {c} {float(v)!r}\n")
