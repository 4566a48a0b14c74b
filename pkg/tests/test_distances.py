import math

import numpy as np
import pytest

from binsplit.averaging import transport_norm
from binsplit.distances import (chi2_multinomial, evolved_density, heat_kernel,
                                heat_kernel_max_profile, l2_decomposition,
                                l2_sq_exact, multinomial_tv_exact, nash_diagnose,
                                nash_fit, pair_kernel_max_dev,
                                single_particle_spectrum, tv_bound_from_l2,
                                tv_bound_multinomial, tv_distance,
                                tv_profile_exact, wasserstein_estimate,
                                wilson_report, worst_l2_sq)
from binsplit.graphs import (complete_graph, cycle_graph, path_graph,
                             site_weights, torus_graph, uniform_weights)
from binsplit.harness import _wasserstein_profile
from binsplit.spectral import enumerate_configs, multinomial_measure


def test_tv_distance_examples():
    p = np.array([0.75, 0.25])
    assert tv_distance(p, p) == 0.0
    assert tv_distance(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 1.0
    assert tv_distance(p, p[::-1]) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        tv_distance(p, np.array([0.3, 0.3, 0.4]))
    with pytest.raises(ValueError):
        tv_distance(p, np.array([0.9, 0.3]))


def test_heat_kernel_examples():
    g = cycle_graph(4)
    w = site_weights([0.1, 0.2, 0.3, 0.4])
    hk0 = heat_kernel(g, w, 2, 0.0)
    expected = np.zeros(4)
    expected[2] = 1.0 / w.pi[2]
    assert np.allclose(hk0.values, expected)
    t_rel = single_particle_spectrum(g, w).t_rel
    hk_inf = heat_kernel(g, w, 1, 50 * t_rel)
    assert np.max(np.abs(hk_inf.values - 1.0)) <= 1e-8
    # mass invariant and positivity
    hk = heat_kernel(g, w, 0, 0.7)
    assert abs(np.sum(w.pi * hk.values) - 1.0) <= 1e-10
    assert hk.values.min() >= 0
    # single edge closed form
    g2 = path_graph(2)
    w2 = uniform_weights(2)
    for t in (0.3, 1.2):
        hk2 = heat_kernel(g2, w2, 0, t, tol=1e-12)
        assert abs(hk2.values[0] - (1 + math.exp(-t))) <= 1e-11


def test_evolved_density_matches_heat_kernel_on_dirac():
    g = cycle_graph(5)
    w = site_weights([1, 2, 3, 2, 1])
    eta = np.zeros(5)
    eta[3] = 1.0
    h_eta = evolved_density(g, w, eta, 0.9)
    hk = heat_kernel(g, w, 3, 0.9)
    assert np.max(np.abs(h_eta - hk.values)) <= 1e-10


def test_chi2_examples_and_enumeration_oracle():
    w2 = uniform_weights(2)
    eta = np.array([1.0, 0.0])
    assert chi2_multinomial(w2.pi.copy(), w2, 5) == pytest.approx(0.0, abs=1e-14)
    assert chi2_multinomial(eta, w2, 3) == pytest.approx(7.0)
    # enumeration oracle for the same value
    space = enumerate_configs(2, 3)
    mu_eta = multinomial_measure(eta, 3, space)
    mu_pi = multinomial_measure(w2, 3, space)
    assert float(np.sum(mu_eta ** 2 / mu_pi) - 1.0) == pytest.approx(7.0)
    # k=1 reduces to the squared transport norm
    w3 = site_weights([0.2, 0.3, 0.5])
    rng = np.random.default_rng(0)
    for _ in range(10):
        e = rng.dirichlet(np.ones(3))
        assert chi2_multinomial(e, w3, 1) == pytest.approx(
            transport_norm(e, w3, 2.0) ** 2)
    # log-domain guard for huge particle counts
    assert tv_bound_multinomial(eta, w2, 10 ** 9) == 1.0
    assert math.isinf(chi2_multinomial(eta, w2, 10 ** 9))


def test_tv_bound_dominates_exact_tv():
    rng = np.random.default_rng(1)
    for n in (2, 3):
        w = site_weights(rng.uniform(0.5, 1.5, n))
        for k in range(1, 7):
            space = enumerate_configs(n, k)
            for _ in range(50):
                eta = rng.dirichlet(np.ones(n))
                exact = multinomial_tv_exact(eta, w, k, space)
                assert exact <= tv_bound_multinomial(eta, w, k) + 1e-12


def test_wasserstein_estimate_examples():
    g = cycle_graph(4)
    w = uniform_weights(4)
    eta0 = np.array([0.7, 0.1, 0.1, 0.1])
    mean, err = wasserstein_estimate(g, w, eta0, 0.0, 2.0, 8, seed=1)
    assert mean == pytest.approx(transport_norm(eta0, w, 2.0))
    assert err == 0.0
    with pytest.raises(ValueError):
        wasserstein_estimate(g, w, eta0, 1.0, 2.0, 1, seed=1)
    # threads do not change the estimate
    m1, e1 = wasserstein_estimate(g, w, eta0, 0.8, 2.0, 64, seed=2, threads=1)
    m4, e4 = wasserstein_estimate(g, w, eta0, 0.8, 2.0, 64, seed=2, threads=4)
    assert m1 == m4 and e1 == e4


def test_tv_profile_exact_examples():
    g = path_graph(2)
    w = uniform_weights(2)
    space = enumerate_configs(2, 2)
    xi0 = (2, 0)
    prof = tv_profile_exact(g, w, 2, xi0, [0.0, 0.4, 1.0, 2.5, 5.0], 1e-10, space)
    mu = multinomial_measure(w, 2, space)
    assert prof[0][1] == pytest.approx(1.0 - mu[space.index_of(xi0)])
    for t, d in prof:
        assert abs(d - 0.75 * math.exp(-t)) <= 1e-9
    ds = [d for _, d in prof]
    assert all(b <= a + 1e-12 for a, b in zip(ds, ds[1:]))


def test_tv_bound_from_l2_examples():
    assert tv_bound_from_l2(5, 0.0) == 0.0
    assert tv_bound_from_l2(10, 1e-4) == pytest.approx(0.05213714442179438, rel=1e-9)
    g = cycle_graph(4)
    w = uniform_weights(4)
    space_cache = {}
    for k in (2, 4, 6):
        space = space_cache.setdefault(k, enumerate_configs(4, k))
        xi0 = np.zeros(4, dtype=np.int64)
        xi0[0] = k
        for t in (1.0, 2.0, 4.0):
            d = tv_profile_exact(g, w, k, xi0, [t], 1e-10, space)[0][1]
            w2 = worst_l2_sq(g, w, t, 1e-10, n_random=40)
            assert d <= tv_bound_from_l2(k, w2) + 1e-9


def test_wilson_report_examples():
    g = cycle_graph(5)
    w = uniform_weights(5)
    rep = wilson_report(g, w, 7, w.pi.copy(), 1.0)
    assert rep.mean_out == pytest.approx(0.0, abs=1e-12)
    assert rep.mean_eq == pytest.approx(0.0, abs=1e-10)
    assert rep.var_eq == pytest.approx(7.0, abs=1e-10)
    assert rep.lower_bound >= 0.0


def test_l2_decomposition_examples():
    g = cycle_graph(5)
    w = site_weights([1, 2, 3, 2, 1])
    rng = np.random.default_rng(2)
    eta = rng.dirichlet(np.ones(5))
    h0, nt0 = l2_decomposition(g, w, eta, 0.0)
    assert nt0 == 0.0
    assert h0 == pytest.approx(transport_norm(eta, w, 2.0) ** 2)
    t_rel = single_particle_spectrum(g, w).t_rel
    base = transport_norm(eta, w, 2.0) ** 2
    for t in (0.3, 1.0, 2.5):
        h, nt = l2_decomposition(g, w, eta, t, 1e-10)
        direct = l2_sq_exact(g, w, eta, t, 1e-10)
        assert abs(h + nt - direct) <= 1e-9
        assert h + nt <= math.exp(-t / t_rel) * base + 1e-9
        # the averaged squared error never exceeds the worst pair deviation
        assert direct <= pair_kernel_max_dev(g, w, t, 1e-10) + 1e-9


def test_l2_decomposition_matches_monte_carlo():
    g = cycle_graph(5)
    w = uniform_weights(5)
    eta = np.array([0.6, 0.2, 0.1, 0.05, 0.05])
    t = single_particle_spectrum(g, w).t_rel
    h, nt = l2_decomposition(g, w, eta, t, 1e-10)
    replicas = 3000
    vals = []
    means, errs = _wasserstein_profile(g, w, eta, [t], 2.0, replicas, 33, 1)
    # compare squared-norm means: E[X^2] = Var + mean^2 via the raw samples
    from binsplit.simulate import SimOptions, simulate_averaging
    sq = np.empty(replicas)
    for r in range(replicas):
        opts = SimOptions(t_end=t, record_times=(t,), seed=33, replica_id=r)
        sq[r] = transport_norm(simulate_averaging(g, w, eta, opts)[0], w, 2.0) ** 2
    stderr = sq.std(ddof=1) / math.sqrt(replicas)
    assert abs(sq.mean() - (h + nt)) <= 4 * stderr


def test_lower_bound_ordering_monte_carlo():
    # the evolved-density curve sits below the simulated transport mean
    g = cycle_graph(5)
    w = uniform_weights(5)
    eta = np.array([0.6, 0.2, 0.1, 0.05, 0.05])
    t = 1.2
    for p in (1.0, 2.0):
        mean, err = wasserstein_estimate(g, w, eta, t, p, 800, seed=44)
        h = evolved_density(g, w, eta, t)
        lower = float(np.sum(w.pi * np.abs(h - 1.0) ** p) ** (1.0 / p))
        assert lower <= mean + 4 * err


def test_nash_fit_fingerprints():
    g = cycle_graph(64)
    w = uniform_weights(64)
    t_rel = single_particle_spectrum(g, w).t_rel
    fit = nash_fit(g, w, np.geomspace(0.5, t_rel / 4, 24))
    assert 0.8 <= fit.d_hat <= 1.2
    assert fit.r_squared >= 0.99
    g2 = torus_graph([8, 8])
    w2 = uniform_weights(64)
    diag2 = nash_diagnose(g2, w2)
    assert diag2.finite_dimensional
    assert 1.6 <= diag2.fit.d_hat <= 2.4
    diag3 = nash_diagnose(complete_graph(64), uniform_weights(64))
    assert not diag3.finite_dimensional
    with pytest.raises(ValueError, match="window"):
        nash_fit(g, w, [0.001, 0.002, 0.003, 0.004])


def test_heat_kernel_max_profile_monotone():
    g = cycle_graph(16)
    w = uniform_weights(16)
    ts = np.geomspace(0.05, 20.0, 12)
    prof = heat_kernel_max_profile(g, w, ts)
    assert np.all(np.diff(prof) < 0)
    assert prof[0] <= 16.0 + 1e-9  # bounded by 1/min(pi)


def test_distance_csv_roundtrip(tmp_path):
    from binsplit.distances import read_distance_csv, write_distance_csv
    rows = [(0.5, 0.25, 0.9, 0.0, "exact_tv"),
            (1.0, 0.5, 0.41231, 0.003, "wasserstein"),
            (1.0, 0.5, 0.39, 0.0, "lower")]
    p = tmp_path / "profile.csv"
    write_distance_csv(p, rows)
    assert p.read_text().splitlines()[0] == "t,t_over_trel,value,stderr,kind"
    assert read_distance_csv(p) == rows
    with pytest.raises(ValueError):
        write_distance_csv(tmp_path / "bad.csv", [(0.0, 0.0, 0.0, 0.0, "mystery")])


def test_tv_profile_cap_advises_bound_mode():
    from binsplit.graphs import cycle_graph, uniform_weights
    from binsplit.spectral import StateSpaceCapError
    with pytest.raises(StateSpaceCapError, match="bound-based"):
        tv_profile_exact(cycle_graph(4), uniform_weights(4), 5, (5, 0, 0, 0),
                         [1.0], cap=10)
