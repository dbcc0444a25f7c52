from types import SimpleNamespace

import numpy as np
import pytest

from segrex import master, rates
from segrex.kmc import SimParams
from segrex.lattice import Configuration, TorusGeometry, discrete_laplacian


def params_for(N, d=1, case=2, m=1, K=2.0, T=1.0, offsets=None):
    _, c1, c2 = rates.make_preset(case, m, offsets=offsets, d=d)
    return SimParams(TorusGeometry(N, d), K, c1, c2, T)


def test_state_index_roundtrip():
    g = TorusGeometry(3, 1)
    for idx in range(4**3):
        cfg = master.index_to_config(g, idx)
        assert master.config_to_index(cfg) == idx


def test_generator_rows_sum_to_zero():
    p = params_for(3, case=3, m=2, K=1.7)
    L = master.generator_matrix(p)
    assert np.abs(np.asarray(L.sum(axis=1)).ravel()).max() < 1e-12
    off = L - __import__("scipy.sparse", fromlist=["diags"]).diags(L.diagonal())
    assert off.min() >= 0.0


def test_generator_k0_block_diagonal_over_eta2():
    p = params_for(2, K=0.0)
    L = master.generator_matrix(p).toarray()
    n = 2
    for s in range(4**n):
        for sp in range(4**n):
            if L[s, sp] != 0.0 and s != sp:
                # transitions never change eta2
                assert (s & 3) == (sp & 3)
    # each eta2 sector is the 2-site exclusion generator: states with one
    # particle swap with total rate 2 N^2 = 8 (two bonds on the 2-torus)
    i1_from, i1_to = 0b01, 0b10
    s_from = (i1_from << n) | 0b00
    s_to = (i1_to << n) | 0b00
    assert L[s_from, s_to] == pytest.approx(8.0)


def test_generator_case3_kill_entry():
    # eta1 = 111, eta2 with a particle at site 2: kill rate K * eta1(2 + z1)
    K = 2.5
    p = params_for(3, case=3, m=2, K=K, offsets=[(1,)])
    L = master.generator_matrix(p)
    n = 3
    i1 = 0b111
    i2 = 0b100  # particle at site 2
    s = (i1 << n) | i2
    s_kill2 = (i1 << n) | 0b000
    assert L[s, s_kill2] == pytest.approx(K * 1.0)  # eta1(0) = 1
    # eta1 = 011 (site 2 empty at 2+z1=0? site 0 occupied): c2 = eta1(0)
    i1b = 0b011
    sb = (i1b << n) | i2
    # site 2 doubly occupied requires eta1(2) = 1; with i1b it is 0, no kill
    assert L[sb, (i1b << n) | 0b000] == 0.0


def test_evolve_t0_and_mass_conservation():
    p = params_for(2, K=1.0)
    L = master.generator_matrix(p)
    rng = np.random.default_rng(0)
    mu0 = rng.random(4**2)
    mu0 /= mu0.sum()
    out = master.evolve_distribution(L, mu0, [0.0])
    assert np.allclose(out[0], mu0)
    out = master.evolve_distribution(L, mu0, [0.05, 0.2, 1.0])
    for mu in out:
        assert abs(mu.sum() - 1.0) < 1e-9
        assert (mu >= 0).all()


def test_evolve_k0_converges_to_sector_uniform():
    # K = 0: eta2 marginal frozen; eta1 mixes to uniform within its
    # particle-number sector (exclusion is doubly stochastic per sector)
    p = params_for(3, K=0.0, T=50.0)
    L = master.generator_matrix(p)
    n = 3
    mu0 = np.zeros(4**n)
    start = (0b001 << n) | 0b010
    mu0[start] = 1.0
    mu = master.evolve_distribution(L, mu0, [30.0])[0]
    expect = np.zeros_like(mu)
    for i1 in (0b001, 0b010, 0b100):
        expect[(i1 << n) | 0b010] = 1.0 / 3.0
    assert np.abs(mu - expect).max() < 1e-6


def test_relative_entropy_examples():
    g = TorusGeometry(2, 1)
    nu = master.ProductBernoulli(g, np.full(2, 0.3), np.full(2, 0.6))
    vec = nu.state_probs()
    assert vec.sum() == pytest.approx(1.0)
    assert master.relative_entropy(vec, nu) == pytest.approx(0.0, abs=1e-13)
    # point mass vs fair-coin product on n sites: H = 2 n log 2
    half = master.ProductBernoulli(g, np.full(2, 0.5), np.full(2, 0.5))
    point = np.zeros(4**2)
    point[7] = 1.0
    assert master.relative_entropy(point, half) == pytest.approx(4 * np.log(2))


def test_relative_entropy_pinsker():
    g = TorusGeometry(2, 1)
    rng = np.random.default_rng(1)
    nu = master.ProductBernoulli(g, rng.uniform(0.2, 0.8, 2), rng.uniform(0.2, 0.8, 2))
    nu_vec = nu.state_probs()
    for _ in range(20):
        mu = rng.random(16)
        mu /= mu.sum()
        l1 = np.abs(mu - nu_vec).sum()
        assert master.relative_entropy(mu, nu_vec) >= 0.5 * l1**2 - 1e-12


def test_dirichlet_energy_examples():
    g = TorusGeometry(2, 1)
    u = np.array([0.3, 0.6])
    v = np.array([0.5, 0.4])
    nu = master.ProductBernoulli(g, u, v)
    ones = np.ones(16)
    assert master.dirichlet_energy(ones, nu, g) == 0.0
    # f depending only on eta2 is exchange invariant
    n = 2
    idx = np.arange(16)
    f_eta2 = ((idx & 3) * 0.77 + 0.1).astype(float)
    assert master.dirichlet_energy(f_eta2, nu, g) == pytest.approx(0.0, abs=1e-15)
    # quadratic scaling in a linear perturbation
    bit0 = ((idx >> n) & 1).astype(float)
    d_eps = {}
    for eps in (1e-2, 5e-3):
        f = 1.0 + eps * (bit0 - u[0])
        d_eps[eps] = master.dirichlet_energy(f, nu, g)
    exponent = np.log2(d_eps[1e-2] / d_eps[5e-3])
    assert exponent == pytest.approx(2.0, abs=0.05)


def rd_rhs(geom, K, c1, c2, u, v):
    c1x = rates.eval_field_all(c1, u, v)
    c2x = rates.eval_field_all(c2, u, v)
    du = discrete_laplacian(geom, u) - K * c1x * u * v
    dv = -K * c2x * u * v
    return du, dv


def test_yau_integrand_constant_densities_kill_vk():
    p = params_for(4, case=1, m=4)
    g = p.geom
    rng = np.random.default_rng(5)
    cfg = Configuration(g, rng.integers(0, 2, 4), rng.integers(0, 2, 4))
    vk, _ = master.yau_integrand(cfg, np.full(4, 0.4), np.full(4, 0.3), p)
    assert vk == 0.0


def test_yau_integrand_matches_case_closed_forms():
    # the lemma's case-specialized sums, written out by hand
    rng = np.random.default_rng(8)
    N = 4
    g = TorusGeometry(N, 1)
    u = rng.uniform(0.2, 0.8, N)
    v = rng.uniform(0.2, 0.8, N)
    chi_u = u * (1 - u)
    chi_v = v * (1 - v)
    for case, m in ((1, 4), (2, 2), (3, 2)):
        _, c1, c2 = rates.make_preset(case, m)
        p = SimParams(g, 1.9, c1, c2, 1.0)
        for _ in range(10):
            cfg = Configuration(g, rng.integers(0, 2, N), rng.integers(0, 2, N))
            e1 = cfg.eta1.astype(float)
            e2 = cfg.eta2.astype(float)
            w1 = (e1 - u) / chi_u
            w2 = (e2 - v) / chi_v
            K = p.K
            if case == 1:
                prod_e = np.ones(N)
                prod_u = np.ones(N)
                for i in range(1, m):
                    prod_e *= np.roll(e1, -i)
                    prod_u *= np.roll(u, -i)
                vg = -K * np.sum((e2 * prod_e - v * prod_u) * u * w1)
                vg += -K * np.sum(chi_u * v * w1 * w2)
            elif case == 2:
                prod_e = np.ones(N)
                prod_v = np.ones(N)
                for i in range(1, m):
                    prod_e *= np.roll(e2, -i)
                    prod_v *= np.roll(v, -i)
                vg = -K * np.sum((e2 * prod_e - v * prod_v) * u * w1)
                vg += -K * np.sum(chi_u * v * w1 * w2)
            else:
                prod_e = np.ones(N)
                prod_u = np.ones(N)
                for i in range(1, m):
                    prod_e *= np.roll(e1, -i)
                    prod_u *= np.roll(u, -i)
                vg = -K * np.sum(u * chi_v * w1 * w2)
                vg += -K * np.sum((e1 * prod_e - u * prod_u) * v * w2)
            _, vg_mod = master.yau_integrand(cfg, u, v, p)
            assert vg_mod == pytest.approx(vg, abs=1e-10)


def test_yau_integrand_case1_deterministic_part():
    # eta2 = 0, v = eps: the reaction remainder reduces to its
    # configuration-independent part plus the chi(u) coupling
    N = 4
    g = TorusGeometry(N, 1)
    _, c1, c2 = rates.make_preset(1, 4)
    p = SimParams(g, 2.0, c1, c2, 1.0)
    rng = np.random.default_rng(3)
    u = rng.uniform(0.3, 0.7, N)
    eps = 1e-3
    v = np.full(N, eps)
    cfg = Configuration(g, rng.integers(0, 2, N), np.zeros(N))
    e1 = cfg.eta1.astype(float)
    w1 = (e1 - u) / (u * (1 - u))
    w2 = (0.0 - v) / (v * (1 - v))
    prod_u = u * np.roll(u, -1) * np.roll(u, -2) * np.roll(u, -3)
    by_hand = -p.K * np.sum((0.0 - prod_u / u * v) * u * w1)  # first sum, eta2 = 0
    by_hand += -p.K * np.sum((e1 - u) * v * w2)  # c2 = 1 coupling
    _, vg = master.yau_integrand(cfg, u, v, p)
    assert vg == pytest.approx(by_hand, abs=1e-12)


def test_yau_integrand_case2_first_sum_mean_zero():
    # exact expectation over all 4^4 states under the product reference
    N = 4
    g = TorusGeometry(N, 1)
    _, c1, c2 = rates.make_preset(2, 2, offsets=[(1,)])
    p = SimParams(g, 1.3, c1, c2, 1.0)
    rng = np.random.default_rng(12)
    u = rng.uniform(0.25, 0.75, N)
    v = rng.uniform(0.25, 0.75, N)
    nu = master.ProductBernoulli(g, u, v)
    probs = nu.state_probs()
    first_sum = 0.0
    vg_mean = 0.0
    for idx in range(4**N):
        cfg = master.index_to_config(g, idx)
        e1 = cfg.eta1.astype(float)
        e2 = cfg.eta2.astype(float)
        w1 = (e1 - u) / (u * (1 - u))
        term = -p.K * np.sum((e2 * np.roll(e2, -1) - v * np.roll(v, -1)) * u * w1)
        first_sum += probs[idx] * term
        vg_mean += probs[idx] * master.yau_integrand(cfg, u, v, p)[1]
    assert first_sum == pytest.approx(0.0, abs=1e-12)
    assert vg_mean == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("case,m,N", [(2, 1, 3), (3, 2, 3), (2, 2, 3), (1, 4, 4)])
def test_yau_integrand_matches_adjoint_minus_time_derivative(case, m, N):
    # V_K + V_G == L^{*,nu_t} 1 - d/dt log psi_t at N=3 (N=4 for case 1,
    # whose m=4 offsets would wrap onto the origin at N=3), with the time
    # derivative taken by finite differences along the lattice ODE flow
    g = TorusGeometry(N, 1)
    _, c1, c2 = rates.make_preset(case, m)
    p = SimParams(g, 1.6, c1, c2, 1.0)
    rng = np.random.default_rng(17)
    u = rng.uniform(0.3, 0.7, N)
    v = rng.uniform(0.3, 0.7, N)
    L = master.generator_matrix(p)

    def rk4(u, v, h):
        def f(state):
            return rd_rhs(g, p.K, c1, c2, state[0], state[1])

        k1 = f((u, v))
        k2 = f((u + h / 2 * k1[0], v + h / 2 * k1[1]))
        k3 = f((u + h / 2 * k2[0], v + h / 2 * k2[1]))
        k4 = f((u + h * k3[0], v + h * k3[1]))
        du = (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0]) / 6
        dv = (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1]) / 6
        return u + h * du, v + h * dv

    h = 1e-4

    def log_at(step):
        uu, vv = u, v
        for _ in range(abs(step)):
            uu, vv = rk4(uu, vv, h if step > 0 else -h)
        return master.ProductBernoulli(g, uu, vv).log_state_probs()

    nu_t = master.ProductBernoulli(g, u, v)
    # fourth-order central difference tames the N^2-scaled curvature
    dlog = (-log_at(2) + 8 * log_at(1) - 8 * log_at(-1) + log_at(-2)) / (12 * h)
    adj = master.adjoint_unit(L, nu_t.state_probs())
    for idx in rng.integers(0, 4**N, size=12):
        cfg = master.index_to_config(g, int(idx))
        vk, vg = master.yau_integrand(cfg, u, v, p)
        assert vk + vg == pytest.approx(adj[idx] - dlog[idx], abs=1e-6)


def test_yau_integrand_printed_pairing_differs():
    N = 3
    g = TorusGeometry(N, 1)
    _, c1, c2 = rates.make_preset(2, 2)
    p = SimParams(g, 1.0, c1, c2, 1.0)
    rng = np.random.default_rng(2)
    u = rng.uniform(0.3, 0.7, N)
    v = rng.uniform(0.3, 0.7, N)
    cfg = Configuration(g, [1, 0, 1], [0, 1, 1])
    a = master.yau_integrand(cfg, u, v, p, pairing="consistent")
    b = master.yau_integrand(cfg, u, v, p, pairing="printed")
    assert a != b
    with pytest.raises(ValueError):
        master.yau_integrand(cfg, u, v, p, pairing="bogus")
    with pytest.raises(ValueError):
        master.yau_integrand(cfg, np.zeros(3), v, p)


def test_entropy_trajectory_zero_at_t0_and_stationary_k0():
    N = 4
    g = TorusGeometry(N, 1)
    _, c1, c2 = rates.make_preset(2, 1)
    p = SimParams(g, 0.0, c1, c2, 1.0)
    const_u = np.full(N, 0.35)
    const_v = np.full(N, 0.55)
    traj = SimpleNamespace(
        geom=g,
        times=[0.0, 0.05, 0.1],
        u=[const_u] * 3,
        v=[const_v] * 3,
    )
    series = master.entropy_trajectory(p, traj, [0.0, 0.05, 0.1])
    assert series.H[0] == pytest.approx(0.0, abs=1e-12)
    # constant product Bernoulli is invariant for pure exclusion
    assert series.H.max() < 1e-7
    assert np.allclose(series.H_per_site, series.H / N)


def test_entropy_decays_toward_stationary_product_law():
    # K = 0, nu frozen at nu_0 with constant u: dH/dt <= 0 numerically
    N = 3
    g = TorusGeometry(N, 1)
    _, c1, c2 = rates.make_preset(2, 1)
    p = SimParams(g, 0.0, c1, c2, 1.0)
    L = master.generator_matrix(p)
    nu = master.ProductBernoulli(g, np.full(N, 0.4), np.full(N, 0.5))
    rng = np.random.default_rng(21)
    mu0 = rng.random(4**N)
    mu0 /= mu0.sum()
    times = [0.0, 0.02, 0.05, 0.1, 0.3, 1.0]
    mus = master.evolve_distribution(L, mu0, times)
    hs = [master.relative_entropy(m, nu) for m in mus]
    # eta2 marginal is frozen, eta1 relaxes: entropy w.r.t. the invariant
    # product measure conditioned on matching eta2 means decreases
    assert all(b <= a + 1e-9 for a, b in zip(hs, hs[1:]))


def test_entropy_trajectory_grid_mismatch():
    g = TorusGeometry(4, 1)
    _, c1, c2 = rates.make_preset(2, 1)
    p = SimParams(g, 1.0, c1, c2, 1.0)
    traj = SimpleNamespace(geom=TorusGeometry(5, 1), times=[0.0], u=[np.full(5, 0.5)], v=[np.full(5, 0.5)])
    with pytest.raises(ValueError):
        master.entropy_trajectory(p, traj, [0.0])


def test_size_cap():
    g = TorusGeometry(3, 2)  # 9 sites > 8
    _, c1, c2 = rates.make_preset(2, 1)
    p = SimParams(g, 1.0, c1, c2, 1.0)
    with pytest.raises(ValueError):
        master.generator_matrix(p)
