import numpy as np
import pytest

from segrex import flows


def test_box_measure_trivia():
    p, q = flows.box_measure(1, 1)
    assert q.tolist() == [1.0]  # q = delta_0
    p, q = flows.box_measure(2, 1)
    assert np.allclose(q, [0.25, 0.5, 0.25])
    for l, d in ((2, 1), (3, 2), (4, 3), (7, 1)):
        p, q = flows.box_measure(l, d)
        assert p.sum() == pytest.approx(1.0)
        assert q.sum() == pytest.approx(1.0)
        assert q.shape == (2 * l - 1,) * d
        # symmetric tent in each coordinate
        for j in range(d):
            assert np.allclose(q, np.flip(q, axis=j))


def test_build_flow_l1_is_zero():
    f = flows.build_flow(1, 2)
    assert flows.flow_energy(f) == 0.0


def test_build_flow_1d_cumulative_oracle():
    # 1-d flows are unique: edge flow = cumulative sum of delta_0 - q
    for l in (2, 3, 5):
        f = flows.build_flow(l, 1)
        _, q = flows.box_measure(l, 1)
        b = np.zeros(2 * l)
        b[0] = 1.0
        b[: 2 * l - 1] -= q
        expect = np.concatenate([np.cumsum(b)[:-1], [0.0]])
        assert np.allclose(f.phi[0], expect, atol=1e-9)
    f2 = flows.build_flow(2, 1)
    assert f2.value((0,), (1,)) == pytest.approx(0.75, abs=1e-9)
    assert f2.value((1,), (2,)) == pytest.approx(0.25, abs=1e-9)
    assert f2.value((1,), (0,)) == pytest.approx(-0.75, abs=1e-9)


@pytest.mark.parametrize("d", [1, 2, 3])
@pytest.mark.parametrize("l", [2, 4, 8, 16])
def test_divergence_identity(d, l):
    if d == 3 and l == 16:
        pytest.skip("covered by the acceptance sweep")
    f = flows.build_flow(l, d)
    _, q = flows.box_measure(l, d)
    b = np.zeros(f.box_shape)
    b[(0,) * d] = 1.0
    sl = tuple(slice(0, 2 * l - 1) for _ in range(d))
    b[sl] -= q
    assert np.abs(f.divergence() - b).max() < 1e-9


@pytest.mark.parametrize("d,l", [(1, 4), (2, 4), (2, 8)])
def test_canonical_path_flow_valid_and_not_better(d, l):
    c = flows.canonical_path_flow(l, d)
    _, q = flows.box_measure(l, d)
    b = np.zeros(c.box_shape)
    b[(0,) * d] = 1.0
    sl = tuple(slice(0, 2 * l - 1) for _ in range(d))
    b[sl] -= q
    assert np.abs(c.divergence() - b).max() < 1e-12
    p = flows.build_flow(l, d)
    # Thomson optimality: the Poisson flow minimizes energy
    assert flows.flow_energy(p) <= flows.flow_energy(c) + 1e-9
    if d == 1:
        assert flows.flow_energy(p) == pytest.approx(flows.flow_energy(c), abs=1e-9)
    else:
        assert flows.flow_energy(p) < flows.flow_energy(c)


def test_energy_scaling_classes():
    sw1 = flows.energy_sweep(1, [2, 4, 8, 16])
    assert sw1["verdict"] == "linear"
    assert 1.8 <= sw1["ratios"][-1] <= 2.2
    sw2 = flows.energy_sweep(2, [2, 4, 8, 16])
    assert sw2["verdict"] == "log"
    d1, d2 = sw2["diffs"][-2:]
    assert abs(d2 - d1) <= 0.3 * abs(d1)
    sw3 = flows.energy_sweep(3, [2, 4, 8, 16])
    assert sw3["verdict"] == "bounded"
    assert sw3["ratios"][-1] < 1.1


def test_local_averages_trivia():
    G = np.full(8, 0.37)
    left, right = flows.local_averages(G, 3)
    assert np.allclose(left, 0.37) and np.allclose(right, 0.37)
    G = np.arange(8.0)
    left, right = flows.local_averages(G, 1)
    assert np.array_equal(left, G) and np.array_equal(right, G)
    with pytest.raises(ValueError):
        flows.local_averages(G, 0)
    with pytest.raises(ValueError):
        flows.local_averages(G, 9)


def test_local_averages_are_box_convolutions():
    rng = np.random.default_rng(2)
    G = rng.random(16)
    l = 4
    p, _ = flows.box_measure(l, 1)
    left, right = flows.local_averages(G, l)
    # left = G * p_l, right = G * p_l(-.) as torus convolutions
    conv_left = np.array([sum(G[(x - y) % 16] * p[y] for y in range(l)) for x in range(16)])
    conv_right = np.array([sum(G[(x + y) % 16] * p[y] for y in range(l)) for x in range(16)])
    assert np.allclose(left, conv_left, atol=1e-12)
    assert np.allclose(right, conv_right, atol=1e-12)


def test_double_average_associativity():
    rng = np.random.default_rng(4)
    G = rng.random(16)
    l = 3
    left, _ = flows.local_averages(G, l)
    _, right_of_left = flows.local_averages(left, l)
    # same as convolving G with the reflected double box q
    _, q = flows.box_measure(l, 1)
    conv = np.array(
        [sum(G[(x + y - (l - 1)) % 16] * q[y] for y in range(2 * l - 1)) for x in range(16)]
    )
    assert np.allclose(right_of_left, conv, atol=1e-12)


def test_local_average_pairing_identity():
    # sum_x g_x (omega * q_hat)(x) == sum_x left(g)_x right(omega)_x on random data
    rng = np.random.default_rng(9)
    N, l = 16, 4
    g = rng.standard_normal(N)
    omega = rng.standard_normal(N)
    left_g, _ = flows.local_averages(g, l)
    _, right_w = flows.local_averages(omega, l)
    lhs = float((left_g * right_w).sum())
    _, q = flows.box_measure(l, 1)
    conv = np.array(
        [sum(omega[(x + r) % N] * q[r] for r in range(2 * l - 1)) for x in range(N)]
    )
    rhs = float((g * conv).sum())
    assert lhs == pytest.approx(rhs, abs=1e-10)


def test_concentration_single_uniform_bit():
    # X uniform on {0,1}: kappa = 1, gamma = 1: log E[e^{(X-1/2)^2}] = 1/4 <= 2
    v = flows.concentration_check([([0.0, 1.0], [0.5, 0.5])], [1.0])
    assert v.kappa == 1.0
    assert v.log_mgf[0] == pytest.approx(0.25)
    assert v.holds


def test_concentration_gamma_zero_and_range():
    v = flows.concentration_check([([0.0, 1.0], [0.5, 0.5])], [0.0])
    assert v.log_mgf[0] == 0.0 and v.bound[0] == 0.0 and v.holds
    with pytest.raises(ValueError):
        flows.concentration_check([([0.0, 1.0], [0.5, 0.5])], [1.5])
    with pytest.raises(ValueError):
        flows.concentration_check([([0.0, 1.0], [0.5, 0.5])], [-0.1])


@pytest.mark.parametrize("p", [0.1, 0.5, 0.9])
def test_concentration_bernoulli_sums(p):
    n = 10
    variables = [([0.0, 1.0], [1 - p, p])] * n
    kappa = float(n)
    gammas = np.array([0.2, 0.5, 1.0]) / kappa
    v = flows.concentration_check(variables, gammas)
    assert v.holds
    assert (v.slack >= 0).all()


def test_concentration_input_validation():
    with pytest.raises(ValueError):
        flows.concentration_check([([1.0, 1.0], [0.5, 0.5])], [0.1])
    with pytest.raises(ValueError):
        flows.concentration_check([([0.0, 1.0], [0.7, 0.7])], [0.1])
    with pytest.raises(ValueError):
        flows.concentration_check([([0.0, 1.0], [0.5, 0.5])] * 21, [0.01])
