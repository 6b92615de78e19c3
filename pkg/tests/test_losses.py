import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from wavesurrogate import losses as L
from wavesurrogate import network as nw
from wavesurrogate.analytic import GridFunction, WaveProblem, exact_solution

finite = st.floats(-10, 10, allow_nan=False)


def grid_strategy(max_t=6, max_xi=8):
    return st.tuples(st.integers(1, max_t), st.integers(1, max_xi)).flatmap(
        lambda s: st.tuples(arrays(np.float64, s, elements=finite),
                            arrays(np.float64, s, elements=finite),
                            arrays(np.float64, s[0], elements=st.floats(0, 5))))


# ------------------------------------------------------------ data terms

def test_data_loss_zero_and_offset():
    y = np.random.default_rng(0).normal(size=(5, 7))
    assert L.data_terms(y, y)[0] == 0.0
    assert L.data_terms(y + 0.25, y)[0] == pytest.approx(0.0625, rel=1e-14)


def test_data_loss_is_plain_mse():
    rng = np.random.default_rng(1)
    v, y = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
    direct = sum((v.ravel()[k] - y.ravel()[k]) ** 2 for k in range(12)) / 12
    assert L.data_terms(v, y)[0] == pytest.approx(direct, rel=1e-14)


def test_data_loss_on_network():
    p = nw.init(0)
    t, xi = L.data_grid_nodes(3, 4)
    targets = np.random.default_rng(0).normal(size=(3, 4))
    grid = L.DataGrid(t, xi, targets)
    phi = np.array([[nw.predict(p, [[a, b]])[0] for b in xi] for a in t])
    assert L.data_loss(p, grid) == pytest.approx(np.mean((phi - targets) ** 2), rel=1e-14)


def test_es_zero_epsilon_equals_data_loss_exactly():
    rng = np.random.default_rng(2)
    v, y = rng.normal(size=(6, 9)), rng.normal(size=(6, 9))
    a, ga = L.data_terms(v, y)
    b, gb = L.error_sensitive_terms(v, y, np.zeros(6))
    assert a == b
    np.testing.assert_array_equal(ga, gb)


def test_es_inside_tube_zero_loss_and_gradient():
    rng = np.random.default_rng(3)
    y = rng.normal(size=(4, 10))
    v = y + 0.01 * rng.normal(size=y.shape)
    rms = L.slice_rms(v, y)
    eps = 1.01 * rms * math.sqrt(2.0)
    loss, g = L.error_sensitive_terms(v, y, eps)
    assert loss == 0.0
    assert np.all(g == 0.0)


def test_es_single_slice_hand_value():
    # rms 0.5, eps/sqrt(|Omega_xi|) = 0.2
    v = np.array([[0.5, -0.5, 0.5, -0.5]])
    loss, _ = L.error_sensitive_terms(v, np.zeros_like(v), np.array([0.2 * math.sqrt(2.0)]))
    assert loss == pytest.approx(0.09, rel=1e-14)


def test_es_gradient_matches_fd():
    rng = np.random.default_rng(4)
    y = rng.normal(size=(5, 6))
    v = y + rng.normal(size=y.shape)
    eps = 0.5 * L.slice_rms(v, y) * math.sqrt(2.0)
    eps[2] = 0.0
    _, g = L.error_sensitive_terms(v, y, eps)
    h = 1e-6
    for idx in [(0, 0), (2, 3), (4, 5)]:
        vp, vm = v.copy(), v.copy()
        vp[idx] += h
        vm[idx] -= h
        fd = (L.error_sensitive_terms(vp, y, eps)[0] - L.error_sensitive_terms(vm, y, eps)[0]) / (2 * h)
        assert g[idx] == pytest.approx(fd, rel=1e-6)


def test_es_kink_subgradient_zero():
    v = np.array([[0.3, -0.3]])
    eps = np.array([0.3 * math.sqrt(2.0)])
    loss, g = L.error_sensitive_terms(v, np.zeros_like(v), eps)
    assert loss == 0.0 and np.all(g == 0.0)


def test_es_rejects_negative_epsilon():
    with pytest.raises(ValueError):
        L.error_sensitive_terms(np.zeros((2, 2)), np.zeros((2, 2)), np.array([0.1, -0.1]))
    with pytest.raises(ValueError):
        L.DataGrid([0.5, 1.0], [0.0], np.zeros((2, 1)), epsilon=[0.1, -1.0])


@given(grid_strategy())
@settings(max_examples=300)
def test_es_never_exceeds_data_loss(case):
    v, y, eps = case
    assert L.error_sensitive_terms(v, y, eps)[0] <= L.data_terms(v, y)[0] * (1 + 1e-12)


@given(grid_strategy(), st.floats(1.0, 10.0))
@settings(max_examples=200)
def test_es_monotone_in_epsilon(case, factor):
    v, y, eps = case
    eps = eps + 1e-6
    small = L.error_sensitive_terms(v, y, eps)[0]
    big = L.error_sensitive_terms(v, y, factor * eps)[0]
    assert big <= small * (1 + 1e-12) + 1e-300


@given(grid_strategy())
@settings(max_examples=200)
def test_es_strictly_below_when_tube_nonzero(case):
    v, y, eps = case
    rms = L.slice_rms(v, y)
    assume(np.any((eps > 1e-3) & (rms > 1e-3)))
    assert L.error_sensitive_terms(v, y, eps)[0] < L.data_terms(v, y)[0]


def _l2(v, length):
    # discrete L2(Omega_xi) norm consistent with the slice RMS
    return math.sqrt(length * np.mean(v * v))


@given(st.integers(0, 2 ** 32 - 1))
@settings(max_examples=1000)
def test_error_propagation_bound(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 40))
    length = float(rng.uniform(0.5, 4.0))
    u = rng.normal(size=n)
    e = rng.normal(size=n)
    eps = float(rng.uniform(0, 2))
    # surrogate within eps of the truth
    u_tilde = u + e / max(_l2(e, length), 1e-300) * eps * rng.uniform(0, 1)
    phi = u_tilde + rng.normal(scale=rng.uniform(0, 3), size=n)
    assert _l2(u - u_tilde, length) <= eps * (1 + 1e-12)
    es, _ = L.error_sensitive_terms(phi[None, :], u_tilde[None, :], np.array([eps]), length)
    i_true = np.mean((phi - u) ** 2)
    assert i_true <= 2 * es + 8 * eps ** 2 / length + 1e-12


# ------------------------------------------------------------ interior / boundary

def test_interior_residual_of_t_squared():
    n = 17
    loss, g_tt, g_xx = L.interior_terms(np.full(n, 2.0), np.zeros(n))
    assert loss == 4.0
    np.testing.assert_allclose(g_tt, 4.0 / n)
    np.testing.assert_allclose(g_xx, -4.0 / n)


def test_interior_zero_network():
    pts = L.interior_points(100, np.random.default_rng(0))
    assert L.interior_loss(nw.NetworkParams(np.zeros(1761)), pts) == 0.0


def test_interior_loss_small_on_exact_solution():
    pts = L.interior_points(200, np.random.default_rng(1))
    pts = pts[(np.abs(pts[:, 1]) < 0.99) & (pts[:, 0] > 0.01) & (pts[:, 0] < 1.99)]
    h = 1e-3
    c = (-1 / 12, 4 / 3, -5 / 2, 4 / 3, -1 / 12)
    t, x = pts[:, 0], pts[:, 1]
    d_tt = sum(ck * exact_solution(t + k * h, x) for k, ck in zip(range(-2, 3), c)) / h ** 2
    d_xx = sum(ck * exact_solution(t, x + k * h) for k, ck in zip(range(-2, 3), c)) / h ** 2
    assert L.interior_terms(d_tt, d_xx)[0] <= 1e-4


def test_interior_points_in_domain_and_seeded():
    a = L.interior_points(500, np.random.default_rng(5))
    b = L.interior_points(500, np.random.default_rng(5))
    np.testing.assert_array_equal(a, b)
    assert np.all((a[:, 0] >= 0) & (a[:, 0] <= 2) & (a[:, 1] >= -1) & (a[:, 1] <= 1))


def test_boundary_split_and_targets():
    b = L.boundary_points(3000)
    counts = np.bincount(b.tags)
    assert counts.tolist() == [1000, 1000, 1000]
    lat = b.points[b.tags == L.LATERAL]
    assert np.sum(lat[:, 1] == -1.0) == 500 and np.sum(lat[:, 1] == 1.0) == 500
    init = b.points[b.tags != L.LATERAL]
    assert np.all(init[:, 0] == 0.0)
    disp = b.tags == L.INITIAL_DISPLACEMENT
    np.testing.assert_array_equal(b.targets[disp], WaveProblem().initial_displacement(b.points[disp, 1]))
    assert np.all(b.targets[~disp] == 0.0)


def test_boundary_zero_network():
    b = L.boundary_points(300)
    loss = L.boundary_loss(nw.NetworkParams(np.zeros(1761)), b)
    disp = b.tags == L.INITIAL_DISPLACEMENT
    assert loss == pytest.approx(np.sum(b.targets[disp] ** 2) / len(b), rel=1e-14)


def test_boundary_exact_fit_is_zero():
    b = L.boundary_points(300)
    value = np.where(b.tags == L.INITIAL_DISPLACEMENT, b.targets, 0.0)
    loss, gv, gt = L.boundary_terms(value, np.zeros(len(b)), b.tags, b.targets)
    assert loss == 0.0 and not gv.any() and not gt.any()


def test_boundary_tagwise_recomputation():
    rng = np.random.default_rng(7)
    b = L.boundary_points(99)
    value, d_t = rng.normal(size=99), rng.normal(size=99)
    loss, _, _ = L.boundary_terms(value, d_t, b.tags, b.targets)
    acc = 0.0
    for k in range(99):
        if b.tags[k] == L.INITIAL_DISPLACEMENT:
            acc += (value[k] - b.targets[k]) ** 2
        elif b.tags[k] == L.INITIAL_VELOCITY:
            acc += d_t[k] ** 2
        else:
            acc += value[k] ** 2
    assert loss == pytest.approx(acc / 99, rel=1e-14)


def test_boundary_unknown_tag():
    with pytest.raises(ValueError, match="tag"):
        L.boundary_terms(np.zeros(3), np.zeros(3), np.array([0, 1, 7]), np.zeros(3))


def test_data_grid_layout():
    t, xi = L.data_grid_nodes(150, 100)
    assert t.size == 150 and xi.size == 100
    assert t[0] > 0 and t[-1] == pytest.approx(2.0)
    assert np.all(np.abs(xi) < 1)
    np.testing.assert_allclose(np.diff(t), 2 / 150)
    np.testing.assert_allclose(np.diff(xi), 2 / 101)


# ------------------------------------------------------------ weights

def test_opt_weight_examples():
    assert L.opt_weights(1, 1, 1).as_tuple() == pytest.approx((1 / 3, 1 / 3, 1 / 3), rel=1e-15)
    assert L.opt_weights(1, 2, 2).as_tuple() == pytest.approx((0.5, 0.25, 0.25), rel=1e-15)


@given(st.tuples(*[st.floats(1e-6, 1e6)] * 3))
@settings(max_examples=300)
def test_opt_weight_identities(m):
    lam = np.array(L.opt_weights(*m).as_tuple())
    assert abs(lam.sum() - 1) <= 1e-12
    prod = lam * np.array(m)
    assert np.ptp(prod) <= 1e-12 * prod.max()


@given(st.tuples(*[st.floats(1e-3, 1e3)] * 3), st.floats(1e-3, 1e3))
def test_opt_weights_scale_invariant(m, c):
    a = np.array(L.opt_weights(*m).as_tuple())
    b = np.array(L.opt_weights(*(c * x for x in m)).as_tuple())
    np.testing.assert_allclose(a, b, rtol=1e-12)


def test_opt_rejects_nonpositive():
    with pytest.raises(ValueError):
        L.opt_weights(1.0, 0.0, 1.0)


def test_weights_nonnegative():
    with pytest.raises(ValueError):
        L.LossWeights(-1.0, 1.0, 1.0)


def test_magnitudes_constant_reference():
    t = np.linspace(0, 2, 33)
    xi = np.linspace(-1, 1, 41)
    g = GridFunction(t, xi, np.full((33, 41), 0.7))
    md, mi, mb = L.characteristic_magnitudes(g)
    assert md == pytest.approx(0.49, rel=1e-13)
    assert mi == pytest.approx(1e-12 * 0.49, rel=1e-6)


def test_magnitudes_standing_sine():
    t = np.linspace(0, 2, 201)
    xi = np.linspace(-1, 1, 201)
    g = GridFunction(t, xi, np.tile(np.sin(np.pi * xi), (201, 1)))
    md, mi, _ = L.characteristic_magnitudes(g, boundary_targets=np.ones(4))
    assert md == pytest.approx(0.5, rel=1e-4)
    assert mi == pytest.approx(np.pi ** 4 / 2, rel=1e-4)


def test_second_derivative_exact_for_quintics():
    x = np.linspace(-1, 1, 30)
    d = L._second_derivative(x ** 5 - 2 * x ** 3, x[1] - x[0], axis=0)
    np.testing.assert_allclose(d, 20 * x ** 3 - 12 * x, atol=1e-9)


def test_magnitudes_analytic_positive():
    m = L.characteristic_magnitudes(WaveProblem())
    assert all(v > 0 for v in m)


def test_lra_fixed_point():
    g = {t: np.ones(31) for t in L.TERMS}
    w = L.lra_update(L.LossWeights(1, 1, 1, "LRA"), g)
    assert w.as_tuple() == (1.0, 1.0, 1.0)


def test_lra_hand_value():
    g_int = np.zeros(10)
    g_int[3] = -10.0
    grads = {"interior": g_int, "data": np.full(10, 0.1), "boundary": np.zeros(10)}
    w = L.lra_update(L.LossWeights(1.0, 1.0, 0.5, "LRA"), grads, rate=1.0)
    assert w.data == pytest.approx(100.0, rel=1e-14)
    assert w.boundary == 0.5      # zero gradient: left unchanged
    assert w.interior == 1.0


@given(arrays(np.float64, 12, elements=finite), arrays(np.float64, 12, elements=finite),
       arrays(np.float64, 12, elements=finite), st.floats(0, 1))
def test_lra_stays_nonnegative(gi, gd, gb, rate):
    w = L.lra_update(L.LossWeights(0.3, 1.0, 2.0, "LRA"), {"interior": gi, "data": gd, "boundary": gb}, rate)
    assert min(w.as_tuple()) >= 0


# ------------------------------------------------------------ total loss

@pytest.fixture(scope="module")
def tiny_sets():
    p = WaveProblem()
    rng = np.random.default_rng(0)
    t, xi = L.data_grid_nodes(4, 5)
    targets = p.solution(t[:, None], xi[None, :])
    eps = np.full(4, 0.05)
    return L.CollocationSets(L.interior_points(40, rng), L.boundary_points(30),
                             L.DataGrid(t, xi, targets + 0.1, eps))


def test_total_loss_weighted_sum(tiny_sets):
    p = nw.init(1)
    w = L.LossWeights(0.3, 0.5, 0.2)
    ev = L.total_loss(p, tiny_sets, w)
    ref = (0.3 * L.data_loss(p, tiny_sets.data) + 0.5 * L.interior_loss(p, tiny_sets.interior)
           + 0.2 * L.boundary_loss(p, tiny_sets.boundary))
    assert ev.total == pytest.approx(ref, rel=1e-13)


def test_total_loss_baseline_form(tiny_sets):
    p = nw.init(1)
    sets = L.CollocationSets(tiny_sets.interior, tiny_sets.boundary)
    ev = L.total_loss(p, sets, L.LossWeights(0.0, 0.5, 0.2))
    ref = 0.5 * L.interior_loss(p, sets.interior) + 0.2 * L.boundary_loss(p, sets.boundary)
    assert ev.total == pytest.approx(ref, rel=1e-13)
    assert ev.terms["data"] == 0.0


def test_total_loss_all_zero_weights(tiny_sets):
    ev = L.total_loss(nw.init(1), tiny_sets, L.LossWeights(0.0, 0.0, 0.0))
    assert ev.total == 0.0 and not ev.grad.any()


@pytest.mark.parametrize("mode", ["plain", "error_sensitive"])
def test_total_gradient_matches_fd(tiny_sets, mode):
    p = nw.init(2)
    w = L.LossWeights(0.4, 0.01, 0.6)
    ev = L.total_loss(p, tiny_sets, w, mode)
    coords = np.random.default_rng(3).choice(p.n_theta, 10, replace=False)
    h = 1e-5
    for j in coords:
        tp, tm = p.theta.copy(), p.theta.copy()
        tp[j] += h
        tm[j] -= h
        fp = L.total_loss(nw.NetworkParams(tp), tiny_sets, w, mode).total
        fm = L.total_loss(nw.NetworkParams(tm), tiny_sets, w, mode).total
        fd = (fp - fm) / (2 * h)
        assert ev.grad[j] == pytest.approx(fd, rel=1e-4, abs=1e-9)


def test_objective_needs_bounds_for_es(tiny_sets):
    sets = L.CollocationSets(tiny_sets.interior, tiny_sets.boundary,
                             L.DataGrid(tiny_sets.data.t_nodes, tiny_sets.data.xi_nodes,
                                        tiny_sets.data.targets))
    with pytest.raises(ValueError):
        L.Objective(sets, "error_sensitive")


def test_inflated_tube_removes_data_gradient(tiny_sets):
    p = nw.init(4)
    d = tiny_sets.data
    wide = L.DataGrid(d.t_nodes, d.xi_nodes, d.targets, d.epsilon * 1e6)
    sets = L.CollocationSets(tiny_sets.interior, tiny_sets.boundary, wide)
    bare = L.CollocationSets(tiny_sets.interior, tiny_sets.boundary)
    w = L.LossWeights(0.4, 0.01, 0.6)
    a = L.total_loss(p, sets, w, "error_sensitive")
    b = L.total_loss(p, bare, w)
    assert a.total == b.total
    np.testing.assert_array_equal(a.grad, b.grad)
    assert not a.term_grads["data"].any()
