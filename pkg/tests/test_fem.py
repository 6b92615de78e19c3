import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wavesurrogate import fem
from wavesurrogate.analytic import GridFunction, WaveProblem


def _element_assembly(n_nodes):
    """Dense P1 matrices from 2x2 element contributions, Dirichlet rows dropped."""
    h = 2.0 / (n_nodes - 1)
    M = np.zeros((n_nodes, n_nodes))
    K = np.zeros((n_nodes, n_nodes))
    me = h / 6.0 * np.array([[2.0, 1.0], [1.0, 2.0]])
    ke = 1.0 / h * np.array([[1.0, -1.0], [-1.0, 1.0]])
    for e in range(n_nodes - 1):
        idx = np.ix_([e, e + 1], [e, e + 1])
        M[idx] += me
        K[idx] += ke
    return M[1:-1, 1:-1], K[1:-1, 1:-1]


def test_three_nodes():
    d = fem.assemble(3)
    assert d.h == 1.0
    np.testing.assert_allclose(d.mass.toarray(), [[2.0 / 3.0]])
    np.testing.assert_allclose(d.stiffness.toarray(), [[2.0]])


def test_rejects_too_few_nodes():
    with pytest.raises(ValueError):
        fem.assemble(2)


@given(st.integers(3, 60))
@settings(max_examples=25)
def test_matches_element_assembly(n):
    d = fem.assemble(n)
    M, K = _element_assembly(n)
    np.testing.assert_allclose(d.mass.toarray(), M, rtol=1e-14, atol=1e-15)
    np.testing.assert_allclose(d.stiffness.toarray(), K, rtol=1e-14, atol=1e-15)


@given(st.integers(4, 200))
def test_mass_row_sums(n):
    d = fem.assemble(n)
    ones = np.ones(d.n_interior)
    M, _ = _element_assembly(n)
    total = float(ones @ d.mass.matvec(ones))
    assert total == pytest.approx(M.sum(), rel=1e-13)
    # full matrix sums to |Omega| = 2; each Dirichlet node removes h/2 + h/2 - h/3
    assert total == pytest.approx(2.0 - 4.0 * d.h / 3.0, rel=1e-12)


@given(st.integers(5, 200))
def test_stiffness_kills_constants_away_from_walls(n):
    d = fem.assemble(n)
    r = d.stiffness.matvec(np.full(d.n_interior, 3.7))
    np.testing.assert_allclose(r[1:-1], 0.0, atol=1e-9)


def test_matrices_definite():
    d = fem.assemble(40)
    assert np.linalg.eigvalsh(d.mass.toarray()).min() > 0
    assert np.linalg.eigvalsh(d.stiffness.toarray()).min() > -1e-12


def test_tridiagonal_solver_against_dense():
    rng = np.random.default_rng(1)
    d = fem.assemble(30)
    A = d.mass + d.stiffness.scaled(0.01)
    b = rng.normal(size=A.size)
    x = fem.TridiagonalSolver(A).solve(b)
    np.testing.assert_allclose(x, np.linalg.solve(A.toarray(), b), rtol=1e-12)


def test_zero_initial_data_stays_zero():
    d = fem.assemble(50, 40)
    g = fem.solve_fom(d, u0=np.zeros(d.n_interior))
    assert np.all(g.values == 0.0)


def test_energy_conserved_to_round_off():
    d = fem.assemble(400, 400)
    _, energy = fem.solve_fom(d, return_energy=True)
    assert abs(energy[-1] - energy[0]) / energy[0] < 1e-10
    assert np.max(np.abs(energy - energy[0])) / energy[0] < 1e-10


def test_snapshot_shape_and_boundary_columns():
    d = fem.assemble(101, 77)
    g = fem.solve_fom(d)
    assert g.values.shape == (77, 101)
    assert np.all(g.values[:, 0] == 0.0) and np.all(g.values[:, -1] == 0.0)
    np.testing.assert_allclose(g.t_nodes[[0, -1]], [0.0, 2.0])


def test_symmetry():
    g = fem.solve_fom(fem.assemble(301))
    np.testing.assert_allclose(g.values, g.values[:, ::-1], atol=1e-11)


def test_mse_definition():
    p = WaveProblem()
    t = np.linspace(0, 2, 41)
    xi = np.linspace(-1, 1, 53)
    exact = p.solution(t[:, None], xi[None, :])
    assert fem.fom_mse(GridFunction(t, xi, exact), p) == 0.0
    assert fem.fom_mse(GridFunction(t, xi, exact + 0.3), p) == pytest.approx(0.09, rel=1e-12)


def _mse(n):
    return fem.fom_mse(fem.solve_fom(fem.assemble(n)))


def test_convergence_ratios():
    errors = [math.sqrt(_mse(n)) for n in (250, 500, 1000, 2000)]
    ratios = [a / b for a, b in zip(errors, errors[1:])]
    for r in ratios:
        assert 3.5 <= r <= 4.5, ratios


def test_coarse_to_fine_mse_ratio():
    ratio = _mse(100) / _mse(3000)
    assert 30 ** 4 / 4 <= ratio <= 30 ** 4 * 4


def test_snapshot_file_roundtrip(tmp_path):
    g = fem.solve_fom(fem.assemble(23, 17))
    p = tmp_path / "s.wvsn"
    fem.write_snapshots(p, g)
    raw = p.read_bytes()
    assert raw[:5] == b"WVSN\x01"
    assert len(raw) == 5 + 6 * 8 + 8 * 23 * 17
    # header fields in order, then time-major values
    assert np.frombuffer(raw[5:21], "<u8").tolist() == [17, 23]
    np.testing.assert_array_equal(np.frombuffer(raw[21:53], "<f8"), [0.0, 2.0, -1.0, 1.0])
    np.testing.assert_array_equal(np.frombuffer(raw[53:], "<f8").reshape(17, 23), g.values)
    back = fem.read_snapshots(p)
    np.testing.assert_array_equal(back.values, g.values)
    np.testing.assert_array_equal(back.xi_nodes, g.xi_nodes)
    np.testing.assert_array_equal(back.t_nodes, g.t_nodes)


def test_snapshot_write_is_reproducible(tmp_path):
    for name in ("a", "b"):
        fem.write_snapshots(tmp_path / name, fem.solve_fom(fem.assemble(41)))
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()


def test_snapshot_reader_rejects_garbage(tmp_path):
    p = tmp_path / "x.wvsn"
    p.write_bytes(b"WVSX" + bytes(60))
    with pytest.raises(ValueError):
        fem.read_snapshots(p)
    g = fem.solve_fom(fem.assemble(5, 4))
    fem.write_snapshots(p, g)
    p.write_bytes(p.read_bytes()[:-8])
    with pytest.raises(ValueError, match="bytes"):
        fem.read_snapshots(p)
