import numpy as np
import pytest

from boris_sdc.errors import ParameterError
from boris_sdc.quadrature import NodeFamily, make_nodes
from boris_sdc.verlet import build_verlet_matrices


def test_lobatto_m2_pattern():
    dt = 0.9
    vm = build_verlet_matrices(np.array([0.0, 0.0, dt]))
    assert np.allclose(vm.QE, [[0, 0, 0], [0, 0, 0], [0, dt, 0]])
    assert np.allclose(vm.QT[2], [0, dt / 2, dt / 2])
    assert np.allclose(vm.Qx[2], [0, dt * dt / 2, 0])


def test_equidistant_pattern_read_off():
    h = 0.3
    vm = build_verlet_matrices(np.array([0.0, h, 2 * h]))
    assert np.allclose(vm.QE, [[0, 0, 0], [h, 0, 0], [h, h, 0]])
    assert np.allclose(vm.QI, [[0, 0, 0], [0, h, 0], [0, h, h]])


def test_all_equal_nodes_give_zero():
    vm = build_verlet_matrices(np.full(4, 1.5))
    for mat in (vm.QE, vm.QI, vm.QT, vm.Qx):
        assert np.all(mat == 0)


def test_decreasing_nodes_rejected():
    with pytest.raises(ParameterError):
        build_verlet_matrices(np.array([0.0, 0.5, 0.3]))


@pytest.mark.parametrize("M", [2, 3, 5, 7])
def test_triangular_structure(M):
    taus = make_nodes(NodeFamily.GAUSS_LOBATTO, M, 0.0, 1.3)
    vm = build_verlet_matrices(taus)
    assert np.all(np.triu(vm.QE) == 0)  # strictly lower
    assert np.all(np.triu(vm.QI, 1) == 0) and np.all(vm.QI[0] == 0)
    assert np.all(np.triu(vm.QT, 1) == 0)
    assert np.all(np.triu(vm.Qx) == 0)  # strictly lower


@pytest.mark.parametrize("M", [2, 3, 5])
def test_qe_row_sums(M):
    taus = make_nodes(NodeFamily.GAUSS_LOBATTO, M, 0.2, 1.8)
    vm = build_verlet_matrices(taus)
    for m in range(M + 1):
        assert vm.QE[m].sum() == pytest.approx(taus[m] - taus[0], rel=1e-13, abs=1e-16)


def test_constant_force_matches_recursion():
    # with f held constant the matrix form must reproduce plain
    # velocity-Verlet substepping exactly
    rng = np.random.default_rng(7)
    dtau = rng.uniform(0.0, 0.4, size=5)
    taus = np.concatenate(([0.0], np.cumsum(dtau)))
    vm = build_verlet_matrices(taus)
    f = np.array(1.37)
    x0, v0 = 0.8, -0.4

    xs, vs = [x0], [v0]
    for d in dtau:
        vs.append(vs[-1] + 0.5 * d * (f + f))
        xs.append(xs[-1] + d * (vs[-2] + 0.5 * d * f))
    xs, vs = np.array(xs), np.array(vs)

    v_mat = v0 + vm.QT @ np.full(6, f)
    x_mat = x0 + vm.QE @ np.full(6, v0) + vm.Qx @ np.full(6, f)
    assert np.allclose(v_mat, vs, rtol=1e-13)
    assert np.allclose(x_mat, xs, rtol=1e-13)
