import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pharmonic_lab import duality
from pharmonic_lab.gauge import expm_so
from pharmonic_lab.grid import cell_grad


@pytest.fixture(scope="module")
def probe04(disc04):
    return duality.probe_map(disc04)


def rotation(grid, amp=0.3):
    x, y = grid.points.T
    J = np.array([[0.0, -1.0], [1.0, 0.0]])
    return expm_so((amp * x * y)[:, None, None] * J)


def test_S_is_identity_at_two(disc08):
    X = np.random.default_rng(0).normal(size=(disc08.n_cells, 2, 2))
    assert np.array_equal(duality.op_S(None, X, 2.0, grid=disc08), X)


@settings(max_examples=20, deadline=None)
@given(p=st.floats(2.01, 3.0))
def test_S_rescales_pointwise(disc08, p):
    X = np.random.default_rng(1).normal(size=(disc08.n_cells, 2, 2))
    Y = duality.op_S(None, X, p, grid=disc08)
    ratio = Y[:, 0, 0] / X[:, 0, 0]
    assert np.allclose(Y, ratio[:, None, None] * X)
    assert ratio.min() > 0


@pytest.mark.parametrize("A", [None, "rot"])
def test_T_kills_gradients(disc04, probe04, A):
    Af = rotation(disc04) if A else None
    gu = cell_grad(disc04, probe04)
    X = gu if Af is None else np.einsum("tij,taj->tai", duality._cell_matrix(disc04, Af), gu)
    assert np.abs(duality.op_T(Af, X, grid=disc04)).max() <= 1e-10


def test_T_recovers_perp_gradients(disc04):
    x, y = disc04.points.T
    w = (1 - x * x - y * y) * np.sin(x)
    X = -cell_grad(disc04, w)[:, ::-1] * np.array([1.0, -1.0])
    X = X[:, :, None]
    T = duality.op_T(None, X, grid=disc04)
    assert np.allclose(T, X, atol=1e-10)


def test_singular_A_rejected(disc08):
    A = np.zeros((disc08.n_nodes, 2, 2))
    with pytest.raises(ValueError):
        duality.op_T(A, np.zeros((disc08.n_cells, 2, 2)), grid=disc08)


@pytest.mark.parametrize("A", [None, "rot"])
def test_commutator_slope(disc04, probe04, A):
    Af = rotation(disc04) if A else None
    pr = duality.commutator_probe(Af, probe04, [2.05, 2.1, 2.2, 2.3, 2.4], grid=disc04)
    assert pr.slope >= 0.8
    assert pr.rho_at_2 <= 1e-8 * pr.scale


def test_probe_range_checked(disc08):
    with pytest.raises(ValueError):
        duality.commutator_probe(None, duality.probe_map(disc08), [2.0, 2.1], grid=disc08)


@pytest.mark.parametrize("p", [2.1, 2.5])
def test_small_exponent_positive(p):
    assert duality.small_exponent(p) > 0


def test_disc_l21_report(disc04, probe04):
    rep = duality.disc_l21_report(probe04, 2.2, None, grid=disc04)
    assert rep.lhs > 0 and rep.term2 == 0.0
    assert np.isfinite(rep.constant_measured)
