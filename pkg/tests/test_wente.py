import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pharmonic_lab import wente
from pharmonic_lab.gauge import expm_so, skew
from pharmonic_lab.grid import Field


def xy(grid):
    return grid.points[:, 0], grid.points[:, 1]


@pytest.mark.parametrize("grid_name", ["disc04", "disc02"])
def test_closed_form(grid_name, request):
    g = request.getfixturevalue(grid_name)
    x, y = xy(g)
    phi, cert = wente.solve_weighted_wente(1.0, Field(g, x), Field(g, y), grid=g)
    assert np.abs(phi.values - (x * x + y * y - 1) / 4).max() <= 3 * g.h ** 2
    assert cert.sup_bound_holds


def test_jacobian_of_coordinates(disc08):
    x, y = xy(disc08)
    # grad_perp y = (-1, 0)
    assert np.allclose(wente.jacobian(x, y, disc08), -1.0)


def test_suite_bound(disc04):
    rows = wente.wente_suite(disc04, n_pairs=6, seed=1)
    assert len(rows) == 18
    assert max(r["constant"] for r in rows) <= wente.CONSTANT_CAP
    assert max(r["sup_ratio"] for r in rows) <= wente.SUP_FACTOR


@settings(max_examples=15, deadline=None)
@given(s=st.floats(0.1, 10), t=st.floats(0.1, 10))
def test_certificate_scale_invariant(disc08, s, t):
    rng = np.random.default_rng(0)
    a, b = wente.random_smooth(disc08, rng), wente.random_smooth(disc08, rng)
    x, y = xy(disc08)
    f = 1 + x * x + y * y
    _, c1 = wente.solve_weighted_wente(f, Field(disc08, a), Field(disc08, b), grid=disc08)
    _, c2 = wente.solve_weighted_wente(f, Field(disc08, s * a), Field(disc08, t * b), grid=disc08)
    assert c2.constant_measured == pytest.approx(c1.constant_measured, rel=1e-8)


def test_zero_data():
    cert = wente.WenteCertificate(0.0, 0.0, 0.0, 0.0)
    assert cert.constant_measured == 0.0


def _rotation_field(grid, amp=0.1):
    x, y = xy(grid)
    th = amp * np.sin(np.pi * x) * np.cos(np.pi * y)
    J = np.array([[0.0, -1.0], [1.0, 0.0]])
    return expm_so(th[:, None, None] * J)


def test_awente_identity_is_poisson(disc04):
    x, y = xy(disc04)
    Id = np.broadcast_to(np.eye(2), (disc04.n_nodes, 2, 2)).copy()
    D = np.zeros((disc04.n_nodes, 2, 2))
    D[:, 0, 1] = y
    v = np.stack([np.zeros_like(x), x], 1)
    phi, rep = wente.solve_awente(Id, D, v, grid=disc04)
    assert rep.converged and rep.iterations <= 1
    ref, _ = wente.solve_weighted_wente(1.0, Field(disc04, x), Field(disc04, y), grid=disc04)
    assert np.abs(np.abs(phi.values[:, 0]) - np.abs(ref.values)).max() <= 1e-10


@pytest.mark.parametrize("mode", ["lorentz", "l2"])
def test_awente_series_converges(disc04, mode):
    rng = np.random.default_rng(3)
    A = _rotation_field(disc04)
    D = np.stack([wente.random_smooth(disc04, rng) for _ in range(4)], 1).reshape(-1, 2, 2)
    v = np.stack([wente.random_smooth(disc04, rng) for _ in range(2)], 1)
    _, rep = wente.solve_awente(A, D, v, mode=mode, p=2.3, grid=disc04)
    assert rep.converged
    assert rep.residual <= 1e-10
    assert max(rep.ratios) < 1.0
    assert 0 < rep.constant < 10


def test_awente_source_override(disc08):
    A = _rotation_field(disc08)
    src = np.ones((disc08.n_cells, 2))
    phi, rep = wente.solve_awente(A, None, None, grid=disc08, source=src)
    assert rep.converged and np.isnan(rep.lhs)
    assert np.all(phi.values[disc08.boundary] == 0.0)


def test_awente_bad_mode(disc08):
    A = _rotation_field(disc08)
    D = np.zeros((disc08.n_nodes, 2, 2))
    with pytest.raises(ValueError):
        wente.solve_awente(A, D, np.zeros((disc08.n_nodes, 2)), mode="sup", grid=disc08)


def test_awente_far_from_so_warns(disc08, caplog):
    A = 3.0 * np.broadcast_to(np.eye(2), (disc08.n_nodes, 2, 2)).copy()
    D = skew(np.zeros((disc08.n_nodes, 2, 2)))
    with caplog.at_level("WARNING"):
        wente.solve_awente(A, D, np.zeros((disc08.n_nodes, 2)), grid=disc08)
    assert "far from SO" in caplog.text
