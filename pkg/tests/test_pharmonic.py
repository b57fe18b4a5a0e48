import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pharmonic_lab import pharmonic as ph
from pharmonic_lab.grid import Field


def xy(grid):
    return grid.points[:, 0], grid.points[:, 1]


@pytest.fixture(scope="module")
def equator04(disc04):
    return ph.solve_sphere_pharmonic(ph.equator_data(), 2.0, grid=disc04)


def test_energy_of_constant_map(disc08):
    assert ph.energy_p(Field(disc08, np.ones((disc08.n_nodes, 3))), 2.4) == pytest.approx(disc08.tri_area.sum())


@pytest.mark.parametrize("p", [2.0, 2.5, 3.0])
def test_energy_of_linear_map(disc08, p):
    x, y = xy(disc08)
    # |grad u|^2 = 2 for the identity map
    e = ph.energy_p(Field(disc08, np.stack([x, y], 1)), p)
    assert e == pytest.approx(3 ** (p / 2) * disc08.tri_area.sum())


def test_equator_energy_oracle(equator04):
    assert equator04.converged
    assert equator04.energy - math.pi == pytest.approx(4 * math.pi, rel=0.05)


def test_equator_matches_stereographic(disc04, equator04):
    x, y = xy(disc04)
    assert np.abs(equator04.u.values - ph.stereographic_map(x, y)).max() <= 0.02


@pytest.mark.parametrize("grid_name", ["disc08", "disc04", "disc02"])
def test_stereographic_map_is_harmonic(grid_name, request):
    g = request.getfixturevalue(grid_name)
    x, y = xy(g)
    u = Field(g, ph.stereographic_map(x, y))
    assert ph.sphere_el_residual(u, 2.0) <= 2 * g.h ** 2
    assert ph.sphere_conservation_residual(u, 2.0) <= g.h ** 2


def test_conservation_residual_refines(disc04, disc02, equator04):
    r04 = ph.sphere_conservation_residual(equator04.u, 2.0)
    u02 = ph.solve_sphere_pharmonic(ph.equator_data(), 2.0, grid=disc02).u
    assert ph.sphere_conservation_residual(u02, 2.0) <= 0.65 * r04


@pytest.mark.parametrize("grid_name", ["disc04", "disc02"])
def test_linear_map_solves_free_system(grid_name, request):
    g = request.getfixturevalue(grid_name)
    x, y = xy(g)
    assert ph.el_residual(Field(g, np.stack([x, y], 1)), 2.3).weak <= g.h ** 2


@pytest.mark.parametrize("p", [2.0, 2.3])
def test_omega_zero_system_reproduces_affine_data(disc08, p):
    x, y = xy(disc08)
    g = np.stack([0.3 * x - y, x + 0.2 * y], 1)
    state = ph.solve_omega_system(disc08, np.zeros((disc08.n_cells, 2, 2, 2)), p, g)
    assert np.abs(state.u.values - g).max() <= 1e-8


def test_antisymmetry_enforced(disc08):
    Om = np.ones((disc08.n_cells, 2, 2, 2))
    with pytest.raises(ValueError):
        ph.el_residual(Field(disc08, np.zeros((disc08.n_nodes, 2))), 2.0, Field(disc08, Om, "cell"))


def test_omega_from_map_needs_sphere(disc08):
    with pytest.raises(ValueError):
        ph.omega_from_map(Field(disc08, np.full((disc08.n_nodes, 3), 2.0)))


@settings(max_examples=20, deadline=None)
@given(p=st.floats(2.0, 3.0), c=st.floats(-2, 2))
def test_weight_is_at_least_one_and_shift_invariant(disc08, p, c):
    x, y = xy(disc08)
    u = np.stack([np.sin(x), x * y], 1)
    f = ph.cell_weight(u, p, disc08)
    assert f.min() >= 1.0 - 1e-14
    assert np.allclose(ph.cell_weight(u + c, p, disc08), f)


@settings(max_examples=15, deadline=None)
@given(t=st.floats(0, 2 * math.pi))
def test_energy_rotation_invariant(disc08, t):
    x, y = xy(disc08)
    u = np.stack([np.sin(x), x * y, y], 1)
    R = np.array([[math.cos(t), -math.sin(t), 0], [math.sin(t), math.cos(t), 0], [0, 0, 1]])
    assert ph.energy_p(u @ R.T, 2.5, disc08) == pytest.approx(ph.energy_p(u, 2.5, disc08), rel=1e-12)


def test_tabulated_data_is_unit(disc08):
    th = np.linspace(0, 2 * math.pi, 9)[:-1]
    g = ph.tabulated_data(th, np.stack([np.cos(th), np.sin(th), 0.1 + 0 * th], 1))
    v = g(np.linspace(0, 6, 50))
    assert np.allclose(np.linalg.norm(v, axis=1), 1.0)
