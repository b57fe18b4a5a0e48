import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from pharmonic_lab import gauge
from pharmonic_lab.conservation import random_omega
from pharmonic_lab.elliptic import triangle_weight
from pharmonic_lab.grid import Field


@settings(max_examples=40, deadline=None)
@given(arrays(float, (4, 3, 3), elements=st.floats(-3, 3)))
def test_expm_so3_is_rotation(M):
    R = gauge.expm_so(gauge.skew(M))
    assert np.allclose(R @ np.swapaxes(R, -1, -2), np.eye(3), atol=1e-12)
    assert np.allclose(np.linalg.det(R), 1.0)


@pytest.mark.parametrize("m", [2, 3, 4])
def test_expm_matches_scipy(m):
    from scipy.linalg import expm
    U = gauge.skew(np.random.default_rng(m).normal(size=(3, m, m)))
    assert np.allclose(gauge.expm_so(U), np.stack([expm(u) for u in U]), atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(arrays(float, (3, 3, 3), elements=st.floats(-1, 1)))
def test_polar_is_orthogonal(E):
    Q = gauge.polar(np.eye(3) + 0.3 * E)
    assert np.allclose(Q @ np.swapaxes(Q, -1, -2), np.eye(3), atol=1e-12)


def test_gradient_matches_finite_differences(disc08):
    rng = np.random.default_rng(2)
    Om = random_omega(disc08, 3, 0.05, seed=3).values
    prob = gauge.GaugeProblem(disc08, Om, np.ones(disc08.n_cells))
    Q = gauge.expm_so(gauge.skew(0.2 * rng.normal(size=(disc08.n_nodes, 3, 3))))
    E, g = prob.gradient(Q)
    U = gauge.skew(rng.normal(size=Q.shape))
    t = 1e-6
    dE = (prob.energy(gauge.expm_so(t * U) @ Q) - prob.energy(gauge.expm_so(-t * U) @ Q)) / (2 * t)
    assert dE == pytest.approx(np.sum(g * U), rel=1e-6)


@pytest.mark.parametrize("grid_name", ["disc08", "disc04"])
def test_pure_gauge_is_removed(grid_name, request):
    g = request.getfixturevalue(grid_name)
    Om, Q_exact = gauge.pure_gauge_omega(g)
    res = gauge.extract_gauge(Om, 1.0, grid=g, sigma=np.inf)
    assert res.energy <= 1e-6 * res.initial_energy
    assert res.converged
    assert gauge.gauge_energy(Q_exact, Om, 1.0, g) <= 1e-20


def test_continuum_pure_gauge_leaves_small_floor(disc04):
    Om, Q_exact = gauge.pure_gauge_omega(disc04, discrete=False)
    rel = gauge.gauge_energy(Q_exact, Om, 1.0, disc04) / gauge.omega_energy(Om, 1.0, disc04)
    assert 0 < rel <= 1e-2


@pytest.mark.parametrize("seed", range(4))
def test_random_gauge_decreases_energy(disc08, seed):
    x, y = disc08.points.T
    f = 1 + x * x + y * y
    Om = random_omega(disc08, 3, 0.01, triangle_weight(disc08, f), seed=seed)
    res = gauge.extract_gauge(Om, Field(disc08, f), grid=disc08)
    assert res.initial_energy == pytest.approx(0.01)
    assert res.energy <= res.initial_energy
    assert res.orthogonality <= 1e-10
    assert np.allclose(res.Q.values[disc08.boundary], np.eye(3))
    assert all(b <= a + 1e-15 for a, b in zip(res.history, res.history[1:]))


def test_xi_checks_hold(disc08):
    Om = random_omega(disc08, 3, 0.01, seed=5)
    res = gauge.extract_gauge(Om, 1.0, grid=disc08)
    xi, chk = gauge.recover_xi(res, Om, 1.0, grid=disc08)
    assert chk.projection_slack >= -1e-12
    assert chk.divergence_defect <= chk.defect


def test_energy_at_identity_is_omega_energy(disc08):
    Om = random_omega(disc08, 2, 0.02, seed=1)
    Id = np.broadcast_to(np.eye(2), (disc08.n_nodes, 2, 2))
    assert gauge.gauge_energy(Id, Om, 1.0, disc08) == pytest.approx(gauge.omega_energy(Om, 1.0, disc08))


def test_weight_below_one_rejected(disc08):
    Om = random_omega(disc08, 2, 0.01, seed=0)
    with pytest.raises(ValueError):
        gauge.extract_gauge(Om, 0.5, grid=disc08)
