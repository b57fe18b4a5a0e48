import numpy as np
import pytest

from pharmonic_lab import conservation as cons
from pharmonic_lab.grid import Field


@pytest.fixture(scope="module")
def case04(disc04):
    return cons.synthetic_case(disc04, 3, 0.01, 2.0, seed=0)


@pytest.fixture(scope="module")
def pair04(disc04, case04):
    return cons.build_conservation_law(case04.u, 2.0, case04.Omega, grid=disc04)


def test_pair_contraction_and_convergence(pair04):
    assert pair04.converged and not pair04.diverged
    assert max(pair04.contraction_ratios) <= 0.9


def test_conservation_residual_matches_el(pair04):
    # the pair turns the system into a divergence law: same residual size as the EL equation
    assert pair04.residual <= 10 * pair04.el_residual + 1e-6


def test_estimates_are_finite_and_consistent(pair04):
    est = pair04.estimates
    assert est["C_measured"] == max(est["I3_constant"], est["I4_constant"])
    assert est["det_min"] >= est["det_floor"]
    assert np.isfinite(list(v for v in est.values())).all()


def test_antisymmetric_increment_near_so(pair04):
    assert pair04.estimates["dist_so_sup"] <= 0.5


def test_zero_potential_gives_identity(disc08):
    x, y = disc08.points.T
    u = Field(disc08, np.stack([x, y], 1))
    Om = Field(disc08, np.zeros((disc08.n_cells, 2, 2, 2)), "cell")
    pair = cons.build_conservation_law(u, 2.0, Om, grid=disc08)
    assert np.allclose(pair.A.values, np.eye(2), atol=1e-12)
    assert np.abs(pair.B.values).max() <= 1e-12


def test_energy_scaling_of_random_omega(disc08):
    a = cons.random_omega(disc08, 3, 0.01, seed=4).values
    b = cons.random_omega(disc08, 3, 0.04, seed=4).values
    assert np.allclose(b, 2 * a)


@pytest.mark.parametrize("M", [0.0, 0.5])
def test_truncation_level_checked(M):
    with pytest.raises(ValueError):
        cons.truncate_weight(np.ones(3), M)


def test_truncation_keeps_container(disc08):
    f = Field(disc08, np.linspace(1, 3, disc08.n_cells), "cell")
    out = cons.truncate_weight(f, 2.0)
    assert isinstance(out, Field) and out.values.max() == 2.0


def test_el_gate(disc08):
    x, y = disc08.points.T
    u = Field(disc08, np.stack([np.sin(3 * x), y * y], 1))
    Om = cons.random_omega(disc08, 2, 0.01, seed=0)
    with pytest.raises(cons.ConservationError) as err:
        cons.build_conservation_law(u, 2.0, Om, grid=disc08)
    assert err.value.stage == "el_residual"


def test_diagnostic_refines(disc04, disc02, pair04):
    case = cons.synthetic_case(disc02, 3, 0.01, 2.0, seed=0)
    pair = cons.build_conservation_law(case.u, 2.0, case.Omega, grid=disc02)
    assert pair04.diagnostic_D / pair.diagnostic_D >= 1.5


def test_sphere_law(disc04):
    from pharmonic_lab import pharmonic as ph
    x, y = disc04.points.T
    u = Field(disc04, ph.stereographic_map(x, y))
    B = cons.sphere_law_B(u, 2.0)
    assert B.values.shape == (disc04.n_nodes, 3, 3)
    assert np.allclose(B.values, -np.swapaxes(B.values, -1, -2))
