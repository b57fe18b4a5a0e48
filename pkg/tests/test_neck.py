import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pharmonic_lab import neck
from pharmonic_lab.grid import Field, GridError, cell_grad, perp


def polar(grid):
    x, y = grid.points.T
    return np.hypot(x, y), np.arctan2(y, x)


@pytest.mark.parametrize("beta", [0.5, 1.5, -2.0])
def test_c_star_log_mode(ann2, beta):
    r, _ = polar(ann2)
    u = np.stack([beta * np.log(r), 0 * r], 1)
    weak = neck.c_star_weak(u, 2.0, grid=ann2)
    assert weak["mean"] == pytest.approx([beta, 0.0], abs=0.01 * abs(beta))
    assert weak["spread"] <= 1e-10 * abs(beta)
    ring = neck.c_star(u, 2.0, grid=ann2)
    assert ring["mean"][0] == pytest.approx(beta, rel=0.01)


@pytest.mark.parametrize("route", ["ring", "weak"])
def test_c_star_of_equivariant_and_constant(ann2, route):
    r, th = polar(ann2)
    fn = neck.c_star if route == "ring" else neck.c_star_weak
    assert fn(np.stack([r * np.cos(th), r * np.sin(th)], 1), 2.2, grid=ann2)["norm"] <= 1e-10
    assert fn(np.ones((ann2.n_nodes, 2)), 2.2, grid=ann2)["norm"] <= 1e-14


def test_c_star_radius_checked(ann2):
    with pytest.raises(GridError):
        neck.c_star(np.ones((ann2.n_nodes, 2)), 2.0, radii=[0.001], grid=ann2)


def test_c_star_blind_to_perp_gradient(ann2):
    r, th = polar(ann2)
    u = np.stack([np.log(r) + 0.2 * r * np.cos(th), np.sin(th) * r], 1)
    base = neck.c_star_weak(u, 2.0, grid=ann2)["mean"]
    # adding grad_perp of a bump supported inside the annulus leaves every level flux unchanged
    bump = np.exp(-((ann2.points[:, 0] - 0.3) ** 2 + ann2.points[:, 1] ** 2) / 0.005)
    phi = np.stack([bump, 0 * bump], 1)
    F = neck.flux_field(u, 2.0, grid=ann2).values + perp(cell_grad(ann2, phi))
    lev = np.arange(ann2.n_nodes) // ann2.n_theta
    for i in (5, 20, 40):
        gchi = cell_grad(ann2, (lev <= i).astype(float))
        val = -np.einsum("t,ta,tak->k", ann2.tri_area, gchi, F) / (2 * math.pi)
        assert val == pytest.approx(base, abs=1e-10)


def test_zero_mode_log_fit(ann2):
    r, _ = polar(ann2)
    z = neck.zero_mode(Field(ann2, 3 + 2 * np.log(r)))
    assert z["C0"] == pytest.approx(3.0, abs=1e-6)
    assert z["C1"] == pytest.approx(2.0, abs=1e-6)


@pytest.mark.parametrize("k", [1, 2, 5])
def test_zero_mode_kills_pure_modes(ann2, k):
    _, th = polar(ann2)
    for fn in (np.sin, np.cos):
        prof = neck.zero_mode(Field(ann2, fn(k * th)), fit=False)["profile"]
        assert np.abs(prof).max() <= 1e-12


@pytest.mark.parametrize("name", ["linear", "quadratic"])
def test_pohozaev_equality_pairs(disc04, name):
    x, y = disc04.points.T
    u = {"linear": np.stack([x, y], 1), "quadratic": np.stack([x * x - y * y, 2 * x * y], 1)}[name]
    m = neck.pohozaev_margin(Field(disc04, u), 2.0, C=1.0)
    assert m["max_abs"] <= 5 * disc04.h


def test_pohozaev_radial_map_is_negative(disc04):
    x, y = disc04.points.T
    # purely radial energy: the angular term vanishes
    u = Field(disc04, np.stack([x * x + y * y, 0 * x], 1))
    assert neck.pohozaev_margin(u, 2.0)["min"] < 0


def test_morrey_linear(disc02):
    x, y = disc02.points.T
    md = neck.morrey_decay(Field(disc02, np.stack([x, y], 1)), 2.0)
    assert md["alpha"] == pytest.approx(2.0, abs=0.1)
    assert md["energy"][0] == pytest.approx(2 * math.pi * 0.8 ** 2, rel=0.01)
    assert all(c == pytest.approx(1 / 3, abs=0.01) for c in md["hole_filling"])


def test_morrey_constant_is_sentinel(disc08):
    md = neck.morrey_decay(Field(disc08, np.ones((disc08.n_nodes, 2))), 2.0)
    assert md["alpha"] == math.inf


def test_morrey_needs_three_radii(disc08):
    with pytest.raises(ValueError):
        neck.morrey_decay(Field(disc08, np.ones((disc08.n_nodes, 2))), 2.0, radii=[0.5, 0.25])


def test_decay_probe_needs_two_deltas():
    with pytest.raises(ValueError):
        neck.c_star_decay_probe([1e-2])


@pytest.fixture(scope="module")
def decay_pair():
    return neck.c_star_decay_probe(kind="bounded"), neck.c_star_decay_probe(kind="violating")


def test_decay_bounded_and_control(decay_pair):
    b, v = decay_pair
    assert b.ratio <= 10 and not b.flagged
    assert v.flagged
    assert all(k == pytest.approx(b.K) for k in [(p - 2) * math.log(1 / d) for p, d in zip(b.ps, b.deltas)])


def test_log_mode_norm_formula(decay_pair):
    b, _ = decay_pair
    for c, d, lm in zip(b.c_star, b.deltas, b.log_mode_norm):
        assert lm == pytest.approx(c * math.sqrt(2 * math.pi * math.log(1 / d)))


@settings(max_examples=20, deadline=None)
@given(c=st.floats(-10, 10))
def test_oscillation_shift_invariant(ann2, c):
    r, th = polar(ann2)
    u = np.stack([np.cos(th) * r, np.log(r)], 1)
    assert neck.oscillation(u + c, grid=ann2) == pytest.approx(neck.oscillation(u, grid=ann2), rel=1e-12)


def test_oscillation_sampled_branch(disc02):
    # more than 10^6 pairs: sampled, still exact for the affine map (extremes lie on directions)
    x, y = disc02.points.T
    osc = neck.oscillation(np.stack([x, y], 1), grid=disc02)
    assert osc == pytest.approx(2.0, rel=1e-3)


def test_neck_report_constant(ann2):
    rep = neck.neck_report(np.ones((ann2.n_nodes, 2)), 2.1, grid=ann2)
    assert rep.oscillation == 0.0
    assert rep.angular_l21 <= 1e-10 and rep.angular_l21_alt <= 1e-12
    assert np.allclose(rep.c_star_mean, 0.0, atol=1e-14)
    assert rep.K == pytest.approx(0.1 * math.log(100))


def test_neck_report_splits_annuli(ann2):
    r, th = polar(ann2)
    state = neck.solve_annulus(ann2, 2.0, lambda t: np.stack([np.cos(t), np.sin(t)]),
                               lambda t: np.stack([0.01 * np.cos(t), 0.01 * np.sin(t)]))
    rng = np.random.default_rng(0)
    Om = rng.normal(size=(ann2.n_cells, 2, 2, 2))
    Om = Om - np.swapaxes(Om, -1, -2)
    small = neck.neck_report(state.u, 2.0, grid=ann2, Omega=Field(ann2, 1e-3 * Om, "cell"), sigma=10.0)
    big = neck.neck_report(state.u, 2.0, grid=ann2, Omega=Field(ann2, Om, "cell"), sigma=0.5)
    assert len(small.annuli) == 1
    assert len(big.annuli) >= 2
    assert big.annuli[0][0] == pytest.approx(0.01) and big.annuli[-1][1] == 1.0


def test_neck_report_rows(ann2):
    r, _ = polar(ann2)
    rep = neck.neck_report(np.stack([np.log(r), r], 1), 2.0, grid=ann2)
    rows = rep.rows()
    assert set(rows[0]) == {"r", "c_star_norm", "pohozaev_margin", "lambda0"}
    assert rep.as_dict()["M_param"] == 0.0


def test_neck_report_with_conservation_pair(ann2):
    from pharmonic_lab import conservation as cons
    from pharmonic_lab.pharmonic import solve_omega_system
    Om = cons.random_omega(ann2, 2, 0.01, seed=0)
    free = neck.solve_annulus(ann2, 2.0, lambda t: np.stack([np.cos(t), np.sin(t)]),
                              lambda t: np.stack([0.01 * np.cos(t), 0.01 * np.sin(t)]))
    st = solve_omega_system(ann2, Om, 2.0, free.u.values)
    pair = cons.build_conservation_law(st.u, 2.0, Om, grid=ann2)
    rep = neck.neck_report(st.u, 2.0, grid=ann2, pair=pair, Omega=Om)
    assert np.isfinite(rep.c_star_values).all()
    assert rep.omega_energy == pytest.approx(0.01)
    # the ring and weak routes agree on the corrected flux
    assert np.allclose(rep.c_star_mean, rep.c_star_weak, atol=1e-5)
