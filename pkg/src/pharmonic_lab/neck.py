"""Neck diagnostics on annuli and discs: the flux constant C_*, the Pohozaev
margin, zero modes, oscillation, angular Lorentz norms and Morrey decay.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field as dc_field

import numpy as np

from .grid import (ANNULUS, Field, Grid, annulus_for, cell_grad, integrate, node_grad, node_to_cell, perp, ring_flux,
                   ring_integral, values_of)
from .lorentz import lorentz_norm
from .pharmonic import MapState, energy_p, solve_omega_system

log = logging.getLogger(__name__)

RADII_PER_DECADE = 16
PAIR_LIMIT = 1_000_000


def log_radii(r_min: float, r_max: float, per_decade: int = RADII_PER_DECADE) -> np.ndarray:
    """Log-uniform radii in [r_min, r_max], ``per_decade`` per factor of ten."""
    if not 0 < r_min < r_max:
        raise ValueError("need 0 < r_min < r_max")
    n = max(2, int(math.ceil(per_decade * math.log10(r_max / r_min))) + 1)
    return np.geomspace(r_min, r_max, n)


def _vector(u, grid):
    v = np.asarray(values_of(u, grid), dtype=float)
    return v[:, None] if v.ndim == 1 else v


def polar_derivatives(grid: Grid, u: np.ndarray, location: str = "node"):
    """(d_r u, r^-1 d_theta u, 1 + |grad u|^2) from the recovered (node) or P1 (cell) gradient."""
    if location == "node":
        g = node_grad(grid, u)
        xy = grid.points
    else:
        g = cell_grad(grid, u)
        xy = grid.centroids
    r = np.linalg.norm(xy, axis=1)
    r = np.where(r > 0, r, 1.0)
    er = xy / r[:, None]
    et = perp(er)
    dr = np.einsum("nd,nd...->n...", er, g)
    dt = np.einsum("nd,nd...->n...", et, g)
    big = 1.0 + (g ** 2).reshape(len(r), -1).sum(axis=1)
    return dr, dt, big


# ---------------------------------------------------------------------------
# flux constant


def flux_field(u, p: float, A=None, phi=None, *, grid: Grid) -> Field:
    """Cell field f A grad u - A grad phi whose ring flux is 2 pi C_*."""
    uv = _vector(u, grid)
    gu = cell_grad(grid, uv)
    big = 1.0 + (gu ** 2).reshape(grid.n_cells, -1).sum(axis=1)
    f = big ** (0.5 * p - 1.0)
    if A is None:
        out = f[:, None, None] * gu
        if phi is not None:
            out = out - cell_grad(grid, _vector(phi, grid))
        return Field(grid, out, "cell")
    Ac = np.asarray(values_of(A, grid), dtype=float)
    if Ac.shape[0] == grid.n_nodes:
        Ac = node_to_cell(grid, Ac)
    out = f[:, None, None] * np.einsum("tij,taj->tai", Ac, gu)
    if phi is not None:
        out = out - np.einsum("tij,taj->tai", Ac, cell_grad(grid, _vector(phi, grid)))
    return Field(grid, out, "cell")


def c_star(u, p: float, A=None, phi=None, radii=None, *, grid: Grid | None = None) -> dict:
    """C_*(r) = (2 pi)^-1 ring flux of f A grad u - A grad phi, per component and radius."""
    grid = grid or u.grid
    F = flux_field(u, p, A, phi, grid=grid)
    if radii is None:
        radii = default_radii(grid)
    vals = np.array([np.atleast_1d(ring_flux(F, float(r))) / (2 * math.pi) for r in radii])
    return {"radii": np.asarray(radii, dtype=float), "values": vals, "mean": vals.mean(axis=0),
            "spread": float(np.abs(vals - vals.mean(axis=0)).max()),
            "norm": float(np.linalg.norm(vals.mean(axis=0)))}


def _levels(grid: Grid) -> np.ndarray:
    if grid.kind != ANNULUS:
        raise ValueError("level-wise routes need a log-polar annulus grid")
    return np.exp(np.linspace(math.log(grid.delta), 0.0, grid.n_s + 1))


def c_star_weak(u, p: float, A=None, phi=None, *, grid: Grid | None = None) -> dict:
    """C_* from the discrete flux -int F . grad chi_i / (2 pi), chi_i = 1 on node levels <= i.

    For a Galerkin solution the value is the same on every interior level up
    to the solver tolerance; the ring-sampled route carries an O(h) error.
    Radii are the geometric midpoints of consecutive levels.
    """
    grid = grid or u.grid
    F = flux_field(u, p, A, phi, grid=grid).values
    lev = _levels(grid)
    row = np.arange(grid.n_nodes) // grid.n_theta
    vals = []
    for i in range(grid.n_s):
        chi = (row <= i).astype(float)
        gchi = cell_grad(grid, chi)
        vals.append(-np.einsum("t,ta,ta...->...", grid.tri_area, gchi, F) / (2 * math.pi))
    vals = np.array(vals).reshape(grid.n_s, -1)
    radii = np.sqrt(lev[:-1] * lev[1:])
    return {"radii": radii, "values": vals, "mean": vals.mean(axis=0),
            "spread": float(np.abs(vals - vals.mean(axis=0)).max()),
            "norm": float(np.linalg.norm(vals.mean(axis=0)))}


def default_radii(grid: Grid) -> np.ndarray:
    if grid.kind == ANNULUS:
        lo = grid.delta * math.exp(2 * math.log(1 / grid.delta) / max(grid.n_s, 8))
        hi = math.exp(-2 * math.log(1 / grid.delta) / max(grid.n_s, 8))
        return log_radii(max(lo, 1.5 * grid.delta), min(hi, 0.95))
    return log_radii(0.1, 0.9)


# ---------------------------------------------------------------------------
# annulus problems


def solve_annulus(grid: Grid, p: float, outer, inner, *, tol: float = 1e-10) -> MapState:
    """Omega = 0 system -div(f grad u) = 0 with data ``outer(theta)``, ``inner(theta)``."""
    theta = np.arctan2(grid.points[:, 1], grid.points[:, 0])
    go = np.atleast_2d(np.asarray(outer(theta), dtype=float).T).T
    gi = np.atleast_2d(np.asarray(inner(theta), dtype=float).T).T
    if go.shape[0] != grid.n_nodes:
        go, gi = go.T, gi.T
    g = np.where((grid.boundary_label == 2)[:, None], gi, go)
    m = g.shape[1]
    Om = np.zeros((grid.n_cells, 2, m, m))
    return solve_omega_system(grid, Field(grid, Om, "cell"), p, g, tol=tol)


@dataclass
class DecayProbe:
    deltas: list
    ps: list
    K: float
    c_star: list
    product: list
    growth_exponent: float
    ratio: float
    bounded: bool
    flagged: bool
    energy: list
    log_mode_norm: list
    kind: str

    def as_dict(self) -> dict:
        return asdict(self)


def log_mode_family(kind: str, jump: float = 1.0, beta: float = 1.0, amplitude: float = 0.3):
    """Boundary data for the C_* decay families on B_1 \\ B_delta.

    ``"bounded"``: outer = e_1 jump plus an angular mode, inner = 0 plus an
    angular mode, so C_* ~ jump / log(1/delta) at p = 2 and the energy stays
    bounded.  ``"violating"``: u = beta log r e_1 on both circles, C_* = beta
    fixed while delta -> 0 (energy unbounded).  Returns ``(delta) -> (outer, inner)``.
    """
    def make(delta):
        if kind == "bounded":
            def outer(t):
                return np.stack([jump + amplitude * np.cos(t), amplitude * np.sin(t)], axis=0)

            def inner(t):
                return np.stack([amplitude * delta * np.cos(t), amplitude * delta * np.sin(t)], axis=0)
        elif kind == "violating":
            def outer(t):
                return np.stack([np.zeros_like(t), np.zeros_like(t)], axis=0)

            def inner(t):
                return np.stack([beta * math.log(delta) * np.ones_like(t), np.zeros_like(t)], axis=0)
        else:
            raise ValueError(f"unknown family {kind!r}")
        return outer, inner
    return make


def c_star_decay_probe(deltas=(1e-2, 1e-3, 1e-4), K: float = 0.5, kind: str = "bounded", *,
                       n_theta: int = 64, bound: float = 10.0) -> DecayProbe:
    """|C_*| log^((p-1)/p)(1/delta) over a family with (p - 2) log(1/delta) = K.

    ``bounded`` holds when max/min of the product is at most ``bound``;
    ``flagged`` marks growth, i.e. a positive fitted exponent of the product
    against log log(1/delta) beyond the slack of the bounded family.
    """
    deltas = [float(d) for d in deltas]
    if len(deltas) < 2:
        raise ValueError("the decay probe needs at least two deltas")
    family = log_mode_family(kind)
    ps, cs, prods, energies, lm = [], [], [], [], []
    for d in deltas:
        L = math.log(1.0 / d)
        p = 2.0 + K / L
        grid = annulus_for(d, n_theta)
        outer, inner = family(d)
        state = solve_annulus(grid, p, outer, inner)
        c = c_star_weak(state.u, p, grid=grid)["norm"]
        ps.append(p)
        cs.append(c)
        prods.append(c * L ** ((p - 1.0) / p))
        energies.append(energy_p(state.u.values, p, grid) - grid.domain_area)
        lm.append(c * math.sqrt(2 * math.pi * L))
    logs = np.log(np.log(1.0 / np.array(deltas)))
    expo = float(np.polyfit(logs, np.log(np.maximum(prods, 1e-300)), 1)[0])
    ratio = float(max(prods) / min(prods)) if min(prods) > 0 else math.inf
    return DecayProbe(deltas, ps, K, cs, prods, expo, ratio, ratio <= bound, expo > 0.25,
                      energies, lm, kind)


# ---------------------------------------------------------------------------
# Pohozaev


def pohozaev_margin(u, p: float, radii=None, C: float = 1.0, *, grid: Grid | None = None) -> dict:
    """C [int_{dB_r} f |r^-1 d_theta u|^2 + (p - 2)/r int_{B_r} (1+|grad u|^2)^{p/2}] - int_{dB_r} f |d_r u|^2."""
    grid = grid or u.grid
    uv = _vector(u, grid)
    dr, dt, big = polar_derivatives(grid, uv)
    f = big ** (0.5 * p - 1.0)
    ang = Field(grid, f * (dt ** 2).sum(axis=1))
    rad = Field(grid, f * (dr ** 2).sum(axis=1))
    dens = Field(grid, big ** (0.5 * p))
    if radii is None:
        radii = log_radii(0.1, 0.9)
    out = []
    for r in radii:
        r = float(r)
        a = ring_integral(ang, r)
        b = ring_integral(rad, r)
        vol = integrate(dens, ("ball", r)) if p != 2.0 else 0.0
        out.append(C * (a + (p - 2.0) / r * vol) - b)
    margins = np.array(out)
    return {"radii": np.asarray(radii, dtype=float), "margins": margins, "min": float(margins.min()),
            "max_abs": float(np.abs(margins).max()), "C": C}


# ---------------------------------------------------------------------------
# zero modes and Morrey decay


def zero_mode(field, radii=None, *, grid: Grid | None = None, fit: bool = True) -> dict:
    """theta-average per radius and the fit lambda_0 = C0 + C1 log r.

    On a log-polar annulus a node field is averaged over each node level
    (trapezoid in theta, exact for trigonometric modes below n_theta) and
    interpolated linearly in log r; elsewhere ring samples are used.
    """
    if not isinstance(field, Field):
        field = Field(grid, field)
    grid = field.grid
    if radii is None:
        radii = default_radii(grid)
    radii = np.asarray(radii, dtype=float)
    if grid.kind == ANNULUS and field.location == "node":
        for r in radii:
            grid.check_radius(float(r))
        v = field.values.reshape(grid.n_s + 1, grid.n_theta, *field.values.shape[1:])
        means = v.mean(axis=1).reshape(grid.n_s + 1, -1)
        s_lev = np.log(_levels(grid))
        prof = np.stack([np.interp(np.log(radii), s_lev, means[:, k]) for k in range(means.shape[1])], axis=1)
        prof = prof.reshape(len(radii), *field.values.shape[1:])
    else:
        prof = np.array([ring_integral(field, float(r)) / (2 * math.pi * float(r)) for r in radii])
    out = {"radii": radii, "profile": prof}
    if fit:
        X = np.stack([np.ones(len(radii)), np.log(radii)], axis=1)
        coef, *_ = np.linalg.lstsq(X, prof.reshape(len(radii), -1), rcond=None)
        resid = prof.reshape(len(radii), -1) - X @ coef
        out["C0"] = coef[0].squeeze()
        out["C1"] = coef[1].squeeze()
        out["fit_residual"] = float(np.abs(resid).max())
    return out


def morrey_decay(u, p: float, x0=(0.0, 0.0), radii=None, *, grid: Grid | None = None) -> dict:
    """E(r) = int_{B_r(x0)} f |grad u|^2, hole-filling constants and the fitted exponent alpha."""
    grid = grid or u.grid
    if radii is None:
        radii = 0.8 * 0.5 ** np.arange(5)
    radii = np.sort(np.asarray(radii, dtype=float))[::-1]
    if len(radii) < 3:
        raise ValueError("morrey_decay needs at least 3 radii")
    uv = _vector(u, grid)
    g = cell_grad(grid, uv)
    g2 = (g ** 2).reshape(grid.n_cells, -1).sum(axis=1)
    dens = Field(grid, (1.0 + g2) ** (0.5 * p - 1.0) * g2, "cell")
    c = np.asarray(x0, dtype=float)
    E = np.array([integrate(dens, ("ball", float(r), c)) for r in radii])
    out = {"radii": radii, "energy": E}
    if np.all(E <= 1e-300):
        out.update(alpha=math.inf, hole_filling=[], hole_filling_max=0.0)
        return out
    hf = []
    for r_big, r_small, e_big, e_small in zip(radii[:-1], radii[1:], E[:-1], E[1:]):
        if abs(r_small - 0.5 * r_big) < 1e-9 * r_big:
            gap = e_big - e_small
            hf.append(e_small / gap if gap > 0 else math.inf)
    alpha = float(np.polyfit(np.log(radii), np.log(np.maximum(E, 1e-300)), 1)[0])
    out.update(alpha=alpha, hole_filling=hf, hole_filling_max=float(max(hf)) if hf else math.nan)
    return out


# ---------------------------------------------------------------------------
# oscillation and the neck report


def oscillation(u, mask=None, *, grid: Grid | None = None, seed: int = 0) -> float:
    """max |u(x) - u(y)| over node pairs in ``mask``; all pairs up to 10^6, sampled beyond."""
    from scipy.spatial.distance import pdist
    grid = grid or u.grid
    uv = _vector(u, grid)
    pts = uv if mask is None else uv[np.asarray(mask, dtype=bool)]
    n = len(pts)
    if n < 2:
        return 0.0
    if n * (n - 1) // 2 <= PAIR_LIMIT:
        return float(pdist(pts).max())
    rng = np.random.default_rng(seed)
    # extreme points along random directions plus a random subset keep the pair count bounded
    dirs = rng.normal(size=(64, pts.shape[1]))
    proj = pts @ dirs.T
    cand = np.unique(np.concatenate([proj.argmax(axis=0), proj.argmin(axis=0),
                                     rng.choice(n, size=min(n, 1200), replace=False)]))
    return float(pdist(pts[cand]).max())


def angular_fields(u, p: float, *, grid: Grid) -> tuple[np.ndarray, np.ndarray]:
    """Cell fields (1+|grad u|^2)^((p-2)/(2p-2)) |r^-1 d_theta u|^(1/(p-1)) and (1+|grad u|^2)^(p/4-1/2) |r^-1 d_theta u|."""
    uv = _vector(u, grid)
    _, dt, big = polar_derivatives(grid, uv, location="cell")
    mag = np.sqrt((dt ** 2).sum(axis=1))
    f1 = big ** ((p - 2.0) / (2.0 * p - 2.0)) * mag ** (1.0 / (p - 1.0))
    f2 = big ** (0.25 * p - 0.5) * mag
    return f1, f2


@dataclass
class NeckReport:
    delta: float
    p: float
    t: float
    L: float
    c_star_radii: list
    c_star_values: list
    c_star_mean: list
    c_star_weak: list = dc_field(default_factory=list)
    pohozaev_radii: list = dc_field(default_factory=list)
    pohozaev_margins: list = dc_field(default_factory=list)
    oscillation: float = 0.0
    angular_l21: float = 0.0
    angular_l21_alt: float = 0.0
    omega_energy: float = 0.0
    lambda0: list = dc_field(default_factory=list)
    annuli: list = dc_field(default_factory=list)

    @property
    def K(self) -> float:
        return (self.p - 2.0) * math.log(1.0 / self.delta)

    @property
    def M_param(self) -> float:
        return math.sqrt(max(self.p - 2.0, 0.0)) * math.log(1.0 / self.delta)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["K"] = self.K
        d["M_param"] = self.M_param
        return d

    def rows(self):
        n = len(self.c_star_radii)
        pm = self.pohozaev_margins if len(self.pohozaev_margins) == n else [math.nan] * n
        lz = self.lambda0 if len(self.lambda0) == n else [math.nan] * n
        return [{"r": r, "c_star_norm": float(np.linalg.norm(c)), "pohozaev_margin": m, "lambda0": z}
                for r, c, m, z in zip(self.c_star_radii, self.c_star_values, pm, lz)]


def split_annuli(grid: Grid, density: np.ndarray, sigma: float) -> list[tuple[float, float]]:
    """Greedy radial split of the annulus into pieces each carrying less than ``sigma``.

    ``density`` is a cell field (the integrand of int f |Omega|^2).
    """
    r = np.linalg.norm(grid.centroids, axis=1)
    order = np.argsort(r)
    mass = grid.tri_area[order] * density[order]
    pieces, start, acc = [], float(grid.delta or 0.0), 0.0
    for rr, mm in zip(r[order], mass):
        if acc + mm >= sigma and acc > 0:
            pieces.append((start, float(rr)))
            start, acc = float(rr), 0.0
        acc += mm
    pieces.append((start, 1.0))
    return pieces


def neck_report(u, p: float, delta: float | None = None, t: float = 0.5, *, grid: Grid | None = None,
                pair=None, Omega=None, sigma: float = 0.05, radii=None) -> NeckReport:
    """All neck quantities for a solved annulus map.

    ``pair`` (a ConservationPair on the same grid) supplies A and B; then phi
    solves -div(A grad phi) = grad_perp B . grad u with zero data and enters
    the C_* flux.  Without it A = Id and phi = 0.
    """
    grid = grid or u.grid
    delta = float(delta if delta is not None else grid.delta)
    uv = _vector(u, grid)
    A = phi = None
    if pair is not None:
        from .wente import solve_awente
        A = pair.A.values
        gu = cell_grad(grid, uv)
        pB = perp(cell_grad(grid, pair.B.values))
        src = np.einsum("taij,taj->ti", pB, gu)
        phi_f, _ = solve_awente(A, None, None, grid=grid, source=src)
        phi = phi_f.values
    if radii is None:
        radii = default_radii(grid)
    cs = c_star(uv, p, A, phi, radii, grid=grid)
    cw = c_star_weak(uv, p, A, phi, grid=grid)["mean"] if grid.kind == ANNULUS else []
    g = node_grad(grid, uv)
    rr = np.maximum(grid.radius, delta)
    L = float((rr * np.sqrt((g ** 2).reshape(grid.n_nodes, -1).sum(axis=1))).max())
    lo, hi = delta / t, t
    node_mask = (grid.radius >= lo) & (grid.radius <= hi)
    cell_r = np.linalg.norm(grid.centroids, axis=1)
    cell_mask = (cell_r >= lo) & (cell_r <= hi)
    osc = oscillation(uv, node_mask, grid=grid)
    f1, f2 = angular_fields(uv, p, grid=grid)
    a1 = lorentz_norm(Field(grid, f1, "cell"), "L21", mask=cell_mask)
    a2 = lorentz_norm(Field(grid, f2, "cell"), "L21", mask=cell_mask)
    om_E = 0.0
    annuli = [(delta, 1.0)]
    if Omega is not None:
        from .gauge import _omega_cells
        Oc = _omega_cells(grid, Omega)
        gu = cell_grad(grid, uv)
        fc = (1.0 + (gu ** 2).reshape(grid.n_cells, -1).sum(axis=1)) ** (0.5 * p - 1.0)
        dens = fc * (Oc ** 2).reshape(grid.n_cells, -1).sum(axis=1)
        om_E = float(grid.tri_area @ dens)
        annuli = split_annuli(grid, dens, sigma) if om_E >= sigma else annuli
    z = zero_mode(Field(grid, uv), radii, fit=False)["profile"]
    lam0 = [float(np.linalg.norm(v)) for v in z]
    return NeckReport(delta, p, t, L, list(map(float, cs["radii"])), cs["values"].tolist(),
                      list(np.atleast_1d(cs["mean"]).astype(float)),
                      c_star_weak=[float(c) for c in np.atleast_1d(cw)], oscillation=osc,
                      angular_l21=a1, angular_l21_alt=a2, omega_energy=om_E, lambda0=lam0,
                      annuli=annuli)
