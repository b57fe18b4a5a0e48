"""p-energy, Euler-Lagrange residuals and the sphere-valued p-harmonic solver."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field as dc_field
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .elliptic import DirichletSolver, LinearSystem, solve_dirichlet, stiffness
from .grid import DISC, Field, Grid, cell_grad, node_grad, node_to_cell, values_of

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# energy and weight


def _cell_grad_sq(grid, u):
    g = cell_grad(grid, u)
    return (g ** 2).reshape(grid.n_cells, -1).sum(axis=1)


def energy_p(u, p: float, grid: Grid | None = None) -> float:
    """E_p(u) = int (1 + |grad u|^2)^(p/2), exact for P1 maps."""
    grid = u.grid if isinstance(u, Field) else grid
    g2 = _cell_grad_sq(grid, values_of(u))
    return float(grid.tri_area @ (1.0 + g2) ** (0.5 * p))


def cell_weight(u, p: float, grid: Grid | None = None) -> np.ndarray:
    """f = (1 + |grad u|^2)^(p/2 - 1) on each triangle."""
    grid = u.grid if isinstance(u, Field) else grid
    return (1.0 + _cell_grad_sq(grid, values_of(u))) ** (0.5 * p - 1.0)


def weight_f(u, p: float, grid: Grid | None = None) -> Field:
    """Nodal f = (1 + |grad u|^2)^(p/2 - 1) from the recovered gradient."""
    grid = u.grid if isinstance(u, Field) else grid
    g = node_grad(grid, values_of(u))
    g2 = (g ** 2).reshape(grid.n_nodes, -1).sum(axis=1)
    return Field(grid, (1.0 + g2) ** (0.5 * p - 1.0))


def energy_gradient(u, p: float, grid: Grid | None = None) -> np.ndarray:
    """Euclidean gradient of the discrete E_p with respect to nodal values."""
    grid = u.grid if isinstance(u, Field) else grid
    v = values_of(u)
    K = stiffness(grid, cell_weight(v, p, grid))
    return p * np.asarray(K @ v.reshape(grid.n_nodes, -1)).reshape(v.shape)


# ---------------------------------------------------------------------------
# test family for weak residuals

BUMP_CENTERS = tuple((cx, cy) for cx in (-0.3, 0.0, 0.3) for cy in (-0.3, 0.0, 0.3))
BUMP_SCALES = (0.2, 0.3, 0.4)


def _bump_1d(t):
    inside = np.abs(t) < 1.0
    b = np.where(inside, (1.0 - t * t) ** 2, 0.0)
    db = np.where(inside, -4.0 * t * (1.0 - t * t), 0.0)
    return b, db


@dataclass(frozen=True)
class BumpFamily:
    """Tensor-product bumps sampled at triangle centroids (midpoint rule)."""

    values: np.ndarray  # (K, T)
    grads: np.ndarray  # (K, T, 2)
    energy: np.ndarray  # (K,) L2 norm of the gradient

    @property
    def size(self) -> int:
        return self.values.shape[0]


def bump_family(grid: Grid, centers=BUMP_CENTERS, scales=BUMP_SCALES) -> BumpFamily:
    """Fixed 9 x 3 family of compactly supported bumps inside the disc."""
    cached = getattr(grid, "_bump_family", None)
    if cached is not None and centers is BUMP_CENTERS and scales is BUMP_SCALES:
        return cached
    xy = grid.centroids
    vals, grads = [], []
    for s in scales:
        for cx, cy in centers:
            bx, dbx = _bump_1d((xy[:, 0] - cx) / s)
            by, dby = _bump_1d((xy[:, 1] - cy) / s)
            vals.append(bx * by)
            grads.append(np.stack([dbx * by / s, bx * dby / s], axis=1))
    values = np.array(vals)
    g = np.array(grads)
    energy = np.sqrt(np.einsum("t,ktd->k", grid.tri_area, g ** 2))
    fam = BumpFamily(values, g, energy)
    if centers is BUMP_CENTERS and scales is BUMP_SCALES:
        grid._bump_family = fam
    return fam


def weak_flux_residual(grid: Grid, flux: np.ndarray, rhs: np.ndarray | None = None,
                       family: BumpFamily | None = None) -> np.ndarray:
    """Per-test |int flux.grad(phi) - int rhs phi| / ||grad phi||.

    ``flux`` is a cell field (T, 2, *s), ``rhs`` a cell field (T, *s).  The
    norm over the value shape is Euclidean.
    """
    fam = family or bump_family(grid)
    w = grid.tri_area
    r = np.einsum("t,ktd,td...->k...", w, fam.grads, flux)
    if rhs is not None:
        r = r - np.einsum("t,kt,t...->k...", w, fam.values, rhs)
    r = r.reshape(fam.size, -1)
    return np.sqrt((r ** 2).sum(axis=1)) / fam.energy


# ---------------------------------------------------------------------------
# Euler-Lagrange residuals


def check_antisymmetric(Omega: np.ndarray, tol: float = 1e-12) -> None:
    sym = Omega + np.swapaxes(Omega, -1, -2)
    scale = max(1.0, float(np.abs(Omega).max(initial=0.0)))
    if np.abs(sym).max(initial=0.0) > tol * scale:
        raise ValueError("Omega is not antisymmetric")


def omega_dot_grad(Omega: np.ndarray, grad_u: np.ndarray) -> np.ndarray:
    """(Omega . grad u)^i = sum_a sum_j Omega_a^{ij} d_a u^j."""
    return np.einsum("nakl,nal->nk", Omega, grad_u)


@dataclass
class ELResidual:
    weak: float
    per_test: np.ndarray
    strong: Field


def el_residual(u, p: float, Omega=None, grid: Grid | None = None) -> ELResidual:
    """Weak and strong residuals of -div(f grad u) = f Omega . grad u."""
    grid = u.grid if isinstance(u, Field) else grid
    v = values_of(u)
    gu = cell_grad(grid, v)
    f = cell_weight(v, p, grid)
    flux = f[:, None, None] * gu
    rhs = None
    if Omega is not None:
        Om = values_of(Omega)
        check_antisymmetric(Om)
        Oc = Om if Om.shape[0] == grid.n_cells and not (isinstance(Omega, Field) and Omega.location == "node") else node_to_cell(grid, Om)
        rhs = f[:, None] * omega_dot_grad(Oc, gu)
    per = weak_flux_residual(grid, flux, rhs)
    # strong form at nodes: lumped -div(f grad u) minus the potential term
    K = stiffness(grid, f)
    lap = np.asarray(K @ v) / grid.node_area[:, None]
    strong = lap.copy()
    if Omega is not None:
        On = Om if Om.shape[0] == grid.n_nodes else None
        if On is None:
            from .grid import cell_to_node
            On = cell_to_node(grid, Om)
        fn = weight_f(v, p, grid).values
        strong = strong - fn[:, None] * omega_dot_grad(On, node_grad(grid, v))
    strong[grid.boundary] = 0.0
    return ELResidual(float(per.max()), per, Field(grid, strong))


def sphere_el_residual(u, p: float, grid: Grid | None = None) -> float:
    """Weak residual of -div(f grad u) = f u |grad u|^2."""
    grid = u.grid if isinstance(u, Field) else grid
    v = values_of(u)
    gu = cell_grad(grid, v)
    g2 = (gu ** 2).reshape(grid.n_cells, -1).sum(axis=1)
    f = (1.0 + g2) ** (0.5 * p - 1.0)
    uc = node_to_cell(grid, v)
    rhs = (f * g2)[:, None] * uc
    return float(weak_flux_residual(grid, f[:, None, None] * gu, rhs).max())


def omega_from_map(u, grid: Grid | None = None, location: str = "node") -> Field:
    """Omega^{ij} = u^i grad u^j - u^j grad u^i for a sphere-valued map."""
    grid = u.grid if isinstance(u, Field) else grid
    v = values_of(u)
    dev = np.abs(np.linalg.norm(v, axis=1) - 1.0).max()
    if dev > 1e-8:
        raise ValueError(f"map leaves the sphere by {dev:.3e}")
    if location == "node":
        gu = node_grad(grid, v)
        uu = v
    else:
        gu = cell_grad(grid, v)
        uu = node_to_cell(grid, v)
    om = np.einsum("ni,naj->naij", uu, gu)
    om = om - np.swapaxes(om, -1, -2)
    return Field(grid, om, location)


def sphere_conservation_residual(u, p: float, grid: Grid | None = None) -> float:
    """max over i < j of the weak residual of div(f [u^i grad u^j - u^j grad u^i]) = 0."""
    grid = u.grid if isinstance(u, Field) else grid
    v = values_of(u)
    gu = cell_grad(grid, v)
    uc = node_to_cell(grid, v)
    f = cell_weight(v, p, grid)
    om = np.einsum("ni,naj->naij", uc, gu)
    om = f[:, None, None, None] * (om - np.swapaxes(om, -1, -2))
    m = v.shape[1]
    iu = np.triu_indices(m, 1)
    flux = om[:, :, iu[0], iu[1]]
    fam = bump_family(grid)
    r = np.abs(np.einsum("t,ktd,tdq->kq", grid.tri_area, fam.grads, flux)) / fam.energy[:, None]
    return float(r.max()) if r.size else 0.0


# ---------------------------------------------------------------------------
# boundary presets


def equator_data(k: int = 1) -> Callable[[np.ndarray], np.ndarray]:
    def g(theta):
        return np.stack([np.cos(k * theta), np.sin(k * theta), np.zeros_like(theta)], axis=-1)
    return g


def constant_data(vec=(0.0, 0.0, 1.0)) -> Callable[[np.ndarray], np.ndarray]:
    vec = np.asarray(vec, dtype=float)
    return lambda theta: np.broadcast_to(vec, theta.shape + vec.shape).copy()


def tabulated_data(theta_tab, g_tab) -> Callable[[np.ndarray], np.ndarray]:
    """Periodic linear interpolation of tabulated (theta, g) samples."""
    th = np.asarray(theta_tab, dtype=float)
    gt = np.asarray(g_tab, dtype=float)
    order = np.argsort(th)
    th, gt = th[order], gt[order]

    def g(theta):
        t = np.mod(theta, 2 * math.pi)
        out = np.stack([np.interp(t, th, gt[:, c], period=2 * math.pi) for c in range(gt.shape[1])], axis=-1)
        return out / np.linalg.norm(out, axis=-1, keepdims=True)
    return g


def boundary_values(grid: Grid, g) -> np.ndarray:
    """Evaluate boundary data on every node (interior values are by-products)."""
    if callable(g):
        theta = np.arctan2(grid.points[:, 1], grid.points[:, 0])
        return np.asarray(g(theta), dtype=float)
    return values_of(g, grid).copy()


def stereographic_map(x, y):
    """Inverse stereographic projection of the unit disc onto the upper hemisphere."""
    r2 = x * x + y * y
    d = 1.0 + r2
    return np.stack([2 * x / d, 2 * y / d, (1 - r2) / d], axis=-1)


# ---------------------------------------------------------------------------
# sphere solver


@dataclass
class MapState:
    u: Field
    p: float
    target: str
    g: np.ndarray
    energy: float
    iterations: int
    residual: float
    converged: bool
    history: list = dc_field(default_factory=list)

    @property
    def el_weak(self) -> float:
        return sphere_el_residual(self.u, self.p) if self.target == "sphere" else el_residual(self.u, self.p).weak


def _normalize(v):
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def harmonic_initial(grid: Grid, gb: np.ndarray, lift: float = 0.1) -> np.ndarray:
    """Normalized harmonic extension of the boundary data, lifted off the equator."""
    ext = solve_dirichlet(1.0, g=gb, grid=grid).values
    m = gb.shape[1]
    if lift and m >= 3:
        r2 = grid.radius ** 2
        ext[:, -1] += lift * (1.0 - r2)
    n = np.linalg.norm(ext, axis=1)
    if n.min() < 1e-8:
        raise ValueError("harmonic extension vanishes; pick a lift")
    return _normalize(ext)


def solve_sphere_pharmonic(g, p: float, h: float | None = None, tol: float = 1e-8, *,
                           grid: Grid | None = None, max_iter: int = 500, lift: float = 0.1,
                           u0: np.ndarray | None = None) -> MapState:
    """Projected, H1-preconditioned gradient flow for E_p on sphere-valued maps.

    Each step solves K_f d = P_u(grad E_p) with zero Dirichlet data, then
    sets u <- normalize(u - tau d) with Armijo backtracking on E_p.  The
    loop stops once the dual norm <grad E_p, d>^(1/2) of the tangential
    gradient drops below ``tol``.
    """
    if grid is None:
        from .grid import build_grid
        grid = build_grid(DISC, h)
    if not (2.0 <= p <= 3.0):
        log.warning("p = %g outside [2, 3]", p)
    gb = boundary_values(grid, g)
    if np.abs(np.linalg.norm(gb[grid.boundary], axis=1) - 1.0).max() > 1e-10:
        raise ValueError("boundary data must be unit vectors")
    u = harmonic_initial(grid, gb, lift) if u0 is None else _normalize(np.array(u0, dtype=float))
    u[grid.boundary] = gb[grid.boundary]
    free = grid.interior
    E = energy_p(u, p, grid)
    tau = 1.0 / p
    history = [E]
    res = math.inf
    converged = False
    it = 0
    solver = None
    for it in range(max_iter + 1):
        f = cell_weight(u, p, grid)
        K = stiffness(grid, f)
        ge = p * np.asarray(K @ u)
        ge[~free] = 0.0
        gt = ge - np.sum(ge * u, axis=1, keepdims=True) * u
        if solver is None or p != 2.0:
            solver = DirichletSolver(grid, f)
        d, _ = solver.solve_loads(gt)
        d = d - np.sum(d * u, axis=1, keepdims=True) * u
        d[~free] = 0.0
        slope = float(np.sum(gt * d))
        res = math.sqrt(max(slope, 0.0))
        if res < tol:
            converged = True
            break
        if it == max_iter:
            break
        accepted = False
        while tau > 1e-12:
            un = _normalize(u - tau * d)
            un[~free] = u[~free]
            En = energy_p(un, p, grid)
            if En <= E - 1e-4 * tau * slope:
                accepted = True
                break
            tau *= 0.5
        if not accepted:
            # Armijo cannot resolve a decrease below roundoff in E
            converged = slope < 1e4 * np.finfo(float).eps * max(E, 1.0)
            break
        assert En <= E, "energy increased along the flow"
        u, E = un, En
        history.append(E)
        tau = min(tau * 1.5, 2.0 / p)
    if not converged:
        log.warning("sphere solve stopped after %d steps, residual %.3e", it, res)
    return MapState(Field(grid, u), p, "sphere", gb, E, it, res, converged, history)


# ---------------------------------------------------------------------------
# general Omega-systems


def _potential_matrix(grid: Grid, Omega_cell: np.ndarray, f_cell: np.ndarray) -> sp.csr_matrix:
    """Matrix of u -> int f (Omega . grad u)^i beta with lumped test functions."""
    m = Omega_cell.shape[-1]
    gx, gy = grid.cell_grad_ops
    spread = (grid.node_to_cell.T).tocsr()  # hat averages: each vertex gets 1/3
    blocks = [[None] * m for _ in range(m)]
    for i in range(m):
        for j in range(m):
            cx = grid.tri_area * f_cell * Omega_cell[:, 0, i, j]
            cy = grid.tri_area * f_cell * Omega_cell[:, 1, i, j]
            blocks[i][j] = spread @ (sp.diags(cx) @ gx + sp.diags(cy) @ gy)
    return sp.bmat(blocks, format="csr")


def solve_omega_system(grid: Grid, Omega, p: float, g, *, tol: float = 1e-10,
                       max_iter: int = 100) -> MapState:
    """Solve -div(f grad u) = f Omega . grad u, u = g on the boundary, by Picard on f.

    Unknowns are ordered component-major.  The frozen-weight linear system
    is not symmetric, so each Picard step uses a sparse LU.
    """
    Om = values_of(Omega, grid)
    check_antisymmetric(Om)
    Oc = Om if Om.shape[0] == grid.n_cells and not (isinstance(Omega, Field) and Omega.location == "node") else node_to_cell(grid, Om)
    gb = boundary_values(grid, g)
    m = gb.shape[1]
    n = grid.n_nodes
    free = np.flatnonzero(grid.interior)
    fixed = np.flatnonzero(grid.boundary)
    idx_free = np.concatenate([free + c * n for c in range(m)])
    idx_fixed = np.concatenate([fixed + c * n for c in range(m)])
    u = solve_dirichlet(1.0, g=gb, grid=grid).values
    change = math.inf
    it = 0
    for it in range(1, max_iter + 1):
        f = cell_weight(u, p, grid)
        K = stiffness(grid, f)
        A = sp.block_diag([K] * m, format="csr") - _potential_matrix(grid, Oc, f)
        ub = gb.T.reshape(-1)
        rhs = -A[idx_free][:, idx_fixed] @ ub[idx_fixed]
        x, _ = LinearSystem(A[idx_free][:, idx_free]).solve(rhs)
        new = ub.copy()
        new[idx_free] = x
        new = new.reshape(m, n).T
        change = float(np.abs(new - u).max())
        u = new
        if p == 2.0 or change < tol:
            break
    res = el_residual(u, p, Field(grid, Oc, "cell"), grid).weak
    return MapState(Field(grid, u), p, "free", gb, energy_p(u, p, grid), it, res,
                    p == 2.0 or change < tol, [change])
