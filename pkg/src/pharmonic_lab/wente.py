"""Weighted Wente problem and the A-Wente Neumann series.

The weighted problem -div(f grad phi) = grad a . grad_perp b, phi = 0 on the
boundary, comes with a certificate comparing

    ||phi||_inf^2 + int f |grad phi|^2   against   (int |grad a|^2 / f)(int f |grad b|^2).

The A-Wente problem -div(A grad phi) = grad_perp D . grad v is solved through
w = A phi and the series w = sum_k w_k with w_0 the Poisson solution and
w_k correcting by the commutator div(grad A A^-1 w_{k-1}).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .elliptic import DirichletSolver, load_vector, stiffness, triangle_weight
from .grid import Field, Grid, cell_grad, node_to_cell, perp, values_of
from .lorentz import lorentz_norm

log = logging.getLogger(__name__)

SUP_FACTOR = 6.0
CONSTANT_CAP = 42.0
AWENTE_SIGMA = 0.04


def _cells(grid, f):
    fv = values_of(f, grid)
    if fv.ndim == 0:
        return np.full(grid.n_cells, float(fv))
    return triangle_weight(grid, fv)


def jacobian(a, b, grid: Grid) -> np.ndarray:
    """grad a . grad_perp b per triangle (scalar a, b)."""
    ga = cell_grad(grid, values_of(a, grid))
    gb = cell_grad(grid, values_of(b, grid))
    return np.einsum("ta...,ta...->t...", ga, perp(gb))


@dataclass(frozen=True)
class WenteCertificate:
    lhs_sup: float
    lhs_energy: float
    rhs_product: float
    sup_ratio: float

    @property
    def constant_measured(self) -> float:
        if self.rhs_product <= 0:
            return 0.0 if self.lhs_sup + self.lhs_energy == 0 else math.inf
        return (self.lhs_sup + self.lhs_energy) / self.rhs_product

    @property
    def sup_bound_holds(self) -> bool:
        """|phi| <= 6 sqrt(rhs_product)."""
        return self.sup_ratio <= SUP_FACTOR

    def as_dict(self) -> dict:
        return {"lhs_sup": self.lhs_sup, "lhs_energy": self.lhs_energy, "rhs_product": self.rhs_product,
                "constant": self.constant_measured, "sup_ratio": self.sup_ratio}


def solve_weighted_wente(f, a, b, *, grid: Grid | None = None, solver: DirichletSolver | None = None):
    """Return ``(phi, certificate)`` for -div(f grad phi) = grad a . grad_perp b, phi = 0 on the boundary."""
    grid = grid or next(x.grid for x in (a, b, f) if isinstance(x, Field))
    fc = _cells(grid, f)
    if solver is None:
        solver = DirichletSolver(grid, fc)
    J = jacobian(a, b, grid)
    phi, _ = solver.solve(source=J, vshape=())
    gphi = cell_grad(grid, phi)
    ga = cell_grad(grid, values_of(a, grid))
    gb = cell_grad(grid, values_of(b, grid))
    w = grid.tri_area
    sup = float(np.abs(phi).max())
    energy = float(w @ (fc * (gphi ** 2).sum(axis=1)))
    prod = float(w @ ((ga ** 2).sum(axis=1) / fc)) * float(w @ (fc * (gb ** 2).sum(axis=1)))
    ratio = sup / math.sqrt(prod) if prod > 0 else (0.0 if sup == 0 else math.inf)
    return Field(grid, phi), WenteCertificate(sup * sup, energy, prod, ratio)


# ---------------------------------------------------------------------------
# randomized suite

WEIGHTS = {
    "one": lambda x, y: np.ones_like(x),
    "quadratic": lambda x, y: 1.0 + x * x + y * y,
    "quartic": lambda x, y: 1.0 + 50.0 * (x * x + y * y) ** 2,
}


def random_smooth(grid: Grid, rng: np.random.Generator, n_modes: int = 4) -> np.ndarray:
    """Sum of a few random plane waves and a random quadratic, at nodes."""
    x, y = grid.points.T
    out = np.zeros(grid.n_nodes)
    for _ in range(n_modes):
        k = rng.uniform(0.5, 4.0) * np.array([math.cos(t := rng.uniform(0, 2 * math.pi)), math.sin(t)])
        out += rng.normal() * np.cos(k[0] * x + k[1] * y + rng.uniform(0, 2 * math.pi))
    c = rng.normal(size=3)
    return out + c[0] * x * x + c[1] * x * y + c[2] * y * y


def wente_suite(grid: Grid, n_pairs: int = 20, seed: int = 0, weights=None) -> list[dict]:
    """Certificates over ``n_pairs`` random (a, b) and each weight; one row per case."""
    rng = np.random.default_rng(seed)
    pairs = [(random_smooth(grid, rng), random_smooth(grid, rng)) for _ in range(n_pairs)]
    rows = []
    x, y = grid.points.T
    for f_id, fn in (weights or WEIGHTS).items():
        fv = fn(x, y)
        solver = DirichletSolver(grid, fv)
        for i, (a, b) in enumerate(pairs):
            _, cert = solve_weighted_wente(fv, a, b, grid=grid, solver=solver)
            rows.append({"case": i, "f_id": f_id, "h": grid.h, **cert.as_dict()})
    return rows


# ---------------------------------------------------------------------------
# A-Wente series


def grad_perp_dot(D: np.ndarray, v: np.ndarray, grid: Grid) -> np.ndarray:
    """(grad_perp D . grad v)^i = sum_a sum_j (grad_perp D^{ij})_a d_a v^j per triangle."""
    pD = perp(cell_grad(grid, D))
    gv = cell_grad(grid, v)
    return np.einsum("taij,taj->ti", pD, gv)


def _matrix_stiffness(grid: Grid, A_cell: np.ndarray) -> list[list[sp.csr_matrix]]:
    m = A_cell.shape[-1]
    return [[stiffness(grid, A_cell[:, i, j]) for j in range(m)] for i in range(m)]


def _apply_blocks(blocks, phi):
    m = len(blocks)
    return np.stack([sum(np.asarray(blocks[i][j] @ phi[:, j]) for j in range(m)) for i in range(m)], axis=1)


@dataclass
class AWenteReport:
    iterations: int
    ratios: list
    converged: bool
    residual: float
    scale: float
    mode: str
    p: float | None
    lhs: float
    rhs: float
    constant: float
    dist_so: float
    grad_A_energy: float


def _as_matrix_field(X, grid):
    v = np.asarray(values_of(X, grid), dtype=float)
    if v.ndim == 1:
        v = v[:, None, None]
    return v


def _as_vector_field(X, grid):
    v = np.asarray(values_of(X, grid), dtype=float)
    if v.ndim == 1:
        v = v[:, None]
    return v


def solve_awente(A, D, v, mode: str = "lorentz", p: float = 2.0, *, grid: Grid | None = None,
                 tol: float = 1e-12, max_iter: int = 200, sigma: float = AWENTE_SIGMA,
                 source: np.ndarray | None = None):
    """Solve -div(A grad phi) = grad_perp D . grad v with phi = 0 on the boundary.

    The series lives in the discrete space: with K_0 the Laplacian and K_A the
    Galerkin matrix of -div(A grad .), w_0 = K_0^-1 F and
    w_k = K_0^-1 (K_0 - K_A A^-1) w_{k-1}; the bracket is the discrete form of
    -div(grad A A^-1 w), so the limit solves the Galerkin system exactly.
    ``source`` overrides the right-hand side with a cell field (T, m).
    ``mode`` selects the reported bound: "lorentz" compares ||grad phi||_{2,1}
    with ||grad D||_{p'} ||grad v||_p, "l2" compares ||grad phi||_2 with
    ||grad D||_2 ||grad v||_{2,inf}.
    Returns ``(phi, AWenteReport)``.
    """
    grid = grid or next(x.grid for x in (A, D, v) if isinstance(x, Field))
    Av = _as_matrix_field(A, grid)
    m = Av.shape[-1]
    if source is None:
        Dv = _as_matrix_field(D, grid)
        vv = _as_vector_field(v, grid)
        F_cell = grad_perp_dot(Dv, vv, grid)
    else:
        F_cell = np.asarray(source, dtype=float).reshape(grid.n_cells, m)
    u_, s_, vt_ = np.linalg.svd(Av)
    dist = float(np.sqrt(((s_ - 1.0) ** 2).sum(axis=-1)).max())
    gA = cell_grad(grid, Av)
    gA_energy = float(grid.tri_area @ (gA ** 2).reshape(grid.n_cells, -1).sum(axis=1))
    if dist ** 2 + gA_energy > sigma:
        log.warning("A is far from SO(m): dist^2 + int|grad A|^2 = %.3g > %.3g", dist ** 2 + gA_energy, sigma)
    Ainv = np.linalg.inv(Av)
    blocks = _matrix_stiffness(grid, node_to_cell(grid, Av))
    lap = DirichletSolver(grid, 1.0)
    K0 = lap.K
    b = load_vector(grid, F_cell, None, (m,))
    b[grid.boundary] = 0.0
    w, _ = lap.solve_loads(b)
    total = w.copy()
    ratios: list[float] = []
    prev = float(np.sqrt((w ** 2).sum()))
    scale = max(prev, 1e-300)
    converged = prev == 0.0
    it = 0
    for it in range(1, max_iter + 1):
        if converged:
            break
        r = np.asarray(K0 @ w) - _apply_blocks(blocks, np.einsum("nij,nj->ni", Ainv, w))
        r[grid.boundary] = 0.0
        w, _ = lap.solve_loads(r)
        total += w
        cur = float(np.sqrt((w ** 2).sum()))
        ratios.append(cur / prev if prev > 0 else 0.0)
        prev = cur
        if ratios[-1] >= 1.0 and it >= 3 and ratios[-2] >= 1.0:
            raise RuntimeError(f"A-Wente series diverges (ratio {ratios[-1]:.3f})")
        if cur <= tol * scale:
            converged = True
    phi = np.einsum("nij,nj->ni", Ainv, total)
    phi[grid.boundary] = 0.0
    res_vec = _apply_blocks(blocks, phi) - b
    res_vec[grid.boundary] = 0.0
    residual = float(np.sqrt((res_vec ** 2).sum()))
    bscale = float(np.sqrt((b ** 2).sum()))
    gphi = cell_grad(grid, phi)
    gphi_mag = np.sqrt((gphi ** 2).reshape(grid.n_cells, -1).sum(axis=1))
    if source is not None:
        lhs, rhs = float("nan"), float("nan")
    elif mode == "lorentz":
        q = p / (p - 1.0)
        gD = np.sqrt((cell_grad(grid, Dv) ** 2).reshape(grid.n_cells, -1).sum(axis=1))
        gv = np.sqrt((cell_grad(grid, vv) ** 2).reshape(grid.n_cells, -1).sum(axis=1))
        lhs = lorentz_norm(Field(grid, gphi_mag, "cell"), "L21")
        rhs = float(grid.tri_area @ gD ** q) ** (1 / q) * float(grid.tri_area @ gv ** p) ** (1 / p)
    elif mode == "l2":
        gD = np.sqrt((cell_grad(grid, Dv) ** 2).reshape(grid.n_cells, -1).sum(axis=1))
        gv = np.sqrt((cell_grad(grid, vv) ** 2).reshape(grid.n_cells, -1).sum(axis=1))
        lhs = math.sqrt(float(grid.tri_area @ gphi_mag ** 2))
        rhs = math.sqrt(float(grid.tri_area @ gD ** 2)) * lorentz_norm(Field(grid, gv, "cell"), "L2inf")
    else:
        raise ValueError(f"unknown mode {mode!r}")
    const = lhs / rhs if rhs and rhs > 0 else 0.0
    rep = AWenteReport(len(ratios), ratios, converged, residual / max(bscale, 1e-300), bscale, mode, p,
                       lhs, rhs, const, dist, gA_energy)
    out_phi = phi[:, 0] if (np.ndim(values_of(v, grid)) == 1 and source is None) else phi
    return Field(grid, out_phi), rep
