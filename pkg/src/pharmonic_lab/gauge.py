"""Optimal SO(m) gauge by Riemannian gradient descent, and stream recovery of xi.

The discrete gauge energy is a cell sum,

    E(Q) = sum_T |T| f_T sum_a |Qb Omega_a Qb^T - skew((d_a Q) Qb^T)|^2,

with Qb the cell average of the nodal rotations and d_a the P1 cell
derivative.  For an orthogonal field this is |Q Omega - grad Q|^2 written
in the rotated frame; the tangential projection keeps the connection P
exactly antisymmetric.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field as dc_field

import numpy as np
import scipy.linalg as sla

from .elliptic import DirichletSolver, load_vector, recover_stream, triangle_weight
from .grid import Field, Grid, cell_grad, node_to_cell, values_of

log = logging.getLogger(__name__)

DEFAULT_SIGMA = 0.05


def skew(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M - np.swapaxes(M, -1, -2))


def expm_so(U: np.ndarray) -> np.ndarray:
    """Matrix exponential of a batch of antisymmetric matrices (..., m, m)."""
    m = U.shape[-1]
    if m == 1:
        return np.ones_like(U)
    if m == 2:
        a = U[..., 1, 0]
        c, s = np.cos(a), np.sin(a)
        out = np.empty_like(U)
        out[..., 0, 0] = c
        out[..., 0, 1] = -s
        out[..., 1, 0] = s
        out[..., 1, 1] = c
        return out
    if m == 3:
        w = np.stack([U[..., 2, 1], U[..., 0, 2], U[..., 1, 0]], axis=-1)
        th = np.linalg.norm(w, axis=-1)[..., None, None]
        small = th < 1e-8
        ths = np.where(small, 1.0, th)
        a = np.where(small, 1.0 - th ** 2 / 6.0, np.sin(ths) / ths)
        b = np.where(small, 0.5 - th ** 2 / 24.0, (1.0 - np.cos(ths)) / ths ** 2)
        eye = np.broadcast_to(np.eye(3), U.shape)
        return eye + a * U + b * (U @ U)
    return sla.expm(U)


def polar(Q: np.ndarray) -> np.ndarray:
    """Nearest orthogonal matrix per node."""
    u, _, vt = np.linalg.svd(Q)
    return u @ vt


def _cell_apply(ops, Q):
    n = Q.shape[0]
    return np.asarray(ops @ Q.reshape(n, -1))


def _T(M):
    return np.swapaxes(M, -1, -2)


@dataclass
class GaugeProblem:
    grid: Grid
    Omega: np.ndarray  # (T, 2, m, m) cell values
    f: np.ndarray  # (T,) cell values

    def __post_init__(self):
        self.m = self.Omega.shape[-1]
        self.w = self.grid.tri_area * self.f
        self.N = self.grid.node_to_cell
        self.D = self.grid.cell_grad_ops
        self.NT = self.N.T.tocsr()
        self.DT = tuple(d.T.tocsr() for d in self.D)

    def parts(self, Q):
        t = self.grid.n_cells
        shp = (t,) + Q.shape[1:]
        Qb = _cell_apply(self.N, Q).reshape(shp)
        DQ = np.stack([_cell_apply(d, Q).reshape(shp) for d in self.D], axis=1)
        Qbt = _T(Qb)[:, None]
        Y = DQ @ Qbt
        X = Qb[:, None] @ self.Omega @ Qbt - skew(Y)
        return X, Qb, DQ

    def energy(self, Q) -> float:
        X = self.parts(Q)[0]
        return float(self.w @ (X ** 2).reshape(len(self.w), -1).sum(axis=1))

    def gradient(self, Q) -> tuple[float, np.ndarray]:
        """Energy and its Riemannian gradient for Q <- exp(U) Q (antisymmetric, per node)."""
        X, Qb, DQ = self.parts(Q)
        t = len(self.w)
        E = float(self.w @ (X ** 2).reshape(t, -1).sum(axis=1))
        wv = self.w[:, None, None, None]
        XQ = X @ Qb[:, None]
        dQb = (2.0 * wv * (X @ DQ - 2.0 * XQ @ self.Omega)).sum(axis=1)
        Z = np.asarray(self.NT @ dQb.reshape(t, -1))
        for a in range(2):
            Z -= np.asarray(self.DT[a] @ (2.0 * self.w[:, None, None] * XQ[:, a]).reshape(t, -1))
        Z = Z.reshape(Q.shape)
        return E, skew(Z @ _T(Q))

    def connection(self, Q) -> np.ndarray:
        """P = Qb Omega Qb^T - skew(grad Q Qb^T) per cell."""
        return self.parts(Q)[0]


@dataclass
class GaugeResult:
    Q: Field
    energy: float
    initial_energy: float
    el_residual: float
    iterations: int
    converged: bool
    history: list = dc_field(default_factory=list)
    xi: Field | None = None
    xi_defect: float | None = None
    orthogonality: float = 0.0
    antisymmetry: float = 0.0


def _omega_cells(grid, Omega):
    Om = values_of(Omega, grid)
    if isinstance(Omega, Field) and Omega.location == "cell":
        return Om
    if Om.shape[0] == grid.n_nodes:
        return node_to_cell(grid, Om)
    return Om


def _f_cells(grid, f):
    fv = values_of(f, grid)
    if fv.ndim == 0:
        return np.full(grid.n_cells, float(fv))
    if isinstance(f, Field) and f.location == "cell":
        return fv
    return triangle_weight(grid, fv)


def _grid_of(*items):
    return next(x.grid for x in items if isinstance(x, Field))


def gauge_energy(Q, Omega, f, grid: Grid | None = None) -> float:
    """Cell quadrature of f |Q Omega - grad Q|^2 in its rotated, antisymmetric form."""
    grid = grid or _grid_of(Q, Omega, f)
    prob = GaugeProblem(grid, _omega_cells(grid, Omega), _f_cells(grid, f))
    return prob.energy(values_of(Q, grid))


def omega_energy(Omega, f, grid: Grid | None = None) -> float:
    """int f |Omega|^2 (Frobenius over slots and matrix entries); equals the gauge energy at Q = Id."""
    grid = grid or _grid_of(Omega, f)
    Om = _omega_cells(grid, Omega)
    w = grid.tri_area * _f_cells(grid, f)
    return float(w @ (Om ** 2).reshape(grid.n_cells, -1).sum(axis=1))


def extract_gauge(Omega, f, tol: float = 1e-9, max_iter: int = 500, *, grid: Grid | None = None,
                  sigma: float = DEFAULT_SIGMA, Q0=None) -> GaugeResult:
    """Minimize the gauge energy over SO(m)-valued Q with Q = Id on the boundary.

    Descent direction U = -K_f^{-1} g with g the Riemannian gradient and K_f
    the weighted stiffness (an H1 Riesz map), update Q <- exp(tau U) Q with
    Armijo backtracking and a polar clean-up.  ``tol`` is relative to
    sqrt(int f |Omega|^2) and bounds the dual norm sqrt(<g, K_f^{-1} g>).
    """
    grid = grid or _grid_of(Omega, f)
    Om = _omega_cells(grid, Omega)
    fv = _f_cells(grid, f)
    if fv.min() < 1.0 - 1e-12:
        raise ValueError("weight f must be >= 1")
    prob = GaugeProblem(grid, Om, fv)
    m = prob.m
    n = grid.n_nodes
    E_omega = omega_energy(Om, fv, grid)
    if E_omega >= sigma:
        log.warning("int f|Omega|^2 = %.4g exceeds sigma = %.4g", E_omega, sigma)
    Q = np.broadcast_to(np.eye(m), (n, m, m)).copy() if Q0 is None else values_of(Q0, grid).copy()
    Q[grid.boundary] = np.eye(m)
    solver = DirichletSolver(grid, fv)
    free = grid.interior
    E, g = prob.gradient(Q)
    E0 = E
    history = [E]
    scale = math.sqrt(max(E_omega, 1e-300))
    tau = 0.5
    res = math.inf
    converged = False
    it = 0
    for it in range(max_iter + 1):
        g[~free] = 0.0
        d, _ = solver.solve_loads(g)
        d = skew(d)
        slope = float(np.sum(g * d))
        res = math.sqrt(max(slope, 0.0))
        if res <= tol * scale or E == 0.0:
            converged = True
            break
        if it == max_iter:
            break
        step = _line_search(prob, Q, E, d, slope, tau, free)
        if step is None:
            # roundoff floor: the predicted decrease is below the energy's precision
            converged = slope < 1e4 * np.finfo(float).eps * max(E, 1e-300)
            break
        tau, Q, E, g = step
        history.append(E)
        tau = min(1.5 * tau, 4.0)
    if not converged:
        log.warning("gauge descent stopped after %d steps, residual %.3e", it, res)
    eye = np.eye(m)
    ortho = float(np.abs(np.swapaxes(Q, -1, -2) @ Q - eye).max())
    P = prob.connection(Q)
    anti = float(np.abs(P + np.swapaxes(P, -1, -2)).max())
    return GaugeResult(Field(grid, Q), E, E0, res, it, converged, history,
                       orthogonality=ortho, antisymmetry=anti)


def _trial(prob, Q, d, tau, free):
    Qn = polar(expm_so(-tau * d) @ Q)
    Qn[~free] = np.eye(prob.m)
    return prob.gradient(Qn) + (Qn,)


def _line_search(prob, Q, E, d, slope, tau, free, c=1e-4):
    """Armijo backtracking with a quadratic-fit candidate; returns (tau, Q, E, g) or None."""
    while tau > 1e-14:
        En, gn, Qn = _trial(prob, Q, d, tau, free)
        curv = En - E + slope * tau
        if curv > 0:
            tq = 0.5 * slope * tau * tau / curv
            if 1e-3 * tau < tq < 10.0 * tau and abs(tq - tau) > 1e-3 * tau:
                Eq, gq, Qq = _trial(prob, Q, d, tq, free)
                if Eq < En:
                    tau, En, gn, Qn = tq, Eq, gq, Qq
        if En <= E - c * tau * slope:
            return tau, Qn, En, gn
        tau *= 0.5
    return None


@dataclass
class XiChecks:
    defect: float
    projection_lhs: float
    projection_rhs: float
    projection_gauge_energy: float
    divergence_defect: float
    lp_lhs: float | None = None
    lp_rhs: float | None = None

    @property
    def projection_slack(self) -> float:
        return self.projection_rhs - self.projection_lhs


def recover_xi(result: GaugeResult, Omega, f, p: float | None = None,
               grid: Grid | None = None) -> tuple[Field, XiChecks]:
    """xi with perp_grad(xi) closest to f P in the 1/f-weighted L2 sense.

    ``defect`` is the full distance of the cellwise f P from P1 perp-gradients
    and is O(h) even for exactly divergence-free data; ``divergence_defect``
    is the part driven by the weak divergence of f P.

    The 1/f weighting makes xi the orthogonal projection, so
    int |grad xi|^2 / f <= int f |P|^2 holds in the same quadrature.
    """
    grid = grid or result.Q.grid
    f_cell = _f_cells(grid, f)
    prob = GaugeProblem(grid, _omega_cells(grid, Omega), f_cell)
    P = prob.connection(values_of(result.Q, grid))
    Vc = f_cell[:, None, None, None] * P
    xi, defect = recover_stream(Vc, 1.0 / f_cell, grid=grid)
    gx = cell_grad(grid, xi.values)
    a = grid.tri_area / f_cell
    flat = lambda z: (z ** 2).reshape(grid.n_cells, -1).sum(axis=1)
    lhs = float(a @ flat(gx))
    rhs = float(a @ flat(Vc))
    # P1-dual norm of the weak divergence of fP, the part of the defect the gauge EL controls
    b = load_vector(grid, None, Vc, Vc.shape[2:])
    b[grid.boundary] = 0.0
    d, _ = DirichletSolver(grid, f_cell).solve_loads(b)
    div_defect = math.sqrt(max(float(np.sum(b * d)), 0.0))
    checks = XiChecks(defect, lhs, rhs, result.energy, div_defect)
    if p is not None and p > 2.0:
        q = p / (p - 1.0)
        gmag = np.sqrt(flat(gx))
        checks.lp_lhs = float(grid.tri_area @ gmag ** q)
        vol = float(grid.tri_area @ f_cell ** (p / (p - 2.0)))
        checks.lp_rhs = result.energy ** (p / (2 * (p - 1))) * vol ** ((p - 2) / (2 * p - 2))
    result.xi = xi
    result.xi_defect = defect
    return xi, checks


def pure_gauge_omega(grid: Grid, amplitude: float = 1.0, radius: float = 0.8, discrete: bool = True):
    """m = 2 pure-gauge potential built from psi = a (1 - r^2/rho^2)^4, supported in B_rho.

    Returns ``(Omega, Q_exact)`` with Q_exact = exp(psi J).  The continuum
    potential is J grad(psi) at nodes.  With ``discrete`` the potential is
    instead the cell connection Qb^-1 skew(dQ Qb^T) Qb^-T of Q_exact, so that
    Q_exact has zero discrete gauge energy.
    """
    x, y = grid.points[:, 0], grid.points[:, 1]
    r2 = (x * x + y * y) / radius ** 2
    inside = r2 < 1.0
    t = np.where(inside, 1.0 - r2, 0.0)
    psi = amplitude * t ** 4
    J = np.array([[0.0, -1.0], [1.0, 0.0]])
    Q = expm_so(psi[:, None, None] * J)
    if not discrete:
        dpsi = np.where(inside, -8.0 * amplitude * t ** 3 / radius ** 2, 0.0)
        gpsi = np.stack([dpsi * x, dpsi * y], axis=1)
        return Field(grid, gpsi[:, :, None, None] * J), Field(grid, Q)
    prob = GaugeProblem(grid, np.zeros((grid.n_cells, 2, 2, 2)), np.ones(grid.n_cells))
    _, Qb, DQ = prob.parts(Q)
    inv = np.linalg.inv(Qb)[:, None]
    Om = inv @ skew(DQ @ _T(Qb)[:, None]) @ _T(inv)
    return Field(grid, Om, location="cell"), Field(grid, Q)
