"""The normalized weight operator S_A, the stream operator T_A, and their commutator probe.

Vector fields here are (T, 2, m) cell arrays: slot axis 1, component axis 2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np
import scipy.sparse as sp

from .elliptic import LinearSystem, load_vector, stiffness
from .grid import Field, Grid, cell_grad, node_to_cell, perp, values_of
from .lorentz import lorentz_norm


def _cell_matrix(grid: Grid, A) -> np.ndarray:
    """Cell values of a node or cell matrix field (T, m, m); scalars become 1 x 1."""
    if A is None:
        return None
    v = np.asarray(values_of(A, grid), dtype=float)
    if v.ndim == 1:
        v = v[:, None, None]
    if v.shape[0] == grid.n_nodes and not (isinstance(A, Field) and A.location == "cell"):
        v = node_to_cell(grid, v)
    return v


def _inverse(Ac: np.ndarray) -> np.ndarray:
    det = np.linalg.det(Ac)
    if np.abs(det).min() < 1e-12:
        raise ValueError("A is singular on some triangle")
    return np.linalg.inv(Ac)


def _lp_cells(grid: Grid, X: np.ndarray, p: float) -> float:
    mag = np.sqrt((X.reshape(grid.n_cells, -1) ** 2).sum(axis=1))
    return float(grid.tri_area @ mag ** p) ** (1.0 / p)


def _apply(M: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Per-cell matrix acting on the component axis of a (T, 2, m) field."""
    return np.einsum("tij,taj->tai", M, X)


def op_S(A, X: np.ndarray, p: float, *, grid: Grid) -> np.ndarray:
    """(1 + |A^-1 X|^2)^(p/2-1) / (1 + ||A^-1 X||_p^2)^(p/2-1) X, per triangle."""
    X = np.asarray(X, dtype=float)
    if p == 2.0:
        return X.copy()
    Ac = _cell_matrix(grid, A)
    Y = X if Ac is None else _apply(_inverse(Ac), X)
    mag2 = (Y.reshape(grid.n_cells, -1) ** 2).sum(axis=1)
    norm = _lp_cells(grid, Y, p)
    e = 0.5 * p - 1.0
    scale = (1.0 + mag2) ** e / (1.0 + norm * norm) ** e
    return scale[:, None, None] * X


@dataclass
class _StreamSolver:
    grid: Grid
    m: int
    system: LinearSystem
    free_idx: np.ndarray


def _stream_solver(grid: Grid, Ainv: np.ndarray) -> _StreamSolver:
    m = Ainv.shape[-1]
    blocks = [[stiffness(grid, Ainv[:, i, j]) for j in range(m)] for i in range(m)]
    K = sp.bmat(blocks, format="csr")
    free = np.flatnonzero(grid.interior)
    n = grid.n_nodes
    idx = np.concatenate([free + c * n for c in range(m)])
    return _StreamSolver(grid, m, LinearSystem(K[idx][:, idx]), idx)


def op_T(A, X: np.ndarray, *, grid: Grid, return_potential: bool = False):
    """grad_perp w where -div(A^-1 grad w) = div(A^-1 X_perp), w = 0 on the boundary.

    The matrix weight couples components, so the Galerkin system is a block
    matrix; it is not symmetric for general A and is factored by sparse LU.
    """
    X = np.asarray(X, dtype=float)
    m = X.shape[-1]
    Ac = _cell_matrix(grid, A)
    Ainv = np.broadcast_to(np.eye(m), (grid.n_cells, m, m)) if Ac is None else _inverse(Ac)
    S = _apply(Ainv, perp(X))
    b = load_vector(grid, None, S, (m,))
    solver = _stream_solver(grid, np.ascontiguousarray(Ainv))
    rhs = b.T.reshape(-1)[solver.free_idx]
    x, _ = solver.system.solve(rhs)
    w = np.zeros(grid.n_nodes * m)
    w[solver.free_idx] = x
    w = w.reshape(m, grid.n_nodes).T
    out = perp(cell_grad(grid, w))
    return (out, Field(grid, w)) if return_potential else out


@dataclass
class OperatorProbe:
    p: list
    rho: list
    commutator_norm: list
    grad_lp: list
    slope: float
    intercept: float
    scale: float
    rho_at_2: float | None = None
    extra: dict = dc_field(default_factory=dict)

    def rows(self):
        return [{"p": p, "rho": r, "commutator": c, "grad_lp": g}
                for p, r, c, g in zip(self.p, self.rho, self.commutator_norm, self.grad_lp)]


def probe_map(grid: Grid) -> np.ndarray:
    """Fixed smooth R^2-valued probe map with non-constant |grad u|."""
    x, y = grid.points.T
    return np.stack([np.sin(1.5 * x) * (1.0 + y * y), x * y * y + y + 0.5 * x * x], axis=1)


def commutator_rho(A, u, p: float, *, grid: Grid) -> tuple[float, float, float]:
    """(rho, ||T_A S_A(A grad u)||_{p'}, ||grad u||_p)."""
    uv = np.asarray(values_of(u, grid), dtype=float)
    gu = cell_grad(grid, uv)
    if uv.ndim == 1:
        gu = gu[:, :, None]
    Ac = _cell_matrix(grid, A)
    X = gu if Ac is None else _apply(Ac, gu)
    T = op_T(A, op_S(A, X, p, grid=grid), grid=grid)
    q = p / (p - 1.0)
    num = _lp_cells(grid, T, q)
    g = _lp_cells(grid, gu, p)
    denom = g ** 0.75 + g
    return (num / denom if denom > 0 else 0.0), num, g


def commutator_probe(A, u, p_list, *, grid: Grid) -> OperatorProbe:
    """rho(p) over ``p_list`` and the least-squares slope of log rho against log(p - 2)."""
    ps = [float(p) for p in p_list]
    if any(p <= 2.0 or p > 3.0 for p in ps):
        raise ValueError("commutator probes need p in (2, 3]")
    rhos, nums, gs = [], [], []
    for p in ps:
        r, n, g = commutator_rho(A, u, p, grid=grid)
        rhos.append(r)
        nums.append(n)
        gs.append(g)
    lx = np.log(np.array(ps) - 2.0)
    ly = np.log(np.maximum(rhos, 1e-300))
    slope, intercept = np.polyfit(lx, ly, 1)
    uv = np.asarray(values_of(u, grid), dtype=float)
    scale = _lp_cells(grid, cell_grad(grid, uv), 2.0)
    r2 = commutator_rho(A, u, 2.0, grid=grid)[1]
    return OperatorProbe(ps, rhos, nums, gs, float(slope), float(intercept), scale, r2)


@dataclass
class DiscL21Report:
    p: float
    t: float
    lhs: float
    term1: float
    term2: float
    term3: float
    alpha: float
    grad_lp: float
    omega_energy: float

    @property
    def constant_measured(self) -> float:
        s = self.term1 + self.term2 + self.term3
        return self.lhs / s if s > 0 else math.inf if self.lhs > 0 else 0.0

    def as_dict(self) -> dict:
        return {"p": self.p, "t": self.t, "lhs": self.lhs, "term1": self.term1, "term2": self.term2,
                "term3": self.term3, "alpha": self.alpha, "grad_lp": self.grad_lp,
                "omega_energy": self.omega_energy, "constant": self.constant_measured}


def small_exponent(p: float) -> float:
    """1/(p-1) + 1/p - 1, the power of (p - 2) left after the Holder-Lorentz step."""
    return 1.0 / (p - 1.0) + 1.0 / p - 1.0


def disc_l21_report(u, p: float, Omega, t: float = 0.5, *, grid: Grid | None = None) -> DiscL21Report:
    """||grad u||_{L^{2,1}(B_t)} and the three right-hand summands with unit constants."""
    from .gauge import omega_energy
    from .pharmonic import cell_weight
    grid = grid or u.grid
    uv = np.asarray(values_of(u, grid), dtype=float)
    gu = cell_grad(grid, uv)
    mag = np.sqrt((gu.reshape(grid.n_cells, -1) ** 2).sum(axis=1))
    inside = np.linalg.norm(grid.centroids, axis=1) < t
    lhs = lorentz_norm(Field(grid, mag, "cell"), "L21", mask=inside)
    g = float(grid.tri_area @ mag ** p) ** (1.0 / p)
    f = cell_weight(uv, p, grid)
    Q = omega_energy(Omega, Field(grid, f, "cell"), grid) if Omega is not None else 0.0
    a = small_exponent(p)
    big = 1.0 + g * g
    t1 = (p - 2.0) ** a * (g ** 0.75 + g) ** (1.0 / (p - 1.0)) * big ** ((p - 2.0) / (2.0 * (p - 1.0)))
    t2 = Q ** (1.0 / (2.0 * (p - 1.0))) * big ** (p / (4.0 * (p - 1.0)))
    t3 = g ** (1.0 / (p - 1.0)) * big ** ((p - 2.0) / (2.0 * (p - 1.0)))
    return DiscL21Report(p, t, lhs, float(t1), float(t2), float(t3), a, g, Q)
