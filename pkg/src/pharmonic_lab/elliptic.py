"""Weighted elliptic solves on P1 grids.

Weak forms used throughout (beta a test hat function):

    Dirichlet   int f grad(phi).grad(beta) = int s beta - int S.grad(beta)
                for  -div(f grad phi) = s + div S,  phi = g on the boundary.
    Neumann     int w grad(B).grad(beta) = int S.grad(beta) + oint (w g - S.nu) beta
                for  div(w grad B) = div S,  d_nu B = g on the boundary.

Weights are taken per triangle: the harmonic mean of the three nodal
values when a node field is supplied, or the cell value itself.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field as dc_field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import Field, Grid, cell_grad, node_to_cell, perp, values_of

log = logging.getLogger(__name__)

RESIDUAL_TOL = 1e-10
COMPAT_FLAG = 1e-6


class SolverError(RuntimeError):
    def __init__(self, msg, residual=None):
        super().__init__(msg)
        self.residual = residual


@dataclass
class SolveInfo:
    method: str
    residual: float
    iterations: int = 0
    compat_defect: float = 0.0
    flagged: bool = False
    extra: dict = dc_field(default_factory=dict)


# ---------------------------------------------------------------------------
# linear algebra


def pcg(A, b, tol=RESIDUAL_TOL, maxiter=None, x0=None, diag=None):
    """Jacobi-preconditioned conjugate gradients for one right-hand side.

    Returns ``(x, relative_residual, iterations)``.  The recurrence
    residual is refreshed from ``b - A x`` every 50 steps.
    """
    n = b.shape[0]
    if maxiter is None:
        maxiter = 10 * n
    d = A.diagonal() if diag is None else diag
    minv = 1.0 / d
    x = np.zeros(n) if x0 is None else x0.copy()
    r = b - A @ x
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n), 0.0, 0
    z = minv * r
    pdir = z.copy()
    rz = r @ z
    for it in range(1, maxiter + 1):
        q = A @ pdir
        alpha = rz / (pdir @ q)
        x += alpha * pdir
        if it % 50 == 0:
            r = b - A @ x
        else:
            r -= alpha * q
        res = np.linalg.norm(r) / bnorm
        if res < tol:
            res = np.linalg.norm(b - A @ x) / bnorm
            if res < tol:
                return x, res, it
        z = minv * r
        rz_new = r @ z
        pdir = z + (rz_new / rz) * pdir
        rz = rz_new
    return x, np.linalg.norm(b - A @ x) / bnorm, maxiter


class LinearSystem:
    """Square sparse system with a reusable solver.

    ``method="direct"`` factors once with SuperLU; ``method="cg"`` runs
    :func:`pcg` per right-hand side and needs a symmetric matrix.
    """

    def __init__(self, A, method="direct", tol=RESIDUAL_TOL):
        self.A = sp.csc_matrix(A)
        self.method = method
        self.tol = tol
        self._lu = None
        if method == "direct":
            self._lu = spla.splu(self.A)
        elif method != "cg":
            raise ValueError(f"unknown solver method {method!r}")

    def solve(self, b):
        b = np.asarray(b, dtype=float)
        flat = b.reshape(b.shape[0], -1)
        out = np.zeros_like(flat)
        iters = 0
        if self.method == "direct":
            out = self._lu.solve(flat)
            if out.ndim == 1:
                out = out[:, None]
        else:
            diag = self.A.diagonal()
            for k in range(flat.shape[1]):
                out[:, k], _, it = pcg(self.A, flat[:, k], tol=self.tol, diag=diag)
                iters = max(iters, it)
        res = 0.0
        bn = np.linalg.norm(flat)
        if bn > 0:
            res = float(np.linalg.norm(self.A @ out - flat) / bn)
        if res > self.tol:
            raise SolverError(f"linear solve residual {res:.3e} above {self.tol:.1e}", res)
        return out.reshape(b.shape), SolveInfo(self.method, res, iters)


# ---------------------------------------------------------------------------
# assembly


def triangle_weight(grid: Grid, w) -> np.ndarray:
    """Per-triangle coefficient: harmonic mean of nodal values, or the cell value."""
    v = values_of(w, grid)
    if v.ndim == 0:
        return np.full(grid.n_cells, float(v))
    if v.shape[0] == grid.n_cells and (not isinstance(w, Field) or w.location == "cell"):
        return v
    return 3.0 / (1.0 / v[grid.triangles]).sum(axis=1)


def stiffness(grid: Grid, w_cell: np.ndarray) -> sp.csr_matrix:
    """Assemble K_ij = sum_T |T| w_T grad(beta_i).grad(beta_j)."""
    gx, gy = grid.cell_grad_ops
    d = sp.diags(grid.tri_area * w_cell)
    return (gx.T @ d @ gx + gy.T @ d @ gy).tocsr()


def _as_cells(grid, v):
    v = values_of(v, grid)
    if isinstance(v, np.ndarray) and v.shape[0] == grid.n_nodes and grid.n_nodes != grid.n_cells:
        return node_to_cell(grid, v)
    return v


def load_vector(grid: Grid, source=None, div_source=None, vshape=()) -> np.ndarray:
    """int s beta - int S.grad(beta) with lumped source quadrature."""
    out = np.zeros((grid.n_nodes,) + tuple(vshape))
    if source is not None:
        s = values_of(source, grid)
        if s.ndim == 0:
            s = np.full((grid.n_nodes,) + tuple(vshape), float(s))
        if s.shape[0] == grid.n_cells and (not isinstance(source, Field) or source.location == "cell"):
            contrib = (grid.tri_area / 3.0).reshape((-1,) + (1,) * (s.ndim - 1)) * s
            np.add.at(out, grid.triangles[:, 0], contrib)
            np.add.at(out, grid.triangles[:, 1], contrib)
            np.add.at(out, grid.triangles[:, 2], contrib)
        else:
            out = out + grid.node_area.reshape((-1,) + (1,) * (s.ndim - 1)) * s
    if div_source is not None:
        S = _as_cells(grid, div_source)
        gx, gy = grid.cell_grad_ops
        a = grid.tri_area.reshape((-1,) + (1,) * (S.ndim - 2))
        sx = (a * S[:, 0]).reshape(grid.n_cells, -1)
        sy = (a * S[:, 1]).reshape(grid.n_cells, -1)
        term = np.asarray(gx.T @ sx + gy.T @ sy).reshape((grid.n_nodes,) + S.shape[2:])
        out = out - term
    return out


def _check_weight(w_cell, lower, name):
    if np.any(~np.isfinite(w_cell)):
        raise ValueError(f"{name} has non-finite values")
    if w_cell.min() < lower:
        raise ValueError(f"{name} must be >= {lower}, min is {w_cell.min():.6g}")


# ---------------------------------------------------------------------------
# Dirichlet


class DirichletSolver:
    """Reusable factorization of -div(w grad .) with Dirichlet data."""

    def __init__(self, grid: Grid, w, method="direct", lower=1.0 - 1e-12, tol=RESIDUAL_TOL):
        self.grid = grid
        self.w_cell = triangle_weight(grid, w)
        _check_weight(self.w_cell, lower, "weight f")
        self.K = stiffness(grid, self.w_cell)
        self.free = np.flatnonzero(grid.interior)
        self.fixed = np.flatnonzero(grid.boundary)
        self.K_ff = self.K[self.free][:, self.free]
        self.K_fb = self.K[self.free][:, self.fixed]
        self.system = LinearSystem(self.K_ff, method=method, tol=tol)

    def solve_loads(self, b, g=None):
        """Solve with assembled loads ``b`` (N, *s); boundary values ``g``."""
        b = np.asarray(b, dtype=float)
        vshape = b.shape[1:]
        phi = np.zeros_like(b)
        rhs = b[self.free].reshape(len(self.free), -1)
        if g is not None:
            gv = values_of(g, self.grid)
            gv = np.broadcast_to(gv, b.shape) if gv.ndim <= len(vshape) else gv
            gb = np.asarray(gv)[self.fixed].reshape(len(self.fixed), -1)
            phi[self.fixed] = gb.reshape((len(self.fixed),) + vshape)
            rhs = rhs - np.asarray(self.K_fb @ gb)
        x, info = self.system.solve(rhs)
        phi[self.free] = x.reshape((len(self.free),) + vshape)
        return phi, info

    def solve(self, source=None, div_source=None, g=None, vshape=None):
        if vshape is None:
            vshape = _infer_shape(self.grid, source, div_source, g)
        b = load_vector(self.grid, source, div_source, vshape)
        return self.solve_loads(b, g)


def _infer_shape(grid, source, div_source, g):
    if div_source is not None:
        return values_of(div_source, grid).shape[2:]
    for x in (source, g):
        if x is not None:
            v = values_of(x, grid)
            if v.ndim > 0:
                return v.shape[1:]
    return ()


def solve_dirichlet(f, source=None, div_source=None, g=None, *, grid: Grid | None = None,
                    method="direct", return_info=False):
    """Solve -div(f grad phi) = source + div(div_source) with phi = g on the boundary.

    Any of ``source``, ``div_source`` and ``g`` may be omitted (zero).
    Node or cell fields are accepted for the data; ``div_source`` has its
    vector slot on axis 1.
    """
    grid = _grid_of(grid, f, source, div_source, g)
    solver = DirichletSolver(grid, f, method=method)
    phi, info = solver.solve(source, div_source, g)
    out = Field(grid, phi)
    return (out, info) if return_info else out


def _grid_of(grid, *items):
    if grid is not None:
        return grid
    for x in items:
        if isinstance(x, Field):
            return x.grid
    raise ValueError("pass grid= when no argument is a Field")


# ---------------------------------------------------------------------------
# Neumann


class NeumannSolver:
    """Reusable pinned factorization of -div(w grad .) with natural boundary."""

    def __init__(self, grid: Grid, w, method="direct", lower=1e-12, tol=RESIDUAL_TOL):
        self.grid = grid
        self.w_cell = triangle_weight(grid, w)
        _check_weight(self.w_cell, lower, "weight w")
        self.K = stiffness(grid, self.w_cell)
        # pin node 0; the constant null space is restored by the mean shift
        K = self.K.tolil()
        K[0, :] = 0.0
        K[:, 0] = 0.0
        K[0, 0] = 1.0
        self._pinned = K.tocsr()
        self.system = LinearSystem(self._pinned, method=method, tol=tol)
        self.tol = tol

    def solve_loads(self, b, scale=None):
        """Solve with assembled loads; ``scale`` sizes the compatibility defect."""
        grid = self.grid
        b = np.asarray(b, dtype=float)
        flat = b.reshape(b.shape[0], -1).copy()
        area = grid.node_area
        total = flat.sum(axis=0)
        if scale is None:
            scale = np.abs(flat).sum(axis=0)
        scale = np.maximum(np.broadcast_to(scale, total.shape), 1e-300)
        defect = float(np.max(np.abs(total) / scale))
        flat -= np.outer(area / area.sum(), total)
        rhs = flat.copy()
        rhs[0] = 0.0
        x, info = self.system.solve(rhs)
        x -= (area @ x) / area.sum()
        # residual of the singular system on the compatible load
        bn = np.linalg.norm(flat)
        res = float(np.linalg.norm(self.K @ x - flat) / bn) if bn > 0 else 0.0
        if res > max(self.tol, 1e3 * np.finfo(float).eps):
            raise SolverError(f"Neumann residual {res:.3e}", res)
        info.residual = res
        info.compat_defect = defect
        info.flagged = defect > COMPAT_FLAG
        if info.flagged:
            log.warning("Neumann compatibility defect %.3e projected out", defect)
        return x.reshape(b.shape), info

    def solve(self, div_source=None, g_flux=None, vshape=None):
        grid = self.grid
        if vshape is None:
            vshape = _infer_shape(grid, None, div_source, g_flux)
        # sign: the Neumann weak form carries +int S.grad(beta)
        b = -load_vector(grid, None, div_source, vshape)
        k = int(np.prod(vshape, dtype=int))
        scale = np.zeros(k)
        if div_source is not None:
            S = _as_cells(grid, div_source).reshape(grid.n_cells, 2, k)
            scale += grid.tri_area @ np.sqrt((S ** 2).sum(axis=1))
        if g_flux is not None:
            bl = self._boundary_load(div_source, g_flux, vshape)
            b = b + bl
            scale += np.abs(bl.reshape(grid.n_nodes, k)).sum(axis=0)
        return self.solve_loads(b, scale)

    def _boundary_load(self, div_source, g_flux, vshape):
        """oint (w g - S.nu) beta with edge trapezoid rule."""
        grid = self.grid
        e = grid.boundary_edges
        nrm, length = grid.boundary_edge_normals
        edge_tri = _edge_triangles(grid)
        w_e = self.w_cell[edge_tri]
        g = values_of(g_flux, grid)
        g = np.broadcast_to(g, (grid.n_nodes,) + tuple(vshape)) if g.ndim <= len(vshape) else g
        wshape = (-1,) + (1,) * len(vshape)
        qa = w_e.reshape(wshape) * g[e[:, 0]]
        qb = w_e.reshape(wshape) * g[e[:, 1]]
        if div_source is not None:
            S = values_of(div_source, grid)
            if S.shape[0] == grid.n_cells and not (isinstance(div_source, Field) and div_source.location == "node"):
                sn = np.einsum("kd,kd...->k...", nrm, S[edge_tri])
                qa = qa - sn
                qb = qb - sn
            else:
                qa = qa - np.einsum("kd,kd...->k...", nrm, S[e[:, 0]])
                qb = qb - np.einsum("kd,kd...->k...", nrm, S[e[:, 1]])
        out = np.zeros((grid.n_nodes,) + tuple(vshape))
        half = (0.5 * length).reshape(wshape)
        np.add.at(out, e[:, 0], half * qa)
        np.add.at(out, e[:, 1], half * qb)
        return out


def _edge_triangles(grid):
    cache = getattr(grid, "_edge_tri_cache", None)
    if cache is not None:
        return cache
    t = grid.triangles
    e = grid.boundary_edges
    lookup = {}
    for k, tri in enumerate(t):
        for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
            lookup[(a, b)] = k
    out = np.array([lookup[(a, b)] for a, b in e], dtype=np.int64)
    grid._edge_tri_cache = out
    return out


def solve_neumann(w, div_source=None, g_flux=None, *, grid: Grid | None = None,
                  method="direct", return_info=False):
    """Solve div(w grad B) = div(div_source) with d_nu B = g_flux; mean-zero result.

    ``g_flux=None`` selects the natural condition ``w d_nu B = S.nu``, under
    which the boundary terms drop out of the weak form.
    """
    grid = _grid_of(grid, w, div_source, g_flux)
    solver = NeumannSolver(grid, w, method=method)
    B, info = solver.solve(div_source, g_flux)
    out = Field(grid, B)
    return (out, info) if return_info else out


# ---------------------------------------------------------------------------
# stream functions and Hodge splitting


def _cell_vector(grid, V):
    v = values_of(V, grid)
    if v.shape[0] == grid.n_nodes and not (isinstance(V, Field) and V.location == "cell"):
        return node_to_cell(grid, v)
    return v


def recover_stream(V, weight=None, *, grid: Grid | None = None, solver: NeumannSolver | None = None):
    """Least-squares stream function: argmin int w |perp_grad(xi) - V|^2.

    Returns ``(xi, defect)`` with ``defect = sqrt(int w |perp_grad(xi) - V|^2)``,
    the weighted distance of V from perp-gradients.  ``xi`` is mean-zero.
    """
    grid = _grid_of(grid, V, weight)
    Vc = _cell_vector(grid, V)
    w_cell = np.ones(grid.n_cells) if weight is None else triangle_weight(grid, weight)
    if solver is None:
        solver = NeumannSolver(grid, w_cell)
    # perp_grad(xi) = V  <=>  grad(xi) = -perp(V)
    target = -perp(Vc)
    ws = w_cell.reshape((-1,) + (1,) * (target.ndim - 1))
    xi, info = solver.solve(ws * target, None)
    r = perp(cell_grad(grid, xi)) - Vc
    defect = float(np.sqrt(np.tensordot(grid.tri_area * w_cell, (r ** 2).reshape(grid.n_cells, -1).sum(axis=1), axes=1)))
    return Field(grid, xi), defect


@dataclass
class HodgeResult:
    zeta: Field
    eta: Field
    defect: float
    orthogonality: float


def hodge_decompose(V, f, *, grid: Grid | None = None) -> HodgeResult:
    """Split V = grad(zeta) + perp_grad(eta) / f with zeta = 0 on the boundary."""
    grid = _grid_of(grid, V, f)
    Vc = _cell_vector(grid, V)
    f_cell = triangle_weight(grid, f)
    fs = f_cell.reshape((-1,) + (1,) * (Vc.ndim - 1))
    dsolver = DirichletSolver(grid, f_cell)
    zeta, _ = dsolver.solve(div_source=-fs * Vc)
    gz = cell_grad(grid, zeta)
    rest = Vc - gz
    eta, defect = recover_stream(fs * rest, 1.0 / f_cell, grid=grid)
    flat = lambda a: a.reshape(grid.n_cells, -1).sum(axis=1)
    ortho = np.tensordot(grid.tri_area * f_cell, flat(gz * rest), axes=1)
    scale = np.tensordot(grid.tri_area * f_cell, flat(Vc * Vc), axes=1)
    rel = float(abs(ortho) / scale) if scale > 0 else 0.0
    return HodgeResult(Field(grid, zeta), eta, defect, rel)
