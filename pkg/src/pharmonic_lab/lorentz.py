"""Decreasing rearrangements and the L^{2,1}, L^{2,infinity}, L^p norms built from them.

Each sample carries a measure (its dual-cell area for node fields, its
triangle area for cell fields), so the discrete rearrangement is the exact
rearrangement of the piecewise-constant function and equimeasurability holds
without quadrature error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grid import Field, Grid, node_to_cell, values_of


@dataclass(frozen=True)
class Rearrangement:
    """g* = values[k] on (thresholds[k-1], thresholds[k]], with thresholds[-1] = 0."""

    thresholds: np.ndarray
    values: np.ndarray

    @property
    def total_measure(self) -> float:
        return float(self.thresholds[-1]) if self.thresholds.size else 0.0

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.thresholds, prepend=0.0)

    def __call__(self, t) -> np.ndarray:
        """Evaluate g*(t) (right-continuous step function, zero past the total measure)."""
        t = np.asarray(t, dtype=float)
        k = np.searchsorted(self.thresholds, t, side="right")
        vals = np.append(self.values, 0.0)
        return vals[np.minimum(k, len(self.values))]

    def level_measure(self, lam: float) -> float:
        """|{g* > lam}|."""
        return float(self.widths[self.values > lam].sum())


def _magnitude(values: np.ndarray, n: int) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    if v.ndim == 1:
        return np.abs(v)
    return np.sqrt((v.reshape(n, -1) ** 2).sum(axis=1))


def _weights_of(g, grid: Grid | None, weights):
    if weights is not None:
        return np.asarray(weights, dtype=float)
    if isinstance(g, Field):
        return g.grid.tri_area if g.location == "cell" else g.grid.node_area
    if grid is None:
        raise ValueError("weights or a grid are required for plain arrays")
    n = len(np.asarray(g))
    if n == grid.n_cells:
        return grid.tri_area
    return grid.node_area


def rearrange(g, weights=None, *, grid: Grid | None = None, mask=None) -> Rearrangement:
    """Decreasing rearrangement of |g| (Euclidean norm over value axes).

    ``mask`` restricts to a sub-region (boolean over samples).
    """
    w = _weights_of(g, grid, weights)
    v = values_of(g)
    mag = _magnitude(v, len(w))
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        mag, w = mag[mask], w[mask]
    order = np.argsort(-mag, kind="stable")
    return Rearrangement(np.cumsum(w[order]), mag[order])


def l21(r: Rearrangement) -> float:
    """int_0^|D| g*(t) t^(-1/2) dt, exact on each step."""
    t = r.thresholds
    prev = np.concatenate([[0.0], t[:-1]])
    return float(np.sum(r.values * 2.0 * (np.sqrt(t) - np.sqrt(prev))))


def l2inf(r: Rearrangement) -> float:
    """sup_t t^(1/2) g*(t); attained at the right end of a step."""
    if not r.values.size:
        return 0.0
    return float(np.max(np.sqrt(r.thresholds) * r.values))


def lp(r: Rearrangement, p: float) -> float:
    if p <= 0:
        raise ValueError("p must be positive")
    return float(np.sum(r.values ** p * r.widths) ** (1.0 / p))


def lorentz_norm(g, kind: str = "L21", p: float | None = None, *, weights=None,
                 grid: Grid | None = None, mask=None) -> float:
    """``kind`` is one of L21, L2inf, Lp (the last needs ``p``)."""
    r = g if isinstance(g, Rearrangement) else rearrange(g, weights, grid=grid, mask=mask)
    if kind == "L21":
        return l21(r)
    if kind == "L2inf":
        return l2inf(r)
    if kind == "Lp":
        if p is None:
            raise ValueError("Lp needs an exponent")
        return lp(r, p)
    raise ValueError(f"unknown norm kind {kind!r}")


def holder_lorentz_constant(p: float, area: float = math.pi) -> float:
    """|D|^((p-2)/2p) (2(p-1)/(p-2))^((p-1)/p), the factor in ||g||_{2,1} <= c ||g||_p."""
    if p <= 2.0:
        raise ValueError("the Holder-Lorentz bound needs p > 2")
    return area ** ((p - 2.0) / (2.0 * p)) * (2.0 * (p - 1.0) / (p - 2.0)) ** ((p - 1.0) / p)


@dataclass(frozen=True)
class HolderLorentzCheck:
    lhs: float
    rhs: float
    ratio: float
    p: float


def holder_lorentz_check(g, p: float, *, weights=None, grid: Grid | None = None,
                         area: float = math.pi) -> HolderLorentzCheck:
    """Compare ||g||_{L^{2,1}} with the explicit multiple of ||g||_{L^p} on a domain of measure ``area``."""
    c = holder_lorentz_constant(p, area)
    r = g if isinstance(g, Rearrangement) else rearrange(g, weights, grid=grid)
    lhs = l21(r)
    rhs = c * lp(r, p)
    return HolderLorentzCheck(lhs, rhs, lhs / rhs if rhs > 0 else 0.0, p)


def indicator_ratio_exact(p: float, radius: float = 0.5) -> float:
    """Closed-form lhs/rhs for the indicator of B_radius in the unit disc."""
    m = math.pi * radius ** 2
    lhs = 2.0 * math.sqrt(m)
    return lhs / (holder_lorentz_constant(p) * m ** (1.0 / p))


@dataclass(frozen=True)
class PairingCheck:
    lhs: float
    l21: float
    weight_l2inf: float
    ratio: float


def pairing_check(g: Field, x0=(0.0, 0.0)) -> PairingCheck:
    """int |g| / |x - x0| against ||g||_{2,1} ||1/|x - x0|||_{2,inf} on triangle centroids.

    Both factors are step functions on the same cells, so ratio <= 1 exactly.
    """
    grid = g.grid
    v = np.asarray(values_of(g), dtype=float)
    if g.location != "cell":
        v = node_to_cell(grid, v)
    mag = _magnitude(v, grid.n_cells)
    w = 1.0 / np.linalg.norm(grid.centroids - np.asarray(x0, dtype=float), axis=1)
    lhs = float(grid.tri_area @ (mag * w))
    a = l21(rearrange(mag, grid.tri_area))
    b = l2inf(rearrange(w, grid.tri_area))
    return PairingCheck(lhs, a, b, lhs / (a * b) if a * b > 0 else 0.0)
