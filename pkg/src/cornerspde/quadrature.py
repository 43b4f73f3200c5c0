"""Quadrature on triangulations and on corner sectors.

Integrands here are products of P1 functions with fields that behave like
``r^{+-alpha}`` at a corner, so triangles touching a re-entrant vertex use a
collapsed (Duffy) rule with geometrically graded radial panels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from matplotlib.tri import Triangulation

from .geometry import CornerFrame, PolygonalDomain
from .mesh import Mesh


def gauss01(n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def graded_rule(n: int, levels: int, ratio: float = 0.15, start: float = 0.0, stop: float = 1.0):
    """Composite Gauss rule on [start, stop] with panels shrinking geometrically towards ``start``."""
    edges = start + (stop - start) * np.concatenate([[0.0], ratio ** np.arange(levels, -1, -1)])
    x, w = gauss01(n)
    lo, hi = edges[:-1, None], edges[1:, None]
    return (lo + (hi - lo) * x).ravel(), ((hi - lo) * w).ravel()


def uniform_rule(n: int, panels: int, start: float, stop: float):
    edges = np.linspace(start, stop, panels + 1)
    x, w = gauss01(n)
    lo, hi = edges[:-1, None], edges[1:, None]
    return (lo + (hi - lo) * x).ravel(), ((hi - lo) * w).ravel()


@dataclass(frozen=True)
class QuadratureRule:
    """Points, weights and the sparse matrix of P1 nodal basis values at the points."""

    points: np.ndarray
    weights: np.ndarray
    basis: sp.csr_matrix  # (n_points, n_nodes)

    def load(self, values) -> np.ndarray:
        """Nodal load vector  int f phi_i  for samples ``values`` of f at the points."""
        return self.basis.T @ (self.weights * values) if np.ndim(values) == 1 else self.basis.T @ (
            self.weights[:, None] * values
        )

    def integrate(self, values):
        return np.tensordot(self.weights, values, axes=(0, 0))

    def evaluate(self, nodal) -> np.ndarray:
        return self.basis @ nodal


def mesh_quadrature(mesh: Mesh, domain: PolygonalDomain | None = None, n: int = 3, levels: int = 14) -> QuadratureRule:
    """Collapsed Gauss rule on every triangle, graded at re-entrant vertices."""
    tris = mesh.triangles.copy()
    corner_nodes = []
    if domain is not None:
        for j in domain.reentrant:
            d = np.hypot(*(mesh.nodes - domain.frame(j).origin).T)
            corner_nodes.append(int(np.argmin(d)))
    special = np.zeros(len(tris), dtype=bool)
    for c in corner_nodes:
        hit = np.any(tris == c, axis=1)
        special |= hit
        # rotate so the corner vertex comes first
        for k in np.flatnonzero(hit):
            t = tris[k]
            tris[k] = np.roll(t, -int(np.flatnonzero(t == c)[0]))

    chunks = []
    gv, wv = gauss01(n)
    gu, wu = gauss01(n)
    chunks.append(_collapsed(mesh.nodes, tris[~special], gu, wu, gv, wv))
    if special.any():
        su, swu = graded_rule(n + 2, levels)
        sv, swv = gauss01(n + 2)
        chunks.append(_collapsed(mesh.nodes, tris[special], su, swu, sv, swv))
    pts = np.concatenate([c[0] for c in chunks])
    wts = np.concatenate([c[1] for c in chunks])
    cols = np.concatenate([c[2] for c in chunks])
    vals = np.concatenate([c[3] for c in chunks])
    rows = np.repeat(np.arange(len(pts)), 3)
    basis = sp.csr_matrix((vals.ravel(), (rows, cols.ravel())), shape=(len(pts), mesh.n_nodes))
    return QuadratureRule(pts, wts, basis)


def _collapsed(nodes, tris, u, wu, v, wv):
    a, b, c = (nodes[tris[:, i]] for i in range(3))
    area = 0.5 * np.abs((b - a)[:, 0] * (c - a)[:, 1] - (b - a)[:, 1] * (c - a)[:, 0])
    U, V = np.meshgrid(u, v, indexing="ij")
    W = np.outer(wu, wv) * U  # Duffy Jacobian factor
    U, V, W = U.ravel(), V.ravel(), W.ravel()
    lam = np.stack([1.0 - U, U * (1.0 - V), U * V], axis=1)  # barycentric of (a, b, c)
    pts = (
        lam[None, :, 0, None] * a[:, None, :]
        + lam[None, :, 1, None] * b[:, None, :]
        + lam[None, :, 2, None] * c[:, None, :]
    )
    wts = 2.0 * area[:, None] * W[None, :]
    cols = np.broadcast_to(tris[:, None, :], (len(tris), len(U), 3))
    vals = np.broadcast_to(lam[None], (len(tris), len(U), 3))
    return pts.reshape(-1, 2), wts.ravel(), cols.reshape(-1, 3), vals.reshape(-1, 3)


def p1_evaluation_matrix(mesh: Mesh, points) -> sp.csr_matrix:
    """Sparse matrix mapping nodal values to P1 interpolant values at ``points``."""
    points = np.asarray(points, dtype=float)
    tri = Triangulation(mesh.nodes[:, 0], mesh.nodes[:, 1], mesh.triangles)
    owner = tri.get_trifinder()(points[:, 0], points[:, 1])
    if np.any(owner < 0):
        raise ValueError("some evaluation points lie outside the mesh")
    t = mesh.triangles[owner]
    x = mesh.nodes[t]
    d1, d2 = x[:, 1] - x[:, 0], x[:, 2] - x[:, 0]
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    p = points - x[:, 0]
    l1 = (p[:, 0] * d2[:, 1] - p[:, 1] * d2[:, 0]) / det
    l2 = (d1[:, 0] * p[:, 1] - d1[:, 1] * p[:, 0]) / det
    vals = np.stack([1.0 - l1 - l2, l1, l2], axis=1)
    rows = np.repeat(np.arange(len(points)), 3)
    return sp.csr_matrix((vals.ravel(), (rows, t.ravel())), shape=(len(points), mesh.n_nodes))


@dataclass(frozen=True)
class PolarRule:
    """Product rule on the sector {r < r_max, 0 < theta < gamma} of one corner."""

    frame: CornerFrame
    r: np.ndarray
    theta: np.ndarray
    weights: np.ndarray  # include the polar Jacobian r

    @property
    def points(self) -> np.ndarray:
        phi = self.theta + self.frame.direction
        return np.stack(
            [self.frame.origin[0] + self.r * np.cos(phi), self.frame.origin[1] + self.r * np.sin(phi)],
            axis=1,
        )


def polar_rule(
    frame: CornerFrame,
    r_max: float | None = None,
    n_gauss: int = 4,
    levels: int = 16,
    ratio: float = 0.5,
    outer_panels: int = 6,
    angular_panels: int = 24,
) -> PolarRule:
    """Graded radial rule on [0, r0], uniform panels on the cutoff annulus.

    With ``ratio = 0.5`` and 16 levels the innermost panel has width about
    1.5e-5 r0, enough for kernels decaying like e^{-r sqrt|z|} up to
    |z| of order 1e6.
    """
    r_max = frame.r1 if r_max is None else r_max
    inner = min(frame.r0, r_max)
    r_in, w_in = graded_rule(n_gauss, levels, ratio, 0.0, inner)
    radii, rw = [r_in], [w_in]
    if r_max > inner:
        r_out, w_out = uniform_rule(n_gauss, outer_panels, inner, r_max)
        radii.append(r_out)
        rw.append(w_out)
    r = np.concatenate(radii)
    wr = np.concatenate(rw)
    th, wt = uniform_rule(n_gauss, angular_panels, 0.0, frame.angle)
    R, TH = np.meshgrid(r, th, indexing="ij")
    W = np.outer(wr * r, wt)
    return PolarRule(frame, R.ravel(), TH.ravel(), W.ravel())
