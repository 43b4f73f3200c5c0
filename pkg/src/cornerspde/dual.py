"""Dual singular functions and their frequency-dependent resolvent images.

``v0 = (psi0 - phi0) / pi`` where ``phi0`` is the discrete H^1_0 solution
of ``Delta phi0 = Delta psi0``. Pairing ``-Delta S`` with ``v0`` gives one,
so ``<g, v(z)>`` extracts the coefficient of ``e^{-r sqrt z} S`` in the
solution of ``-Delta w + z w = g``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .fem import FemSystem
from .geometry import (
    PolygonalDomain,
    dual_seed_eval,
    laplacian_of_dual_seed,
    laplacian_of_singular,
    singular_eval,
)
from .quadrature import QuadratureRule, mesh_quadrature


class CornerQuadrature:
    """Mesh quadrature graded at the re-entrant corners, built once per system."""

    def __init__(self, system: FemSystem, domain: PolygonalDomain, n: int = 3, levels: int = 14):
        self.system = system
        self.domain = domain
        self.rule: QuadratureRule = mesh_quadrature(system.mesh, domain, n=n, levels=levels)

    def load(self, values) -> np.ndarray:
        """Interior-node load vector of a field sampled at the quadrature points."""
        return self.system.restrict(self.rule.load(values))

    def integrate(self, values):
        return self.rule.integrate(values)

    def fe_values(self, dofs) -> np.ndarray:
        """P1 function given by interior dofs, sampled at the quadrature points."""
        return self.rule.evaluate(self.system.to_nodal(dofs))


@dataclass
class DualFunction:
    """v0 for one corner in nodal form, load form, and the correction phi0."""

    domain: PolygonalDomain
    j: int
    system: FemSystem
    quad: CornerQuadrature
    phi0: np.ndarray
    load: np.ndarray  # int v0 phi_i
    nodal: np.ndarray  # nodal values of v0 (singular node excluded: boundary)

    def pair(self, values) -> complex:
        """int f v0 for an analytic field f sampled at the quadrature points."""
        pts = self.quad.rule.points
        psi = dual_seed_eval(self.domain, self.j, pts, check=False)
        part = self.quad.integrate(values * psi)
        return (part - self.quad.load(values) @ self.phi0) / np.pi

    @cached_property
    def l2_norm(self) -> float:
        pts = self.quad.rule.points
        psi = dual_seed_eval(self.domain, self.j, pts, check=False)
        v = (psi - self.quad.fe_values(self.phi0)) / np.pi
        return float(np.sqrt(self.quad.integrate(v * v)))


def dual_base(system: FemSystem, domain: PolygonalDomain, j: int, quad: CornerQuadrature | None = None) -> DualFunction:
    """v0 for corner j."""
    quad = CornerQuadrature(system, domain) if quad is None else quad
    pts = quad.rule.points
    lap_psi = laplacian_of_dual_seed(domain, j, pts, check=False)
    phi0 = system.solve_shifted(0.0, -quad.load(lap_psi))
    psi = dual_seed_eval(domain, j, pts, check=False)
    load = (quad.load(psi) - system.M @ phi0) / np.pi
    nodal_psi = dual_seed_eval(domain, j, system.mesh.nodes[system.dofs], check=False)
    nodal = (nodal_psi - phi0) / np.pi
    return DualFunction(domain, j, system, quad, phi0, load, nodal)


@dataclass
class ShiftedDual:
    """v(z) = v0 - z (z - Delta)^{-1} v0 in nodal and load form."""

    z: complex
    nodal: np.ndarray
    load: np.ndarray
    correction: np.ndarray  # (z M + K)^{-1} load(v0)


def dual_function(dual: DualFunction, z: complex) -> ShiftedDual:
    if z == 0:
        zero = np.zeros(dual.system.n_dofs)
        return ShiftedDual(0j, dual.nodal.astype(complex), dual.load.astype(complex), zero)
    w = dual.system.solve_shifted(z, dual.load)
    return ShiftedDual(complex(z), dual.nodal - z * w, dual.load - z * (dual.system.M @ w), w)


@dataclass
class ManufacturedResult:
    z: complex
    coefficient: complex
    regular_l2: float
    solution_l2: float


def manufactured_recovery(dual: DualFunction, z: complex) -> ManufacturedResult:
    """Solve -Delta w + z w = g for g built from w = e^{-r sqrt z} S; recover c and ||U_R||.

    The exact coefficient is one and the exact regular part vanishes.
    """
    system, domain, j, quad = dual.system, dual.domain, dual.j, dual.quad
    pts = quad.rule.points
    exact = _damped_singular(domain, j, pts, z)
    g = -laplacian_of_singular(domain, j, pts, None if z == 0 else z, check=False) + z * exact
    g_load = quad.load(g)
    w = system.solve_shifted(z, g_load)
    c = dual.pair(g) - z * (w @ dual.load)
    interp = _damped_singular(domain, j, system.mesh.nodes[system.dofs], z)
    residual = w - c * interp
    m = system.M
    return ManufacturedResult(
        complex(z),
        complex(c),
        float(np.sqrt(np.real(np.vdot(residual, m @ residual)))),
        float(np.sqrt(np.real(np.vdot(w, m @ w)))),
    )


def _damped_singular(domain, j, pts, z):
    r = np.hypot(*(pts - domain.frame(j).origin).T)
    s = singular_eval(domain, j, pts, check=False)
    if z == 0:
        return s.astype(complex)
    return np.exp(-np.sqrt(complex(z)) * r) * s
