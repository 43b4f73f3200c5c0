"""Trace-class Wiener noise in the discrete eigenbasis and coefficient models.

The stepper works on eigen-coefficients. For the additive model the noise
modes coincide with the solution modes, so ``G`` maps an increment vector
(already carrying the covariance, ``dW_k ~ N(0, q_k dt)``) onto itself.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

VARIANTS = ("additive", "nemytskii_smooth", "finite_dim", "example2")


@dataclass(frozen=True)
class ModalBasis:
    """Eigenvalues and M-orthonormal eigenvectors of the discrete Dirichlet Laplacian."""

    eigenvalues: np.ndarray  # (m,)
    eigenvectors: np.ndarray  # (n_dofs, m)
    mass: object  # sparse M
    points: np.ndarray  # (n_dofs, 2) interior node coordinates

    @classmethod
    def from_system(cls, system, m: int):
        from .fem import eigenpairs

        lam, vec = eigenpairs(system, m)
        return cls(lam, vec, system.M, system.mesh.nodes[system.dofs])

    @property
    def size(self) -> int:
        return len(self.eigenvalues)

    def project(self, dof_vectors) -> np.ndarray:
        """Mode coefficients of dof vectors; the last axis of the result is the mode."""
        v = np.asarray(dof_vectors)
        return (self.eigenvectors.T @ (self.mass @ v)).T

    def synthesize(self, coefficients) -> np.ndarray:
        """Dof vectors (as rows) from mode coefficients."""
        return np.asarray(coefficients) @ self.eigenvectors.T


@dataclass(frozen=True)
class CovarianceSpec:
    """Diagonal covariance q_k on the first ``m`` noise modes."""

    q: np.ndarray
    dense_range: bool = False

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float)
        if q.ndim != 1 or len(q) == 0:
            raise ValueError("covariance needs a nonempty vector of mode variances")
        if np.any(q < 0) or not np.all(np.isfinite(q)):
            raise ValueError("mode variances must be finite and nonnegative")
        if self.dense_range and np.any(q == 0):
            raise ValueError("dense range requires every mode variance to be positive")
        object.__setattr__(self, "q", q)

    @classmethod
    def power_law(cls, m: int = 100, q0: float = 1.0, rho: float = 2.2):
        k = np.arange(1, m + 1, dtype=float)
        return cls(q0 * k**-rho, dense_range=q0 > 0)

    @property
    def m(self) -> int:
        return len(self.q)

    @property
    def trace(self) -> float:
        return float(self.q.sum())

    def scaled(self, factor: float) -> "CovarianceSpec":
        """Covariance of the noise multiplied by ``factor``."""
        return CovarianceSpec(self.q * factor**2, self.dense_range and factor != 0)


def standard_normal_row(seed: int, path: int, step: int, size: int) -> np.ndarray:
    """Counter-based N(0, 1) draws for one (seed, path, step) triple."""
    bitgen = np.random.Philox(key=int(seed), counter=[0, int(step), int(path), 0])
    return np.random.Generator(bitgen).standard_normal(size)


def sample_increments(spec: CovarianceSpec, time_grid, seed: int, path: int = 0) -> np.ndarray:
    """Increments dW[n, k] ~ N(0, q_k dt_n), reproducible from (seed, path, n).

    Each step owns its own Philox counter block, so any row can be
    regenerated independently of the others.
    """
    t = np.asarray(time_grid, dtype=float)
    dt = np.diff(t)
    if len(dt) == 0 or np.any(dt <= 0):
        raise ValueError("time grid must be strictly increasing")
    scale = np.sqrt(spec.q)
    out = np.empty((len(dt), spec.m))
    for n in range(len(dt)):
        out[n] = standard_normal_row(seed, path, n, spec.m) * (scale * np.sqrt(dt[n]))
    return out


@dataclass
class CoefficientModel:
    """Drift F and diffusion G of the equation.

    variant
        ``additive``: F(u) = f(x, u) (zero by default), G = identity on noise modes.
        ``nemytskii_smooth``: F(u)(x) = f(x, u(x)), (G(u) w)(x) = g(x, u(x)) w(x).
        ``finite_dim``: (G(u) w)(x) = sum_i w_i g_i(x, u(x)) with a d-dimensional W.
        ``example2``: F = 0, G(u) w = w (u0 + g(||u||) v0) with g(s) = max(0, s - c).
    """

    variant: str
    f: Callable | None = None
    g: Callable | None = None
    g_list: tuple = ()
    lipschitz_f: float = 0.0
    lipschitz_g: float = 0.0
    u0_field: np.ndarray | None = None  # example2, dof vector
    v0_field: np.ndarray | None = None  # example2, dof vector
    v0_load: np.ndarray | None = None  # example2, int v0 phi_i
    threshold: float = 0.0
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown coefficient variant {self.variant!r}; expected one of {VARIANTS}")
        if self.variant == "example2" and (self.u0_field is None or self.v0_field is None):
            raise ValueError("example2 needs the u0 and v0 fields")

    @property
    def noise_dim(self) -> int | None:
        """Number of noise channels when fixed by the model (None: follows the covariance)."""
        if self.variant == "example2":
            return 1
        if self.variant == "finite_dim":
            return len(self.g_list)
        return None

    @property
    def has_drift(self) -> bool:
        return self.f is not None

    def activation(self, norm):
        """g(||u||) of the example2 model."""
        return np.maximum(0.0, np.asarray(norm) - self.threshold)


def apply_F(model: CoefficientModel, u, points) -> np.ndarray:
    """Nodal evaluation of F(u) at interior node coordinates ``points``."""
    u = np.asarray(u)
    if u.shape[-1] != len(points):
        raise ValueError("dof vector does not match the node set")
    if model.f is None:
        return np.zeros_like(u, dtype=float)
    return model.f(points, u)


def apply_G(model: CoefficientModel, u, w, points=None, basis: ModalBasis | None = None) -> np.ndarray:
    """Dof vector G(u) w.

    For the additive and Nemytskii variants ``w`` is a vector of noise-mode
    increments and needs ``basis``; for example2 it is a scalar or length-1
    vector; for finite_dim it has one entry per channel.
    """
    u = np.asarray(u)
    w = np.atleast_1d(np.asarray(w, dtype=float))
    if model.variant == "additive":
        return basis.eigenvectors[:, : len(w)] @ w
    if model.variant == "nemytskii_smooth":
        noise = basis.eigenvectors[:, : len(w)] @ w
        return model.g(points, u) * noise
    if model.variant == "finite_dim":
        if len(w) != len(model.g_list):
            raise ValueError("finite-dimensional noise has the wrong number of channels")
        return sum(wi * gi(points, u) for wi, gi in zip(w, model.g_list))
    # example2
    norm = np.sqrt(max(float(u @ (basis.mass @ u)), 0.0)) if basis is not None else np.linalg.norm(u)
    return w[0] * (model.u0_field + model.activation(norm) * model.v0_field)


def hilbert_schmidt_norm(model: CoefficientModel, spec: CovarianceSpec, u_modes=None, basis=None) -> float:
    """||G(u) Q^{1/2}||_HS, closed form for the shipped variants."""
    if model.variant == "additive":
        return float(np.sqrt(spec.trace))
    if model.variant == "example2":
        norm = float(np.linalg.norm(u_modes))
        field_ = model.u0_field + model.activation(norm) * model.v0_field
        l2 = float(np.sqrt(field_ @ (basis.mass @ field_)))
        return l2 * float(np.sqrt(spec.q[0]))
    if model.variant == "nemytskii_smooth":
        u = basis.synthesize(u_modes)
        gu = model.g(basis.points, u)
        cols = gu[:, None] * basis.eigenvectors[:, : spec.m] * np.sqrt(spec.q)
        return float(np.sqrt(np.sum(cols * (basis.mass @ cols))))
    u = basis.synthesize(u_modes)
    total = 0.0
    for qi, gi in zip(spec.q, model.g_list):
        col = gi(basis.points, u)
        total += qi * float(col @ (basis.mass @ col))
    return float(np.sqrt(total))
