"""P1 finite elements for the Dirichlet Laplacian on a triangulation."""

from __future__ import annotations

import threading

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import Mesh


class FemSystem:
    """Dirichlet-reduced stiffness and mass matrices with solver caches.

    Dof vectors live on interior nodes; :meth:`to_nodal` pads them with the
    zero boundary values.
    """

    def __init__(self, mesh: Mesh, K: sp.csc_matrix, M: sp.csc_matrix, M_full: sp.csr_matrix):
        self.mesh = mesh
        self.K = K
        self.M = M
        self.M_full = M_full
        self.dofs = np.flatnonzero(~mesh.boundary)
        self.node_to_dof = np.full(mesh.n_nodes, -1)
        self.node_to_dof[self.dofs] = np.arange(len(self.dofs))
        self._lu = {}
        self._lock = threading.Lock()
        self.eigenvalues: np.ndarray | None = None
        self.eigenvectors: np.ndarray | None = None

    @property
    def n_dofs(self) -> int:
        return len(self.dofs)

    def to_nodal(self, w) -> np.ndarray:
        w = np.asarray(w)
        out = np.zeros((self.mesh.n_nodes,) + w.shape[1:], dtype=w.dtype)
        out[self.dofs] = w
        return out

    def restrict(self, nodal) -> np.ndarray:
        return np.asarray(nodal)[self.dofs]

    def interpolate(self, func) -> np.ndarray:
        """Dof vector of nodal values of ``func(points)``."""
        return np.asarray(func(self.mesh.nodes[self.dofs]))

    def _factor(self, z: complex):
        key = complex(z)
        with self._lock:
            lu = self._lu.get(key)
            if lu is None:
                if self.eigenvalues is not None:
                    lam = self.eigenvalues
                    if np.any(np.abs(key + lam) < 1e-10 * lam):
                        raise ValueError(f"z={key} is too close to the discrete spectrum")
                A = self.K + key * self.M if key.imag else self.K + key.real * self.M
                lu = spla.splu(sp.csc_matrix(A))
                self._lu[key] = lu
            return lu

    def solve_shifted(self, z: complex, rhs) -> np.ndarray:
        """Solve (z M + K) w = rhs for one or several right-hand sides."""
        rhs = np.asarray(rhs)
        if rhs.shape[0] != self.n_dofs:
            raise ValueError("right-hand side has the wrong number of dofs")
        lu = self._factor(z)
        if complex(z).imag == 0 and not np.iscomplexobj(rhs):
            return lu.solve(rhs)
        if complex(z).imag == 0:
            return lu.solve(np.ascontiguousarray(rhs.real)) + 1j * lu.solve(np.ascontiguousarray(rhs.imag))
        return lu.solve(rhs.astype(complex))

    def clear_cache(self) -> None:
        with self._lock:
            self._lu.clear()


def assemble(mesh: Mesh) -> FemSystem:
    """Exact P1 stiffness and mass matrices, Dirichlet rows and columns removed."""
    nodes, tris = mesh.nodes, mesh.triangles
    x = nodes[tris]
    d1 = x[:, 1] - x[:, 0]
    d2 = x[:, 2] - x[:, 0]
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    if np.any(det <= 0):
        raise ValueError("mesh contains inverted or degenerate triangles")
    area = 0.5 * det
    # gradients of the barycentric coordinates: grad l_i = rot(x_{i+2} - x_{i+1}) / (2 area)
    grads = np.empty((len(tris), 3, 2))
    for i in range(3):
        e = x[:, (i + 2) % 3] - x[:, (i + 1) % 3]
        grads[:, i, 0] = -e[:, 1] / det
        grads[:, i, 1] = e[:, 0] / det
    k_loc = np.einsum("tid,tjd->tij", grads, grads) * area[:, None, None]
    m_loc = (np.ones((3, 3)) + np.eye(3))[None] * (area / 12.0)[:, None, None]
    rows = np.repeat(tris, 3, axis=1).ravel()
    cols = np.tile(tris, (1, 3)).ravel()
    n = mesh.n_nodes
    K_full = sp.csr_matrix((k_loc.ravel(), (rows, cols)), shape=(n, n))
    M_full = sp.csr_matrix((m_loc.ravel(), (rows, cols)), shape=(n, n))
    inner = np.flatnonzero(~mesh.boundary)
    K = sp.csc_matrix(K_full[inner][:, inner])
    M = sp.csc_matrix(M_full[inner][:, inner])
    K = sp.csc_matrix(0.5 * (K + K.T))
    return FemSystem(mesh, K, M, M_full)


def eigenpairs(system: FemSystem, m: int):
    """Smallest m generalized eigenpairs of K e = lambda M e, M-orthonormal and ascending.

    The result is cached on the system; a larger request recomputes.
    """
    if not 0 < m < system.n_dofs:
        raise ValueError("eigenpair count must be positive and below the number of dofs")
    if system.eigenvalues is not None and len(system.eigenvalues) >= m:
        return system.eigenvalues[:m], system.eigenvectors[:, :m]
    v0 = np.ones(system.n_dofs)
    try:
        lam, vec = spla.eigsh(system.K, k=m, M=system.M, sigma=0.0, which="LM", v0=v0, tol=1e-12)
    except spla.ArpackNoConvergence as exc:
        raise RuntimeError(f"eigensolver did not converge for m={m}") from exc
    order = np.argsort(lam)
    lam, vec = lam[order], vec[:, order]
    # M-orthonormalize (ARPACK output is already close) and fix signs
    gram = vec.T @ (system.M @ vec)
    chol = np.linalg.cholesky(0.5 * (gram + gram.T))
    vec = np.linalg.solve(chol, vec.T).T
    pivot = np.argmax(np.abs(vec), axis=0)
    vec *= np.sign(vec[pivot, np.arange(vec.shape[1])])
    system.eigenvalues, system.eigenvectors = lam, vec
    return lam, vec


def resolvent_apply(system: FemSystem, z: complex, g) -> np.ndarray:
    """Discrete (z - Laplacian)^{-1} g, i.e. the solution of (z M + K) w = M g."""
    g = np.asarray(g)
    if g.shape[0] != system.n_dofs:
        raise ValueError("dof vector has the wrong length")
    return system.solve_shifted(z, system.M @ g)


def norms(system: FemSystem, w) -> tuple[float, float]:
    """Discrete L2 norm and H1 seminorm of a (possibly complex) dof vector."""
    w = np.asarray(w)
    if w.shape[0] != system.n_dofs:
        raise ValueError("dof vector has the wrong length")
    l2 = np.sqrt(max(np.real(np.vdot(w, system.M @ w)), 0.0))
    h1 = np.sqrt(max(np.real(np.vdot(w, system.K @ w)), 0.0))
    return float(l2), float(h1)


def h2_surrogate(system: FemSystem, laplacian) -> float:
    """L2 norm of a supplied Laplacian field given as a dof vector."""
    return norms(system, laplacian)[0]
