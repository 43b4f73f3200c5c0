"""Spectral Galerkin simulation of the stochastic heat equation.

Exponential Euler per eigenmode with left-point (Ito) evaluation of the
coefficients:

    u_{n+1} = e^{-L dt} (u_n + G(u_n) dW_n) + L^{-1} (1 - e^{-L dt}) F(u_n)
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .noise import CoefficientModel, CovarianceSpec, ModalBasis, sample_increments

MAGIC = b"CSP1"
_HEADER = struct.Struct("<4sIIQ")


@dataclass
class PathSample:
    t: np.ndarray  # (N + 1,)
    u: np.ndarray  # (N + 1, m) eigen-coefficients
    dW: np.ndarray  # (N, d) increments
    seed: int
    path: int = 0
    model: dict = field(default_factory=dict)

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0])

    @property
    def T(self) -> float:
        return float(self.t[-1])

    @property
    def n_steps(self) -> int:
        return len(self.t) - 1


class ModalCoefficients:
    """Eigen-projected drift and diffusion for a batch of states (rows)."""

    def __init__(self, model: CoefficientModel, basis: ModalBasis):
        self.model = model
        self.basis = basis
        if model.variant == "example2":
            self.u0_modes = basis.project(model.u0_field)
            if model.v0_load is not None:
                self.v0_modes = basis.eigenvectors.T @ model.v0_load
            else:
                self.v0_modes = basis.project(model.v0_field)

    def drift(self, U: np.ndarray) -> np.ndarray:
        if self.model.f is None:
            return np.zeros_like(U)
        nodal = self.basis.synthesize(U)
        return self.basis.project(self.model.f(self.basis.points, nodal).T)

    def diffusion(self, U: np.ndarray, dW: np.ndarray) -> np.ndarray:
        """G(U) dW for rows of states and increments."""
        m = self.model
        if m.variant == "additive":
            out = np.zeros_like(U)
            out[:, : dW.shape[1]] = dW
            return out
        if m.variant == "example2":
            norm = np.sqrt(np.sum(U * U, axis=1))
            return dW[:, :1] * (self.u0_modes[None, :] + m.activation(norm)[:, None] * self.v0_modes[None, :])
        nodal = self.basis.synthesize(U)
        pts = self.basis.points
        if m.variant == "nemytskii_smooth":
            noise = self.basis.synthesize(_pad(dW, U.shape[1]))
            return self.basis.project((m.g(pts, nodal) * noise).T)
        field_ = sum(dW[:, [i]] * gi(pts, nodal) for i, gi in enumerate(m.g_list))
        return self.basis.project(np.asarray(field_).T)


def _pad(dW, m):
    if dW.shape[1] > m:
        raise ValueError("more noise modes than solution modes")
    out = np.zeros((dW.shape[0], m))
    out[:, : dW.shape[1]] = dW
    return out


def time_grid(T: float, n_steps: int) -> np.ndarray:
    if n_steps < 2:
        raise ValueError("need at least two time steps")
    if T <= 0:
        raise ValueError("final time must be positive")
    return np.linspace(0.0, T, n_steps + 1)


def batch_increments(spec: CovarianceSpec, t, seed: int, paths) -> np.ndarray:
    return np.stack([sample_increments(spec, t, seed, p) for p in paths])


def integrate(basis: ModalBasis, model: CoefficientModel, u0_modes, t, dW, observer=None, store=True):
    """Run the exponential Euler recursion for a batch.

    Parameters
    ----------
    u0_modes : (m,) or (P, m) initial eigen-coefficients.
    dW : (P, N, d) increments.
    observer : callable(n, U), optional
        Called with the state at every grid index n = 0..N.

    Returns
    -------
    (P, N + 1, m) array of states, or None when ``store`` is false.
    """
    lam = basis.eigenvalues
    P, N, _ = dW.shape
    if len(t) != N + 1:
        raise ValueError("increments do not match the time grid")
    dt = float(t[1] - t[0])
    if not np.allclose(np.diff(t), dt, rtol=1e-12, atol=0):
        raise ValueError("the simulator needs a uniform time grid")
    decay = np.exp(-lam * dt)
    phi1 = -np.expm1(-lam * dt) / lam
    coeffs = ModalCoefficients(model, basis)
    U = np.broadcast_to(np.asarray(u0_modes, dtype=float), (P, basis.size)).copy()
    out = np.empty((P, N + 1, basis.size)) if store else None
    for n in range(N + 1):
        if out is not None:
            out[:, n] = U
        if observer is not None:
            observer(n, U)
        if n == N:
            break
        drift = coeffs.drift(U) if model.f is not None else None
        U = decay * (U + coeffs.diffusion(U, dW[:, n]))
        if drift is not None:
            U += phi1 * drift
        if not np.all(np.isfinite(U)):
            raise FloatingPointError(f"non-finite state after step {n + 1}")
    return out


def simulate_paths(
    basis: ModalBasis,
    spec: CovarianceSpec,
    model: CoefficientModel,
    u0,
    T: float,
    n_steps: int,
    seed: int,
    n_paths: int = 1,
    first_path: int = 0,
) -> list[PathSample]:
    """Simulate ``n_paths`` trajectories with path ids first_path, first_path + 1, ..."""
    t = time_grid(T, n_steps)
    d = model.noise_dim
    if d is not None and d != spec.m:
        raise ValueError(f"model expects {d} noise channels, covariance has {spec.m}")
    if model.variant in ("additive", "nemytskii_smooth") and spec.m > basis.size:
        raise ValueError("more noise modes than cached eigenpairs")
    u0_modes = np.zeros(basis.size) if u0 is None else basis.project(np.asarray(u0, dtype=float))
    paths = range(first_path, first_path + n_paths)
    dW = batch_increments(spec, t, seed, paths)
    states = integrate(basis, model, u0_modes, t, dW)
    descriptor = {"variant": model.variant, **model.params}
    return [PathSample(t, states[i], dW[i], int(seed), p, descriptor) for i, p in enumerate(paths)]


def simulate_path(basis, spec, model, u0, T, n_steps, seed, path=0) -> PathSample:
    return simulate_paths(basis, spec, model, u0, T, n_steps, seed, 1, path)[0]


def path_statistics(paths) -> dict:
    """Mean-square norms over an ensemble, with standard errors."""
    if len(paths) == 0:
        raise ValueError("no paths given")
    sq = np.stack([np.sum(p.u**2, axis=1) for p in paths])  # (P, N + 1)
    n = len(paths)

    def mean_se(x):
        se = float(np.std(x, ddof=1) / np.sqrt(n)) if n > 1 else float("nan")
        return float(np.mean(x)), se

    means = sq.mean(axis=0)
    peak = int(np.argmax(means))
    return {
        "n_paths": n,
        "sup_mean_square": mean_se(sq[:, peak]),
        "sup_index": peak,
        "final_mean_square": mean_se(sq[:, -1]),
        "initial_mean_square": mean_se(sq[:, 0]),
    }


def write_trajectory(sample: PathSample, path) -> None:
    """Little-endian store: magic, u32 N+1, u32 modes, u64 seed, then u and dW as float64."""
    u = np.ascontiguousarray(sample.u, dtype="<f8")
    dW = np.ascontiguousarray(sample.dW, dtype="<f8")
    if dW.shape[1] != u.shape[1]:
        # the store keeps one column count; fewer noise channels are zero-padded
        dW = np.ascontiguousarray(_pad(dW, u.shape[1]), dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, u.shape[0], u.shape[1], int(sample.seed)))
        fh.write(u.tobytes())
        fh.write(dW.tobytes())


def read_trajectory(path, T: float = 1.0, path_id: int = 0) -> PathSample:
    with open(path, "rb") as fh:
        data = fh.read()
    magic, rows, modes, seed = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ValueError(f"{path}: not a trajectory file")
    off = _HEADER.size
    n_u = rows * modes
    n_w = (rows - 1) * modes
    if len(data) != off + 8 * (n_u + n_w):
        raise ValueError(f"{path}: truncated or corrupt trajectory file")
    u = np.frombuffer(data, dtype="<f8", count=n_u, offset=off).reshape(rows, modes).astype(float)
    dW = np.frombuffer(data, dtype="<f8", count=n_w, offset=off + 8 * n_u).reshape(rows - 1, modes).astype(float)
    return PathSample(np.linspace(0.0, T, rows), u, dW, int(seed), path_id)
