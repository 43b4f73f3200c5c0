"""Frequency-domain decomposition of simulated paths.

Paths live in the span of the cached eigenvectors, so every field on the
frequency grid is stored by its eigen-coefficients. Quantities involving the
closed-form corner function ``e^{-r sqrt(i xi)} S`` (overlaps with the
eigenvectors, its norm and the norm of its Laplacian) are tabulated once per
grid on a polar rule around the corner.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve

from .dual import DualFunction
from .geometry import e0_cell_average, singular_field_polar
from .noise import ModalBasis
from .quadrature import PolarRule, p1_evaluation_matrix, polar_rule
from .she import ModalCoefficients, PathSample


# ------------------------------------------------------------------ the grid


@dataclass(frozen=True)
class FrequencyGrid:
    """Uniform grid xi_m = m dxi in FFT order, dxi = pi / T_pad, |xi| <= pi / dt."""

    dt: float
    T_pad: float

    @property
    def size(self) -> int:
        n = int(round(2.0 * self.T_pad / self.dt))
        if n % 2:
            raise ValueError("2 T_pad / dt must be an even integer")
        return n

    @property
    def dxi(self) -> float:
        return np.pi / self.T_pad

    @property
    def xi(self) -> np.ndarray:
        return 2.0 * np.pi * np.fft.fftfreq(self.size, self.dt)

    @property
    def half(self) -> int:
        """Number of nonnegative frequencies 0, dxi, ..., pi / dt."""
        return self.size // 2 + 1

    @property
    def times(self) -> np.ndarray:
        """Time samples matching the inverse transform, in FFT order."""
        n = self.size
        return self.dt * np.where(np.arange(n) < n // 2, np.arange(n), np.arange(n) - n)

    def describe(self) -> dict:
        return {"dt": self.dt, "T_pad": self.T_pad, "n_fft": self.size, "dxi": self.dxi, "xi_max": np.pi / self.dt}

    @classmethod
    def for_path(cls, T: float, n_steps: int, pad_factor: float = 4.0):
        return cls(T / n_steps, pad_factor * T)


def expand_half(half_values: np.ndarray, n: int) -> np.ndarray:
    """Full FFT-ordered array from values at nonnegative frequencies, using conj symmetry."""
    out = np.empty((n,) + half_values.shape[1:], dtype=complex)
    h = n // 2
    out[: h + 1] = half_values[: h + 1]
    out[h + 1 :] = np.conj(half_values[1:h][::-1])
    return out


@dataclass
class FrequencyField:
    grid: FrequencyGrid
    values: np.ndarray  # (n_fft, ...) in FFT order
    meta: dict = field(default_factory=dict)

    def hermitian_error(self) -> float:
        v = self.values
        mirrored = np.conj(np.roll(v[::-1], 1, axis=0))
        gap = np.abs(v - mirrored)
        # the Nyquist bin pairs with itself and is zeroed by the spectral window
        gap[len(v) // 2] = 0.0
        scale = max(float(np.max(np.abs(v))), 1e-300)
        return float(np.max(gap) / scale)

    def symmetric(self):
        """(xi, values) sorted by increasing xi."""
        order = np.argsort(self.grid.xi, kind="stable")
        return self.grid.xi[order], self.values[order]

    def __add__(self, other):
        return FrequencyField(self.grid, self.values + other.values, dict(self.meta))

    def __mul__(self, scalar):
        return FrequencyField(self.grid, self.values * scalar, dict(self.meta))

    __rmul__ = __mul__


def _check_grid(path: PathSample, grid: FrequencyGrid):
    if not np.isclose(path.dt, grid.dt, rtol=1e-12):
        raise ValueError("path time step does not match the frequency grid")
    if path.n_steps + 1 > grid.size:
        raise ValueError("frequency grid is shorter than the path")


# --------------------------------------------------------- path transforms


def laplace_of_path(path: PathSample, grid: FrequencyGrid) -> FrequencyField:
    """Trapezoidal U(i xi) = int_0^T e^{-i xi t} u(t) dt per mode."""
    _check_grid(path, grid)
    weighted = path.u.copy()
    weighted[0] *= 0.5
    weighted[-1] *= 0.5
    values = grid.dt * np.fft.fft(weighted, n=grid.size, axis=0)
    return FrequencyField(grid, values, {"path": path.path, "field": "U"})


def noise_terms(path: PathSample, coeffs: ModalCoefficients) -> np.ndarray:
    """G(u_n) dW_n per step in eigen-coefficients, left-point evaluation."""
    return coeffs.diffusion(path.u[:-1], path.dW)


def h_transform(path: PathSample, coeffs: ModalCoefficients, grid: FrequencyGrid) -> FrequencyField:
    """H(i xi) = drift integral + Ito sum - e^{-i xi T} u(T) + u(0)."""
    _check_grid(path, grid)
    if path.dW is None or len(path.dW) != path.n_steps:
        raise ValueError("path carries no increments")
    n = grid.size
    seq = np.zeros((n, path.u.shape[1]), dtype=float)
    seq[: path.n_steps] = noise_terms(path, coeffs)
    seq[0] += path.u[0]
    if coeffs.model.f is not None:
        drift = coeffs.drift(path.u)
        drift[0] *= 0.5
        drift[-1] *= 0.5
        seq[: path.n_steps + 1] += grid.dt * drift
    values = np.fft.fft(seq, axis=0)
    phase = np.exp(-1j * grid.xi * path.T)
    values -= phase[:, None] * path.u[-1][None, :]
    return FrequencyField(grid, values, {"path": path.path, "field": "H"})


def resolvent_modes(H: FrequencyField, eigenvalues) -> FrequencyField:
    """(i xi - Delta)^{-1} H in eigen-coefficients."""
    z = 1j * H.grid.xi[:, None]
    return FrequencyField(H.grid, H.values / (z + eigenvalues[None, :]), {**H.meta, "field": "R H"})


def helmholtz_residual(eigenvalues, U: FrequencyField, H: FrequencyField) -> np.ndarray:
    """Per-frequency ||(i xi M + K) U - M H|| / ||M H|| in the discrete H^{-1} norm."""
    if U.values.shape != H.values.shape:
        raise ValueError("U and H fields differ in shape")
    lam = np.asarray(eigenvalues)
    r = (1j * U.grid.xi[:, None] + lam) * U.values - H.values
    num = np.sum(np.abs(r) ** 2 / lam, axis=1)
    den = np.sum(np.abs(H.values) ** 2 / lam, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.sqrt(np.where(den > 0, num / den, 0.0))


def band_residual(eigenvalues, U: FrequencyField, H: FrequencyField, xi_band: float) -> float:
    """Relative residual aggregated in l2 over the frequencies |xi| <= xi_band."""
    lam = np.asarray(eigenvalues)
    sel = np.abs(U.grid.xi) <= xi_band
    r = (1j * U.grid.xi[sel, None] + lam) * U.values[sel] - H.values[sel]
    num = np.sum(np.abs(r) ** 2 / lam)
    den = np.sum(np.abs(H.values[sel]) ** 2 / lam)
    return float(np.sqrt(num / den)) if den > 0 else 0.0


# ------------------------------------------------------------ corner tables


class CornerModes:
    """Overlaps of the eigenvectors with e^{-r sqrt z} S and its Laplacian.

    Evaluated on a polar rule around the corner; for any array of z:
    overlap[i, k] = int e_k e^{-r sqrt z_i} S, lap_overlap the same with the
    Laplacian, norm2 and lap_norm2 the squared L2 norms of the two fields.
    """

    def __init__(self, basis: ModalBasis, dual: DualFunction, rule: PolarRule | None = None):
        self.frame = dual.domain.frame(dual.j)
        self.alpha = self.frame.alpha
        self.rule = polar_rule(self.frame) if rule is None else rule
        system = dual.system
        evalm = p1_evaluation_matrix(system.mesh, self.rule.points)[:, system.dofs]
        self.modes_at_rule = np.asarray(evalm @ basis.eigenvectors)  # (Q, m)
        self._weighted = self.modes_at_rule * self.rule.weights[:, None]

    def tabulate(self, zs, chunk: int = 256):
        from .geometry import principal_sqrt

        zs = np.atleast_1d(np.asarray(zs, dtype=complex))
        m = self._weighted.shape[1]
        overlap = np.empty((len(zs), m), dtype=complex)
        lap_overlap = np.empty((len(zs), m), dtype=complex)
        norm2 = np.empty(len(zs))
        lap_norm2 = np.empty(len(zs))
        r, th, w = self.rule.r, self.rule.theta, self.rule.weights
        for lo in range(0, len(zs), chunk):
            k = principal_sqrt(zs[lo : lo + chunk])[None, :]
            vals, laps = _damped_fields(self.frame, r, th, k)
            overlap[lo : lo + chunk] = (self._weighted.T @ vals).T
            lap_overlap[lo : lo + chunk] = (self._weighted.T @ laps).T
            norm2[lo : lo + chunk] = w @ np.abs(vals) ** 2
            lap_norm2[lo : lo + chunk] = w @ np.abs(laps) ** 2
        return overlap, lap_overlap, norm2, lap_norm2

    def radial_profile(self, dof_modes) -> tuple[np.ndarray, np.ndarray]:
        """Angular integral of S times a mode combination, on the rule's radii.

        Returns (radii, weights) with int S f h(r) dx ~ sum weights h(radii)
        for any radial h; used to reduce kernel convolutions to one dimension.
        """
        f = self.modes_at_rule @ np.asarray(dof_modes)
        vals, _ = singular_field_polar(self.frame, self.rule.r, self.rule.theta)
        radii, inverse = np.unique(self.rule.r, return_inverse=True)
        weights = np.bincount(inverse, weights=self.rule.weights * vals * f, minlength=len(radii))
        return radii, weights


class CornerTables(CornerModes):
    """CornerModes tabulated on the nonnegative half of a frequency grid."""

    def __init__(self, basis: ModalBasis, dual: DualFunction, grid: FrequencyGrid, rule: PolarRule | None = None):
        super().__init__(basis, dual, rule)
        self.grid = grid
        xi = np.abs(grid.xi[: grid.half])
        self.overlap, self.lap_overlap, self.norm2, self.lap_norm2 = self.tabulate(1j * xi)

    def full(self, name: str) -> np.ndarray:
        data = getattr(self, name)
        if np.iscomplexobj(data):
            return expand_half(data, self.grid.size)
        return expand_half(data.astype(complex), self.grid.size).real


def _damped_fields(frame, r, theta, k):
    """e^{-k r} S and its Laplacian for column vector k of square roots."""
    from .geometry import cutoff_derivatives

    eta, d1, d2 = cutoff_derivatives(r, frame.r0, frame.r1)
    a = frame.alpha
    e = np.exp(-r[:, None] * k)
    rho = e * eta[:, None]
    drho = e * (d1[:, None] - k * eta[:, None])
    d2rho = e * (d2[:, None] - 2 * k * d1[:, None] + k * k * eta[:, None])
    rp = (r**a)[:, None]
    sin = np.sin(a * theta)[:, None]
    vals = rho * rp * sin
    laps = (rp * (d2rho + drho / r[:, None]) + 2 * a * drho * rp / r[:, None]) * sin
    return vals, laps


# ----------------------------------------------------- coefficient, regular part


def dual_modes(basis: ModalBasis, dual: DualFunction) -> np.ndarray:
    """int e_k v0."""
    return basis.eigenvectors.T @ dual.load


def shifted_dual_modes(grid: FrequencyGrid, eigenvalues, v0_modes) -> FrequencyField:
    """Eigen-coefficients of v(i xi) = v0 - i xi (i xi - Delta)^{-1} v0."""
    z = 1j * grid.xi[:, None]
    lam = np.asarray(eigenvalues)[None, :]
    return FrequencyField(grid, v0_modes[None, :] * lam / (z + lam), {"field": "v"})


def singular_coefficient(H: FrequencyField, v: FrequencyField) -> FrequencyField:
    """c(i xi) = <H(i xi), conj v(i xi)>, the bilinear L2 pairing."""
    if H.values.shape != v.values.shape:
        raise ValueError("H and v fields are on different grids")
    return FrequencyField(H.grid, np.sum(H.values * v.values, axis=1), {**H.meta, "field": "c"})


@dataclass
class RegularPart:
    """U_R = (i xi - Delta)^{-1} H - c e^{-r sqrt(i xi)} S, kept in factored form."""

    resolvent: FrequencyField  # eigen-coefficients of R(i xi) H
    laplacian: FrequencyField  # eigen-coefficients of Delta R(i xi) H = (i xi R - id) H
    c: FrequencyField
    tables: CornerTables

    def _split_norm(self, a, overlaps, norm2):
        c = self.c.values
        proj = np.sum(np.abs(a - c[:, None] * overlaps) ** 2, axis=1)
        rest = np.maximum(norm2 - np.sum(np.abs(overlaps) ** 2, axis=1), 0.0)
        return np.sqrt(proj + np.abs(c) ** 2 * rest)

    def l2_norms(self) -> np.ndarray:
        t = self.tables
        return self._split_norm(self.resolvent.values, t.full("overlap"), t.full("norm2"))

    def laplacian_norms(self) -> np.ndarray:
        """||Delta U_R(i xi)||, the H^2 surrogate, per frequency."""
        t = self.tables
        return self._split_norm(self.laplacian.values, t.full("lap_overlap"), t.full("lap_norm2"))

    def modes(self, name: str = "overlap") -> np.ndarray:
        """Projection of U_R onto the cached eigenvectors, per frequency."""
        return self.resolvent.values - self.c.values[:, None] * self.tables.full(name)


def regular_part(H: FrequencyField, c: FrequencyField, eigenvalues, tables: CornerTables) -> RegularPart:
    R = resolvent_modes(H, eigenvalues)
    lap = FrequencyField(H.grid, 1j * H.grid.xi[:, None] * R.values - H.values, {**H.meta, "field": "Delta R H"})
    return RegularPart(R, lap, c, tables)


# ---------------------------------------------------------------- time domain


def raised_cosine(xi: np.ndarray, xi_max: float, fraction: float) -> np.ndarray:
    """One inside (1 - fraction) xi_max, cosine roll-off to zero at xi_max."""
    if fraction <= 0:
        return np.ones_like(xi)
    start = (1.0 - fraction) * xi_max
    x = np.clip((np.abs(xi) - start) / (xi_max - start), 0.0, 1.0)
    return 0.5 * (1.0 + np.cos(np.pi * x))


def phi_from_spectrum(c: FrequencyField, window: float = 0.1, tol: float = 1e-8):
    """Inverse Fourier transform of c(i .) on [-T_pad, T_pad), sorted by time.

    Returns (t, phi) with real phi; rejects spectra that are not Hermitian.
    """
    grid = c.grid
    if np.any(c.values) and c.hermitian_error() > tol:
        raise ValueError("spectrum is not Hermitian; its inverse transform is not real")
    w = raised_cosine(grid.xi, np.pi / grid.dt, window)
    samples = np.fft.ifft(c.values * w).real / grid.dt
    order = np.argsort(grid.times, kind="stable")
    return grid.times[order], samples[order]


def support_check(t, phi, delta: float, tol: float = 1e-2):
    """Fraction of sum |phi|^2 carried by t < -delta, and whether it is within tol."""
    total = float(np.sum(np.abs(phi) ** 2))
    if total == 0:
        return 0.0, True
    frac = float(np.sum(np.abs(phi[t < -delta]) ** 2) / total)
    return frac, frac <= tol


def sobolev_time_norm(spectrum, xi, dxi: float, s: float) -> float:
    """sqrt(sum (1 + xi^2)^s |f(xi)|^2 dxi) over a frequency grid."""
    spectrum = np.asarray(spectrum)
    weight = (1.0 + np.asarray(xi) ** 2) ** s
    mag = np.abs(spectrum) ** 2
    if mag.ndim > 1:
        mag = mag.reshape(len(weight), -1).sum(axis=1)
    return float(np.sqrt(np.sum(weight * mag) * dxi))


def sobolev_time_norm_of_samples(samples, dt: float, s: float, n_fft: int | None = None) -> float:
    """Same norm for time samples, through f_hat = dt * DFT."""
    samples = np.asarray(samples)
    n = len(samples) if n_fft is None else n_fft
    spec = dt * np.fft.fft(samples, n=n, axis=0)
    xi = 2 * np.pi * np.fft.fftfreq(n, dt)
    return sobolev_time_norm(spec, xi, 2 * np.pi / (n * dt), s)


def singular_time_profile(tables: CornerTables, psi_modes, grid: FrequencyGrid) -> np.ndarray:
    """g(t_n) = int E0(t_n, r) S psi dx for t_n = n dt >= 0, as cell averages.

    Each cell is [t_n - dt/2, t_n + dt/2], so g sums to the total mass
    int S psi over the whole time axis.
    """
    radii, weights = tables.radial_profile(psi_modes)
    n = grid.size // 2
    t = grid.dt * np.arange(n)
    lo = np.maximum(t - 0.5 * grid.dt, 0.0)
    hi = t + 0.5 * grid.dt
    avg = e0_cell_average(lo[:, None], hi[:, None], radii[None, :]) * ((hi - lo) / grid.dt)[:, None]
    return avg @ weights


def convolve_singular(t, phi, g, phi_test) -> float:
    """Pairing of (Phi * g) with a time test function on the grid ``t``.

    ``g`` holds the kernel profile at t = 0, dt, 2 dt, ... (zero before 0).
    """
    t = np.asarray(t)
    phi_test = np.asarray(phi_test)
    if phi_test.shape != t.shape or np.shape(phi) != t.shape:
        raise ValueError("Phi samples and test function are on different grids")
    dt = float(t[1] - t[0])
    conv = fftconvolve(phi, g)[: len(t)] * dt
    return float(np.sum(conv * phi_test) * dt)


# ------------------------------------------------------------ decomposition


@dataclass
class Decomposition:
    grid: FrequencyGrid
    H: FrequencyField
    c: FrequencyField
    regular: RegularPart
    t: np.ndarray
    phi: np.ndarray
    support_fraction: float
    accepted: bool
    diagnostics: dict = field(default_factory=dict)


class CornerPipeline:
    """Everything needed to decompose paths for one corner on one grid."""

    def __init__(self, basis: ModalBasis, dual: DualFunction, grid: FrequencyGrid, window: float = 0.1):
        self.basis = basis
        self.dual = dual
        self.grid = grid
        self.window = window
        self.tables = CornerTables(basis, dual, grid)
        self.v0_modes = dual_modes(basis, dual)
        self.v = shifted_dual_modes(grid, basis.eigenvalues, self.v0_modes)

    @property
    def alpha(self) -> float:
        return self.tables.alpha

    def decompose(self, path: PathSample, coeffs: ModalCoefficients, delta_steps: int = 5, tol: float = 1e-2) -> Decomposition:
        H = h_transform(path, coeffs, self.grid)
        c = singular_coefficient(H, self.v)
        reg = regular_part(H, c, self.basis.eigenvalues, self.tables)
        t, phi = phi_from_spectrum(c, self.window)
        frac, ok = support_check(t, phi, delta_steps * self.grid.dt, tol)
        return Decomposition(self.grid, H, c, reg, t, phi, frac, ok)

    def decomposition_residual(self, path: PathSample, dec: Decomposition, time_tests, n_space: int = 20) -> float:
        """Worst relative gap between u+ and u+,R + Phi * E0 S on test pairs.

        ``time_tests`` is an array (n_tests, len(dec.t)) of real test
        functions sampled on the sorted time grid of the decomposition.
        """
        grid = self.grid
        time_tests = np.atleast_2d(time_tests)
        n_space = min(n_space, self.basis.size)
        if not np.any(path.u):
            return 0.0
        # u+ paired with (phi, e_j): trapezoid over [0, T]
        t_path = path.t
        idx = np.searchsorted(dec.t, t_path)
        w = np.full(len(t_path), grid.dt)
        w[[0, -1]] *= 0.5
        lhs = np.einsum("an,nj->aj", time_tests[:, idx] * w, path.u[:, :n_space])
        # regular part by discrete Parseval against the test spectra
        order = np.argsort(grid.times, kind="stable")
        tests_fft = np.zeros((len(time_tests), grid.size))
        tests_fft[:, order] = time_tests
        tests_hat = grid.dt * np.fft.fft(tests_fft, axis=1)
        ur = dec.regular.modes("overlap")[:, :n_space]
        reg = (grid.dxi / (2 * np.pi)) * np.einsum("mj,am->aj", ur, np.conj(tests_hat)).real
        # singular part in the time domain
        sing = np.empty_like(lhs)
        for j in range(n_space):
            e = np.zeros(self.basis.size)
            e[j] = 1.0
            g = singular_time_profile(self.tables, e, grid)
            for a, test in enumerate(time_tests):
                sing[a, j] = convolve_singular(dec.t, dec.phi, g, test)
        scale = float(np.max(np.abs(lhs)))
        if scale == 0:
            return 0.0
        return float(np.max(np.abs(lhs - reg - sing)) / scale)


def hermite_windowed_modes(t, T: float, n_modes: int, width: float | None = None) -> np.ndarray:
    """Gaussian-windowed cosines and sines centred on [0, T]."""
    width = T / 4 if width is None else width
    env = np.exp(-(((t - T / 2) / width) ** 2))
    rows = [env]
    for k in range(1, n_modes):
        freq = np.pi * ((k + 1) // 2) / T
        rows.append(env * (np.cos(freq * t) if k % 2 else np.sin(freq * t)))
    return np.array(rows)
