"""Polygonal domains with re-entrant corners and closed-form corner functions.

Every corner-attached quantity lives in a local polar frame ``(r, theta)``
centred at the vertex, with ``theta = 0`` along the side leaving the vertex
towards the next vertex and ``theta`` increasing into the domain.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from matplotlib.path import Path

__all__ = [
    "CornerFrame",
    "PolygonalDomain",
    "build_domain",
    "l_shape",
    "unit_square",
    "cutoff_eval",
    "cutoff_derivatives",
    "singular_eval",
    "dual_seed_eval",
    "laplacian_of_singular",
    "laplacian_of_dual_seed",
    "gradient_of_singular",
    "e0_kernel",
    "principal_sqrt",
    "CornerFunctionSet",
]


@dataclass(frozen=True)
class CornerFrame:
    """Local polar frame and cutoff radii of one re-entrant corner."""

    index: int
    origin: np.ndarray
    direction: float  # global angle of the side V_j -> V_{j+1}
    angle: float  # interior angle gamma_j
    r0: float
    r1: float

    @property
    def alpha(self) -> float:
        return np.pi / self.angle


@dataclass(frozen=True)
class PolygonalDomain:
    vertices: np.ndarray
    angles: np.ndarray
    reentrant: tuple[int, ...]
    frames: dict = field(default_factory=dict)

    @property
    def area(self) -> float:
        return _signed_area(self.vertices)

    @property
    def edges(self) -> np.ndarray:
        """Array of shape (n, 2, 2) with the start and end point of each side."""
        return np.stack([self.vertices, np.roll(self.vertices, -1, axis=0)], axis=1)

    def frame(self, j: int) -> CornerFrame:
        if j not in self.frames:
            raise ValueError(f"vertex {j} is not a re-entrant corner")
        return self.frames[j]

    def alpha(self, j: int) -> float:
        return self.frame(j).alpha

    def contains(self, points, tol: float = 1e-10) -> np.ndarray:
        """True for points in the closed polygon, up to distance ``tol``."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        inside = Path(self.vertices).contains_points(pts)
        if inside.all():
            return inside
        return inside | (self.boundary_distance(pts) <= tol)

    def boundary_distance(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        best = np.full(len(pts), np.inf)
        for a, b in self.edges:
            best = np.minimum(best, _segment_distance(pts, a, b))
        return best

    def polar(self, j: int, points) -> tuple[np.ndarray, np.ndarray]:
        """Polar coordinates of ``points`` in the frame of corner ``j``."""
        fr = self.frame(j)
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        d = pts - fr.origin
        r = np.hypot(d[:, 0], d[:, 1])
        theta = np.mod(np.arctan2(d[:, 1], d[:, 0]) - fr.direction, 2 * np.pi)
        # points on the theta = 0 side may round to just below 2*pi
        theta = np.where(theta > fr.angle + 0.5 * (2 * np.pi - fr.angle), theta - 2 * np.pi, theta)
        return r, theta

    def from_polar(self, j: int, r, theta) -> np.ndarray:
        fr = self.frame(j)
        phi = np.asarray(theta) + fr.direction
        r = np.asarray(r)
        return np.stack([fr.origin[0] + r * np.cos(phi), fr.origin[1] + r * np.sin(phi)], axis=-1)

    def describe(self) -> dict:
        """Plain-data summary, embedded in run outputs."""
        return {
            "vertices": self.vertices.tolist(),
            "reentrant": list(self.reentrant),
            "cutoffs": {
                str(j): {"r0": fr.r0, "r1": fr.r1, "blend": "quintic"}
                for j, fr in self.frames.items()
            },
        }


def _signed_area(v: np.ndarray) -> float:
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _segment_distance(pts, a, b) -> np.ndarray:
    ab = b - a
    t = np.clip(((pts - a) @ ab) / (ab @ ab), 0.0, 1.0)
    proj = a + t[:, None] * ab
    return np.hypot(*(pts - proj).T)


def _segments_cross(p1, p2, q1, q2) -> bool:
    def orient(a, b, c):
        v = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        return 0 if abs(v) < 1e-14 else (1 if v > 0 else -1)

    def on_segment(a, b, c):
        return min(a[0], b[0]) - 1e-14 <= c[0] <= max(a[0], b[0]) + 1e-14 and min(
            a[1], b[1]
        ) - 1e-14 <= c[1] <= max(a[1], b[1]) + 1e-14

    o1, o2 = orient(p1, p2, q1), orient(p1, p2, q2)
    o3, o4 = orient(q1, q2, p1), orient(q1, q2, p2)
    if o1 != o2 and o3 != o4:
        return True
    return (
        (o1 == 0 and on_segment(p1, p2, q1))
        or (o2 == 0 and on_segment(p1, p2, q2))
        or (o3 == 0 and on_segment(q1, q2, p1))
        or (o4 == 0 and on_segment(q1, q2, p2))
    )


def build_domain(vertices, cutoff_radii=None) -> PolygonalDomain:
    """Validate a counter-clockwise simple polygon and set up its corner frames.

    Parameters
    ----------
    vertices : array_like, shape (n, 2)
        Polygon vertices in counter-clockwise order, not repeating the first.
    cutoff_radii : dict, optional
        Maps a re-entrant vertex index to ``(r0, r1)``. Missing corners get
        ``r0 = 0.3 d`` and ``r1 = 0.6 d`` with ``d`` the distance to the
        nearest boundary feature not touching the vertex.
    """
    v = np.asarray(vertices, dtype=float)
    if v.ndim != 2 or v.shape[1] != 2 or len(v) < 3:
        raise ValueError("a polygon needs at least 3 vertices given as (x, y) pairs")
    if not np.all(np.isfinite(v)):
        raise ValueError("vertex coordinates must be finite")
    n = len(v)
    for i in range(n):
        for k in range(i + 1, n):
            if np.allclose(v[i], v[k], atol=1e-14):
                raise ValueError(f"repeated vertex at indices {i} and {k}")
    for i in range(n):
        for k in range(i + 1, n):
            if k == i + 1 or (i == 0 and k == n - 1):
                continue
            if _segments_cross(v[i], v[(i + 1) % n], v[k], v[(k + 1) % n]):
                raise ValueError(f"polygon is self-intersecting (sides {i} and {k})")
    area = _signed_area(v)
    if abs(area) < 1e-14:
        raise ValueError("degenerate polygon with zero area")
    if area < 0:
        raise ValueError("vertices are in clockwise order; counter-clockwise is required")

    angles = np.empty(n)
    directions = np.empty(n)
    for j in range(n):
        nxt, prv = v[(j + 1) % n] - v[j], v[j - 1] - v[j]
        directions[j] = np.arctan2(nxt[1], nxt[0])
        angles[j] = np.mod(np.arctan2(prv[1], prv[0]) - directions[j], 2 * np.pi)
    if np.any(angles <= 0) or np.any(angles >= 2 * np.pi):
        raise ValueError("interior angles must lie strictly between 0 and 2*pi")
    reentrant = tuple(int(j) for j in np.flatnonzero(angles > np.pi + 1e-12))

    cutoff_radii = dict(cutoff_radii or {})
    unknown = set(cutoff_radii) - set(reentrant)
    if unknown:
        raise ValueError(f"cutoff radii given for non re-entrant vertices {sorted(unknown)}")
    frames = {}
    for j in reentrant:
        clearance = _clearance(v, j, reentrant)
        if j in cutoff_radii:
            r0, r1 = (float(x) for x in cutoff_radii[j])
            if not 0 < r0 < r1:
                raise ValueError(f"cutoff radii at corner {j} must satisfy 0 < r0 < r1")
            if r1 >= clearance:
                raise ValueError(
                    f"cutoff radius r1={r1} at corner {j} reaches other boundary "
                    f"features (clearance {clearance:.6g})"
                )
        else:
            r0, r1 = 0.3 * clearance, 0.6 * clearance
        frames[j] = CornerFrame(j, v[j].copy(), float(directions[j]), float(angles[j]), r0, r1)
    v.setflags(write=False)
    angles.setflags(write=False)
    return PolygonalDomain(v, angles, reentrant, frames)


def _clearance(v, j, reentrant) -> float:
    """Distance from V_j to sides not meeting it, and half the gap to other corners."""
    n = len(v)
    p = v[j][None, :]
    d = np.inf
    for i in range(n):
        if i == j or (i + 1) % n == j:
            continue
        d = min(d, float(_segment_distance(p, v[i], v[(i + 1) % n])[0]))
    for k in reentrant:
        if k != j:
            d = min(d, 0.5 * float(np.hypot(*(v[k] - v[j]))))
    return d


def l_shape() -> PolygonalDomain:
    """(-1, 1)^2 with the closed lower-left quadrant removed."""
    return build_domain([(0, -1), (1, -1), (1, 1), (-1, 1), (-1, 0), (0, 0)])


def unit_square() -> PolygonalDomain:
    return build_domain([(0, 0), (1, 0), (1, 1), (0, 1)])


# ---------------------------------------------------------------- radial pieces


def cutoff_derivatives(r, r0: float, r1: float):
    """Quintic cutoff ``eta`` and its first two radial derivatives."""
    r = np.asarray(r, dtype=float)
    width = r1 - r0
    s = np.clip((r - r0) / width, 0.0, 1.0)
    eta = 1.0 - s**3 * (10.0 - 15.0 * s + 6.0 * s**2)
    d1 = -30.0 * s**2 * (1.0 - s) ** 2 / width
    d2 = -60.0 * s * (1.0 - s) * (1.0 - 2.0 * s) / width**2
    return eta, d1, d2


def cutoff_eval(domain: PolygonalDomain, j: int, r):
    fr = domain.frame(j)
    return cutoff_derivatives(r, fr.r0, fr.r1)[0]


def principal_sqrt(z):
    """Square root with nonnegative real part; rejects the negative real axis."""
    z = np.asarray(z, dtype=complex)
    if np.any((z.imag == 0) & (z.real < 0)):
        raise ValueError("z on the negative real axis has no admissible square root")
    return np.sqrt(z)


def _radial_profile(r, fr: CornerFrame, k=None):
    """rho = e^{-k r} eta(r) with rho', rho''."""
    eta, d1, d2 = cutoff_derivatives(r, fr.r0, fr.r1)
    if k is None:
        return eta, d1, d2
    e = np.exp(-k * r)
    return e * eta, e * (d1 - k * eta), e * (d2 - 2 * k * d1 + k * k * eta)


def _laplacian_radial_harmonic(r, theta, rho, drho, d2rho, power, alpha):
    """Laplacian of rho(r) r^power sin(alpha theta) with r^power sin(alpha theta) harmonic."""
    with np.errstate(divide="ignore", invalid="ignore"):
        rp = r**power
        val = rp * (d2rho + drho / r) + 2.0 * power * drho * rp / r
    # rho' vanishes on the plateau, so the limit at r = 0 is zero
    val = np.where(drho == 0, 0.0, val)
    return val * np.sin(alpha * theta)


# ------------------------------------------------------------ point evaluators


def _prepare(domain, j, x, check):
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    if check and not np.all(domain.contains(pts)):
        raise ValueError("evaluation point outside the closed domain")
    r, theta = domain.polar(j, pts)
    return r, theta


def _shape(x, values):
    return values[0] if np.ndim(x) == 1 else values


def singular_eval(domain, j, x, check=True):
    """S_j(x) = eta(r) r^alpha sin(alpha theta)."""
    fr = domain.frame(j)
    r, theta = _prepare(domain, j, x, check)
    eta = cutoff_derivatives(r, fr.r0, fr.r1)[0]
    return _shape(x, eta * r**fr.alpha * np.sin(fr.alpha * theta))


def dual_seed_eval(domain, j, x, check=True):
    """psi_j(x) = eta(r) r^{-alpha} sin(alpha theta); infinite only at the vertex."""
    fr = domain.frame(j)
    r, theta = _prepare(domain, j, x, check)
    eta = cutoff_derivatives(r, fr.r0, fr.r1)[0]
    with np.errstate(divide="ignore", invalid="ignore"):
        val = eta * r ** (-fr.alpha) * np.sin(fr.alpha * theta)
    return _shape(x, val)


def laplacian_of_singular(domain, j, x, z=None, check=True):
    """Laplacian of S_j, or of e^{-r sqrt(z)} S_j when ``z`` is given."""
    fr = domain.frame(j)
    r, theta = _prepare(domain, j, x, check)
    k = None if z is None else principal_sqrt(z)
    rho, d1, d2 = _radial_profile(r, fr, k)
    val = _laplacian_radial_harmonic(r, theta, rho, d1, d2, fr.alpha, fr.alpha)
    return _shape(x, val if z is None else val.astype(complex))


def laplacian_of_dual_seed(domain, j, x, check=True):
    fr = domain.frame(j)
    r, theta = _prepare(domain, j, x, check)
    rho, d1, d2 = _radial_profile(r, fr)
    return _shape(x, _laplacian_radial_harmonic(r, theta, rho, d1, d2, -fr.alpha, fr.alpha))


def gradient_of_singular(domain, j, x, check=True):
    """Cartesian gradient of S_j, shape (..., 2)."""
    fr = domain.frame(j)
    r, theta = _prepare(domain, j, x, check)
    a = fr.alpha
    eta, d1, _ = cutoff_derivatives(r, fr.r0, fr.r1)
    with np.errstate(divide="ignore", invalid="ignore"):
        ra1 = r ** (a - 1.0)
    dr = (d1 * r + a * eta) * ra1 * np.sin(a * theta)
    dt = eta * a * ra1 * np.cos(a * theta)
    phi = theta + fr.direction
    g = np.stack([dr * np.cos(phi) - dt * np.sin(phi), dr * np.sin(phi) + dt * np.cos(phi)], -1)
    return g[0] if np.ndim(x) == 1 else g


def singular_field_polar(fr: CornerFrame, r, theta, z=None):
    """e^{-r sqrt(z)} S_j and its Laplacian evaluated directly in polar coordinates."""
    k = None if z is None else principal_sqrt(z)
    rho, d1, d2 = _radial_profile(r, fr, k)
    sin = np.sin(fr.alpha * theta)
    value = rho * r**fr.alpha * sin
    lap = _laplacian_radial_harmonic(r, theta, rho, d1, d2, fr.alpha, fr.alpha)
    return value, lap


@dataclass(frozen=True)
class CornerFunctionSet:
    """Bundles the evaluators attached to one re-entrant corner."""

    domain: PolygonalDomain
    j: int

    @property
    def alpha(self) -> float:
        return self.domain.alpha(self.j)

    def cutoff(self, r):
        return cutoff_eval(self.domain, self.j, r)

    def singular(self, x, check=True):
        return singular_eval(self.domain, self.j, x, check)

    def dual_seed(self, x, check=True):
        return dual_seed_eval(self.domain, self.j, x, check)

    def laplacian_singular(self, x, z=None, check=True):
        return laplacian_of_singular(self.domain, self.j, x, z, check)

    def laplacian_dual_seed(self, x, check=True):
        return laplacian_of_dual_seed(self.domain, self.j, x, check)


# ------------------------------------------------------------------ heat kernel


def e0_kernel(t, r):
    """Inverse Laplace transform in time of z -> e^{-r sqrt(z)}; zero for t <= 0."""
    t = np.asarray(t, dtype=float)
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise ValueError("the kernel needs r > 0")
    pos = t > 0
    ts = np.where(pos, t, 1.0)
    val = r / (2.0 * np.sqrt(np.pi)) * ts**-1.5 * np.exp(-(r * r) / (4.0 * ts))
    out = np.where(pos, val, 0.0)
    return out[()] if out.ndim == 0 else out


def e0_cell_average(t_left, t_right, r):
    """Mean of the kernel over [t_left, t_right] from its time CDF erfc(r / (2 sqrt t))."""
    from scipy.special import erfc

    def cdf(t):
        t = np.asarray(t, dtype=float)
        ts = np.where(t > 0, t, 1.0)
        return np.where(t > 0, erfc(r / (2.0 * np.sqrt(ts))), 0.0)

    return (cdf(t_right) - cdf(t_left)) / (np.asarray(t_right) - np.asarray(t_left))
