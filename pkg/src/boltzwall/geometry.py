"""Convex level-set domains, backward/forward exit maps, boundary charts,
exit-map derivatives, and wall-bounce cycles.

Domains are analytic instances (unit ball, ellipsoid) given by a quadratic
level function xi with Omega = {xi < 0}.  Exact derivatives up to third
order keep geometry discretization error out of every downstream check.
All operations are pure functions of immutable domain data.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ChartMismatch,
    GrazingSingularity,
    NotOnBoundary,
    OutsideDomain,
    ZeroVelocity,
)

TOL_ROOT = 1e-12
TOL_BOUNDARY = 1e-9
TOL_GRAZING = 1e-8  # relative to |v|


# ---------------------------------------------------------------------------
# domains


@dataclass(frozen=True)
class ConvexDomain:
    """Bounded strictly convex domain {xi < 0} with xi(x) = x^T A x - 1.

    A is diag(1/a^2, 1/b^2, 1/c^2) for semi-axes (a, b, c); the unit ball
    is the special case a = b = c = 1.  The third derivative of xi is
    identically zero, so the kinetic distance is exactly invariant along
    straight characteristics on the ball.
    """

    kind: str
    semi_axes: tuple[float, float, float]

    @property
    def quadratic_matrix(self) -> np.ndarray:
        a, b, c = self.semi_axes
        return np.diag([1.0 / a**2, 1.0 / b**2, 1.0 / c**2])

    @property
    def convexity_constant(self) -> float:
        # zeta^T Hess(xi) zeta >= 2/max(axis)^2 |zeta|^2
        return 2.0 / max(self.semi_axes) ** 2

    @property
    def diameter(self) -> float:
        return 2.0 * max(self.semi_axes)

    def xi(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        a = np.array(self.semi_axes)
        return np.sum((x / a) ** 2, axis=-1) - 1.0

    def grad_xi(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        a = np.array(self.semi_axes)
        return 2.0 * x / a**2

    def hess_xi(self, x: np.ndarray) -> np.ndarray:
        base = 2.0 * self.quadratic_matrix
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            return base
        return np.broadcast_to(base, x.shape[:-1] + (3, 3))

    def third_xi(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1] + (3, 3, 3))

    def normal(self, x: np.ndarray) -> np.ndarray:
        g = self.grad_xi(x)
        return g / np.linalg.norm(g, axis=-1, keepdims=True)

    def contains(self, x: np.ndarray, tol: float = TOL_BOUNDARY) -> np.ndarray:
        return self.xi(x) <= tol

    def boundary_distance(self, x: np.ndarray) -> np.ndarray:
        """Distance to the boundary (exact for the ball, first order else)."""
        if self.kind == "ball":
            return 1.0 - np.linalg.norm(np.asarray(x, dtype=float), axis=-1)
        g = np.linalg.norm(self.grad_xi(x), axis=-1)
        return -self.xi(x) / g

    def project_to_boundary(self, x: np.ndarray) -> np.ndarray:
        """Radial projection onto {xi = 0}."""
        x = np.asarray(x, dtype=float)
        a = np.array(self.semi_axes)
        scale = np.sqrt(np.sum((x / a) ** 2, axis=-1, keepdims=True))
        return x / scale


def unit_ball() -> ConvexDomain:
    return ConvexDomain(kind="ball", semi_axes=(1.0, 1.0, 1.0))


def ellipsoid(a: float, b: float, c: float) -> ConvexDomain:
    if min(a, b, c) <= 0:
        raise ValueError("semi-axes must be positive")
    return ConvexDomain(kind="ellipsoid", semi_axes=(float(a), float(b), float(c)))


# ---------------------------------------------------------------------------
# phase points and exit records


@dataclass(frozen=True)
class PhasePoint:
    x: np.ndarray
    v: np.ndarray

    def classify(self, domain: ConvexDomain, tol_boundary: float = TOL_BOUNDARY,
                 tol_grazing: float = TOL_GRAZING) -> str:
        """One of 'interior', 'outgoing', 'incoming', 'grazing'."""
        xi = float(domain.xi(self.x))
        if xi < -tol_boundary:
            return "interior"
        nv = float(domain.normal(self.x) @ self.v)
        speed = float(np.linalg.norm(self.v))
        if abs(nv) <= tol_grazing * max(speed, 1.0):
            return "grazing"
        return "outgoing" if nv > 0 else "incoming"


@dataclass(frozen=True)
class ExitRecord:
    t_b: float
    x_b: np.ndarray
    normal_b: np.ndarray
    grazing: bool


# ---------------------------------------------------------------------------
# exit maps

def _exit_time_quadratic(domain: ConvexDomain, x: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Largest root of xi(x - s v) = 0; exact for quadratic xi."""
    A = domain.quadratic_matrix
    xav = np.einsum("...i,ij,...j->...", x, A, v)
    vav = np.einsum("...i,ij,...j->...", v, A, v)
    c0 = domain.xi(x)
    disc = xav**2 - vav * c0
    disc = np.maximum(disc, 0.0)
    return np.maximum((xav + np.sqrt(disc)) / vav, 0.0)


def _exit_time_newton(domain: ConvexDomain, x: np.ndarray, v: np.ndarray,
                      tol: float = TOL_ROOT, max_iter: int = 80) -> np.ndarray:
    """Safeguarded Newton for the largest root of phi(s) = xi(x - s v).

    phi is strictly convex along the line, so Newton started above the
    largest root decreases monotonically onto it; a bracket floor at zero
    guards the incoming-boundary case where the root is 0.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    v = np.atleast_2d(np.asarray(v, dtype=float))
    speed = np.linalg.norm(v, axis=-1)
    s = (np.linalg.norm(x, axis=-1) + max(domain.semi_axes) + 1.0) / speed
    for _ in range(max_iter):
        y = x - s[:, None] * v
        phi = domain.xi(y)
        dphi = -np.einsum("...i,...i->...", v, domain.grad_xi(y))
        step = phi / dphi
        s_new = np.maximum(s - step, 0.0)
        if np.all(np.abs(s_new - s) <= tol * (1.0 + np.abs(s))):
            s = s_new
            break
        s = s_new
    return s


def exit_arrays(domain: ConvexDomain, x: np.ndarray, v: np.ndarray,
                tol_grazing: float = TOL_GRAZING):
    """Vectorized backward exit: (t_b, x_b, n(x_b), grazing mask).

    Rays with zero velocity or starting outside the domain are the
    caller's responsibility; see :func:`backward_exit` for the checked
    scalar interface.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    v = np.atleast_2d(np.asarray(v, dtype=float))
    if domain.kind == "ball":
        tb = _exit_time_quadratic(domain, x, v)
    else:
        tb = _exit_time_newton(domain, x, v)
    xb = x - tb[:, None] * v
    xb = domain.project_to_boundary(xb)
    nb = domain.normal(xb)
    nv = np.einsum("...i,...i->...", nb, v)
    speed = np.linalg.norm(v, axis=-1)
    grazing = np.abs(nv) < tol_grazing * np.maximum(speed, 1e-300)
    return tb, xb, nb, grazing


def backward_exit(domain: ConvexDomain, p: PhasePoint,
                  tol_boundary: float = TOL_BOUNDARY,
                  tol_grazing: float = TOL_GRAZING) -> ExitRecord:
    """Backward exit time/position of the free ray s -> x - s v."""
    x = np.asarray(p.x, dtype=float)
    v = np.asarray(p.v, dtype=float)
    if np.linalg.norm(v) == 0.0:
        raise ZeroVelocity("exit time is unbounded for v = 0")
    if float(domain.xi(x)) > tol_boundary:
        raise OutsideDomain(f"xi(x) = {float(domain.xi(x)):.3e} > {tol_boundary:.1e}")
    tb, xb, nb, grazing = exit_arrays(domain, x, v, tol_grazing)
    return ExitRecord(float(tb[0]), xb[0], nb[0], bool(grazing[0]))


def forward_exit(domain: ConvexDomain, p: PhasePoint, **kw) -> ExitRecord:
    """Forward exit x_f(x, v) = x + t_f v; mirror of the backward map."""
    rec = backward_exit(domain, PhasePoint(p.x, -np.asarray(p.v, dtype=float)), **kw)
    return ExitRecord(rec.t_b, rec.x_b, rec.normal_b, rec.grazing)


# ---------------------------------------------------------------------------
# derivatives of the exit map


def exit_gradients(domain: ConvexDomain, p: PhasePoint,
                   tol_grazing: float = TOL_GRAZING):
    """Analytic gradients of (t_b, x_b) in x and v at a non-grazing exit.

    Returns (grad_x_tb, grad_v_tb, grad_x_xb, grad_v_xb) with Jacobian
    convention J[i, j] = d out_i / d in_j.
    """
    rec = backward_exit(domain, p, tol_grazing=tol_grazing)
    v = np.asarray(p.v, dtype=float)
    n = rec.normal_b
    nv = float(n @ v)
    speed = float(np.linalg.norm(v))
    if abs(nv) <= tol_grazing * max(speed, 1e-300):
        raise GrazingSingularity(f"|n(x_b).v| = {abs(nv):.3e} too small")
    grad_x_tb = n / nv
    grad_v_tb = -rec.t_b * n / nv
    eye = np.eye(3)
    grad_x_xb = eye - np.outer(v, n) / nv
    grad_v_xb = -rec.t_b * grad_x_xb
    return grad_x_tb, grad_v_tb, grad_x_xb, grad_v_xb


# ---------------------------------------------------------------------------
# boundary charts


def _tangent_frame(n: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic orthonormal tangent pair for a unit vector n."""
    axis = np.zeros(3)
    axis[int(np.argmin(np.abs(n)))] = 1.0
    t1 = axis - (axis @ n) * n
    t1 /= np.linalg.norm(t1)
    t2 = np.cross(n, t1)
    return t1, t2


class Chart:
    """Orthogonal boundary chart eta_p around an anchor point.

    The third parameter direction leaves the boundary along the outward
    normal; x_{p,3} = 0 exactly on the boundary.  For the ball the chart
    is a rotated spherical parametrization, orthogonal on the whole
    patch; for the ellipsoid it is a normal-offset graph, orthogonal at
    the anchor.
    """

    def __init__(self, domain: ConvexDomain, anchor: np.ndarray,
                 patch_radius: float = 0.5):
        anchor = np.asarray(anchor, dtype=float)
        if abs(float(domain.xi(anchor))) > 1e-9:
            raise NotOnBoundary("chart anchor must satisfy xi(q) = 0")
        self.domain = domain
        self.anchor = anchor
        self.patch_radius = patch_radius
        n = domain.normal(anchor)
        self._n = n
        self._t1, self._t2 = _tangent_frame(n)

    # -- ball chart: eta = (1 + x3) * [q cos(x1)cos(x2) + t1 cos(x1)sin(x2) - t2 sin(x1)]

    def _ball_dir(self, x1, x2):
        q, t1, t2 = self.anchor, self._t1, self._t2
        c1, s1 = np.cos(x1), np.sin(x1)
        c2, s2 = np.cos(x2), np.sin(x2)
        d = (np.multiply.outer(c1 * c2, q) + np.multiply.outer(c1 * s2, t1)
             - np.multiply.outer(s1, t2))
        return d

    def _surface(self, x1, x2):
        """Boundary point at chart coordinates (x1, x2, 0)."""
        if self.domain.kind == "ball":
            return self._ball_dir(x1, x2)
        q, t1, t2, n = self.anchor, self._t1, self._t2, self._n
        A = self.domain.quadratic_matrix
        p = (q + np.multiply.outer(np.asarray(x1, dtype=float), t1)
             + np.multiply.outer(np.asarray(x2, dtype=float), t2))
        aq = float(n @ A @ n)
        b = np.einsum("...i,ij,j->...", p, A, n)
        c = np.einsum("...i,ij,...j->...", p, A, p) - 1.0
        disc = b**2 - aq * c
        if np.any(disc < 0):
            raise ChartMismatch("patch leaves the ellipsoid graph region")
        h = (-b + np.sqrt(disc)) / aq
        return p + np.multiply.outer(h, n)

    def eta(self, xp: np.ndarray) -> np.ndarray:
        xp = np.asarray(xp, dtype=float)
        x1, x2, x3 = xp[..., 0], xp[..., 1], xp[..., 2]
        if self.domain.kind == "ball":
            return (1.0 + x3)[..., None] * self._ball_dir(x1, x2)
        s = self._surface(x1, x2)
        nsurf = self.domain.normal(s)
        return s + x3[..., None] * nsurf

    def d_eta(self, xp: np.ndarray) -> np.ndarray:
        """Partials [..., i, :] = d eta / d x_{p,i}; boundary slice for the
        ellipsoid chart (x3 = 0 only)."""
        xp = np.asarray(xp, dtype=float)
        x1, x2, x3 = xp[..., 0], xp[..., 1], xp[..., 2]
        q, t1, t2 = self.anchor, self._t1, self._t2
        if self.domain.kind == "ball":
            c1, s1 = np.cos(x1), np.sin(x1)
            c2, s2 = np.cos(x2), np.sin(x2)
            r = 1.0 + x3
            d1 = (np.multiply.outer(-s1 * c2, q) + np.multiply.outer(-s1 * s2, t1)
                  - np.multiply.outer(c1, t2)) * r[..., None]
            d2 = (np.multiply.outer(-c1 * s2, q)
                  + np.multiply.outer(c1 * c2, t1)) * r[..., None]
            d3 = self._ball_dir(x1, x2)
            return np.stack([d1, d2, d3], axis=-2)
        if np.any(np.abs(x3) > 1e-14):
            raise ChartMismatch("ellipsoid chart derivatives available at x3 = 0 only")
        s = self._surface(x1, x2)
        g = self.domain.grad_xi(s)
        n = self._n
        denom = np.einsum("...i,i->...", g, n)
        dh1 = -np.einsum("...i,i->...", g, t1) / denom
        dh2 = -np.einsum("...i,i->...", g, t2) / denom
        d1 = t1 + np.multiply.outer(dh1, n)
        d2 = t2 + np.multiply.outer(dh2, n)
        d3 = self.domain.normal(s)
        return np.stack([np.broadcast_to(d1, d3.shape), np.broadcast_to(d2, d3.shape), d3],
                        axis=-2)

    def metric(self, xp: np.ndarray) -> np.ndarray:
        d = self.d_eta(xp)
        return np.einsum("...ik,...jk->...ij", d, d)

    def tmatrix(self, xp: np.ndarray) -> np.ndarray:
        """Rows d_i eta / sqrt(g_ii); orthonormal where the chart is orthogonal."""
        d = self.d_eta(xp)
        norms = np.linalg.norm(d, axis=-1, keepdims=True)
        return d / norms

    def v_components(self, xp: np.ndarray, v: np.ndarray) -> np.ndarray:
        return np.einsum("...ik,...k->...i", self.tmatrix(xp), v)

    def coords_of(self, y: np.ndarray) -> np.ndarray:
        """Chart coordinates (x1, x2) of a boundary point near the anchor."""
        y = np.asarray(y, dtype=float)
        if self.domain.kind == "ball":
            r = np.linalg.norm(y, axis=-1)
            w = y / r[..., None]
            x1 = -np.arcsin(np.clip(np.einsum("...i,i->...", w, self._t2), -1, 1))
            x2 = np.arctan2(np.einsum("...i,i->...", w, self._t1),
                            np.einsum("...i,i->...", w, self.anchor))
            return np.stack([x1, x2], axis=-1)
        d = y - self.anchor
        return np.stack([np.einsum("...i,i->...", d, self._t1),
                         np.einsum("...i,i->...", d, self._t2)], axis=-1)

    def in_patch(self, y: np.ndarray) -> bool:
        c = self.coords_of(y)
        return bool(np.all(np.linalg.norm(np.atleast_2d(c), axis=-1) < self.patch_radius))


def chart_at(domain: ConvexDomain, q: np.ndarray, patch_radius: float = 0.5) -> Chart:
    """Orthogonal chart anchored at a boundary point q."""
    return Chart(domain, q, patch_radius)


def exit_jacobian(domain: ConvexDomain, x1: np.ndarray, v1: np.ndarray,
                  chart2: Chart | None = None,
                  tol_grazing: float = TOL_GRAZING) -> float:
    """Jacobian determinant of v1 -> (chart coords of the next bounce, t_b).

    Equals |t_b|^3 / (sqrt(g_11 g_22) |n(x2) . v1|) in an orthogonal chart
    anchored where the ray lands.
    """
    x1 = np.asarray(x1, dtype=float)
    v1 = np.asarray(v1, dtype=float)
    rec = backward_exit(domain, PhasePoint(x1, v1), tol_grazing=tol_grazing)
    nv = float(rec.normal_b @ v1)
    if abs(nv) <= tol_grazing * max(float(np.linalg.norm(v1)), 1e-300):
        raise GrazingSingularity("tangential landing")
    if chart2 is None:
        chart2 = chart_at(domain, rec.x_b)
    else:
        if not chart2.in_patch(rec.x_b):
            raise ChartMismatch("landing point outside the chart patch")
    c = chart2.coords_of(rec.x_b)
    xp = np.array([c[0], c[1], 0.0])
    g = chart2.metric(xp)
    return rec.t_b**3 / (np.sqrt(g[0, 0] * g[1, 1]) * abs(nv))


# ---------------------------------------------------------------------------
# stochastic cycles


@dataclass
class StochasticCycle:
    """Backward wall-bounce cycle: boundary points x^k, outgoing draws v^k,
    remaining times t^k and flight times t_b^k."""

    start: PhasePoint
    t0: float
    points: list = field(default_factory=list)        # x^k on the boundary
    velocities: list = field(default_factory=list)    # sampled v^k, n.v^k > 0
    times: list = field(default_factory=list)         # t^k remaining
    flight_times: list = field(default_factory=list)  # t_b^k of segment from x^k
    reached_initial_time: bool = False
    max_bounces_exceeded: bool = False

    @property
    def n_bounces(self) -> int:
        return len(self.velocities)


def build_cycle(domain: ConvexDomain, p: PhasePoint, t0: float,
                velocity_sampler, max_bounces: int = 256,
                seed: int | None = None) -> StochasticCycle:
    """Iterate the backward exit map with freshly sampled outgoing velocities
    until the remaining time is exhausted or max_bounces is hit.

    velocity_sampler(x, n, rng) must return v with n . v > 0.  The cycle is
    seeded independently for reproducibility.
    """
    if t0 < 0:
        raise ValueError("t0 must be nonnegative")
    rng = np.random.default_rng(seed)
    cyc = StochasticCycle(start=p, t0=t0)
    rec = backward_exit(domain, p)
    t = t0 - rec.t_b
    x = rec.x_b
    while True:
        cyc.points.append(x)
        cyc.times.append(t)
        if t <= 0.0:
            cyc.reached_initial_time = True
            break
        if len(cyc.velocities) >= max_bounces:
            cyc.max_bounces_exceeded = True
            break
        n = domain.normal(x)
        v = velocity_sampler(x, n, rng)
        rec = backward_exit(domain, PhasePoint(x, v))
        cyc.velocities.append(v)
        cyc.flight_times.append(rec.t_b)
        t = t - rec.t_b
        x = rec.x_b
    return cyc


# ---------------------------------------------------------------------------
# sampling helpers (shared by tests and the verification harness)


def sample_interior(domain: ConvexDomain, n: int, rng: np.random.Generator,
                    max_xi: float = -1e-12) -> np.ndarray:
    """Uniform-ish interior points by rejection from the bounding box."""
    a = np.array(domain.semi_axes)
    out = np.empty((0, 3))
    while out.shape[0] < n:
        cand = rng.uniform(-1, 1, size=(2 * n + 64, 3)) * a
        cand = cand[domain.xi(cand) < max_xi]
        out = np.vstack([out, cand])
    return out[:n]


def sample_boundary(domain: ConvexDomain, n: int, rng: np.random.Generator) -> np.ndarray:
    """Points on the boundary (exactly uniform on the ball)."""
    g = rng.standard_normal((n, 3))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return g * np.array(domain.semi_axes)


def sample_unit_directions(n: int, rng: np.random.Generator) -> np.ndarray:
    g = rng.standard_normal((n, 3))
    return g / np.linalg.norm(g, axis=1, keepdims=True)
