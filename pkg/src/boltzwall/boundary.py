"""Non-isothermal wall temperature, wall Maxwellian, diffuse reflection,
the outgoing-flux projection, and the steady boundary remainder.

The wall Maxwellian M_W(x, v) = exp(-|v|^2 / 2 T_W(x)) / (2 pi T_W(x)^2)
is flux-normalized for every temperature: its incoming half-space flux
through the wall equals one, which is what makes diffuse reflection
conserve particle number.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .collision import MaxwellianFamily, gauss_legendre
from .errors import NotOnBoundary, WrongSide
from .geometry import Chart, ConvexDomain, _tangent_frame, unit_ball

_BOUNDARY_TOL = 1e-9


@dataclass(frozen=True)
class WallTemperature:
    """Wall temperature profile on the boundary of a convex domain.

    Profiles: "isothermal" (T = base) and "linear_z" (T = base + eps * x3,
    axisymmetric and smooth).  epsilon is the perturbation amplitude.
    """

    domain: ConvexDomain = field(default_factory=unit_ball)
    profile: str = "isothermal"
    epsilon: float = 0.0
    base: float = 1.0

    def __post_init__(self):
        if self.profile not in ("isothermal", "linear_z"):
            raise ValueError(f"unknown wall profile {self.profile!r}")
        if self.profile == "isothermal" and self.epsilon != 0.0:
            raise ValueError("isothermal profile takes epsilon = 0")

    def value(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.profile == "isothermal":
            return np.broadcast_to(np.asarray(self.base), x.shape[:-1]).copy()
        return self.base + self.epsilon * x[..., 2]

    def tangential_gradient(self, x: np.ndarray) -> np.ndarray:
        """Surface gradient of T_W at boundary points."""
        x = np.asarray(x, dtype=float)
        if self.profile == "isothermal":
            return np.zeros_like(x)
        g = np.zeros_like(x)
        g[..., 2] = self.epsilon
        n = self.domain.normal(x)
        return g - n * np.einsum("...i,...i->...", n, g)[..., None]

    def c1_deviation(self) -> float:
        """sup |T_W - base| + sup |surface gradient| (C^1 deviation size)."""
        if self.profile == "isothermal":
            return 0.0
        reach = max(abs(self.domain.semi_axes[2]), 1.0)
        return abs(self.epsilon) * (reach + 1.0)


def _require_boundary(domain: ConvexDomain, x: np.ndarray) -> None:
    if np.any(np.abs(domain.xi(x)) > _BOUNDARY_TOL):
        raise NotOnBoundary("point does not satisfy xi(x) = 0")


def wall_maxwellian(x: np.ndarray, v: np.ndarray, tw: WallTemperature) -> np.ndarray:
    """M_W(x, v) at a boundary point x."""
    _require_boundary(tw.domain, x)
    v = np.asarray(v, dtype=float)
    T = tw.value(x)
    vv = np.einsum("...i,...i->...", v, v)
    return np.exp(-vv / (2.0 * T)) / (2.0 * np.pi * T**2)


def wall_maxwellian_dT(x: np.ndarray, v: np.ndarray, tw: WallTemperature) -> np.ndarray:
    """Temperature derivative of M_W, used by the analytic boundary gradient."""
    T = tw.value(x)
    mw = wall_maxwellian(x, v, tw)
    vv = np.einsum("...i,...i->...", np.asarray(v, dtype=float), np.asarray(v, dtype=float))
    return mw * (vv / (2.0 * T**2) - 2.0 / T)


def steady_remainder(x: np.ndarray, v: np.ndarray, tw: WallTemperature) -> np.ndarray:
    """r(x, v) = (M_W(x, v) - mu(v)) / sqrt(mu(v)); identically zero for an
    isothermal wall at the base temperature."""
    _require_boundary(tw.domain, x)
    v = np.asarray(v, dtype=float)
    return (wall_maxwellian(x, v, tw) - MaxwellianFamily.mu(v)) / MaxwellianFamily.sqrt_mu(v)


# ---------------------------------------------------------------------------
# half-space quadrature at a wall point


@dataclass(frozen=True)
class HalfSpaceRule:
    """Polar-azimuthal product rule over {n . v > 0} (or < 0), aligned with n."""

    nodes: np.ndarray
    weights: np.ndarray
    normal_component: np.ndarray  # n . v at the nodes


def half_space_quadrature(n_hat: np.ndarray, side: int = +1, n_radial: int = 32,
                          n_polar: int = 24, n_azimuth: int = 12,
                          r_max: float = 10.0) -> HalfSpaceRule:
    """Quadrature over the half space side * (n . v) > 0.

    Radial Gauss nodes resolve Gaussian integrands on [0, r_max]; the polar
    variable is cos(angle to side * n) on (0, 1).
    """
    n_hat = np.asarray(n_hat, dtype=float)
    t1, t2 = _tangent_frame(n_hat)
    r, wr = gauss_legendre(n_radial, 0.0, r_max)
    c, wc = gauss_legendre(n_polar, 0.0, 1.0)
    phi = (np.arange(n_azimuth) + 0.5) * (2.0 * np.pi / n_azimuth)
    wphi = np.full(n_azimuth, 2.0 * np.pi / n_azimuth)
    s = np.sqrt(1.0 - c**2)
    dirs = (np.einsum("p,a,i->pai", s, np.cos(phi), t1)
            + np.einsum("p,a,i->pai", s, np.sin(phi), t2)
            + np.einsum("p,a,i->pai", c, np.ones(n_azimuth), side * n_hat))
    nodes = (r[:, None, None, None] * dirs[None]).reshape(-1, 3)
    weights = (wr[:, None, None] * r[:, None, None] ** 2
               * wc[None, :, None] * wphi[None, None, :]).reshape(-1)
    ncomp = nodes @ n_hat
    return HalfSpaceRule(nodes=nodes, weights=weights, normal_component=ncomp)


def outgoing_flux(f, x: np.ndarray, domain: ConvexDomain,
                  rule: HalfSpaceRule | None = None) -> float:
    """int_{n.u > 0} f(u) sqrt(mu(u)) (n . u) du at a boundary point."""
    _require_boundary(domain, x)
    n_hat = domain.normal(x)
    if rule is None:
        rule = half_space_quadrature(n_hat, side=+1)
    vals = np.asarray(f(rule.nodes), dtype=float)
    return float(rule.weights @ (vals * MaxwellianFamily.sqrt_mu(rule.nodes)
                                 * rule.normal_component))


def outgoing_flux_chart(f, x: np.ndarray, domain: ConvexDomain, chart: Chart,
                        n_radial: int = 32, n_polar: int = 24,
                        n_azimuth: int = 12) -> float:
    """Same boundary integral written in chart velocity components.

    Velocities are drawn on the chart half space {third component > 0} and
    mapped back through the transpose of the orthonormal frame; agreement
    with `outgoing_flux` checks the reparametrized boundary integration.
    """
    _require_boundary(domain, x)
    c = chart.coords_of(x)
    xp = np.array([c[0], c[1], 0.0])
    T = chart.tmatrix(xp)
    rule = half_space_quadrature(np.array([0.0, 0.0, 1.0]), side=+1,
                                 n_radial=n_radial, n_polar=n_polar,
                                 n_azimuth=n_azimuth)
    vcomp = rule.nodes                       # chart components, third > 0
    v_world = vcomp @ T                      # v = T^t vcomp
    vals = np.asarray(f(v_world), dtype=float)
    return float(rule.weights @ (vals * MaxwellianFamily.sqrt_mu(vcomp) * vcomp[:, 2]))


def diffuse_reflect(f_outgoing: float, x: np.ndarray, v: np.ndarray,
                    tw: WallTemperature) -> float:
    """Incoming trace (M_W / sqrt(mu)) * outgoing flux; n . v < 0 required."""
    _require_boundary(tw.domain, x)
    v = np.asarray(v, dtype=float)
    nv = float(tw.domain.normal(x) @ v)
    if nv >= 0.0:
        raise WrongSide(f"n . v = {nv:.3e} is not incoming")
    mw = float(wall_maxwellian(x, v, tw))
    return mw / float(MaxwellianFamily.sqrt_mu(v)) * float(f_outgoing)


def project_gamma(f_outgoing: float, x: np.ndarray, v: np.ndarray,
                  domain: ConvexDomain) -> float:
    """P f = sqrt(mu(v)) * outgoing flux; the boundary projection."""
    _require_boundary(domain, x)
    return float(MaxwellianFamily.sqrt_mu(np.asarray(v, dtype=float))) * float(f_outgoing)


def wall_flux_sampler(tw: WallTemperature):
    """Sampler of outgoing velocities from the wall-Maxwellian flux density.

    The normal speed is Rayleigh(sqrt(T)) and the tangential components are
    Gaussian with variance T, which is the density M_W(x, v) (n . v) on
    {n . v > 0} up to normalization.
    """

    def sample(x: np.ndarray, n_hat: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        T = float(tw.value(x))
        t1, t2 = _tangent_frame(n_hat)
        vn = np.sqrt(-2.0 * T * np.log(rng.uniform(low=np.finfo(float).tiny)))
        vt = rng.normal(scale=np.sqrt(T), size=2)
        return vn * n_hat + vt[0] * t1 + vt[1] * t2

    return sample
