"""Kinetic distance weight: the near-invariant-along-characteristics
quantity that cancels the boundary gradient singularity.

alpha_tilde(x, v) = sqrt(|v . grad xi(x)|^2 - 2 xi(x) (v . Hess xi(x) . v))
is nonnegative on the closed domain by convexity, vanishes exactly on the
grazing set, and is comparable to |n(x_b(x, v)) . v|.  alpha = chi(alpha_tilde)
caps it at one through a smooth cutoff.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateAlpha, NegativeRadicand, OutsideDomain
from .geometry import ConvexDomain, PhasePoint, backward_exit

DEGENERACY_CUTOFF = 1e-14


@dataclass(frozen=True)
class ChiCutoff:
    """Smooth non-decreasing cutoff: identity below 1/2, one above 2.

    On (1/2, 2) the slope is (1 - t)^4 (1 + 4t) with t = (s - 1/2)/1.5,
    giving the closed form chi(s) = 1 - (1 - t)^5 (1 + 2t)/2.  This is the
    lowest-degree C^2 Hermite interior piece that is also monotone with
    slope in [0, 1]; the quintic with the same endpoint data overshoots
    into negative slope.
    """

    lower: float = 0.5
    upper: float = 2.0

    def __call__(self, s: np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        t = np.clip((s - self.lower) / (self.upper - self.lower), 0.0, 1.0)
        mid = 1.0 - (1.0 - t) ** 5 * (1.0 + 2.0 * t) / 2.0
        return np.where(s <= self.lower, s, np.where(s >= self.upper, 1.0, mid))

    def prime(self, s: np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        t = np.clip((s - self.lower) / (self.upper - self.lower), 0.0, 1.0)
        mid = (1.0 - t) ** 4 * (1.0 + 4.0 * t)
        return np.where(s <= self.lower, 1.0, np.where(s >= self.upper, 0.0, mid))


@dataclass(frozen=True)
class KineticWeight:
    """alpha and alpha_tilde for a fixed convex domain and cutoff."""

    domain: ConvexDomain
    chi: ChiCutoff = ChiCutoff()

    def alpha_tilde(self, x: np.ndarray, v: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        g = self.domain.grad_xi(x)
        vg = np.einsum("...i,...i->...", v, g)
        hess = self.domain.hess_xi(x)
        vhv = np.einsum("...i,...ij,...j->...", v, hess, v)
        radicand = vg**2 - 2.0 * self.domain.xi(x) * vhv
        if np.any(radicand < -1e-12):
            worst = float(np.min(radicand))
            raise NegativeRadicand(f"radicand {worst:.3e} < -1e-12 (point outside?)")
        return np.sqrt(np.maximum(radicand, 0.0))

    def alpha(self, x: np.ndarray, v: np.ndarray) -> np.ndarray:
        return self.chi(self.alpha_tilde(x, v))

    def velocity_lemma_ratio(self, x: np.ndarray, v: np.ndarray, s: float) -> float:
        """alpha(x - s v, v) / alpha(x, v) along the backward characteristic."""
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        y = x - s * v
        if float(self.domain.xi(y)) > 1e-9:
            raise OutsideDomain("x - s v leaves the closed domain")
        a0 = float(self.alpha(x, v))
        if a0 < DEGENERACY_CUTOFF:
            raise DegenerateAlpha("alpha(x, v) below degeneracy cutoff")
        return float(self.alpha(y, v)) / a0

    def boundary_equivalence_ratio(self, x: np.ndarray, v: np.ndarray) -> float:
        """|n(x_b(x, v)) . v| / alpha_tilde(x, v); bounded above and below."""
        at = float(self.alpha_tilde(x, v))
        if at < DEGENERACY_CUTOFF:
            raise DegenerateAlpha("alpha_tilde(x, v) below degeneracy cutoff")
        rec = backward_exit(self.domain, PhasePoint(x, v))
        return abs(float(rec.normal_b @ np.asarray(v, dtype=float))) / at


def ball_alpha_tilde(x: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Closed form on the unit ball: 2 sqrt((v.x)^2 + (1 - |x|^2) |v|^2)."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    vx = np.einsum("...i,...i->...", v, x)
    return 2.0 * np.sqrt(vx**2 + (1.0 - np.einsum("...i,...i->...", x, x))
                         * np.einsum("...i,...i->...", v, v))


def fit_velocity_constant(weight: KineticWeight, xs: np.ndarray, vs: np.ndarray,
                          ss: np.ndarray, use_tilde: bool = False) -> float:
    """Smallest C with e^{-C|v|s} <= alpha(x - s v, v)/alpha(x, v) <= e^{C|v|s}
    over the given samples (s > 0, x - s v inside)."""
    fn = weight.alpha_tilde if use_tilde else weight.alpha
    a0 = fn(xs, vs)
    a1 = fn(xs - ss[:, None] * vs, vs)
    keep = (a0 > DEGENERACY_CUTOFF) & (a1 > DEGENERACY_CUTOFF) & (ss > 0)
    speed = np.linalg.norm(vs, axis=-1)
    logratio = np.abs(np.log(a1[keep]) - np.log(a0[keep]))
    return float(np.max(logratio / (speed[keep] * ss[keep])))
