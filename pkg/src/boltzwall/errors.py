"""Typed exceptions shared across the package.

Operations near the grazing set raise typed errors instead of returning
NaN; quadratures report non-convergence explicitly.
"""


class BoltzwallError(Exception):
    """Base class for all package errors."""


class ZeroVelocity(BoltzwallError):
    """Exit time is unbounded for a zero velocity."""


class OutsideDomain(BoltzwallError):
    """Phase point lies outside the closed domain."""


class NotOnBoundary(BoltzwallError):
    """A boundary-only operation was called with an interior point."""


class GrazingSingularity(BoltzwallError):
    """Exit is tangential; derivative formulas are singular there."""


class ChartMismatch(BoltzwallError):
    """Requested point falls outside the chart patch."""


class MaxBouncesExceeded(BoltzwallError):
    """Cycle construction hit the bounce cap before the time horizon."""


class NegativeRadicand(BoltzwallError):
    """Kinetic-distance radicand came out negative: geometry bug."""


class DegenerateAlpha(BoltzwallError):
    """Kinetic weight is numerically zero (exactly grazing line)."""


class SingularPoint(BoltzwallError):
    """Collision kernel evaluated at its u = v singularity."""


class QuadratureUnconverged(BoltzwallError):
    """Two refinement levels disagree beyond the allowed tolerance."""


class WrongSide(BoltzwallError):
    """Diffuse reflection asked for an outgoing velocity."""


class InterpolationOutOfRange(BoltzwallError):
    """Interpolation query beyond the tabulated velocity range."""


class IterationDiverged(BoltzwallError):
    """Fixed-point or time iteration residual grew past max_iter."""


class CFLWarning(UserWarning):
    """Time step times V_max exceeds the near-wall stratum width."""


class NonPositiveNorm(BoltzwallError):
    """Decay fit hit an exactly zero norm sample."""


class ConfigError(BoltzwallError):
    """Run configuration failed validation; message names the key."""
