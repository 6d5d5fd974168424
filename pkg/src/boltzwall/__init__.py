"""boltzwall: kinetic-theory toolkit for convex domains with diffuse walls.

Characteristic geometry, kinetic distance weight, hard-sphere collision
operators, non-isothermal diffuse-reflection boundaries, steady/transient
linearized transport solvers, and a numerical verification harness for the
quantitative estimates the solver relies on.
"""

from .errors import (
    BoltzwallError,
    CFLWarning,
    ChartMismatch,
    ConfigError,
    DegenerateAlpha,
    GrazingSingularity,
    InterpolationOutOfRange,
    IterationDiverged,
    MaxBouncesExceeded,
    NegativeRadicand,
    NonPositiveNorm,
    NotOnBoundary,
    OutsideDomain,
    QuadratureUnconverged,
    SingularPoint,
    WrongSide,
    ZeroVelocity,
)
from .geometry import (
    Chart,
    ConvexDomain,
    ExitRecord,
    PhasePoint,
    StochasticCycle,
    backward_exit,
    build_cycle,
    chart_at,
    ellipsoid,
    exit_gradients,
    exit_jacobian,
    forward_exit,
    unit_ball,
)
from .kinetic_weight import ChiCutoff, KineticWeight
from .collision import (
    KernelParams,
    MaxwellianFamily,
    VelocityQuadrature,
    apply_Gamma,
    apply_K,
    apply_Q,
    grad_kernel,
    grad_kernel_signed,
    nu,
    nu_profile,
)
from .boundary import (
    WallTemperature,
    diffuse_reflect,
    half_space_quadrature,
    project_gamma,
    steady_remainder,
    wall_maxwellian,
)
from .solver import (
    Field,
    NormSeries,
    PhaseGrid,
    TransportSolver,
    fit_decay_rate,
    steady_solve,
    transient_solve,
    w1p_norm,
    weighted_gradient_norm,
)
from .verify import (
    LemmaCheck,
    cov_identity_check,
    nonlocal_to_local_check,
    normal_equivalence_check,
    run_all_checks,
    second_derivative_obstruction,
    tb_bound_check,
    w1p_singular_integral,
)

__version__ = "0.1.0"
