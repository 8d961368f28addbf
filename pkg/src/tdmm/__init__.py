"""Model order reduction of LTI systems by time-domain moment matching."""

from importlib import resources

from .errors import TdmmError
from .lti import (
    LtiSystem,
    build_error_system,
    error_gramians,
    error_system_as_lti,
    eval_transfer,
    gramians,
    h2_norm,
    h2_norm_quadrature,
)
from .mateq import (
    place_poles,
    solve_lyapunov_ctrl,
    solve_lyapunov_obs,
    solve_sylvester,
    spectrum,
)
from .moments import (
    InterpolationData,
    ReducedModel,
    assemble_family_left,
    assemble_family_right,
    build_interpolation,
    check_interpolation,
    krylov_left,
    krylov_right,
    krylov_right_higher,
    moments_left,
    moments_right,
)
from .optimize import (
    DecisionVars,
    FixedStructure,
    OptimizerConfig,
    gradient_f,
    kkt_residual,
    multi_start_p1,
    objective_f,
    run_kkt,
    run_pm,
)
from .sdp import (
    add_positivity,
    build_relaxation,
    build_relaxation_p1,
    build_relaxation_p2,
    export_sdpa,
    parse_sdpa,
    recover,
    solve_small,
)

__version__ = "0.1.0"


def example_system_path(name="cart_pendulum"):
    """Filesystem path of a bundled example system file."""
    return str(resources.files(__name__).joinpath("data", name + ".json"))
