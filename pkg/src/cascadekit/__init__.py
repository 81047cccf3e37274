"""Analysis and simulation of infinite cascade systems ``x'_k = A0 x_k + A1 x_{k-1}``."""

__version__ = "0.1.0"

from .errors import CascadeError  # noqa: E402
from .polyrat import Poly, RatFun, reduce_coprime, resultant  # noqa: E402
from .cascade import (  # noqa: E402
    AssumptionReport,
    CascadeSystem,
    CharacteristicFn,
    check_assumptions,
    extract_char_fn,
    kernel_basis,
    limit_lift,
    resolvent_growth_parameter,
)
from .semigroup import (  # noqa: E402
    SeqState,
    TailRule,
    Trajectory,
    apply_generator,
    apply_resolvent,
    apply_semigroup,
    block_kernels,
    cesaro_classify,
    fit_decay_rate,
    simulate,
)
from .spectral import (  # noqa: E402
    approx_eigenvector,
    check_contractivity,
    check_uniform_boundedness,
    resolvent_estimate,
    trace_level_set,
)
from .models import (  # noqa: E402
    PlatoonParams,
    PsiRegion,
    RobotChain,
    m_of_r,
    mlog_inverse,
    platoon_system,
    robot_kernel_closed_form,
    robot_system,
)
