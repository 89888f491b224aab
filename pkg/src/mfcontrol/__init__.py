"""Particle-based toolkit for discounted infinite-horizon mean-field control.

Simulates controlled interacting-particle dynamics whose coefficients
depend on the empirical law, estimates discounted gains and
family-relative values with certified truncation tails, and mechanically
checks the structural properties of the value function (dynamic
programming decomposition, time and law invariance, fixed-point
consistency of the law flow, disintegration over the pre-start noise,
and elliptic HJB residuals on the space of measures) at desk scale.
"""

from .measures import (
    EmpiricalMeasure,
    second_moment,
    wasserstein1,
    wasserstein2,
    relative_entropy,
    entropy_h,
)
from .control import (
    ActionBox,
    Constant,
    Feedback,
    OpenLoop,
    shift_forward,
    shift_backward,
    scale_path,
    scale_path_inverse,
    counterexample_optimal_control,
    linear_feedback,
)
from .problems import (
    SDEProblem,
    LQSpec,
    counterexample_problem,
    lq_problem,
    lq_reference,
    lq_policy_search,
    bounded_problem,
    validate_hypotheses,
    HypothesisError,
)
from .sde import (
    ParticlePaths,
    InitialCondition,
    simulate,
    check_moment_bound,
    BlowUpError,
    dirac,
    gaussian,
    from_measure,
    from_quantile,
)
from .picard import (
    MeasureFlow,
    phi_map,
    solve_flow_picard,
    disintegration_check,
    flow_distance,
    concat_paths,
)
from .gain_value import (
    GainEstimate,
    ValueEstimate,
    estimate_gain,
    estimate_value,
    tail_bound,
    dpp_residual,
    time_invariance_check,
    law_invariance_check,
    continuity_probe,
    combined_tolerance,
)
from .hjb import (
    CandidateValue,
    lions_derivative_empirical,
    hjb_residual,
    parabolic_subsolution_transport,
    lq_candidate_value,
)

__version__ = "0.1.0"
