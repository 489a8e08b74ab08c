"""Large-deviation rate functions for mean-field particle systems and their McKean-Vlasov limit."""

from .action import (
    ActionBreakdown,
    PairModel,
    discrete_action,
    general_system_action,
    rate_j_infinity,
    rate_j_infinity_general,
    rate_j_n_closed,
    typical_companion_bound,
    system_action,
    upsilon_potential,
)
from .config import ExperimentConfig, parse_config
from .errors import BlowUpError, ConfigError, HypothesisError, InputError, OptimizerError
from .flow import Path, TimeGrid, solve_companion_flow, solve_deterministic_flow
from .potentials import (
    HypothesisReport,
    InteractionFlow,
    MeanFieldKernel,
    MultiPoly,
    RadialInteraction,
    eval_confining,
    eval_interaction,
    eval_interaction_flow,
    validate_hypotheses,
)
from .simulate import (
    DeviationEvent,
    RareEventEstimate,
    SimConfig,
    SlopeEstimate,
    estimate_deviation_probability,
    ldp_slope,
    simulate_meanfield,
    simulate_selfstabilizing,
)
from .variational import (
    MinimizationResult,
    OptimizerConfig,
    ResidualField,
    ShellInfimum,
    deviation_shell_infimum,
    euler_lagrange_residual,
    minimize_companions,
    system_action_gradient,
)

__version__ = "0.1.0"
