"""SAR-aware precoding and fluid-antenna position optimization."""

from .channel import (
    ChannelRealization,
    ConfigurationError,
    PathSet,
    Region,
    channel_matrix,
    channel_vector,
    dbm_to_watts,
    field_response_vector,
    min_pairwise_distance,
    min_weighted_sinr,
    propagation_delta,
    sample_channel,
    sinr,
    sinr_all,
    uniform_line_layout,
)
from .exposure import (
    SarModel,
    identity_sar_model,
    paper_sar_matrix,
    sar_value,
    synthesize_sar_matrix,
)
from .solver import (
    DegenerateUserError,
    SinrTargets,
    SolveReport,
    SolverConfig,
    SolverError,
    coupling_residual,
    inner_loop,
    polish_scale,
    position_gradient,
    position_majorizer,
    position_objective,
    position_qp,
    solve_auxiliary,
    solve_precoder,
    solve_sar_min,
    update_position,
)
from .balance import BalanceConfig, BalanceResult, default_upper_bracket, solve_sinr_balance
from .baselines import (
    ApsResult,
    BaselineConfig,
    adaptive_backoff,
    solve_aps,
    solve_fpa,
    solve_without_sar,
)
from .harness import ExperimentPlan, RunRecord, convergence_trace, run_sweep

__version__ = "0.1.0"
