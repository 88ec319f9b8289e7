"""Recovery of layered latent variables from linearly mixed observations.

Observed vectors are an unknown full-rank linear mixture of latents generated
by a nonlinear additive-Gaussian structural model.  The variance pattern of
score Jacobians singles out the sink coordinates; peeling them off round by
round recovers every latent up to mixing with its own upstream layers, and a
downward regression pass extracts the individual noise variables.
"""

from .graph import (
    Dag,
    GraphError,
    Mechanism,
    Scm,
    affine_mechanism,
    constant_mechanism,
    directionally_nonlinear,
    induced_scm,
    layers,
    log_cosh,
    make_mechanism,
    make_scm,
    register_mechanism,
    relatives,
    squared_norm,
    topological_order,
    zero_mechanism,
)
from .synth import (
    MixingMatrix,
    SampleBatch,
    ScaleInfo,
    min_max_scale,
    mix,
    sample_dag,
    sample_mixing,
    sample_noise_variances,
    sample_scaled,
    sample_scm,
)
from .jacobians import (
    ESTIMATED,
    LATENT,
    OBSERVED,
    JacobianBatch,
    center,
    diag_variance,
    pull_back,
)
from .oracle import (
    jacobian_latent,
    latent_to_observed,
    reparameterize_affine,
    score_latent,
    score_to_observed,
)
from .stein import SteinConfig, jacobian_ser, median_bandwidth, stein_jacobian, stein_score
from .solver import (
    NullDirectionResult,
    SolverConfig,
    find_null_direction,
    min_feasibility_level,
    prune_outliers,
)
from .recovery import (
    NoiseResult,
    RecoveryResult,
    RegressionConfig,
    RoundRecord,
    StalledRecoveryError,
    UpstreamReport,
    check_upstream_structure,
    oracle_refresh,
    recover_latents,
    recover_noise,
    stein_refresh,
)
from .evaluate import (
    EvalReport,
    correlation_matrix,
    evaluate_signals,
    mac,
    perturb_jacobians,
)
from .experiment import (
    ExperimentConfig,
    GRAPH_PRESETS,
    build_model,
    resolve_graph,
    run_experiment,
    ser_sweep,
)

__version__ = "0.1.0"
