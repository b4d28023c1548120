"""Decentralized federated learning over noisy channels, simulated.

Gossip-based SGD variants (FedNDL1/2/3) and noisy model update tracking
(FedNMUT) on ring, torus, and fully connected client graphs, with a
reproducible experiment harness and executable checks of the supporting
analysis.
"""

from .algorithms import (
    ClientState,
    NetworkState,
    RoundInputs,
    init_network_state,
    init_states,
    round_fedndl1,
    round_fedndl2,
    round_fedndl3,
    round_fednmut,
    round_fednmut_matrix,
    stack_states,
    tracking_bias,
)
from .channel import NoiseSpec, StreamKey, derive_stream, sample_noise
from .data import Dataset, Shard, generate, partition_iid
from .harness import (
    ALGORITHMS,
    AveragedResult,
    LrSchedule,
    RunConfig,
    RunResult,
    eta_at,
    rate_fit,
    run_averaged,
    run_detailed,
    run_single,
    sweep,
)
from .metrics import RoundMetrics, consensus_error, mean_iterate, measure
from .objective import (
    ObjectiveConfig,
    full_local_gradient,
    global_gradient,
    global_loss,
    local_loss,
    ridge_optimum,
    stochastic_gradient,
)
from .theory_checks import (
    ConstantsEstimate,
    check_bias_zero_mean,
    check_contraction,
    estimate_sigma_sq,
    estimate_smoothness,
    estimate_zeta_sq,
    evaluate_theorem_bound,
)
from .topology import MixingMatrix, TopologySpec, build_mixing, neighbors, spectral_contraction

__all__ = [
    "ALGORITHMS",
    "AveragedResult",
    "ClientState",
    "ConstantsEstimate",
    "Dataset",
    "LrSchedule",
    "MixingMatrix",
    "NetworkState",
    "NoiseSpec",
    "ObjectiveConfig",
    "RoundInputs",
    "RoundMetrics",
    "RunConfig",
    "RunResult",
    "Shard",
    "StreamKey",
    "TopologySpec",
    "build_mixing",
    "check_bias_zero_mean",
    "check_contraction",
    "consensus_error",
    "derive_stream",
    "estimate_sigma_sq",
    "estimate_smoothness",
    "estimate_zeta_sq",
    "eta_at",
    "evaluate_theorem_bound",
    "full_local_gradient",
    "generate",
    "global_gradient",
    "global_loss",
    "init_network_state",
    "init_states",
    "local_loss",
    "mean_iterate",
    "measure",
    "neighbors",
    "partition_iid",
    "rate_fit",
    "ridge_optimum",
    "round_fedndl1",
    "round_fedndl2",
    "round_fedndl3",
    "round_fednmut",
    "round_fednmut_matrix",
    "run_averaged",
    "run_detailed",
    "run_single",
    "sample_noise",
    "spectral_contraction",
    "stack_states",
    "stochastic_gradient",
    "sweep",
    "tracking_bias",
]

__version__ = "0.1.0"
