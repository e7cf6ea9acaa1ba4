"""Asymptotic sum-rate analysis of correlated MIMO multiple-access channels
with external multi-antenna interference, for Gaussian, QPSK and 16-QAM
signaling, with statistical-CSI precoder optimization and a finite-size
Monte-Carlo cross-validator."""

from .channel import (
    AzimuthSpectrumParams,
    ChannelRealization,
    CorrelationPair,
    Scenario,
    TerminalProfile,
    load_scenario,
    sample_realization,
    scenario_from_dict,
    synthesize_correlation,
)
from .constellations import GAUSSIAN, QAM16, QPSK, Constellation
from .errors import (
    CapacityError,
    DomainError,
    MimomacError,
    NumericalError,
    ScenarioParseError,
)
from .mc_oracle import ExtrapolationFit, McEstimate, estimate_mi, extrapolate
from .precoder import (
    OptimizerParams,
    PrecoderOptState,
    optimize_discrete,
    optimize_gaussian,
    project_to_spectrum,
    waterfill,
)
from .replica import (
    ReplicaState,
    SumRateReport,
    assemble_sum_rate,
    select_solution,
    solve,
    solve_fixed_point,
    solve_fixed_point_uncorrelated,
)
from .su_channel import (
    EffectiveChannel,
    MmseMatrix,
    ScalarKernelResult,
    discrete_mi_exhaustive,
    discrete_mmse_matrix,
    gaussian_kernel,
    gaussian_mi,
    gaussian_mmse_matrix,
    parallel_mi,
    qam16_kernel,
    qpsk_kernel,
)

__version__ = "0.1.0"
