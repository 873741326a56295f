"""Link-level simulator for an IRS-assisted SIMO uplink with few-bit ADCs.

Library modules:

* channels: system model, channel generation, composite channel
* quantization: Lloyd-Max distortion factor, quantizer, achievable rate
* beamforming: SDR, gradient ascent, phase matching, exhaustive oracle
* estimation: 1-bit ML/LS/LMMSE channel estimators and the Fisher bound
* experiments: deterministic Monte-Carlo sweeps with CSV output
* cli: `irs-sim` command-line front end
"""

from .channels import (
    ChannelSet,
    IrsState,
    PhaseVector,
    SystemConfig,
    cascade_matrix,
    composite_channel,
    crandn,
    gen_channels,
)
from .quantization import (
    QuantizerSpec,
    achievable_rate,
    distortion_factor,
    low_snr_rate_proxy,
    quantize,
)
from .beamforming import (
    GdConfig,
    HomogenizedObjective,
    OracleObjective,
    SdrConvergenceError,
    SdrOptions,
    SdrSolution,
    brute_force_oracle,
    full_rate_objective,
    gd_beamform,
    homogenize,
    objective_trace,
    phase_match,
    randomize_round,
    rate_gradient,
    sdr_beamform,
    solve_sdr,
)
from .estimation import (
    AscentOptions,
    EstimationResult,
    FisherInfo,
    PilotFrame,
    PilotPhase,
    RealizedPilotSystem,
    dft_patterns,
    fisher_matrix,
    gen_pilots,
    lmmse_estimate,
    ls_estimate,
    ml_direct,
    ml_reflect,
    nmse,
    phase_one_regressor,
    phase_two_frame,
    realize_system,
)
from .experiments import (
    SweepSpec,
    TrialRecord,
    estimation_sweep_preset,
    rate_sweep_preset,
    records_to_csv,
    run_estimation_sweep,
    run_rate_sweep,
    snr_db_to_sigma_w2,
    summarize,
)

__version__ = "0.1.0"
