"""Phase-matching QKD simulator, finite-size decoy analyzer, and rate models."""

__version__ = "0.1.0"

from .backend import active_backend
from .channel import (
    ChannelModel,
    MDIParams,
    bessel_i0,
    bit_error_matched,
    bit_error_pm,
    gain_pm,
    key_rate_mdi,
    key_rate_pm_asymptotic,
    plob_bound,
    rate_distance_curve,
    tgw_bound,
    yield_k,
)
from .datasets import (
    ExperimentDataset,
    SliceCountMatrix,
    compute_observables,
    load_dataset,
    load_slice_matrix,
    reproduce,
)
from .finitekey import (
    BoundedValue,
    DecoyEstimate,
    DecoyInputs,
    KeyReport,
    chernoff_direct,
    chernoff_inverse,
    estimate_decoys,
    expected_k_photon_sends,
    g2,
    key_length,
    m1_lower_in_group,
    optimize_group_set,
    tally_decoy_inputs,
    y1_lower,
)
from .protocol import (
    DetectionOutcome,
    Detector,
    InvalidInputError,
    ProtocolParams,
    RoundRecord,
    TallyTable,
    binary_entropy,
    sift,
    slice_of_phase,
)
from .simulate import (
    DriftProcess,
    TrainLayout,
    advance_drift,
    detect_round,
    estimate_phase_slice,
    run_protocol,
)

__all__ = [
    "ChannelModel", "MDIParams", "bessel_i0", "bit_error_matched", "bit_error_pm",
    "gain_pm", "key_rate_mdi", "key_rate_pm_asymptotic", "plob_bound",
    "rate_distance_curve", "tgw_bound", "yield_k",
    "ExperimentDataset", "SliceCountMatrix", "compute_observables", "load_dataset",
    "load_slice_matrix", "reproduce",
    "BoundedValue", "DecoyEstimate", "DecoyInputs", "KeyReport", "chernoff_direct",
    "chernoff_inverse", "estimate_decoys", "expected_k_photon_sends", "g2",
    "key_length", "m1_lower_in_group", "optimize_group_set", "tally_decoy_inputs",
    "y1_lower",
    "DetectionOutcome", "Detector", "InvalidInputError", "ProtocolParams",
    "RoundRecord", "TallyTable", "binary_entropy", "sift", "slice_of_phase",
    "DriftProcess", "TrainLayout", "advance_drift", "detect_round",
    "estimate_phase_slice", "run_protocol",
    "active_backend",
]
