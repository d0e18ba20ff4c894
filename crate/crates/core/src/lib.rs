//! Link-level simulation of a fast-fading desired link that overlaps a
//! known, line-of-sight interferer.
//!
//! The crate covers interference coefficient computation, joint channel
//! and interference estimation from pilots, several detectors, closed-form
//! performance predictions and a Monte-Carlo harness.

pub mod analysis;
pub mod channel;
pub mod detector;
pub mod error;
pub mod estimator;
pub mod harness;
pub mod modulation;
pub mod waveform;

pub use analysis::{
    cee_decomposition, equivalent_snr, optimize_pilot_density, optimize_pilot_density_model,
    predict_floors, predict_point, qpsk_symbol_error, ser_curve, throughput, write_prediction_csv,
    ErrorDecomposition, FloorPrediction, PredictionRow, ResidualSource, SerModel, SerModelConfig,
    SnrForm, ThroughputModel,
};
pub use channel::{
    evolve_channel, generate_frame, synthesize_observations, ChannelTrace, FadingParams,
    FrameLayout, FrameObservation,
};
pub use detector::{DetectionInterval, DetectorKind, EicMode, OddInterpolator};
pub use error::{Error, Result};
pub use estimator::{
    estimate, estimate_with_known_eic, EicEstimate, EstimationOutput, EstimatorParams,
    PilotObservations,
};
pub use harness::{
    emit_outputs, replay, run_sweep, run_trial, ExperimentConfig, MetricRow, MetricTable, Profile,
    Scenario,
};
pub use modulation::{C64, QPSK};
pub use waveform::{
    build_interference_matrix, compute_eic, compute_eic_at, eval_pulse, synthesize_interference,
    AlignmentConfig, EicVector, InterferenceSource, PulseKind, PulseShape, QuadratureOptions,
};
