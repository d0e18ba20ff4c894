//! Fixtures shared by the benchmarks.

use ovlink_core::harness::{OperatingPoint, PointContext};
use ovlink_core::{ExperimentConfig, FrameObservation, Scenario};

/// Interference-present operating point at 20 dB on the desk profile.
pub fn context(n_p: usize, n_d: usize) -> (ExperimentConfig, PointContext) {
    let cfg = ExperimentConfig {
        n_p,
        n_d: vec![n_d],
        ..ExperimentConfig::default()
    };
    let eic = cfg.eic().expect("desk EICs");
    let point = OperatingPoint {
        scenario: Scenario::InterferencePresent,
        alpha: 0.99,
        n_d,
        snr_db: 20.0,
    };
    let ctx = PointContext::new(&cfg, &eic, point).expect("valid point");
    (cfg, ctx)
}

pub fn frame(ctx: &PointContext) -> FrameObservation {
    ctx.frame(0).expect("frame synthesizes")
}
