//! Seeded Monte-Carlo experiments: configuration, per-trial simulation,
//! aggregation and data export.
//!
//! Trial `t` of every operating point draws from
//! `ChaCha8Rng::seed_from_u64(master_seed)` on stream `t`, so all points of a
//! sweep share common random numbers and any row can be replayed alone.

use crate::analysis::overhead_factor;
use crate::channel::{
    evolve_channel, generate_frame, synthesize_observations, FadingParams, FrameLayout,
    FrameObservation,
};
use crate::detector::{
    build_intervals, imap_detect, iterative_detect, odd_detect, smap_detect, DetectorKind, EicMode,
    IterationRecord, OddInterpolator, SMAP_MAX_ND,
};
use crate::error::{Error, Result};
use crate::estimator::{estimate, estimate_with_known_eic, EstimatorParams, PilotObservations};
use crate::modulation::{C64, QPSK};
use crate::waveform::{
    build_interference_matrix, compute_eic, AlignmentConfig, EicVector, InterferenceSource,
    PulseShape,
};
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    InterferenceFree,
    InterferencePresent,
}

impl Scenario {
    pub fn name(&self) -> &'static str {
        match self {
            Scenario::InterferenceFree => "interference-free",
            Scenario::InterferencePresent => "interference-present",
        }
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "interference-free" | "if" | "free" => Ok(Scenario::InterferenceFree),
            "interference-present" | "ip" | "present" => Ok(Scenario::InterferencePresent),
            other => Err(Error::InvalidConfig(format!("unknown scenario {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    /// 21 pilots, 10^3 trials.
    Desk,
    /// 51 pilots, 10^4 trials.
    Paper,
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            other => Err(Error::InvalidConfig(format!("unknown profile {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenarios: Vec<Scenario>,
    pub n_r: usize,
    pub alphas: Vec<f64>,
    pub snr_db: Vec<f64>,
    pub n_p: usize,
    pub n_d: Vec<usize>,
    /// Interferer to desired bandwidth ratio `M`.
    pub bandwidth_ratio: usize,
    /// Number of EICs `L`.
    pub eic_len: usize,
    /// Carrier spacing times the desired symbol period.
    pub freq_offset: f64,
    pub roll_off: f64,
    /// Interference power relative to the desired signal, in dB.
    pub inr_db: f64,
    pub detectors: Vec<DetectorKind>,
    pub trials: usize,
    pub master_seed: u64,
    pub max_iters: usize,
    pub output: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::profile(Profile::Desk)
    }
}

impl ExperimentConfig {
    pub fn profile(profile: Profile) -> Self {
        let (n_p, trials) = match profile {
            Profile::Desk => (21, 1_000),
            Profile::Paper => (51, 10_000),
        };
        Self {
            scenarios: vec![Scenario::InterferenceFree, Scenario::InterferencePresent],
            n_r: 2,
            alphas: vec![0.99],
            snr_db: vec![10.0, 20.0, 30.0, 40.0, 50.0, 60.0],
            n_p,
            n_d: vec![3],
            bandwidth_ratio: 2,
            eic_len: 4,
            freq_offset: 1.0,
            roll_off: 0.25,
            inr_db: 0.0,
            detectors: vec![
                DetectorKind::SMap,
                DetectorKind::IMap,
                DetectorKind::Odd,
                DetectorKind::Iterative,
            ],
            trials,
            master_seed: 1,
            max_iters: 10,
            output: None,
        }
    }

    /// Loads a JSON or TOML file, chosen by extension; missing fields take
    /// the desk defaults.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let cfg: Self = match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => {
                toml::from_str(&text).map_err(|e| Error::Serialization(e.to_string()))?
            }
            _ => serde_json::from_str(&text)?,
        };
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.detectors.is_empty() {
            return bad("detector set is empty".into());
        }
        if self.scenarios.is_empty()
            || self.alphas.is_empty()
            || self.snr_db.is_empty()
            || self.n_d.is_empty()
        {
            return bad("scenario, alpha, SNR and n_d lists must be non-empty".into());
        }
        if self.trials == 0 {
            return bad("trials must be >= 1".into());
        }
        if self.n_r == 0 {
            return bad("n_r must be >= 1".into());
        }
        if self.n_p < 2 {
            return bad("n_p must be >= 2".into());
        }
        if self.n_d.contains(&0) {
            return bad("n_d must be >= 1".into());
        }
        if let Some(a) = self.alphas.iter().find(|a| !(**a > 0.0 && **a <= 1.0)) {
            return bad(format!("alpha {a} outside (0, 1]"));
        }
        if let Some(s) = self.snr_db.iter().find(|s| !s.is_finite()) {
            return bad(format!("SNR {s} dB is not finite"));
        }
        if !self.inr_db.is_finite() {
            return bad("INR must be finite".into());
        }
        if self.detectors.contains(&DetectorKind::SMap) {
            if let Some(n) = self.n_d.iter().find(|n| **n > SMAP_MAX_ND) {
                return bad(format!("S-MAP supports n_d <= {SMAP_MAX_ND}, got {n}"));
            }
            if self.alphas.contains(&1.0) {
                return bad("S-MAP needs alpha < 1".into());
            }
        }
        if self.detectors.contains(&DetectorKind::Iterative) && self.max_iters == 0 {
            return bad("max_iters must be >= 1".into());
        }
        self.alignment().validate()?;
        PulseShape::root_raised_cosine(self.roll_off, 1.0).validate()
    }

    pub fn alignment(&self) -> AlignmentConfig {
        AlignmentConfig {
            interferer_span: self.eic_len,
            ..AlignmentConfig::new(self.bandwidth_ratio, self.freq_offset)
        }
    }

    /// EIC vector for this configuration, desired symbol period 1.
    pub fn eic(&self) -> Result<EicVector> {
        let m = self.bandwidth_ratio as f64;
        let p_d = PulseShape::root_raised_cosine(self.roll_off, 1.0);
        let p_i = PulseShape::root_raised_cosine(self.roll_off, 1.0 / m);
        compute_eic(&p_d, &p_i, &self.alignment())
    }

    /// Every operating point in sweep order.
    pub fn points(&self) -> Vec<OperatingPoint> {
        let mut out = Vec::new();
        for &scenario in &self.scenarios {
            for &alpha in &self.alphas {
                for &n_d in &self.n_d {
                    for &snr_db in &self.snr_db {
                        out.push(OperatingPoint {
                            scenario,
                            alpha,
                            n_d,
                            snr_db,
                        });
                    }
                }
            }
        }
        out
    }

    pub fn hash(&self) -> String {
        let payload = serde_json::to_string(self).expect("plain data serializes");
        hex::encode(&Sha256::digest(payload.as_bytes())[..8])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub scenario: Scenario,
    pub alpha: f64,
    pub n_d: usize,
    pub snr_db: f64,
}

/// Everything a trial needs that does not depend on the trial index.
#[derive(Debug, Clone)]
pub struct PointContext {
    pub point: OperatingPoint,
    pub layout: FrameLayout,
    pub fading: FadingParams,
    pub eic: Vec<C64>,
    pub power_scale: f64,
    pub bandwidth_ratio: usize,
    pub detectors: Vec<DetectorKind>,
    pub max_iters: usize,
    pub master_seed: u64,
    odd: Option<OddInterpolator>,
}

impl PointContext {
    pub fn new(cfg: &ExperimentConfig, eic: &EicVector, point: OperatingPoint) -> Result<Self> {
        let layout = FrameLayout::new(cfg.n_p, point.n_d);
        let fading = FadingParams::from_snr_db(point.alpha, cfg.n_r, point.snr_db);
        fading.validate()?;
        let power_scale = match point.scenario {
            Scenario::InterferenceFree => 0.0,
            Scenario::InterferencePresent => 10f64.powf(cfg.inr_db / 20.0) / eic.norm(),
        };
        let odd = if cfg.detectors.contains(&DetectorKind::Odd) {
            Some(OddInterpolator::new(&layout, &fading)?)
        } else {
            None
        };
        Ok(Self {
            point,
            layout,
            fading,
            eic: eic.c.clone(),
            power_scale,
            bandwidth_ratio: cfg.bandwidth_ratio,
            detectors: cfg.detectors.clone(),
            max_iters: cfg.max_iters,
            master_seed: cfg.master_seed,
            odd,
        })
    }

    /// Synthesizes the frame of trial `trial`.
    pub fn frame(&self, trial: u64) -> Result<FrameObservation> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(trial);
        let len = self.layout.frame_length();
        let l = self.eic.len();
        let m = self.bandwidth_ratio;
        let x = generate_frame(&self.layout, &mut rng);
        let trace = evolve_channel(&self.fading, len, &mut rng);
        let src = InterferenceSource::random(
            self.fading.n_r,
            InterferenceSource::symbols_needed(len, m, l),
            self.power_scale,
            &mut rng,
        );
        let b = (0..len)
            .map(|k| build_interference_matrix(&src, k, l, m))
            .collect::<Result<Vec<_>>>()?;
        synthesize_observations(
            &self.layout,
            &x,
            trace,
            b,
            &self.eic,
            self.fading.sigma2,
            &mut rng,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionRecord {
    pub detector: DetectorKind,
    pub errors: usize,
    pub symbols: usize,
    pub iterations: Option<usize>,
    pub converged: Option<bool>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub history: Vec<IterationRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRecord {
    pub trial: u64,
    /// `(1 / (N_p N_r)) sum_n |h_n - h~_n|^2`.
    pub cmse: f64,
    /// `(1 / (N_p N_r)) sum_n |B_n (c - c~)|^2`.
    pub residual_power: f64,
    /// `sigma_h^2 / (sigma^2 + residual_power)`, linear.
    pub sinr: f64,
    pub detections: Vec<DetectionRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialFailure {
    pub trial: u64,
    pub kind: String,
    pub message: String,
}

fn count_errors(
    obs: &FrameObservation,
    positions: impl Iterator<Item = usize>,
    indices: &[usize],
) -> usize {
    positions
        .zip(indices)
        .filter(|(k, &idx)| QPSK[idx] != obs.x_true[*k])
        .count()
}

/// One frame end to end: estimation, cancellation and every configured
/// detector.
pub fn run_trial(ctx: &PointContext, trial: u64) -> Result<TrialRecord> {
    let obs = ctx.frame(trial)?;
    let layout = &obs.layout;
    let n_r = obs.n_r() as f64;
    let pilots = PilotObservations::from_frame(&obs);
    let params = EstimatorParams::for_layout(layout, &ctx.fading);
    let out = match ctx.point.scenario {
        Scenario::InterferencePresent => estimate(&pilots, &params)?,
        Scenario::InterferenceFree => {
            estimate_with_known_eic(&pilots, &vec![C64::new(0.0, 0.0); ctx.eic.len()], &params)?
        }
    };
    let c_tilde = &out.eic.c_tilde;
    let h_tilde = &out.channels.h_tilde;
    let norm = layout.n_p as f64 * n_r;
    let pilot_pos: Vec<usize> = layout.pilot_positions().collect();
    let cmse = pilot_pos
        .iter()
        .zip(h_tilde)
        .map(|(&k, h)| (h - &obs.trace.h[k]).norm_squared())
        .sum::<f64>()
        / norm;
    let err = DVector::from_iterator(
        ctx.eic.len(),
        obs.c_true.iter().zip(c_tilde).map(|(c, e)| c - e),
    );
    let residual_power = pilot_pos
        .iter()
        .map(|&k| (&obs.b[k] * &err).norm_squared())
        .sum::<f64>()
        / norm;
    let sinr = ctx.fading.sigma_h2 / (ctx.fading.sigma2 + residual_power);

    let intervals = build_intervals(&obs, h_tilde, c_tilde, &ctx.fading);
    let interval_positions = || {
        (0..layout.n_p - 1)
            .flat_map(move |n| (1..=layout.n_d).map(move |o| layout.pilot_position(n) + o))
    };
    let n_data = layout.n_data();
    let mut imap_cache: Option<Vec<usize>> = None;
    let mut imap_indices = || -> Vec<usize> {
        imap_cache
            .get_or_insert_with(|| {
                intervals
                    .iter()
                    .flat_map(|iv| imap_detect(iv).indices)
                    .collect()
            })
            .clone()
    };

    let mut detections = Vec::with_capacity(ctx.detectors.len());
    for &kind in &ctx.detectors {
        let record = match kind {
            DetectorKind::SMap => {
                let mut indices = Vec::with_capacity(n_data);
                for iv in &intervals {
                    indices.extend(smap_detect(iv, SMAP_MAX_ND)?);
                }
                plain(
                    kind,
                    count_errors(&obs, interval_positions(), &indices),
                    n_data,
                )
            }
            DetectorKind::IMap => plain(
                kind,
                count_errors(&obs, interval_positions(), &imap_indices()),
                n_data,
            ),
            DetectorKind::Odd => {
                let interp = ctx.odd.as_ref().ok_or(Error::SingularInterpolation)?;
                let d = odd_detect(&obs, c_tilde, interp);
                plain(
                    kind,
                    count_errors(&obs, interp.data_positions.iter().copied(), &d.indices),
                    n_data,
                )
            }
            DetectorKind::Iterative => {
                let mut initial = obs.x_true.clone();
                for (k, idx) in interval_positions().zip(imap_indices()) {
                    initial[k] = QPSK[idx];
                }
                let mode = match ctx.point.scenario {
                    Scenario::InterferencePresent => EicMode::Estimate,
                    Scenario::InterferenceFree => {
                        EicMode::Known(vec![C64::new(0.0, 0.0); ctx.eic.len()])
                    }
                };
                let outcome =
                    iterative_detect(&obs, &initial, cmse, &ctx.fading, &mode, ctx.max_iters)?;
                let errors = layout
                    .data_positions()
                    .filter(|&k| outcome.symbols[k] != obs.x_true[k])
                    .count();
                DetectionRecord {
                    detector: kind,
                    errors,
                    symbols: n_data,
                    iterations: Some(outcome.iterations_used),
                    converged: Some(outcome.converged),
                    history: outcome.history,
                }
            }
        };
        detections.push(record);
    }
    Ok(TrialRecord {
        trial,
        cmse,
        residual_power,
        sinr,
        detections,
    })
}

fn plain(detector: DetectorKind, errors: usize, symbols: usize) -> DetectionRecord {
    DetectionRecord {
        detector,
        errors,
        symbols,
        iterations: None,
        converged: None,
        history: Vec::new(),
    }
}

/// Runs trials `0..trials` of one point in parallel; results come back in
/// trial order.
pub fn run_point(
    ctx: &PointContext,
    trials: usize,
) -> Vec<std::result::Result<TrialRecord, TrialFailure>> {
    (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            run_trial(ctx, t).map_err(|e| TrialFailure {
                trial: t,
                kind: e.kind().to_string(),
                message: e.to_string(),
            })
        })
        .collect()
}

/// One aggregated row; CSV columns follow field order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub scenario: Scenario,
    pub detector: DetectorKind,
    pub alpha: f64,
    pub n_d: usize,
    pub n_p: usize,
    pub snr_db: f64,
    pub cmse: f64,
    pub cmse_ci_halfwidth: f64,
    pub ser: f64,
    pub ser_ci_halfwidth: f64,
    pub sinr_after_db: f64,
    pub residual_power: f64,
    pub tp: f64,
    pub iterations_mean: Option<f64>,
    pub converged_fraction: Option<f64>,
    pub trials: usize,
    pub completed: usize,
    pub failed: usize,
    pub symbols: usize,
    pub seed: u64,
}

/// Mean SER and CMSE after each iteration of the iterative detector; trials
/// that stopped earlier contribute their final state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRow {
    pub scenario: Scenario,
    pub alpha: f64,
    pub n_d: usize,
    pub snr_db: f64,
    pub iteration: usize,
    pub ser: f64,
    pub cmse: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricTable {
    pub rows: Vec<MetricRow>,
    pub iterations: Vec<IterationRow>,
    pub failures: Vec<PointFailures>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointFailures {
    pub point: OperatingPoint,
    /// `(trial, error kind)` pairs.
    pub trials: Vec<(u64, String)>,
}

fn mean_ci(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = values.collect();
    let n = v.len() as f64;
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, 1.96 * (var / n).sqrt())
}

/// Aggregates the per-trial results of one point into rows, one per
/// detector, and the iteration profile.
pub fn aggregate(
    ctx: &PointContext,
    results: &[std::result::Result<TrialRecord, TrialFailure>],
) -> (Vec<MetricRow>, Vec<IterationRow>, Option<PointFailures>) {
    let done: Vec<&TrialRecord> = results.iter().filter_map(|r| r.as_ref().ok()).collect();
    let failed: Vec<(u64, String)> = results
        .iter()
        .filter_map(|r| r.as_ref().err().map(|f| (f.trial, f.kind.clone())))
        .collect();
    let p = ctx.point;
    let (cmse, cmse_ci) = mean_ci(done.iter().map(|r| r.cmse));
    let residual = done.iter().map(|r| r.residual_power).sum::<f64>() / done.len().max(1) as f64;
    let sinr_lin = done.iter().map(|r| r.sinr).sum::<f64>() / done.len().max(1) as f64;
    let overhead = overhead_factor(p.n_d, ctx.layout.n_p);

    let rows = ctx
        .detectors
        .iter()
        .enumerate()
        .map(|(d, &kind)| {
            let recs: Vec<&DetectionRecord> = done.iter().map(|r| &r.detections[d]).collect();
            let errors: usize = recs.iter().map(|r| r.errors).sum();
            let symbols: usize = recs.iter().map(|r| r.symbols).sum();
            let ser = if symbols == 0 {
                f64::NAN
            } else {
                errors as f64 / symbols as f64
            };
            let (_, ser_ci) = mean_ci(recs.iter().map(|r| r.errors as f64 / r.symbols as f64));
            let iterative = kind == DetectorKind::Iterative && !recs.is_empty();
            MetricRow {
                scenario: p.scenario,
                detector: kind,
                alpha: p.alpha,
                n_d: p.n_d,
                n_p: ctx.layout.n_p,
                snr_db: p.snr_db,
                cmse,
                cmse_ci_halfwidth: cmse_ci,
                ser,
                ser_ci_halfwidth: ser_ci,
                sinr_after_db: 10.0 * sinr_lin.log10(),
                residual_power: residual,
                tp: (1.0 - ser) * overhead,
                iterations_mean: iterative.then(|| {
                    recs.iter()
                        .map(|r| r.iterations.unwrap_or(0) as f64)
                        .sum::<f64>()
                        / recs.len() as f64
                }),
                converged_fraction: iterative.then(|| {
                    recs.iter().filter(|r| r.converged == Some(true)).count() as f64
                        / recs.len() as f64
                }),
                trials: results.len(),
                completed: done.len(),
                failed: failed.len(),
                symbols,
                seed: ctx.master_seed,
            }
        })
        .collect();

    let mut iterations = Vec::new();
    if let Some(d) = ctx
        .detectors
        .iter()
        .position(|k| *k == DetectorKind::Iterative)
    {
        let histories: Vec<&[IterationRecord]> = done
            .iter()
            .map(|r| r.detections[d].history.as_slice())
            .collect();
        let depth = histories.iter().map(|h| h.len()).max().unwrap_or(0);
        for t in 0..depth {
            let at = |h: &&[IterationRecord]| h[t.min(h.len() - 1)].clone();
            let n = histories.len() as f64;
            iterations.push(IterationRow {
                scenario: p.scenario,
                alpha: p.alpha,
                n_d: p.n_d,
                snr_db: p.snr_db,
                iteration: t,
                ser: histories.iter().map(|h| at(h).ser).sum::<f64>() / n,
                cmse: histories.iter().map(|h| at(h).cmse).sum::<f64>() / n,
            });
        }
    }
    let failures = (!failed.is_empty()).then_some(PointFailures {
        point: p,
        trials: failed,
    });
    (rows, iterations, failures)
}

/// Runs every operating point of the configuration.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<MetricTable> {
    cfg.validate()?;
    let eic = cfg.eic()?;
    let mut table = MetricTable::default();
    for point in cfg.points() {
        let ctx = PointContext::new(cfg, &eic, point)?;
        let results = run_point(&ctx, cfg.trials);
        let (rows, iterations, failures) = aggregate(&ctx, &results);
        table.rows.extend(rows);
        table.iterations.extend(iterations);
        table.failures.extend(failures);
    }
    Ok(table)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub crate_version: String,
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub eic_config_hash: String,
    pub master_seed: u64,
    pub rng: String,
    pub sinr_averaging: String,
    pub files: Vec<String>,
}

#[derive(Serialize)]
struct CmseView {
    scenario: Scenario,
    alpha: f64,
    n_d: usize,
    snr_db: f64,
    cmse: f64,
    cmse_ci_halfwidth: f64,
}

#[derive(Serialize)]
struct SinrView {
    scenario: Scenario,
    alpha: f64,
    n_d: usize,
    snr_db: f64,
    sinr_after_db: f64,
    residual_power: f64,
}

#[derive(Serialize)]
struct SerView {
    scenario: Scenario,
    detector: DetectorKind,
    alpha: f64,
    n_d: usize,
    snr_db: f64,
    ser: f64,
    ser_ci_halfwidth: f64,
}

#[derive(Serialize)]
struct TpView {
    scenario: Scenario,
    detector: DetectorKind,
    alpha: f64,
    snr_db: f64,
    n_d: usize,
    pilot_density: f64,
    ser: f64,
    tp: f64,
}

fn write_view<T: Serialize>(
    dir: &Path,
    name: &str,
    rows: &[T],
    files: &mut Vec<String>,
) -> Result<()> {
    let csv_name = format!("{name}.csv");
    let mut w = csv::Writer::from_path(dir.join(&csv_name))?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    let json_name = format!("{name}.json");
    fs::write(dir.join(&json_name), serde_json::to_string_pretty(rows)?)?;
    files.push(csv_name);
    files.push(json_name);
    Ok(())
}

/// Writes the full table, one CSV/JSON pair per view and `manifest.json`.
pub fn emit_outputs(table: &MetricTable, cfg: &ExperimentConfig, dir: &Path) -> Result<Manifest> {
    if table.rows.is_empty() {
        return Err(Error::InvalidConfig("metric table is empty".into()));
    }
    fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    write_view(dir, "metrics", &table.rows, &mut files)?;

    // Estimation metrics do not depend on the detector: take the first one.
    let first = table.rows[0].detector;
    let lead: Vec<&MetricRow> = table.rows.iter().filter(|r| r.detector == first).collect();
    let cmse: Vec<CmseView> = lead
        .iter()
        .map(|r| CmseView {
            scenario: r.scenario,
            alpha: r.alpha,
            n_d: r.n_d,
            snr_db: r.snr_db,
            cmse: r.cmse,
            cmse_ci_halfwidth: r.cmse_ci_halfwidth,
        })
        .collect();
    write_view(dir, "cmse_vs_snr", &cmse, &mut files)?;
    let sinr: Vec<SinrView> = lead
        .iter()
        .map(|r| SinrView {
            scenario: r.scenario,
            alpha: r.alpha,
            n_d: r.n_d,
            snr_db: r.snr_db,
            sinr_after_db: r.sinr_after_db,
            residual_power: r.residual_power,
        })
        .collect();
    write_view(dir, "sinr_vs_snr", &sinr, &mut files)?;
    let ser: Vec<SerView> = table
        .rows
        .iter()
        .map(|r| SerView {
            scenario: r.scenario,
            detector: r.detector,
            alpha: r.alpha,
            n_d: r.n_d,
            snr_db: r.snr_db,
            ser: r.ser,
            ser_ci_halfwidth: r.ser_ci_halfwidth,
        })
        .collect();
    write_view(dir, "ser_vs_snr", &ser, &mut files)?;
    write_view(dir, "ser_vs_iteration", &table.iterations, &mut files)?;
    let mut tp: Vec<TpView> = table
        .rows
        .iter()
        .map(|r| TpView {
            scenario: r.scenario,
            detector: r.detector,
            alpha: r.alpha,
            snr_db: r.snr_db,
            n_d: r.n_d,
            pilot_density: 1.0 / (r.n_d + 1) as f64,
            ser: r.ser,
            tp: r.tp,
        })
        .collect();
    tp.sort_by(|a, b| {
        (a.scenario, a.detector)
            .cmp(&(b.scenario, b.detector))
            .then(a.alpha.total_cmp(&b.alpha))
            .then(a.snr_db.total_cmp(&b.snr_db))
            .then(a.n_d.cmp(&b.n_d))
    });
    write_view(dir, "tp_vs_pilot_density", &tp, &mut files)?;

    let manifest = Manifest {
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        config_hash: cfg.hash(),
        eic_config_hash: cfg.eic()?.config_hash,
        master_seed: cfg.master_seed,
        rng: "ChaCha8Rng::seed_from_u64(master_seed), stream = trial index".into(),
        sinr_averaging: "linear mean over trials, then dB".into(),
        files,
    };
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplayOutcome {
    pub point: OperatingPoint,
    pub trials: Vec<TrialRecord>,
    pub failures: Vec<TrialFailure>,
    pub rows: Vec<MetricRow>,
}

/// Re-executes the operating point behind `row` from the configuration,
/// returning its per-trial records and re-aggregated rows.
pub fn replay(cfg: &ExperimentConfig, row: &MetricRow) -> Result<ReplayOutcome> {
    cfg.validate()?;
    if row.n_p != cfg.n_p || row.seed != cfg.master_seed {
        return Err(Error::InvalidConfig(
            "row was not produced by this configuration".into(),
        ));
    }
    let point = OperatingPoint {
        scenario: row.scenario,
        alpha: row.alpha,
        n_d: row.n_d,
        snr_db: row.snr_db,
    };
    let eic = cfg.eic()?;
    let ctx = PointContext::new(cfg, &eic, point)?;
    let results = run_point(&ctx, row.trials);
    let (rows, _, _) = aggregate(&ctx, &results);
    let (trials, failures): (Vec<_>, Vec<_>) = results.into_iter().partition(|r| r.is_ok());
    Ok(ReplayOutcome {
        point,
        trials: trials.into_iter().map(|r| r.unwrap()).collect(),
        failures: failures.into_iter().map(|r| r.unwrap_err()).collect(),
        rows,
    })
}
