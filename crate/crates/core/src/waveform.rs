//! Pulse shaping, effective interference coefficients (EICs) and synthesis
//! of the interference term seen by the desired receiver.
//!
//! The desired link is simulated at symbol rate. The only waveform-level
//! computation is the EIC integral, which folds both pulse shapes, the
//! carrier offset, the timing offsets and the phases into `L` complex
//! weights. With an integer bandwidth ratio `M` those weights do not depend
//! on the desired symbol index (up to the carrier rotation discussed on
//! [`compute_eic_at`]).

use crate::error::{Error, Result};
use crate::modulation::{random_qpsk, C64};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::f64::consts::{FRAC_1_SQRT_2, PI};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PulseKind {
    RootRaisedCosine,
    Rectangular,
}

/// A unity-gain (`p(0) = 1`) pulse shape.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseShape {
    pub kind: PulseKind,
    pub roll_off: f64,
    /// Symbol period in seconds.
    pub symbol_period: f64,
    /// One-sided truncation in symbol periods.
    pub span: usize,
}

/// Default one-sided RRC truncation.
pub const DEFAULT_RRC_SPAN: usize = 8;

impl PulseShape {
    pub fn root_raised_cosine(roll_off: f64, symbol_period: f64) -> Self {
        Self {
            kind: PulseKind::RootRaisedCosine,
            roll_off,
            symbol_period,
            span: DEFAULT_RRC_SPAN,
        }
    }

    pub fn rectangular(symbol_period: f64) -> Self {
        Self {
            kind: PulseKind::Rectangular,
            roll_off: 0.0,
            symbol_period,
            span: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.roll_off) {
            return Err(Error::InvalidConfig(format!(
                "roll-off {} outside [0, 1]",
                self.roll_off
            )));
        }
        if self.span < 1 {
            return Err(Error::InvalidConfig("pulse span must be >= 1".into()));
        }
        if !(self.symbol_period > 0.0 && self.symbol_period.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "symbol period {} must be positive",
                self.symbol_period
            )));
        }
        Ok(())
    }

    /// Half-width of the (truncated) support in seconds.
    pub fn half_support(&self) -> f64 {
        match self.kind {
            PulseKind::Rectangular => 0.5 * self.symbol_period,
            PulseKind::RootRaisedCosine => self.span as f64 * self.symbol_period,
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        eval_pulse(self, t)
    }
}

/// Evaluates the unity-gain pulse at time `t` (seconds).
pub fn eval_pulse(shape: &PulseShape, t: f64) -> f64 {
    if t.abs() > shape.half_support() {
        return 0.0;
    }
    match shape.kind {
        PulseKind::Rectangular => 1.0,
        PulseKind::RootRaisedCosine => {
            let u = t / shape.symbol_period;
            rrc_unnormalized(u, shape.roll_off) / rrc_unnormalized(0.0, shape.roll_off)
        }
    }
}

// Width (in symbol periods) of the window around t = ±T/(4β) where the closed
// form is replaced by quadratic interpolation through the analytic limit.
const SINGULARITY_WINDOW: f64 = 1e-4;

fn rrc_unnormalized(u: f64, beta: f64) -> f64 {
    let a = u.abs();
    if beta == 0.0 {
        return if a < 1e-12 {
            1.0
        } else {
            (PI * a).sin() / (PI * a)
        };
    }
    if a < 1e-9 {
        return 1.0 - beta + 4.0 * beta / PI;
    }
    let edge = 0.25 / beta;
    let d = a - edge;
    if d.abs() < SINGULARITY_WINDOW {
        let w = SINGULARITY_WINDOW;
        let f0 = rrc_edge_limit(beta);
        let fm = rrc_closed_form(edge - w, beta);
        let fp = rrc_closed_form(edge + w, beta);
        // Lagrange through (-w, fm), (0, f0), (w, fp).
        let s = d / w;
        return fm * s * (s - 1.0) * 0.5 + f0 * (1.0 - s * s) + fp * s * (s + 1.0) * 0.5;
    }
    rrc_closed_form(a, beta)
}

fn rrc_edge_limit(beta: f64) -> f64 {
    let x = PI / (4.0 * beta);
    beta * FRAC_1_SQRT_2 * ((1.0 + 2.0 / PI) * x.sin() + (1.0 - 2.0 / PI) * x.cos())
}

fn rrc_closed_form(u: f64, beta: f64) -> f64 {
    let num = (PI * u * (1.0 - beta)).sin() + 4.0 * beta * u * (PI * u * (1.0 + beta)).cos();
    let den = PI * u * (1.0 - (4.0 * beta * u).powi(2));
    num / den
}

/// Relative timing, frequency and phase between the two links.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentConfig {
    /// Integer ratio `M` between interferer and desired bandwidths.
    pub bandwidth_ratio: usize,
    /// Number `L` of interfering symbols per desired sample (multiple of `M`).
    pub interferer_span: usize,
    /// Carrier spacing in Hz; the interferer sits at `f_d - freq_offset`.
    pub freq_offset: f64,
    /// Interferer timing offset `t_i` in seconds.
    pub time_offset: f64,
    /// Desired sampling offset `eps_d` in seconds.
    pub sample_offset: f64,
    pub phase_desired: f64,
    pub phase_interferer: f64,
}

impl AlignmentConfig {
    /// `L = 2M`, zero offsets.
    pub fn new(bandwidth_ratio: usize, freq_offset: f64) -> Self {
        Self {
            bandwidth_ratio,
            interferer_span: 2 * bandwidth_ratio,
            freq_offset,
            time_offset: 0.0,
            sample_offset: 0.0,
            phase_desired: 0.0,
            phase_interferer: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.bandwidth_ratio;
        let l = self.interferer_span;
        if m < 1 {
            return Err(Error::InvalidConfig(
                "bandwidth ratio M must be >= 1".into(),
            ));
        }
        if l < m || l % m != 0 {
            return Err(Error::InvalidConfig(format!(
                "interferer span L = {l} must be a positive multiple of M = {m}"
            )));
        }
        let finite = [
            self.freq_offset,
            self.time_offset,
            self.sample_offset,
            self.phase_desired,
            self.phase_interferer,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig(
                "alignment offsets must be finite".into(),
            ));
        }
        Ok(())
    }
}

/// The `L` effective interference coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EicVector {
    pub c: Vec<C64>,
    pub config_hash: String,
}

impl EicVector {
    pub fn len(&self) -> usize {
        self.c.len()
    }

    pub fn is_empty(&self) -> bool {
        self.c.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.c.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn as_dvector(&self) -> DVector<C64> {
        DVector::from_column_slice(&self.c)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct QuadratureOptions {
    /// Initial step as a fraction of the desired symbol period.
    pub steps_per_symbol: usize,
    pub tolerance: f64,
    pub max_halvings: usize,
}

impl Default for QuadratureOptions {
    fn default() -> Self {
        Self {
            steps_per_symbol: 512,
            tolerance: 1e-8,
            max_halvings: 6,
        }
    }
}

/// Computes the EIC vector for desired symbol index 0.
pub fn compute_eic(p_d: &PulseShape, p_i: &PulseShape, cfg: &AlignmentConfig) -> Result<EicVector> {
    compute_eic_at(p_d, p_i, cfg, 0, &QuadratureOptions::default())
}

/// Computes the EIC vector for desired symbol index `k`.
///
/// Column `l` (zero based) couples interfering symbol `M k + l` into desired
/// sample `k`. Shifting `k` by one rotates every coefficient by
/// `exp(-j 2 pi freq_offset T_d)`, so the vector is index-invariant exactly
/// when `freq_offset * T_d` is an integer.
pub fn compute_eic_at(
    p_d: &PulseShape,
    p_i: &PulseShape,
    cfg: &AlignmentConfig,
    k: i64,
    opts: &QuadratureOptions,
) -> Result<EicVector> {
    p_d.validate()?;
    p_i.validate()?;
    cfg.validate()?;
    let t_d = p_d.symbol_period;
    let t_i = p_i.symbol_period;
    let m = cfg.bandwidth_ratio;
    if ((t_i * m as f64) - t_d).abs() > 1e-12 * t_d {
        return Err(Error::InvalidConfig(format!(
            "interferer symbol period {t_i} must equal T_d / M = {}",
            t_d / m as f64
        )));
    }

    let sample_time = k as f64 * t_d + cfg.sample_offset;
    let phase = cfg.phase_interferer + cfg.phase_desired;
    let omega = -2.0 * PI * cfg.freq_offset;
    let base_step = t_d / opts.steps_per_symbol as f64;

    let mut c = Vec::with_capacity(cfg.interferer_span);
    for l in 0..cfg.interferer_span {
        let center_i = (m as i64 * k + l as i64) as f64 * t_i + cfg.time_offset;
        let lo = (sample_time - p_d.half_support()).max(center_i - p_i.half_support());
        let hi = (sample_time + p_d.half_support()).min(center_i + p_i.half_support());
        if hi <= lo {
            c.push(C64::new(0.0, 0.0));
            continue;
        }
        let integrand = |tau: f64| {
            let amp = eval_pulse(p_d, sample_time - tau) * eval_pulse(p_i, tau - center_i);
            C64::from_polar(amp, omega * tau + phase)
        };
        c.push(refine_simpson(integrand, lo, hi, base_step, opts)?);
    }

    Ok(EicVector {
        c,
        config_hash: config_hash(p_d, p_i, cfg),
    })
}

fn simpson<F: Fn(f64) -> C64>(f: &F, lo: f64, hi: f64, intervals: usize) -> C64 {
    let n = intervals + intervals % 2;
    let h = (hi - lo) / n as f64;
    let mut acc = f(lo) + f(hi);
    for j in 1..n {
        let w = if j % 2 == 1 { 4.0 } else { 2.0 };
        acc += f(lo + j as f64 * h) * w;
    }
    acc * (h / 3.0)
}

fn refine_simpson<F: Fn(f64) -> C64>(
    f: F,
    lo: f64,
    hi: f64,
    base_step: f64,
    opts: &QuadratureOptions,
) -> Result<C64> {
    let mut intervals = ((hi - lo) / base_step).ceil().max(2.0) as usize;
    let mut current = simpson(&f, lo, hi, intervals);
    let mut change = f64::INFINITY;
    for _ in 0..opts.max_halvings {
        intervals *= 2;
        let finer = simpson(&f, lo, hi, intervals);
        change = (finer - current).norm();
        current = finer;
        if change < opts.tolerance {
            return Ok(current);
        }
    }
    Err(Error::QuadratureNonConvergence {
        change,
        tolerance: opts.tolerance,
        halvings: opts.max_halvings,
    })
}

/// Stable identifier of the inputs that produced an EIC vector.
pub fn config_hash(p_d: &PulseShape, p_i: &PulseShape, cfg: &AlignmentConfig) -> String {
    let payload = serde_json::to_string(&(p_d, p_i, cfg)).expect("plain data serializes");
    let digest = Sha256::digest(payload.as_bytes());
    hex::encode(&digest[..8])
}

/// Known interfering transmitter as seen by the desired receiver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterferenceSource {
    /// Line-of-sight gains, one per receive antenna.
    pub h_i: Vec<C64>,
    /// Interfering QPSK symbols at `M` per desired symbol.
    pub symbols: Vec<C64>,
    pub power_scale: f64,
}

impl InterferenceSource {
    /// Unit-modulus random-phase gains and i.i.d. QPSK symbols.
    pub fn random<R: Rng + ?Sized>(
        n_r: usize,
        n_symbols: usize,
        power_scale: f64,
        rng: &mut R,
    ) -> Self {
        let h_i = (0..n_r)
            .map(|_| C64::from_polar(1.0, rng.random_range(0.0..2.0 * PI)))
            .collect();
        let symbols = (0..n_symbols).map(|_| random_qpsk(rng)).collect();
        Self {
            h_i,
            symbols,
            power_scale,
        }
    }

    /// Number of interfering symbols needed to build `B_k` for `k < frame_length`.
    pub fn symbols_needed(frame_length: usize, m: usize, l: usize) -> usize {
        if frame_length == 0 {
            0
        } else {
            m * (frame_length - 1) + l
        }
    }
}

/// Builds the `N_r x L` interference matrix `B_k`: column `l` is
/// `h_i * b[M k + l] * power_scale`.
pub fn build_interference_matrix(
    src: &InterferenceSource,
    k: usize,
    l: usize,
    m: usize,
) -> Result<DMatrix<C64>> {
    let last = m * k + l;
    if last > src.symbols.len() {
        return Err(Error::SymbolStreamExhausted {
            needed: last,
            available: src.symbols.len(),
        });
    }
    let n_r = src.h_i.len();
    Ok(DMatrix::from_fn(n_r, l, |r, col| {
        src.h_i[r] * src.symbols[m * k + col] * src.power_scale
    }))
}

/// Interference term `B_k c`.
pub fn synthesize_interference(b: &DMatrix<C64>, c: &[C64]) -> Result<DVector<C64>> {
    if b.ncols() != c.len() {
        return Err(Error::DimensionMismatch {
            what: "interference matrix columns vs EIC length",
            expected: b.ncols(),
            found: c.len(),
        });
    }
    Ok(b * DVector::from_column_slice(c))
}
