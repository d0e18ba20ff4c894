//! Data-symbol detection between pilots: series MAP (S-MAP), individual MAP
//! (I-MAP), the pilot-interpolation baseline (ODD) and the iterative loop
//! that re-uses decisions as pilots.

use crate::channel::{FadingParams, FrameLayout, FrameObservation};
use crate::error::{Error, Result};
use crate::estimator::{estimate, estimate_with_known_eic, EstimatorParams, PilotObservations};
use crate::modulation::{qpsk_index, C64, QPSK};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Default S-MAP enumeration cap (4^10 candidates).
pub const SMAP_MAX_ND: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DetectorKind {
    SMap,
    IMap,
    Odd,
    Iterative,
}

impl DetectorKind {
    pub fn name(&self) -> &'static str {
        match self {
            DetectorKind::SMap => "s-map",
            DetectorKind::IMap => "i-map",
            DetectorKind::Odd => "odd",
            DetectorKind::Iterative => "iterative",
        }
    }
}

impl std::str::FromStr for DetectorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "s-map" | "smap" => Ok(DetectorKind::SMap),
            "i-map" | "imap" => Ok(DetectorKind::IMap),
            "odd" => Ok(DetectorKind::Odd),
            "iterative" => Ok(DetectorKind::Iterative),
            other => Err(Error::InvalidConfig(format!("unknown detector {other:?}"))),
        }
    }
}

/// Data symbols between two pilots, with interference already removed.
#[derive(Debug, Clone)]
pub struct DetectionInterval {
    pub h_head: DVector<C64>,
    pub h_tail: DVector<C64>,
    pub y: Vec<DVector<C64>>,
    pub alpha: f64,
    pub sigma2: f64,
    pub sigma_h2: f64,
}

impl DetectionInterval {
    pub fn n_d(&self) -> usize {
        self.y.len()
    }
}

/// Splits a frame into per-interval detection problems using pilot channel
/// estimates `h_tilde` and subtracting `B_k c_tilde` at data positions.
pub fn build_intervals(
    obs: &FrameObservation,
    h_tilde: &[DVector<C64>],
    c_tilde: &[C64],
    fading: &FadingParams,
) -> Vec<DetectionInterval> {
    let layout = &obs.layout;
    let c = DVector::from_column_slice(c_tilde);
    (0..layout.n_p - 1)
        .map(|n| {
            let start = layout.pilot_position(n);
            DetectionInterval {
                h_head: h_tilde[n].clone(),
                h_tail: h_tilde[n + 1].clone(),
                y: (1..=layout.n_d)
                    .map(|o| &obs.y[start + o] - &obs.b[start + o] * &c)
                    .collect(),
                alpha: fading.alpha,
                sigma2: fading.sigma2,
                sigma_h2: fading.sigma_h2,
            }
        })
        .collect()
}

/// Precision terms of the chain prior and the scalar S-MAP recursion.
#[derive(Debug, Clone)]
pub struct SMapWorkspace {
    pub tau1: f64,
    pub tau2: f64,
    /// `s_i` for every position; identical for all unit-modulus candidates.
    pub s: Vec<f64>,
}

impl SMapWorkspace {
    pub fn new(interval: &DetectionInterval) -> Result<Self> {
        let alpha = interval.alpha;
        if alpha >= 1.0 {
            return Err(Error::DegenerateAlpha);
        }
        let tau1 = 1.0 / ((1.0 - alpha * alpha) * interval.sigma_h2);
        let tau2 = alpha * tau1;
        let diag = 1.0 / interval.sigma2 + (1.0 + alpha * alpha) * tau1;
        let mut s = Vec::with_capacity(interval.n_d());
        for i in 0..interval.n_d() {
            let inv = diag - if i > 0 { tau2 * tau2 * s[i - 1] } else { 0.0 };
            if !inv.is_finite() || inv <= 0.0 {
                return Err(Error::RecursionBreakdown { position: i });
            }
            s.push(1.0 / inv);
        }
        Ok(Self { tau1, tau2, s })
    }
}

/// Log-posterior of a candidate sequence, up to a candidate-independent
/// constant.
pub fn smap_score(interval: &DetectionInterval, candidate: &[C64]) -> Result<f64> {
    if candidate.len() != interval.n_d() {
        return Err(Error::DimensionMismatch {
            what: "candidate length",
            expected: interval.n_d(),
            found: candidate.len(),
        });
    }
    let ws = SMapWorkspace::new(interval)?;
    let n_d = interval.n_d();
    let mut m_prev: Option<DVector<C64>> = None;
    let mut score = 0.0;
    for i in 0..n_d {
        let mut m = &interval.y[i] * (candidate[i].conj() / interval.sigma2);
        if i == 0 {
            m += interval.h_head.scale(ws.tau2);
        }
        if i + 1 == n_d {
            m += interval.h_tail.scale(ws.tau2);
        }
        if let Some(prev) = &m_prev {
            m += prev.scale(ws.tau2 * ws.s[i - 1]);
        }
        score += ws.s[i] * m.norm_squared();
        m_prev = Some(m);
    }
    Ok(score)
}

/// Exhaustive S-MAP. Returns constellation indices; ties go to the
/// lexicographically smallest candidate.
pub fn smap_detect(interval: &DetectionInterval, max_n_d: usize) -> Result<Vec<usize>> {
    let n_d = interval.n_d();
    if n_d > max_n_d {
        return Err(Error::BudgetExceeded { n_d, cap: max_n_d });
    }
    if n_d == 0 {
        return Ok(Vec::new());
    }
    let ws = SMapWorkspace::new(interval)?;
    let n_r = interval.h_head.len();
    // z[i][s] = conj(QPSK[s]) y_i / sigma2 plus boundary terms.
    let z: Vec<Vec<Vec<C64>>> = (0..n_d)
        .map(|i| {
            QPSK.iter()
                .map(|p| {
                    (0..n_r)
                        .map(|r| {
                            let mut v = interval.y[i][r] * p.conj() / interval.sigma2;
                            if i == 0 {
                                v += interval.h_head[r] * ws.tau2;
                            }
                            if i + 1 == n_d {
                                v += interval.h_tail[r] * ws.tau2;
                            }
                            v
                        })
                        .collect()
                })
                .collect()
        })
        .collect();

    struct Search<'a> {
        z: &'a [Vec<Vec<C64>>],
        s: &'a [f64],
        carry: f64,
        n_r: usize,
        m: Vec<C64>,
        path: Vec<usize>,
        best: Vec<usize>,
        best_score: f64,
    }

    impl Search<'_> {
        fn visit(&mut self, i: usize, score: f64) {
            let n_d = self.z.len();
            if i == n_d {
                if score > self.best_score {
                    self.best_score = score;
                    self.best.copy_from_slice(&self.path);
                }
                return;
            }
            let n_r = self.n_r;
            for sym in 0..4 {
                let mut norm = 0.0;
                for r in 0..n_r {
                    let mut v = self.z[i][sym][r];
                    if i > 0 {
                        v += self.m[(i - 1) * n_r + r] * (self.carry * self.s[i - 1]);
                    }
                    self.m[i * n_r + r] = v;
                    norm += v.norm_sqr();
                }
                self.path[i] = sym;
                self.visit(i + 1, score + self.s[i] * norm);
            }
        }
    }

    let mut search = Search {
        z: &z,
        s: &ws.s,
        carry: ws.tau2,
        n_r,
        m: vec![C64::new(0.0, 0.0); n_d * n_r],
        path: vec![0; n_d],
        best: vec![0; n_d],
        best_score: f64::NEG_INFINITY,
    };
    search.visit(0, 0.0);
    Ok(search.best)
}

/// Two-pilot combiner for data position `i` (1 based) between the pilots.
pub fn imap_combiner(
    h_head: &DVector<C64>,
    h_tail: &DVector<C64>,
    i: usize,
    n_d: usize,
    alpha: f64,
) -> Result<DVector<C64>> {
    if alpha >= 1.0 {
        return Err(Error::DegenerateAlpha);
    }
    let (wh, wt) = imap_weights(i, n_d, alpha);
    Ok(h_head.scale(wh) + h_tail.scale(wt))
}

fn imap_weights(i: usize, n_d: usize, alpha: f64) -> (f64, f64) {
    let j = n_d + 1 - i;
    let w = |k: usize| alpha.powi(k as i32) / -(2.0 * k as f64 * alpha.ln()).exp_m1();
    (w(i), w(j))
}

/// Combiner weights normalized to sum to one. At `alpha = 1` they take
/// their limiting ratio `j : i`.
pub fn combiner_weights(i: usize, n_d: usize, alpha: f64) -> (f64, f64) {
    if alpha >= 1.0 {
        let j = n_d + 1 - i;
        let total = (i + j) as f64;
        return (j as f64 / total, i as f64 / total);
    }
    let (wh, wt) = imap_weights(i, n_d, alpha);
    (wh / (wh + wt), wt / (wh + wt))
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SliceDecisions {
    pub indices: Vec<usize>,
    /// Decisions taken on an exactly zero correlator output.
    pub zero_correlator: usize,
}

fn decide(z: C64, out: &mut SliceDecisions) {
    if z == C64::new(0.0, 0.0) {
        out.zero_correlator += 1;
    }
    out.indices.push(qpsk_index(z));
}

/// Per-symbol decisions from the two-pilot combiner.
pub fn imap_detect(interval: &DetectionInterval) -> SliceDecisions {
    let n_d = interval.n_d();
    let mut out = SliceDecisions::default();
    for (k, y) in interval.y.iter().enumerate() {
        let i = k + 1;
        let (wh, wt) = combiner_weights(i, n_d, interval.alpha);
        let h = interval.h_head.scale(wh) + interval.h_tail.scale(wt);
        decide(h.dotc(y), &mut out);
    }
    out
}

/// MMSE smoothing of all pilot LS estimates followed by interpolation to
/// every data position. The weights depend only on the layout and the
/// fading statistics, so they are computed once per operating point.
#[derive(Debug, Clone)]
pub struct OddInterpolator {
    /// One weight vector (length `n_p`) per data position, in frame order.
    pub weights: Vec<Vec<f64>>,
    pub data_positions: Vec<usize>,
}

impl OddInterpolator {
    pub fn new(layout: &FrameLayout, fading: &FadingParams) -> Result<Self> {
        let n_p = layout.n_p;
        let alpha = fading.alpha;
        let alpha_p = layout.alpha_p(alpha);
        let r = DMatrix::from_fn(n_p, n_p, |m, n| {
            let base = fading.sigma_h2 * alpha_p.powi(m.abs_diff(n) as i32);
            if m == n {
                base + fading.sigma2
            } else {
                base
            }
        });
        let chol = r.cholesky().ok_or(Error::SingularInterpolation)?;
        let data_positions: Vec<usize> = layout.data_positions().collect();
        let weights = data_positions
            .iter()
            .map(|&k| {
                let rk = DVector::from_fn(n_p, |n, _| {
                    fading.sigma_h2 * alpha.powi(k.abs_diff(layout.pilot_position(n)) as i32)
                });
                chol.solve(&rk).iter().copied().collect()
            })
            .collect::<Vec<Vec<f64>>>();
        if weights.iter().flatten().any(|w| !w.is_finite()) {
            return Err(Error::SingularInterpolation);
        }
        Ok(Self {
            weights,
            data_positions,
        })
    }

    /// Interpolated channel at every data position.
    pub fn interpolate(&self, pilot_ls: &[DVector<C64>]) -> Vec<DVector<C64>> {
        let n_r = pilot_ls.first().map_or(0, |v| v.len());
        self.weights
            .iter()
            .map(|w| {
                let mut h = DVector::<C64>::zeros(n_r);
                for (wn, z) in w.iter().zip(pilot_ls) {
                    h += z.scale(*wn);
                }
                h
            })
            .collect()
    }
}

/// Least-squares pilot estimates `x_n^* (y_n - B_n c)`.
pub fn pilot_ls_estimates(obs: &FrameObservation, c_tilde: &[C64]) -> Vec<DVector<C64>> {
    let c = DVector::from_column_slice(c_tilde);
    obs.layout
        .pilot_positions()
        .enumerate()
        .map(|(n, k)| (&obs.y[k] - &obs.b[k] * &c) * obs.layout.pilot_symbols[n].conj())
        .collect()
}

/// ODD decisions for every data position of the frame.
pub fn odd_detect(
    obs: &FrameObservation,
    c_tilde: &[C64],
    interp: &OddInterpolator,
) -> SliceDecisions {
    let h = interp.interpolate(&pilot_ls_estimates(obs, c_tilde));
    let c = DVector::from_column_slice(c_tilde);
    let mut out = SliceDecisions::default();
    for (hk, &k) in h.iter().zip(&interp.data_positions) {
        let y = &obs.y[k] - &obs.b[k] * &c;
        decide(hk.dotc(&y), &mut out);
    }
    out
}

/// Reference detector that uses the LS estimate of the nearest pilot as is.
pub fn nearest_pilot_detect(obs: &FrameObservation, c_tilde: &[C64]) -> SliceDecisions {
    let layout = &obs.layout;
    let ls = pilot_ls_estimates(obs, c_tilde);
    let c = DVector::from_column_slice(c_tilde);
    let stride = layout.stride();
    let mut out = SliceDecisions::default();
    for k in layout.data_positions() {
        let n = (k + stride / 2) / stride;
        let y = &obs.y[k] - &obs.b[k] * &c;
        decide(ls[n].dotc(&y), &mut out);
    }
    out
}

/// How the interference coefficients are obtained inside the iterative loop.
#[derive(Debug, Clone, PartialEq)]
pub enum EicMode {
    Estimate,
    Known(Vec<C64>),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Data-symbol error rate against the ground truth.
    pub ser: f64,
    /// Channel MSE at the original pilot positions.
    pub cmse: f64,
    /// Symbols whose decision changed in this iteration.
    pub changed: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterativeOutcome {
    /// Full frame: pilots plus detected data symbols.
    pub symbols: Vec<C64>,
    pub iterations_used: usize,
    pub converged: bool,
    /// Record 0 describes the initial decisions.
    pub history: Vec<IterationRecord>,
}

fn data_ser(obs: &FrameObservation, symbols: &[C64]) -> f64 {
    let layout = &obs.layout;
    let errors = layout
        .data_positions()
        .filter(|&k| symbols[k] != obs.x_true[k])
        .count();
    errors as f64 / layout.n_data().max(1) as f64
}

fn pilot_cmse(
    obs: &FrameObservation,
    h: &[DVector<C64>],
    stride_map: impl Fn(usize) -> usize,
) -> f64 {
    let layout = &obs.layout;
    let n_r = obs.n_r() as f64;
    layout
        .pilot_positions()
        .enumerate()
        .map(|(n, k)| (&h[stride_map(n)] - &obs.trace.h[k]).norm_squared())
        .sum::<f64>()
        / (layout.n_p as f64 * n_r)
}

/// Re-estimates with the whole frame as pilots and re-detects every data
/// symbol from its two neighbours until the decisions stop changing.
///
/// `initial` is the full frame with the first-pass decisions at data
/// positions; `initial_cmse` is the channel MSE of the first pass.
pub fn iterative_detect(
    obs: &FrameObservation,
    initial: &[C64],
    initial_cmse: f64,
    fading: &FadingParams,
    eic: &EicMode,
    max_iters: usize,
) -> Result<IterativeOutcome> {
    let len = obs.layout.frame_length();
    if initial.len() != len {
        return Err(Error::DimensionMismatch {
            what: "initial decisions",
            expected: len,
            found: initial.len(),
        });
    }
    let params = EstimatorParams::whole_frame(fading);
    let alpha = fading.alpha;
    let gain = if alpha < 1.0 {
        alpha / (1.0 - alpha * alpha)
    } else {
        1.0
    };
    let mut current = initial.to_vec();
    let mut history = vec![IterationRecord {
        iteration: 0,
        ser: data_ser(obs, &current),
        cmse: initial_cmse,
        changed: 0,
    }];
    let data: Vec<usize> = obs.layout.data_positions().collect();

    for iteration in 1..=max_iters {
        let po = PilotObservations::whole_frame(obs, &current);
        let out = match eic {
            EicMode::Estimate => estimate(&po, &params)?,
            EicMode::Known(c) => estimate_with_known_eic(&po, c, &params)?,
        };
        let h = &out.channels.h_tilde;
        let c = DVector::from_column_slice(&out.eic.c_tilde);
        let mut next = current.clone();
        for &k in &data {
            let hk = (&h[k - 1] + &h[k + 1]).scale(gain);
            let y = &obs.y[k] - &obs.b[k] * &c;
            next[k] = QPSK[qpsk_index(hk.dotc(&y))];
        }
        let changed = data.iter().filter(|&&k| next[k] != current[k]).count();
        let stride = obs.layout.stride();
        history.push(IterationRecord {
            iteration,
            ser: data_ser(obs, &next),
            cmse: pilot_cmse(obs, h, |n| n * stride),
            changed,
        });
        current = next;
        if changed == 0 {
            return Ok(IterativeOutcome {
                symbols: current,
                iterations_used: iteration,
                converged: true,
                history,
            });
        }
    }
    Ok(IterativeOutcome {
        symbols: current,
        iterations_used: max_iters,
        converged: false,
        history,
    })
}
