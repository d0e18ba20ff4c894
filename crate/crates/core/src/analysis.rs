//! Closed-form and semi-analytic performance predictions: residual
//! interference floor, channel-estimation error decomposition, equivalent
//! SNR of the two-pilot combiner, symbol error rate and throughput.

use crate::detector::combiner_weights;
use crate::error::{Error, Result};
use crate::estimator::{conditional_params, EstimatorParams};
use crate::modulation::{standard_cscg, C64};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FloorPrediction {
    pub alpha_p: f64,
    pub n_p: usize,
    pub sigma2_i_floor: f64,
    pub sinr_limit: f64,
    pub sinr_limit_db: f64,
}

/// High-SNR residual interference power per antenna and the matching SINR
/// ceiling (unit channel variance).
pub fn predict_floors(alpha: f64, n_d: usize, n_p: usize) -> Result<FloorPrediction> {
    if !(alpha > 0.0 && alpha <= 1.0) || n_p < 2 {
        return Err(Error::InvalidConfig(format!(
            "floor prediction needs alpha in (0, 1] and n_p >= 2 (got {alpha}, {n_p})"
        )));
    }
    let alpha_p = alpha.powi(n_d as i32 + 1);
    let ap2 = alpha_p * alpha_p;
    let sigma2_i_floor = ap2 * (1.0 - ap2) / n_p as f64;
    let sinr_limit = 1.0 / sigma2_i_floor;
    Ok(FloorPrediction {
        alpha_p,
        n_p,
        sigma2_i_floor,
        sinr_limit,
        sinr_limit_db: 10.0 * sinr_limit.log10(),
    })
}

/// Channel-estimation error at one pilot split into its sources: AWGN at
/// every pilot, the initial channel, and every innovation between pilots.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorDecomposition {
    pub xi_g: Vec<C64>,
    pub xi_c0: C64,
    /// Entry `m - 1` multiplies the innovation between pilots `m - 1` and `m`.
    pub xi_c: Vec<C64>,
    pub awgn_power: f64,
    pub evolution_power: f64,
}

impl ErrorDecomposition {
    /// Per-antenna mean squared error of the pilot estimate.
    pub fn predicted_cee(&self, sigma2: f64, sigma_h2: f64) -> f64 {
        sigma2 * self.awgn_power + sigma_h2 * self.evolution_power
    }
}

/// Exact decomposition for the interference-free estimator at pilot `n`
/// (zero based), obtained from its linear map `h_n = sum_k g_k y_k`.
pub fn cee_decomposition(
    pilots: &[C64],
    alpha_p: f64,
    rho: f64,
    n: usize,
) -> Result<ErrorDecomposition> {
    let n_p = pilots.len();
    if n >= n_p || n_p < 2 {
        return Err(Error::InvalidConfig(format!(
            "pilot {n} out of range for {n_p} pilots"
        )));
    }
    let params = EstimatorParams {
        alpha_p,
        sigma2: 1.0 / rho,
        sigma_h2: 1.0,
    };
    let mut g = vec![C64::new(0.0, 0.0); n_p];
    let mut a = 1.0;
    for i in 0..n_p {
        let cp = conditional_params(n, i, &params, pilots);
        let w = pilots[i].conj() * (cp.omega / cp.sigma2);
        a += cp.omega * cp.omega * pilots[i].norm_sqr() / cp.sigma2;
        g[i] += w;
        if let Some(nb) = cp.neighbour(i) {
            g[nb] -= w * cp.beta;
        }
    }
    for v in g.iter_mut() {
        *v /= a;
    }

    let eta = (1.0 - alpha_p * alpha_p).max(0.0).sqrt();
    let gx: Vec<C64> = g.iter().zip(pilots).map(|(g, x)| g * x).collect();
    let xi_g: Vec<C64> = g.iter().map(|v| -v).collect();
    let xi_c0 = C64::new(alpha_p.powi(n as i32), 0.0)
        - gx.iter()
            .enumerate()
            .map(|(k, v)| v * alpha_p.powi(k as i32))
            .sum::<C64>();
    let xi_c: Vec<C64> = (1..n_p)
        .map(|m| {
            let own = if m <= n {
                alpha_p.powi((n - m) as i32)
            } else {
                0.0
            };
            let est: C64 = (m..n_p).map(|k| gx[k] * alpha_p.powi((k - m) as i32)).sum();
            (C64::new(own, 0.0) - est) * eta
        })
        .collect();
    let awgn_power = xi_g.iter().map(|v| v.norm_sqr()).sum();
    let evolution_power = xi_c0.norm_sqr() + xi_c.iter().map(|v| v.norm_sqr()).sum::<f64>();
    Ok(ErrorDecomposition {
        xi_g,
        xi_c0,
        xi_c,
        awgn_power,
        evolution_power,
    })
}

/// Which expression to use for the post-combiner SNR.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SnrForm {
    /// Literal expression, including the all-ones projections in the
    /// denominator.
    AsPrinted,
    /// As printed, but with the denominator projection replaced by the
    /// combiner's squared norm.
    NormCorrected,
    /// Exact SINR given noisy head/tail estimates whose errors have
    /// per-antenna variance `pilot_error`, conditioning on both pilots.
    TwoSided { pilot_error: f64 },
}

/// Equivalent SNR of the two-pilot combiner at data position `i` (1 based).
#[allow(clippy::too_many_arguments)]
pub fn equivalent_snr(
    h_head: &[C64],
    h_tail: &[C64],
    i: usize,
    n_d: usize,
    alpha: f64,
    sigma2: f64,
    sigma_i2: f64,
    form: SnrForm,
) -> f64 {
    let j = n_d + 1 - i;
    let (wh, wt) = combiner_weights(i, n_d, alpha);
    let comb: Vec<C64> = h_head
        .iter()
        .zip(h_tail)
        .map(|(a, b)| a * wh + b * wt)
        .collect();
    let comb_norm2: f64 = comb.iter().map(|v| v.norm_sqr()).sum();
    let dotc = |u: &[C64], v: &[C64]| u.iter().zip(v).map(|(a, b)| a.conj() * b).sum::<C64>();
    match form {
        SnrForm::AsPrinted | SnrForm::NormCorrected => {
            let a2i = alpha.powi(2 * i as i32);
            let num = a2i * dotc(h_head, &comb).norm_sqr();
            let proj = match form {
                SnrForm::AsPrinted => {
                    let sh: C64 = h_head.iter().map(|v| v.conj()).sum();
                    let st: C64 = h_tail.iter().map(|v| v.conj()).sum();
                    (sh * wh + st * wt).norm_sqr()
                }
                _ => comb_norm2,
            };
            num / ((sigma2 + sigma_i2 + 1.0 - a2i) * proj)
        }
        SnrForm::TwoSided { pilot_error } => {
            let alpha_p = alpha.powi(n_d as i32 + 1);
            let (ki, kj) = (alpha.powi(i as i32), alpha.powi(j as i32));
            // C = [[1 + e, ap], [ap, 1 + e]]; weights = C^{-1} k.
            let d = 1.0 + pilot_error;
            let det = d * d - alpha_p * alpha_p;
            let (uh, ut) = ((d * ki - alpha_p * kj) / det, (d * kj - alpha_p * ki) / det);
            let v = (1.0 - (ki * uh + kj * ut)).max(0.0);
            let mu: Vec<C64> = h_head
                .iter()
                .zip(h_tail)
                .map(|(a, b)| a * uh + b * ut)
                .collect();
            dotc(&comb, &mu).norm_sqr() / (comb_norm2 * (v + sigma2 + sigma_i2))
        }
    }
}

/// QPSK symbol error probability at SNR `rho` (linear).
pub fn qpsk_symbol_error(rho: f64) -> f64 {
    let e = erfc((rho.max(0.0) / 2.0).sqrt());
    e - 0.25 * e * e
}

/// Residual interference variance used by the SER model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResidualSource {
    /// High-SNR closed form.
    Floor,
    Measured(f64),
    None,
}

/// Whether the head/tail channels seen by the combiner carry estimation error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeadTailModel {
    Estimated,
    True,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SerModelConfig {
    pub alpha: f64,
    pub n_d: usize,
    pub n_p: usize,
    pub n_r: usize,
    pub residual: ResidualSource,
    pub head_tail: HeadTailModel,
    /// Initial number of draws, rounded up to whole chunks.
    pub samples: usize,
    /// Draws are doubled until the CI target is met or this cap is reached.
    pub max_samples: usize,
    pub seed: u64,
    /// Largest accepted 95% CI half-width of any `P^e_i`, relative.
    pub max_relative_halfwidth: f64,
}

impl SerModelConfig {
    pub fn new(alpha: f64, n_d: usize, n_p: usize) -> Self {
        Self {
            alpha,
            n_d,
            n_p,
            n_r: 2,
            residual: ResidualSource::Floor,
            head_tail: HeadTailModel::Estimated,
            samples: 1 << 16,
            max_samples: 1 << 22,
            seed: 1,
            max_relative_halfwidth: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SerPoint {
    pub snr_db: f64,
    pub sigma_i2: f64,
    pub pilot_error: f64,
    pub samples: usize,
    /// Per-position error rates, positions 1..=n_d.
    pub p_e_i: Vec<f64>,
    pub p_e_i_halfwidth: Vec<f64>,
    pub p_e: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SerModel {
    pub config: SerModelConfig,
    pub points: Vec<SerPoint>,
}

/// Per-antenna error of the head/tail estimates at a given SNR: the
/// interference-free estimation error at the middle pilot plus the residual
/// interference, which is common to all pilots and does not average out.
pub fn pilot_estimate_error(
    alpha: f64,
    n_d: usize,
    n_p: usize,
    snr_db: f64,
    sigma_i2: f64,
) -> Result<f64> {
    let rho = 10f64.powf(snr_db / 10.0);
    let alpha_p = alpha.powi(n_d as i32 + 1);
    let pilots = vec![C64::new(1.0, 0.0); n_p];
    let dec = cee_decomposition(&pilots, alpha_p, rho, n_p / 2)?;
    Ok(dec.predicted_cee(1.0 / rho, 1.0) + sigma_i2)
}

/// Semi-analytic SER of the two-pilot combiner by Monte Carlo over the
/// head/tail channel estimates.
pub fn ser_curve(cfg: &SerModelConfig, snr_db: &[f64]) -> Result<SerModel> {
    if snr_db.is_empty() {
        return Err(Error::InvalidConfig("empty SNR grid".into()));
    }
    if cfg.n_d == 0 || cfg.n_r == 0 {
        return Err(Error::InvalidConfig(
            "SER model needs n_d >= 1 and n_r >= 1".into(),
        ));
    }
    let alpha_p = cfg.alpha.powi(cfg.n_d as i32 + 1);
    let floor = predict_floors(cfg.alpha, cfg.n_d, cfg.n_p)?.sigma2_i_floor;
    let points = snr_db
        .iter()
        .map(|&snr| {
            let sigma2 = 10f64.powf(-snr / 10.0);
            let sigma_i2 = match cfg.residual {
                ResidualSource::Floor => floor,
                ResidualSource::Measured(v) => v,
                ResidualSource::None => 0.0,
            };
            let pilot_error = match cfg.head_tail {
                HeadTailModel::Estimated => {
                    pilot_estimate_error(cfg.alpha, cfg.n_d, cfg.n_p, snr, sigma_i2)?
                }
                HeadTailModel::True => 0.0,
            };
            ser_point(cfg, alpha_p, snr, sigma2, sigma_i2, pilot_error)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SerModel {
        config: *cfg,
        points,
    })
}

const DRAW_CHUNK: usize = 4096;

fn ser_point(
    cfg: &SerModelConfig,
    alpha_p: f64,
    snr_db: f64,
    sigma2: f64,
    sigma_i2: f64,
    pilot_error: f64,
) -> Result<SerPoint> {
    let n_d = cfg.n_d;
    let n_r = cfg.n_r;
    let form = SnrForm::TwoSided { pilot_error };
    let sd = (1.0 + pilot_error).sqrt();
    let cross = alpha_p / (1.0 + pilot_error);
    let resid = (1.0 - cross * cross).max(0.0).sqrt();
    // Each chunk draws from its own stream, so extending the sample keeps
    // earlier draws unchanged.
    let draw_chunk = |chunk: usize| -> Vec<(f64, f64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(chunk as u64);
        let mut acc = vec![(0.0, 0.0); n_d];
        for _ in 0..DRAW_CHUNK {
            let hh: Vec<C64> = (0..n_r).map(|_| standard_cscg(&mut rng) * sd).collect();
            let ht: Vec<C64> = hh
                .iter()
                .map(|h| h * cross + standard_cscg(&mut rng) * (resid * sd))
                .collect();
            for (pos, slot) in acc.iter_mut().enumerate() {
                let rho = equivalent_snr(&hh, &ht, pos + 1, n_d, cfg.alpha, sigma2, sigma_i2, form);
                let f = qpsk_symbol_error(rho);
                slot.0 += f;
                slot.1 += f * f;
            }
        }
        acc
    };

    let max_chunks = cfg.max_samples.max(cfg.samples).div_ceil(DRAW_CHUNK);
    let mut chunks = cfg.samples.div_ceil(DRAW_CHUNK).max(1);
    let mut sums = vec![(0.0, 0.0); n_d];
    let mut done = 0;
    loop {
        let fresh: Vec<Vec<(f64, f64)>> = (done..chunks).into_par_iter().map(draw_chunk).collect();
        for acc in &fresh {
            for (s, a) in sums.iter_mut().zip(acc) {
                s.0 += a.0;
                s.1 += a.1;
            }
        }
        done = chunks;
        let n = (done * DRAW_CHUNK) as f64;
        let stats: Vec<(f64, f64)> = sums
            .iter()
            .map(|&(s, s2)| {
                let mean = s / n;
                let var = (s2 / n - mean * mean).max(0.0) * n / (n - 1.0);
                (mean, 1.96 * (var / n).sqrt())
            })
            .collect();
        let worst = stats
            .iter()
            .enumerate()
            .filter(|(_, (m, _))| *m > 0.0)
            .map(|(k, (m, hw))| (k, hw / m))
            .fold(None, |acc: Option<(usize, f64)>, cur| match acc {
                Some(a) if a.1 >= cur.1 => Some(a),
                _ => Some(cur),
            });
        match worst {
            Some((pos, rel)) if rel > cfg.max_relative_halfwidth => {
                if done >= max_chunks {
                    return Err(Error::InsufficientSamples {
                        position: pos + 1,
                        relative_halfwidth: rel,
                        limit: cfg.max_relative_halfwidth,
                    });
                }
                chunks = (2 * done).min(max_chunks);
            }
            _ => {
                let p_e_i: Vec<f64> = stats.iter().map(|s| s.0).collect();
                let p_e = p_e_i.iter().sum::<f64>() / n_d as f64;
                return Ok(SerPoint {
                    snr_db,
                    sigma_i2,
                    pilot_error,
                    samples: done * DRAW_CHUNK,
                    p_e_i,
                    p_e_i_halfwidth: stats.iter().map(|s| s.1).collect(),
                    p_e,
                });
            }
        }
    }
}

/// Data symbols delivered correctly per symbol period.
pub fn throughput(p_e: f64, n_d: usize, n_p: usize) -> f64 {
    (1.0 - p_e) * overhead_factor(n_d, n_p)
}

/// Fraction of the frame carrying data.
pub fn overhead_factor(n_d: usize, n_p: usize) -> f64 {
    let data = (n_d * (n_p - 1)) as f64;
    data / ((n_d + 1) * (n_p - 1) + 1) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SearchMethod {
    Bisection,
    Exhaustive,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThroughputPoint {
    pub n_d: usize,
    pub pilot_density: f64,
    pub p_e: f64,
    pub tp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThroughputModel {
    /// Sorted by increasing `n_d` (decreasing pilot density).
    pub profile: Vec<ThroughputPoint>,
    pub n_d_opt: usize,
    pub pilot_density_opt: f64,
    pub tp_max: f64,
    pub unimodal: bool,
    pub method: SearchMethod,
    /// Argmax from the full scan, kept for cross-checking.
    pub exhaustive_n_d_opt: usize,
}

impl ThroughputModel {
    /// True when the optimum is not at either end of the scanned range.
    pub fn interior_maximum(&self) -> bool {
        let first = self.profile.first().map(|p| p.n_d);
        let last = self.profile.last().map(|p| p.n_d);
        Some(self.n_d_opt) != first && Some(self.n_d_opt) != last
    }
}

/// Discrete unimodality: strictly rising then non-increasing.
pub fn is_unimodal(values: &[f64]) -> bool {
    let mut k = 0;
    while k + 1 < values.len() && values[k + 1] > values[k] {
        k += 1;
    }
    values[k..].windows(2).all(|w| w[1] <= w[0])
}

fn exhaustive_argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = k;
        }
    }
    best
}

fn bisection_argmax(values: &[f64]) -> usize {
    let (mut lo, mut hi) = (0, values.len() - 1);
    while lo < hi {
        let mid = (lo + hi) / 2;
        if values[mid] < values[mid + 1] {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Maximizes throughput over `n_d_values` given a provider of `P^e(n_d)`.
/// Bisection is used when the profile is unimodal, otherwise the full scan
/// decides.
pub fn optimize_pilot_density<F>(
    n_d_values: &[usize],
    n_p: usize,
    mut p_e_of: F,
) -> Result<ThroughputModel>
where
    F: FnMut(usize) -> Result<f64>,
{
    if n_d_values.is_empty() || n_p < 2 {
        return Err(Error::InvalidConfig(
            "need a non-empty n_d range and n_p >= 2".into(),
        ));
    }
    let mut grid = n_d_values.to_vec();
    grid.sort_unstable();
    grid.dedup();
    let profile = grid
        .iter()
        .map(|&n_d| {
            let p_e = p_e_of(n_d)?;
            Ok(ThroughputPoint {
                n_d,
                pilot_density: 1.0 / (n_d + 1) as f64,
                p_e,
                tp: throughput(p_e, n_d, n_p),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let tps: Vec<f64> = profile.iter().map(|p| p.tp).collect();
    let unimodal = is_unimodal(&tps);
    let exhaustive = exhaustive_argmax(&tps);
    let (best, method) = if unimodal {
        (bisection_argmax(&tps), SearchMethod::Bisection)
    } else {
        (exhaustive, SearchMethod::Exhaustive)
    };
    Ok(ThroughputModel {
        n_d_opt: profile[best].n_d,
        pilot_density_opt: profile[best].pilot_density,
        tp_max: profile[best].tp,
        unimodal,
        method,
        exhaustive_n_d_opt: profile[exhaustive].n_d,
        profile,
    })
}

/// Throughput optimization with `P^e` from the semi-analytic model.
pub fn optimize_pilot_density_model(
    base: &SerModelConfig,
    snr_db: f64,
    n_d_values: &[usize],
) -> Result<ThroughputModel> {
    optimize_pilot_density(n_d_values, base.n_p, |n_d| {
        let cfg = SerModelConfig { n_d, ..*base };
        Ok(ser_curve(&cfg, &[snr_db])?.points[0].p_e)
    })
}

/// One row of the prediction table export.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictionRow {
    pub interference: bool,
    pub alpha: f64,
    pub n_d: usize,
    pub n_p: usize,
    pub snr_db: f64,
    /// Residual interference power per antenna used by the SER model.
    pub sigma2_i: f64,
    /// SINR ceiling; absent without interference.
    pub sinr_limit_db: Option<f64>,
    pub p_e_model: f64,
    pub tp_model: f64,
}

/// Model-only prediction for one operating point. With interference the
/// residual takes its high-SNR floor.
pub fn predict_point(
    base: &SerModelConfig,
    interference: bool,
    snr_db: f64,
) -> Result<PredictionRow> {
    let floors = predict_floors(base.alpha, base.n_d, base.n_p)?;
    let residual = if interference {
        ResidualSource::Floor
    } else {
        ResidualSource::None
    };
    let model = ser_curve(&SerModelConfig { residual, ..*base }, &[snr_db])?;
    let point = &model.points[0];
    Ok(PredictionRow {
        interference,
        alpha: base.alpha,
        n_d: base.n_d,
        n_p: base.n_p,
        snr_db,
        sigma2_i: point.sigma_i2,
        sinr_limit_db: interference.then_some(floors.sinr_limit_db),
        p_e_model: point.p_e,
        tp_model: throughput(point.p_e, base.n_d, base.n_p),
    })
}

pub fn write_prediction_csv(path: &Path, rows: &[PredictionRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}
