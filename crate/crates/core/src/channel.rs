//! Gauss-Markov fading, pilot/data frame layout and received-signal synthesis.

use crate::error::{Error, Result};
use crate::modulation::{cscg, random_qpsk, C64};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

/// Desired-link fading and noise parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FadingParams {
    pub alpha: f64,
    pub sigma_h2: f64,
    pub n_r: usize,
    pub sigma2: f64,
}

impl FadingParams {
    /// Unit channel variance and noise variance set from an SNR in dB.
    pub fn from_snr_db(alpha: f64, n_r: usize, snr_db: f64) -> Self {
        Self {
            alpha,
            sigma_h2: 1.0,
            n_r,
            sigma2: 10f64.powf(-snr_db / 10.0),
        }
    }

    pub fn rho(&self) -> f64 {
        self.sigma_h2 / self.sigma2
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "alpha {} outside (0, 1]",
                self.alpha
            )));
        }
        if self.n_r == 0 {
            return Err(Error::InvalidConfig("n_r must be >= 1".into()));
        }
        if self.sigma_h2.is_nan()
            || self.sigma_h2 <= 0.0
            || self.sigma2.is_nan()
            || self.sigma2 < 0.0
        {
            return Err(Error::InvalidConfig("variances must be positive".into()));
        }
        Ok(())
    }
}

/// Pilots at positions 0, n_d + 1, 2(n_d + 1), ... with `n_d` data symbols
/// between consecutive pilots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameLayout {
    pub n_p: usize,
    pub n_d: usize,
    pub pilot_symbols: Vec<C64>,
}

impl FrameLayout {
    /// All-ones pilots.
    pub fn new(n_p: usize, n_d: usize) -> Self {
        Self {
            n_p,
            n_d,
            pilot_symbols: vec![C64::new(1.0, 0.0); n_p],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_p < 2 {
            return Err(Error::InvalidConfig("n_p must be >= 2".into()));
        }
        if self.pilot_symbols.len() != self.n_p {
            return Err(Error::DimensionMismatch {
                what: "pilot symbols",
                expected: self.n_p,
                found: self.pilot_symbols.len(),
            });
        }
        if self
            .pilot_symbols
            .iter()
            .any(|p| (p.norm() - 1.0).abs() > 1e-12)
        {
            return Err(Error::InvalidConfig(
                "pilot symbols must be unit modulus".into(),
            ));
        }
        Ok(())
    }

    pub fn stride(&self) -> usize {
        self.n_d + 1
    }

    pub fn frame_length(&self) -> usize {
        (self.n_p - 1) * self.stride() + 1
    }

    pub fn pilot_position(&self, n: usize) -> usize {
        n * self.stride()
    }

    pub fn pilot_positions(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_p).map(|n| self.pilot_position(n))
    }

    pub fn is_pilot(&self, k: usize) -> bool {
        k % self.stride() == 0
    }

    pub fn data_positions(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.frame_length()).filter(|&k| !self.is_pilot(k))
    }

    pub fn n_data(&self) -> usize {
        (self.n_p - 1) * self.n_d
    }

    pub fn alpha_p(&self, alpha: f64) -> f64 {
        alpha.powi(self.stride() as i32)
    }
}

/// Per-symbol channel vectors `h_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelTrace {
    pub h: Vec<DVector<C64>>,
}

impl ChannelTrace {
    pub fn len(&self) -> usize {
        self.h.len()
    }

    pub fn is_empty(&self) -> bool {
        self.h.is_empty()
    }
}

/// Stationary start, then `h_{k+1} = alpha h_k + sqrt(1 - alpha^2) Delta_k`.
pub fn evolve_channel<R: Rng + ?Sized>(
    params: &FadingParams,
    length: usize,
    rng: &mut R,
) -> ChannelTrace {
    let n_r = params.n_r;
    let innovation = (1.0 - params.alpha * params.alpha).max(0.0).sqrt();
    let mut h = Vec::with_capacity(length);
    if length == 0 {
        return ChannelTrace { h };
    }
    h.push(DVector::from_fn(n_r, |_, _| cscg(rng, params.sigma_h2)));
    for k in 1..length {
        let prev = &h[k - 1];
        let next = DVector::from_fn(n_r, |r, _| {
            let delta = cscg(rng, params.sigma_h2);
            prev[r] * params.alpha + delta * innovation
        });
        h.push(next);
    }
    ChannelTrace { h }
}

/// Desired symbol sequence: pilots at pilot positions, uniform QPSK elsewhere.
pub fn generate_frame<R: Rng + ?Sized>(layout: &FrameLayout, rng: &mut R) -> Vec<C64> {
    (0..layout.frame_length())
        .map(|k| {
            if layout.is_pilot(k) {
                layout.pilot_symbols[k / layout.stride()]
            } else {
                random_qpsk(rng)
            }
        })
        .collect()
}

/// One received frame together with its ground truth.
#[derive(Debug, Clone)]
pub struct FrameObservation {
    pub y: Vec<DVector<C64>>,
    pub x_true: Vec<C64>,
    pub b: Vec<DMatrix<C64>>,
    pub c_true: Vec<C64>,
    pub trace: ChannelTrace,
    pub layout: FrameLayout,
}

impl FrameObservation {
    pub fn n_r(&self) -> usize {
        self.y.first().map_or(0, |v| v.len())
    }

    pub fn is_interference_free(&self) -> bool {
        self.b
            .iter()
            .all(|m| m.iter().all(|v| *v == C64::new(0.0, 0.0)))
    }

    /// Debug dump; complex values are written as `[re, im]` pairs.
    pub fn to_debug_json(&self) -> Value {
        let pair = |z: &C64| json!([z.re, z.im]);
        let vecs = |v: &[DVector<C64>]| -> Value {
            v.iter()
                .map(|row| row.iter().map(pair).collect::<Vec<_>>())
                .collect()
        };
        let mats: Value = self
            .b
            .iter()
            .map(|m| {
                (0..m.nrows())
                    .map(|r| (0..m.ncols()).map(|c| pair(&m[(r, c)])).collect::<Vec<_>>())
                    .collect::<Vec<_>>()
            })
            .collect();
        json!({
            "layout": {"n_p": self.layout.n_p, "n_d": self.layout.n_d},
            "y": vecs(&self.y),
            "h": vecs(&self.trace.h),
            "x_true": self.x_true.iter().map(pair).collect::<Vec<_>>(),
            "c_true": self.c_true.iter().map(pair).collect::<Vec<_>>(),
            "b": mats,
        })
    }
}

/// `y_k = h_k x_k + B_k c + w_k` with `w_k ~ CN(0, sigma2 I)`.
pub fn synthesize_observations<R: Rng + ?Sized>(
    layout: &FrameLayout,
    symbols: &[C64],
    trace: ChannelTrace,
    b: Vec<DMatrix<C64>>,
    c: &[C64],
    sigma2: f64,
    rng: &mut R,
) -> Result<FrameObservation> {
    let len = layout.frame_length();
    for (what, found) in [
        ("symbol sequence", symbols.len()),
        ("channel trace", trace.len()),
        ("interference matrices", b.len()),
    ] {
        if found != len {
            return Err(Error::DimensionMismatch {
                what,
                expected: len,
                found,
            });
        }
    }
    let n_r = trace.h.first().map_or(0, |h| h.len());
    if let Some(bad) = b.iter().find(|m| m.nrows() != n_r || m.ncols() != c.len()) {
        return Err(Error::DimensionMismatch {
            what: "interference matrix shape",
            expected: n_r * c.len(),
            found: bad.nrows() * bad.ncols(),
        });
    }
    let cv = DVector::from_column_slice(c);
    let y = (0..len)
        .map(|k| {
            let mut v = &trace.h[k] * symbols[k] + &b[k] * &cv;
            for e in v.iter_mut() {
                *e += cscg(rng, sigma2);
            }
            v
        })
        .collect();
    Ok(FrameObservation {
        y,
        x_true: symbols.to_vec(),
        b,
        c_true: c.to_vec(),
        trace,
        layout: layout.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zero_b(len: usize, n_r: usize, l: usize) -> Vec<DMatrix<C64>> {
        vec![DMatrix::zeros(n_r, l); len]
    }

    #[test]
    fn alpha_one_trace_is_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = FadingParams::from_snr_db(1.0, 2, 10.0);
        let t = evolve_channel(&p, 50, &mut rng);
        assert!(t.h.iter().all(|h| h == &t.h[0]));
    }

    #[test]
    fn lag_one_autocorrelation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = FadingParams::from_snr_db(0.99, 1, 10.0);
        let t = evolve_channel(&p, 100_000, &mut rng);
        let (mut num, mut den) = (0.0, 0.0);
        for k in 1..t.len() {
            num += (t.h[k][0] * t.h[k - 1][0].conj()).re;
            den += t.h[k - 1][0].norm_sqr();
        }
        // Strong serial correlation inflates the standard error; 1e5 samples
        // at alpha = 0.99 leave roughly 5e-4.
        assert!((num / den - 0.99).abs() < 3.0 * 5e-4, "{}", num / den);
    }

    #[test]
    fn stationary_power() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = FadingParams::from_snr_db(0.9, 2, 10.0);
        let trials = 10_000;
        let samples: Vec<f64> = (0..trials)
            .map(|_| evolve_channel(&p, 8, &mut rng).h[7].norm_squared())
            .collect();
        let mean = samples.iter().sum::<f64>() / trials as f64;
        let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (trials - 1) as f64;
        let se = (var / trials as f64).sqrt();
        assert!((mean - 2.0).abs() < 3.0 * se, "{mean} +- {se}");
    }

    #[test]
    fn pilot_rate_correlation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let layout = FrameLayout::new(2, 3);
        let p = FadingParams::from_snr_db(0.99, 1, 10.0);
        let pairs = 10_000;
        let (mut num, mut den) = (0.0, 0.0);
        let mut prods = Vec::with_capacity(pairs);
        for _ in 0..pairs {
            let t = evolve_channel(&p, layout.frame_length(), &mut rng);
            let v = (t.h[layout.pilot_position(1)][0] * t.h[0][0].conj()).re;
            prods.push(v);
            num += v;
            den += t.h[0][0].norm_sqr();
        }
        let alpha_p = layout.alpha_p(0.99);
        let mean = num / pairs as f64;
        let sd = (prods.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / pairs as f64).sqrt();
        let se = sd / (pairs as f64).sqrt() / (den / pairs as f64);
        assert!((num / den - alpha_p).abs() < 3.0 * se);
    }

    #[test]
    fn frame_lengths() {
        assert_eq!(FrameLayout::new(2, 0).frame_length(), 2);
        assert_eq!(FrameLayout::new(51, 3).frame_length(), 201);
        assert_eq!(FrameLayout::new(51, 9).frame_length(), 501);
        let l = FrameLayout::new(3, 2);
        assert_eq!(l.pilot_positions().collect::<Vec<_>>(), vec![0, 3, 6]);
        assert_eq!(l.data_positions().collect::<Vec<_>>(), vec![1, 2, 4, 5]);
        assert_eq!(l.n_data(), 4);
    }

    #[test]
    fn frame_symbols_respect_layout() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut layout = FrameLayout::new(2, 0);
        layout.pilot_symbols = vec![C64::new(0.0, 1.0), C64::new(-1.0, 0.0)];
        assert_eq!(generate_frame(&layout, &mut rng), layout.pilot_symbols);
        let layout = FrameLayout::new(5, 4);
        let x = generate_frame(&layout, &mut rng);
        assert_eq!(x.len(), 21);
        for (k, s) in x.iter().enumerate() {
            assert!((s.norm() - 1.0).abs() < 1e-15);
            if layout.is_pilot(k) {
                assert_eq!(*s, C64::new(1.0, 0.0));
            }
        }
        assert!(FrameLayout::new(1, 3).validate().is_err());
    }

    #[test]
    fn noiseless_observation_recovers_channel() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let layout = FrameLayout::new(4, 2);
        let p = FadingParams::from_snr_db(0.95, 2, 10.0);
        let x = generate_frame(&layout, &mut rng);
        let t = evolve_channel(&p, layout.frame_length(), &mut rng);
        let len = layout.frame_length();
        let obs = synthesize_observations(
            &layout,
            &x,
            t.clone(),
            zero_b(len, 2, 2),
            &[C64::new(0.3, 0.1), C64::new(0.0, 0.0)],
            0.0,
            &mut rng,
        )
        .unwrap();
        assert!(obs.is_interference_free());
        for k in 0..len {
            let est = &obs.y[k] / x[k];
            assert!((est - &t.h[k]).norm() < 1e-15);
        }
    }

    #[test]
    fn observation_linear_in_c() {
        let layout = FrameLayout::new(3, 1);
        let len = layout.frame_length();
        let p = FadingParams::from_snr_db(0.95, 2, 10.0);
        let run = |scale: f64| {
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            let x = generate_frame(&layout, &mut rng);
            let t = evolve_channel(&p, len, &mut rng);
            let b: Vec<DMatrix<C64>> = (0..len)
                .map(|k| DMatrix::from_fn(2, 2, |r, c| C64::new((k + r) as f64, c as f64)))
                .collect();
            let c = [C64::new(0.5, -0.25) * scale, C64::new(0.125, 0.5) * scale];
            synthesize_observations(&layout, &x, t, b, &c, p.sigma2, &mut rng).unwrap()
        };
        let (o1, o2) = (run(1.0), run(2.0));
        let c = DVector::from_column_slice(&o1.c_true);
        for k in 0..len {
            let diff = &o2.y[k] - &o1.y[k];
            assert!((diff - &o1.b[k] * &c).norm() < 1e-12);
        }
    }

    #[test]
    fn noise_calibration() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let layout = FrameLayout::new(501, 0);
        let p = FadingParams::from_snr_db(0.99, 2, 7.0);
        let len = layout.frame_length();
        let mut acc = 0.0;
        let mut count = 0;
        while count < 100_000 {
            let x = generate_frame(&layout, &mut rng);
            let t = evolve_channel(&p, len, &mut rng);
            let obs = synthesize_observations(
                &layout,
                &x,
                t,
                zero_b(len, 2, 1),
                &[C64::new(1.0, 0.0)],
                p.sigma2,
                &mut rng,
            )
            .unwrap();
            for k in 0..len {
                let w = &obs.y[k] - &obs.trace.h[k] * x[k];
                for e in w.iter() {
                    acc += e.re * e.re + e.im * e.im;
                    count += 2;
                }
            }
        }
        let per_dim = acc / count as f64;
        assert!((per_dim / (p.sigma2 / 2.0) - 1.0).abs() < 0.02);
    }

    #[test]
    fn seeded_runs_are_identical() {
        let layout = FrameLayout::new(3, 2);
        let p = FadingParams::from_snr_db(0.99, 2, 10.0);
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let x = generate_frame(&layout, &mut rng);
            let t = evolve_channel(&p, layout.frame_length(), &mut rng);
            let len = layout.frame_length();
            let b = zero_b(len, 2, 2);
            let obs = synthesize_observations(
                &layout,
                &x,
                t,
                b,
                &[C64::new(1.0, 0.0); 2],
                p.sigma2,
                &mut rng,
            )
            .unwrap();
            serde_json::to_string(&obs.to_debug_json()).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let layout = FrameLayout::new(3, 1);
        let p = FadingParams::from_snr_db(0.99, 1, 10.0);
        let t = evolve_channel(&p, 4, &mut rng);
        let x = vec![C64::new(1.0, 0.0); 5];
        let err = synthesize_observations(
            &layout,
            &x,
            t,
            zero_b(5, 1, 1),
            &[C64::new(1.0, 0.0)],
            0.1,
            &mut rng,
        )
        .unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }
}
