//! Independent oracles shared by the integration tests. Nothing here calls
//! into the estimator or detector internals.

#![allow(dead_code)]

use num_complex::Complex64 as C;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

pub fn cn<R: Rng>(rng: &mut R, var: f64) -> C {
    let s = (var / 2.0).sqrt();
    C::new(
        s * rng.sample::<f64, _>(StandardNormal),
        s * rng.sample::<f64, _>(StandardNormal),
    )
}

pub const QPSK: [C; 4] = [
    C::new(1.0, 0.0),
    C::new(0.0, 1.0),
    C::new(-1.0, 0.0),
    C::new(0.0, -1.0),
];

/// Scalar pilot model `z_i = y_i - b_i c = x_i h_i + w_i` with an AR(1)
/// pilot chain of correlation `alpha_p`.
#[derive(Debug, Clone)]
pub struct ScalarPilots {
    pub x: Vec<C>,
    pub y: Vec<C>,
    pub b: Vec<C>,
    pub alpha_p: f64,
    pub sigma2: f64,
    pub sigma_h2: f64,
}

/// `z_i | (h_n, z_nb) ~ CN(a_i h_n + k_i z_nb, v_i)` obtained by numerically
/// conditioning the joint covariance.
#[derive(Debug, Clone, Copy)]
pub struct Conditional {
    pub a: C,
    pub k: C,
    pub nb: Option<usize>,
    pub v: f64,
}

impl ScalarPilots {
    fn cov_h(&self, i: usize, j: usize) -> f64 {
        self.sigma_h2 * self.alpha_p.powi(i.abs_diff(j) as i32)
    }

    /// E[z_i z_j^*].
    fn cov_z(&self, i: usize, j: usize) -> C {
        let noise = if i == j { self.sigma2 } else { 0.0 };
        self.x[i] * self.x[j].conj() * self.cov_h(i, j) + noise
    }

    /// Conditional law of pilot `i` in the likelihood decomposed around `n`.
    pub fn conditional(&self, n: usize, i: usize) -> Conditional {
        if i == n {
            return Conditional {
                a: self.x[n],
                k: C::new(0.0, 0.0),
                nb: None,
                v: self.sigma2,
            };
        }
        let nb = if i < n { i + 1 } else { i - 1 };
        // v = [h_n, z_nb]
        let s12 = [self.x[i] * self.cov_h(i, n), self.cov_z(i, nb)];
        let h_znb = self.x[nb].conj() * self.cov_h(n, nb);
        let s22 = nalgebra::Matrix2::new(
            C::new(self.sigma_h2, 0.0),
            h_znb,
            h_znb.conj(),
            self.cov_z(nb, nb),
        );
        let inv = s22.try_inverse().expect("2x2 covariance is invertible");
        let row = nalgebra::RowVector2::new(s12[0], s12[1]) * inv;
        let explained = row[0] * s12[0].conj() + row[1] * s12[1].conj();
        Conditional {
            a: row[0],
            k: row[1],
            nb: Some(nb),
            v: (self.cov_z(i, i) - explained).re,
        }
    }

    fn z(&self, c: C) -> Vec<C> {
        self.y.iter().zip(&self.b).map(|(y, b)| y - b * c).collect()
    }

    /// Log-likelihood around pilot `n` up to a constant.
    pub fn log_likelihood(&self, n: usize, h: C, c: C) -> f64 {
        let z = self.z(c);
        let mut ll = -h.norm_sqr() / self.sigma_h2;
        for i in 0..self.x.len() {
            let cd = self.conditional(n, i);
            let mean = cd.a * h + cd.nb.map_or(C::new(0.0, 0.0), |nb| cd.k * z[nb]);
            ll -= (z[i] - mean).norm_sqr() / cd.v;
        }
        ll
    }

    /// Maximizer over `h` for fixed `c` (weighted least squares in the
    /// conditional-mean form).
    pub fn profile_h(&self, n: usize, c: C) -> C {
        let z = self.z(c);
        let (mut num, mut den) = (C::new(0.0, 0.0), 1.0 / self.sigma_h2);
        for i in 0..self.x.len() {
            let cd = self.conditional(n, i);
            let target = z[i] - cd.nb.map_or(C::new(0.0, 0.0), |nb| cd.k * z[nb]);
            num += cd.a.conj() * target / cd.v;
            den += cd.a.norm_sqr() / cd.v;
        }
        num / den
    }

    /// Coarse-to-fine grid search of the profiled likelihood over `c`.
    /// Returns the maximizer and the final grid step.
    pub fn grid_maximizer(&self, n: usize, center: C, half_width: f64, rounds: usize) -> (C, f64) {
        let pts = 41;
        let mut best = center;
        let mut half = half_width;
        let mut step = 0.0;
        for _ in 0..rounds {
            step = 2.0 * half / (pts - 1) as f64;
            let origin = best;
            let mut best_ll = f64::NEG_INFINITY;
            for a in 0..pts {
                for b in 0..pts {
                    let c = origin + C::new(-half + a as f64 * step, -half + b as f64 * step);
                    let ll = self.log_likelihood(n, self.profile_h(n, c), c);
                    if ll > best_ll {
                        best_ll = ll;
                        best = c;
                    }
                }
            }
            half = 2.0 * step;
        }
        (best, step)
    }

    /// Central-difference gradient norm over the four real coordinates of
    /// `(h, c)`.
    pub fn gradient_norm(&self, n: usize, h: C, c: C) -> f64 {
        let theta = [h.re, h.im, c.re, c.im];
        let f = |t: &[f64; 4]| self.log_likelihood(n, C::new(t[0], t[1]), C::new(t[2], t[3]));
        let mut g2 = 0.0;
        for k in 0..4 {
            let step = 1e-5 * (1.0 + theta[k].abs());
            let (mut p, mut m) = (theta, theta);
            p[k] += step;
            m[k] -= step;
            let g = (f(&p) - f(&m)) / (2.0 * step);
            g2 += g * g;
        }
        g2.sqrt()
    }
}

/// Draws a scalar pilot instance with `L = 1`.
pub fn scalar_instance(seed: u64, n_p: usize, alpha_p: f64, snr_db: f64) -> (ScalarPilots, C) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sigma2 = 10f64.powf(-snr_db / 10.0);
    let mut h = cn(&mut rng, 1.0);
    let c = cn(&mut rng, 1.0);
    let gain = C::from_polar(1.0, rng.random_range(0.0..std::f64::consts::TAU));
    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut b = Vec::new();
    for i in 0..n_p {
        if i > 0 {
            h = h * alpha_p + cn(&mut rng, 1.0 - alpha_p * alpha_p);
        }
        let xi = QPSK[rng.random_range(0..4)];
        let bi = gain * QPSK[rng.random_range(0..4)];
        y.push(xi * h + bi * c + cn(&mut rng, sigma2));
        x.push(xi);
        b.push(bi);
    }
    (
        ScalarPilots {
            x,
            y,
            b,
            alpha_p,
            sigma2,
            sigma_h2: 1.0,
        },
        c,
    )
}

/// Posterior probabilities of all `4^2` symbol pairs between two known
/// channels, by brute-force grid integration over the two unknown channel
/// gains. Real and imaginary parts factor for unit-modulus symbols.
pub fn two_symbol_posterior(y: [C; 2], h_head: C, h_tail: C, alpha: f64, sigma2: f64) -> Vec<f64> {
    let q = 1.0 - alpha * alpha;
    let sd_min = (sigma2.min(q) / 2.0).sqrt();
    let sd_max = (sigma2.max(q) / 2.0).sqrt();
    let step = sd_min / 4.0;
    let log_axis = |u: [f64; 2], head: f64, tail: f64| -> f64 {
        // Crude centre: each gain pulled between its data and its prior.
        let centre = [(u[0] + alpha * head) / 2.0, (u[1] + alpha * tail) / 2.0];
        let half = 10.0 * sd_max + (u[0] - u[1]).abs() + (head - tail).abs();
        let n = (2.0 * half / step).ceil() as usize + 1;
        let mut terms = Vec::with_capacity(n * n);
        for a in 0..n {
            let r1 = centre[0] - half + a as f64 * step;
            for bb in 0..n {
                let r2 = centre[1] - half + bb as f64 * step;
                let e = (u[0] - r1).powi(2) / sigma2
                    + (u[1] - r2).powi(2) / sigma2
                    + (r1 - alpha * head).powi(2) / q
                    + (r2 - alpha * r1).powi(2) / q
                    + (tail - alpha * r2).powi(2) / q;
                terms.push(-e);
            }
        }
        let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
    };
    let mut logs = Vec::with_capacity(16);
    for s0 in QPSK {
        for s1 in QPSK {
            let u0 = s0.conj() * y[0];
            let u1 = s1.conj() * y[1];
            let re = log_axis([u0.re, u1.re], h_head.re, h_tail.re);
            let im = log_axis([u0.im, u1.im], h_head.im, h_tail.im);
            logs.push(re + im);
        }
    }
    let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logs.iter().map(|l| (l - m).exp()).collect();
    let total: f64 = w.iter().sum();
    w.iter().map(|v| v / total).collect()
}

/// Empirical QPSK symbol error rate over AWGN at SNR `rho` (linear) with a
/// minimum-distance detector, and its standard error.
pub fn awgn_qpsk_ser(rho: f64, symbols: usize, seed: u64) -> (f64, f64) {
    let chunk = 1 << 16;
    let chunks = symbols.div_ceil(chunk);
    let errors: usize = (0..chunks)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            let n = chunk.min(symbols - k * chunk);
            let mut e = 0;
            for _ in 0..n {
                let s = rng.random_range(0..4);
                let r = QPSK[s] + cn(&mut rng, 1.0 / rho);
                let best = (0..4)
                    .min_by(|&a, &b| {
                        (r - QPSK[a])
                            .norm_sqr()
                            .total_cmp(&(r - QPSK[b]).norm_sqr())
                    })
                    .unwrap();
                if best != s {
                    e += 1;
                }
            }
            e
        })
        .sum();
    let p = errors as f64 / symbols as f64;
    (p, (p * (1.0 - p) / symbols as f64).sqrt())
}
