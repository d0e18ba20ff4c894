//! QPSK constellation and circularly-symmetric Gaussian sampling helpers.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2, FRAC_PI_4};

pub type C64 = Complex64;

/// QPSK points in index order: 1, j, -1, -j.
pub const QPSK: [C64; 4] = [
    C64::new(1.0, 0.0),
    C64::new(0.0, 1.0),
    C64::new(-1.0, 0.0),
    C64::new(0.0, -1.0),
];

/// Index of the QPSK point nearest to `z`.
///
/// Decision sectors are half-open: phase in (-pi/4, pi/4] maps to index 0,
/// (pi/4, 3pi/4] to index 1, and so on. `z = 0` maps to index 0.
pub fn qpsk_index(z: C64) -> usize {
    let phase = z.im.atan2(z.re);
    let u = ((FRAC_PI_4 - phase) / FRAC_PI_2).floor() as i64;
    (-u).rem_euclid(4) as usize
}

pub fn qpsk_nearest(z: C64) -> C64 {
    QPSK[qpsk_index(z)]
}

/// Uniformly drawn QPSK symbol.
pub fn random_qpsk<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    QPSK[rng.random_range(0..4)]
}

/// Draw from CN(0, variance).
pub fn cscg<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> C64 {
    let s = (variance * 0.5).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(s * re, s * im)
}

/// Draw from CN(0, 1), i.e. unit total variance.
pub fn standard_cscg<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(FRAC_1_SQRT_2 * re, FRAC_1_SQRT_2 * im)
}
