//! Joint estimation of the interference coefficients and of the desired
//! channel at pilot positions, followed by interference cancellation.
//!
//! For each pilot `n` the observation at every other pilot `i` is
//! conditioned on `h_n` and on the neighbouring pilot observation on the
//! side of `n`. That turns the joint Gaussian likelihood into a sum of
//! independent terms, so `h_n` can be profiled out in closed form and the
//! remaining quadratic in `c` solved as an `L x L` Hermitian system.
//! Antennas are treated as independent, so every weight is a scalar.

use crate::channel::{FadingParams, FrameLayout, FrameObservation};
use crate::error::{Error, Result};
use crate::modulation::C64;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

/// Condition-number limit for the per-pilot `D_n` solve.
pub const CONDITION_LIMIT: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorParams {
    /// Channel correlation between consecutive (effective) pilots.
    pub alpha_p: f64,
    pub sigma2: f64,
    pub sigma_h2: f64,
}

impl EstimatorParams {
    pub fn for_layout(layout: &FrameLayout, fading: &FadingParams) -> Self {
        Self {
            alpha_p: layout.alpha_p(fading.alpha),
            sigma2: fading.sigma2,
            sigma_h2: fading.sigma_h2,
        }
    }

    /// Every symbol of the frame used as a pilot.
    pub fn whole_frame(fading: &FadingParams) -> Self {
        Self {
            alpha_p: fading.alpha,
            sigma2: fading.sigma2,
            sigma_h2: fading.sigma_h2,
        }
    }

    pub fn rho(&self) -> f64 {
        self.sigma_h2 / self.sigma2
    }

    fn validate(&self) -> Result<()> {
        if !(self.alpha_p > 0.0 && self.alpha_p <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "alpha_p {} outside (0, 1]",
                self.alpha_p
            )));
        }
        if !(self.sigma2 > 0.0 && self.sigma_h2 > 0.0) {
            return Err(Error::InvalidConfig(
                "estimator needs positive variances".into(),
            ));
        }
        Ok(())
    }
}

/// The observations the estimator sees: known symbols, received vectors and
/// interference matrices at the (effective) pilot positions, in order.
#[derive(Debug, Clone)]
pub struct PilotObservations {
    pub x: Vec<C64>,
    pub y: Vec<DVector<C64>>,
    pub b: Vec<DMatrix<C64>>,
}

impl PilotObservations {
    pub fn from_frame(obs: &FrameObservation) -> Self {
        let pos: Vec<usize> = obs.layout.pilot_positions().collect();
        Self {
            x: obs.layout.pilot_symbols.clone(),
            y: pos.iter().map(|&k| obs.y[k].clone()).collect(),
            b: pos.iter().map(|&k| obs.b[k].clone()).collect(),
        }
    }

    /// The whole frame with `symbols` (pilots plus current decisions) as
    /// known symbols.
    pub fn whole_frame(obs: &FrameObservation, symbols: &[C64]) -> Self {
        Self {
            x: symbols.to_vec(),
            y: obs.y.clone(),
            b: obs.b.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn n_r(&self) -> usize {
        self.y.first().map_or(0, |v| v.len())
    }

    pub fn n_eic(&self) -> usize {
        self.b.first().map_or(0, |m| m.ncols())
    }

    fn validate(&self) -> Result<()> {
        let n = self.x.len();
        if n < 2 {
            return Err(Error::InvalidConfig("need at least two pilots".into()));
        }
        for (what, found) in [
            ("pilot observations", self.y.len()),
            ("pilot interference matrices", self.b.len()),
        ] {
            if found != n {
                return Err(Error::DimensionMismatch {
                    what,
                    expected: n,
                    found,
                });
            }
        }
        let (n_r, l) = (self.n_r(), self.n_eic());
        if let Some(v) = self.y.iter().find(|v| v.len() != n_r) {
            return Err(Error::DimensionMismatch {
                what: "observation length",
                expected: n_r,
                found: v.len(),
            });
        }
        if let Some(m) = self.b.iter().find(|m| m.nrows() != n_r || m.ncols() != l) {
            return Err(Error::DimensionMismatch {
                what: "interference matrix shape",
                expected: n_r * l,
                found: m.nrows() * m.ncols(),
            });
        }
        Ok(())
    }
}

/// Distribution of pilot `i` given `h_n` and its neighbour toward `n`:
/// `y_i - beta y_nb ~ CN(omega x_i h_n + (B_i - beta B_nb) c, sigma2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionalParams {
    pub omega: f64,
    pub beta: C64,
    pub sigma2: f64,
    /// +1 for `i < n`, -1 for `i > n`, 0 on the diagonal.
    pub sign: i8,
}

impl ConditionalParams {
    /// Index of the neighbour toward `n`, if any.
    pub fn neighbour(&self, i: usize) -> Option<usize> {
        match self.sign {
            1 => Some(i + 1),
            -1 => Some(i - 1),
            _ => None,
        }
    }
}

pub fn conditional_params(
    n: usize,
    i: usize,
    params: &EstimatorParams,
    pilots: &[C64],
) -> ConditionalParams {
    let s2 = params.sigma2;
    if i == n {
        return ConditionalParams {
            omega: 1.0,
            beta: C64::new(0.0, 0.0),
            sigma2: s2,
            sign: 0,
        };
    }
    let sign: i8 = if i < n { 1 } else { -1 };
    let d = i.abs_diff(n);
    let nb = if i < n { i + 1 } else { i - 1 };
    let rho = params.rho();
    let ln_ap = params.alpha_p.ln();
    let ap2 = params.alpha_p * params.alpha_p;
    // 1 - alpha_p^{2(d-1)}: how much the neighbour's channel has decorrelated from h_n.
    let decor = -(2.0 * (d - 1) as f64 * ln_ap).exp_m1();
    let ratio = rho * decor;
    let omega = (d as f64 * ln_ap).exp() / (1.0 + ratio);
    let beta = pilots[i] * pilots[nb].conj() * (params.alpha_p * ratio / (1.0 + ratio));
    let sigma2 = s2 * (1.0 + rho * (1.0 - ap2) + ap2 * ratio / (1.0 + ratio));
    ConditionalParams {
        omega,
        beta,
        sigma2,
        sign,
    }
}

/// Per-pilot sufficient statistics.
///
/// With `h` profiled out, `h_n(c) = (q - P c) / a` and the optimal `c`
/// solves `D c = rhs`.
#[derive(Debug, Clone)]
pub struct PilotWorkspace {
    pub a: f64,
    pub p: DMatrix<C64>,
    pub q: DVector<C64>,
    pub d: DMatrix<C64>,
    pub rhs: DVector<C64>,
}

impl PilotWorkspace {
    pub fn channel_at(&self, c: &DVector<C64>) -> DVector<C64> {
        (&self.q - &self.p * c).unscale(self.a)
    }

    pub fn solve_eic(&self, pilot: usize) -> Result<DVector<C64>> {
        solve_hpd(&self.d, &self.rhs, pilot)
    }
}

/// Cross products between interference matrices and observations of
/// adjacent pilots; every `(i, n)` pair only ever touches these.
struct GramCache {
    g_self: Vec<DMatrix<C64>>,
    g_next: Vec<DMatrix<C64>>,
    u_self: Vec<DVector<C64>>,
    u_fwd: Vec<DVector<C64>>,
    u_bwd: Vec<DVector<C64>>,
}

impl GramCache {
    fn new(obs: &PilotObservations) -> Self {
        let n = obs.len();
        let b = &obs.b;
        let y = &obs.y;
        Self {
            g_self: b.iter().map(|m| m.adjoint() * m).collect(),
            g_next: (0..n - 1).map(|i| b[i].adjoint() * &b[i + 1]).collect(),
            u_self: (0..n).map(|i| b[i].adjoint() * &y[i]).collect(),
            u_fwd: (0..n - 1).map(|i| b[i].adjoint() * &y[i + 1]).collect(),
            u_bwd: (0..n - 1).map(|i| b[i + 1].adjoint() * &y[i]).collect(),
        }
    }
}

fn build_workspace_cached(
    obs: &PilotObservations,
    cache: &GramCache,
    n: usize,
    params: &EstimatorParams,
) -> PilotWorkspace {
    let (n_r, l) = (obs.n_r(), obs.n_eic());
    let mut a = 1.0 / params.sigma_h2;
    let mut p = DMatrix::<C64>::zeros(n_r, l);
    let mut q = DVector::<C64>::zeros(n_r);
    let mut qm = DMatrix::<C64>::zeros(l, l);
    let mut r = DVector::<C64>::zeros(l);

    for i in 0..obs.len() {
        let cp = conditional_params(n, i, params, &obs.x);
        let w = 1.0 / cp.sigma2;
        let xw = obs.x[i].conj() * (cp.omega * w);
        a += cp.omega * cp.omega * obs.x[i].norm_sqr() * w;
        let beta = cp.beta;
        let g_ii = &cache.g_self[i];
        let u_ii = &cache.u_self[i];

        let Some(nb) = cp.neighbour(i).filter(|_| beta != C64::new(0.0, 0.0)) else {
            add_scaled(&mut p, xw, &obs.b[i]);
            add_scaled(&mut q, xw, &obs.y[i]);
            add_scaled(&mut qm, C64::new(w, 0.0), g_ii);
            add_scaled(&mut r, C64::new(w, 0.0), u_ii);
            continue;
        };

        add_scaled(&mut p, xw, &obs.b[i]);
        add_scaled(&mut p, -xw * beta, &obs.b[nb]);
        add_scaled(&mut q, xw, &obs.y[i]);
        add_scaled(&mut q, -xw * beta, &obs.y[nb]);

        // (B_i - beta B_nb)^H (B_i - beta B_nb) and (B_i - beta B_nb)^H (y_i - beta y_nb).
        let b2 = beta.norm_sqr();
        let g_nn = &cache.g_self[nb];
        let u_nn = &cache.u_self[nb];
        let forward = nb == i + 1;
        let lo = i.min(nb);
        let g_link = &cache.g_next[lo];
        for col in 0..l {
            for row in 0..l {
                // G(i, nb)[row, col] and G(nb, i)[row, col].
                let (g_in, g_ni) = if forward {
                    (g_link[(row, col)], g_link[(col, row)].conj())
                } else {
                    (g_link[(col, row)].conj(), g_link[(row, col)])
                };
                qm[(row, col)] += (g_ii[(row, col)] - beta * g_in - beta.conj() * g_ni
                    + g_nn[(row, col)] * b2)
                    * w;
            }
            // B_i^H y_nb and B_nb^H y_i.
            let (bi_ynb, bnb_yi) = if forward {
                (cache.u_fwd[lo][col], cache.u_bwd[lo][col])
            } else {
                (cache.u_bwd[lo][col], cache.u_fwd[lo][col])
            };
            r[col] += (u_ii[col] - beta * bi_ynb - beta.conj() * bnb_yi + u_nn[col] * b2) * w;
        }
    }

    let ph = p.adjoint();
    let d = qm - (&ph * &p).unscale(a);
    let rhs = r - (&ph * &q).unscale(a);
    PilotWorkspace { a, p, q, d, rhs }
}

fn add_scaled<R: nalgebra::Dim, C: nalgebra::Dim, S>(
    dst: &mut nalgebra::OMatrix<C64, R, C>,
    s: C64,
    src: &nalgebra::Matrix<C64, R, C, S>,
) where
    S: nalgebra::storage::Storage<C64, R, C>,
    nalgebra::DefaultAllocator: nalgebra::allocator::Allocator<R, C>,
{
    dst.zip_apply(src, |d, v| *d += v * s);
}

/// Sufficient statistics for pilot `n` (zero based).
pub fn build_workspace(
    obs: &PilotObservations,
    n: usize,
    params: &EstimatorParams,
) -> Result<PilotWorkspace> {
    params.validate()?;
    obs.validate()?;
    if n >= obs.len() {
        return Err(Error::InvalidConfig(format!(
            "pilot index {n} out of range"
        )));
    }
    Ok(build_workspace_cached(obs, &GramCache::new(obs), n, params))
}

/// Cholesky solve with a cheap condition guard: the squared ratio of the
/// extreme diagonal entries of the factor bounds the condition number from
/// below.
fn solve_hpd(d: &DMatrix<C64>, rhs: &DVector<C64>, pilot: usize) -> Result<DVector<C64>> {
    let Some(chol) = d.clone().cholesky() else {
        return Err(Error::IllConditioned {
            pilot,
            condition: f64::INFINITY,
        });
    };
    let diag: Vec<f64> = chol.l_dirty().diagonal().iter().map(|v| v.re).collect();
    let max = diag.iter().cloned().fold(0.0, f64::max);
    let min = diag.iter().cloned().fold(f64::INFINITY, f64::min);
    let condition = (max / min).powi(2);
    if condition.is_nan() || condition > CONDITION_LIMIT {
        return Err(Error::IllConditioned { pilot, condition });
    }
    Ok(chol.solve(rhs))
}

/// `c_n` that maximizes the likelihood decomposed around pilot `n`.
pub fn estimate_eic_per_pilot(
    obs: &PilotObservations,
    n: usize,
    params: &EstimatorParams,
) -> Result<(Vec<C64>, PilotWorkspace)> {
    let ws = build_workspace(obs, n, params)?;
    let c = ws.solve_eic(n)?;
    Ok((c.iter().copied().collect(), ws))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EicEstimate {
    pub c_tilde: Vec<C64>,
    pub per_pilot: Vec<Vec<C64>>,
    /// Mean squared spread of the per-pilot estimates around their average.
    pub residual_power_estimate: f64,
}

/// Uniform average of the per-pilot estimates.
pub fn average_eic(per_pilot: Vec<Vec<C64>>) -> EicEstimate {
    let l = per_pilot.first().map_or(0, |v| v.len());
    let count = per_pilot.len().max(1) as f64;
    let mut c_tilde = vec![C64::new(0.0, 0.0); l];
    for v in &per_pilot {
        for (acc, x) in c_tilde.iter_mut().zip(v) {
            *acc += x;
        }
    }
    for v in c_tilde.iter_mut() {
        *v /= count;
    }
    let residual_power_estimate = per_pilot
        .iter()
        .map(|v| {
            v.iter()
                .zip(&c_tilde)
                .map(|(a, b)| (a - b).norm_sqr())
                .sum::<f64>()
        })
        .sum::<f64>()
        / count;
    EicEstimate {
        c_tilde,
        per_pilot,
        residual_power_estimate,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelEstimateSet {
    pub h_tilde: Vec<DVector<C64>>,
}

/// Pilot-position channel estimates with `c_tilde` subtracted.
pub fn cancel_and_estimate_channels(
    obs: &PilotObservations,
    c_tilde: &[C64],
    params: &EstimatorParams,
) -> Result<ChannelEstimateSet> {
    params.validate()?;
    obs.validate()?;
    if c_tilde.len() != obs.n_eic() {
        return Err(Error::DimensionMismatch {
            what: "EIC estimate length",
            expected: obs.n_eic(),
            found: c_tilde.len(),
        });
    }
    let cache = GramCache::new(obs);
    let c = DVector::from_column_slice(c_tilde);
    let h_tilde = (0..obs.len())
        .map(|n| build_workspace_cached(obs, &cache, n, params).channel_at(&c))
        .collect();
    Ok(ChannelEstimateSet { h_tilde })
}

#[derive(Debug, Clone)]
pub struct EstimationOutput {
    pub eic: EicEstimate,
    pub channels: ChannelEstimateSet,
    pub workspaces: Vec<PilotWorkspace>,
}

/// Estimates `c` from every pilot, averages, then re-estimates the pilot
/// channels with the average subtracted.
pub fn estimate(obs: &PilotObservations, params: &EstimatorParams) -> Result<EstimationOutput> {
    params.validate()?;
    obs.validate()?;
    let cache = GramCache::new(obs);
    let workspaces: Vec<PilotWorkspace> = (0..obs.len())
        .map(|n| build_workspace_cached(obs, &cache, n, params))
        .collect();
    let per_pilot = workspaces
        .iter()
        .enumerate()
        .map(|(n, ws)| ws.solve_eic(n).map(|c| c.iter().copied().collect()))
        .collect::<Result<Vec<Vec<C64>>>>()?;
    let eic = average_eic(per_pilot);
    let c = DVector::from_column_slice(&eic.c_tilde);
    let h_tilde = workspaces.iter().map(|ws| ws.channel_at(&c)).collect();
    Ok(EstimationOutput {
        eic,
        channels: ChannelEstimateSet { h_tilde },
        workspaces,
    })
}

/// Channel estimates when `c` is known (zero in the interference-free case).
pub fn estimate_with_known_eic(
    obs: &PilotObservations,
    c: &[C64],
    params: &EstimatorParams,
) -> Result<EstimationOutput> {
    let channels = cancel_and_estimate_channels(obs, c, params)?;
    Ok(EstimationOutput {
        eic: average_eic(vec![c.to_vec(); obs.len()]),
        channels,
        workspaces: Vec::new(),
    })
}

/// Decomposed log-likelihood around pilot `n`, up to an additive constant.
pub fn log_likelihood(
    obs: &PilotObservations,
    n: usize,
    params: &EstimatorParams,
    h: &DVector<C64>,
    c: &DVector<C64>,
) -> f64 {
    let mut ll = -h.norm_squared() / params.sigma_h2;
    for i in 0..obs.len() {
        let cp = conditional_params(n, i, params, &obs.x);
        let mut resid = &obs.y[i] - &obs.b[i] * c - h * (obs.x[i] * cp.omega);
        if let Some(nb) = cp.neighbour(i) {
            resid -= (&obs.y[nb] - &obs.b[nb] * c) * cp.beta;
        }
        ll -= resid.norm_squared() / cp.sigma2;
    }
    ll
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StationarityReport {
    pub gradient_norm: f64,
    pub scale: f64,
    /// Random perturbations that did not decrease the likelihood.
    pub increases: usize,
}

/// First-order optimality audit of `(h, c)` for the likelihood around pilot
/// `n`: central-difference gradient over the real coordinates plus 20
/// random probes of size 1e-3.
pub fn verify_stationarity_of_estimator(
    obs: &PilotObservations,
    n: usize,
    params: &EstimatorParams,
    h: &DVector<C64>,
    c: &DVector<C64>,
) -> Result<StationarityReport> {
    let n_r = h.len();
    let dims = 2 * (n_r + c.len());
    let at = |theta: &[f64]| {
        let hh = DVector::from_fn(n_r, |r, _| C64::new(theta[2 * r], theta[2 * r + 1]));
        let cc = DVector::from_fn(c.len(), |l, _| {
            C64::new(theta[2 * (n_r + l)], theta[2 * (n_r + l) + 1])
        });
        log_likelihood(obs, n, params, &hh, &cc)
    };
    let theta: Vec<f64> = h
        .iter()
        .chain(c.iter())
        .flat_map(|z| [z.re, z.im])
        .collect();
    let base = at(&theta);
    let scale = base.abs().max(1.0);

    let mut grad2 = 0.0;
    for k in 0..dims {
        let step = 1e-5 * (1.0 + theta[k].abs());
        let mut plus = theta.clone();
        let mut minus = theta.clone();
        plus[k] += step;
        minus[k] -= step;
        let g = (at(&plus) - at(&minus)) / (2.0 * step);
        grad2 += g * g;
    }
    let gradient_norm = grad2.sqrt();

    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut increases = 0;
    for _ in 0..20 {
        let dir: Vec<f64> = (0..dims).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        let probe: Vec<f64> = theta
            .iter()
            .zip(&dir)
            .map(|(t, d)| t + 1e-3 * d / norm)
            .collect();
        if at(&probe) >= base {
            increases += 1;
        }
    }

    let report = StationarityReport {
        gradient_norm,
        scale,
        increases,
    };
    if gradient_norm >= 1e-6 * scale || increases > 0 {
        return Err(Error::StationarityViolation {
            gradient_norm,
            scale,
            increases,
        });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{evolve_channel, generate_frame, synthesize_observations};
    use crate::modulation::{random_qpsk, standard_cscg};
    use crate::waveform::{build_interference_matrix, InterferenceSource};
    use nalgebra::SymmetricEigen;

    struct Toy {
        obs: FrameObservation,
        params: EstimatorParams,
    }

    #[allow(clippy::too_many_arguments)]
    fn toy(
        seed: u64,
        n_p: usize,
        n_d: usize,
        n_r: usize,
        l: usize,
        snr_db: f64,
        alpha: f64,
        power: f64,
    ) -> Toy {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layout = FrameLayout::new(n_p, n_d);
        layout.pilot_symbols = (0..n_p).map(|_| random_qpsk(&mut rng)).collect();
        let fading = FadingParams::from_snr_db(alpha, n_r, snr_db);
        let len = layout.frame_length();
        let x = generate_frame(&layout, &mut rng);
        let trace = evolve_channel(&fading, len, &mut rng);
        let m = 1;
        let src = InterferenceSource::random(
            n_r,
            InterferenceSource::symbols_needed(len, m, l),
            power,
            &mut rng,
        );
        let b = (0..len)
            .map(|k| build_interference_matrix(&src, k, l, m).unwrap())
            .collect();
        let c: Vec<C64> = (0..l).map(|_| standard_cscg(&mut rng)).collect();
        let obs =
            synthesize_observations(&layout, &x, trace, b, &c, fading.sigma2, &mut rng).unwrap();
        Toy {
            params: EstimatorParams::for_layout(&layout, &fading),
            obs,
        }
    }

    /// Conditional moments of `y_i - x_i h_i`-style observations computed
    /// directly from the joint covariance of `(h_n, h_i, h_nb)`.
    fn schur_oracle(n: usize, i: usize, p: &EstimatorParams, x: &[C64]) -> (f64, C64, f64) {
        let d = i.abs_diff(n) as i32;
        let ap = p.alpha_p;
        let nb_d = d - 1;
        // Given h_n: h_i ~ CN(ap^d h_n, 1 - ap^{2d}), h_nb ~ CN(ap^{d-1} h_n, 1 - ap^{2(d-1)}).
        let c11 = p.sigma_h2 * (1.0 - ap.powi(2 * d)) + p.sigma2;
        let c22 = p.sigma_h2 * (1.0 - ap.powi(2 * nb_d)) + p.sigma2;
        let nb = if i < n { i + 1 } else { i - 1 };
        // h_i = ap h_nb + innovation independent of (h_n, h_nb).
        let c12 = x[i] * x[nb].conj() * (p.sigma_h2 * ap * (1.0 - ap.powi(2 * nb_d)));
        let beta = c12 / c22;
        // E[y_i | h_n, y_nb] = x_i ap^d h_n + beta (y_nb - x_nb ap^{d-1} h_n)
        let omega_x = x[i] * ap.powi(d) - beta * x[nb] * ap.powi(nb_d);
        let omega = (omega_x * x[i].conj()).re;
        let var = c11 - c12.norm_sqr() / c22;
        (omega, beta, var)
    }

    #[test]
    fn diagonal_and_adjacent_params() {
        let p = EstimatorParams {
            alpha_p: 0.9,
            sigma2: 0.1,
            sigma_h2: 1.0,
        };
        let x = [C64::new(1.0, 0.0), C64::new(0.0, 1.0), C64::new(-1.0, 0.0)];
        let cp = conditional_params(1, 1, &p, &x);
        assert_eq!(
            (cp.omega, cp.beta, cp.sigma2, cp.sign),
            (1.0, C64::new(0.0, 0.0), 0.1, 0)
        );
        for i in [0, 2] {
            let cp = conditional_params(1, i, &p, &x);
            assert!((cp.omega - 0.9).abs() < 1e-15);
            assert_eq!(cp.beta, C64::new(0.0, 0.0));
            assert!((cp.sigma2 - (0.1 + 0.19)).abs() < 1e-14);
        }
        assert_eq!(conditional_params(2, 0, &p, &x).sign, 1);
        assert_eq!(conditional_params(0, 2, &p, &x).sign, -1);
    }

    #[test]
    fn high_snr_trend() {
        let p = EstimatorParams {
            alpha_p: 0.96,
            sigma2: 1e-12,
            sigma_h2: 1.0,
        };
        let x = [C64::new(1.0, 0.0); 6];
        let cp = conditional_params(5, 1, &p, &x);
        assert!(cp.omega < 1e-9);
        assert!((cp.beta.norm() - 0.96).abs() < 1e-9);
        assert!((cp.sigma2 - (1.0 - 0.96f64.powi(2))).abs() < 1e-9);
    }

    #[test]
    fn params_match_covariance_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..200 {
            let n_p = 8;
            let x: Vec<C64> = (0..n_p).map(|_| random_qpsk(&mut rng)).collect();
            let p = EstimatorParams {
                alpha_p: rng.random_range(0.5..0.999),
                sigma2: 10f64.powf(rng.random_range(-4.0..0.5)),
                sigma_h2: 1.0,
            };
            let n = rng.random_range(0..n_p);
            let i = rng.random_range(0..n_p);
            if i == n {
                continue;
            }
            let cp = conditional_params(n, i, &p, &x);
            let (omega, beta, var) = schur_oracle(n, i, &p, &x);
            assert!((cp.omega - omega).abs() < 1e-10 * (1.0 + omega));
            assert!((cp.beta - beta).norm() < 1e-10);
            assert!(
                (cp.sigma2 - var).abs() < 1e-10 * var,
                "{} vs {var}",
                cp.sigma2
            );
            assert!(cp.sigma2 > 0.0);
        }
    }

    #[test]
    fn cached_workspace_matches_direct_assembly() {
        let t = toy(3, 7, 2, 2, 3, 15.0, 0.97, 1.0);
        let obs = PilotObservations::from_frame(&t.obs);
        for n in 0..obs.len() {
            let ws = build_workspace(&obs, n, &t.params).unwrap();
            let (l, n_r) = (obs.n_eic(), obs.n_r());
            let mut a = 1.0;
            let mut p = DMatrix::<C64>::zeros(n_r, l);
            let mut q = DVector::<C64>::zeros(n_r);
            let mut qm = DMatrix::<C64>::zeros(l, l);
            let mut r = DVector::<C64>::zeros(l);
            for i in 0..obs.len() {
                let cp = conditional_params(n, i, &t.params, &obs.x);
                let (mut bi, mut yi) = (obs.b[i].clone(), obs.y[i].clone());
                if let Some(nb) = cp.neighbour(i) {
                    bi -= &obs.b[nb] * cp.beta;
                    yi -= &obs.y[nb] * cp.beta;
                }
                let xin = obs.x[i] * cp.omega;
                a += xin.norm_sqr() / cp.sigma2;
                p += &bi * (xin.conj() / cp.sigma2);
                q += &yi * (xin.conj() / cp.sigma2);
                qm += bi.adjoint() * &bi / C64::new(cp.sigma2, 0.0);
                r += bi.adjoint() * &yi / C64::new(cp.sigma2, 0.0);
            }
            let d = &qm - (p.adjoint() * &p).unscale(a);
            assert!((ws.a - a).abs() < 1e-9 * a);
            assert!((&ws.p - &p).norm() < 1e-9 * p.norm());
            assert!((&ws.q - &q).norm() < 1e-9 * q.norm());
            assert!((&ws.d - &d).norm() < 1e-9 * qm.norm());
        }
    }

    #[test]
    fn estimate_is_stationary_point() {
        for seed in 0..20 {
            let t = toy(100 + seed, 3, 1, 1, 1, 12.0, 0.95, 1.0);
            let obs = PilotObservations::from_frame(&t.obs);
            for n in 0..3 {
                let (c, ws) = estimate_eic_per_pilot(&obs, n, &t.params).unwrap();
                let c = DVector::from_vec(c);
                let h = ws.channel_at(&c);
                verify_stationarity_of_estimator(&obs, n, &t.params, &h, &c).unwrap();
            }
        }
    }

    #[test]
    fn off_optimum_point_fails_audit() {
        let t = toy(7, 3, 1, 1, 1, 12.0, 0.95, 1.0);
        let obs = PilotObservations::from_frame(&t.obs);
        let (c, ws) = estimate_eic_per_pilot(&obs, 1, &t.params).unwrap();
        let c = DVector::from_vec(c);
        let h = ws.channel_at(&c) + DVector::from_element(1, C64::new(0.001, 0.0));
        let err = verify_stationarity_of_estimator(&obs, 1, &t.params, &h, &c).unwrap_err();
        assert!(matches!(err, Error::StationarityViolation { .. }));
    }

    #[test]
    fn slow_noiseless_fading_is_maximized_at_truth() {
        let t = toy(8, 4, 1, 1, 1, 100.0, 1.0, 0.0);
        let frame = &t.obs;
        let obs = PilotObservations::from_frame(frame);
        let truth = &frame.trace.h[0];
        let zero = DVector::from_element(1, C64::new(0.0, 0.0));
        let best = log_likelihood(&obs, 0, &t.params, truth, &zero);
        for d in [C64::new(1e-3, 0.0), C64::new(0.0, -1e-3)] {
            let h = truth + DVector::from_element(1, d);
            assert!(log_likelihood(&obs, 0, &t.params, &h, &zero) < best);
        }
        let est = estimate_with_known_eic(&obs, &[C64::new(0.0, 0.0)], &t.params).unwrap();
        assert!((&est.channels.h_tilde[0] - truth).norm() < 1e-4);
    }

    #[test]
    fn d_matrices_are_positive_definite() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for trial in 0..100 {
            let l = if rng.random_bool(0.5) { 2 } else { 4 };
            // Each B_i has rank one, so D_n can only be definite when n_p >= L.
            let n_p = if l == 2 && rng.random_bool(0.5) {
                3
            } else {
                11
            };
            let t = toy(
                1000 + trial,
                n_p,
                rng.random_range(0..4),
                2,
                l,
                rng.random_range(0.0..40.0),
                rng.random_range(0.9..0.999),
                1.0,
            );
            let obs = PilotObservations::from_frame(&t.obs);
            let stacked = DMatrix::from_fn(n_p * 2, l, |r, c| obs.b[r / 2][(r % 2, c)]);
            let sv = stacked.singular_values();
            if sv.min() < 1e-9 * sv.max() {
                // QPSK interferers can repeat the same row pattern on every pilot.
                let err = estimate(&obs, &t.params).unwrap_err();
                assert!(matches!(err, Error::IllConditioned { .. }));
                continue;
            }
            for n in 0..n_p {
                let ws = build_workspace(&obs, n, &t.params).unwrap();
                assert!(ws.a >= 1.0);
                let herm = (&ws.d + ws.d.adjoint()) * C64::new(0.5, 0.0);
                let eig = SymmetricEigen::new(herm);
                let min = eig
                    .eigenvalues
                    .iter()
                    .cloned()
                    .fold(f64::INFINITY, f64::min);
                assert!(min > 0.0, "trial {trial} pilot {n}: {min}");
            }
        }
    }

    #[test]
    fn estimation_error_does_not_depend_on_c() {
        let t = toy(41, 11, 3, 2, 4, 20.0, 0.99, 1.0);
        let obs = PilotObservations::from_frame(&t.obs);
        let base = estimate(&obs, &t.params).unwrap();
        let mut shifted = obs.clone();
        let dc: Vec<C64> = t
            .obs
            .c_true
            .iter()
            .map(|c| c * 4.0 + C64::new(0.5, -1.0))
            .collect();
        let dcv = DVector::from_column_slice(&dc);
        for (y, b) in shifted.y.iter_mut().zip(&shifted.b) {
            *y += b * &dcv;
        }
        let moved = estimate(&shifted, &t.params).unwrap();
        for l in 0..4 {
            let e0 = base.eic.c_tilde[l] - t.obs.c_true[l];
            let e1 = moved.eic.c_tilde[l] - t.obs.c_true[l] - dc[l];
            assert!((e0 - e1).norm() < 1e-10, "{e0} vs {e1}");
        }
        for (h0, h1) in base.channels.h_tilde.iter().zip(&moved.channels.h_tilde) {
            assert!((h0 - h1).norm() < 1e-10);
        }
    }

    #[test]
    fn averaging_examples() {
        let same = average_eic(vec![vec![C64::new(0.3, 0.2)]; 5]);
        assert_eq!(same.c_tilde, vec![C64::new(0.3, 0.2)]);
        assert_eq!(same.residual_power_estimate, 0.0);
        let two = average_eic(vec![vec![C64::new(1.0, 0.0)], vec![C64::new(0.0, 1.0)]]);
        assert_eq!(two.c_tilde, vec![C64::new(0.5, 0.5)]);
    }

    #[test]
    fn constant_interference_is_ill_conditioned() {
        let mut t = toy(51, 5, 1, 1, 2, 20.0, 0.99, 1.0);
        for m in t.obs.b.iter_mut() {
            m.fill(C64::new(1.0, 0.0));
        }
        let obs = PilotObservations::from_frame(&t.obs);
        let err = estimate(&obs, &t.params).unwrap_err();
        assert!(matches!(err, Error::IllConditioned { .. }));
    }

    #[test]
    fn noiseless_slow_fading_recovers_channels() {
        let t = toy(61, 6, 2, 2, 1, 90.0, 1.0, 0.0);
        let obs = PilotObservations::from_frame(&t.obs);
        let est = estimate_with_known_eic(&obs, &[C64::new(0.0, 0.0)], &t.params).unwrap();
        for (n, k) in t.obs.layout.pilot_positions().enumerate() {
            assert!((&est.channels.h_tilde[n] - &t.obs.trace.h[k]).norm() < 1e-3);
        }
    }

    #[test]
    fn dimension_checks() {
        let t = toy(71, 4, 1, 2, 2, 10.0, 0.99, 1.0);
        let obs = PilotObservations::from_frame(&t.obs);
        let err = cancel_and_estimate_channels(&obs, &[C64::new(0.0, 0.0)], &t.params).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }
}
