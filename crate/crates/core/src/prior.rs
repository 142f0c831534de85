//! Noise schedule, ε-prediction priors and the deterministic DDIM update.
//!
//! Clean estimates are kept *unscaled*: `ddim_predict_clean` returns
//! `(z_t − √(1−ᾱ_t)·ε̂)/√ᾱ_t` and `ddim_step` applies the `√ᾱ_{t−1}` factor.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::field::LatentField;

/// Cumulative signal fractions `ᾱ_0..ᾱ_T` with `ᾱ_0 = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// Schedule from an explicit `ᾱ` table, checked for `ᾱ_0 = 1`, strict
    /// decrease and positivity.
    pub fn from_alpha_bar(alpha_bar: Vec<f64>) -> Result<Self> {
        if alpha_bar.len() < 2 {
            return Err(Error::InvalidParameter("schedule needs at least one step".into()));
        }
        if alpha_bar[0] != 1.0 {
            return Err(Error::InvalidParameter("alpha_bar[0] must be 1".into()));
        }
        if alpha_bar.windows(2).any(|p| !(p[1] < p[0])) {
            return Err(Error::InvalidParameter("alpha_bar must be strictly decreasing".into()));
        }
        if !(alpha_bar[alpha_bar.len() - 1] > 0.0) {
            return Err(Error::InvalidParameter("alpha_bar[T] must be positive".into()));
        }
        Ok(Self { alpha_bar })
    }

    pub fn total_steps(&self) -> usize {
        self.alpha_bar.len() - 1
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.total_steps() {
            return Err(Error::InvalidParameter(format!(
                "timestep {t} outside 1..={}",
                self.total_steps()
            )));
        }
        Ok(())
    }
}

impl Default for NoiseSchedule {
    /// Linear β from 1e-4 to 0.02 over 1000 steps.
    fn default() -> Self {
        linear_schedule(1000, 1e-4, 0.02).expect("valid default schedule")
    }
}

/// DDPM schedule with linearly spaced `β_1..β_T`.
pub fn linear_schedule(total_steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if total_steps == 0 {
        return Err(Error::InvalidParameter("T must be positive".into()));
    }
    if !(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
        )));
    }
    let mut alpha_bar = Vec::with_capacity(total_steps + 1);
    alpha_bar.push(1.0);
    let mut acc = 1.0;
    for s in 0..total_steps {
        let beta = if total_steps == 1 {
            beta_start
        } else {
            beta_start + (beta_end - beta_start) * s as f64 / (total_steps - 1) as f64
        };
        acc *= 1.0 - beta;
        alpha_bar.push(acc);
    }
    NoiseSchedule::from_alpha_bar(alpha_bar)
}

/// Number of steps covered by a fraction of the schedule, `⌊fraction · T⌋`.
pub fn steps_for(fraction: f64, total_steps: usize) -> usize {
    let x = fraction * total_steps as f64;
    let r = x.round();
    if (x - r).abs() < 1e-9 {
        r as usize
    } else {
        x.floor() as usize
    }
}

/// ε-prediction interface standing in for a trained denoising network.
pub trait DenoisingPrior: Send + Sync {
    fn predict_eps(&self, z_t: &LatentField, t: usize, schedule: &NoiseSchedule) -> Result<LatentField>;

    /// Vector-Jacobian product `Jᵀu` of the posterior mean
    /// `z ↦ (z − √(1−ᾱ_t)·ε̂(z))/√ᾱ_t`, when the prior can provide it exactly.
    fn clean_vjp(
        &self,
        _z_t: &LatentField,
        _t: usize,
        _schedule: &NoiseSchedule,
        _cotangent: &LatentField,
    ) -> Option<Result<LatentField>> {
        None
    }
}

/// Isotropic Gaussian mixture over latents; ε̂ is the exact MMSE noise
/// estimate under the mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixturePrior {
    weights: Vec<f64>,
    means: Vec<LatentField>,
    var: f64,
}

impl GaussianMixturePrior {
    pub fn new(weights: Vec<f64>, means: Vec<LatentField>, var: f64) -> Result<Self> {
        if weights.is_empty() || weights.len() != means.len() {
            return Err(Error::InvalidParameter(format!(
                "{} weights for {} means",
                weights.len(),
                means.len()
            )));
        }
        if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidParameter("mixture weights must be finite and >= 0".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!("mixture weights sum to {total}")));
        }
        if !(var > 0.0 && var.is_finite()) {
            return Err(Error::InvalidParameter(format!("mixture variance {var}")));
        }
        let shape = means[0].shape();
        if means.iter().any(|m| m.shape() != shape) {
            return Err(Error::ShapeMismatch("mixture means differ in shape".into()));
        }
        Ok(Self { weights, means, var })
    }

    /// Uniform weights over `means`.
    pub fn uniform(means: Vec<LatentField>, var: f64) -> Result<Self> {
        let k = means.len();
        if k == 0 {
            return Err(Error::InvalidParameter("mixture needs at least one component".into()));
        }
        Self::new(vec![1.0 / k as f64; k], means, var)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[LatentField] {
        &self.means
    }

    pub fn var(&self) -> f64 {
        self.var
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn latent_shape(&self) -> (usize, usize, usize) {
        self.means[0].shape()
    }

    fn check_shape(&self, z: &LatentField) -> Result<()> {
        if z.shape() != self.latent_shape() {
            return Err(Error::ShapeMismatch(format!(
                "latent {:?} vs prior {:?}",
                z.shape(),
                self.latent_shape()
            )));
        }
        Ok(())
    }

    /// Posterior component probabilities `r_k(z_t)`, evaluated in log space.
    pub fn responsibilities(&self, z_t: &LatentField, t: usize, schedule: &NoiseSchedule) -> Result<Vec<f64>> {
        schedule.check_step(t)?;
        self.check_shape(z_t)?;
        Ok(self.responsibilities_at(z_t, schedule.alpha_bar(t)))
    }

    fn responsibilities_at(&self, z: &LatentField, a: f64) -> Vec<f64> {
        let s = a * self.var + 1.0 - a;
        let sa = a.sqrt();
        let log_terms: Vec<f64> = self
            .weights
            .iter()
            .zip(&self.means)
            .map(|(&w, mu)| {
                if w == 0.0 {
                    return f64::NEG_INFINITY;
                }
                let d2: f64 = z
                    .data()
                    .iter()
                    .zip(mu.data())
                    .map(|(zi, mi)| (zi - sa * mi).powi(2))
                    .sum();
                w.ln() - d2 / (2.0 * s)
            })
            .collect();
        softmax(&log_terms)
    }

    /// `E[x₀ | z_t]` under the mixture.
    pub fn posterior_mean(&self, z_t: &LatentField, t: usize, schedule: &NoiseSchedule) -> Result<LatentField> {
        schedule.check_step(t)?;
        self.check_shape(z_t)?;
        Ok(self.posterior_mean_at(z_t, schedule.alpha_bar(t)))
    }

    fn posterior_mean_at(&self, z: &LatentField, a: f64) -> LatentField {
        let r = self.responsibilities_at(z, a);
        let sa = a.sqrt();
        // Component posterior mean: μ_k + b·(z − √a·μ_k)
        let b = sa * self.var / (a * self.var + 1.0 - a);
        let mut mean_mu = vec![0.0; z.len()];
        for (rk, mu) in r.iter().zip(&self.means) {
            if *rk == 0.0 {
                continue;
            }
            for (acc, m) in mean_mu.iter_mut().zip(mu.data()) {
                *acc += rk * m;
            }
        }
        let data = z
            .data()
            .iter()
            .zip(&mean_mu)
            .map(|(zi, mbar)| (1.0 - b * sa) * mbar + b * zi)
            .collect();
        z.with_data(data)
    }
}

fn softmax(log_terms: &[f64]) -> Vec<f64> {
    let max = log_terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = log_terms.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

impl DenoisingPrior for GaussianMixturePrior {
    fn predict_eps(&self, z_t: &LatentField, t: usize, schedule: &NoiseSchedule) -> Result<LatentField> {
        let mean = self.posterior_mean(z_t, t, schedule)?;
        let a = schedule.alpha_bar(t);
        let (sa, sn) = (a.sqrt(), (1.0 - a).sqrt());
        Ok(z_t.with_data(
            z_t.data()
                .iter()
                .zip(mean.data())
                .map(|(z, m)| (z - sa * m) / sn)
                .collect(),
        ))
    }

    /// The posterior-mean Jacobian is symmetric:
    /// `J = b·I + c·Σ_k r_k (μ_k − μ̄)(μ_k − μ̄)ᵀ`.
    fn clean_vjp(
        &self,
        z_t: &LatentField,
        t: usize,
        schedule: &NoiseSchedule,
        cotangent: &LatentField,
    ) -> Option<Result<LatentField>> {
        let run = || -> Result<LatentField> {
            schedule.check_step(t)?;
            self.check_shape(z_t)?;
            self.check_shape(cotangent)?;
            let a = schedule.alpha_bar(t);
            let sa = a.sqrt();
            let s = a * self.var + 1.0 - a;
            let b = sa * self.var / s;
            let c = sa * (1.0 - b * sa) / s;
            let r = self.responsibilities_at(z_t, a);
            let n = z_t.len();
            let mut mu_bar = vec![0.0; n];
            for (rk, mu) in r.iter().zip(&self.means) {
                for (acc, m) in mu_bar.iter_mut().zip(mu.data()) {
                    *acc += rk * m;
                }
            }
            let mut out: Vec<f64> = cotangent.data().iter().map(|u| b * u).collect();
            for (rk, mu) in r.iter().zip(&self.means) {
                if *rk == 0.0 {
                    continue;
                }
                let proj: f64 = mu
                    .data()
                    .iter()
                    .zip(&mu_bar)
                    .zip(cotangent.data())
                    .map(|((m, mb), u)| (m - mb) * u)
                    .sum();
                let coef = c * rk * proj;
                for ((o, m), mb) in out.iter_mut().zip(mu.data()).zip(&mu_bar) {
                    *o += coef * (m - mb);
                }
            }
            Ok(z_t.with_data(out))
        };
        Some(run())
    }
}

/// Non-learned prior: soft-thresholding in the orthonormal 2D DCT domain with
/// a noise-adaptive threshold `τ·√((1−ᾱ_t)/ᾱ_t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShrinkagePrior {
    threshold_scale: f64,
}

impl ShrinkagePrior {
    pub fn new(threshold_scale: f64) -> Result<Self> {
        if !(threshold_scale >= 0.0 && threshold_scale.is_finite()) {
            return Err(Error::InvalidParameter(format!("threshold scale {threshold_scale}")));
        }
        Ok(Self { threshold_scale })
    }

    pub fn threshold_scale(&self) -> f64 {
        self.threshold_scale
    }

    /// Shrunk clean estimate `x̃₀`.
    pub fn denoise(&self, z_t: &LatentField, t: usize, schedule: &NoiseSchedule) -> Result<LatentField> {
        schedule.check_step(t)?;
        let a = schedule.alpha_bar(t);
        let thr = self.threshold_scale * ((1.0 - a) / a).sqrt();
        let scaled = z_t.map(|v| v / a.sqrt());
        let mut coeffs = dct2_channels(&scaled, false);
        for v in coeffs.data_mut() {
            *v = soft_threshold(*v, thr);
        }
        Ok(dct2_channels(&coeffs, true))
    }
}

impl DenoisingPrior for ShrinkagePrior {
    fn predict_eps(&self, z_t: &LatentField, t: usize, schedule: &NoiseSchedule) -> Result<LatentField> {
        let clean = self.denoise(z_t, t, schedule)?;
        let a = schedule.alpha_bar(t);
        let (sa, sn) = (a.sqrt(), (1.0 - a).sqrt());
        Ok(z_t.with_data(
            z_t.data()
                .iter()
                .zip(clean.data())
                .map(|(z, x)| (z - sa * x) / sn)
                .collect(),
        ))
    }
}

pub fn soft_threshold(v: f64, thr: f64) -> f64 {
    if v > thr {
        v - thr
    } else if v < -thr {
        v + thr
    } else {
        0.0
    }
}

/// Orthonormal DCT-II matrix of size `n`, row `k` is basis function `k`.
pub(crate) fn dct_matrix(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for k in 0..n {
        let scale = if k == 0 {
            (1.0 / n as f64).sqrt()
        } else {
            (2.0 / n as f64).sqrt()
        };
        for i in 0..n {
            m[k * n + i] = scale * (PI * (i as f64 + 0.5) * k as f64 / n as f64).cos();
        }
    }
    m
}

/// Separable orthonormal 2D DCT-II (or its inverse) applied per channel.
pub fn dct2_channels(x: &LatentField, inverse: bool) -> LatentField {
    let (ch, h, w) = x.shape();
    let dh = dct_matrix(h);
    let dw = dct_matrix(w);
    let mut out = vec![0.0; x.len()];
    let mut tmp = vec![0.0; h * w];
    for c in 0..ch {
        let plane = x.channel(c);
        // rows: tmp[r, k] = Σ_i D[k,i] x[r,i]  (forward) or Σ_k D[k,i] x[r,k] (inverse)
        for r in 0..h {
            for k in 0..w {
                let mut acc = 0.0;
                for i in 0..w {
                    acc += if inverse {
                        dw[i * w + k] * plane[r * w + i]
                    } else {
                        dw[k * w + i] * plane[r * w + i]
                    };
                }
                tmp[r * w + k] = acc;
            }
        }
        let dst = &mut out[c * h * w..(c + 1) * h * w];
        for k in 0..h {
            for col in 0..w {
                let mut acc = 0.0;
                for i in 0..h {
                    acc += if inverse {
                        dh[i * h + k] * tmp[i * w + col]
                    } else {
                        dh[k * h + i] * tmp[i * w + col]
                    };
                }
                dst[k * w + col] = acc;
            }
        }
    }
    x.with_data(out)
}

/// `(z_t − √(1−ᾱ_t)·ε̂)/√ᾱ_t`.
pub fn ddim_predict_clean(z_t: &LatentField, t: usize, eps_hat: &LatentField, schedule: &NoiseSchedule) -> Result<LatentField> {
    if t > schedule.total_steps() {
        return Err(Error::InvalidParameter(format!("timestep {t} beyond T")));
    }
    let a = schedule.alpha_bar(t);
    let (sa, sn) = (a.sqrt(), (1.0 - a).sqrt());
    z_t.axpby(1.0 / sa, eps_hat, -sn / sa)
}

/// Deterministic DDIM update to `t − 1`:
/// `z_{t−1} = √ᾱ_{t−1}·clean + √(1−ᾱ_{t−1})·ε̂ + guidance`.
pub fn ddim_step(
    t: usize,
    clean: &LatentField,
    eps_hat: &LatentField,
    schedule: &NoiseSchedule,
    guidance: Option<&LatentField>,
) -> Result<LatentField> {
    if t == 0 || t > schedule.total_steps() {
        return Err(Error::InvalidParameter(format!("timestep {t} outside 1..=T")));
    }
    let a = schedule.alpha_bar(t - 1);
    let mut next = clean.axpby(a.sqrt(), eps_hat, (1.0 - a).sqrt())?;
    if let Some(g) = guidance {
        if !g.same_shape(&next) {
            return Err(Error::ShapeMismatch(format!(
                "guidance {:?} vs latent {:?}",
                g.shape(),
                next.shape()
            )));
        }
        for (v, gv) in next.data_mut().iter_mut().zip(g.data()) {
            *v += gv;
        }
    }
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn random_latent(shape: (usize, usize, usize), seed: u64) -> LatentField {
        let mut rng = crate::rng::stream(seed, 77);
        let n = shape.0 * shape.1 * shape.2;
        LatentField::new(shape.0, shape.1, shape.2, (0..n).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
    }

    #[test]
    fn single_step_schedule() {
        let s = linear_schedule(1, 0.02, 0.02).unwrap();
        assert_eq!(s.alpha_bars(), &[1.0, 0.98]);
    }

    #[test]
    fn default_schedule_end_value() {
        // Oracle: direct product of (1 − β_s).
        let s = NoiseSchedule::default();
        let mut p = 1.0;
        for i in 0..1000 {
            p *= 1.0 - (1e-4 + (0.02 - 1e-4) * i as f64 / 999.0);
        }
        assert!((s.alpha_bar(1000) - p).abs() < 1e-15);
        assert!((s.alpha_bar(1000) - 4.04e-5).abs() < 0.01e-5);
        assert!(s.alpha_bars().windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn schedule_rejects_bad_ranges() {
        assert!(linear_schedule(10, 0.0, 0.1).is_err());
        assert!(linear_schedule(10, 0.2, 0.1).is_err());
        assert!(linear_schedule(10, 0.1, 1.0).is_err());
        assert!(linear_schedule(0, 0.1, 0.2).is_err());
    }

    #[test]
    fn steps_for_floors() {
        assert_eq!(steps_for(0.4, 1000), 400);
        assert_eq!(steps_for(0.7, 1000), 700);
        assert_eq!(steps_for(0.3, 1000), 300);
        assert_eq!(steps_for(0.4567, 1000), 456);
    }

    #[test]
    fn standard_normal_mixture_matches_closed_form() {
        let s = NoiseSchedule::default();
        let prior = GaussianMixturePrior::uniform(vec![LatentField::zeros(1, 4, 4)], 1.0).unwrap();
        let z = random_latent((1, 4, 4), 1);
        for &t in &[1, 250, 500, 999] {
            let eps = prior.predict_eps(&z, t, &s).unwrap();
            let a = s.alpha_bar(t);
            for (e, zi) in eps.data().iter().zip(z.data()) {
                assert!((e - (1.0 - a).sqrt() * zi).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn delta_prior_explains_residual_as_noise() {
        let s = NoiseSchedule::default();
        let mu = random_latent((1, 3, 3), 2);
        let prior = GaussianMixturePrior::uniform(vec![mu.clone()], 1e-12).unwrap();
        let z = random_latent((1, 3, 3), 3);
        let t = 300;
        let a = s.alpha_bar(t);
        let eps = prior.predict_eps(&z, t, &s).unwrap();
        for ((e, zi), m) in eps.data().iter().zip(z.data()).zip(mu.data()) {
            let expect = (zi - a.sqrt() * m) / (1.0 - a).sqrt();
            assert!((e - expect).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_threshold_shrinkage_predicts_no_noise() {
        let s = NoiseSchedule::default();
        let prior = ShrinkagePrior::new(0.0).unwrap();
        let z = random_latent((2, 8, 6), 4);
        let eps = prior.predict_eps(&z, 500, &s).unwrap();
        assert!(eps.data().iter().all(|e| e.abs() < 1e-12));
    }

    #[test]
    fn dct_is_orthonormal() {
        let x = random_latent((2, 8, 6), 5);
        let c = dct2_channels(&x, false);
        assert!((c.norm_l2() - x.norm_l2()).abs() < 1e-12);
        let back = dct2_channels(&c, true);
        for (a, b) in back.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn responsibilities_survive_huge_log_gaps() {
        let s = NoiseSchedule::default();
        let near = LatentField::zeros(1, 4, 4);
        let far = near.map(|_| 100.0);
        let prior = GaussianMixturePrior::uniform(vec![near.clone(), far], 0.01).unwrap();
        let r = prior.responsibilities(&near, 1, &s).unwrap();
        assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(r[0], 1.0);
    }

    #[test]
    fn mixture_rejects_unnormalized_weights() {
        let m = LatentField::zeros(1, 2, 2);
        assert!(GaussianMixturePrior::new(vec![0.5, 0.6], vec![m.clone(), m.clone()], 1.0).is_err());
        assert!(GaussianMixturePrior::new(vec![1.0], vec![m.clone()], 0.0).is_err());
    }

    #[test]
    fn predict_rejects_out_of_range_steps() {
        let s = linear_schedule(10, 1e-3, 1e-2).unwrap();
        let prior = ShrinkagePrior::new(0.1).unwrap();
        let z = LatentField::zeros(1, 2, 2);
        assert!(prior.predict_eps(&z, 0, &s).is_err());
        assert!(prior.predict_eps(&z, 11, &s).is_err());
    }

    #[test]
    fn predict_clean_edge_cases() {
        let s = NoiseSchedule::default();
        let z = random_latent((1, 3, 3), 6);
        let zero = LatentField::zeros(1, 3, 3);
        let c = ddim_predict_clean(&z, 200, &zero, &s).unwrap();
        let a = s.alpha_bar(200);
        for (x, zi) in c.data().iter().zip(z.data()) {
            assert!((x - zi / a.sqrt()).abs() < 1e-14);
        }
        let eps = random_latent((1, 3, 3), 7);
        assert_eq!(ddim_predict_clean(&z, 0, &eps, &s).unwrap(), z);
    }

    #[test]
    fn final_step_returns_clean() {
        let s = NoiseSchedule::default();
        let clean = random_latent((1, 3, 3), 8);
        let eps = random_latent((1, 3, 3), 9);
        assert_eq!(ddim_step(1, &clean, &eps, &s, None).unwrap(), clean);
    }

    #[test]
    fn zero_guidance_is_bit_identical() {
        let s = NoiseSchedule::default();
        let clean = random_latent((1, 3, 3), 10);
        let eps = random_latent((1, 3, 3), 11);
        let zero = LatentField::zeros(1, 3, 3);
        assert_eq!(
            ddim_step(40, &clean, &eps, &s, None).unwrap(),
            ddim_step(40, &clean, &eps, &s, Some(&zero)).unwrap()
        );
        let bad = LatentField::zeros(1, 2, 2);
        assert!(ddim_step(40, &clean, &eps, &s, Some(&bad)).is_err());
    }
}
