//! Hard-to-soft guided latent DDIM sampling with random phase modulation.

use std::time::Instant;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::codec::{Codec, MagnitudeNorm};
use crate::error::{Error, Result};
use crate::field::{ComplexField, Domain, LatentField, PhaseField, RealField, SamplingMask};
use crate::kspace::{fft2c, ifft2c, modulate_phase, Measurement};
use crate::prior::{ddim_predict_clean, ddim_step, steps_for, DenoisingPrior, NoiseSchedule};
use crate::quality::psnr;
use crate::rng::{self, purpose};

/// Measurement-fit objective used by soft guidance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CgObjective {
    /// `‖M ⊙ (k_rpm − k̂)‖₂`
    #[default]
    Norm,
    /// `‖M ⊙ (k_rpm − k̂)‖₂²`
    SquaredNorm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GuidanceMode {
    HardOnly,
    SoftOnly,
    HardToSoft,
}

impl GuidanceMode {
    pub fn name(self) -> &'static str {
        match self {
            GuidanceMode::HardOnly => "hard_only",
            GuidanceMode::SoftOnly => "soft_only",
            GuidanceMode::HardToSoft => "hard_to_soft",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "hard_only" => Some(GuidanceMode::HardOnly),
            "soft_only" => Some(GuidanceMode::SoftOnly),
            "hard_to_soft" => Some(GuidanceMode::HardToSoft),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub t0: f64,
    pub t_ws: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub total_steps: usize,
    pub dc_every: usize,
    pub noise_seed: u64,
    pub phase_seed: u64,
    /// Keep every step's clean estimate in the trajectory.
    pub record_trajectory: bool,
    pub objective: CgObjective,
    /// Differentiate through the prior's ε-prediction (needs
    /// [`DenoisingPrior::clean_vjp`]).
    pub full_jacobian: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            t0: 0.4,
            t_ws: 0.3,
            lambda: 1.0,
            gamma: 0.01,
            total_steps: 1000,
            dc_every: 2,
            noise_seed: 0,
            phase_seed: 0,
            record_trajectory: false,
            objective: CgObjective::Norm,
            full_jacobian: false,
        }
    }
}

impl SamplerConfig {
    pub fn check(&self) -> Result<()> {
        let bad = |s: String| Err(Error::InvalidParameter(s));
        if !(self.t0 > 0.0 && self.t0 <= 1.0) {
            return bad(format!("t0 = {} outside (0, 1]", self.t0));
        }
        if !(self.t_ws >= 0.0 && self.t_ws < self.t0) {
            return bad(format!("t_ws = {} outside [0, t0)", self.t_ws));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad(format!("lambda = {} outside [0, 1]", self.lambda));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return bad(format!("gamma = {}", self.gamma));
        }
        if self.total_steps == 0 {
            return bad("T must be positive".into());
        }
        if self.dc_every == 0 {
            return bad("dc_every must be at least 1".into());
        }
        if self.start_step() == 0 {
            return bad(format!("t0 = {} gives no steps for T = {}", self.t0, self.total_steps));
        }
        Ok(())
    }

    /// `⌊t0·T⌋`, the number of sampler iterations.
    pub fn start_step(&self) -> usize {
        steps_for(self.t0, self.total_steps)
    }

    /// `⌊t_ws·T⌋`; hard guidance runs while `t` is above it.
    pub fn watershed_step(&self) -> usize {
        steps_for(self.t_ws, self.total_steps)
    }

    /// Hard-DC applications for a hard-to-soft run.
    pub fn hard_dc_count(&self) -> usize {
        let hard_steps = self.start_step().saturating_sub(1 + self.watershed_step());
        hard_steps.div_ceil(self.dc_every)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryStep {
    pub t: usize,
    /// PSNR of this step's clean estimate against the reference.
    pub psnr: Option<f64>,
    /// `‖M ⊙ (k_rpm − k̂)‖₂` of this step's clean estimate.
    pub l2_residual: f64,
    pub clean_estimate: Option<RealField>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub steps: Vec<TrajectoryStep>,
    pub hard_dc_count: usize,
    pub final_psnr: Option<f64>,
}

impl Trajectory {
    pub fn iterations(&self) -> usize {
        self.steps.len()
    }

    /// Comma-separated `t,psnr,l2_residual` table with a header row.
    pub fn to_table(&self) -> String {
        let mut out = String::from("t,psnr,l2_residual\n");
        for s in &self.steps {
            let p = s.psnr.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!("{},{},{}\n", s.t, p, s.l2_residual));
        }
        out
    }
}

/// Soft-guidance objective and its exact gradient with respect to a clean
/// latent, for a fixed modulated measurement.
#[derive(Debug, Clone, Copy)]
pub struct SoftGuidance<'a> {
    pub codec: &'a Codec,
    pub norm: MagnitudeNorm,
    pub k_rpm: &'a ComplexField,
    pub theta: &'a PhaseField,
    pub mask: &'a SamplingMask,
    pub objective: CgObjective,
}

impl SoftGuidance<'_> {
    /// Magnitude image `denorm(decode(clean))`.
    pub fn image(&self, clean: &LatentField) -> Result<RealField> {
        Ok(self.norm.denormalize_field(&self.codec.decode(clean)?))
    }

    /// `M ⊙ (k_rpm − fft2c(x̂·e^{iθ̂}))`.
    pub fn residual(&self, x_hat: &RealField) -> Result<ComplexField> {
        let k_hat = fft2c(&ComplexField::from_polar(x_hat, self.theta)?);
        let (h, w) = k_hat.shape();
        let data = self
            .k_rpm
            .data()
            .iter()
            .zip(k_hat.data())
            .zip(self.mask.keep())
            .map(|((&a, &b), &keep)| if keep { a - b } else { Complex64::new(0.0, 0.0) })
            .collect();
        ComplexField::new(h, w, data, Domain::KSpace)
    }

    pub fn value(&self, clean: &LatentField) -> Result<f64> {
        let n = self.residual(&self.image(clean)?)?.norm_l2();
        Ok(match self.objective {
            CgObjective::Norm => n,
            CgObjective::SquaredNorm => n * n,
        })
    }

    /// Gradient with respect to `clean`: exact wherever the decoder clamp is
    /// inactive; the clamp is passed through unchanged. Zero where the
    /// residual vanishes under the norm objective.
    pub fn gradient(&self, clean: &LatentField) -> Result<LatentField> {
        let r = self.residual(&self.image(clean)?)?;
        let rn = r.norm_l2();
        let factor = match self.objective {
            CgObjective::Norm if rn == 0.0 => 0.0,
            CgObjective::Norm => 1.0 / rn,
            CgObjective::SquaredNorm => 2.0,
        };
        let back = ifft2c(&r);
        let s = self.norm.scale();
        let (h, w) = back.shape();
        let data = back
            .data()
            .iter()
            .zip(self.theta.data())
            .map(|(v, &th)| -(v * Complex64::from_polar(1.0, -th)).re * factor * s)
            .collect();
        self.codec.decode_adjoint(&RealField::new(h, w, data)?)
    }
}

/// Gradient of the soft objective with respect to `z_{t}` at level `t`,
/// holding `eps_hat` fixed unless `full_jacobian` is set.
pub fn guidance_gradient(
    guidance: &SoftGuidance<'_>,
    prior: &dyn DenoisingPrior,
    z_t: &LatentField,
    t: usize,
    eps_hat: &LatentField,
    schedule: &NoiseSchedule,
    full_jacobian: bool,
) -> Result<LatentField> {
    let clean = ddim_predict_clean(z_t, t, eps_hat, schedule)?;
    let g = guidance.gradient(&clean)?;
    if full_jacobian {
        prior.clean_vjp(z_t, t, schedule, &g).unwrap_or_else(|| {
            Err(Error::InvalidParameter("prior has no analytic Jacobian".into()))
        })
    } else {
        Ok(g.map(|v| v / schedule.alpha_bar(t).sqrt()))
    }
}

/// Hard data consistency: measured samples of `k_rpm` replace those of
/// `fft2c(x̂·e^{iθ̂})`. Returns the complex consistent image.
pub fn hard_dc(x_hat: &RealField, theta: &PhaseField, k_rpm: &ComplexField, mask: &SamplingMask) -> Result<ComplexField> {
    let k_hat = fft2c(&ComplexField::from_polar(x_hat, theta)?);
    let (h, w) = k_hat.shape();
    let data = k_hat
        .data()
        .iter()
        .zip(k_rpm.data())
        .zip(mask.keep())
        .map(|((&a, &b), &keep)| if keep { b } else { a })
        .collect();
    Ok(ifft2c(&ComplexField::new(h, w, data, Domain::KSpace)?))
}

/// Initial latent `√ᾱ·encode(norm|y|) + √(1−ᾱ)·ε` at level `⌊t0·T⌋`.
fn initial_latent(encoded: &LatentField, a: f64, seed: u64) -> LatentField {
    let mut rng = rng::stream(seed, purpose::INITIAL_NOISE);
    let (sa, sn) = (a.sqrt(), (1.0 - a).sqrt());
    let data = encoded
        .data()
        .iter()
        .map(|&v| {
            let e: f64 = rng.sample(StandardNormal);
            sa * v + sn * e
        })
        .collect();
    encoded.with_data(data)
}

fn run(
    meas: &Measurement,
    prior: &dyn DenoisingPrior,
    codec: &Codec,
    schedule: &NoiseSchedule,
    cfg: &SamplerConfig,
    reference: Option<&RealField>,
    mode: GuidanceMode,
    rpm: bool,
) -> Result<(RealField, Trajectory)> {
    cfg.check()?;
    if schedule.total_steps() != cfg.total_steps {
        return Err(Error::InvalidParameter(format!(
            "config T = {} but schedule has {} steps",
            cfg.total_steps,
            schedule.total_steps()
        )));
    }
    if let Some(r) = reference {
        if r.shape() != meas.shape() {
            return Err(Error::ShapeMismatch(format!("reference {:?} vs measurement {:?}", r.shape(), meas.shape())));
        }
    }
    let y = meas.zero_filled();
    let lambda = if rpm { cfg.lambda } else { 0.0 };
    let (k_rpm, theta) = modulate_phase(&y, lambda, cfg.phase_seed)?;
    let mag = y.magnitude();
    let norm = MagnitudeNorm::from_image(&mag);
    let guidance = SoftGuidance {
        codec,
        norm,
        k_rpm: &k_rpm,
        theta: &theta,
        mask: &meas.mask,
        objective: cfg.objective,
    };

    let n0 = cfg.start_step();
    let nws = cfg.watershed_step();
    let encoded = codec.encode(&norm.normalize_field(&mag))?;
    let mut z = initial_latent(&encoded, schedule.alpha_bar(n0), cfg.noise_seed);
    let mut traj = Trajectory {
        steps: Vec::with_capacity(n0),
        ..Trajectory::default()
    };

    for t in (0..n0).rev() {
        let level = t + 1;
        let eps = prior.predict_eps(&z, level, schedule)?;
        let mut clean = ddim_predict_clean(&z, level, &eps, schedule)?;
        let x_hat = guidance.image(&clean)?;
        let l2_residual = guidance.residual(&x_hat)?.norm_l2();
        let hard = match mode {
            GuidanceMode::HardOnly => true,
            GuidanceMode::SoftOnly => false,
            GuidanceMode::HardToSoft => t > nws,
        };
        let next = if hard {
            if (n0 - 1 - t).is_multiple_of(cfg.dc_every) {
                let consistent = hard_dc(&x_hat, &theta, &k_rpm, &meas.mask)?.magnitude();
                clean = codec.encode(&norm.normalize_field(&consistent))?;
                traj.hard_dc_count += 1;
            }
            ddim_step(level, &clean, &eps, schedule, None)?
        } else if cfg.gamma > 0.0 {
            let g = guidance_gradient(&guidance, prior, &z, level, &eps, schedule, cfg.full_jacobian)?;
            ddim_step(level, &clean, &eps, schedule, Some(&g.map(|v| -cfg.gamma * v)))?
        } else {
            ddim_step(level, &clean, &eps, schedule, None)?
        };
        if !next.all_finite() {
            return Err(Error::NonFinite { step: t });
        }
        z = next;
        traj.steps.push(TrajectoryStep {
            t,
            psnr: reference.map(|r| psnr(&x_hat, r)).transpose()?,
            l2_residual,
            clean_estimate: cfg.record_trajectory.then_some(x_hat),
        });
    }

    let out = guidance.image(&z)?;
    if out.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { step: 0 });
    }
    traj.final_psnr = reference.map(|r| psnr(&out, r)).transpose()?;
    Ok((out.as_magnitude(), traj))
}

/// Full hard-to-soft reconstruction of one coil's magnitude image.
pub fn reconstruct(
    meas: &Measurement,
    prior: &dyn DenoisingPrior,
    codec: &Codec,
    schedule: &NoiseSchedule,
    cfg: &SamplerConfig,
    reference: Option<&RealField>,
) -> Result<(RealField, Trajectory)> {
    run(meas, prior, codec, schedule, cfg, reference, GuidanceMode::HardToSoft, true)
}

/// [`reconstruct`] with the guidance schedule overridden; `rpm = false`
/// keeps the measured phase (λ = 0).
pub fn guidance_mode_ablation(
    meas: &Measurement,
    prior: &dyn DenoisingPrior,
    codec: &Codec,
    schedule: &NoiseSchedule,
    cfg: &SamplerConfig,
    mode: GuidanceMode,
    rpm: bool,
    reference: Option<&RealField>,
) -> Result<(RealField, Trajectory)> {
    run(meas, prior, codec, schedule, cfg, reference, mode, rpm)
}

/// One reconstruction problem with its ground truth.
#[derive(Debug, Clone)]
pub struct SweepCase {
    pub measurement: Measurement,
    pub reference: RealField,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParetoRow {
    pub t0: f64,
    pub t_ws: f64,
    pub steps: usize,
    pub hard_dc: usize,
    pub mean_psnr: f64,
    /// Fastest of the timed repeats, all cases run sequentially.
    pub wall_seconds: f64,
    pub efficient: bool,
}

/// Flags points `(time, psnr)` not dominated by any other point (no worse
/// in both, strictly better in one).
pub fn pareto_flags(points: &[(f64, f64)]) -> Vec<bool> {
    points
        .iter()
        .map(|&(ta, pa)| {
            !points
                .iter()
                .any(|&(tb, pb)| tb <= ta && pb >= pa && (tb < ta || pb > pa))
        })
        .collect()
}

/// Runs every case at every `(t0, t_ws)` grid point.
pub fn pareto_sweep(
    cases: &[SweepCase],
    prior: &dyn DenoisingPrior,
    codec: &Codec,
    schedule: &NoiseSchedule,
    base: &SamplerConfig,
    grid: &[(f64, f64)],
    repeats: usize,
) -> Result<Vec<ParetoRow>> {
    if cases.is_empty() {
        return Err(Error::InvalidParameter("sweep needs at least one case".into()));
    }
    let mut rows = Vec::with_capacity(grid.len());
    for &(t0, t_ws) in grid {
        let cfg = SamplerConfig { t0, t_ws, ..base.clone() };
        cfg.check()?;
        let mut best = f64::INFINITY;
        let mut psnrs = Vec::new();
        let mut steps = 0;
        let mut hard_dc = 0;
        for rep in 0..repeats.max(1) {
            let start = Instant::now();
            let mut results = Vec::with_capacity(cases.len());
            for case in cases {
                results.push(reconstruct(&case.measurement, prior, codec, schedule, &cfg, Some(&case.reference))?);
            }
            best = best.min(start.elapsed().as_secs_f64());
            if rep == 0 {
                for (_, traj) in &results {
                    psnrs.push(traj.final_psnr.unwrap_or(f64::NAN));
                    steps = traj.iterations();
                    hard_dc = traj.hard_dc_count;
                }
            }
        }
        rows.push(ParetoRow {
            t0,
            t_ws,
            steps,
            hard_dc,
            mean_psnr: psnrs.iter().sum::<f64>() / psnrs.len() as f64,
            wall_seconds: best,
            efficient: false,
        });
    }
    let points: Vec<(f64, f64)> = rows.iter().map(|r| (r.wall_seconds, r.mean_psnr)).collect();
    for (row, flag) in rows.iter_mut().zip(pareto_flags(&points)) {
        row.efficient = flag;
    }
    Ok(rows)
}
