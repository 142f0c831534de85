//! Builds phantoms, masks, measurements, codecs, priors and sampler settings
//! from a [`Config`].

use std::path::Path;

use mrpd_core::multicoil::{measure_multicoil, simulate_sensitivities};
use mrpd_core::phantom::{build_prior_from_phantoms, complex_phantom, prior_seeds};
use mrpd_core::{
    linear_schedule, masks, measure, Codec, ComplexField, DenoisingPrior, GaussianMixturePrior, HaarCodec,
    Measurement, NoiseSchedule, PatchCodec, RealField, SamplerConfig, SamplingMask, ShrinkagePrior,
};

use crate::config::{resolve, Config};
use crate::error::CliError;
use crate::fld::FldArray;
use crate::formats;

/// Ground truth and its simulated acquisition.
#[derive(Debug, Clone)]
pub struct Scene {
    pub image: ComplexField,
    pub truth: RealField,
    pub mask: SamplingMask,
    /// Coil maps when more than one coil is simulated.
    pub sensitivities: Option<Vec<ComplexField>>,
    pub measurements: Vec<Measurement>,
}

pub fn ground_truth(cfg: &Config) -> Result<ComplexField, CliError> {
    let n = cfg.phantom.size;
    Ok(complex_phantom(n, n, cfg.phantom.variant, cfg.phantom.phase_smoothness, cfg.seed)?)
}

pub fn mask(cfg: &Config) -> Result<SamplingMask, CliError> {
    let n = cfg.phantom.size;
    Ok(masks::generate(cfg.pattern()?, n, n, cfg.mask.accel, cfg.mask.acs_fraction, cfg.seed)?)
}

/// Acquisition of `image` with measurement noise drawn from `noise_seed`.
pub fn acquire(
    cfg: &Config,
    image: &ComplexField,
    mask: &SamplingMask,
    noise_seed: u64,
) -> Result<(Option<Vec<ComplexField>>, Vec<Measurement>), CliError> {
    let sigma = cfg.measure.noise_sigma;
    match cfg.measure.coils {
        0 => Err(CliError::Config("measure.coils must be at least 1".into())),
        1 => Ok((None, vec![measure(image, mask, sigma, noise_seed)?])),
        c => {
            let (h, w) = image.shape();
            let sens = simulate_sensitivities(h, w, c, cfg.seed)?;
            let meas = measure_multicoil(image, &sens, mask, sigma, noise_seed)?;
            let maps = sens.sensitivities().expect("simulated coil set has maps").to_vec();
            Ok((Some(maps), meas))
        }
    }
}

pub fn scene(cfg: &Config) -> Result<Scene, CliError> {
    let image = ground_truth(cfg)?;
    let mask = mask(cfg)?;
    let (sensitivities, measurements) = acquire(cfg, &image, &mask, cfg.seed)?;
    Ok(Scene { truth: image.magnitude(), image, mask, sensitivities, measurements })
}

pub fn codec(cfg: &Config, config_path: &Path) -> Result<Codec, CliError> {
    let c = &cfg.codec;
    if let Some(p) = &c.path {
        return formats::codec_from_fld(&FldArray::read(&resolve(config_path, p))?);
    }
    match c.kind.as_str() {
        "identity" => Ok(Codec::identity()),
        "haar" => Ok(Codec::Orthonormal(HaarCodec { levels: c.levels, c_in: c.c_in })),
        "patch" => Ok(Codec::PatchLinear(PatchCodec::dct_lowpass(
            c.patch,
            c.c_in,
            c.latent_channels,
            c.tile,
            c.core_seed,
        )?)),
        other => Err(CliError::Config(format!("codec.kind: unknown codec `{other}`"))),
    }
}

pub fn prior(cfg: &Config, config_path: &Path, codec: &Codec) -> Result<Box<dyn DenoisingPrior>, CliError> {
    let p = &cfg.prior;
    if let Some(path) = &p.path {
        return Ok(Box::new(formats::prior_from_fld(&FldArray::read(&resolve(config_path, path))?)?));
    }
    match p.kind.as_str() {
        "mixture" => Ok(Box::new(mixture(cfg, codec)?)),
        "shrinkage" => Ok(Box::new(ShrinkagePrior::new(p.tau)?)),
        other => Err(CliError::Config(format!("prior.kind: unknown prior `{other}`"))),
    }
}

/// Phantom mixture on the prior seeds, with the configured variance if set.
pub fn mixture(cfg: &Config, codec: &Codec) -> Result<GaussianMixturePrior, CliError> {
    let n = cfg.phantom.size;
    let built = build_prior_from_phantoms(cfg.prior.components, codec, &prior_seeds(cfg.prior.components), n, n)?;
    Ok(match cfg.prior.var {
        Some(v) => GaussianMixturePrior::uniform(built.means().to_vec(), v)?,
        None => built,
    })
}

pub fn schedule(cfg: &Config) -> Result<NoiseSchedule, CliError> {
    let s = &cfg.sampler;
    Ok(linear_schedule(s.total_steps, s.beta_start, s.beta_end)?)
}

/// Sampler settings with both sampler seeds set to `seed`.
pub fn sampler(cfg: &Config, seed: u64) -> Result<SamplerConfig, CliError> {
    let s = &cfg.sampler;
    let out = SamplerConfig {
        t0: s.t0,
        t_ws: s.t_ws,
        lambda: s.lambda,
        gamma: s.gamma,
        total_steps: s.total_steps,
        dc_every: s.dc_every,
        noise_seed: seed,
        phase_seed: seed,
        record_trajectory: s.dump_every > 0,
        objective: cfg.objective()?,
        full_jacobian: s.full_jacobian,
    };
    out.check()?;
    Ok(out)
}
