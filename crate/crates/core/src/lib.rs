//! Latent diffusion posterior sampling for undersampled Cartesian k-space,
//! with random phase modulation and hard-to-soft measurement guidance.
//!
//! The diffusion prior and autoencoder are small analytic stand-ins, so the
//! whole pipeline is exactly testable.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub mod codec;
pub mod error;
pub mod field;
pub mod kspace;
pub mod masks;
pub mod multicoil;
pub mod phantom;
pub mod prior;
pub mod quality;
pub mod rng;
pub mod sampler;

pub use codec::{adapt_boundary, Codec, CoreMap, HaarCodec, MagnitudeNorm, PatchCodec};
pub use error::{Error, Result};
pub use field::{
    CoilSet, ComplexField, Domain, LatentField, MaskPattern, PhaseField, RealField, SamplingMask, Validate, Violation,
};
pub use kspace::{fft2c, ifft2c, measure, modulate_phase, Measurement};
pub use prior::{
    ddim_predict_clean, ddim_step, linear_schedule, DenoisingPrior, GaussianMixturePrior, NoiseSchedule,
    ShrinkagePrior,
};
pub use sampler::{
    guidance_mode_ablation, pareto_sweep, reconstruct, CgObjective, GuidanceMode, SamplerConfig, Trajectory,
};
