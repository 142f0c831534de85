//! Synthetic coil sensitivities, per-coil measurement and coil-by-coil
//! reconstruction combined by root sum of squares.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;

use crate::codec::Codec;
use crate::error::{Error, Result};
use crate::field::{CoilSet, ComplexField, Domain, RealField, SamplingMask};
use crate::kspace::{measure, Measurement};
use crate::prior::{DenoisingPrior, NoiseSchedule};
use crate::rng::{self, purpose};
use crate::sampler::{reconstruct, SamplerConfig};

/// Gaussian-bump magnitudes centred on a ring with linear phase ramps,
/// normalized so `Σ_c |S_c|² = 1` at every pixel.
pub fn simulate_sensitivities(h: usize, w: usize, coils: usize, seed: u64) -> Result<CoilSet> {
    if coils == 0 || h == 0 || w == 0 {
        return Err(Error::InvalidParameter("need at least one coil and a non-empty grid".into()));
    }
    let mut rng = rng::stream(seed, purpose::SENSITIVITY);
    let offset = rng.random_range(0.0..2.0 * PI);
    let width = 0.6;
    let raw: Vec<Vec<Complex64>> = (0..coils)
        .map(|c| {
            let angle = offset + 2.0 * PI * c as f64 / coils as f64;
            let (cx, cy) = (0.8 * angle.cos(), 0.8 * angle.sin());
            let (kx, ky) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let mut v = Vec::with_capacity(h * w);
            for r in 0..h {
                let y = 2.0 * (r as f64 + 0.5) / h as f64 - 1.0;
                for col in 0..w {
                    let x = 2.0 * (col as f64 + 0.5) / w as f64 - 1.0;
                    let d2 = (x - cx).powi(2) + (y - cy).powi(2);
                    let mag = (-d2 / (2.0 * width * width)).exp();
                    v.push(Complex64::from_polar(mag, kx * x + ky * y));
                }
            }
            v
        })
        .collect();
    let mut maps: Vec<Vec<Complex64>> = raw.clone();
    for p in 0..h * w {
        let total: f64 = raw.iter().map(|m| m[p].norm_sqr()).sum::<f64>().sqrt();
        for m in maps.iter_mut() {
            m[p] /= total;
        }
    }
    let fields = maps
        .into_iter()
        .map(|m| ComplexField::new(h, w, m, Domain::Image))
        .collect::<Result<Vec<_>>>()?;
    CoilSet::from_sensitivities(fields)
}

/// `S_c = 1/√c` for every coil.
pub fn uniform_sensitivities(h: usize, w: usize, coils: usize) -> Result<CoilSet> {
    if coils == 0 {
        return Err(Error::InvalidParameter("need at least one coil".into()));
    }
    let v = Complex64::new(1.0 / (coils as f64).sqrt(), 0.0);
    let fields = (0..coils)
        .map(|_| ComplexField::new(h, w, vec![v; h * w], Domain::Image))
        .collect::<Result<Vec<_>>>()?;
    CoilSet::from_sensitivities(fields)
}

/// Per-coil measurements of `S_c · x` sharing `mask`; coil `c` draws its
/// noise from `seed + c`.
pub fn measure_multicoil(
    x: &ComplexField,
    sens: &CoilSet,
    mask: &SamplingMask,
    noise_sigma: f64,
    seed: u64,
) -> Result<Vec<Measurement>> {
    let maps = sens
        .sensitivities()
        .ok_or_else(|| Error::InvalidParameter("coil set carries no sensitivities".into()))?;
    if sens.shape() != x.shape() {
        return Err(Error::ShapeMismatch(format!("image {:?} vs coils {:?}", x.shape(), sens.shape())));
    }
    maps.iter()
        .enumerate()
        .map(|(c, s)| {
            let data = x.data().iter().zip(s.data()).map(|(a, b)| a * b).collect();
            let coil = ComplexField::new(x.height(), x.width(), data, Domain::Image)?;
            measure(&coil, mask, noise_sigma, seed.wrapping_add(c as u64))
        })
        .collect()
}

/// `√(Σ_c m_c²)` pixelwise; a single map is returned unchanged.
pub fn ssos(maps: &[RealField]) -> Result<RealField> {
    let first = maps.first().ok_or_else(|| Error::InvalidParameter("no coil images".into()))?;
    if maps.len() == 1 {
        return Ok(first.clone().as_magnitude());
    }
    if maps.iter().any(|m| m.shape() != first.shape()) {
        return Err(Error::ShapeMismatch("coil images differ in shape".into()));
    }
    let (h, w) = first.shape();
    let data = (0..h * w)
        .map(|p| maps.iter().map(|m| m.data()[p] * m.data()[p]).sum::<f64>().sqrt())
        .collect();
    RealField::new_magnitude(h, w, data)
}

/// Reconstructs coil `c` with phase seed `cfg.phase_seed + c`, in parallel,
/// and combines the magnitudes.
pub fn reconstruct_ssos(
    meas: &[Measurement],
    prior: &dyn DenoisingPrior,
    codec: &Codec,
    schedule: &NoiseSchedule,
    cfg: &SamplerConfig,
) -> Result<RealField> {
    if meas.is_empty() {
        return Err(Error::InvalidParameter("no coil measurements".into()));
    }
    let images = meas
        .par_iter()
        .enumerate()
        .map(|(c, m)| {
            let coil_cfg = SamplerConfig {
                phase_seed: cfg.phase_seed.wrapping_add(c as u64),
                ..cfg.clone()
            };
            reconstruct(m, prior, codec, schedule, &coil_cfg, None)
                .map(|(img, _)| img)
                .map_err(|e| Error::Coil {
                    coil: c,
                    source: Box::new(e),
                })
        })
        .collect::<Result<Vec<_>>>()?;
    ssos(&images)
}
