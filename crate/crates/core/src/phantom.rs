//! Synthetic test objects: jittered Shepp-Logan magnitudes, smooth phase
//! maps, and mixture priors built from encoded phantoms.

use std::f64::consts::PI;

use rand::Rng;

use crate::codec::{Codec, MagnitudeNorm};
use crate::error::{Error, Result};
use crate::field::{ComplexField, LatentField, PhaseField, RealField};
use crate::prior::GaussianMixturePrior;
use crate::rng::{self, purpose};

/// Relative jitter applied to every ellipse parameter.
pub const JITTER: f64 = 0.05;

/// Smallest accepted phantom side.
pub const MIN_SIDE: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Ellipse {
    intensity: f64,
    a: f64,
    b: f64,
    x0: f64,
    y0: f64,
    /// Degrees.
    phi: f64,
}

// Modified (high-contrast) intensities so the composite stays in [0, 1].
const BASE: [Ellipse; 10] = [
    Ellipse { intensity: 1.0, a: 0.69, b: 0.92, x0: 0.0, y0: 0.0, phi: 0.0 },
    Ellipse { intensity: -0.8, a: 0.6624, b: 0.874, x0: 0.0, y0: -0.0184, phi: 0.0 },
    Ellipse { intensity: -0.2, a: 0.11, b: 0.31, x0: 0.22, y0: 0.0, phi: -18.0 },
    Ellipse { intensity: -0.2, a: 0.16, b: 0.41, x0: -0.22, y0: 0.0, phi: 18.0 },
    Ellipse { intensity: 0.1, a: 0.21, b: 0.25, x0: 0.0, y0: 0.35, phi: 0.0 },
    Ellipse { intensity: 0.1, a: 0.046, b: 0.046, x0: 0.0, y0: 0.1, phi: 0.0 },
    Ellipse { intensity: 0.1, a: 0.046, b: 0.046, x0: 0.0, y0: -0.1, phi: 0.0 },
    Ellipse { intensity: 0.1, a: 0.046, b: 0.023, x0: -0.08, y0: -0.605, phi: 0.0 },
    Ellipse { intensity: 0.1, a: 0.023, b: 0.023, x0: 0.0, y0: -0.606, phi: 0.0 },
    Ellipse { intensity: 0.1, a: 0.023, b: 0.046, x0: 0.06, y0: -0.605, phi: 0.0 },
];

fn render(h: usize, w: usize, ellipses: &[Ellipse]) -> RealField {
    let prepared: Vec<(f64, f64, f64, f64, f64, f64, f64)> = ellipses
        .iter()
        .map(|e| {
            let (s, c) = e.phi.to_radians().sin_cos();
            (e.intensity, e.a * e.a, e.b * e.b, e.x0, e.y0, c, s)
        })
        .collect();
    let mut data = vec![0.0; h * w];
    // 2×2 supersampling per pixel.
    let offsets = [0.25, 0.75];
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for &dr in &offsets {
                for &dc in &offsets {
                    let x = 2.0 * (c as f64 + dc) / w as f64 - 1.0;
                    let y = 1.0 - 2.0 * (r as f64 + dr) / h as f64;
                    for &(v, a2, b2, x0, y0, cs, sn) in &prepared {
                        let (dx, dy) = (x - x0, y - y0);
                        let u = dx * cs + dy * sn;
                        let t = -dx * sn + dy * cs;
                        if u * u / a2 + t * t / b2 <= 1.0 {
                            acc += v;
                        }
                    }
                }
            }
            data[r * w + c] = (acc / 4.0).clamp(0.0, 1.0);
        }
    }
    RealField::new_magnitude(h, w, data).expect("values clamped to [0, 1]")
}

fn check_side(h: usize, w: usize) -> Result<()> {
    if h < MIN_SIDE || w < MIN_SIDE {
        return Err(Error::InvalidParameter(format!("phantom {h}x{w} smaller than {MIN_SIDE}x{MIN_SIDE}")));
    }
    Ok(())
}

/// Unjittered phantom.
pub fn shepp_logan_base(h: usize, w: usize) -> Result<RealField> {
    check_side(h, w)?;
    Ok(render(h, w, &BASE))
}

/// Phantom with every ellipse's centre, axes, angle and intensity scaled by
/// an independent factor in `[0.95, 1.05]`.
pub fn shepp_logan(h: usize, w: usize, variant_seed: u64) -> Result<RealField> {
    check_side(h, w)?;
    let mut rng = rng::stream(variant_seed, purpose::PHANTOM);
    let mut j = || rng.random_range(-JITTER..=JITTER);
    let ellipses: Vec<Ellipse> = BASE
        .iter()
        .map(|e| Ellipse {
            intensity: e.intensity * (1.0 + j()),
            a: e.a * (1.0 + j()),
            b: e.b * (1.0 + j()),
            x0: e.x0 * (1.0 + j()),
            y0: e.y0 * (1.0 + j()),
            phi: e.phi * (1.0 + j()),
        })
        .collect();
    Ok(render(h, w, &ellipses))
}

/// Quadratic polynomial phase `smoothness·π·Σ cᵢ·pᵢ(x, y)` over `[-1, 1]²`,
/// with coefficients `cᵢ` uniform on `[-1, 1]`, wrapped to `[-π, π)`.
pub fn synth_phase(h: usize, w: usize, smoothness: f64, seed: u64) -> Result<PhaseField> {
    PhaseField::wrapped(h, w, synth_phase_unwrapped(h, w, smoothness, seed)?)
}

/// [`synth_phase`] before wrapping.
pub fn synth_phase_unwrapped(h: usize, w: usize, smoothness: f64, seed: u64) -> Result<Vec<f64>> {
    if !smoothness.is_finite() || smoothness < 0.0 {
        return Err(Error::InvalidParameter(format!("smoothness {smoothness}")));
    }
    let mut rng = rng::stream(seed, purpose::SYNTH_PHASE);
    let coef: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..=1.0)).collect();
    let mut data = Vec::with_capacity(h * w);
    for r in 0..h {
        let y = 2.0 * (r as f64 + 0.5) / h as f64 - 1.0;
        for c in 0..w {
            let x = 2.0 * (c as f64 + 0.5) / w as f64 - 1.0;
            let p = coef[0] + coef[1] * x + coef[2] * y + coef[3] * x * x + coef[4] * x * y + coef[5] * y * y;
            data.push(smoothness * PI * p);
        }
    }
    Ok(data)
}

/// Complex image `|x|·e^{iφ}` from a phantom and a synthetic phase.
pub fn complex_phantom(h: usize, w: usize, variant_seed: u64, smoothness: f64, phase_seed: u64) -> Result<ComplexField> {
    let mag = shepp_logan(h, w, variant_seed)?;
    let phase = synth_phase(h, w, smoothness, phase_seed)?;
    ComplexField::from_polar(&mag, &phase)
}

/// Even seeds, reserved for building priors.
pub fn prior_seeds(n: usize) -> Vec<u64> {
    (0..n as u64).map(|i| 2 * i).collect()
}

/// Odd seeds, reserved for test objects.
pub fn test_seeds(n: usize) -> Vec<u64> {
    (0..n as u64).map(|i| 2 * i + 1).collect()
}

/// Uniform `n`-component mixture whose means are the encoded, per-image
/// normalized phantoms for the first `n` of `seeds`. The shared variance is
/// the mean pairwise squared distance between means per latent dimension;
/// a single component gets unit variance.
pub fn build_prior_from_phantoms(
    n: usize,
    codec: &Codec,
    seeds: &[u64],
    h: usize,
    w: usize,
) -> Result<GaussianMixturePrior> {
    if n == 0 {
        return Err(Error::InvalidParameter("prior needs at least one phantom".into()));
    }
    if seeds.len() < n {
        return Err(Error::InvalidParameter(format!("{n} phantoms requested, {} seeds given", seeds.len())));
    }
    let means = seeds[..n]
        .iter()
        .map(|&s| {
            let img = shepp_logan(h, w, s)?;
            codec.encode(&MagnitudeNorm::from_image(&img).normalize_field(&img))
        })
        .collect::<Result<Vec<LatentField>>>()?;
    let var = if n == 1 {
        1.0
    } else {
        let mut total = 0.0;
        let mut pairs = 0usize;
        for i in 0..n {
            for j in i + 1..n {
                total += means[i].data().iter().zip(means[j].data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
                pairs += 1;
            }
        }
        total / pairs as f64 / means[0].len() as f64
    };
    if !(var > 0.0) {
        return Err(Error::Degenerate("phantom means coincide".into()));
    }
    GaussianMixturePrior::uniform(means, var)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Validate;

    #[test]
    fn phantom_is_deterministic_and_in_range() {
        let a = shepp_logan(64, 48, 3).unwrap();
        let b = shepp_logan(64, 48, 3).unwrap();
        assert_eq!(a, b);
        assert!(a.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(a.validate().is_ok());
        assert_ne!(a, shepp_logan(64, 48, 4).unwrap());
    }

    #[test]
    fn too_small_rejected() {
        assert!(shepp_logan(16, 64, 0).is_err());
    }

    #[test]
    fn jittered_mean_close_to_base() {
        let base = shepp_logan_base(64, 64).unwrap().mean();
        let mean = (0..100).map(|s| shepp_logan(64, 64, s).unwrap().mean()).sum::<f64>() / 100.0;
        assert!((mean - base).abs() <= 0.1 * base, "{mean} vs {base}");
    }

    #[test]
    fn zero_smoothness_gives_zero_phase() {
        let p = synth_phase(8, 8, 0.0, 1).unwrap();
        assert!(p.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn phase_gradient_scales_with_smoothness() {
        let g = |s: f64| {
            let d = synth_phase_unwrapped(32, 32, s, 5).unwrap();
            (d[17] - d[16], d[32 * 17 + 16] - d[32 * 16 + 16])
        };
        let (a, b) = (g(0.3), g(0.9));
        assert!((b.0 - 3.0 * a.0).abs() < 1e-12 && (b.1 - 3.0 * a.1).abs() < 1e-12);
    }

    #[test]
    fn large_smoothness_wraps_into_range() {
        let p = synth_phase(32, 32, 40.0, 2).unwrap();
        assert!(p.data().iter().all(|&v| (-PI..PI).contains(&v)));
    }

    #[test]
    fn prior_from_phantoms() {
        let codec = Codec::identity();
        let one = build_prior_from_phantoms(1, &codec, &[0], 32, 32).unwrap();
        assert_eq!(one.components(), 1);
        let img = shepp_logan(32, 32, 0).unwrap();
        let expected = codec.encode(&MagnitudeNorm::from_image(&img).normalize_field(&img)).unwrap();
        assert_eq!(one.means()[0], expected);
        let many = build_prior_from_phantoms(4, &codec, &prior_seeds(4), 32, 32).unwrap();
        assert!((many.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(many.var() > 0.0);
        assert!(prior_seeds(3).iter().all(|s| s % 2 == 0));
        assert!(test_seeds(3).iter().all(|s| s % 2 == 1));
    }
}
