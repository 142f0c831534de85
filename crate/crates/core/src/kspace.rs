//! Centered unitary Fourier pair, the single-coil measurement operator and
//! random phase modulation.

use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::{Fft, FftDirection, FftPlanner};

use crate::error::{Error, Result};
use crate::field::{wrap_phase, ComplexField, Domain, PhaseField, SamplingMask};
use crate::rng::{self, purpose};

thread_local! {
    static PLANS: RefCell<(FftPlanner<f64>, HashMap<(usize, bool), Arc<dyn Fft<f64>>>)> =
        RefCell::new((FftPlanner::new(), HashMap::new()));
}

fn plan(n: usize, direction: FftDirection) -> Arc<dyn Fft<f64>> {
    PLANS.with(|cell| {
        let mut guard = cell.borrow_mut();
        let (planner, cache) = &mut *guard;
        cache
            .entry((n, direction == FftDirection::Forward))
            .or_insert_with(|| planner.plan_fft(n, direction))
            .clone()
    })
}

/// Moves index 0 to `n / 2` along both axes.
fn fftshift(data: &[Complex64], h: usize, w: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); h * w];
    for r in 0..h {
        let rr = (r + h / 2) % h;
        for c in 0..w {
            out[rr * w + (c + w / 2) % w] = data[r * w + c];
        }
    }
    out
}

/// Inverse of [`fftshift`], moves index `n / 2` to 0.
fn ifftshift(data: &[Complex64], h: usize, w: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); h * w];
    for r in 0..h {
        let rr = (r + h / 2) % h;
        for c in 0..w {
            out[r * w + c] = data[rr * w + (c + w / 2) % w];
        }
    }
    out
}

fn transpose(data: &[Complex64], h: usize, w: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); h * w];
    for r in 0..h {
        for c in 0..w {
            out[c * h + r] = data[r * w + c];
        }
    }
    out
}

/// Unnormalized 2D DFT of a row-major buffer, in place.
fn fft2_inplace(data: &mut Vec<Complex64>, h: usize, w: usize, direction: FftDirection) {
    plan(w, direction).process(data);
    let mut t = transpose(data, h, w);
    plan(h, direction).process(&mut t);
    *data = transpose(&t, w, h);
}

fn centered(x: &ComplexField, direction: FftDirection, domain: Domain) -> ComplexField {
    let (h, w) = x.shape();
    let mut buf = ifftshift(x.data(), h, w);
    fft2_inplace(&mut buf, h, w, direction);
    let scale = 1.0 / ((h * w) as f64).sqrt();
    let mut out = fftshift(&buf, h, w);
    for v in out.iter_mut() {
        *v *= scale;
    }
    ComplexField::new(h, w, out, domain).expect("shape preserved")
}

/// Orthonormal centered 2D DFT, image to k-space.
pub fn fft2c(img: &ComplexField) -> ComplexField {
    centered(img, FftDirection::Forward, Domain::KSpace)
}

/// Orthonormal centered 2D inverse DFT, k-space to image.
pub fn ifft2c(k: &ComplexField) -> ComplexField {
    centered(k, FftDirection::Inverse, Domain::Image)
}

/// Masked, optionally noisy k-space samples of one coil.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub kdata: ComplexField,
    pub mask: SamplingMask,
    pub noise_sigma: f64,
}

impl Measurement {
    pub fn new(kdata: ComplexField, mask: SamplingMask, noise_sigma: f64) -> Result<Self> {
        if kdata.shape() != mask.shape() {
            return Err(Error::ShapeMismatch(format!(
                "k-space {:?} vs mask {:?}",
                kdata.shape(),
                mask.shape()
            )));
        }
        if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!("noise sigma {noise_sigma}")));
        }
        Ok(Self {
            kdata,
            mask,
            noise_sigma,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.kdata.shape()
    }

    /// Zero-filled image `F⁻¹ k`.
    pub fn zero_filled(&self) -> ComplexField {
        ifft2c(&self.kdata)
    }

    /// True when every masked-out sample is exactly zero.
    pub fn is_consistent(&self) -> bool {
        self.kdata
            .data()
            .iter()
            .zip(self.mask.keep())
            .all(|(v, &k)| k || (v.re == 0.0 && v.im == 0.0))
    }
}

/// Applies `mask` to a k-space array, zeroing dropped samples.
pub fn apply_mask(k: &ComplexField, mask: &SamplingMask) -> ComplexField {
    let data = k
        .data()
        .iter()
        .zip(mask.keep())
        .map(|(&v, &keep)| if keep { v } else { Complex64::new(0.0, 0.0) })
        .collect();
    ComplexField::new(k.height(), k.width(), data, Domain::KSpace).expect("shape preserved")
}

/// `k = M ⊙ (F x + η)` with `η` circular complex Gaussian, `E|η|² = σ²`.
pub fn measure(x: &ComplexField, mask: &SamplingMask, noise_sigma: f64, seed: u64) -> Result<Measurement> {
    if x.shape() != mask.shape() {
        return Err(Error::ShapeMismatch(format!(
            "image {:?} vs mask {:?}",
            x.shape(),
            mask.shape()
        )));
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::InvalidParameter(format!("noise sigma {noise_sigma}")));
    }
    let k = fft2c(x);
    let mut data = k.into_data();
    if noise_sigma > 0.0 {
        let mut rng = rng::stream(seed, purpose::MEASUREMENT_NOISE);
        let s = noise_sigma / std::f64::consts::SQRT_2;
        for v in data.iter_mut() {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            *v += Complex64::new(s * re, s * im);
        }
    }
    for (v, &keep) in data.iter_mut().zip(mask.keep()) {
        if !keep {
            *v = Complex64::new(0.0, 0.0);
        }
    }
    let (h, w) = x.shape();
    Measurement::new(ComplexField::new(h, w, data, Domain::KSpace)?, mask.clone(), noise_sigma)
}

/// I.i.d. uniform phases on `[-π, π)`.
pub fn random_phase(height: usize, width: usize, seed: u64) -> PhaseField {
    let mut rng = rng::stream(seed, purpose::RANDOM_PHASE);
    let data = (0..height * width)
        .map(|_| rng.random_range(-PI..PI))
        .collect();
    PhaseField::new(height, width, data).expect("shape")
}

/// Random phase modulation: keeps `|y|`, replaces the phase by
/// `wrap(λ·θ_r + (1 − λ)·θ_y)` and returns the re-synthesized k-space
/// together with the combined phase.
pub fn modulate_phase(y: &ComplexField, lambda: f64, seed: u64) -> Result<(ComplexField, PhaseField)> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidParameter(format!("lambda {lambda} outside [0, 1]")));
    }
    let (h, w) = y.shape();
    let theta_y = y.phase();
    let theta_r = random_phase(h, w, seed);
    let combined = theta_r
        .data()
        .iter()
        .zip(theta_y.data())
        .map(|(&r, &o)| {
            if lambda == 0.0 {
                o
            } else if lambda == 1.0 {
                r
            } else {
                wrap_phase(lambda * r + (1.0 - lambda) * o)
            }
        })
        .collect();
    let theta_hat = PhaseField::new(h, w, combined)?;
    let modulated = ComplexField::from_polar(&y.magnitude(), &theta_hat)?;
    Ok((fft2c(&modulated), theta_hat))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_field(h: usize, w: usize, seed: u64) -> ComplexField {
        let mut rng = rng::stream(seed, 99);
        let data = (0..h * w)
            .map(|_| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
            .collect();
        ComplexField::new(h, w, data, Domain::Image).unwrap()
    }

    /// Direct O(N²) centered DFT used as an independent reference.
    fn naive_fft2c(x: &ComplexField) -> ComplexField {
        let (h, w) = x.shape();
        let mut out = vec![Complex64::new(0.0, 0.0); h * w];
        let n = ((h * w) as f64).sqrt();
        for ku in 0..h {
            for kv in 0..w {
                let fu = ku as f64 - (h / 2) as f64;
                let fv = kv as f64 - (w / 2) as f64;
                let mut acc = Complex64::new(0.0, 0.0);
                for r in 0..h {
                    for c in 0..w {
                        let pr = r as f64 - (h / 2) as f64;
                        let pc = c as f64 - (w / 2) as f64;
                        let ang = -2.0 * PI * (fu * pr / h as f64 + fv * pc / w as f64);
                        acc += x.get(r, c) * Complex64::from_polar(1.0, ang);
                    }
                }
                out[ku * w + kv] = acc / n;
            }
        }
        ComplexField::new(h, w, out, Domain::KSpace).unwrap()
    }

    fn max_diff(a: &ComplexField, b: &ComplexField) -> f64 {
        a.data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).norm())
            .fold(0.0, f64::max)
    }

    #[test]
    fn zeros_map_to_zeros() {
        let z = ComplexField::zeros(8, 8, Domain::Image);
        assert!(fft2c(&z).data().iter().all(|c| c.norm() == 0.0));
        assert!(ifft2c(&z).data().iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn centre_impulse_gives_flat_spectrum() {
        let (h, w) = (8, 12);
        let mut data = vec![Complex64::new(0.0, 0.0); h * w];
        data[(h / 2) * w + w / 2] = Complex64::new(1.0, 0.0);
        let k = fft2c(&ComplexField::new(h, w, data, Domain::Image).unwrap());
        let expect = 1.0 / ((h * w) as f64).sqrt();
        for v in k.data() {
            assert!((v.norm() - expect).abs() < 1e-14);
            assert!((v - Complex64::new(expect, 0.0)).norm() < 1e-14);
        }
    }

    #[test]
    fn dc_only_kspace_gives_constant_image() {
        let (h, w) = (6, 6);
        let mut data = vec![Complex64::new(0.0, 0.0); h * w];
        data[(h / 2) * w + w / 2] = Complex64::new(6.0, 0.0);
        let img = ifft2c(&ComplexField::new(h, w, data, Domain::KSpace).unwrap());
        for v in img.data() {
            assert!((v - Complex64::new(1.0, 0.0)).norm() < 1e-14);
        }
    }

    #[test]
    fn matches_direct_dft_including_odd_sizes() {
        for &(h, w) in &[(8, 8), (5, 7), (6, 9)] {
            let x = random_field(h, w, 3);
            assert!(max_diff(&fft2c(&x), &naive_fft2c(&x)) < 1e-12, "{h}x{w}");
        }
    }

    #[test]
    fn round_trips() {
        let x = random_field(8, 8, 1);
        assert!(max_diff(&ifft2c(&fft2c(&x)), &x) < 1e-12);
        let k = random_field(16, 16, 2);
        let k = ComplexField::new(16, 16, k.into_data(), Domain::KSpace).unwrap();
        assert!(max_diff(&fft2c(&ifft2c(&k)), &k) < 1e-12);
    }

    #[test]
    fn parseval_across_sizes() {
        for &n in &[8, 16, 32, 64, 320] {
            let x = random_field(n, n, n as u64);
            let rel = (fft2c(&x).norm_l2() - x.norm_l2()).abs() / x.norm_l2();
            assert!(rel < 1e-10, "n = {n}: {rel}");
        }
    }

    #[test]
    fn full_mask_noiseless_measurement_is_exact() {
        let x = random_field(16, 16, 4);
        let m = measure(&x, &SamplingMask::full(16, 16), 0.0, 0).unwrap();
        assert_eq!(m.kdata, fft2c(&x));
    }

    #[test]
    fn zero_image_gives_zero_data() {
        let x = ComplexField::zeros(16, 16, Domain::Image);
        let mask = crate::masks::uniform1d(16, 16, 4.0, 0.125, 0).unwrap();
        let m = measure(&x, &mask, 0.0, 0).unwrap();
        assert!(m.kdata.data().iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn measurement_zero_outside_mask_and_seeded() {
        let x = random_field(32, 32, 5);
        let mask = crate::masks::uniform1d(32, 32, 4.0, 0.08, 0).unwrap();
        let a = measure(&x, &mask, 0.1, 9).unwrap();
        let b = measure(&x, &mask, 0.1, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.is_consistent());
        let c = measure(&x, &mask, 0.1, 10).unwrap();
        assert_ne!(a.kdata, c.kdata);
    }

    #[test]
    fn measure_rejects_shape_mismatch() {
        let x = random_field(16, 16, 5);
        let mask = SamplingMask::full(16, 8);
        assert!(matches!(measure(&x, &mask, 0.0, 0), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn modulation_with_zero_lambda_keeps_phase() {
        let y = random_field(16, 16, 6);
        let (k, theta) = modulate_phase(&y, 0.0, 1).unwrap();
        assert_eq!(theta, y.phase());
        assert!(max_diff(&k, &fft2c(&y)) < 1e-12);
    }

    #[test]
    fn modulation_with_unit_lambda_ignores_input_phase() {
        let y = random_field(16, 16, 7);
        let rotated = ComplexField::from_polar(&y.magnitude(), &PhaseField::zeros(16, 16)).unwrap();
        let (_, a) = modulate_phase(&y, 1.0, 3).unwrap();
        let (_, b) = modulate_phase(&rotated, 1.0, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn modulation_rejects_bad_lambda() {
        let y = random_field(4, 4, 7);
        assert!(modulate_phase(&y, 1.5, 0).is_err());
        assert!(modulate_phase(&y, -0.1, 0).is_err());
    }

    #[test]
    fn unit_lambda_phase_mean_is_centred() {
        let n = 128;
        let y = random_field(n, n, 8);
        let (_, theta) = modulate_phase(&y, 1.0, 11).unwrap();
        let count = (n * n) as f64;
        let mean = theta.data().iter().sum::<f64>() / count;
        let sigma = PI / (3.0 * count).sqrt();
        assert!(mean.abs() < 3.0 * sigma, "mean {mean}, sigma {sigma}");
    }

    #[test]
    fn random_phase_spreads_spectrum_of_phantom() {
        let n = 64;
        let x = crate::phantom::shepp_logan(n, n, 1).unwrap();
        let y = ComplexField::from_real(&x);
        let (k_rpm, _) = modulate_phase(&y, 1.0, 5).unwrap();
        let raw = fft2c(&ComplexField::from_real(&y.magnitude()));
        let ratio = |k: &ComplexField| {
            let (mut inner, mut ni, mut outer, mut no) = (0.0, 0, 0.0, 0);
            for r in 0..n {
                for c in 0..n {
                    let dr = (r as f64 - (n / 2) as f64).abs();
                    let dc = (c as f64 - (n / 2) as f64).abs();
                    let d = dr.max(dc);
                    if d < n as f64 / 16.0 {
                        inner += k.get(r, c).norm();
                        ni += 1;
                    } else if d >= n as f64 / 4.0 {
                        outer += k.get(r, c).norm();
                        no += 1;
                    }
                }
            }
            (inner / ni as f64) / (outer / no as f64)
        };
        assert!(ratio(&k_rpm) < ratio(&raw));
    }
}
