use mrpd_core::codec::MagnitudeNorm;
use mrpd_core::phantom::{build_prior_from_phantoms, complex_phantom, prior_seeds};
use mrpd_core::sampler::{hard_dc, SoftGuidance};
use mrpd_core::{
    fft2c, guidance_mode_ablation, linear_schedule, masks, measure, modulate_phase, reconstruct, CgObjective, Codec,
    ComplexField, DenoisingPrior, Error, GuidanceMode, LatentField, MaskPattern, Measurement, NoiseSchedule,
    RealField, SamplerConfig, SamplingMask, ShrinkagePrior,
};
use proptest::prelude::*;

fn scene(n: usize, seed: u64) -> (Measurement, RealField) {
    let x = complex_phantom(n, n, 1, 1.0, seed).unwrap();
    let m = masks::generate(MaskPattern::Uniform1D, n, n, 4.0, 0.08, seed).unwrap();
    (measure(&x, &m, 0.0, seed).unwrap(), x.magnitude())
}

fn small(t0: f64, t_ws: f64, total_steps: usize, dc_every: usize) -> SamplerConfig {
    SamplerConfig { t0, t_ws, total_steps, dc_every, ..SamplerConfig::default() }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn step_and_hard_dc_counts_follow_loop_bounds(
        total_steps in 20usize..120,
        t0_permille in 100usize..1000,
        ws_share in 0.0..0.95f64,
        dc_every in 1usize..5,
    ) {
        let t0 = t0_permille as f64 / 1000.0;
        let cfg = small(t0, ws_share * t0, total_steps, dc_every);
        prop_assume!(cfg.check().is_ok());
        let (meas, _) = scene(32, 3);
        let sched = linear_schedule(total_steps, 1e-4, 0.02).unwrap();
        let (_, traj) = reconstruct(&meas, &ShrinkagePrior::new(1.0).unwrap(), &Codec::identity(), &sched, &cfg, None).unwrap();
        let n0 = (t0 * total_steps as f64 + 1e-9).floor() as usize;
        let nws = (cfg.t_ws * total_steps as f64 + 1e-9).floor() as usize;
        prop_assert_eq!(traj.iterations(), n0);
        let expected = (0..n0).rev().filter(|&t| t > nws && (n0 - 1 - t).is_multiple_of(dc_every)).count();
        prop_assert_eq!(traj.hard_dc_count, expected);
        prop_assert_eq!(cfg.hard_dc_count(), expected);
        // The loop starts at n0 − 1, so the hard phase covers n0 − 1 − nws steps.
        prop_assert!((n0 - nws).div_ceil(dc_every) - expected <= 1);
    }

    #[test]
    fn hard_dc_matches_measurement_on_mask(seed in 0u64..500, lambda in 0.0..=1.0f64) {
        let (meas, _) = scene(32, seed);
        let (k_rpm, theta) = modulate_phase(&meas.zero_filled(), lambda, seed).unwrap();
        let x_hat = complex_phantom(32, 32, seed + 1, 1.0, seed).unwrap().magnitude();
        let k = fft2c(&hard_dc(&x_hat, &theta, &k_rpm, &meas.mask).unwrap());
        let scale = k_rpm.norm_l2();
        for ((a, b), &keep) in k.data().iter().zip(k_rpm.data()).zip(meas.mask.keep()) {
            if keep {
                prop_assert!((a - b).norm() <= 1e-8 * scale);
            }
        }
    }

    #[test]
    fn soft_step_does_not_increase_residual(seed in 0u64..500, objective in prop::sample::select(vec![CgObjective::Norm, CgObjective::SquaredNorm])) {
        let (meas, _) = scene(32, seed);
        let (k_rpm, theta) = modulate_phase(&meas.zero_filled(), 1.0, seed).unwrap();
        let norm = MagnitudeNorm::from_image(&meas.zero_filled().magnitude());
        let codec = Codec::identity();
        let g = SoftGuidance { codec: &codec, norm, k_rpm: &k_rpm, theta: &theta, mask: &meas.mask, objective };
        let clean = codec.encode(&complex_phantom(32, 32, seed, 1.0, 0).unwrap().magnitude().map(|v| 0.5 * v - 0.2)).unwrap();
        let grad = g.gradient(&clean).unwrap();
        let h = 1e-7 / grad.norm_l2().max(1e-300);
        let stepped = clean.axpby(1.0, &grad, -h).unwrap();
        let change = g.value(&stepped).unwrap() - g.value(&clean).unwrap();
        prop_assert!(change <= 1e-12 * g.value(&clean).unwrap().max(1.0), "{change}");
    }
}

#[test]
fn reconstruction_is_bit_reproducible() {
    let (meas, truth) = scene(32, 5);
    let codec = Codec::identity();
    let prior = build_prior_from_phantoms(8, &codec, &prior_seeds(8), 32, 32).unwrap();
    let sched = linear_schedule(200, 1e-4, 0.02).unwrap();
    let cfg = SamplerConfig { total_steps: 200, record_trajectory: true, ..SamplerConfig::default() };
    let a = reconstruct(&meas, &prior, &codec, &sched, &cfg, Some(&truth)).unwrap();
    let b = reconstruct(&meas, &prior, &codec, &sched, &cfg, Some(&truth)).unwrap();
    assert_eq!(a, b);
    let c = guidance_mode_ablation(&meas, &prior, &codec, &sched, &cfg, GuidanceMode::HardToSoft, true, Some(&truth)).unwrap();
    assert_eq!(a, c);
}

#[test]
fn full_mask_run_recovers_magnitude() {
    let x = complex_phantom(32, 32, 1, 1.5, 2).unwrap();
    let meas = measure(&x, &SamplingMask::full(32, 32), 0.0, 0).unwrap();
    let sched = linear_schedule(1000, 1e-4, 0.02).unwrap();
    let cfg = SamplerConfig { t_ws: 0.0, dc_every: 1, gamma: 0.0, ..SamplerConfig::default() };
    let (out, _) = reconstruct(&meas, &ShrinkagePrior::new(0.0).unwrap(), &Codec::identity(), &sched, &cfg, None).unwrap();
    let err = out.data().iter().zip(x.magnitude().data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(err < 1e-6, "{err}");
}

struct Exploding;

impl DenoisingPrior for Exploding {
    fn predict_eps(&self, z_t: &LatentField, t: usize, _: &NoiseSchedule) -> mrpd_core::Result<LatentField> {
        Ok(z_t.map(|v| if t < 5 { f64::NAN } else { v }))
    }
}

#[test]
fn non_finite_latent_is_reported_with_its_step() {
    let (meas, _) = scene(32, 1);
    let sched = linear_schedule(100, 1e-4, 0.02).unwrap();
    let cfg = small(0.4, 0.3, 100, 2);
    let err = reconstruct(&meas, &Exploding, &Codec::identity(), &sched, &cfg, None).unwrap_err();
    assert_eq!(err, Error::NonFinite { step: 3 });
}

#[test]
fn invalid_settings_are_rejected() {
    let (meas, _) = scene(32, 1);
    let sched = linear_schedule(100, 1e-4, 0.02).unwrap();
    let prior = ShrinkagePrior::new(1.0).unwrap();
    for cfg in [small(0.3, 0.4, 100, 2), small(0.4, 0.3, 100, 0), small(0.4, 0.3, 200, 2)] {
        assert!(reconstruct(&meas, &prior, &Codec::identity(), &sched, &cfg, None).is_err(), "{cfg:?}");
    }
    let other = ComplexField::zeros(16, 16, mrpd_core::Domain::Image).magnitude();
    assert!(reconstruct(&meas, &prior, &Codec::identity(), &sched, &small(0.4, 0.3, 100, 2), Some(&other)).is_err());
}
