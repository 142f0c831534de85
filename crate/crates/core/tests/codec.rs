use mrpd_core::phantom::{prior_seeds, shepp_logan};
use mrpd_core::{adapt_boundary, Codec, HaarCodec, LatentField, PatchCodec, RealField};
use proptest::prelude::*;

fn codecs() -> Vec<Codec> {
    let patch = PatchCodec::dct_lowpass(4, 3, 4, 2, 7).unwrap();
    let images: Vec<_> = prior_seeds(4).iter().map(|&s| shepp_logan(32, 32, s).unwrap()).collect();
    let adapted = adapt_boundary(&Codec::PatchLinear(patch.clone()), &images, 1e-6).unwrap();
    vec![
        Codec::identity(),
        Codec::Orthonormal(HaarCodec { levels: 2, c_in: 3 }),
        Codec::PatchLinear(patch),
        adapted,
    ]
}

fn image(vals: &[f64]) -> RealField {
    RealField::new(32, 32, (0..1024).map(|i| vals[i % vals.len()] + (i as f64 * 0.11).cos()).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn decode_adjoint_is_transpose_of_linear_decoder(
        xs in prop::collection::vec(-1.0..1.0f64, 1..50),
        us in prop::collection::vec(-1.0..1.0f64, 1..50),
    ) {
        for codec in codecs() {
            let z0 = codec.encode(&image(&xs)).unwrap();
            let (c, h, w) = z0.shape();
            let z = LatentField::new(c, h, w, (0..z0.len()).map(|i| 0.1 * us[i % us.len()]).collect()).unwrap();
            let x = image(&us).map(|v| 0.3 * v);
            let lhs: f64 = codec.decode_unclamped(&z).unwrap().data().iter().zip(x.data()).map(|(a, b)| a * b).sum();
            let rhs = z.dot(&codec.decode_adjoint(&x).unwrap());
            prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()), "{lhs} vs {rhs}");
        }
    }

    // The encoder sees the grayscale image replicated over c_in channels.
    #[test]
    fn orthonormal_encode_is_an_isometry(
        xs in prop::collection::vec(-5.0..5.0f64, 1..50), levels in 1usize..4, c_in in 1usize..4,
    ) {
        let codec = Codec::Orthonormal(HaarCodec { levels, c_in });
        let x = image(&xs);
        let z = codec.encode(&x).unwrap();
        let input_norm = (c_in as f64).sqrt() * x.norm_l2();
        prop_assert!((z.norm_l2() - input_norm).abs() <= 1e-12 * input_norm.max(1.0));
    }
}

#[test]
fn adaptation_leaves_core_untouched() {
    let base = PatchCodec::dct_lowpass(4, 3, 4, 8, 0).unwrap();
    let images: Vec<_> = prior_seeds(6).iter().map(|&s| shepp_logan(64, 64, s).unwrap()).collect();
    let adapted = match adapt_boundary(&Codec::PatchLinear(base.clone()), &images, 1e-6).unwrap() {
        Codec::PatchLinear(p) => p,
        other => panic!("adaptation changed the codec kind: {other:?}"),
    };
    let bits = |p: &PatchCodec| p.core().matrix.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&base), bits(&adapted));
    assert_eq!(base.core().tile, adapted.core().tile);
    let before = Codec::PatchLinear(base).reconstruction_error(&images).unwrap();
    let after = Codec::PatchLinear(adapted).reconstruction_error(&images).unwrap();
    assert!(after <= before, "{after} > {before}");
}

#[test]
fn boundary_fraction_is_small_for_default_patch_codec() {
    let codec = Codec::PatchLinear(PatchCodec::dct_lowpass(4, 3, 4, 8, 0).unwrap());
    let frac = codec.boundary_parameters() as f64 / codec.total_parameters() as f64;
    assert!(frac < 0.05, "{frac}");
}

#[test]
fn haar_rejects_indivisible_shapes() {
    let codec = Codec::Orthonormal(HaarCodec { levels: 3, c_in: 3 });
    assert!(codec.encode(&RealField::zeros(12, 12)).is_err());
}
