//! Conversions between core types and [`FldArray`]s.

use mrpd_core::{
    Codec, ComplexField, CoreMap, Domain, GaussianMixturePrior, HaarCodec, LatentField, MaskPattern, Measurement,
    PatchCodec, PhaseField, RealField, SamplingMask,
};

use crate::error::CliError;
use crate::fld::{FldArray, Payload};

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Format(msg.into())
}

fn format_err(e: mrpd_core::Error) -> CliError {
    CliError::Format(e.to_string())
}

fn kind(arr: &FldArray, expected: &str) -> Result<(), CliError> {
    let k = arr.meta("kind")?;
    if k != expected {
        return Err(bad(format!("expected a `{expected}` array, found `{k}`")));
    }
    Ok(())
}

fn dims2(arr: &FldArray) -> Result<(usize, usize), CliError> {
    match arr.dims[..] {
        [h, w] => Ok((h, w)),
        _ => Err(bad(format!("expected 2 dims, found {:?}", arr.dims))),
    }
}

fn dims3(arr: &FldArray) -> Result<(usize, usize, usize), CliError> {
    match arr.dims[..] {
        [c, h, w] => Ok((c, h, w)),
        _ => Err(bad(format!("expected 3 dims, found {:?}", arr.dims))),
    }
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn split(s: &str) -> Result<Vec<f64>, CliError> {
    s.split(',').map(|x| x.parse().map_err(|_| bad(format!("number `{x}`")))).collect()
}

pub fn real_to_fld(img: &RealField) -> FldArray {
    FldArray::new(vec![img.height(), img.width()], Payload::Real(img.data().to_vec()))
        .expect("shape matches data")
        .with_meta("kind", "real")
        .with_meta("magnitude", img.is_magnitude())
}

pub fn real_from_fld(arr: &FldArray) -> Result<RealField, CliError> {
    kind(arr, "real")?;
    let (h, w) = dims2(arr)?;
    let data = arr.real()?.to_vec();
    Ok(if arr.meta_parse::<bool>("magnitude")? {
        RealField::new_magnitude(h, w, data).map_err(format_err)?
    } else {
        RealField::new(h, w, data).map_err(format_err)?
    })
}

fn domain_name(d: Domain) -> &'static str {
    match d {
        Domain::Image => "image",
        Domain::KSpace => "kspace",
    }
}

fn domain_from(s: &str) -> Result<Domain, CliError> {
    match s {
        "image" => Ok(Domain::Image),
        "kspace" => Ok(Domain::KSpace),
        _ => Err(bad(format!("domain `{s}`"))),
    }
}

pub fn complex_to_fld(x: &ComplexField) -> FldArray {
    FldArray::new(vec![x.height(), x.width()], Payload::Complex(x.data().to_vec()))
        .expect("shape matches data")
        .with_meta("kind", "complex")
        .with_meta("domain", domain_name(x.domain()))
}

pub fn complex_from_fld(arr: &FldArray) -> Result<ComplexField, CliError> {
    kind(arr, "complex")?;
    let (h, w) = dims2(arr)?;
    ComplexField::new(h, w, arr.complex()?.to_vec(), domain_from(arr.meta("domain")?)?).map_err(format_err)
}

pub fn phase_to_fld(p: &PhaseField) -> FldArray {
    FldArray::new(vec![p.height(), p.width()], Payload::Real(p.data().to_vec()))
        .expect("shape matches data")
        .with_meta("kind", "phase")
}

pub fn phase_from_fld(arr: &FldArray) -> Result<PhaseField, CliError> {
    kind(arr, "phase")?;
    let (h, w) = dims2(arr)?;
    PhaseField::new(h, w, arr.real()?.to_vec()).map_err(format_err)
}

pub fn mask_to_fld(m: &SamplingMask) -> FldArray {
    FldArray::new(vec![m.height(), m.width()], Payload::Bitmask(m.keep().to_vec()))
        .expect("shape matches data")
        .with_meta("kind", "mask")
        .with_meta("pattern", m.pattern().name())
        .with_meta("accel_nominal", m.accel_nominal())
        .with_meta("acs_fraction", m.acs_fraction())
        .with_meta("accel_achieved", m.achieved_acceleration())
}

pub fn mask_from_fld(arr: &FldArray) -> Result<SamplingMask, CliError> {
    kind(arr, "mask")?;
    let (h, w) = dims2(arr)?;
    let name = arr.meta("pattern")?;
    let pattern = MaskPattern::from_name(name).ok_or_else(|| bad(format!("mask pattern `{name}`")))?;
    SamplingMask::new(
        h,
        w,
        arr.bits()?.to_vec(),
        arr.meta_parse("accel_nominal")?,
        arr.meta_parse("acs_fraction")?,
        pattern,
    )
    .map_err(format_err)
}

/// Per-coil k-space stacked as `[coils, h, w]`; the mask lives in its own file.
pub fn measurements_to_fld(meas: &[Measurement]) -> Result<FldArray, CliError> {
    let first = meas.first().ok_or_else(|| bad("no measurements"))?;
    let (h, w) = first.shape();
    if meas.iter().any(|m| m.shape() != (h, w) || m.mask != first.mask || m.noise_sigma != first.noise_sigma) {
        return Err(bad("coil measurements differ in shape, mask or noise level"));
    }
    let data = meas.iter().flat_map(|m| m.kdata.data().iter().copied()).collect();
    Ok(FldArray::new(vec![meas.len(), h, w], Payload::Complex(data))?
        .with_meta("kind", "measurement")
        .with_meta("noise_sigma", first.noise_sigma))
}

pub fn measurements_from_fld(arr: &FldArray, mask: &SamplingMask) -> Result<Vec<Measurement>, CliError> {
    kind(arr, "measurement")?;
    let (c, h, w) = dims3(arr)?;
    let sigma: f64 = arr.meta_parse("noise_sigma")?;
    let data = arr.complex()?;
    (0..c)
        .map(|i| {
            let k = ComplexField::new(h, w, data[i * h * w..(i + 1) * h * w].to_vec(), Domain::KSpace).map_err(format_err)?;
            Measurement::new(k, mask.clone(), sigma).map_err(format_err)
        })
        .collect()
}

pub fn sensitivities_to_fld(maps: &[ComplexField]) -> Result<FldArray, CliError> {
    let first = maps.first().ok_or_else(|| bad("no sensitivity maps"))?;
    let (h, w) = first.shape();
    let data = maps.iter().flat_map(|m| m.data().iter().copied()).collect();
    Ok(FldArray::new(vec![maps.len(), h, w], Payload::Complex(data))?.with_meta("kind", "sensitivities"))
}

pub fn sensitivities_from_fld(arr: &FldArray) -> Result<Vec<ComplexField>, CliError> {
    kind(arr, "sensitivities")?;
    let (c, h, w) = dims3(arr)?;
    let data = arr.complex()?;
    (0..c)
        .map(|i| ComplexField::new(h, w, data[i * h * w..(i + 1) * h * w].to_vec(), Domain::Image).map_err(format_err))
        .collect()
}

pub fn latent_to_fld(z: &LatentField) -> FldArray {
    let (c, h, w) = z.shape();
    FldArray::new(vec![c, h, w], Payload::Real(z.data().to_vec()))
        .expect("shape matches data")
        .with_meta("kind", "latent")
}

pub fn latent_from_fld(arr: &FldArray) -> Result<LatentField, CliError> {
    kind(arr, "latent")?;
    let (c, h, w) = dims3(arr)?;
    LatentField::new(c, h, w, arr.real()?.to_vec()).map_err(format_err)
}

/// Means stacked as `[components, c, h, w]`; weights and variance in metadata.
pub fn prior_to_fld(p: &GaussianMixturePrior) -> FldArray {
    let (c, h, w) = p.latent_shape();
    let data = p.means().iter().flat_map(|m| m.data().iter().copied()).collect();
    FldArray::new(vec![p.components(), c, h, w], Payload::Real(data))
        .expect("shape matches data")
        .with_meta("kind", "mixture_prior")
        .with_meta("weights", join(p.weights()))
        .with_meta("var", p.var())
}

pub fn prior_from_fld(arr: &FldArray) -> Result<GaussianMixturePrior, CliError> {
    kind(arr, "mixture_prior")?;
    let (k, c, h, w) = match arr.dims[..] {
        [k, c, h, w] => (k, c, h, w),
        _ => return Err(bad(format!("expected 4 dims, found {:?}", arr.dims))),
    };
    let data = arr.real()?;
    let n = c * h * w;
    let means = (0..k)
        .map(|i| LatentField::new(c, h, w, data[i * n..(i + 1) * n].to_vec()))
        .collect::<Result<Vec<_>, _>>()
        .map_err(format_err)?;
    GaussianMixturePrior::new(split(arr.meta("weights")?)?, means, arr.meta_parse("var")?).map_err(format_err)
}

/// Haar codecs carry only metadata; patch codecs store `in_map`, `out_map`
/// and the core matrix back to back.
pub fn codec_to_fld(codec: &Codec) -> FldArray {
    match codec {
        Codec::Orthonormal(h) => FldArray::new(vec![0], Payload::Real(Vec::new()))
            .expect("empty payload")
            .with_meta("kind", "codec")
            .with_meta("variant", "orthonormal")
            .with_meta("levels", h.levels)
            .with_meta("c_in", h.c_in),
        Codec::PatchLinear(p) => {
            let data: Vec<f64> =
                p.in_map().iter().chain(p.out_map()).chain(&p.core().matrix).copied().collect();
            FldArray::new(vec![data.len()], Payload::Real(data))
                .expect("shape matches data")
                .with_meta("kind", "codec")
                .with_meta("variant", "patch_linear")
                .with_meta("patch", p.patch())
                .with_meta("c_in", p.c_in())
                .with_meta("latent_channels", p.latent_channels())
                .with_meta("tile", p.core().tile)
        }
    }
}

pub fn codec_from_fld(arr: &FldArray) -> Result<Codec, CliError> {
    kind(arr, "codec")?;
    match arr.meta("variant")? {
        "orthonormal" => Ok(Codec::Orthonormal(HaarCodec {
            levels: arr.meta_parse("levels")?,
            c_in: arr.meta_parse("c_in")?,
        })),
        "patch_linear" => {
            let patch: usize = arr.meta_parse("patch")?;
            let c_in: usize = arr.meta_parse("c_in")?;
            let m: usize = arr.meta_parse("latent_channels")?;
            let tile: usize = arr.meta_parse("tile")?;
            let p = patch * patch * c_in;
            let n = tile * tile * m;
            let data = arr.real()?;
            if data.len() != 2 * p * m + n * n {
                return Err(bad(format!("codec payload of {} values for patch {patch}, {m} channels", data.len())));
            }
            let core = CoreMap { tile, matrix: data[2 * p * m..].to_vec() };
            Ok(Codec::PatchLinear(PatchCodec::new(
                patch,
                c_in,
                data[..p * m].to_vec(),
                data[p * m..2 * p * m].to_vec(),
                core,
            )
            .map_err(format_err)?))
        }
        other => Err(bad(format!("codec variant `{other}`"))),
    }
}
