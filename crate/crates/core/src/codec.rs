//! Linear encoder/decoder pairs standing in for a latent autoencoder.
//!
//! Inputs are single-channel magnitude images already mapped to `[-1, 1]`;
//! the encoder replicates them to `c_in` channels and the decoder averages
//! its `c_in` output channels back to one. Both variants are linear before
//! the decoder's final clamp, so vector-Jacobian products are exact.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::field::{LatentField, RealField, Validate, Violation};
use crate::prior::dct_matrix;
use crate::rng::{self, purpose};

/// Number of alternating least-squares sweeps used by [`adapt_boundary`].
pub const ADAPT_SWEEPS: usize = 10;

/// Upper bound on the operator norm of `decode ∘ encode`.
pub const MAX_ROUNDTRIP_NORM: f64 = 1.05;

/// Per-image affine map between magnitudes and the codec range `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MagnitudeNorm {
    pub lo: f64,
    pub hi: f64,
}

impl MagnitudeNorm {
    /// Min/max of `img`; a constant image gets unit span.
    pub fn from_image(img: &RealField) -> Self {
        let lo = img.min();
        let hi = img.max();
        if hi - lo > f64::EPSILON * hi.abs().max(1.0) {
            Self { lo, hi }
        } else {
            Self { lo, hi: lo + 1.0 }
        }
    }

    /// Magnitude per codec unit.
    pub fn scale(&self) -> f64 {
        0.5 * (self.hi - self.lo)
    }

    pub fn normalize(&self, v: f64) -> f64 {
        (v - self.lo) / self.scale() - 1.0
    }

    pub fn denormalize(&self, v: f64) -> f64 {
        self.lo + (v + 1.0) * self.scale()
    }

    /// Maps to `[-1, 1]`, clamping values outside the stored range.
    pub fn normalize_field(&self, img: &RealField) -> RealField {
        img.map(|v| self.normalize(v).clamp(-1.0, 1.0))
    }

    pub fn denormalize_field(&self, img: &RealField) -> RealField {
        img.map(|v| self.denormalize(v)).as_magnitude_if_nonneg()
    }
}

trait MagnitudeTag {
    fn as_magnitude_if_nonneg(self) -> Self;
}

impl MagnitudeTag for RealField {
    fn as_magnitude_if_nonneg(self) -> Self {
        if self.data().iter().all(|&v| v >= 0.0) {
            self.as_magnitude()
        } else {
            self
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Codec {
    Orthonormal(HaarCodec),
    PatchLinear(PatchCodec),
}

/// Orthonormal Haar wavelet-packet codec; `levels = 0` is the identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HaarCodec {
    pub levels: usize,
    pub c_in: usize,
}

/// Fixed orthogonal mixing of `tile × tile` latent cells across all latent
/// channels. The decoder applies the transpose, so the core is invisible to
/// `decode ∘ encode`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoreMap {
    pub tile: usize,
    /// Row-major `n × n`, `n = tile² · latent_channels`.
    pub matrix: Vec<f64>,
}

/// Patch-wise linear codec: `in_map` and `out_map` are the adaptable boundary
/// layers around a frozen [`CoreMap`].
#[derive(Debug, Clone, PartialEq)]
pub struct PatchCodec {
    patch: usize,
    c_in: usize,
    latent_channels: usize,
    /// Row-major `(p²·c_in) × m`.
    in_map: Vec<f64>,
    /// Row-major `m × (p²·c_in)`.
    out_map: Vec<f64>,
    core: CoreMap,
}

impl HaarCodec {
    pub fn identity(c_in: usize) -> Self {
        Self { levels: 0, c_in }
    }
}

impl CoreMap {
    pub fn identity(tile: usize, latent_channels: usize) -> Self {
        let n = tile * tile * latent_channels;
        let mut matrix = vec![0.0; n * n];
        for i in 0..n {
            matrix[i * n + i] = 1.0;
        }
        Self { tile, matrix }
    }

    /// Random orthogonal core from a seeded Gaussian matrix.
    pub fn random_orthogonal(tile: usize, latent_channels: usize, seed: u64) -> Self {
        let n = tile * tile * latent_channels;
        let mut rng = rng::stream(seed, purpose::CODEC_INIT);
        let g = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let qr = g.qr();
        let (q, r) = (qr.q(), qr.r());
        // Fix column signs so the factorization is unique.
        let mut q = q;
        for j in 0..n {
            if r[(j, j)] < 0.0 {
                q.column_mut(j).neg_mut();
            }
        }
        let mut matrix = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                matrix[i * n + j] = q[(i, j)];
            }
        }
        Self { tile, matrix }
    }

    pub fn dim(&self) -> usize {
        (self.matrix.len() as f64).sqrt().round() as usize
    }
}

impl PatchCodec {
    pub fn new(patch: usize, c_in: usize, in_map: Vec<f64>, out_map: Vec<f64>, core: CoreMap) -> Result<Self> {
        if patch == 0 || c_in == 0 {
            return Err(Error::InvalidParameter("patch size and channel count must be positive".into()));
        }
        let p = patch * patch * c_in;
        if in_map.is_empty() || !in_map.len().is_multiple_of(p) {
            return Err(Error::ShapeMismatch(format!("in_map of length {} for {p} inputs", in_map.len())));
        }
        let m = in_map.len() / p;
        if out_map.len() != m * p {
            return Err(Error::ShapeMismatch(format!("out_map of length {} for {m} x {p}", out_map.len())));
        }
        let n = core.tile * core.tile * m;
        if core.tile == 0 || core.matrix.len() != n * n {
            return Err(Error::ShapeMismatch(format!(
                "core of length {} for tile {} and {m} channels",
                core.matrix.len(),
                core.tile
            )));
        }
        Ok(Self {
            patch,
            c_in,
            latent_channels: m,
            in_map,
            out_map,
            core,
        })
    }

    /// Generic codec whose boundary layers keep the `m` lowest-frequency
    /// DCT components of each patch (replicated across input channels).
    pub fn dct_lowpass(patch: usize, c_in: usize, latent_channels: usize, tile: usize, seed: u64) -> Result<Self> {
        if latent_channels == 0 || latent_channels > patch * patch {
            return Err(Error::InvalidParameter(format!(
                "{latent_channels} latent channels for a {patch}x{patch} patch"
            )));
        }
        let d = dct_matrix(patch);
        let mut freqs: Vec<(usize, usize)> = (0..patch).flat_map(|u| (0..patch).map(move |v| (u, v))).collect();
        freqs.sort_by_key(|&(u, v)| (u + v, u.max(v), u));
        let pp = patch * patch;
        let p = pp * c_in;
        let mut in_map = vec![0.0; p * latent_channels];
        let norm = 1.0 / (c_in as f64).sqrt();
        for (k, &(u, v)) in freqs.iter().take(latent_channels).enumerate() {
            for c in 0..c_in {
                for i in 0..patch {
                    for j in 0..patch {
                        let q = c * pp + i * patch + j;
                        in_map[q * latent_channels + k] = norm * d[u * patch + i] * d[v * patch + j];
                    }
                }
            }
        }
        let out_map = transpose(&in_map, p, latent_channels);
        let core = CoreMap::random_orthogonal(tile, latent_channels, seed);
        Self::new(patch, c_in, in_map, out_map, core)
    }

    pub fn patch(&self) -> usize {
        self.patch
    }

    pub fn c_in(&self) -> usize {
        self.c_in
    }

    pub fn latent_channels(&self) -> usize {
        self.latent_channels
    }

    pub fn in_map(&self) -> &[f64] {
        &self.in_map
    }

    pub fn out_map(&self) -> &[f64] {
        &self.out_map
    }

    pub fn core(&self) -> &CoreMap {
        &self.core
    }

    fn inputs(&self) -> usize {
        self.patch * self.patch * self.c_in
    }

    /// Core mixing over tiles of latent cells; `transpose` for the decoder side.
    fn apply_core(&self, z: &mut LatentField, transpose: bool) {
        let (m, lh, lw) = z.shape();
        let tile = self.core.tile;
        let n = tile * tile * m;
        let q = &self.core.matrix;
        let mut v = vec![0.0; n];
        let mut out = vec![0.0; n];
        let plane = lh * lw;
        for tr in 0..lh / tile {
            for tc in 0..lw / tile {
                let idx = |k: usize| {
                    let ch = k / (tile * tile);
                    let rem = k % (tile * tile);
                    ch * plane + (tr * tile + rem / tile) * lw + tc * tile + rem % tile
                };
                for (k, slot) in v.iter_mut().enumerate() {
                    *slot = z.data()[idx(k)];
                }
                for (i, o) in out.iter_mut().enumerate() {
                    *o = if transpose {
                        (0..n).map(|j| q[j * n + i] * v[j]).sum()
                    } else {
                        (0..n).map(|j| q[i * n + j] * v[j]).sum()
                    };
                }
                let data = z.data_mut();
                for (k, &o) in out.iter().enumerate() {
                    data[idx(k)] = o;
                }
            }
        }
    }

    /// `decode ∘ encode` restricted to one patch, as a `p² × p²` matrix
    /// acting on row vectors.
    pub fn roundtrip_matrix(&self) -> DMatrix<f64> {
        let pp = self.patch * self.patch;
        let (p, m) = (self.inputs(), self.latent_channels);
        let e = DMatrix::from_row_slice(p, m, &self.in_map);
        let d = DMatrix::from_row_slice(m, p, &self.out_map);
        replication(pp, self.c_in) * e * d * averaging(pp, self.c_in)
    }
}

fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

/// `p² × (p²·c)` matrix copying a patch into every channel.
fn replication(pp: usize, c_in: usize) -> DMatrix<f64> {
    DMatrix::from_fn(pp, pp * c_in, |i, q| if q % pp == i { 1.0 } else { 0.0 })
}

/// `(p²·c) × p²` matrix averaging channels.
fn averaging(pp: usize, c_in: usize) -> DMatrix<f64> {
    DMatrix::from_fn(pp * c_in, pp, |q, i| if q % pp == i { 1.0 / c_in as f64 } else { 0.0 })
}

/// Orthonormal 2×2 Haar split of one plane into LL, LH, HL, HH.
fn haar_split(plane: &[f64], h: usize, w: usize) -> [Vec<f64>; 4] {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = [vec![0.0; oh * ow], vec![0.0; oh * ow], vec![0.0; oh * ow], vec![0.0; oh * ow]];
    for r in 0..oh {
        for c in 0..ow {
            let a = plane[(2 * r) * w + 2 * c];
            let b = plane[(2 * r) * w + 2 * c + 1];
            let cc = plane[(2 * r + 1) * w + 2 * c];
            let d = plane[(2 * r + 1) * w + 2 * c + 1];
            let i = r * ow + c;
            out[0][i] = 0.5 * (a + b + cc + d);
            out[1][i] = 0.5 * (a - b + cc - d);
            out[2][i] = 0.5 * (a + b - cc - d);
            out[3][i] = 0.5 * (a - b - cc + d);
        }
    }
    out
}

fn haar_merge(bands: [&[f64]; 4], oh: usize, ow: usize) -> Vec<f64> {
    let w = 2 * ow;
    let mut plane = vec![0.0; 4 * oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            let i = r * ow + c;
            let (ll, lh, hl, hh) = (bands[0][i], bands[1][i], bands[2][i], bands[3][i]);
            plane[(2 * r) * w + 2 * c] = 0.5 * (ll + lh + hl + hh);
            plane[(2 * r) * w + 2 * c + 1] = 0.5 * (ll - lh + hl - hh);
            plane[(2 * r + 1) * w + 2 * c] = 0.5 * (ll + lh - hl - hh);
            plane[(2 * r + 1) * w + 2 * c + 1] = 0.5 * (ll - lh - hl + hh);
        }
    }
    plane
}

/// Full Haar packet analysis of one plane: `4^levels` planes at `1/2^levels` size.
fn haar_packet(plane: Vec<f64>, h: usize, w: usize, levels: usize) -> Vec<Vec<f64>> {
    let mut planes = vec![plane];
    let (mut ch, mut cw) = (h, w);
    for _ in 0..levels {
        planes = planes
            .iter()
            .flat_map(|p| haar_split(p, ch, cw))
            .collect();
        ch /= 2;
        cw /= 2;
    }
    planes
}

fn haar_unpacket(mut planes: Vec<Vec<f64>>, h: usize, w: usize, levels: usize) -> Vec<f64> {
    let (mut ch, mut cw) = (h, w);
    for _ in 0..levels {
        planes = planes
            .chunks(4)
            .map(|b| haar_merge([&b[0], &b[1], &b[2], &b[3]], ch, cw))
            .collect();
        ch *= 2;
        cw *= 2;
    }
    planes.pop().expect("one plane left")
}

impl Codec {
    /// Identity codec with one input channel.
    pub fn identity() -> Self {
        Codec::Orthonormal(HaarCodec::identity(1))
    }

    pub fn c_in(&self) -> usize {
        match self {
            Codec::Orthonormal(h) => h.c_in,
            Codec::PatchLinear(p) => p.c_in,
        }
    }

    /// Image-to-latent spatial downsampling factor required to divide the
    /// image dimensions.
    pub fn block_size(&self) -> usize {
        match self {
            Codec::Orthonormal(h) => 1 << h.levels,
            Codec::PatchLinear(p) => p.patch * p.core.tile,
        }
    }

    pub fn latent_shape(&self, height: usize, width: usize) -> Result<(usize, usize, usize)> {
        let b = self.block_size();
        if !height.is_multiple_of(b) || !width.is_multiple_of(b) {
            return Err(Error::ShapeMismatch(format!(
                "image {height}x{width} not divisible by codec block {b}"
            )));
        }
        Ok(match self {
            Codec::Orthonormal(hc) => (hc.c_in << (2 * hc.levels), height >> hc.levels, width >> hc.levels),
            Codec::PatchLinear(p) => (p.latent_channels, height / p.patch, width / p.patch),
        })
    }

    pub fn image_shape(&self, z: &LatentField) -> Result<(usize, usize)> {
        let (c, lh, lw) = z.shape();
        let (expect_c, h, w) = match self {
            Codec::Orthonormal(hc) => (hc.c_in << (2 * hc.levels), lh << hc.levels, lw << hc.levels),
            Codec::PatchLinear(p) => (p.latent_channels, lh * p.patch, lw * p.patch),
        };
        if c != expect_c {
            return Err(Error::ShapeMismatch(format!("latent has {c} channels, codec expects {expect_c}")));
        }
        self.latent_shape(h, w)?;
        Ok((h, w))
    }

    pub fn encode(&self, img: &RealField) -> Result<LatentField> {
        let (h, w) = img.shape();
        let (lc, lh, lw) = self.latent_shape(h, w)?;
        match self {
            Codec::Orthonormal(hc) => {
                let planes = haar_packet(img.data().to_vec(), h, w, hc.levels);
                let data: Vec<f64> = (0..hc.c_in).flat_map(|_| planes.iter().flatten().copied()).collect();
                LatentField::new(lc, lh, lw, data)
            }
            Codec::PatchLinear(pc) => {
                let (p, m, pp) = (pc.patch, pc.latent_channels, pc.patch * pc.patch);
                // Channels are replicated, so fold the c_in blocks of in_map.
                let mut folded = vec![0.0; pp * m];
                for c in 0..pc.c_in {
                    for i in 0..pp {
                        for k in 0..m {
                            folded[i * m + k] += pc.in_map[(c * pp + i) * m + k];
                        }
                    }
                }
                let mut data = vec![0.0; m * lh * lw];
                for br in 0..lh {
                    for bc in 0..lw {
                        for k in 0..m {
                            let mut acc = 0.0;
                            for i in 0..p {
                                for j in 0..p {
                                    acc += img.get(br * p + i, bc * p + j) * folded[(i * p + j) * m + k];
                                }
                            }
                            data[k * lh * lw + br * lw + bc] = acc;
                        }
                    }
                }
                let mut z = LatentField::new(m, lh, lw, data)?;
                pc.apply_core(&mut z, false);
                Ok(z)
            }
        }
    }

    /// Linear decoder output before the final clamp.
    pub fn decode_unclamped(&self, z: &LatentField) -> Result<RealField> {
        let (h, w) = self.image_shape(z)?;
        match self {
            Codec::Orthonormal(hc) => {
                let (_, lh, lw) = z.shape();
                let per_image = 1usize << (2 * hc.levels);
                let mut acc = vec![0.0; h * w];
                for c in 0..hc.c_in {
                    let planes: Vec<Vec<f64>> = (0..per_image).map(|k| z.channel(c * per_image + k).to_vec()).collect();
                    let plane = haar_unpacket(planes, lh, lw, hc.levels);
                    for (a, v) in acc.iter_mut().zip(plane) {
                        *a += v;
                    }
                }
                let inv = 1.0 / hc.c_in as f64;
                RealField::new(h, w, acc.into_iter().map(|v| v * inv).collect())
            }
            Codec::PatchLinear(pc) => {
                let mut z = z.clone();
                pc.apply_core(&mut z, true);
                let (m, lh, lw) = z.shape();
                let (p, pp) = (pc.patch, pc.patch * pc.patch);
                let mut folded = vec![0.0; m * pp];
                let inv = 1.0 / pc.c_in as f64;
                for k in 0..m {
                    for c in 0..pc.c_in {
                        for i in 0..pp {
                            folded[k * pp + i] += inv * pc.out_map[k * pc.inputs() + c * pp + i];
                        }
                    }
                }
                let mut out = vec![0.0; h * w];
                for br in 0..lh {
                    for bc in 0..lw {
                        for k in 0..m {
                            let zk = z.data()[k * lh * lw + br * lw + bc];
                            if zk == 0.0 {
                                continue;
                            }
                            for i in 0..p {
                                for j in 0..p {
                                    out[(br * p + i) * w + bc * p + j] += zk * folded[k * pp + i * p + j];
                                }
                            }
                        }
                    }
                }
                RealField::new(h, w, out)
            }
        }
    }

    /// Decoder output clamped to `[-1, 1]`.
    pub fn decode(&self, z: &LatentField) -> Result<RealField> {
        Ok(self.decode_unclamped(z)?.map(|v| v.clamp(-1.0, 1.0)))
    }

    /// Exact vector-Jacobian product of [`Codec::decode_unclamped`].
    pub fn decode_adjoint(&self, cotangent: &RealField) -> Result<LatentField> {
        let (h, w) = cotangent.shape();
        let (lc, lh, lw) = self.latent_shape(h, w)?;
        match self {
            Codec::Orthonormal(hc) => {
                let inv = 1.0 / hc.c_in as f64;
                let planes = haar_packet(cotangent.data().iter().map(|v| v * inv).collect(), h, w, hc.levels);
                let data: Vec<f64> = (0..hc.c_in).flat_map(|_| planes.iter().flatten().copied()).collect();
                LatentField::new(lc, lh, lw, data)
            }
            Codec::PatchLinear(pc) => {
                let (p, m, pp) = (pc.patch, pc.latent_channels, pc.patch * pc.patch);
                let inv = 1.0 / pc.c_in as f64;
                let mut folded = vec![0.0; m * pp];
                for k in 0..m {
                    for c in 0..pc.c_in {
                        for i in 0..pp {
                            folded[k * pp + i] += inv * pc.out_map[k * pc.inputs() + c * pp + i];
                        }
                    }
                }
                let mut data = vec![0.0; m * lh * lw];
                for br in 0..lh {
                    for bc in 0..lw {
                        for k in 0..m {
                            let mut acc = 0.0;
                            for i in 0..p {
                                for j in 0..p {
                                    acc += cotangent.get(br * p + i, bc * p + j) * folded[k * pp + i * p + j];
                                }
                            }
                            data[k * lh * lw + br * lw + bc] = acc;
                        }
                    }
                }
                let mut z = LatentField::new(m, lh, lw, data)?;
                pc.apply_core(&mut z, false);
                Ok(z)
            }
        }
    }

    /// Parameters of the adaptable boundary layers.
    pub fn boundary_parameters(&self) -> usize {
        match self {
            Codec::Orthonormal(_) => 0,
            Codec::PatchLinear(p) => p.in_map.len() + p.out_map.len(),
        }
    }

    pub fn total_parameters(&self) -> usize {
        match self {
            Codec::Orthonormal(_) => 0,
            Codec::PatchLinear(p) => p.in_map.len() + p.out_map.len() + p.core.matrix.len(),
        }
    }

    /// Mean squared error of the linear round trip over images normalized
    /// to `[-1, 1]` per image.
    pub fn reconstruction_error(&self, images: &[RealField]) -> Result<f64> {
        let mut total = 0.0;
        let mut count = 0usize;
        for img in images {
            let x = MagnitudeNorm::from_image(img).normalize_field(img);
            let y = self.decode_unclamped(&self.encode(&x)?)?;
            total += x.data().iter().zip(y.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            count += x.data().len();
        }
        if count == 0 {
            return Err(Error::Degenerate("no images".into()));
        }
        Ok(total / count as f64)
    }
}

impl Validate for Codec {
    fn validate(&self) -> std::result::Result<(), Violation> {
        let fail = |s: &str| Err(Violation {
            what: s.to_string(),
            location: None,
        });
        match self {
            Codec::Orthonormal(h) => {
                if h.c_in == 0 {
                    return fail("codec needs at least one input channel");
                }
                Ok(())
            }
            Codec::PatchLinear(p) => {
                if p.in_map.iter().chain(&p.out_map).chain(&p.core.matrix).any(|v| !v.is_finite()) {
                    return fail("non-finite codec parameter");
                }
                let n = p.core.dim();
                let q = DMatrix::from_row_slice(n, n, &p.core.matrix);
                let err = (q.transpose() * &q - DMatrix::identity(n, n)).abs().max();
                if err > 1e-10 {
                    return fail("core map is not orthogonal");
                }
                let norm = p.roundtrip_matrix().singular_values().max();
                if norm > MAX_ROUNDTRIP_NORM {
                    return Err(Violation {
                        what: format!("decode after encode has operator norm {norm:.4} > {MAX_ROUNDTRIP_NORM}"),
                        location: None,
                    });
                }
                Ok(())
            }
        }
    }
}

/// Rows of `p × p` patches from normalized images.
fn patch_rows(images: &[RealField], patch: usize) -> Result<DMatrix<f64>> {
    let mut rows: Vec<f64> = Vec::new();
    let mut n = 0;
    for img in images {
        let (h, w) = img.shape();
        if h % patch != 0 || w % patch != 0 {
            return Err(Error::ShapeMismatch(format!("image {h}x{w} not divisible by patch {patch}")));
        }
        let x = MagnitudeNorm::from_image(img).normalize_field(img);
        for br in 0..h / patch {
            for bc in 0..w / patch {
                for i in 0..patch {
                    for j in 0..patch {
                        rows.push(x.get(br * patch + i, bc * patch + j));
                    }
                }
                n += 1;
            }
        }
    }
    Ok(DMatrix::from_row_slice(n, patch * patch, &rows))
}

/// Minimum-norm correction `Δ` with `G(Y+Δ)S + ρ(Y+Δ) = rhs`, for symmetric
/// positive semidefinite `G` and `S`. Directions with a vanishing
/// denominator are left untouched.
fn sylvester_update(g: &DMatrix<f64>, s: &DMatrix<f64>, ridge: f64, rhs: &DMatrix<f64>, current: &DMatrix<f64>) -> DMatrix<f64> {
    let residual = rhs - g * current * s - current * ridge;
    let eg = SymmetricEigen::new(g.clone());
    let es = SymmetricEigen::new(s.clone());
    let rt = eg.eigenvectors.transpose() * residual * &es.eigenvectors;
    let gmax = eg.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let smax = es.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let floor = 1e-12 * gmax * smax;
    let delta_t = DMatrix::from_fn(rt.nrows(), rt.ncols(), |i, j| {
        let denom = eg.eigenvalues[i].max(0.0) * es.eigenvalues[j].max(0.0) + ridge;
        if denom > floor && denom > 0.0 {
            rt[(i, j)] / denom
        } else {
            0.0
        }
    });
    current + &eg.eigenvectors * delta_t * es.eigenvectors.transpose()
}

/// Refits the boundary layers of a patch codec to reconstruct `images`
/// (normalized per image to `[-1, 1]`) under ridge penalty `ridge`, using
/// [`ADAPT_SWEEPS`] alternating exact least-squares sweeps. The core map is
/// never touched. If the fit would increase the training reconstruction
/// error the input codec is returned unchanged.
pub fn adapt_boundary(codec: &Codec, images: &[RealField], ridge: f64) -> Result<Codec> {
    let pc = match codec {
        Codec::PatchLinear(pc) => pc,
        Codec::Orthonormal(_) => {
            return Err(Error::InvalidParameter("only patch-linear codecs have adaptable boundary layers".into()))
        }
    };
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(Error::InvalidParameter(format!("ridge {ridge}")));
    }
    if images.is_empty() {
        return Err(Error::Degenerate("no training images".into()));
    }
    if images.iter().all(|img| img.data().iter().all(|&v| v == 0.0)) {
        return Err(Error::Degenerate("all training images are zero".into()));
    }
    let (pp, p, m) = (pc.patch * pc.patch, pc.inputs(), pc.latent_channels);
    let x = patch_rows(images, pc.patch)?;
    let rep = replication(pp, pc.c_in);
    let avg = averaging(pp, pc.c_in);
    let xtx = x.transpose() * &x;
    let g_in = rep.transpose() * &xtx * &rep;
    let xtx_rep = rep.transpose() * &xtx;
    let mut e = DMatrix::from_row_slice(p, m, &pc.in_map);
    let mut d = DMatrix::from_row_slice(m, p, &pc.out_map);

    for _ in 0..ADAPT_SWEEPS {
        // Encoder side: features X·R, targets through B = D·Avg.
        let b = &d * &avg;
        let s = &b * b.transpose();
        let rhs = &xtx_rep * b.transpose();
        e = sylvester_update(&g_in, &s, ridge, &rhs, &e);
        // Decoder side: features F = X·R·E.
        let ete = e.transpose() * &g_in * &e;
        let s = &avg * avg.transpose();
        let rhs = e.transpose() * &xtx_rep * avg.transpose();
        d = sylvester_update(&ete, &s, ridge, &rhs, &d);
    }

    let mut in_map = vec![0.0; p * m];
    let mut out_map = vec![0.0; m * p];
    for i in 0..p {
        for k in 0..m {
            in_map[i * m + k] = e[(i, k)];
            out_map[k * p + i] = d[(k, i)];
        }
    }
    let adapted = Codec::PatchLinear(PatchCodec {
        in_map,
        out_map,
        ..pc.clone()
    });
    if adapted.reconstruction_error(images)? > codec.reconstruction_error(images)? {
        return Ok(codec.clone());
    }
    Ok(adapted)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_image(h: usize, w: usize, seed: u64) -> RealField {
        let mut rng = rng::stream(seed, 55);
        RealField::new(h, w, (0..h * w).map(|_| rng.random_range(-0.9..0.9)).collect()).unwrap()
    }

    fn random_latent(shape: (usize, usize, usize), seed: u64) -> LatentField {
        let mut rng = rng::stream(seed, 56);
        let n = shape.0 * shape.1 * shape.2;
        LatentField::new(shape.0, shape.1, shape.2, (0..n).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
    }

    fn small_patch_codec() -> Codec {
        Codec::PatchLinear(PatchCodec::dct_lowpass(2, 3, 3, 2, 1).unwrap())
    }

    #[test]
    fn identity_codec_round_trips_exactly() {
        let c = Codec::identity();
        let x = random_image(8, 8, 1);
        let z = c.encode(&x).unwrap();
        assert_eq!(z.shape(), (1, 8, 8));
        assert_eq!(c.decode(&z).unwrap(), x);
        let zero = LatentField::zeros(1, 8, 8);
        assert!(c.decode(&zero).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn haar_level_one_on_constant_block() {
        let c = Codec::Orthonormal(HaarCodec { levels: 1, c_in: 1 });
        let v = 0.3;
        let z = c.encode(&RealField::new(2, 2, vec![v; 4]).unwrap()).unwrap();
        assert_eq!(z.shape(), (4, 1, 1));
        assert!((z.data()[0] - 2.0 * v).abs() < 1e-15);
        assert!(z.data()[1..].iter().all(|d| d.abs() < 1e-15));
    }

    #[test]
    fn haar_is_isometric_and_lossless() {
        let c = Codec::Orthonormal(HaarCodec { levels: 2, c_in: 1 });
        let x = random_image(16, 8, 2);
        let z = c.encode(&x).unwrap();
        assert_eq!(z.shape(), (16, 4, 2));
        assert!((z.norm_l2() - x.norm_l2()).abs() < 1e-12);
        let back = c.decode_unclamped(&z).unwrap();
        for (a, b) in back.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn haar_adjoint_is_encode() {
        let c = Codec::Orthonormal(HaarCodec { levels: 2, c_in: 1 });
        let u = random_image(8, 8, 3);
        assert_eq!(c.decode_adjoint(&u).unwrap(), c.encode(&u).unwrap());
        let c3 = Codec::Orthonormal(HaarCodec { levels: 1, c_in: 3 });
        let adj = c3.decode_adjoint(&u).unwrap();
        let enc = c3.encode(&u).unwrap();
        for (a, e) in adj.data().iter().zip(enc.data()) {
            assert!((a - e / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn identity_adjoint_replicates_over_channels() {
        let c = Codec::Orthonormal(HaarCodec::identity(3));
        let u = random_image(4, 4, 4);
        let adj = c.decode_adjoint(&u).unwrap();
        assert_eq!(adj.channels(), 3);
        for ch in 0..3 {
            for (a, v) in adj.channel(ch).iter().zip(u.data()) {
                assert!((a - v / 3.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn adjoint_dot_product_identity() {
        for codec in [
            Codec::identity(),
            Codec::Orthonormal(HaarCodec { levels: 2, c_in: 3 }),
            small_patch_codec(),
            Codec::PatchLinear(PatchCodec::dct_lowpass(4, 3, 4, 2, 9).unwrap()),
        ] {
            let (c, lh, lw) = codec.latent_shape(16, 16).unwrap();
            for seed in 0..5 {
                let z = random_latent((c, lh, lw), seed);
                let u = random_image(16, 16, 100 + seed);
                let lhs: f64 = codec.decode_unclamped(&z).unwrap().data().iter().zip(u.data()).map(|(a, b)| a * b).sum();
                let rhs = z.dot(&codec.decode_adjoint(&u).unwrap());
                assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0), "{codec:?}: {lhs} vs {rhs}");
            }
        }
    }

    #[test]
    fn patch_decode_is_linear_before_clamp() {
        let codec = small_patch_codec();
        let shape = codec.latent_shape(8, 8).unwrap();
        let (z1, z2) = (random_latent(shape, 1), random_latent(shape, 2));
        let (a, b) = (0.7, -1.3);
        let combo = codec.decode_unclamped(&z1.axpby(a, &z2, b).unwrap()).unwrap();
        let d1 = codec.decode_unclamped(&z1).unwrap();
        let d2 = codec.decode_unclamped(&z2).unwrap();
        for ((c, x), y) in combo.data().iter().zip(d1.data()).zip(d2.data()) {
            assert!((c - (a * x + b * y)).abs() < 1e-12);
        }
    }

    #[test]
    fn orthonormal_patch_encoder_contracts() {
        let codec = Codec::PatchLinear(PatchCodec::dct_lowpass(2, 1, 3, 2, 4).unwrap());
        for seed in 0..5 {
            let x = random_image(8, 8, seed);
            assert!(codec.encode(&x).unwrap().norm_l2() <= x.norm_l2() + 1e-12);
        }
        let codec3 = Codec::PatchLinear(PatchCodec::dct_lowpass(2, 3, 3, 2, 4).unwrap());
        let x = random_image(8, 8, 9);
        assert!(codec3.encode(&x).unwrap().norm_l2() <= 3f64.sqrt() * x.norm_l2() + 1e-12);
    }

    #[test]
    fn indivisible_dimensions_rejected() {
        let codec = Codec::Orthonormal(HaarCodec { levels: 2, c_in: 1 });
        assert!(codec.encode(&random_image(6, 8, 0)).is_err());
        assert!(small_patch_codec().encode(&random_image(6, 8, 0)).is_err());
    }

    #[test]
    fn default_codec_validates_and_parameter_fraction_small() {
        let codec = Codec::PatchLinear(PatchCodec::dct_lowpass(4, 3, 4, 8, 0).unwrap());
        assert!(codec.validate().is_ok());
        let frac = codec.boundary_parameters() as f64 / codec.total_parameters() as f64;
        assert!(frac < 0.05, "{frac}");
    }

    #[test]
    fn exact_codec_is_a_fixed_point_of_adaptation() {
        // p = 2 with m = p² keeps every DCT component, so reconstruction is exact.
        let codec = Codec::PatchLinear(PatchCodec::dct_lowpass(2, 1, 4, 1, 3).unwrap());
        let imgs = vec![random_image(8, 8, 1), random_image(8, 8, 2)];
        assert!(codec.reconstruction_error(&imgs).unwrap() < 1e-25);
        let adapted = adapt_boundary(&codec, &imgs, 0.0).unwrap();
        let (Codec::PatchLinear(a), Codec::PatchLinear(b)) = (&adapted, &codec) else { unreachable!() };
        for (x, y) in a.in_map().iter().zip(b.in_map()).chain(a.out_map().iter().zip(b.out_map())) {
            assert!((x - y).abs() < 1e-8);
        }
    }

    #[test]
    fn adaptation_does_not_increase_training_error() {
        let mut rng = rng::stream(4, 1);
        let in_map: Vec<f64> = (0..16).map(|_| rng.sample(StandardNormal)).collect();
        let out_map: Vec<f64> = (0..16).map(|_| rng.sample(StandardNormal)).collect();
        let codec = Codec::PatchLinear(PatchCodec::new(2, 1, in_map, out_map, CoreMap::identity(1, 4)).unwrap());
        let img = vec![random_image(8, 8, 7)];
        let before = codec.reconstruction_error(&img).unwrap();
        let adapted = adapt_boundary(&codec, &img, 0.0).unwrap();
        let after = adapted.reconstruction_error(&img).unwrap();
        assert!(after <= before, "{after} > {before}");
        assert!(after < 1e-6 * before.max(1e-12) + 1e-20, "full-rank codec should fit exactly: {after}");
    }

    #[test]
    fn adaptation_keeps_core_bits() {
        let codec = small_patch_codec();
        let imgs = vec![random_image(8, 8, 1)];
        let adapted = adapt_boundary(&codec, &imgs, 1e-3).unwrap();
        let (Codec::PatchLinear(a), Codec::PatchLinear(b)) = (&adapted, &codec) else { unreachable!() };
        assert_eq!(a.core(), b.core());
    }

    #[test]
    fn adaptation_rejects_degenerate_input() {
        let codec = small_patch_codec();
        assert!(adapt_boundary(&codec, &[], 0.0).is_err());
        assert!(adapt_boundary(&codec, &[RealField::zeros(8, 8)], 0.0).is_err());
        assert!(adapt_boundary(&Codec::identity(), &[random_image(8, 8, 1)], 0.0).is_err());
    }

    #[test]
    fn magnitude_norm_round_trip() {
        let img = RealField::new_magnitude(2, 2, vec![0.5, 1.5, 2.5, 1.0]).unwrap();
        let n = MagnitudeNorm::from_image(&img);
        let back = n.denormalize_field(&n.normalize_field(&img));
        for (a, b) in back.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-15);
        }
        let flat = MagnitudeNorm::from_image(&RealField::zeros(2, 2));
        assert_eq!(flat.scale(), 0.5);
    }
}
