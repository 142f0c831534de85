//! Value types shared by every stage of the pipeline.
//!
//! Constructors only check structural consistency (buffer length against the
//! declared shape). Semantic invariants such as finiteness, sign constraints
//! and mask calibration are checked by [`Validate::validate`], which reports
//! the first violation together with its location.

use std::f64::consts::PI;
use std::fmt;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Relative tolerance on the achieved acceleration of a sampling mask.
pub const ACCEL_TOLERANCE: f64 = 0.15;

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub what: String,
    pub location: Option<(usize, usize)>,
}

impl Violation {
    fn new(what: impl Into<String>) -> Self {
        Self {
            what: what.into(),
            location: None,
        }
    }

    fn at(what: impl Into<String>, row: usize, col: usize) -> Self {
        Self {
            what: what.into(),
            location: Some((row, col)),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.location {
            Some((r, c)) => write!(f, "{} at ({r}, {c})", self.what),
            None => write!(f, "{}", self.what),
        }
    }
}

impl std::error::Error for Violation {}

/// Invariant checking for domain values. Pure and deterministic.
pub trait Validate {
    fn validate(&self) -> std::result::Result<(), Violation>;
}

fn check_len(height: usize, width: usize, len: usize, per_cell: usize) -> Result<()> {
    if height == 0 || width == 0 {
        return Err(Error::ShapeMismatch(format!(
            "dimensions must be positive, got {height}x{width}"
        )));
    }
    if len != height * width * per_cell {
        return Err(Error::ShapeMismatch(format!(
            "buffer of length {len} does not match {height}x{width}x{per_cell}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Domain {
    Image,
    KSpace,
}

/// 2D complex array in row-major order. k-space arrays keep the zero
/// frequency at `(height / 2, width / 2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField {
    height: usize,
    width: usize,
    data: Vec<Complex64>,
    domain: Domain,
}

impl ComplexField {
    pub fn new(height: usize, width: usize, data: Vec<Complex64>, domain: Domain) -> Result<Self> {
        check_len(height, width, data.len(), 1)?;
        Ok(Self {
            height,
            width,
            data,
            domain,
        })
    }

    pub fn zeros(height: usize, width: usize, domain: Domain) -> Self {
        Self {
            height,
            width,
            data: vec![Complex64::new(0.0, 0.0); height * width],
            domain,
        }
    }

    /// `magnitude · e^{i·phase}` pixelwise.
    pub fn from_polar(magnitude: &RealField, phase: &PhaseField) -> Result<Self> {
        if magnitude.shape() != phase.shape() {
            return Err(Error::ShapeMismatch(format!(
                "magnitude {:?} vs phase {:?}",
                magnitude.shape(),
                phase.shape()
            )));
        }
        let data = magnitude
            .data()
            .iter()
            .zip(phase.data())
            .map(|(&m, &p)| Complex64::from_polar(m, p))
            .collect();
        Ok(Self {
            height: magnitude.height(),
            width: magnitude.width(),
            data,
            domain: Domain::Image,
        })
    }

    pub fn from_real(field: &RealField) -> Self {
        Self {
            height: field.height(),
            width: field.width(),
            data: field.data().iter().map(|&v| Complex64::new(v, 0.0)).collect(),
            domain: Domain::Image,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<Complex64> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.data[row * self.width + col]
    }

    pub fn magnitude(&self) -> RealField {
        RealField {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|c| c.norm()).collect(),
            magnitude: true,
        }
    }

    /// Elementwise argument with `arg(0) = 0`.
    pub fn phase(&self) -> PhaseField {
        PhaseField {
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .map(|c| {
                    if c.re == 0.0 && c.im == 0.0 {
                        0.0
                    } else {
                        wrap_phase(c.arg())
                    }
                })
                .collect(),
        }
    }

    pub fn norm_l2(&self) -> f64 {
        self.data.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            data: self.data.iter().map(|c| c * s).collect(),
            ..self.clone()
        }
    }
}

impl Validate for ComplexField {
    fn validate(&self) -> std::result::Result<(), Violation> {
        if self.data.len() != self.height * self.width {
            return Err(Violation::new("data length does not match height x width"));
        }
        for (i, c) in self.data.iter().enumerate() {
            if !c.re.is_finite() || !c.im.is_finite() {
                return Err(Violation::at("non-finite value", i / self.width, i % self.width));
            }
        }
        Ok(())
    }
}

/// 2D real array. When `magnitude` is set every entry must be nonnegative.
#[derive(Debug, Clone, PartialEq)]
pub struct RealField {
    height: usize,
    width: usize,
    data: Vec<f64>,
    magnitude: bool,
}

impl RealField {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        check_len(height, width, data.len(), 1)?;
        Ok(Self {
            height,
            width,
            data,
            magnitude: false,
        })
    }

    pub fn new_magnitude(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        check_len(height, width, data.len(), 1)?;
        Ok(Self {
            height,
            width,
            data,
            magnitude: true,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; height * width],
            magnitude: false,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn is_magnitude(&self) -> bool {
        self.magnitude
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn norm_l2(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Same values, tagged as a magnitude image.
    pub fn as_magnitude(mut self) -> Self {
        self.magnitude = true;
        self
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }
}

impl Validate for RealField {
    fn validate(&self) -> std::result::Result<(), Violation> {
        if self.data.len() != self.height * self.width {
            return Err(Violation::new("data length does not match height x width"));
        }
        for (i, &v) in self.data.iter().enumerate() {
            let (r, c) = (i / self.width, i % self.width);
            if !v.is_finite() {
                return Err(Violation::at("non-finite value", r, c));
            }
            if self.magnitude && v < 0.0 {
                return Err(Violation::at("negative magnitude", r, c));
            }
        }
        Ok(())
    }
}

/// Multi-channel latent array, channel-major then row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentField {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl LatentField {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::ShapeMismatch("latent needs at least one channel".into()));
        }
        check_len(height, width, data.len(), channels)?;
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn same_shape(&self, other: &LatentField) -> bool {
        self.shape() == other.shape()
    }

    pub fn norm_l2(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &LatentField) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        self.with_data(self.data.iter().map(|&v| f(v)).collect())
    }

    /// Same shape, new buffer. Panics on a length mismatch.
    pub fn with_data(&self, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), self.data.len(), "latent buffer length");
        Self {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data,
        }
    }

    /// `a·self + b·other`.
    pub fn axpby(&self, a: f64, other: &LatentField, b: f64) -> Result<Self> {
        if !self.same_shape(other) {
            return Err(Error::ShapeMismatch(format!(
                "latent {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(self.with_data(
            self.data
                .iter()
                .zip(&other.data)
                .map(|(x, y)| a * x + b * y)
                .collect(),
        ))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl Validate for LatentField {
    fn validate(&self) -> std::result::Result<(), Violation> {
        if self.data.len() != self.channels * self.height * self.width {
            return Err(Violation::new("data length does not match channels x height x width"));
        }
        let plane = self.height * self.width;
        for (i, &v) in self.data.iter().enumerate() {
            if !v.is_finite() {
                let p = i % plane;
                return Err(Violation::at(
                    format!("non-finite value in channel {}", i / plane),
                    p / self.width,
                    p % self.width,
                ));
            }
        }
        Ok(())
    }
}

/// Wraps an angle into `[-π, π)`.
pub fn wrap_phase(theta: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let mut w = (theta + PI).rem_euclid(two_pi) - PI;
    // rem_euclid can round up to exactly 2π for tiny negative inputs
    if w >= PI {
        w -= two_pi;
    }
    if w < -PI {
        w = -PI;
    }
    w
}

/// Per-pixel phase in radians, every entry in `[-π, π)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseField {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl PhaseField {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        check_len(height, width, data.len(), 1)?;
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// Builds a phase field, wrapping every entry into `[-π, π)`.
    pub fn wrapped(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        check_len(height, width, data.len(), 1)?;
        Ok(Self {
            height,
            width,
            data: data.into_iter().map(wrap_phase).collect(),
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }
}

impl Validate for PhaseField {
    fn validate(&self) -> std::result::Result<(), Violation> {
        if self.data.len() != self.height * self.width {
            return Err(Violation::new("data length does not match height x width"));
        }
        for (i, &v) in self.data.iter().enumerate() {
            if !(-PI..PI).contains(&v) {
                return Err(Violation::at("phase outside [-pi, pi)", i / self.width, i % self.width));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MaskPattern {
    Uniform1D,
    Gaussian1D,
    Gaussian2D,
    VDPoissonDisk,
    Full,
}

impl MaskPattern {
    pub fn is_1d(self) -> bool {
        matches!(self, MaskPattern::Uniform1D | MaskPattern::Gaussian1D)
    }

    pub fn name(self) -> &'static str {
        match self {
            MaskPattern::Uniform1D => "uniform1d",
            MaskPattern::Gaussian1D => "gaussian1d",
            MaskPattern::Gaussian2D => "gaussian2d",
            MaskPattern::VDPoissonDisk => "vd_poisson_disk",
            MaskPattern::Full => "full",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "uniform1d" => MaskPattern::Uniform1D,
            "gaussian1d" => MaskPattern::Gaussian1D,
            "gaussian2d" => MaskPattern::Gaussian2D,
            "vd_poisson_disk" => MaskPattern::VDPoissonDisk,
            "full" => MaskPattern::Full,
            _ => return None,
        })
    }
}

/// `⌈fraction · n⌉`, ignoring floating-point fuzz just above an integer.
pub(crate) fn ceil_count(fraction: f64, n: usize) -> usize {
    let x = fraction * n as f64;
    let r = x.round();
    if (x - r).abs() < 1e-9 {
        r as usize
    } else {
        x.ceil() as usize
    }
}

/// Binary Cartesian sampling mask, k-space centre at `(height / 2, width / 2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingMask {
    height: usize,
    width: usize,
    keep: Vec<bool>,
    accel_nominal: f64,
    acs_fraction: f64,
    pattern: MaskPattern,
}

/// Rectangle `[row0, row1) x [col0, col1)` of k-space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Region {
    pub row0: usize,
    pub row1: usize,
    pub col0: usize,
    pub col1: usize,
}

impl Region {
    pub fn contains(&self, row: usize, col: usize) -> bool {
        (self.row0..self.row1).contains(&row) && (self.col0..self.col1).contains(&col)
    }

    pub fn is_empty(&self) -> bool {
        self.row0 >= self.row1 || self.col0 >= self.col1
    }

    pub fn cells(&self) -> usize {
        (self.row1 - self.row0) * (self.col1 - self.col0)
    }
}

fn centered_span(n: usize, size: usize) -> (usize, usize) {
    let size = size.min(n);
    let start = (n / 2).saturating_sub(size / 2).min(n - size);
    (start, start + size)
}

impl SamplingMask {
    pub fn new(
        height: usize,
        width: usize,
        keep: Vec<bool>,
        accel_nominal: f64,
        acs_fraction: f64,
        pattern: MaskPattern,
    ) -> Result<Self> {
        check_len(height, width, keep.len(), 1)?;
        Ok(Self {
            height,
            width,
            keep,
            accel_nominal,
            acs_fraction,
            pattern,
        })
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            keep: vec![true; height * width],
            accel_nominal: 1.0,
            acs_fraction: 0.0,
            pattern: MaskPattern::Full,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn keep(&self) -> &[bool] {
        &self.keep
    }

    pub fn is_kept(&self, row: usize, col: usize) -> bool {
        self.keep[row * self.width + col]
    }

    pub fn accel_nominal(&self) -> f64 {
        self.accel_nominal
    }

    pub fn acs_fraction(&self) -> f64 {
        self.acs_fraction
    }

    pub fn pattern(&self) -> MaskPattern {
        self.pattern
    }

    pub fn kept_count(&self) -> usize {
        self.keep.iter().filter(|&&k| k).count()
    }

    pub fn achieved_acceleration(&self) -> f64 {
        let kept = self.kept_count();
        if kept == 0 {
            f64::INFINITY
        } else {
            (self.height * self.width) as f64 / kept as f64
        }
    }

    /// Central calibration block implied by `acs_fraction` and the pattern:
    /// central columns for 1D patterns, a central square for 2D ones.
    pub fn acs_region(&self) -> Region {
        acs_region_for(self.height, self.width, self.acs_fraction, self.pattern)
    }

    /// Mask as 0/1 weights.
    pub fn weights(&self) -> Vec<f64> {
        self.keep.iter().map(|&k| if k { 1.0 } else { 0.0 }).collect()
    }
}

pub(crate) fn acs_region_for(height: usize, width: usize, acs_fraction: f64, pattern: MaskPattern) -> Region {
    if acs_fraction <= 0.0 || pattern == MaskPattern::Full {
        return Region {
            row0: 0,
            row1: 0,
            col0: 0,
            col1: 0,
        };
    }
    if pattern.is_1d() {
        let (c0, c1) = centered_span(width, ceil_count(acs_fraction, width));
        Region {
            row0: 0,
            row1: height,
            col0: c0,
            col1: c1,
        }
    } else {
        let side = ceil_count(acs_fraction.sqrt(), height.min(width));
        let (r0, r1) = centered_span(height, side);
        let (c0, c1) = centered_span(width, side);
        Region {
            row0: r0,
            row1: r1,
            col0: c0,
            col1: c1,
        }
    }
}

impl Validate for SamplingMask {
    fn validate(&self) -> std::result::Result<(), Violation> {
        if self.keep.len() != self.height * self.width {
            return Err(Violation::new("keep length does not match height x width"));
        }
        if !(self.accel_nominal.is_finite() && self.accel_nominal >= 1.0) {
            return Err(Violation::new("nominal acceleration must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.acs_fraction) {
            return Err(Violation::new("acs fraction outside [0, 1]"));
        }
        if self.pattern == MaskPattern::Full {
            if let Some(i) = self.keep.iter().position(|&k| !k) {
                return Err(Violation::at("full mask has a dropped sample", i / self.width, i % self.width));
            }
            return Ok(());
        }
        let acs = self.acs_region();
        for r in acs.row0..acs.row1 {
            for c in acs.col0..acs.col1 {
                if !self.is_kept(r, c) {
                    return Err(Violation::at("ACS block not kept", r, c));
                }
            }
        }
        if self.pattern.is_1d() {
            for c in 0..self.width {
                let first = self.is_kept(0, c);
                for r in 1..self.height {
                    if self.is_kept(r, c) != first {
                        return Err(Violation::at("1D mask varies along the readout axis", r, c));
                    }
                }
            }
        }
        let achieved = self.achieved_acceleration();
        if (achieved - self.accel_nominal).abs() > ACCEL_TOLERANCE * self.accel_nominal {
            return Err(Violation::new(format!(
                "achieved acceleration {achieved:.3} not within 15% of nominal {:.3}",
                self.accel_nominal
            )));
        }
        Ok(())
    }
}

/// A set of per-coil images sharing one shape, with optional sensitivities.
#[derive(Debug, Clone, PartialEq)]
pub struct CoilSet {
    images: Vec<ComplexField>,
    sensitivities: Option<Vec<ComplexField>>,
}

impl CoilSet {
    pub fn new(images: Vec<ComplexField>, sensitivities: Option<Vec<ComplexField>>) -> Result<Self> {
        let shape = match (images.first(), sensitivities.as_ref().and_then(|s| s.first())) {
            (Some(i), _) => i.shape(),
            (None, Some(s)) => s.shape(),
            (None, None) => return Err(Error::InvalidParameter("coil set needs at least one coil".into())),
        };
        let all = images.iter().chain(sensitivities.iter().flatten());
        for f in all {
            if f.shape() != shape {
                return Err(Error::ShapeMismatch(format!("coil shape {:?} vs {:?}", f.shape(), shape)));
            }
        }
        if let Some(s) = &sensitivities {
            if !images.is_empty() && s.len() != images.len() {
                return Err(Error::ShapeMismatch(format!(
                    "{} images but {} sensitivity maps",
                    images.len(),
                    s.len()
                )));
            }
        }
        Ok(Self { images, sensitivities })
    }

    /// Sensitivity maps only, no coil images yet.
    pub fn from_sensitivities(sensitivities: Vec<ComplexField>) -> Result<Self> {
        Self::new(Vec::new(), Some(sensitivities))
    }

    pub fn n_coils(&self) -> usize {
        self.sensitivities
            .as_ref()
            .map(|s| s.len())
            .unwrap_or(self.images.len())
    }

    pub fn shape(&self) -> (usize, usize) {
        self.images
            .first()
            .or_else(|| self.sensitivities.as_ref().and_then(|s| s.first()))
            .map(|f| f.shape())
            .unwrap_or((0, 0))
    }

    pub fn images(&self) -> &[ComplexField] {
        &self.images
    }

    pub fn sensitivities(&self) -> Option<&[ComplexField]> {
        self.sensitivities.as_deref()
    }
}

impl Validate for CoilSet {
    fn validate(&self) -> std::result::Result<(), Violation> {
        let shape = self.shape();
        for f in self.images.iter().chain(self.sensitivities.iter().flatten()) {
            if f.shape() != shape {
                return Err(Violation::new("coils do not share one shape"));
            }
            f.validate()?;
        }
        if let Some(s) = &self.sensitivities {
            let (h, w) = shape;
            for p in 0..h * w {
                let total: f64 = s.iter().map(|m| m.data()[p].norm_sqr()).sum();
                if (total - 1.0).abs() > 1e-6 {
                    return Err(Violation::at("sensitivities not normalized", p / w, p % w));
                }
            }
        }
        Ok(())
    }
}
