//! Cartesian undersampling mask generators.
//!
//! All generators keep the central calibration (ACS) block, hit the requested
//! acceleration within [`ACCEL_TOLERANCE`] and are deterministic for a given
//! `(height, width, R, acs_fraction, seed)`.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::field::{acs_region_for, MaskPattern, Region, SamplingMask, ACCEL_TOLERANCE};
use crate::rng::{self, purpose};

const MAX_CALIBRATION_ATTEMPTS: usize = 64;

fn check_params(h: usize, w: usize, accel: f64, acs_fraction: f64) -> Result<()> {
    if h == 0 || w == 0 {
        return Err(Error::InvalidParameter(format!("mask shape {h}x{w}")));
    }
    if !(accel.is_finite() && accel >= 1.0) {
        return Err(Error::InvalidParameter(format!("acceleration {accel} must be >= 1")));
    }
    if !(0.0..1.0).contains(&acs_fraction) {
        return Err(Error::InvalidParameter(format!("acs fraction {acs_fraction} outside [0, 1)")));
    }
    Ok(())
}

fn within_tolerance(total: usize, kept: usize, accel: f64) -> bool {
    kept > 0 && ((total as f64 / kept as f64) - accel).abs() <= ACCEL_TOLERANCE * accel
}

fn all_kept(h: usize, w: usize, pattern: MaskPattern, acs_fraction: f64) -> SamplingMask {
    SamplingMask::new(h, w, vec![true; h * w], 1.0, acs_fraction, pattern).expect("shape")
}

fn from_columns(h: usize, w: usize, columns: &[bool], accel: f64, acs: f64, pattern: MaskPattern) -> SamplingMask {
    let keep = (0..h * w).map(|i| columns[i % w]).collect();
    SamplingMask::new(h, w, keep, accel, acs, pattern).expect("shape")
}

/// Column budget for a 1D pattern: (ACS region, non-ACS columns to add).
fn column_budget(h: usize, w: usize, accel: f64, acs: f64, pattern: MaskPattern) -> Result<(Region, usize)> {
    let region = acs_region_for(h, w, acs, pattern);
    let n_acs = if region.is_empty() { 0 } else { region.col1 - region.col0 };
    let target = ((w as f64 / accel).round() as usize).max(1);
    let kept = target.max(n_acs);
    if !within_tolerance(w, kept, accel) {
        return Err(Error::InfeasibleMask(format!(
            "{n_acs} ACS columns out of {w} cannot reach R = {accel}"
        )));
    }
    Ok((region, kept - n_acs))
}

/// Central ACS columns plus evenly spaced columns across the rest of k-space.
/// The seed picks the offset of the even grid.
pub fn uniform1d(h: usize, w: usize, accel: f64, acs_fraction: f64, seed: u64) -> Result<SamplingMask> {
    check_params(h, w, accel, acs_fraction)?;
    if accel == 1.0 {
        return Ok(all_kept(h, w, MaskPattern::Uniform1D, acs_fraction));
    }
    let (region, extra) = column_budget(h, w, accel, acs_fraction, MaskPattern::Uniform1D)?;
    let mut columns = vec![false; w];
    for c in region.col0..region.col1 {
        columns[c] = true;
    }
    let free: Vec<usize> = (0..w).filter(|&c| !columns[c]).collect();
    if extra > 0 {
        let spacing = free.len() as f64 / extra as f64;
        let offset = rng::stream(seed, purpose::MASK).random_range(0.0..spacing);
        for j in 0..extra {
            let idx = ((offset + j as f64 * spacing).floor() as usize).min(free.len() - 1);
            columns[free[idx]] = true;
        }
    }
    Ok(from_columns(h, w, &columns, accel, acs_fraction, MaskPattern::Uniform1D))
}

/// Bisection for the width `σ` of a peak-one Gaussian profile whose expected
/// number of selected cells equals `target`.
fn calibrate_sigma(distances: &[f64], target: f64) -> f64 {
    let expected = |sigma: f64| -> f64 {
        distances
            .iter()
            .map(|d| (-d * d / (2.0 * sigma * sigma)).exp())
            .sum()
    };
    let (mut lo, mut hi) = (1e-3, 1.0);
    while expected(hi) < target && hi < 1e9 {
        hi *= 2.0;
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if expected(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// ACS columns plus non-ACS columns drawn without replacement with
/// probability proportional to `exp(−d² / 2σ²)`, `d` the distance to the
/// centre column.
pub fn gaussian1d(h: usize, w: usize, accel: f64, acs_fraction: f64, seed: u64) -> Result<SamplingMask> {
    check_params(h, w, accel, acs_fraction)?;
    if accel == 1.0 {
        return Ok(all_kept(h, w, MaskPattern::Gaussian1D, acs_fraction));
    }
    let (region, extra) = column_budget(h, w, accel, acs_fraction, MaskPattern::Gaussian1D)?;
    let mut columns = vec![false; w];
    for c in region.col0..region.col1 {
        columns[c] = true;
    }
    let free: Vec<usize> = (0..w).filter(|&c| !columns[c]).collect();
    if extra > 0 {
        let centre = (w / 2) as f64;
        let distances: Vec<f64> = free.iter().map(|&c| (c as f64 - centre).abs()).collect();
        let sigma = calibrate_sigma(&distances, extra as f64);
        // Efraimidis-Spirakis weighted sampling without replacement.
        let mut rng = rng::stream(seed, purpose::MASK);
        let mut keyed: Vec<(f64, usize)> = free
            .iter()
            .zip(&distances)
            .map(|(&c, d)| {
                let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
                let log_weight = -d * d / (2.0 * sigma * sigma);
                (u.ln() * (-log_weight).exp(), c)
            })
            .collect();
        keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        for &(_, c) in keyed.iter().take(extra) {
            columns[c] = true;
        }
    }
    Ok(from_columns(h, w, &columns, accel, acs_fraction, MaskPattern::Gaussian1D))
}

fn radial_distances(h: usize, w: usize, cells: &[usize]) -> Vec<f64> {
    let (cr, cc) = ((h / 2) as f64, (w / 2) as f64);
    cells
        .iter()
        .map(|&i| {
            let (r, c) = ((i / w) as f64, (i % w) as f64);
            ((r - cr).powi(2) + (c - cc).powi(2)).sqrt()
        })
        .collect()
}

fn point_budget(h: usize, w: usize, accel: f64, region: &Region) -> Result<usize> {
    let total = h * w;
    let n_acs = if region.is_empty() { 0 } else { region.cells() };
    let target = ((total as f64 / accel).round() as usize).max(1);
    if !within_tolerance(total, target.max(n_acs), accel) {
        return Err(Error::InfeasibleMask(format!(
            "{n_acs} ACS samples out of {total} cannot reach R = {accel}"
        )));
    }
    Ok(target.saturating_sub(n_acs))
}

/// Central ACS square plus i.i.d. Bernoulli samples with a radially Gaussian
/// keep probability calibrated to the requested acceleration.
pub fn gaussian2d(h: usize, w: usize, accel: f64, acs_fraction: f64, seed: u64) -> Result<SamplingMask> {
    check_params(h, w, accel, acs_fraction)?;
    if accel == 1.0 {
        return Ok(all_kept(h, w, MaskPattern::Gaussian2D, acs_fraction));
    }
    let region = acs_region_for(h, w, acs_fraction, MaskPattern::Gaussian2D);
    let extra = point_budget(h, w, accel, &region)?;
    let free: Vec<usize> = (0..h * w)
        .filter(|&i| !region.contains(i / w, i % w))
        .collect();
    let distances = radial_distances(h, w, &free);
    let sigma = if extra > 0 {
        calibrate_sigma(&distances, extra as f64)
    } else {
        0.0
    };
    let mut rng = rng::stream(seed, purpose::MASK);
    let mut achieved = f64::INFINITY;
    for _ in 0..MAX_CALIBRATION_ATTEMPTS {
        let mut keep = vec![false; h * w];
        for r in region.row0..region.row1 {
            for c in region.col0..region.col1 {
                keep[r * w + c] = true;
            }
        }
        if extra > 0 {
            for (&i, d) in free.iter().zip(&distances) {
                let p = (-d * d / (2.0 * sigma * sigma)).exp();
                if rng.random::<f64>() < p {
                    keep[i] = true;
                }
            }
        }
        let kept = keep.iter().filter(|&&k| k).count();
        if within_tolerance(h * w, kept, accel) {
            return SamplingMask::new(h, w, keep, accel, acs_fraction, MaskPattern::Gaussian2D);
        }
        achieved = (h * w) as f64 / kept.max(1) as f64;
    }
    Err(Error::Calibration {
        attempts: MAX_CALIBRATION_ATTEMPTS,
        achieved,
        requested: accel,
    })
}

/// Exclusion radius of the variable-density Poisson-disk sampler at distance
/// `d` from the k-space centre.
pub fn poisson_radius(r0: f64, d: f64, d_max: f64) -> f64 {
    r0 * (1.0 + d / d_max)
}

fn max_centre_distance(h: usize, w: usize) -> f64 {
    let (cr, cc) = ((h / 2) as f64, (w / 2) as f64);
    let dr = cr.max((h - 1) as f64 - cr);
    let dc = cc.max((w - 1) as f64 - cc);
    (dr * dr + dc * dc).sqrt().max(1.0)
}

/// Dart throwing over the candidate cells in a fixed shuffled order; a
/// candidate is accepted when it is at least `max(r(p), r(q))` away from every
/// accepted point `q`.
fn dart_throw(h: usize, w: usize, order: &[usize], r0: f64) -> Vec<usize> {
    let d_max = max_centre_distance(h, w);
    let (cr, cc) = ((h / 2) as f64, (w / 2) as f64);
    let radius = |i: usize| {
        let (r, c) = ((i / w) as f64, (i % w) as f64);
        poisson_radius(r0, ((r - cr).powi(2) + (c - cc).powi(2)).sqrt(), d_max)
    };
    let cell = r0.max(1.0);
    let gh = (h as f64 / cell).ceil() as usize + 1;
    let gw = (w as f64 / cell).ceil() as usize + 1;
    let reach = (2.0 * r0 / cell).ceil() as isize;
    let mut grid: Vec<Vec<usize>> = vec![Vec::new(); gh * gw];
    let mut accepted = Vec::new();
    for &i in order {
        let (r, c) = (i / w, i % w);
        let ri = radius(i);
        let (gr, gc) = ((r as f64 / cell) as isize, (c as f64 / cell) as isize);
        let mut ok = true;
        'search: for dr in -reach..=reach {
            for dc in -reach..=reach {
                let (nr, nc) = (gr + dr, gc + dc);
                if nr < 0 || nc < 0 || nr >= gh as isize || nc >= gw as isize {
                    continue;
                }
                for &j in &grid[nr as usize * gw + nc as usize] {
                    let (qr, qc) = ((j / w) as f64, (j % w) as f64);
                    let dist = ((r as f64 - qr).powi(2) + (c as f64 - qc).powi(2)).sqrt();
                    if dist < ri.max(radius(j)) {
                        ok = false;
                        break 'search;
                    }
                }
            }
        }
        if ok {
            grid[gr as usize * gw + gc as usize].push(i);
            accepted.push(i);
        }
    }
    accepted
}

/// Variable-density Poisson-disk mask: the exclusion radius grows linearly
/// with distance from the centre, `r(d) = r₀·(1 + d/d_max)`, and `r₀` is
/// calibrated by bisection on the accepted count.
pub fn vd_poisson_disk(h: usize, w: usize, accel: f64, acs_fraction: f64, seed: u64) -> Result<SamplingMask> {
    vd_poisson_disk_calibrated(h, w, accel, acs_fraction, seed).map(|(m, _)| m)
}

/// [`vd_poisson_disk`] that also returns the calibrated base radius `r₀`
/// (zero when no dart throwing was needed).
pub fn vd_poisson_disk_calibrated(
    h: usize,
    w: usize,
    accel: f64,
    acs_fraction: f64,
    seed: u64,
) -> Result<(SamplingMask, f64)> {
    check_params(h, w, accel, acs_fraction)?;
    if accel == 1.0 {
        return Ok((all_kept(h, w, MaskPattern::VDPoissonDisk, acs_fraction), 0.0));
    }
    let region = acs_region_for(h, w, acs_fraction, MaskPattern::VDPoissonDisk);
    let extra = point_budget(h, w, accel, &region)?;
    let mut order: Vec<usize> = (0..h * w)
        .filter(|&i| !region.contains(i / w, i % w))
        .collect();
    order.shuffle(&mut rng::stream(seed, purpose::MASK));

    let build = |points: &[usize]| {
        let mut keep = vec![false; h * w];
        for r in region.row0..region.row1 {
            for c in region.col0..region.col1 {
                keep[r * w + c] = true;
            }
        }
        for &i in points {
            keep[i] = true;
        }
        keep
    };
    if extra == 0 {
        let m = SamplingMask::new(h, w, build(&[]), accel, acs_fraction, MaskPattern::VDPoissonDisk)?;
        return Ok((m, 0.0));
    }

    let n_acs = if region.is_empty() { 0 } else { region.cells() };
    let (mut lo, mut hi) = (0.5, (h.max(w)) as f64);
    let mut best: Option<(usize, Vec<usize>, f64)> = None;
    for _ in 0..MAX_CALIBRATION_ATTEMPTS {
        let r0 = 0.5 * (lo + hi);
        let points = dart_throw(h, w, &order, r0);
        let count = points.len();
        let gap = count.abs_diff(extra);
        if best.as_ref().is_none_or(|(g, _, _)| gap < *g) {
            best = Some((gap, points, r0));
        }
        if within_tolerance(h * w, count + n_acs, accel) && gap * 50 <= extra {
            break;
        }
        if count > extra {
            lo = r0;
        } else {
            hi = r0;
        }
        if hi - lo < 1e-6 {
            break;
        }
    }
    let (_, points, r0) = best.expect("at least one attempt");
    let kept = points.len() + n_acs;
    if !within_tolerance(h * w, kept, accel) {
        return Err(Error::Calibration {
            attempts: MAX_CALIBRATION_ATTEMPTS,
            achieved: (h * w) as f64 / kept.max(1) as f64,
            requested: accel,
        });
    }
    let m = SamplingMask::new(h, w, build(&points), accel, acs_fraction, MaskPattern::VDPoissonDisk)?;
    Ok((m, r0))
}

/// Dispatch on the pattern family.
pub fn generate(pattern: MaskPattern, h: usize, w: usize, accel: f64, acs_fraction: f64, seed: u64) -> Result<SamplingMask> {
    match pattern {
        MaskPattern::Uniform1D => uniform1d(h, w, accel, acs_fraction, seed),
        MaskPattern::Gaussian1D => gaussian1d(h, w, accel, acs_fraction, seed),
        MaskPattern::Gaussian2D => gaussian2d(h, w, accel, acs_fraction, seed),
        MaskPattern::VDPoissonDisk => vd_poisson_disk(h, w, accel, acs_fraction, seed),
        MaskPattern::Full => Ok(SamplingMask::full(h, w)),
    }
}
