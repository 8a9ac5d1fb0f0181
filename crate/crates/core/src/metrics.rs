//! Image restoration and disparity/depth accuracy measures.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagebase::{DisparityMap, PlanarImage};

/// Reported PSNR for a zero-error comparison, and the upper bound of every
/// PSNR value.
pub const PSNR_CAP: f64 = 99.0;

/// Disparities at or below this are treated as infinitely far.
pub const MIN_DISPARITY: f64 = 1e-3;

pub const DEFAULT_MIN_DEPTH: f64 = 1e-3;
pub const DEFAULT_MAX_DEPTH: f64 = 80.0;

/// Depth maps share the masked scalar-map representation of disparities.
pub type DepthMap = DisparityMap;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PsnrOptions {
    /// Pixels dropped on every side.
    pub crop: usize,
    /// Channels to compare; all when `None`.
    pub channels: Option<Vec<usize>>,
}

/// Peak-1 PSNR over all samples.
pub fn psnr(a: &PlanarImage, b: &PlanarImage) -> Result<f64> {
    psnr_with(a, b, &PsnrOptions::default())
}

pub fn psnr_with(a: &PlanarImage, b: &PlanarImage, opts: &PsnrOptions) -> Result<f64> {
    a.check_same_shape(b, "psnr")?;
    let (w, h) = (a.width(), a.height());
    if 2 * opts.crop >= w || 2 * opts.crop >= h {
        return Err(Error::InvalidArgument(format!(
            "crop {} leaves nothing of a {w}x{h} image",
            opts.crop
        )));
    }
    let all: Vec<usize> = (0..a.channels()).collect();
    let channels = opts.channels.as_deref().unwrap_or(&all);
    if channels.is_empty() || channels.iter().any(|c| *c >= a.channels()) {
        return Err(Error::InvalidArgument(format!(
            "bad channel selection {channels:?}"
        )));
    }
    let mut se = 0.0;
    let mut n = 0usize;
    for &c in channels {
        let (pa, pb) = (a.plane(c), b.plane(c));
        for y in opts.crop..h - opts.crop {
            for x in opts.crop..w - opts.crop {
                let d = pa[y * w + x] - pb[y * w + x];
                se += d * d;
                n += 1;
            }
        }
    }
    let mse = se / n as f64;
    Ok(if mse == 0.0 {
        PSNR_CAP
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
    })
}

/// Fraction of valid-GT pixels with `|d − gt| > tau`. A prediction that is
/// itself invalid at such a pixel counts as bad.
pub fn bad_pixel_ratio(d: &DisparityMap, gt: &DisparityMap, tau: f64) -> Result<f64> {
    bad_pixel_ratio_where(d, gt, tau, |_, _| true)
}

/// [`bad_pixel_ratio`] restricted to pixels where `include(x, y)` holds.
pub fn bad_pixel_ratio_where(
    d: &DisparityMap,
    gt: &DisparityMap,
    tau: f64,
    include: impl Fn(usize, usize) -> bool,
) -> Result<f64> {
    count_bad(d, gt, include, |err, _| err > tau)
}

fn count_bad(
    d: &DisparityMap,
    gt: &DisparityMap,
    include: impl Fn(usize, usize) -> bool,
    is_bad: impl Fn(f64, f64) -> bool,
) -> Result<f64> {
    d.check_same_size(gt, "bad-pixel ratio")?;
    let (mut bad, mut total) = (0usize, 0usize);
    for y in 0..gt.height() {
        for x in 0..gt.width() {
            if !gt.is_valid(x, y) || !include(x, y) {
                continue;
            }
            total += 1;
            let g = gt.get(x, y);
            if !d.is_valid(x, y) || is_bad((d.get(x, y) - g).abs(), g) {
                bad += 1;
            }
        }
    }
    if total == 0 {
        return Err(Error::EmptySet("no valid ground-truth pixels".into()));
    }
    Ok(bad as f64 / total as f64)
}

/// KITTI-style D1-all. The plain rule is a 3 px threshold; the official rule
/// additionally requires the error to exceed 5% of the true disparity.
pub fn d1_all(d: &DisparityMap, gt: &DisparityMap, official: bool) -> Result<f64> {
    count_bad(
        d,
        gt,
        |_, _| true,
        |err, g| err > 3.0 && (!official || err > 0.05 * g),
    )
}

/// `depth = focal · baseline / d`; disparities at or below
/// [`MIN_DISPARITY`] and invalid inputs become invalid depths.
pub fn disparity_to_depth(d: &DisparityMap, focal: f64, baseline: f64) -> Result<DepthMap> {
    if !(focal > 0.0 && focal.is_finite() && baseline > 0.0 && baseline.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "calibration must be positive, got focal {focal}, baseline {baseline}"
        )));
    }
    let fb = focal * baseline;
    let mut values = Vec::with_capacity(d.len());
    let mut valid = Vec::with_capacity(d.len());
    for (v, ok) in d.values().iter().zip(d.validity()) {
        let keep = *ok && *v > MIN_DISPARITY;
        values.push(if keep { fb / v } else { 0.0 });
        valid.push(keep);
    }
    DisparityMap::with_validity(d.width(), d.height(), values, valid)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthMetrics {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub rmse_log: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
}

/// Error and accuracy statistics over mutually valid pixels, both depths
/// clamped to `[min_depth, max_depth]`.
pub fn eigen_depth_metrics(
    pred: &DepthMap,
    gt: &DepthMap,
    min_depth: f64,
    max_depth: f64,
) -> Result<DepthMetrics> {
    pred.check_same_size(gt, "depth metrics")?;
    if !(min_depth > 0.0 && min_depth < max_depth && max_depth.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "need 0 < min_depth < max_depth, got {min_depth}, {max_depth}"
        )));
    }
    let mut acc = [0.0f64; 7];
    let mut n = 0usize;
    for i in 0..gt.len() {
        if !(pred.validity()[i] && gt.validity()[i]) {
            continue;
        }
        let p = pred.values()[i].clamp(min_depth, max_depth);
        let g = gt.values()[i].clamp(min_depth, max_depth);
        let diff = p - g;
        let ratio = (p / g).max(g / p);
        acc[0] += diff.abs() / g;
        acc[1] += diff * diff / g;
        acc[2] += diff * diff;
        acc[3] += (p.ln() - g.ln()).powi(2);
        for (k, slot) in acc[4..].iter_mut().enumerate() {
            if ratio < 1.25f64.powi(k as i32 + 1) {
                *slot += 1.0;
            }
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptySet("no mutually valid depth pixels".into()));
    }
    let n = n as f64;
    Ok(DepthMetrics {
        abs_rel: acc[0] / n,
        sq_rel: acc[1] / n,
        rmse: (acc[2] / n).sqrt(),
        rmse_log: (acc[3] / n).sqrt(),
        delta1: acc[4] / n,
        delta2: acc[5] / n,
        delta3: acc[6] / n,
    })
}
