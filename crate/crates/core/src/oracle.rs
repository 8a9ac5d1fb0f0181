//! Exhaustive integer-disparity stereo matcher and the post-processing built
//! on it: left-right consistency, background-preferring occlusion fill and
//! channel-warp colorization of anaglyphs.

use crate::error::{Error, Result};
use crate::imagebase::{DisparityMap, PlanarImage};
use crate::losses::{ssim_map, LossWeights};
use crate::sampling::{warp_from_left, warp_from_right};

/// Per-pixel matching cost for every integer disparity `0..=d_max`, laid
/// out as `costs[(d * height + y) * width + x]`.
#[derive(Debug, Clone)]
pub struct CostVolume {
    width: usize,
    height: usize,
    d_max: usize,
    costs: Vec<f64>,
    max_penalty: f64,
}

impl CostVolume {
    pub fn from_costs(
        width: usize,
        height: usize,
        d_max: usize,
        costs: Vec<f64>,
        max_penalty: f64,
    ) -> Result<Self> {
        let n = width * height * (d_max + 1);
        if costs.len() != n {
            return Err(Error::shape("cost volume", n, costs.len()));
        }
        if costs.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::InvalidArgument(
                "costs must be finite and >= 0".into(),
            ));
        }
        Ok(CostVolume {
            width,
            height,
            d_max,
            costs,
            max_penalty,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn d_max(&self) -> usize {
        self.d_max
    }

    /// Cost assigned to shifts that leave the frame.
    pub fn max_penalty(&self) -> f64 {
        self.max_penalty
    }

    #[inline]
    pub fn cost(&self, x: usize, y: usize, d: usize) -> f64 {
        self.costs[(d * self.height + y) * self.width + x]
    }
}

/// `cost(x, y, d)` is the channel-averaged `λ1 (1 - SSIM) / 2 + λ2 |ΔI|`
/// between the 3×3 window around `left(x, y)` and the one around
/// `right(x - d, y)`. Shifts with `x - d < 0` get `λ1 + λ2`, the largest
/// value the blend can take on unit-range images.
pub fn build_cost_volume(
    left: &PlanarImage,
    right: &PlanarImage,
    d_max: usize,
    w: &LossWeights,
) -> Result<CostVolume> {
    left.check_same_shape(right, "cost volume pair")?;
    if d_max == 0 {
        return Err(Error::InvalidArgument("d_max must be >= 1".into()));
    }
    let (wd, ht, ch) = (left.width(), left.height(), left.channels());
    let n = wd * ht;
    let penalty = w.lambda1 + w.lambda2;
    let mut costs = vec![penalty; n * (d_max + 1)];
    for d in 0..=d_max.min(wd - 1) {
        let mut shifted = right.clone();
        for c in 0..ch {
            let src = right.plane(c);
            let dst = shifted.plane_mut(c);
            for y in 0..ht {
                for x in 0..wd {
                    dst[y * wd + x] = src[y * wd + x.saturating_sub(d)];
                }
            }
        }
        let ssim = ssim_map(left, &shifted)?;
        let mut slice = vec![0.0; n];
        for c in 0..ch {
            let diff: Vec<f64> = left
                .plane(c)
                .iter()
                .zip(shifted.plane(c))
                .map(|(a, b)| (a - b).abs())
                .collect();
            let l1 = crate::losses::box3_mean(&diff, wd, ht);
            for (i, s) in ssim.values.plane(c).iter().enumerate() {
                slice[i] += w.lambda1 * (1.0 - s) * 0.5 + w.lambda2 * l1[i];
            }
        }
        let inv = 1.0 / ch as f64;
        let out = &mut costs[d * n..(d + 1) * n];
        for y in 0..ht {
            for x in d..wd {
                out[y * wd + x] = (slice[y * wd + x] * inv).max(0.0);
            }
        }
    }
    CostVolume::from_costs(wd, ht, d_max, costs, penalty)
}

/// Winner-take-all with ties broken toward the smaller disparity, then
/// parabolic sub-pixel refinement (offset capped at ±0.5) where both
/// neighbours exist.
pub fn wta_disparity(cv: &CostVolume) -> DisparityMap {
    let (w, h) = (cv.width, cv.height);
    let mut values = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut best = 0;
            let mut best_cost = cv.cost(x, y, 0);
            for d in 1..=cv.d_max {
                let c = cv.cost(x, y, d);
                if c < best_cost {
                    best = d;
                    best_cost = c;
                }
            }
            let mut refined = best as f64;
            if best > 0 && best < cv.d_max {
                let (cm, cp) = (cv.cost(x, y, best - 1), cv.cost(x, y, best + 1));
                let curvature = cm - 2.0 * best_cost + cp;
                if curvature > 0.0 {
                    refined += ((cm - cp) / (2.0 * curvature)).clamp(-0.5, 0.5);
                }
            }
            values[y * w + x] = refined.max(0.0);
        }
    }
    DisparityMap::new(w, h, values).expect("wta output is finite and non-negative")
}

/// Left-referenced WTA disparity for a pair.
pub fn match_left(
    left: &PlanarImage,
    right: &PlanarImage,
    d_max: usize,
    w: &LossWeights,
) -> Result<DisparityMap> {
    Ok(wta_disparity(&build_cost_volume(left, right, d_max, w)?))
}

/// Right-referenced WTA disparity (`right(x)` matches `left(x + d)`),
/// computed by mirroring.
pub fn match_right(
    left: &PlanarImage,
    right: &PlanarImage,
    d_max: usize,
    w: &LossWeights,
) -> Result<DisparityMap> {
    let cv = build_cost_volume(
        &right.mirror_horizontal(),
        &left.mirror_horizontal(),
        d_max,
        w,
    )?;
    Ok(wta_disparity(&cv).mirror_horizontal())
}

/// Per-pixel flags, row-major; `true` marks an occluded or inconsistent pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OcclusionMask {
    pub width: usize,
    pub height: usize,
    pub flags: Vec<bool>,
}

impl OcclusionMask {
    pub fn empty(width: usize, height: usize) -> Self {
        OcclusionMask {
            width,
            height,
            flags: vec![false; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.flags[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.flags.iter().filter(|f| **f).count()
    }

    fn mirror_horizontal(&self) -> Self {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                out.flags[y * self.width + self.width - 1 - x] = self.flags[y * self.width + x];
            }
        }
        out
    }
}

/// Flags left-view pixels whose disparity disagrees with the right map at
/// the matched location by more than `tau`, or whose match leaves the frame.
/// Invalid pixels are flagged too.
pub fn lr_consistency(
    d_left: &DisparityMap,
    d_right: &DisparityMap,
    tau: f64,
) -> Result<OcclusionMask> {
    d_left.check_same_size(d_right, "consistency check")?;
    let (w, h) = (d_left.width(), d_left.height());
    let mut mask = OcclusionMask::empty(w, h);
    for y in 0..h {
        for x in 0..w {
            let flagged = if !d_left.is_valid(x, y) {
                true
            } else {
                let target = x as f64 - d_left.get(x, y).round();
                if target < 0.0 || target > (w - 1) as f64 {
                    true
                } else {
                    let xr = target as usize;
                    !d_right.is_valid(xr, y) || (d_left.get(x, y) - d_right.get(xr, y)).abs() > tau
                }
            };
            mask.flags[y * w + x] = flagged;
        }
    }
    Ok(mask)
}

/// Right-view counterpart of [`lr_consistency`]: checks `d_right(x)` against
/// `d_left(x + round(d_right(x)))`.
pub fn rl_consistency(
    d_left: &DisparityMap,
    d_right: &DisparityMap,
    tau: f64,
) -> Result<OcclusionMask> {
    Ok(lr_consistency(
        &d_right.mirror_horizontal(),
        &d_left.mirror_horizontal(),
        tau,
    )?
    .mirror_horizontal())
}

/// Replaces flagged (and invalid) pixels with the smaller of the nearest
/// usable disparities to the left and right on the same row. Rows without a
/// usable pixel take the global median (0 if the whole map is unusable).
pub fn fill_occlusions(d: &DisparityMap, mask: &OcclusionMask) -> Result<DisparityMap> {
    if mask.width != d.width() || mask.height != d.height() {
        return Err(Error::shape(
            "occlusion mask",
            format!("{}x{}", d.width(), d.height()),
            format!("{}x{}", mask.width, mask.height),
        ));
    }
    let (w, h) = (d.width(), d.height());
    let usable = |x: usize, y: usize| d.is_valid(x, y) && !mask.get(x, y);
    let mut values = d.values().to_vec();
    let global = {
        let usable_vals: Vec<bool> = (0..w * h).map(|i| usable(i % w, i / w)).collect();
        DisparityMap::with_validity(w, h, d.values().to_vec(), usable_vals)?
            .valid_median()
            .unwrap_or(0.0)
    };
    for y in 0..h {
        // Nearest usable value to the left of each pixel, then to the right.
        let mut from_left = vec![None; w];
        let mut last = None;
        for (x, slot) in from_left.iter_mut().enumerate() {
            if usable(x, y) {
                last = Some(d.get(x, y));
            }
            *slot = last;
        }
        let mut next = None;
        for x in (0..w).rev() {
            if usable(x, y) {
                next = Some(d.get(x, y));
                continue;
            }
            values[y * w + x] = match (from_left[x], next) {
                (Some(a), Some(b)) => a.min(b),
                (Some(a), None) | (None, Some(a)) => a,
                (None, None) => global,
            };
        }
    }
    DisparityMap::new(w, h, values)
}

/// Default left-right consistency tolerance, pixels.
pub const DEFAULT_LR_TAU: f64 = 1.0;

/// Rebuilds the unobserved channels of an anaglyph: left green/blue are the
/// mixture's green/blue warped into the left view with `d_left`, right red
/// is the mixture's red warped into the right view with `d_right`.
/// Inconsistent pixels are warped with occlusion-filled disparities.
/// Observed channels are copied verbatim.
pub fn colorize_anaglyph(
    mixture: &PlanarImage,
    d_left: &DisparityMap,
    d_right: &DisparityMap,
) -> Result<(PlanarImage, PlanarImage)> {
    if mixture.channels() != 3 {
        return Err(Error::shape("anaglyph channels", 3, mixture.channels()));
    }
    mixture.check_map(d_left, "left disparity")?;
    mixture.check_map(d_right, "right disparity")?;
    let d_left_f = fill_occlusions(d_left, &lr_consistency(d_left, d_right, DEFAULT_LR_TAU)?)?;
    let d_right_f = fill_occlusions(d_right, &rl_consistency(d_left, d_right, DEFAULT_LR_TAU)?)?;

    let left_from_right = warp_from_right(mixture, &d_left_f)?.warped;
    let right_from_left = warp_from_left(mixture, &d_right_f)?.warped;

    let mut left = mixture.clone();
    left.plane_mut(1).copy_from_slice(left_from_right.plane(1));
    left.plane_mut(2).copy_from_slice(left_from_right.plane(2));
    let mut right = mixture.clone();
    right.plane_mut(0).copy_from_slice(right_from_left.plane(0));
    Ok((left, right))
}
