//! Seeded synthetic stereo scenes with exact ground truth.
//!
//! Scenes are cut from textures defined in left-view coordinates, so the
//! left view samples the textures directly and the right view samples them
//! shifted by each layer's disparity. Disparities are integers, which makes
//! the geometry (and hence occlusion bands) exact.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::imagebase::{DisparityMap, PlanarImage, ValueRange};
use crate::mixture::MixtureOperator;
use crate::oracle::OcclusionMask;

/// A rectified pair with ground truth for both views.
#[derive(Debug, Clone)]
pub struct StereoScene {
    pub left: PlanarImage,
    pub right: PlanarImage,
    pub d_left: DisparityMap,
    pub d_right: DisparityMap,
    /// Left pixels with no correspondence in the right view.
    pub occluded_left: OcclusionMask,
    /// Right pixels with no correspondence in the left view.
    pub occluded_right: OcclusionMask,
}

impl StereoScene {
    pub fn compose(&self, op: MixtureOperator) -> Result<PlanarImage> {
        crate::mixture::compose(op, &self.left, &self.right)
    }
}

fn box_blur_rows(src: &[f64], w: usize, h: usize, r: usize) -> Vec<f64> {
    let mut out = vec![0.0; w * h];
    let n = (2 * r + 1) as f64;
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for k in 0..=2 * r {
                let xx = (x + k).saturating_sub(r).min(w - 1);
                s += src[y * w + xx];
            }
            out[y * w + x] = s / n;
        }
    }
    out
}

fn transpose(src: &[f64], w: usize, h: usize) -> Vec<f64> {
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            out[x * h + y] = src[y * w + x];
        }
    }
    out
}

fn blur(src: &[f64], w: usize, h: usize, r: usize) -> Vec<f64> {
    if r == 0 {
        return src.to_vec();
    }
    let mut buf = src.to_vec();
    for _ in 0..2 {
        buf = box_blur_rows(&buf, w, h, r);
        buf = transpose(&box_blur_rows(&transpose(&buf, w, h), h, w, r), h, w);
    }
    buf
}

fn standardize(v: &mut [f64]) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let inv = if var > 0.0 { 1.0 / var.sqrt() } else { 0.0 };
    for x in v.iter_mut() {
        *x = (*x - mean) * inv;
    }
}

/// Multi-octave blurred noise, zero mean and unit variance.
fn noise_field(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Vec<f64> {
    let mut acc = vec![0.0; w * h];
    for (radius, amp) in [(1usize, 0.6), (3, 1.0), (7, 0.8)] {
        let white: Vec<f64> = (0..w * h).map(|_| rng.gen::<f64>() - 0.5).collect();
        let mut f = blur(&white, w, h, radius);
        standardize(&mut f);
        for (a, v) in acc.iter_mut().zip(f) {
            *a += amp * v;
        }
    }
    standardize(&mut acc);
    acc
}

/// Color texture with strongly correlated channels: a shared luminance
/// pattern with per-channel gain and offset, a weak per-channel detail
/// layer and a slow color drift.
pub fn color_texture(seed: u64, width: usize, height: usize) -> PlanarImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (width, height);
    let lum = noise_field(&mut rng, w, h);
    let mut data = Vec::with_capacity(3 * w * h);
    for _ in 0..3 {
        let gain = rng.gen_range(0.12..0.18);
        let offset = rng.gen_range(0.4..0.6);
        let detail = noise_field(&mut rng, w, h);
        let white: Vec<f64> = (0..w * h).map(|_| rng.gen::<f64>() - 0.5).collect();
        let mut drift = blur(&white, w, h, (w.min(h) / 6).max(1));
        standardize(&mut drift);
        for i in 0..w * h {
            let v = offset + gain * (lum[i] + 0.25 * detail[i]) + 0.05 * drift[i];
            data.push(v.clamp(0.0, 1.0));
        }
    }
    PlanarImage::new(w, h, 3, data).expect("texture values are clamped to the unit range")
}

fn crop_columns(src: &PlanarImage, x0: usize, width: usize) -> PlanarImage {
    let (sw, h, ch) = (src.width(), src.height(), src.channels());
    let mut data = Vec::with_capacity(ch * width * h);
    for c in 0..ch {
        let p = src.plane(c);
        for y in 0..h {
            data.extend_from_slice(&p[y * sw + x0..y * sw + x0 + width]);
        }
    }
    PlanarImage::with_range(width, h, ch, data, ValueRange::UNIT).expect("crop of a unit image")
}

/// Fronto-parallel scene: `right(x) = left(x + disparity)` everywhere.
/// The left view's first `disparity` columns and the right view's last
/// `disparity` columns have no correspondence.
pub fn constant_shift_scene(
    width: usize,
    height: usize,
    disparity: usize,
    seed: u64,
) -> Result<StereoScene> {
    if disparity >= width {
        return Err(Error::InvalidArgument(format!(
            "disparity {disparity} does not fit in width {width}"
        )));
    }
    let world = color_texture(seed, width + disparity, height);
    let left = crop_columns(&world, 0, width);
    let right = crop_columns(&world, disparity, width);
    let d = disparity as f64;
    let mut occluded_left = OcclusionMask::empty(width, height);
    let mut occluded_right = OcclusionMask::empty(width, height);
    for y in 0..height {
        for x in 0..width {
            occluded_left.flags[y * width + x] = x < disparity;
            occluded_right.flags[y * width + x] = x + disparity >= width;
        }
    }
    Ok(StereoScene {
        left,
        right,
        d_left: DisparityMap::constant(width, height, d),
        d_right: DisparityMap::constant(width, height, d),
        occluded_left,
        occluded_right,
    })
}

/// Axis-aligned foreground rectangle, in left-view coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub x0: usize,
    pub x1: usize,
    pub y0: usize,
    pub y1: usize,
}

impl Rect {
    fn contains(&self, x: isize, y: usize) -> bool {
        x >= self.x0 as isize && x < self.x1 as isize && y >= self.y0 && y < self.y1
    }
}

/// Background plane at `d_bg` with a foreground rectangle at `d_fg > d_bg`.
pub fn two_plane_scene(
    width: usize,
    height: usize,
    d_bg: usize,
    d_fg: usize,
    rect: Rect,
    seed: u64,
) -> Result<StereoScene> {
    if d_fg <= d_bg || d_fg >= width {
        return Err(Error::InvalidArgument(format!(
            "need d_bg < d_fg < width, got {d_bg}, {d_fg}, {width}"
        )));
    }
    if rect.x0 >= rect.x1 || rect.y0 >= rect.y1 || rect.x1 > width || rect.y1 > height {
        return Err(Error::InvalidArgument(format!(
            "rectangle {rect:?} is not inside the frame"
        )));
    }
    let bg = color_texture(seed, width + d_fg, height);
    let fg = color_texture(seed ^ 0x9e37_79b9_7f4a_7c15, width + d_fg, height);
    let (w, h) = (width, height);
    let mut left = PlanarImage::filled(w, h, 3, 0.0);
    let mut right = PlanarImage::filled(w, h, 3, 0.0);
    let mut dl = vec![0.0; w * h];
    let mut dr = vec![0.0; w * h];
    let mut occluded_left = OcclusionMask::empty(w, h);
    let mut occluded_right = OcclusionMask::empty(w, h);
    let bw = bg.width();
    for y in 0..h {
        for x in 0..w {
            let in_fg = rect.contains(x as isize, y);
            for c in 0..3 {
                let v = if in_fg {
                    fg.plane(c)[y * bw + x]
                } else {
                    bg.plane(c)[y * bw + x]
                };
                left.plane_mut(c)[y * w + x] = v;
            }
            dl[y * w + x] = if in_fg { d_fg } else { d_bg } as f64;
            // Where this left pixel lands in the right view and whether the
            // right view shows it there.
            let occl = if in_fg {
                x < d_fg
            } else {
                x < d_bg || rect.contains((x - d_bg + d_fg) as isize, y)
            };
            occluded_left.flags[y * w + x] = occl;

            let fg_x = x + d_fg;
            let r_fg = rect.contains(fg_x as isize, y);
            for c in 0..3 {
                let v = if r_fg {
                    fg.plane(c)[y * bw + fg_x]
                } else {
                    bg.plane(c)[y * bw + x + d_bg]
                };
                right.plane_mut(c)[y * w + x] = v;
            }
            dr[y * w + x] = if r_fg { d_fg } else { d_bg } as f64;
            occluded_right.flags[y * w + x] = if r_fg {
                fg_x >= w
            } else {
                x + d_bg >= w || rect.contains((x + d_bg) as isize, y)
            };
        }
    }
    Ok(StereoScene {
        left,
        right,
        d_left: DisparityMap::new(w, h, dl)?,
        d_right: DisparityMap::new(w, h, dr)?,
        occluded_left,
        occluded_right,
    })
}

/// Randomized two-plane scene with disparities in `2..=8`.
pub fn random_two_plane_scene(width: usize, height: usize, seed: u64) -> Result<StereoScene> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x2545_f491_4f6c_dd1d));
    let d_bg = rng.gen_range(2..=5);
    let d_fg = rng.gen_range(d_bg + 2..=8);
    let rw = rng.gen_range(width / 4..=width / 2);
    let rh = rng.gen_range(height / 4..=height / 2);
    let x0 = rng.gen_range(width / 8..width - rw - width / 8);
    let y0 = rng.gen_range(height / 8..height - rh - height / 8);
    two_plane_scene(
        width,
        height,
        d_bg,
        d_fg,
        Rect {
            x0,
            x1: x0 + rw,
            y0,
            y1: y0 + rh,
        },
        seed,
    )
}
