//! Horizontal linear-interpolation warps between the two views, with the
//! analytic derivatives the solver needs.
//!
//! Conventions: the left view is reconstructed by sampling the right view at
//! `x - d_left(x, y)`, the right view by sampling the left view at
//! `x + d_right(x, y)`. Source coordinates are clamped to `[0, W - 1]` and
//! the disparity derivative is zero wherever the clamp is active.

use crate::error::{Error, Result};
use crate::imagebase::{DisparityMap, PlanarImage};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WarpDirection {
    /// Sample the source at `x - d` (reconstructs the left view).
    FromRight,
    /// Sample the source at `x + d` (reconstructs the right view).
    FromLeft,
}

/// Interpolation tap for one output pixel: the sample is
/// `(1 - frac) * src[floor] + frac * src[min(floor + 1, W - 1)]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceTap {
    pub floor: usize,
    pub frac: f64,
}

#[derive(Debug, Clone)]
pub struct WarpResult {
    pub warped: PlanarImage,
    /// ∂warped/∂d per pixel and channel.
    pub d_value_d_disparity: PlanarImage,
    /// One tap per pixel, row-major.
    pub source_weights: Vec<SourceTap>,
    pub direction: WarpDirection,
}

#[inline]
fn tap(s: f64, width: usize) -> (SourceTap, bool) {
    let last = (width - 1) as f64;
    if s < 0.0 {
        (
            SourceTap {
                floor: 0,
                frac: 0.0,
            },
            false,
        )
    } else if s >= last {
        // At exactly W-1 there is no right neighbour for the derivative.
        (
            SourceTap {
                floor: width - 1,
                frac: 0.0,
            },
            false,
        )
    } else {
        let floor = s.floor() as usize;
        (
            SourceTap {
                floor,
                frac: s - floor as f64,
            },
            true,
        )
    }
}

fn warp(
    source: &PlanarImage,
    disparity: &DisparityMap,
    direction: WarpDirection,
) -> Result<WarpResult> {
    source.check_map(disparity, "warp disparity")?;
    if let Some(v) = disparity
        .values()
        .iter()
        .find(|v| !v.is_finite() || **v < 0.0)
    {
        return Err(Error::InvalidArgument(format!(
            "negative or non-finite disparity {v}"
        )));
    }
    let (w, h) = (source.width(), source.height());
    let sign = match direction {
        WarpDirection::FromRight => -1.0,
        WarpDirection::FromLeft => 1.0,
    };
    let mut taps = Vec::with_capacity(w * h);
    let mut interior = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let s = x as f64 + sign * disparity.get(x, y);
            let (t, inside) = tap(s, w);
            taps.push(t);
            interior.push(inside);
        }
    }
    let mut warped = source.zeros_like();
    let mut deriv = source.zeros_like();
    for c in 0..source.channels() {
        let src = source.plane(c);
        let out = warped.plane_mut(c);
        for (i, t) in taps.iter().enumerate() {
            let row = (i / w) * w;
            let a = src[row + t.floor];
            let b = src[row + (t.floor + 1).min(w - 1)];
            out[i] = (1.0 - t.frac) * a + t.frac * b;
        }
        let dout = deriv.plane_mut(c);
        for (i, t) in taps.iter().enumerate() {
            if interior[i] {
                let row = (i / w) * w;
                dout[i] = sign * (src[row + t.floor + 1] - src[row + t.floor]);
            }
        }
    }
    // Convex combinations of in-range samples; the clamp only absorbs rounding.
    let warped = warped.with_range_clamped(source.range());
    Ok(WarpResult {
        warped,
        d_value_d_disparity: deriv,
        source_weights: taps,
        direction,
    })
}

/// Reconstructs the left view: `warped(x, y) = right(x - d_left(x, y), y)`.
pub fn warp_from_right(right: &PlanarImage, d_left: &DisparityMap) -> Result<WarpResult> {
    warp(right, d_left, WarpDirection::FromRight)
}

/// Reconstructs the right view: `warped(x, y) = left(x + d_right(x, y), y)`.
pub fn warp_from_left(left: &PlanarImage, d_right: &DisparityMap) -> Result<WarpResult> {
    warp(left, d_right, WarpDirection::FromLeft)
}

/// Reverse-mode pass: returns (∂L/∂source, ∂L/∂disparity) given ∂L/∂warped.
/// The disparity gradient is a single-channel field.
pub fn warp_adjoint(
    result: &WarpResult,
    upstream: &PlanarImage,
) -> Result<(PlanarImage, PlanarImage)> {
    result
        .warped
        .check_same_shape(upstream, "warp upstream gradient")?;
    let (w, h) = (upstream.width(), upstream.height());
    let mut grad_src = upstream.zeros_like();
    let mut grad_d = vec![0.0; w * h];
    for c in 0..upstream.channels() {
        let up = upstream.plane(c);
        let dv = result.d_value_d_disparity.plane(c);
        let gs = grad_src.plane_mut(c);
        for (i, t) in result.source_weights.iter().enumerate() {
            let row = (i / w) * w;
            let u = up[i];
            gs[row + t.floor] += (1.0 - t.frac) * u;
            gs[row + (t.floor + 1).min(w - 1)] += t.frac * u;
            grad_d[i] += u * dv[i];
        }
    }
    Ok((grad_src, PlanarImage::field(w, h, 1, grad_d)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(w: usize, h: usize, c: usize, seed: u64) -> PlanarImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PlanarImage::new(w, h, c, (0..w * h * c).map(|_| rng.gen()).collect()).unwrap()
    }

    fn random_disparity(w: usize, h: usize, max: f64, seed: u64) -> DisparityMap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DisparityMap::new(w, h, (0..w * h).map(|_| rng.gen_range(0.05..max)).collect()).unwrap()
    }

    fn ramp(w: usize, h: usize) -> PlanarImage {
        let data = (0..h)
            .flat_map(|_| (0..w).map(move |x| x as f64 / w as f64))
            .collect();
        PlanarImage::new(w, h, 1, data).unwrap()
    }

    #[test]
    fn zero_disparity_is_identity() {
        let img = random_image(7, 4, 3, 1);
        let zero = DisparityMap::constant(7, 4, 0.0);
        assert_eq!(warp_from_right(&img, &zero).unwrap().warped, img);
        assert_eq!(warp_from_left(&img, &zero).unwrap().warped, img);
    }

    #[test]
    fn ramp_shift_from_right() {
        let (w, h) = (10, 2);
        let r = warp_from_right(&ramp(w, h), &DisparityMap::constant(w, h, 2.0)).unwrap();
        for x in 0..w {
            let expected = if x >= 2 {
                (x - 2) as f64 / w as f64
            } else {
                0.0
            };
            assert!((r.warped.get(x, 1, 0) - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn ramp_shift_from_left_clamps_at_right_border() {
        let (w, h) = (10, 2);
        let r = warp_from_left(&ramp(w, h), &DisparityMap::constant(w, h, 2.0)).unwrap();
        for x in 0..w {
            let expected = (x + 2).min(w - 1) as f64 / w as f64;
            assert!((r.warped.get(x, 0, 0) - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn integer_shift_matches_index_shift() {
        let img = random_image(12, 5, 3, 2);
        for k in 1..4usize {
            let r = warp_from_right(&img, &DisparityMap::constant(12, 5, k as f64)).unwrap();
            for c in 0..3 {
                for y in 0..5 {
                    for x in k..12 {
                        assert_eq!(r.warped.get(x, y, c), img.get(x - k, y, c));
                    }
                }
            }
        }
    }

    #[test]
    fn left_warp_mirrors_right_warp() {
        let img = random_image(11, 4, 2, 3);
        let d = random_disparity(11, 4, 4.0, 4);
        let a = warp_from_left(&img, &d).unwrap().warped;
        let b = warp_from_right(&img.mirror_horizontal(), &d.mirror_horizontal())
            .unwrap()
            .warped
            .mirror_horizontal();
        for (p, q) in a.data().iter().zip(b.data()) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let img = random_image(5, 5, 1, 0);
        assert!(warp_from_right(&img, &DisparityMap::constant(4, 5, 0.0)).is_err());
        let mut d = DisparityMap::constant(5, 5, 0.0);
        d.values_mut()[3] = -1.0;
        assert!(warp_from_right(&img, &d).is_err());
    }

    #[test]
    fn warped_samples_stay_between_their_sources() {
        let img = random_image(9, 6, 3, 5);
        let d = random_disparity(9, 6, 5.0, 6);
        let r = warp_from_right(&img, &d).unwrap();
        for c in 0..3 {
            for y in 0..6 {
                for x in 0..9 {
                    let t = r.source_weights[y * 9 + x];
                    let a = img.get(t.floor, y, c);
                    let b = img.get((t.floor + 1).min(8), y, c);
                    let v = r.warped.get(x, y, c);
                    assert!(v >= a.min(b) - 1e-15 && v <= a.max(b) + 1e-15);
                }
            }
        }
    }

    #[test]
    fn adjoint_of_zero_and_identity() {
        let img = random_image(6, 3, 2, 7);
        let r = warp_from_right(&img, &DisparityMap::constant(6, 3, 0.0)).unwrap();
        let (gs, gd) = warp_adjoint(&r, &img.zeros_like()).unwrap();
        assert!(gs.data().iter().chain(gd.data()).all(|v| *v == 0.0));
        let ones = PlanarImage::filled(6, 3, 2, 1.0);
        let (gs, _) = warp_adjoint(&r, &ones).unwrap();
        assert!(gs.data().iter().all(|v| *v == 1.0));
        assert!(warp_adjoint(&r, &PlanarImage::filled(5, 3, 2, 1.0)).is_err());
    }

    #[test]
    fn dot_product_test_for_fixed_disparity() {
        for dir in [WarpDirection::FromRight, WarpDirection::FromLeft] {
            let v = random_image(13, 7, 3, 8);
            let u = random_image(13, 7, 3, 9);
            let d = random_disparity(13, 7, 6.0, 10);
            let r = warp(&v, &d, dir).unwrap();
            let (adj, _) = warp_adjoint(&r, &u).unwrap();
            let lhs: f64 = r
                .warped
                .data()
                .iter()
                .zip(u.data())
                .map(|(a, b)| a * b)
                .sum();
            let rhs: f64 = v.data().iter().zip(adj.data()).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-6, "{dir:?}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn disparity_derivative_matches_central_differences() {
        let eps = 1e-4;
        for dir in [WarpDirection::FromRight, WarpDirection::FromLeft] {
            let img = random_image(16, 5, 3, 11);
            let d = random_disparity(16, 5, 5.0, 12);
            let r = warp(&img, &d, dir).unwrap();
            let mut checked = 0;
            for i in 0..d.len() {
                let v = d.values()[i];
                // Skip kinks (integer crossings) and clamped taps.
                if (v - v.round()).abs() < 2.0 * eps {
                    continue;
                }
                let (mut dp, mut dm) = (d.clone(), d.clone());
                dp.values_mut()[i] = v + eps;
                dm.values_mut()[i] = v - eps;
                let wp = warp(&img, &dp, dir).unwrap().warped;
                let wm = warp(&img, &dm, dir).unwrap().warped;
                for c in 0..3 {
                    let j = c * d.len() + i;
                    let numeric = (wp.data()[j] - wm.data()[j]) / (2.0 * eps);
                    let analytic = r.d_value_d_disparity.data()[j];
                    let scale = numeric.abs().max(analytic.abs()).max(1e-9);
                    assert!(
                        (numeric - analytic).abs() / scale < 1e-3
                            || (numeric - analytic).abs() < 1e-9,
                        "{dir:?} pixel {i} channel {c}: {analytic} vs {numeric}"
                    );
                }
                checked += 1;
            }
            assert!(checked > d.len() / 2);
        }
    }
}
