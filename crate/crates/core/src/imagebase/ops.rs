use super::{DisparityMap, PlanarImage, ValueRange};
use crate::error::{Error, Result};

/// Horizontal forward difference `img(x+1, y) - img(x, y)`, zero in the last
/// column.
pub fn grad_u(img: &PlanarImage) -> PlanarImage {
    let (w, h) = (img.width(), img.height());
    let mut out = img.zeros_like();
    for c in 0..img.channels() {
        let src = img.plane(c);
        let dst = out.plane_mut(c);
        for y in 0..h {
            let row = y * w;
            for x in 0..w.saturating_sub(1) {
                dst[row + x] = src[row + x + 1] - src[row + x];
            }
        }
    }
    out
}

/// Vertical forward difference `img(x, y+1) - img(x, y)`, zero in the last row.
pub fn grad_v(img: &PlanarImage) -> PlanarImage {
    let (w, h) = (img.width(), img.height());
    let mut out = img.zeros_like();
    for c in 0..img.channels() {
        let src = img.plane(c);
        let dst = out.plane_mut(c);
        for y in 0..h.saturating_sub(1) {
            for x in 0..w {
                dst[y * w + x] = src[(y + 1) * w + x] - src[y * w + x];
            }
        }
    }
    out
}

/// Transpose of [`grad_u`].
pub fn grad_u_adjoint(g: &PlanarImage) -> PlanarImage {
    let w = g.width();
    let mut out = g.zeros_like();
    for c in 0..g.channels() {
        let src = g.plane(c);
        let dst = out.plane_mut(c);
        for y in 0..g.height() {
            let row = y * w;
            for x in 0..w.saturating_sub(1) {
                let v = src[row + x];
                dst[row + x + 1] += v;
                dst[row + x] -= v;
            }
        }
    }
    out
}

/// Transpose of [`grad_v`].
pub fn grad_v_adjoint(g: &PlanarImage) -> PlanarImage {
    let w = g.width();
    let mut out = g.zeros_like();
    for c in 0..g.channels() {
        let src = g.plane(c);
        let dst = out.plane_mut(c);
        for y in 0..g.height().saturating_sub(1) {
            for x in 0..w {
                let v = src[y * w + x];
                dst[(y + 1) * w + x] += v;
                dst[y * w + x] -= v;
            }
        }
    }
    out
}

fn box_down(src: &[f64], w: usize, h: usize, dst: &mut [f64]) {
    let (dw, dh) = (w / 2, h / 2);
    for y in 0..dh {
        for x in 0..dw {
            let a = src[2 * y * w + 2 * x];
            let b = src[2 * y * w + 2 * x + 1];
            let c = src[(2 * y + 1) * w + 2 * x];
            let d = src[(2 * y + 1) * w + 2 * x + 1];
            dst[y * dw + x] = 0.25 * (a + b + c + d);
        }
    }
}

/// Halves both dimensions (floor) by 2×2 box averaging.
pub fn downsample2(img: &PlanarImage) -> Result<PlanarImage> {
    let (w, h) = (img.width(), img.height());
    if w < 2 || h < 2 {
        return Err(Error::TooSmall(format!("cannot downsample {w}x{h}")));
    }
    let (dw, dh) = (w / 2, h / 2);
    let mut data = vec![0.0; dw * dh * img.channels()];
    for c in 0..img.channels() {
        box_down(
            img.plane(c),
            w,
            h,
            &mut data[c * dw * dh..(c + 1) * dw * dh],
        );
    }
    PlanarImage::with_range(dw, dh, img.channels(), data, img.range())
}

fn check_pyramid(w: usize, h: usize, levels: usize) -> Result<()> {
    if levels == 0 {
        return Err(Error::InvalidArgument(
            "pyramid needs at least one level".into(),
        ));
    }
    let need = 1usize
        .checked_shl(levels as u32)
        .ok_or_else(|| Error::InvalidArgument(format!("{levels} pyramid levels")))?;
    if w < need || h < need {
        return Err(Error::TooSmall(format!(
            "{w}x{h} image cannot hold {levels} pyramid levels (needs {need}x{need})"
        )));
    }
    Ok(())
}

/// Pyramid with the input at index 0 and the coarsest level last.
pub fn build_pyramid(img: &PlanarImage, levels: usize) -> Result<Vec<PlanarImage>> {
    check_pyramid(img.width(), img.height(), levels)?;
    let mut out = vec![img.clone()];
    for _ in 1..levels {
        let next = downsample2(out.last().expect("non-empty"))?;
        out.push(next);
    }
    Ok(out)
}

/// Box-averages valid parents and halves the disparity values.
pub fn downsample2_disparity(d: &DisparityMap) -> Result<DisparityMap> {
    let (w, h) = (d.width(), d.height());
    if w < 2 || h < 2 {
        return Err(Error::TooSmall(format!("cannot downsample {w}x{h}")));
    }
    let (dw, dh) = (w / 2, h / 2);
    let mut values = vec![0.0; dw * dh];
    let mut valid = vec![false; dw * dh];
    for y in 0..dh {
        for x in 0..dw {
            let mut sum = 0.0;
            let mut n = 0usize;
            for (px, py) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                let (sx, sy) = (2 * x + px, 2 * y + py);
                if d.is_valid(sx, sy) {
                    sum += d.get(sx, sy);
                    n += 1;
                }
            }
            if n > 0 {
                values[y * dw + x] = 0.5 * sum / n as f64;
                valid[y * dw + x] = true;
            }
        }
    }
    DisparityMap::with_validity(dw, dh, values, valid)
}

pub fn build_disparity_pyramid(d: &DisparityMap, levels: usize) -> Result<Vec<DisparityMap>> {
    check_pyramid(d.width(), d.height(), levels)?;
    let mut out = vec![d.clone()];
    for _ in 1..levels {
        let next = downsample2_disparity(out.last().expect("non-empty"))?;
        out.push(next);
    }
    Ok(out)
}

#[inline]
fn source_coord(dst: usize, dst_len: usize, src_len: usize) -> (usize, usize, f64) {
    let s = ((dst as f64 + 0.5) * src_len as f64 / dst_len as f64 - 0.5)
        .clamp(0.0, (src_len - 1) as f64);
    let i0 = s.floor() as usize;
    let i1 = (i0 + 1).min(src_len - 1);
    (i0, i1, s - i0 as f64)
}

fn resize_plane(src: &[f64], w: usize, h: usize, dw: usize, dh: usize) -> Vec<f64> {
    let xs: Vec<_> = (0..dw).map(|x| source_coord(x, dw, w)).collect();
    let mut out = vec![0.0; dw * dh];
    for y in 0..dh {
        let (y0, y1, ty) = source_coord(y, dh, h);
        for (x, &(x0, x1, tx)) in xs.iter().enumerate() {
            let top = src[y0 * w + x0] * (1.0 - tx) + src[y0 * w + x1] * tx;
            let bot = src[y1 * w + x0] * (1.0 - tx) + src[y1 * w + x1] * tx;
            out[y * dw + x] = top * (1.0 - ty) + bot * ty;
        }
    }
    out
}

/// Bilinear resize with pixel-center alignment and edge clamping.
pub fn resize_bilinear(img: &PlanarImage, width: usize, height: usize) -> Result<PlanarImage> {
    if width == 0 || height == 0 {
        return Err(Error::TooSmall(format!("resize target {width}x{height}")));
    }
    let mut data = Vec::with_capacity(width * height * img.channels());
    for c in 0..img.channels() {
        data.extend(resize_plane(
            img.plane(c),
            img.width(),
            img.height(),
            width,
            height,
        ));
    }
    let out = PlanarImage::field(width, height, img.channels(), data);
    Ok(if img.range() == ValueRange::UNBOUNDED {
        out
    } else {
        // Convex combinations stay in range up to rounding.
        PlanarImage::with_range(
            width,
            height,
            img.channels(),
            out.into_data()
                .into_iter()
                .map(|v| v.clamp(img.range().min, img.range().max))
                .collect(),
            img.range(),
        )?
    })
}

/// Resizes a fully valid disparity map and multiplies values by `scale`.
pub fn resize_disparity(
    d: &DisparityMap,
    width: usize,
    height: usize,
    scale: f64,
) -> Result<DisparityMap> {
    if width == 0 || height == 0 {
        return Err(Error::TooSmall(format!("resize target {width}x{height}")));
    }
    let values = resize_plane(d.values(), d.width(), d.height(), width, height)
        .into_iter()
        .map(|v| (v * scale).max(0.0))
        .collect();
    DisparityMap::new(width, height, values)
}

/// 3×3 median over valid neighbours (edge-replicated); invalid centres stay
/// invalid.
pub fn median3x3(d: &DisparityMap) -> DisparityMap {
    let (w, h) = (d.width() as isize, d.height() as isize);
    let mut out = d.clone();
    let mut buf = Vec::with_capacity(9);
    for y in 0..h {
        for x in 0..w {
            if !d.is_valid(x as usize, y as usize) {
                continue;
            }
            buf.clear();
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let sx = (x + dx).clamp(0, w - 1) as usize;
                    let sy = (y + dy).clamp(0, h - 1) as usize;
                    if d.is_valid(sx, sy) {
                        buf.push(d.get(sx, sy));
                    }
                }
            }
            buf.sort_by(f64::total_cmp);
            out.set(x as usize, y as usize, buf[buf.len() / 2]);
        }
    }
    out
}
