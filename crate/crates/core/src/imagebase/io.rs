use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use image::{DynamicImage, ImageBuffer, ImageReader, Luma, Rgb};

use super::{DisparityMap, PlanarImage};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

impl BitDepth {
    fn max_code(self) -> f64 {
        match self {
            BitDepth::Eight => 255.0,
            BitDepth::Sixteen => 65535.0,
        }
    }
}

fn codec(path: &Path) -> impl FnOnce(image::ImageError) -> Error + '_ {
    move |source| Error::Codec {
        path: path.to_path_buf(),
        source,
    }
}

fn from_samples<T: Copy + Into<f64>>(
    w: usize,
    h: usize,
    channels: usize,
    interleaved: &[T],
    stride: usize,
    max: f64,
) -> Result<PlanarImage> {
    let n = w * h;
    let mut data = vec![0.0; n * channels];
    for (i, px) in interleaved.chunks_exact(stride).enumerate() {
        for c in 0..channels {
            data[c * n + i] = px[c].into() / max;
        }
    }
    PlanarImage::new(w, h, channels, data)
}

/// Loads an 8- or 16-bit PNG/PPM/PGM, scaling samples linearly into `[0, 1]`.
/// Alpha channels are dropped.
pub fn load_image(path: impl AsRef<Path>) -> Result<PlanarImage> {
    let path = path.as_ref();
    let img = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(codec(path))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    if w == 0 || h == 0 {
        return Err(Error::TooSmall(format!("{} is empty", path.display())));
    }
    match &img {
        DynamicImage::ImageLuma8(b) => from_samples(w, h, 1, b.as_raw(), 1, 255.0),
        DynamicImage::ImageLumaA8(b) => from_samples(w, h, 1, b.as_raw(), 2, 255.0),
        DynamicImage::ImageRgb8(b) => from_samples(w, h, 3, b.as_raw(), 3, 255.0),
        DynamicImage::ImageRgba8(b) => from_samples(w, h, 3, b.as_raw(), 4, 255.0),
        DynamicImage::ImageLuma16(b) => from_samples(w, h, 1, b.as_raw(), 1, 65535.0),
        DynamicImage::ImageLumaA16(b) => from_samples(w, h, 1, b.as_raw(), 2, 65535.0),
        DynamicImage::ImageRgb16(b) => from_samples(w, h, 3, b.as_raw(), 3, 65535.0),
        DynamicImage::ImageRgba16(b) => from_samples(w, h, 3, b.as_raw(), 4, 65535.0),
        other => Err(Error::UnsupportedFormat {
            path: path.to_path_buf(),
            reason: format!("unsupported sample type {:?}", other.color()),
        }),
    }
}

/// Quantizes with round-half-up after clamping to the declared range.
fn quantize(img: &PlanarImage, depth: BitDepth) -> Vec<u16> {
    let (min, max) = (img.range().min, img.range().max);
    let (min, span) = if min.is_finite() && max.is_finite() && max > min {
        (min, max - min)
    } else {
        (0.0, 1.0)
    };
    let (n, channels) = (img.pixel_count(), img.channels());
    let top = depth.max_code();
    let mut out = vec![0u16; n * channels];
    for c in 0..channels {
        for (i, v) in img.plane(c).iter().enumerate() {
            let unit = ((v - min) / span).clamp(0.0, 1.0);
            out[i * channels + c] = (unit * top + 0.5).floor().min(top) as u16;
        }
    }
    out
}

pub fn save_image(img: &PlanarImage, path: impl AsRef<Path>, depth: BitDepth) -> Result<()> {
    let path = path.as_ref();
    let (w, h) = (img.width() as u32, img.height() as u32);
    let codes = quantize(img, depth);
    let dynamic = match (img.channels(), depth) {
        (1, BitDepth::Eight) => DynamicImage::ImageLuma8(
            ImageBuffer::<Luma<u8>, _>::from_raw(w, h, codes.iter().map(|v| *v as u8).collect())
                .expect("buffer size"),
        ),
        (3, BitDepth::Eight) => DynamicImage::ImageRgb8(
            ImageBuffer::<Rgb<u8>, _>::from_raw(w, h, codes.iter().map(|v| *v as u8).collect())
                .expect("buffer size"),
        ),
        (1, BitDepth::Sixteen) => DynamicImage::ImageLuma16(
            ImageBuffer::<Luma<u16>, _>::from_raw(w, h, codes).expect("buffer size"),
        ),
        (3, BitDepth::Sixteen) => DynamicImage::ImageRgb16(
            ImageBuffer::<Rgb<u16>, _>::from_raw(w, h, codes).expect("buffer size"),
        ),
        (c, _) => {
            return Err(Error::InvalidArgument(format!(
                "cannot save a {c}-channel image"
            )))
        }
    };
    dynamic.save(path).map_err(codec(path))
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderCursor<'a> {
    fn token(&mut self) -> Option<&'a str> {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            None
        } else {
            std::str::from_utf8(&self.bytes[start..self.pos]).ok()
        }
    }
}

/// Reads a grayscale (`Pf`) PFM. Rows are stored bottom-up; the sign of the
/// scale line selects endianness (negative = little-endian). Non-finite and
/// non-positive values become invalid pixels.
pub fn load_pfm(path: impl AsRef<Path>) -> Result<DisparityMap> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let malformed = |reason: &str| Error::Malformed {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };

    let mut cur = HeaderCursor {
        bytes: &bytes,
        pos: 0,
    };
    match cur.token() {
        Some("Pf") => {}
        Some("PF") => {
            return Err(Error::UnsupportedFormat {
                path: path.to_path_buf(),
                reason: "colour PFM (PF); only grayscale Pf is supported".into(),
            })
        }
        _ => return Err(malformed("missing Pf magic")),
    }
    let mut number = |what: &str| -> Result<&str> {
        cur.token()
            .ok_or_else(|| malformed(&format!("missing {what}")))
    };
    let width: usize = number("width")?
        .parse()
        .map_err(|_| malformed("bad width"))?;
    let height: usize = number("height")?
        .parse()
        .map_err(|_| malformed("bad height"))?;
    let scale: f64 = number("scale")?
        .parse()
        .map_err(|_| malformed("bad scale"))?;
    if width == 0 || height == 0 {
        return Err(malformed("zero dimension"));
    }
    if scale == 0.0 || !scale.is_finite() {
        return Err(malformed("scale must be non-zero"));
    }
    // Exactly one whitespace byte separates the header from the payload.
    let start = cur.pos + 1;
    let needed = width * height * 4;
    if bytes.len() < start + needed {
        return Err(malformed(&format!(
            "truncated payload: need {needed} bytes, have {}",
            bytes.len().saturating_sub(start)
        )));
    }
    let little = scale < 0.0;
    let payload = &bytes[start..start + needed];
    let mut raw = vec![0.0; width * height];
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let word = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little {
            f32::from_le_bytes(word)
        } else {
            f32::from_be_bytes(word)
        };
        let (x, file_row) = (i % width, i / width);
        raw[(height - 1 - file_row) * width + x] = v as f64;
    }
    DisparityMap::from_raw_with_holes(width, height, &raw)
}

/// Writes a little-endian grayscale PFM. Values are stored as `f32`; invalid
/// pixels are written as `+inf`.
pub fn save_pfm(map: &DisparityMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (w, h) = (map.width(), map.height());
    let mut buf = Vec::with_capacity(32 + w * h * 4);
    write!(buf, "Pf\n{w} {h}\n-1.0\n").expect("write to vec");
    for y in (0..h).rev() {
        for x in 0..w {
            let v = if map.is_valid(x, y) {
                map.get(x, y) as f32
            } else {
                f32::INFINITY
            };
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    f.write_all(&buf)
        .and_then(|_| f.flush())
        .map_err(|e| Error::io(path, e))
}

/// KITTI disparity PNG: 16-bit gray, `disparity = value / 256`, 0 = invalid.
pub fn load_kitti_disparity(path: impl AsRef<Path>) -> Result<DisparityMap> {
    let path = path.as_ref();
    let img = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(codec(path))?;
    let DynamicImage::ImageLuma16(buf) = img else {
        return Err(Error::UnsupportedFormat {
            path: path.to_path_buf(),
            reason: format!("expected 16-bit single-channel PNG, got {:?}", img.color()),
        });
    };
    let (w, h) = (buf.width() as usize, buf.height() as usize);
    let mut values = Vec::with_capacity(w * h);
    let mut valid = Vec::with_capacity(w * h);
    for &v in buf.as_raw() {
        values.push(v as f64 / 256.0);
        valid.push(v != 0);
    }
    DisparityMap::with_validity(w, h, values, valid)
}

/// Valid pixels are stored as `round(d * 256)` clamped to `[1, 65535]`.
pub fn save_kitti_disparity(map: &DisparityMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let codes: Vec<u16> = map
        .values()
        .iter()
        .zip(map.validity())
        .map(|(v, ok)| {
            if *ok {
                (v * 256.0).round().clamp(1.0, 65535.0) as u16
            } else {
                0
            }
        })
        .collect();
    let buf = ImageBuffer::<Luma<u16>, _>::from_raw(map.width() as u32, map.height() as u32, codes)
        .expect("buffer size");
    DynamicImage::ImageLuma16(buf)
        .save(path)
        .map_err(codec(path))
}
