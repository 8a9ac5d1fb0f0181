//! Dense image and disparity containers plus the low-level operators every
//! other module builds on.

mod io;
mod ops;

pub use io::{
    load_image, load_kitti_disparity, load_pfm, save_image, save_kitti_disparity, save_pfm,
    BitDepth,
};
pub use ops::{
    build_disparity_pyramid, build_pyramid, downsample2, downsample2_disparity, grad_u,
    grad_u_adjoint, grad_v, grad_v_adjoint, median3x3, resize_bilinear, resize_disparity,
};

use crate::error::{Error, Result};

/// Closed interval a [`PlanarImage`]'s samples are declared to live in.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ValueRange {
    pub min: f64,
    pub max: f64,
}

impl ValueRange {
    pub const UNIT: ValueRange = ValueRange { min: 0.0, max: 1.0 };
    pub const UNBOUNDED: ValueRange = ValueRange {
        min: f64::NEG_INFINITY,
        max: f64::INFINITY,
    };

    pub fn contains(&self, v: f64) -> bool {
        v >= self.min && v <= self.max
    }
}

impl Default for ValueRange {
    fn default() -> Self {
        ValueRange::UNIT
    }
}

/// A `width × height × channels` image stored plane by plane: sample
/// `(x, y, c)` lives at `c * width * height + y * width + x`.
///
/// Constructors validate that every sample is finite and within the declared
/// range. Fields produced by gradient computations use
/// [`ValueRange::UNBOUNDED`].
#[derive(Debug, Clone, PartialEq)]
pub struct PlanarImage {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
    range: ValueRange,
}

impl PlanarImage {
    /// Image in the unit range.
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        Self::with_range(width, height, channels, data, ValueRange::UNIT)
    }

    pub fn with_range(
        width: usize,
        height: usize,
        channels: usize,
        data: Vec<f64>,
        range: ValueRange,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::TooSmall(format!("{width}x{height} image")));
        }
        if channels == 0 {
            return Err(Error::InvalidArgument(
                "image needs at least one channel".into(),
            ));
        }
        let expected = width * height * channels;
        if data.len() != expected {
            return Err(Error::shape("image data length", expected, data.len()));
        }
        if let Some((i, v)) = data
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || !range.contains(**v))
        {
            return Err(Error::InvalidArgument(format!(
                "sample {i} = {v} outside [{}, {}]",
                range.min, range.max
            )));
        }
        Ok(PlanarImage {
            width,
            height,
            channels,
            data,
            range,
        })
    }

    /// Unbounded field, used for gradients and intermediate quantities.
    pub fn field(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), width * height * channels, "field data length");
        PlanarImage {
            width,
            height,
            channels,
            data,
            range: ValueRange::UNBOUNDED,
        }
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        let range = if ValueRange::UNIT.contains(value) {
            ValueRange::UNIT
        } else {
            ValueRange::UNBOUNDED
        };
        PlanarImage {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
            range,
        }
    }

    /// All-zero field with the same shape as `self`.
    pub fn zeros_like(&self) -> Self {
        PlanarImage::field(
            self.width,
            self.height,
            self.channels,
            vec![0.0; self.data.len()],
        )
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn range(&self) -> ValueRange {
        self.range
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
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

    /// Mutable access to the raw samples. Callers are responsible for
    /// keeping them inside [`Self::range`] (see [`Self::clamp_to_range`]).
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, c: usize) -> usize {
        c * self.width * self.height + y * self.width + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[self.index(x, y, c)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        let i = self.index(x, y, c);
        self.data[i] = v;
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.pixel_count();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.pixel_count();
        &mut self.data[c * n..(c + 1) * n]
    }

    /// Single-channel copy of channel `c`.
    pub fn channel(&self, c: usize) -> PlanarImage {
        PlanarImage {
            width: self.width,
            height: self.height,
            channels: 1,
            data: self.plane(c).to_vec(),
            range: self.range,
        }
    }

    /// Stacks single- or multi-channel images of equal size into one image.
    pub fn from_planes(parts: &[&PlanarImage]) -> Result<PlanarImage> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("no planes to stack".into()))?;
        let mut data = Vec::new();
        let mut channels = 0;
        for p in parts {
            first.check_same_size(p, "stacked plane")?;
            data.extend_from_slice(&p.data);
            channels += p.channels;
        }
        Ok(PlanarImage {
            width: first.width,
            height: first.height,
            channels,
            data,
            range: first.range,
        })
    }

    pub fn same_shape(&self, other: &PlanarImage) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub(crate) fn check_same_shape(
        &self,
        other: &PlanarImage,
        context: &'static str,
    ) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::shape(
                context,
                self.shape_string(),
                other.shape_string(),
            ))
        }
    }

    pub(crate) fn check_same_size(&self, other: &PlanarImage, context: &'static str) -> Result<()> {
        if self.width == other.width && self.height == other.height {
            Ok(())
        } else {
            Err(Error::shape(
                context,
                format!("{}x{}", self.width, self.height),
                format!("{}x{}", other.width, other.height),
            ))
        }
    }

    pub(crate) fn check_map(&self, map: &DisparityMap, context: &'static str) -> Result<()> {
        if self.width == map.width() && self.height == map.height() {
            Ok(())
        } else {
            Err(Error::shape(
                context,
                format!("{}x{}", self.width, self.height),
                format!("{}x{}", map.width(), map.height()),
            ))
        }
    }

    pub fn shape_string(&self) -> String {
        format!("{}x{}x{}", self.width, self.height, self.channels)
    }

    /// Number of samples clamped.
    pub fn clamp_to_range(&mut self) -> usize {
        let ValueRange { min, max } = self.range;
        let mut clamped = 0;
        for v in &mut self.data {
            if *v < min {
                *v = min;
                clamped += 1;
            } else if *v > max {
                *v = max;
                clamped += 1;
            }
        }
        clamped
    }

    /// Re-declares the range and clamps samples into it.
    pub fn with_range_clamped(mut self, range: ValueRange) -> PlanarImage {
        self.range = range;
        self.clamp_to_range();
        self
    }

    /// Converts a field into a unit-range image by clamping.
    pub fn into_unit_clamped(mut self) -> PlanarImage {
        self.range = ValueRange::UNIT;
        self.clamp_to_range();
        self
    }

    pub fn mirror_horizontal(&self) -> PlanarImage {
        let mut out = self.clone();
        for c in 0..self.channels {
            for y in 0..self.height {
                for x in 0..self.width {
                    out.set(self.width - 1 - x, y, c, self.get(x, y, c));
                }
            }
        }
        out
    }

    /// Channel-averaged copy.
    pub fn mean_channel(&self) -> PlanarImage {
        let n = self.pixel_count();
        let mut data = vec![0.0; n];
        for c in 0..self.channels {
            for (d, s) in data.iter_mut().zip(self.plane(c)) {
                *d += s;
            }
        }
        let inv = 1.0 / self.channels as f64;
        data.iter_mut().for_each(|v| *v *= inv);
        PlanarImage {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
            range: self.range,
        }
    }
}

/// Per-pixel non-negative horizontal disparity (pixels) with a validity mask.
///
/// Invalid pixels carry value 0 and are skipped by every loss and metric.
#[derive(Debug, Clone, PartialEq)]
pub struct DisparityMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
    valid: Vec<bool>,
}

impl DisparityMap {
    /// Fully valid map; every value must be finite and non-negative.
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        let valid = vec![true; values.len()];
        Self::with_validity(width, height, values, valid)
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Self {
        DisparityMap {
            width,
            height,
            values: vec![value; width * height],
            valid: vec![true; width * height],
        }
    }

    pub fn with_validity(
        width: usize,
        height: usize,
        mut values: Vec<f64>,
        valid: Vec<bool>,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::TooSmall(format!("{width}x{height} disparity map")));
        }
        let n = width * height;
        if values.len() != n {
            return Err(Error::shape("disparity values", n, values.len()));
        }
        if valid.len() != n {
            return Err(Error::shape("disparity mask", n, valid.len()));
        }
        for (i, (v, ok)) in values.iter_mut().zip(&valid).enumerate() {
            if *ok {
                if !v.is_finite() || *v < 0.0 {
                    return Err(Error::InvalidArgument(format!(
                        "disparity {i} = {v} must be finite and non-negative"
                    )));
                }
            } else {
                *v = 0.0;
            }
        }
        Ok(DisparityMap {
            width,
            height,
            values,
            valid,
        })
    }

    /// Builds a map from raw values, marking non-finite or non-positive
    /// entries invalid (the Middlebury/KITTI hole convention).
    pub fn from_raw_with_holes(width: usize, height: usize, raw: &[f64]) -> Result<Self> {
        let valid: Vec<bool> = raw.iter().map(|v| v.is_finite() && *v > 0.0).collect();
        let values = raw
            .iter()
            .zip(&valid)
            .map(|(v, ok)| if *ok { *v } else { 0.0 })
            .collect();
        Self::with_validity(width, height, values, valid)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Mutable values; callers keep them finite and non-negative.
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn validity(&self) -> &[bool] {
        &self.valid
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.values[y * self.width + x] = v;
    }

    #[inline]
    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.valid[y * self.width + x]
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    pub fn all_valid(&self) -> bool {
        self.valid.iter().all(|v| *v)
    }

    pub fn same_size(&self, other: &DisparityMap) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub(crate) fn check_same_size(
        &self,
        other: &DisparityMap,
        context: &'static str,
    ) -> Result<()> {
        if self.same_size(other) {
            Ok(())
        } else {
            Err(Error::shape(
                context,
                format!("{}x{}", self.width, self.height),
                format!("{}x{}", other.width, other.height),
            ))
        }
    }

    /// Clamps valid values into `[0, max]`; returns how many changed.
    pub fn clamp(&mut self, max: f64) -> usize {
        let mut n = 0;
        for v in &mut self.values {
            let c = v.clamp(0.0, max);
            if c != *v {
                *v = c;
                n += 1;
            }
        }
        n
    }

    pub fn mirror_horizontal(&self) -> DisparityMap {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                let src = y * self.width + x;
                let dst = y * self.width + (self.width - 1 - x);
                out.values[dst] = self.values[src];
                out.valid[dst] = self.valid[src];
            }
        }
        out
    }

    /// Median over valid pixels, `None` if there are none.
    pub fn valid_median(&self) -> Option<f64> {
        let mut v: Vec<f64> = self
            .values
            .iter()
            .zip(&self.valid)
            .filter(|(_, ok)| **ok)
            .map(|(v, _)| *v)
            .collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        let m = v.len() / 2;
        Some(if v.len() % 2 == 1 {
            v[m]
        } else {
            0.5 * (v[m - 1] + v[m])
        })
    }
}
