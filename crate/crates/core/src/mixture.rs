//! Mixture operators: how a stereo pair collapses into the single observed
//! image, plus the residual and hard projection the solver uses to stay
//! exactly consistent with the observation.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagebase::PlanarImage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MixtureOperator {
    /// Red from the left view, green and blue from the right view.
    Anaglyph,
    /// Per-sample average of both views.
    #[serde(rename = "double")]
    DoubleVision,
    /// The mixture is the left view itself.
    #[serde(rename = "mono-left")]
    MonocularLeft,
    /// The mixture is the right view itself.
    #[serde(rename = "mono-right")]
    MonocularRight,
}

/// Which view a channel is read from by an operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum View {
    Left,
    Right,
}

impl MixtureOperator {
    pub const ALL: [MixtureOperator; 4] = [
        MixtureOperator::Anaglyph,
        MixtureOperator::DoubleVision,
        MixtureOperator::MonocularLeft,
        MixtureOperator::MonocularRight,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MixtureOperator::Anaglyph => "anaglyph",
            MixtureOperator::DoubleVision => "double",
            MixtureOperator::MonocularLeft => "mono-left",
            MixtureOperator::MonocularRight => "mono-right",
        }
    }

    /// Channels of `view` copied verbatim into the mixture. Empty for
    /// double vision, whose constraint couples both views.
    pub fn pinned_channels(self, view: View, channels: usize) -> Vec<usize> {
        match (self, view) {
            (MixtureOperator::Anaglyph, View::Left) => vec![0],
            (MixtureOperator::Anaglyph, View::Right) => vec![1, 2],
            (MixtureOperator::MonocularLeft, View::Left)
            | (MixtureOperator::MonocularRight, View::Right) => (0..channels).collect(),
            _ => Vec::new(),
        }
    }

    /// Channels of `view` the mixture says nothing about directly.
    pub fn free_channels(self, view: View, channels: usize) -> Vec<usize> {
        if self == MixtureOperator::DoubleVision {
            return (0..channels).collect();
        }
        let pinned = self.pinned_channels(view, channels);
        (0..channels).filter(|c| !pinned.contains(c)).collect()
    }
}

impl fmt::Display for MixtureOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MixtureOperator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "anaglyph" => Ok(MixtureOperator::Anaglyph),
            "double" | "double-vision" => Ok(MixtureOperator::DoubleVision),
            "mono-left" => Ok(MixtureOperator::MonocularLeft),
            "mono-right" => Ok(MixtureOperator::MonocularRight),
            other => Err(Error::InvalidArgument(format!(
                "unknown operator {other:?} (expected anaglyph, double, mono-left or mono-right)"
            ))),
        }
    }
}

fn check_pair(op: MixtureOperator, left: &PlanarImage, right: &PlanarImage) -> Result<()> {
    left.check_same_shape(right, "stereo pair")?;
    if op == MixtureOperator::Anaglyph && left.channels() != 3 {
        return Err(Error::shape("anaglyph channels", 3, left.channels()));
    }
    Ok(())
}

pub fn compose(
    op: MixtureOperator,
    left: &PlanarImage,
    right: &PlanarImage,
) -> Result<PlanarImage> {
    check_pair(op, left, right)?;
    Ok(match op {
        MixtureOperator::Anaglyph => {
            let mut out = right.clone();
            out.plane_mut(0).copy_from_slice(left.plane(0));
            out
        }
        MixtureOperator::DoubleVision => {
            let mut out = left.clone();
            for (o, r) in out.data_mut().iter_mut().zip(right.data()) {
                *o = 0.5 * (*o + r);
            }
            out
        }
        MixtureOperator::MonocularLeft => left.clone(),
        MixtureOperator::MonocularRight => right.clone(),
    })
}

/// Largest absolute per-sample violation of `mixture = compose(op, left, right)`.
pub fn constraint_residual(
    op: MixtureOperator,
    mixture: &PlanarImage,
    left: &PlanarImage,
    right: &PlanarImage,
) -> Result<f64> {
    let composed = compose(op, left, right)?;
    composed.check_same_shape(mixture, "mixture")?;
    Ok(composed
        .data()
        .iter()
        .zip(mixture.data())
        .fold(0.0, |m, (a, b)| f64::max(m, (a - b).abs())))
}

/// Least-squares closest pair satisfying the mixture constraint exactly.
///
/// Double-vision projection shifts both views by the same correction and
/// can leave `[0, 1]`; callers that need bounded images clamp afterwards.
pub fn project(
    op: MixtureOperator,
    mixture: &PlanarImage,
    left: &PlanarImage,
    right: &PlanarImage,
) -> Result<(PlanarImage, PlanarImage)> {
    check_pair(op, left, right)?;
    left.check_same_shape(mixture, "mixture")?;
    let mut l = left.clone();
    let mut r = right.clone();
    match op {
        MixtureOperator::Anaglyph => {
            l.plane_mut(0).copy_from_slice(mixture.plane(0));
            r.plane_mut(1).copy_from_slice(mixture.plane(1));
            r.plane_mut(2).copy_from_slice(mixture.plane(2));
        }
        MixtureOperator::DoubleVision => {
            for ((a, b), m) in l
                .data_mut()
                .iter_mut()
                .zip(r.data_mut())
                .zip(mixture.data())
            {
                let c = m - 0.5 * (*a + *b);
                *a += c;
                *b += c;
            }
        }
        MixtureOperator::MonocularLeft => l = mixture.clone(),
        MixtureOperator::MonocularRight => r = mixture.clone(),
    }
    Ok((l, r))
}

/// Closest pair that satisfies the constraint exactly and stays inside the
/// images' value range. Returns the pair and how many samples the range
/// bound moved.
///
/// For double vision each sample pair lives on the segment `l + r = 2m`
/// inside the box, so the line projection is followed by clamping along the
/// segment. The other operators pin observed channels and clamp the rest.
pub fn project_bounded(
    op: MixtureOperator,
    mixture: &PlanarImage,
    left: &PlanarImage,
    right: &PlanarImage,
) -> Result<(PlanarImage, PlanarImage, usize)> {
    let (mut l, mut r) = project(op, mixture, left, right)?;
    let range = left.range();
    let mut moved = 0;
    if op == MixtureOperator::DoubleVision {
        for ((a, b), m) in l
            .data_mut()
            .iter_mut()
            .zip(r.data_mut())
            .zip(mixture.data())
        {
            let lo = range.min.max(2.0 * m - range.max);
            let hi = range.max.min(2.0 * m - range.min);
            let c = a.clamp(lo, hi);
            if c != *a {
                *a = c;
                *b = 2.0 * m - c;
                moved += 1;
            }
        }
    } else {
        moved = l.clamp_to_range() + r.clamp_to_range();
    }
    Ok((l, r, moved))
}
