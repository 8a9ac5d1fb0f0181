//! Recovery of a stereo pair and dense disparity maps from a single mixture
//! image (anaglyph, double-vision average, or one monocular view).
//!
//! The pipeline is:
//!
//! 1. [`mixture`] defines how a stereo pair collapses into one image.
//! 2. [`losses`] scores a candidate pair plus disparities (content, TV prior,
//!    SSIM/L1 warping appearance, edge-aware smoothness) and returns analytic
//!    gradients, using the warps in [`sampling`].
//! 3. [`solver`] minimizes that energy coarse-to-fine with RMSProp and a hard
//!    mixture-consistency projection after every step.
//! 4. [`oracle`] is an exhaustive cost-volume matcher used for initialization,
//!    cross-checking, occlusion handling and anaglyph colorization.
//! 5. [`metrics`] implements PSNR, bad-pixel ratios and depth error metrics.
//!
//! [`commands`] wires those pieces into the reproducible runs exposed by the
//! `unmix-stereo` binary.

pub mod commands;
pub mod error;
pub mod imagebase;
pub mod losses;
pub mod metrics;
pub mod mixture;
pub mod oracle;
pub mod sampling;
pub mod solver;
pub mod synthetic;

pub use error::{Error, Result};
pub use imagebase::{DisparityMap, PlanarImage};
pub use losses::{LossBreakdown, LossWeights};
pub use mixture::MixtureOperator;
pub use solver::{LatentState, Solution, SolverConfig};
