//! Value-and-gradient kernels for every term of the joint energy.
//!
//! All terms are means (over samples or pixels), so the weights behave the
//! same way at every pyramid level.

mod ssim;

pub(crate) use ssim::box3 as box3_mean;
pub use ssim::{ssim_map, SsimField, C1, C2};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagebase::{grad_u, grad_u_adjoint, grad_v, grad_v_adjoint, DisparityMap, PlanarImage};
use crate::mixture::{MixtureOperator, View};
use crate::sampling::{warp_adjoint, warp_from_left, warp_from_right};
use crate::solver::LatentState;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    /// Content (data) weight.
    pub alpha_c: f64,
    /// TV image prior weight.
    pub alpha_p: f64,
    /// Warping appearance weight.
    pub omega_w: f64,
    /// Disparity smoothness weight.
    pub omega_s: f64,
    /// SSIM share of the appearance term.
    pub lambda1: f64,
    /// L1 share of the appearance term.
    pub lambda2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha_c: 1.0,
            alpha_p: 0.2,
            omega_w: 1.0,
            omega_s: 0.05,
            lambda1: 0.85,
            lambda2: 0.15,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            ("alpha_c", self.alpha_c),
            ("alpha_p", self.alpha_p),
            ("omega_w", self.omega_w),
            ("omega_s", self.omega_s),
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
        ];
        for (name, v) in all {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        if (self.lambda1 + self.lambda2 - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "lambda1 + lambda2 must equal 1, got {}",
                self.lambda1 + self.lambda2
            )));
        }
        Ok(())
    }

    /// Stereo terms disabled.
    pub fn separation_only(self) -> Self {
        LossWeights {
            omega_w: 0.0,
            omega_s: 0.0,
            ..self
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub content_left: f64,
    pub content_right: f64,
    pub prior_left: f64,
    pub prior_right: f64,
    pub warp_left: f64,
    pub warp_right: f64,
    pub smooth_left: f64,
    pub smooth_right: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn weighted_total(&self, w: &LossWeights) -> f64 {
        w.alpha_c * (self.content_left + self.content_right)
            + w.alpha_p * (self.prior_left + self.prior_right)
            + w.omega_w * (self.warp_left + self.warp_right)
            + w.omega_s * (self.smooth_left + self.smooth_right)
    }

    pub fn is_finite(&self) -> bool {
        [
            self.content_left,
            self.content_right,
            self.prior_left,
            self.prior_right,
            self.warp_left,
            self.warp_right,
            self.smooth_left,
            self.smooth_right,
            self.total,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// Gradients of the total loss with respect to each latent field.
/// Disparity gradients are single-channel fields.
#[derive(Debug, Clone)]
pub struct LatentGradients {
    pub left: PlanarImage,
    pub right: PlanarImage,
    pub d_left: PlanarImage,
    pub d_right: PlanarImage,
}

impl LatentGradients {
    pub fn is_finite(&self) -> bool {
        [&self.left, &self.right, &self.d_left, &self.d_right]
            .iter()
            .all(|g| g.data().iter().all(|v| v.is_finite()))
    }
}

#[inline]
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn axpy(dst: &mut PlanarImage, scale: f64, src: &PlanarImage) {
    if scale == 0.0 {
        return;
    }
    for (d, s) in dst.data_mut().iter_mut().zip(src.data()) {
        *d += scale * s;
    }
}

/// Mean absolute difference and its subgradient w.r.t. `pred`.
pub fn content_loss(pred: &PlanarImage, target: &PlanarImage) -> Result<(f64, PlanarImage)> {
    let all: Vec<usize> = (0..pred.channels()).collect();
    content_on_channels(pred, target, &all)
}

/// [`content_loss`] restricted to `channels`; the mean runs over those
/// channels' samples only.
pub fn content_on_channels(
    pred: &PlanarImage,
    target: &PlanarImage,
    channels: &[usize],
) -> Result<(f64, PlanarImage)> {
    pred.check_same_shape(target, "content loss")?;
    let mut grad = pred.zeros_like();
    if channels.is_empty() {
        return Ok((0.0, grad));
    }
    let n = (pred.pixel_count() * channels.len()) as f64;
    let mut sum = 0.0;
    for &c in channels {
        let g = grad.plane_mut(c);
        for (i, (p, t)) in pred.plane(c).iter().zip(target.plane(c)).enumerate() {
            let d = p - t;
            sum += d.abs();
            g[i] = sign(d) / n;
        }
    }
    Ok((sum / n, grad))
}

/// Anisotropic total variation `mean(|∇u x| + |∇v x|)` over all samples.
pub fn tv_prior(pred: &PlanarImage) -> (f64, PlanarImage) {
    let gu = grad_u(pred);
    let gv = grad_v(pred);
    let n = pred.len() as f64;
    let value = gu
        .data()
        .iter()
        .chain(gv.data())
        .map(|v| v.abs())
        .sum::<f64>()
        / n;
    let su = PlanarImage::field(
        pred.width(),
        pred.height(),
        pred.channels(),
        gu.data().iter().map(|v| sign(*v) / n).collect(),
    );
    let sv = PlanarImage::field(
        pred.width(),
        pred.height(),
        pred.channels(),
        gv.data().iter().map(|v| sign(*v) / n).collect(),
    );
    let mut grad = grad_u_adjoint(&su);
    axpy(&mut grad, 1.0, &grad_v_adjoint(&sv));
    (value, grad)
}

#[derive(Debug, Clone)]
pub struct AppearanceLoss {
    pub value: f64,
    pub grad_reconstructed: PlanarImage,
    pub grad_observed: PlanarImage,
}

/// `mean(λ1 (1 - SSIM) / 2 + λ2 |observed - reconstructed|)` over pixels and
/// channels.
pub fn appearance_loss(
    observed: &PlanarImage,
    reconstructed: &PlanarImage,
    w: &LossWeights,
) -> Result<AppearanceLoss> {
    observed.check_same_shape(reconstructed, "appearance loss")?;
    let field = ssim_map(observed, reconstructed)?;
    let n = observed.len() as f64;
    let value = appearance_mean(&field, observed, reconstructed, w);
    let up = PlanarImage::filled(
        observed.width(),
        observed.height(),
        observed.channels(),
        -w.lambda1 * 0.5 / n,
    );
    let (mut grad_observed, mut grad_reconstructed) = field.backward(&up);
    for ((go, gr), (a, b)) in grad_observed
        .data_mut()
        .iter_mut()
        .zip(grad_reconstructed.data_mut())
        .zip(observed.data().iter().zip(reconstructed.data()))
    {
        let s = w.lambda2 * sign(a - b) / n;
        *go += s;
        *gr -= s;
    }
    Ok(AppearanceLoss {
        value,
        grad_reconstructed,
        grad_observed,
    })
}

fn appearance_mean(
    field: &SsimField,
    observed: &PlanarImage,
    reconstructed: &PlanarImage,
    w: &LossWeights,
) -> f64 {
    let mut value = 0.0;
    for (s, (a, b)) in field
        .values
        .data()
        .iter()
        .zip(observed.data().iter().zip(reconstructed.data()))
    {
        value += w.lambda1 * (1.0 - s) * 0.5 + w.lambda2 * (a - b).abs();
    }
    value / observed.len() as f64
}

/// Value of [`appearance_loss`] without the backward pass.
pub fn appearance_value(
    observed: &PlanarImage,
    reconstructed: &PlanarImage,
    w: &LossWeights,
) -> Result<f64> {
    observed.check_same_shape(reconstructed, "appearance loss")?;
    let field = ssim_map(observed, reconstructed)?;
    Ok(appearance_mean(&field, observed, reconstructed, w))
}

#[derive(Debug, Clone)]
pub struct SmoothnessLoss {
    pub value: f64,
    /// Single-channel field.
    pub grad_disparity: PlanarImage,
    pub grad_image: PlanarImage,
}

/// Edge-aware disparity TV:
/// `mean(|∇u d| e^{-|∇u I|} + |∇v d| e^{-|∇v I|})` over pixels, with the
/// image gradient magnitude averaged over channels. Differences touching an
/// invalid disparity are skipped.
pub fn smoothness_loss(d: &DisparityMap, img: &PlanarImage) -> Result<SmoothnessLoss> {
    img.check_map(d, "smoothness loss")?;
    let (w, h, ch) = (img.width(), img.height(), img.channels());
    let n = (w * h) as f64;
    let dimg = PlanarImage::field(w, h, 1, d.values().to_vec());
    let (du, dv) = (grad_u(&dimg), grad_v(&dimg));
    let (iu, iv) = (grad_u(img), grad_v(img));
    let valid = d.validity();
    let pair_ok_u = |i: usize| i % w + 1 < w && valid[i] && valid[i + 1];
    let pair_ok_v = |i: usize| i / w + 1 < h && valid[i] && valid[i + w];

    let mut value = 0.0;
    let mut sd_u = vec![0.0; w * h];
    let mut sd_v = vec![0.0; w * h];
    let mut si_u = vec![0.0; w * h * ch];
    let mut si_v = vec![0.0; w * h * ch];
    let inv_c = 1.0 / ch as f64;
    for i in 0..w * h {
        for (ok, dgrad, igrad, sd, si) in [
            (pair_ok_u(i), &du, &iu, &mut sd_u, &mut si_u),
            (pair_ok_v(i), &dv, &iv, &mut sd_v, &mut si_v),
        ] {
            if !ok {
                continue;
            }
            let mag = (0..ch)
                .map(|c| igrad.data()[c * w * h + i].abs())
                .sum::<f64>()
                * inv_c;
            let weight = (-mag).exp();
            let g = dgrad.data()[i];
            value += g.abs() * weight;
            sd[i] = sign(g) * weight / n;
            let coeff = -g.abs() * weight * inv_c / n;
            for c in 0..ch {
                let j = c * w * h + i;
                si[j] = coeff * sign(igrad.data()[j]);
            }
        }
    }
    let mut grad_disparity = grad_u_adjoint(&PlanarImage::field(w, h, 1, sd_u));
    axpy(
        &mut grad_disparity,
        1.0,
        &grad_v_adjoint(&PlanarImage::field(w, h, 1, sd_v)),
    );
    let mut grad_image = grad_u_adjoint(&PlanarImage::field(w, h, ch, si_u));
    axpy(
        &mut grad_image,
        1.0,
        &grad_v_adjoint(&PlanarImage::field(w, h, ch, si_v)),
    );
    Ok(SmoothnessLoss {
        value: value / n,
        grad_disparity,
        grad_image,
    })
}

/// Value of [`smoothness_loss`] without gradients.
pub fn smoothness_value(d: &DisparityMap, img: &PlanarImage) -> Result<f64> {
    img.check_map(d, "smoothness loss")?;
    let (w, h, ch) = (img.width(), img.height(), img.channels());
    let (dv, valid) = (d.values(), d.validity());
    let plane = w * h;
    let inv_c = 1.0 / ch as f64;
    let data = img.data();
    let mut value = 0.0;
    for i in 0..plane {
        for (ok, step) in [(i % w + 1 < w, 1), (i / w + 1 < h, w)] {
            if !ok || !valid[i] || !valid[i + step] {
                continue;
            }
            let mag = (0..ch)
                .map(|c| (data[c * plane + i + step] - data[c * plane + i]).abs())
                .sum::<f64>()
                * inv_c;
            value += (dv[i + step] - dv[i]).abs() * (-mag).exp();
        }
    }
    Ok(value / plane as f64)
}

/// Evaluates the full energy at `state` and its gradient w.r.t. every latent
/// field.
///
/// Content terms compare only what the mixture observes: anaglyph left red
/// and right green/blue, the double-vision average (charged to both views),
/// or the whole observed view for the monocular operators. Under hard
/// projection they are zero and act as diagnostics.
pub fn total_loss(
    state: &LatentState,
    mixture: &PlanarImage,
    op: MixtureOperator,
    w: &LossWeights,
) -> Result<(LossBreakdown, LatentGradients)> {
    let (left, right) = (&state.left, &state.right);
    let mut g = LatentGradients {
        left: left.zeros_like(),
        right: right.zeros_like(),
        d_left: PlanarImage::field(
            left.width(),
            left.height(),
            1,
            vec![0.0; left.pixel_count()],
        ),
        d_right: PlanarImage::field(
            left.width(),
            left.height(),
            1,
            vec![0.0; left.pixel_count()],
        ),
    };
    let b = evaluate(state, mixture, op, w, Some(&mut g))?;
    Ok((b, g))
}

/// The breakdown of [`total_loss`] without any gradient work.
pub fn total_loss_value(
    state: &LatentState,
    mixture: &PlanarImage,
    op: MixtureOperator,
    w: &LossWeights,
) -> Result<LossBreakdown> {
    evaluate(state, mixture, op, w, None)
}

fn evaluate(
    state: &LatentState,
    mixture: &PlanarImage,
    op: MixtureOperator,
    w: &LossWeights,
    mut grads: Option<&mut LatentGradients>,
) -> Result<LossBreakdown> {
    let (left, right) = (&state.left, &state.right);
    left.check_same_shape(right, "latent pair")?;
    left.check_same_shape(mixture, "mixture")?;
    left.check_map(&state.d_left, "left disparity")?;
    left.check_map(&state.d_right, "right disparity")?;

    let mut b = LossBreakdown::default();
    let ch = left.channels();
    match op {
        MixtureOperator::DoubleVision => {
            let composed = crate::mixture::compose(op, left, right)?;
            let (v, grad) = content_loss(&composed, mixture)?;
            b.content_left = v;
            b.content_right = v;
            // Two identical terms, each reaching a view through the 1/2 average.
            if let Some(g) = grads.as_deref_mut() {
                axpy(&mut g.left, w.alpha_c, &grad);
                axpy(&mut g.right, w.alpha_c, &grad);
            }
        }
        _ => {
            let (vl, gl) = content_on_channels(left, mixture, &op.pinned_channels(View::Left, ch))?;
            let (vr, gr) =
                content_on_channels(right, mixture, &op.pinned_channels(View::Right, ch))?;
            b.content_left = vl;
            b.content_right = vr;
            if let Some(g) = grads.as_deref_mut() {
                axpy(&mut g.left, w.alpha_c, &gl);
                axpy(&mut g.right, w.alpha_c, &gr);
            }
        }
    }

    let (pl, gpl) = tv_prior(left);
    let (pr, gpr) = tv_prior(right);
    b.prior_left = pl;
    b.prior_right = pr;
    if let Some(g) = grads.as_deref_mut() {
        axpy(&mut g.left, w.alpha_p, &gpl);
        axpy(&mut g.right, w.alpha_p, &gpr);
    }

    if w.omega_w > 0.0 {
        let recon_left = warp_from_right(right, &state.d_left)?;
        let recon_right = warp_from_left(left, &state.d_right)?;
        match grads.as_deref_mut() {
            Some(g) => {
                let app = appearance_loss(left, &recon_left.warped, w)?;
                let (g_src, g_d) = warp_adjoint(&recon_left, &app.grad_reconstructed)?;
                b.warp_left = app.value;
                axpy(&mut g.left, w.omega_w, &app.grad_observed);
                axpy(&mut g.right, w.omega_w, &g_src);
                axpy(&mut g.d_left, w.omega_w, &g_d);

                let app = appearance_loss(right, &recon_right.warped, w)?;
                let (g_src, g_d) = warp_adjoint(&recon_right, &app.grad_reconstructed)?;
                b.warp_right = app.value;
                axpy(&mut g.right, w.omega_w, &app.grad_observed);
                axpy(&mut g.left, w.omega_w, &g_src);
                axpy(&mut g.d_right, w.omega_w, &g_d);
            }
            None => {
                b.warp_left = appearance_value(left, &recon_left.warped, w)?;
                b.warp_right = appearance_value(right, &recon_right.warped, w)?;
            }
        }
    }

    if w.omega_s > 0.0 {
        match grads {
            Some(g) => {
                let s = smoothness_loss(&state.d_left, left)?;
                b.smooth_left = s.value;
                axpy(&mut g.d_left, w.omega_s, &s.grad_disparity);
                axpy(&mut g.left, w.omega_s, &s.grad_image);
                let s = smoothness_loss(&state.d_right, right)?;
                b.smooth_right = s.value;
                axpy(&mut g.d_right, w.omega_s, &s.grad_disparity);
                axpy(&mut g.right, w.omega_s, &s.grad_image);
            }
            None => {
                b.smooth_left = smoothness_value(&state.d_left, left)?;
                b.smooth_right = smoothness_value(&state.d_right, right)?;
            }
        }
    }

    b.total = b.weighted_total(w);
    Ok(b)
}
