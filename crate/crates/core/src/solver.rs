//! Coarse-to-fine joint recovery of both views and both disparity maps.
//!
//! The latent fields are optimized directly with RMSProp on the energy from
//! [`crate::losses`]. After every update the images are clamped to the unit
//! range, disparities to the level's admissible range, and the pair is
//! projected back onto the mixture constraint.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagebase::{
    build_pyramid, median3x3, resize_bilinear, resize_disparity, DisparityMap, PlanarImage,
};
use crate::losses::{total_loss, total_loss_value, LatentGradients, LossBreakdown, LossWeights};
use crate::mixture::{constraint_residual, project, project_bounded, MixtureOperator};
use crate::oracle::{colorize_anaglyph, match_left, match_right};

/// RMSProp accumulators, one per latent field.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub left: Vec<f64>,
    pub right: Vec<f64>,
    pub d_left: Vec<f64>,
    pub d_right: Vec<f64>,
}

impl Moments {
    fn zeros(samples: usize, pixels: usize) -> Self {
        Moments {
            left: vec![0.0; samples],
            right: vec![0.0; samples],
            d_left: vec![0.0; pixels],
            d_right: vec![0.0; pixels],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    pub left: PlanarImage,
    pub right: PlanarImage,
    pub d_left: DisparityMap,
    pub d_right: DisparityMap,
    /// Pyramid level, 0 being full resolution.
    pub level: usize,
    pub moments: Moments,
}

impl LatentState {
    /// State with zeroed optimizer accumulators.
    pub fn new(
        left: PlanarImage,
        right: PlanarImage,
        d_left: DisparityMap,
        d_right: DisparityMap,
        level: usize,
    ) -> Result<Self> {
        left.check_same_shape(&right, "latent pair")?;
        left.check_map(&d_left, "left disparity")?;
        left.check_map(&d_right, "right disparity")?;
        let moments = Moments::zeros(left.len(), left.pixel_count());
        Ok(LatentState {
            left,
            right,
            d_left,
            d_right,
            level,
            moments,
        })
    }

    fn reset_moments(&mut self) {
        self.moments = Moments::zeros(self.left.len(), self.left.pixel_count());
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub weights: LossWeights,
    /// Largest admissible disparity at full resolution, pixels.
    pub d_max: f64,
    pub levels: usize,
    pub iters_per_level: usize,
    pub step_size: f64,
    pub rms_decay: f64,
    pub rms_epsilon: f64,
    pub seed: u64,
    /// Step size at the last iteration of a level, as a fraction of
    /// `step_size`; the step decays geometrically in between.
    pub final_step_fraction: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            weights: LossWeights::default(),
            d_max: 96.0,
            levels: 3,
            iters_per_level: 300,
            step_size: 0.05,
            rms_decay: 0.9,
            rms_epsilon: 1e-8,
            seed: 0,
            final_step_fraction: 0.02,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.d_max >= 1.0 && self.d_max.is_finite()) {
            return bad(format!("d_max must be >= 1, got {}", self.d_max));
        }
        if self.levels < 1 {
            return bad("levels must be >= 1".into());
        }
        if self.iters_per_level < 1 {
            return bad("iters_per_level must be >= 1".into());
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return bad(format!("step_size must be > 0, got {}", self.step_size));
        }
        if !(0.0..1.0).contains(&self.rms_decay) {
            return bad(format!(
                "rms_decay must be in [0, 1), got {}",
                self.rms_decay
            ));
        }
        if !(self.rms_epsilon > 0.0 && self.rms_epsilon.is_finite()) {
            return bad(format!("rms_epsilon must be > 0, got {}", self.rms_epsilon));
        }
        if !(self.final_step_fraction > 0.0 && self.final_step_fraction <= 1.0) {
            return bad(format!(
                "final_step_fraction must be in (0, 1], got {}",
                self.final_step_fraction
            ));
        }
        Ok(())
    }

    /// Disparity bound at `level`.
    pub fn d_max_at(&self, level: usize) -> f64 {
        self.d_max / (1u64 << level) as f64
    }

    fn step_at(&self, iteration: usize) -> f64 {
        if self.iters_per_level <= 1 {
            return self.step_size;
        }
        let t = iteration as f64 / (self.iters_per_level - 1) as f64;
        self.step_size * self.final_step_fraction.powf(t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TracePhase {
    /// The initialization carried to full resolution without optimization.
    Baseline,
    Iterate,
    /// The returned solution.
    Final,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub phase: TracePhase,
    pub level: usize,
    pub iteration: usize,
    pub step_size: f64,
    #[serde(flatten)]
    pub loss: LossBreakdown,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Image samples moved by clamping, summed over all steps.
    pub clamped_samples: usize,
    /// Disparity values moved by clamping, summed over all steps.
    pub clamped_disparities: usize,
    /// Largest constraint residual seen after any accepted step.
    pub max_step_residual: f64,
    pub final_residual: f64,
    pub initial_total: f64,
    pub final_total: f64,
    /// Step-size halvings triggered by a non-finite loss.
    pub retries: usize,
    /// The mixture carries no photometric signal.
    pub ill_posed: bool,
    /// The optimized state did not beat the initialization and was discarded.
    pub fell_back_to_initial: bool,
    /// Warp loss around each move to a finer level, coarsest first.
    pub level_transfers: Vec<LevelTransfer>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LevelTransfer {
    /// Level moved to.
    pub level: usize,
    /// `warp_left + warp_right` of the optimized coarser state.
    pub warp_before: f64,
    /// The same after transfer, at the finer level.
    pub warp_after: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub left: PlanarImage,
    pub right: PlanarImage,
    pub d_left: DisparityMap,
    pub d_right: DisparityMap,
    /// Starts with the baseline entry and ends with the final entry.
    pub loss_trace: Vec<TraceEntry>,
    pub diagnostics: Diagnostics,
    /// The initialization at full resolution.
    pub initial: LatentState,
}

/// RMSProp on one field: `v ← ρv + (1−ρ)g²`, `x ← x − η g / √(v + ε)`.
pub fn rmsprop_update(x: &mut [f64], v: &mut [f64], g: &[f64], eta: f64, rho: f64, eps: f64) {
    for ((x, v), g) in x.iter_mut().zip(v.iter_mut()).zip(g) {
        *v = rho * *v + (1.0 - rho) * g * g;
        *x -= eta * g / (*v + eps).sqrt();
    }
}

fn mean_abs_gradient(img: &PlanarImage) -> f64 {
    let tv = crate::losses::tv_prior(img).0;
    tv * 0.5
}

/// A mixture this flat gives the photometric terms nothing to work with.
const ILL_POSED_GRADIENT: f64 = 1e-6;

fn is_ill_posed(mixture: &PlanarImage) -> bool {
    mean_abs_gradient(mixture) < ILL_POSED_GRADIENT
}

/// Clamp, then project onto the constraint within the unit box; returns
/// (clamped samples, clamped disparities).
fn make_feasible(
    state: &mut LatentState,
    mixture: &PlanarImage,
    op: MixtureOperator,
    d_max: f64,
) -> Result<(usize, usize)> {
    let mut clamped = state.left.clamp_to_range() + state.right.clamp_to_range();
    let (l, r, moved) = project_bounded(op, mixture, &state.left, &state.right)?;
    state.left = l;
    state.right = r;
    clamped += moved;
    let dc = state.d_left.clamp(d_max) + state.d_right.clamp(d_max);
    Ok((clamped, dc))
}

fn has_free_channels(op: MixtureOperator) -> bool {
    op == MixtureOperator::Anaglyph
}

/// Matching proxies for the two views of an anaglyph: red stands in for the
/// left view and the green/blue mean for the right, each standardized so
/// their differing brightness does not bias the cost.
fn anaglyph_proxies(mixture: &PlanarImage) -> (PlanarImage, PlanarImage) {
    let standardize = |v: Vec<f64>| {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        let inv = if sd > 0.0 { 0.15 / sd } else { 0.0 };
        v.into_iter()
            .map(|x| 0.5 + (x - mean) * inv)
            .collect::<Vec<_>>()
    };
    let (w, h) = (mixture.width(), mixture.height());
    let red = standardize(mixture.plane(0).to_vec());
    let cyan = standardize(
        mixture
            .plane(1)
            .iter()
            .zip(mixture.plane(2))
            .map(|(g, b)| 0.5 * (g + b))
            .collect(),
    );
    (
        PlanarImage::field(w, h, 1, red),
        PlanarImage::field(w, h, 1, cyan),
    )
}

fn oracle_disparities(
    left: &PlanarImage,
    right: &PlanarImage,
    d_max: f64,
    w: &LossWeights,
) -> Result<(DisparityMap, DisparityMap)> {
    let levels = (d_max.floor() as usize)
        .min(left.width().saturating_sub(1))
        .max(1);
    let dl = median3x3(&match_left(left, right, levels, w)?);
    let dr = median3x3(&match_right(left, right, levels, w)?);
    Ok((dl, dr))
}

/// Pair satisfying the double-vision constraint exactly and consistent with
/// a constant disparity `k`: `left(x + k) = 2 m(x) − left(x)`, seeded with
/// the mixture on the first `k` columns, and `right = 2 m − left`.
fn double_vision_hypothesis(mixture: &PlanarImage, k: usize) -> (PlanarImage, PlanarImage) {
    let (w, h, ch) = (mixture.width(), mixture.height(), mixture.channels());
    let mut left = mixture.clone();
    for c in 0..ch {
        let m = mixture.plane(c);
        let l = left.plane_mut(c);
        for y in 0..h {
            for x in k..w {
                let i = y * w + x;
                l[i] = (2.0 * m[i - k] - l[i - k]).clamp(0.0, 1.0);
            }
        }
    }
    let mut right = mixture.clone();
    for ((r, m), l) in right
        .data_mut()
        .iter_mut()
        .zip(mixture.data())
        .zip(left.data())
    {
        *r = 2.0 * m - l;
    }
    right.clamp_to_range();
    (left, right)
}

fn init_at_level(
    mixture: &PlanarImage,
    op: MixtureOperator,
    cfg: &SolverConfig,
    level: usize,
    stereo_seed: bool,
) -> Result<LatentState> {
    let (w, h) = (mixture.width(), mixture.height());
    let d_max = cfg.d_max_at(level);
    let weights = &cfg.weights;
    let (l0, r0) = project(op, mixture, mixture, mixture)?;
    let mut state = match op {
        MixtureOperator::Anaglyph if stereo_seed => {
            let (pl, pr) = anaglyph_proxies(mixture);
            let (dl, dr) = oracle_disparities(&pl, &pr, d_max, weights)?;
            let (l, r) = colorize_anaglyph(mixture, &dl, &dr)?;
            LatentState::new(l, r, dl, dr, level)?
        }
        MixtureOperator::DoubleVision if stereo_seed && !is_ill_posed(mixture) => {
            // Constant-disparity hypotheses; zero is excluded because the
            // replicated pair is a trivial minimizer there.
            let k_max = (d_max.floor() as usize).min(w / 2);
            let mut best: Option<(f64, LatentState)> = None;
            for k in 1..=k_max {
                let (l, r) = double_vision_hypothesis(mixture, k);
                let d = DisparityMap::constant(w, h, k as f64);
                let mut s = LatentState::new(l, r, d.clone(), d, level)?;
                make_feasible(&mut s, mixture, op, d_max)?;
                let b = total_loss_value(&s, mixture, op, weights)?;
                if best.as_ref().is_none_or(|(t, _)| b.total < *t) {
                    best = Some((b.total, s));
                }
            }
            match best {
                Some((_, s)) => s,
                None => LatentState::new(
                    l0.clone(),
                    r0.clone(),
                    DisparityMap::constant(w, h, 0.0),
                    DisparityMap::constant(w, h, 0.0),
                    level,
                )?,
            }
        }
        _ => {
            let (dl, dr) = oracle_disparities(&l0, &r0, d_max, weights)?;
            LatentState::new(l0, r0, dl, dr, level)?
        }
    };
    make_feasible(&mut state, mixture, op, d_max)?;
    Ok(state)
}

/// Initial state at the coarsest pyramid level.
///
/// Images start as the mixture replicated into both views and projected.
/// Disparities come from the oracle's winner-take-all matcher followed by a
/// 3×3 median. Two refinements avoid the trivial zero-disparity solution of
/// the replicated pair: anaglyphs are matched red against green/blue and the
/// unobserved channels are seeded by warping the observed ones, and double
/// vision starts from the best constant-disparity pair that reproduces the
/// mixture.
pub fn init_state(
    mixture: &PlanarImage,
    op: MixtureOperator,
    cfg: &SolverConfig,
) -> Result<LatentState> {
    cfg.validate()?;
    let pyramid = build_pyramid(mixture, cfg.levels)?;
    let coarse = pyramid.len() - 1;
    init_at_level(&pyramid[coarse], op, cfg, coarse, true)
}

/// Moves a state one level finer: bilinear images, disparities resized and
/// doubled, then made feasible against the finer mixture. Anaglyph free
/// channels are re-seeded from the upsampled disparities when
/// `stereo_seed` is set.
fn transfer(
    state: &LatentState,
    mixture: &PlanarImage,
    op: MixtureOperator,
    cfg: &SolverConfig,
    stereo_seed: bool,
) -> Result<LatentState> {
    let level = state.level - 1;
    let (w, h) = (mixture.width(), mixture.height());
    let d_left = resize_disparity(&state.d_left, w, h, 2.0)?;
    let d_right = resize_disparity(&state.d_right, w, h, 2.0)?;
    let (left, right) = if stereo_seed && has_free_channels(op) {
        colorize_anaglyph(mixture, &d_left, &d_right)?
    } else {
        (
            resize_bilinear(&state.left, w, h)?,
            resize_bilinear(&state.right, w, h)?,
        )
    };
    let mut out = LatentState::new(left, right, d_left, d_right, level)?;
    make_feasible(&mut out, mixture, op, cfg.d_max_at(level))?;
    Ok(out)
}

#[derive(Debug, Default)]
struct StepStats {
    clamped_samples: usize,
    clamped_disparities: usize,
    residual: f64,
}

fn scaled(g: &PlanarImage) -> Vec<f64> {
    let n = g.len() as f64;
    g.data().iter().map(|v| v * n).collect()
}

/// One update from precomputed gradients. Gradients of the mean energy are
/// rescaled by each field's element count so the optimizer sees per-element
/// magnitudes independent of resolution.
fn apply_update(
    state: &LatentState,
    grads: &LatentGradients,
    mixture: &PlanarImage,
    op: MixtureOperator,
    cfg: &SolverConfig,
    eta: f64,
) -> Result<(LatentState, StepStats)> {
    let mut next = state.clone();
    let (rho, eps) = (cfg.rms_decay, cfg.rms_epsilon);
    rmsprop_update(
        next.left.data_mut(),
        &mut next.moments.left,
        &scaled(&grads.left),
        eta,
        rho,
        eps,
    );
    rmsprop_update(
        next.right.data_mut(),
        &mut next.moments.right,
        &scaled(&grads.right),
        eta,
        rho,
        eps,
    );
    rmsprop_update(
        next.d_left.values_mut(),
        &mut next.moments.d_left,
        &scaled(&grads.d_left),
        eta,
        rho,
        eps,
    );
    rmsprop_update(
        next.d_right.values_mut(),
        &mut next.moments.d_right,
        &scaled(&grads.d_right),
        eta,
        rho,
        eps,
    );
    if next
        .d_left
        .values()
        .iter()
        .chain(next.d_right.values())
        .any(|v| !v.is_finite())
    {
        return Err(Error::Diverged {
            level: state.level,
            iteration: 0,
            reason: "non-finite disparity update".into(),
        });
    }
    let (clamped_samples, clamped_disparities) =
        make_feasible(&mut next, mixture, op, cfg.d_max_at(state.level))?;
    let residual = constraint_residual(op, mixture, &next.left, &next.right)?;
    Ok((
        next,
        StepStats {
            clamped_samples,
            clamped_disparities,
            residual,
        },
    ))
}

fn evaluate(
    state: &LatentState,
    mixture: &PlanarImage,
    op: MixtureOperator,
    w: &LossWeights,
) -> Result<(LossBreakdown, LatentGradients)> {
    let (b, g) = total_loss(state, mixture, op, w)?;
    if !b.is_finite() || !g.is_finite() {
        return Err(Error::Diverged {
            level: state.level,
            iteration: 0,
            reason: "non-finite loss or gradient".into(),
        });
    }
    Ok((b, g))
}

/// One RMSProp step with the configured step size. `mixture` must be the
/// mixture at `state.level`.
pub fn step(
    state: &LatentState,
    mixture: &PlanarImage,
    op: MixtureOperator,
    cfg: &SolverConfig,
) -> Result<(LatentState, LossBreakdown)> {
    let (_, grads) = evaluate(state, mixture, op, &cfg.weights)?;
    let (next, _) = apply_update(state, &grads, mixture, op, cfg, cfg.step_size)?;
    let (b, _) = evaluate(&next, mixture, op, &cfg.weights)?;
    Ok((next, b))
}

struct Run<'a> {
    op: MixtureOperator,
    cfg: &'a SolverConfig,
    trace: Vec<TraceEntry>,
    diag: Diagnostics,
    /// Multiplier on the schedule, halved on divergence.
    eta_scale: f64,
}

impl Run<'_> {
    fn optimize_level(
        &mut self,
        mut state: LatentState,
        mixture: &PlanarImage,
    ) -> Result<LatentState> {
        state.reset_moments();
        let w = &self.cfg.weights;
        let (mut loss, mut grads) = evaluate(&state, mixture, self.op, w)?;
        let mut best = (loss.total, state.clone());
        for it in 0..self.cfg.iters_per_level {
            let attempt = |eta: f64| -> Result<_> {
                let (next, stats) = apply_update(&state, &grads, mixture, self.op, self.cfg, eta)?;
                let (b, g) = evaluate(&next, mixture, self.op, w)?;
                Ok((next, stats, b, g))
            };
            let eta = self.cfg.step_at(it) * self.eta_scale;
            let (next, stats, b, g, eta) = match attempt(eta) {
                Ok((n, s, b, g)) => (n, s, b, g, eta),
                Err(Error::Diverged { .. }) if self.diag.retries == 0 => {
                    self.diag.retries += 1;
                    self.eta_scale *= 0.5;
                    let eta = eta * 0.5;
                    match attempt(eta) {
                        Ok((n, s, b, g)) => (n, s, b, g, eta),
                        Err(Error::Diverged { reason, .. }) => {
                            return Err(Error::Diverged {
                                level: state.level,
                                iteration: it,
                                reason,
                            })
                        }
                        Err(e) => return Err(e),
                    }
                }
                Err(Error::Diverged { reason, .. }) => {
                    return Err(Error::Diverged {
                        level: state.level,
                        iteration: it,
                        reason,
                    })
                }
                Err(e) => return Err(e),
            };
            self.diag.clamped_samples += stats.clamped_samples;
            self.diag.clamped_disparities += stats.clamped_disparities;
            self.diag.max_step_residual = self.diag.max_step_residual.max(stats.residual);
            self.trace.push(TraceEntry {
                phase: TracePhase::Iterate,
                level: state.level,
                iteration: it,
                step_size: eta,
                loss: b,
            });
            state = next;
            loss = b;
            grads = g;
            if loss.total < best.0 {
                best = (loss.total, state.clone());
            }
        }
        Ok(best.1)
    }
}

fn solve_with(
    mixture: &PlanarImage,
    op: MixtureOperator,
    cfg: &SolverConfig,
    stereo_seed: bool,
) -> Result<Solution> {
    cfg.validate()?;
    let pyramid = build_pyramid(mixture, cfg.levels)?;
    let coarse = pyramid.len() - 1;
    let init = init_at_level(&pyramid[coarse], op, cfg, coarse, stereo_seed)?;

    let mut baseline = init.clone();
    while baseline.level > 0 {
        baseline = transfer(
            &baseline,
            &pyramid[baseline.level - 1],
            op,
            cfg,
            stereo_seed,
        )?;
    }
    let (base_loss, _) = evaluate(&baseline, mixture, op, &cfg.weights)?;

    let mut run = Run {
        op,
        cfg,
        trace: vec![TraceEntry {
            phase: TracePhase::Baseline,
            level: 0,
            iteration: 0,
            step_size: 0.0,
            loss: base_loss,
        }],
        diag: Diagnostics {
            ill_posed: is_ill_posed(mixture),
            initial_total: base_loss.total,
            ..Diagnostics::default()
        },
        eta_scale: 1.0,
    };

    let mut state = init;
    loop {
        let level = state.level;
        state = run.optimize_level(state, &pyramid[level])?;
        if let Some(last) = run.trace.last() {
            log::info!("level {level} done: total loss {:.6}", last.loss.total);
        }
        if state.level == 0 {
            break;
        }
        let warp = |s: &LatentState| {
            total_loss_value(s, &pyramid[s.level], op, &cfg.weights)
                .map(|b| b.warp_left + b.warp_right)
        };
        let warp_before = warp(&state)?;
        state = transfer(&state, &pyramid[state.level - 1], op, cfg, stereo_seed)?;
        run.diag.level_transfers.push(LevelTransfer {
            level: state.level,
            warp_before,
            warp_after: warp(&state)?,
        });
    }

    let (mut final_loss, _) = evaluate(&state, mixture, op, &cfg.weights)?;
    if final_loss.total > base_loss.total {
        state = baseline.clone();
        final_loss = base_loss;
        run.diag.fell_back_to_initial = true;
    }
    run.diag.final_total = final_loss.total;
    run.diag.final_residual = constraint_residual(op, mixture, &state.left, &state.right)?;
    run.trace.push(TraceEntry {
        phase: TracePhase::Final,
        level: 0,
        iteration: cfg.iters_per_level,
        step_size: 0.0,
        loss: final_loss,
    });
    if run.diag.ill_posed {
        log::warn!("mixture is textureless; disparities are not identifiable");
    }
    Ok(Solution {
        left: state.left,
        right: state.right,
        d_left: state.d_left,
        d_right: state.d_right,
        loss_trace: run.trace,
        diagnostics: run.diag,
        initial: baseline,
    })
}

/// Full joint recovery. Deterministic for a given input and config.
pub fn solve(mixture: &PlanarImage, op: MixtureOperator, cfg: &SolverConfig) -> Result<Solution> {
    solve_with(mixture, op, cfg, true)
}

/// Separation only: stereo terms switched off and no disparity-driven
/// seeding, so the disparity fields never move from their initial values.
pub fn ablate_separation_only(
    mixture: &PlanarImage,
    op: MixtureOperator,
    cfg: &SolverConfig,
) -> Result<Solution> {
    let cfg = SolverConfig {
        weights: cfg.weights.separation_only(),
        ..*cfg
    };
    solve_with(mixture, op, &cfg, false)
}

#[cfg(test)]
mod tests;
