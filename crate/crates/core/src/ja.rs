//! Joint alignment with a memory target.
//!
//! Each batch is aligned against a target mean built from the batch's own
//! warped frames plus decayed accumulators holding every earlier warp. The
//! accumulators are multiplied by `lambda` at the end of each epoch, so the
//! target drifts smoothly instead of jumping from batch to batch.
//!
//! Transforms start at the identity and are optimized directly, one
//! adaptive-moment optimizer per frame, first as affine maps and then as
//! homographies warm-started from the affine result.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::optim::{step_schedule, Adam};
use crate::robust::{d_rho_ja_unchecked, rho_ja_unchecked, DEFAULT_BETA};
use crate::transform::{self, parameter_scales, TransformKind, TransformParams};
use crate::warp::{self, scene_bounds, Frame, SceneDomain, Taps, WarpGeometry, WarpedFrame};
use crate::{Error, Result};

/// λ-weighted sums of masked warped pixels (`g`) and of masks (`m`).
#[derive(Debug, Clone, PartialEq)]
pub struct Accumulators {
    pub channels: usize,
    pub g: Vec<f64>,
    pub m: Vec<f64>,
}

impl Accumulators {
    pub fn new(channels: usize, scene: &SceneDomain) -> Self {
        Self {
            channels,
            g: vec![0.0; channels * scene.pixels()],
            m: vec![0.0; scene.pixels()],
        }
    }

    pub fn add(&mut self, warp: &WarpedFrame) {
        let n = self.m.len();
        let (x0, y0, x1, y1) = warp.bbox;
        let width = warp.scene_width;
        for y in y0..y1 {
            for x in x0..x1 {
                let i = y * width + x;
                let mk = warp.mask[i];
                if mk == 0.0 {
                    continue;
                }
                self.m[i] += mk;
                for c in 0..self.channels {
                    self.g[c * n + i] += mk * warp.image[c * n + i];
                }
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.g.iter_mut().for_each(|v| *v *= factor);
        self.m.iter_mut().for_each(|v| *v *= factor);
    }

    /// `G / M` where `M > 0`.
    pub fn mean(&self) -> Target {
        let n = self.m.len();
        let mut mu = vec![0.0; self.channels * n];
        for i in 0..n {
            if self.m[i] > 0.0 {
                for c in 0..self.channels {
                    mu[c * n + i] = self.g[c * n + i] / self.m[i];
                }
            }
        }
        Target {
            channels: self.channels,
            mu,
            weight: self.m.clone(),
        }
    }
}

/// Alignment target on the scene domain. Pixels with zero weight are invalid
/// and carry `mu = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Target {
    pub channels: usize,
    pub mu: Vec<f64>,
    pub weight: Vec<f64>,
}

impl Target {
    #[inline]
    pub fn is_valid(&self, i: usize) -> bool {
        self.weight[i] > 0.0
    }

    pub fn pixels(&self) -> usize {
        self.weight.len()
    }
}

/// Target mean of the accumulators and the current batch:
/// `(G + Σ Mⁿ gⁿ) / (M + Σ Mⁿ)`.
pub fn target_mean(acc: &Accumulators, batch: &[WarpedFrame]) -> Target {
    let n = acc.m.len();
    let mut g = acc.g.clone();
    let mut weight = acc.m.clone();
    for warp in batch {
        for i in 0..n {
            let mk = warp.mask[i];
            if mk == 0.0 {
                continue;
            }
            weight[i] += mk;
            for c in 0..acc.channels {
                g[c * n + i] += mk * warp.image[c * n + i];
            }
        }
    }
    for i in 0..n {
        for c in 0..acc.channels {
            g[c * n + i] = if weight[i] > 0.0 {
                g[c * n + i] / weight[i]
            } else {
                0.0
            };
        }
    }
    Target {
        channels: acc.channels,
        mu: g,
        weight,
    }
}

/// One frame's term of the alignment loss.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameTerm {
    pub loss: f64,
    /// Empty unless requested, zero for dropped frames.
    pub gradient: Vec<f64>,
    /// Sum of the frame's mask over valid target pixels.
    pub mask_sum: f64,
    pub dropped: bool,
}

/// Mask-weighted mean robust residual of one frame against `target`, and
/// optionally its gradient with respect to θ. The target is held constant.
/// Frames whose mask sum falls below `coverage_floor · h · w` are dropped.
pub fn frame_term(
    frame: &Frame,
    params: &TransformParams,
    target: &Target,
    scene: &SceneDomain,
    beta: f64,
    coverage_floor: f64,
    with_gradient: bool,
) -> Result<FrameTerm> {
    warp::check_frame(frame, scene)?;
    if target.pixels() != scene.pixels() || target.channels != frame.channels() {
        return Err(Error::argument("target does not match the scene domain"));
    }
    if !(beta > 0.0) {
        return Err(Error::argument("beta must be positive"));
    }
    let geo = if with_gradient {
        WarpGeometry::with_derivatives(params, scene)?
    } else {
        WarpGeometry::new(&transform::realize(params)?, scene)?
    };
    let d = params.dim();
    let channels = frame.channels();
    let n = scene.pixels();

    let mut num = 0.0;
    let mut den = 0.0;
    let mut d_num = vec![0.0; d];
    let mut d_den = vec![0.0; d];
    let mut dp = vec![[0.0; 2]; d];
    let mut d_g = vec![0.0; d];

    let (x0, y0, x1, y1) = geo.footprint(scene);
    for sy in y0..y1 {
        for sx in x0..x1 {
            let i = sy * scene.width + sx;
            if !target.is_valid(i) {
                continue;
            }
            let Some(pre) = geo.preimage(sx as f64, sy as f64) else {
                continue;
            };
            let taps = Taps::new(pre.p[0], pre.p[1], frame.width(), frame.height());
            if taps.len == 0 {
                continue;
            }
            let mask = taps.coverage();
            if with_gradient {
                geo.preimage_derivatives(&pre, &mut dp);
                d_g.iter_mut().for_each(|v| *v = 0.0);
            }
            let mut rho_sum = 0.0;
            for c in 0..channels {
                let plane = frame.plane(c);
                let r = taps.value(plane) - target.mu[c * n + i];
                rho_sum += rho_ja_unchecked(r, beta);
                if with_gradient {
                    let grad = taps.value_gradient(plane);
                    let w = d_rho_ja_unchecked(r, beta);
                    for k in 0..d {
                        d_g[k] += w * (grad[0] * dp[k][0] + grad[1] * dp[k][1]);
                    }
                }
            }
            num += mask * rho_sum;
            den += mask;
            if with_gradient {
                let dm = taps.coverage_gradient();
                for k in 0..d {
                    let dmask = dm[0] * dp[k][0] + dm[1] * dp[k][1];
                    d_num[k] += dmask * rho_sum + mask * d_g[k];
                    d_den[k] += dmask;
                }
            }
        }
    }

    let floor = coverage_floor * scene.frame_pixels() as f64;
    if den <= 0.0 || den < floor {
        return Ok(FrameTerm {
            loss: 0.0,
            gradient: if with_gradient { vec![0.0; d] } else { Vec::new() },
            mask_sum: den,
            dropped: true,
        });
    }
    let c = channels as f64;
    let loss = num / (c * den);
    let gradient = if with_gradient {
        (0..d)
            .map(|k| (d_num[k] * den - num * d_den[k]) / (c * den * den))
            .collect()
    } else {
        Vec::new()
    };
    Ok(FrameTerm {
        loss,
        gradient,
        mask_sum: den,
        dropped: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchLoss {
    pub loss: f64,
    pub dropped: usize,
}

/// Mean of the per-frame terms over the frames that were not dropped.
pub fn batch_loss(
    batch: &[(&Frame, &TransformParams)],
    target: &Target,
    scene: &SceneDomain,
    beta: f64,
    coverage_floor: f64,
) -> Result<BatchLoss> {
    let mut total = 0.0;
    let mut kept = 0usize;
    let mut dropped = 0usize;
    for (frame, params) in batch {
        let term = frame_term(frame, params, target, scene, beta, coverage_floor, false)?;
        if term.dropped {
            dropped += 1;
        } else {
            total += term.loss;
            kept += 1;
        }
    }
    if kept == 0 {
        return Err(Error::DegenerateBatch { dropped });
    }
    Ok(BatchLoss {
        loss: total / kept as f64,
        dropped,
    })
}

/// Gradient of one frame's loss term with respect to its parameters. Dropped
/// frames get a zero vector.
pub fn loss_gradient(
    frame: &Frame,
    params: &TransformParams,
    target: &Target,
    scene: &SceneDomain,
    beta: f64,
    coverage_floor: f64,
) -> Result<Vec<f64>> {
    Ok(frame_term(frame, params, target, scene, beta, coverage_floor, true)?.gradient)
}

#[derive(Debug, Clone, PartialEq)]
pub struct JaConfig {
    pub batch_size: usize,
    pub epochs_affine: usize,
    pub epochs_homography: usize,
    /// Initial step size, in units of [`parameter_scales`]. Halved after each
    /// third of a stage.
    pub step_size: f64,
    pub beta: f64,
    pub lambda: f64,
    /// Minimum mask sum, as a fraction of `h · w`, for a frame to count.
    pub coverage_floor: f64,
    pub pad: f64,
    pub seed: u64,
    /// Add each batch's warps to the accumulators.
    pub accumulate: bool,
    /// Accumulate warps made with the post-step parameters instead of the
    /// ones that built the batch target.
    pub accumulate_post_step: bool,
    pub serial: bool,
}

impl Default for JaConfig {
    fn default() -> Self {
        Self {
            batch_size: 8,
            epochs_affine: 200,
            epochs_homography: 100,
            step_size: 0.05,
            beta: DEFAULT_BETA,
            lambda: 0.9,
            coverage_floor: 0.01,
            pad: 3.0,
            seed: 0,
            accumulate: true,
            accumulate_post_step: false,
            serial: false,
        }
    }
}

impl JaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::argument("batch_size must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.lambda) {
            return Err(Error::argument(format!(
                "lambda must be in [0, 1), got {}",
                self.lambda
            )));
        }
        if !(self.beta > 0.0) || !(self.step_size > 0.0) {
            return Err(Error::argument("beta and step_size must be positive"));
        }
        if !(0.0..1.0).contains(&self.coverage_floor) {
            return Err(Error::argument("coverage_floor must be in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Affine,
    Homography,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Affine => "affine",
            Stage::Homography => "homography",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub stage: Stage,
    /// Mean batch loss over the epoch.
    pub loss: f64,
    /// Mean over frames of the warped mask sum divided by `h · w`.
    pub mean_coverage: f64,
    pub dropped_frames: usize,
}

#[derive(Debug, Clone)]
pub struct AlignmentState {
    pub params: Vec<TransformParams>,
    pub acc: Accumulators,
    pub epoch: usize,
    pub lambda: f64,
    pub optimizers: Vec<Adam>,
    pub seed: u64,
    pub scene: SceneDomain,
    pub history: Vec<EpochLog>,
}

impl AlignmentState {
    pub fn new(
        n_frames: usize,
        channels: usize,
        kind: TransformKind,
        scene: SceneDomain,
        lambda: f64,
        seed: u64,
    ) -> Self {
        Self {
            params: vec![TransformParams::identity(kind); n_frames],
            acc: Accumulators::new(channels, &scene),
            epoch: 0,
            lambda,
            optimizers: vec![Adam::new(kind.dim()); n_frames],
            seed,
            scene,
            history: Vec::new(),
        }
    }

    pub fn dropped_total(&self) -> usize {
        self.history.iter().map(|h| h.dropped_frames).sum()
    }

    pub fn matrices(&self) -> Result<Vec<transform::Matrix3>> {
        self.params.iter().map(transform::realize).collect()
    }
}

/// Multiplies both accumulators by λ and advances the epoch counter.
pub fn epoch_decay(state: &mut AlignmentState) {
    state.acc.scale(state.lambda);
    state.epoch += 1;
}

pub fn accumulate_batch(state: &mut AlignmentState, batch: &[WarpedFrame]) {
    for warp in batch {
        state.acc.add(warp);
    }
}

/// Warps every frame by its current transform.
pub fn warp_all(
    frames: &[Frame],
    params: &[TransformParams],
    scene: &SceneDomain,
    serial: bool,
) -> Result<Vec<WarpedFrame>> {
    let one = |(f, p): (&Frame, &TransformParams)| -> Result<WarpedFrame> {
        warp::warp_frame(f, &transform::realize(p)?, scene)
    };
    if serial {
        frames.iter().zip(params).map(one).collect()
    } else {
        frames.par_iter().zip(params.par_iter()).map(one).collect()
    }
}

/// Jointly aligns `frames`: an affine stage followed by a homography stage.
pub fn fit(frames: &[Frame], cfg: &JaConfig) -> Result<AlignmentState> {
    fit_with_observer(frames, cfg, |_, _| {})
}

/// [`fit`], calling `observer` after every epoch.
pub fn fit_with_observer(
    frames: &[Frame],
    cfg: &JaConfig,
    observer: impl FnMut(&EpochLog, &AlignmentState),
) -> Result<AlignmentState> {
    fit_from(frames, cfg, None, observer)
}

/// [`fit_with_observer`] starting from the given affine transforms instead
/// of the identity.
pub fn fit_from(
    frames: &[Frame],
    cfg: &JaConfig,
    init: Option<Vec<TransformParams>>,
    mut observer: impl FnMut(&EpochLog, &AlignmentState),
) -> Result<AlignmentState> {
    cfg.validate()?;
    if frames.len() < 2 {
        return Err(Error::argument("joint alignment needs at least two frames"));
    }
    let (c, h, w) = frames[0].dims();
    if frames.iter().any(|f| f.dims() != (c, h, w)) {
        return Err(Error::argument("all frames must share channels and size"));
    }
    let scene = scene_bounds((h, w), cfg.pad)?;
    let mut state = AlignmentState::new(
        frames.len(),
        c,
        TransformKind::Affine,
        scene,
        cfg.lambda,
        cfg.seed,
    );
    if let Some(init) = init {
        if init.len() != frames.len() || init.iter().any(|p| p.kind != TransformKind::Affine) {
            return Err(Error::argument("initial transforms must be one affine per frame"));
        }
        state.params = init;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let affine_step = cfg.step_size;
    run_stage(frames, cfg, &mut state, &mut rng, Stage::Affine, affine_step, cfg.epochs_affine, &mut observer)?;

    if cfg.epochs_homography > 0 {
        state.params = state
            .params
            .iter()
            .map(TransformParams::to_homography)
            .collect::<Result<_>>()?;
        state.optimizers = vec![Adam::new(TransformKind::Homography.dim()); frames.len()];
        // Refinement picks up the step where the affine schedule ended, so
        // the fresh optimizers do not kick converged frames apart.
        let refine_step = if cfg.epochs_affine > 0 {
            step_schedule(affine_step, cfg.epochs_affine - 1, cfg.epochs_affine)
        } else {
            affine_step
        };
        run_stage(
            frames,
            cfg,
            &mut state,
            &mut rng,
            Stage::Homography,
            refine_step,
            cfg.epochs_homography,
            &mut observer,
        )?;
    }
    Ok(state)
}

fn run_stage(
    frames: &[Frame],
    cfg: &JaConfig,
    state: &mut AlignmentState,
    rng: &mut ChaCha8Rng,
    stage: Stage,
    step_size: f64,
    epochs: usize,
    observer: &mut impl FnMut(&EpochLog, &AlignmentState),
) -> Result<()> {
    let scene = state.scene;
    let (_, h, w) = frames[0].dims();
    let kind = state.params[0].kind;
    let scales = parameter_scales(kind, h, w);
    let mut order: Vec<usize> = (0..frames.len()).collect();

    for e in 0..epochs {
        let base_step = step_schedule(step_size, e, epochs);
        let lr: Vec<f64> = scales.iter().map(|s| s * base_step).collect();
        order.shuffle(rng);

        let mut loss_sum = 0.0;
        let mut loss_batches = 0usize;
        let mut coverage_sum = 0.0;
        let mut dropped = 0usize;
        let mut degenerate = 0usize;
        let n_batches = order.len().div_ceil(cfg.batch_size);

        for chunk in order.chunks(cfg.batch_size) {
            let batch_frames: Vec<Frame> = chunk.iter().map(|&i| frames[i].clone()).collect();
            let batch_params: Vec<TransformParams> =
                chunk.iter().map(|&i| state.params[i].clone()).collect();
            let warps = warp_all(&batch_frames, &batch_params, &scene, cfg.serial)?;
            coverage_sum += warps
                .iter()
                .map(|wf| wf.mask_sum() / scene.frame_pixels() as f64)
                .sum::<f64>();
            let target = target_mean(&state.acc, &warps);

            let term = |(f, p): (&Frame, &TransformParams)| {
                frame_term(f, p, &target, &scene, cfg.beta, cfg.coverage_floor, true)
            };
            let terms: Vec<FrameTerm> = if cfg.serial {
                batch_frames.iter().zip(&batch_params).map(term).collect::<Result<_>>()?
            } else {
                batch_frames
                    .par_iter()
                    .zip(batch_params.par_iter())
                    .map(term)
                    .collect::<Result<_>>()?
            };

            let kept: Vec<_> = terms.iter().filter(|t| !t.dropped).collect();
            dropped += terms.len() - kept.len();
            if kept.is_empty() {
                degenerate += 1;
            } else {
                loss_sum += kept.iter().map(|t| t.loss).sum::<f64>() / kept.len() as f64;
                loss_batches += 1;
                for (&i, t) in chunk.iter().zip(&terms) {
                    if !t.dropped {
                        state.optimizers[i].step(&mut state.params[i].theta, &t.gradient, &lr);
                    }
                }
            }

            if cfg.accumulate {
                if cfg.accumulate_post_step {
                    let post: Vec<TransformParams> =
                        chunk.iter().map(|&i| state.params[i].clone()).collect();
                    let post_warps = warp_all(&batch_frames, &post, &scene, cfg.serial)?;
                    accumulate_batch(state, &post_warps);
                } else {
                    accumulate_batch(state, &warps);
                }
            }
        }

        if degenerate == n_batches {
            return Err(Error::Divergence {
                stage: stage.as_str(),
                epoch: e,
                detail: format!(
                    "every batch fell below the coverage floor ({dropped} frames dropped, \
                     mean coverage {:.4})",
                    coverage_sum / frames.len() as f64
                ),
            });
        }
        epoch_decay(state);

        let log = EpochLog {
            epoch: state.epoch,
            stage,
            loss: if loss_batches > 0 {
                loss_sum / loss_batches as f64
            } else {
                f64::NAN
            },
            mean_coverage: coverage_sum / frames.len() as f64,
            dropped_frames: dropped,
        };
        log::debug!(
            "{} epoch {}: loss {:.6} coverage {:.4} dropped {}",
            stage.as_str(),
            log.epoch,
            log.loss,
            log.mean_coverage,
            log.dropped_frames
        );
        observer(&log, state);
        state.history.push(log);
    }
    Ok(())
}
