//! Per-frame backgrounds from panoramic moments, and alignment of frames
//! that took no part in the joint fit.

use rayon::prelude::*;

use crate::ja::{frame_term, Target};
use crate::moments::PanoramicMoments;
use crate::optim::{step_schedule, Adam};
use crate::transform::{self, parameter_scales, Matrix3, TransformKind, TransformParams};
use crate::warp::{check_frame, Frame, SceneDomain, Taps};
use crate::{Error, Result};

/// Panoramic moments pulled back onto a frame's own `h × w` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct UnwarpedMoments {
    pub mean: Frame,
    pub variance: Frame,
    /// `true` where every contributing scene pixel is covered.
    pub valid: Vec<bool>,
}

fn moments_target(m: &PanoramicMoments) -> Target {
    Target {
        channels: m.channels,
        mu: m.mu_r.clone(),
        weight: m.count.iter().map(|&c| c as f64).collect(),
    }
}

fn check_moments(m: &PanoramicMoments, scene: &SceneDomain) -> Result<()> {
    if !m.matches(scene) {
        return Err(Error::argument(format!(
            "moments are {}x{}, scene is {}x{}",
            m.height, m.width, scene.height, scene.width
        )));
    }
    Ok(())
}

/// Samples the moments at `T(x′)` for every frame pixel `x′`.
pub fn unwarp_moments(
    m: &PanoramicMoments,
    p: &TransformParams,
    scene: &SceneDomain,
) -> Result<UnwarpedMoments> {
    check_moments(m, scene)?;
    unwarp_with(m, &transform::realize(p)?, scene)
}

pub(crate) fn unwarp_with(
    m: &PanoramicMoments,
    t: &Matrix3,
    scene: &SceneDomain,
) -> Result<UnwarpedMoments> {
    let (h, w) = (scene.frame_height, scene.frame_width);
    let c = scene.frame_center();
    let origin = scene.origin();
    let n = m.pixels();
    let mut mean = vec![0.0; m.channels * h * w];
    let mut variance = vec![0.0; m.channels * h * w];
    let mut valid = vec![false; h * w];

    for y in 0..h {
        for x in 0..w {
            let Ok(s) = transform::apply(t, [x as f64 - c[0], y as f64 - c[1]]) else {
                continue;
            };
            let taps = Taps::new(s[0] + origin[0], s[1] + origin[1], scene.width, scene.height);
            let contributing = (0..taps.len).filter(|&k| taps.weight[k] > 0.0);
            let covered = taps.coverage() > 1.0 - 1e-9
                && contributing.clone().all(|k| m.count[taps.index[k]] > 0);
            if !covered {
                continue;
            }
            let i = y * w + x;
            valid[i] = true;
            for ch in 0..m.channels {
                let plane = &m.mu_r[ch * n..(ch + 1) * n];
                let vplane = &m.v_r[ch * n..(ch + 1) * n];
                mean[ch * h * w + i] = taps.sample(plane).clamp(0.0, 1.0);
                variance[ch * h * w + i] = taps.sample(vplane).clamp(0.0, 1.0);
            }
        }
    }
    Ok(UnwarpedMoments {
        mean: Frame::new(m.channels, h, w, mean)?,
        variance: Frame::new(m.channels, h, w, variance)?,
        valid,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Background {
    pub image: Frame,
    /// Pixels with no panoramic evidence; they hold the input value.
    pub invalid: Vec<bool>,
}

impl Background {
    pub fn invalid_fraction(&self) -> f64 {
        self.invalid.iter().filter(|&&b| b).count() as f64 / self.invalid.len() as f64
    }
}

/// Unwarped robust mean, with uncovered pixels passed through from `frame`.
pub fn estimate_background(
    frame: &Frame,
    p: &TransformParams,
    m: &PanoramicMoments,
    scene: &SceneDomain,
) -> Result<Background> {
    check_frame(frame, scene)?;
    if frame.channels() != m.channels {
        return Err(Error::argument("frame and moments differ in channels"));
    }
    let un = unwarp_moments(m, p, scene)?;
    let (channels, h, w) = frame.dims();
    let mut image = un.mean;
    for y in 0..h {
        for x in 0..w {
            if !un.valid[y * w + x] {
                for c in 0..channels {
                    image.set(c, y, x, frame.get(c, y, x));
                }
            }
        }
    }
    Ok(Background {
        image,
        invalid: un.valid.iter().map(|v| !v).collect(),
    })
}

/// Mean absolute difference over valid pixels and channels. `None` when no
/// pixel is valid.
pub fn masked_mean_abs_residual(frame: &Frame, bg: &Background) -> Option<f64> {
    let (channels, h, w) = frame.dims();
    let mut sum = 0.0;
    let mut count = 0usize;
    for y in 0..h {
        for x in 0..w {
            if bg.invalid[y * w + x] {
                continue;
            }
            for c in 0..channels {
                sum += (frame.get(c, y, x) - bg.image.get(c, y, x)).abs();
            }
            count += channels;
        }
    }
    (count > 0).then(|| sum / count as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NovelConfig {
    pub kind: TransformKind,
    pub beta: f64,
    pub coverage_floor: f64,
    pub step_size: f64,
    /// Descent iterations per start.
    pub iterations: usize,
    /// Refinement iterations for the homography stage.
    pub homography_iterations: usize,
    pub serial: bool,
}

impl Default for NovelConfig {
    fn default() -> Self {
        Self {
            kind: TransformKind::Affine,
            beta: crate::robust::DEFAULT_BETA,
            coverage_floor: 0.01,
            step_size: 0.05,
            iterations: 150,
            homography_iterations: 100,
            serial: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NovelAlignment {
    pub params: TransformParams,
    pub loss: f64,
    /// Valid mask sum at the returned transform divided by `h · w`.
    pub coverage: f64,
}

#[derive(Debug, Clone)]
struct Best {
    theta: Vec<f64>,
    loss: f64,
    coverage: f64,
}

/// Adam descent from `start`, keeping the best iterate seen (including the
/// start itself). `None` if every iterate was below the coverage floor.
fn descend(
    frame: &Frame,
    start: TransformParams,
    target: &Target,
    scene: &SceneDomain,
    cfg: &NovelConfig,
    iterations: usize,
) -> Result<(Option<Best>, f64)> {
    let scales = parameter_scales(start.kind, scene.frame_height, scene.frame_width);
    let mut p = start;
    let mut adam = Adam::new(p.dim());
    let mut best: Option<Best> = None;
    let mut best_coverage = 0.0f64;
    let area = scene.frame_pixels() as f64;
    for it in 0..=iterations {
        let term = frame_term(frame, &p, target, scene, cfg.beta, cfg.coverage_floor, true)?;
        best_coverage = best_coverage.max(term.mask_sum / area);
        if term.dropped {
            // Nothing to descend on.
            break;
        }
        if best.as_ref().map_or(true, |b| term.loss < b.loss) {
            best = Some(Best {
                theta: p.theta.clone(),
                loss: term.loss,
                coverage: term.mask_sum / area,
            });
        }
        if it == iterations {
            break;
        }
        let step = step_schedule(cfg.step_size, it, iterations);
        let lr: Vec<f64> = scales.iter().map(|s| s * step).collect();
        adam.step(&mut p.theta, &term.gradient, &lr);
    }
    Ok((best, best_coverage))
}

/// Translation starts: the identity plus a grid of ±¼ frame at ⅛-frame
/// steps.
pub fn translation_starts(h: usize, w: usize) -> Vec<(f64, f64)> {
    let steps = [-2.0, -1.0, 0.0, 1.0, 2.0];
    let mut starts = vec![(0.0, 0.0)];
    for sy in steps {
        for sx in steps {
            if sx == 0.0 && sy == 0.0 {
                continue;
            }
            starts.push((sx * w as f64 / 8.0, sy * h as f64 / 8.0));
        }
    }
    starts
}

/// Aligns a frame to frozen panoramic moments by minimizing its alignment
/// loss against the trimmed mean. Multi-start over a translation grid; the
/// lowest loss wins.
pub fn align_novel_frame(
    f: &Frame,
    m: &PanoramicMoments,
    scene: &SceneDomain,
    cfg: &NovelConfig,
) -> Result<NovelAlignment> {
    check_frame(f, scene)?;
    check_moments(m, scene)?;
    if f.channels() != m.channels {
        return Err(Error::argument("frame and moments differ in channels"));
    }
    let target = moments_target(m);
    let starts = translation_starts(scene.frame_height, scene.frame_width);
    let run = |&(tx, ty): &(f64, f64)| {
        let start = TransformParams::affine(vec![0.0, 0.0, tx, 0.0, 0.0, ty])?;
        descend(f, start, &target, scene, cfg, cfg.iterations)
    };
    let results: Vec<(Option<Best>, f64)> = if cfg.serial {
        starts.iter().map(run).collect::<Result<_>>()?
    } else {
        starts.par_iter().map(run).collect::<Result<_>>()?
    };

    let mut best: Option<Best> = None;
    let mut best_coverage = 0.0f64;
    for (b, cov) in results {
        best_coverage = best_coverage.max(cov);
        if let Some(b) = b {
            if best.as_ref().map_or(true, |cur| b.loss < cur.loss) {
                best = Some(b);
            }
        }
    }
    let best = best.ok_or(Error::NoOverlap {
        coverage: best_coverage,
    })?;
    let affine = TransformParams::affine(best.theta)?;

    if cfg.kind == TransformKind::Homography && cfg.homography_iterations > 0 {
        let start = affine.to_homography()?;
        let (refined, _) = descend(f, start.clone(), &target, scene, cfg, cfg.homography_iterations)?;
        // The zero-parameter start is always a candidate, so this only
        // improves on the affine result.
        let refined = refined.ok_or(Error::NoOverlap {
            coverage: best.coverage,
        })?;
        return Ok(NovelAlignment {
            params: TransformParams::homography(refined.theta, start.base)?,
            loss: refined.loss,
            coverage: refined.coverage,
        });
    }
    Ok(NovelAlignment {
        params: affine,
        loss: best.loss,
        coverage: best.coverage,
    })
}
