//! Trimmed first and second central moments of the scene-domain pixel
//! stacks.

use rayon::prelude::*;

use crate::warp::{SceneDomain, WarpedFrame};
use crate::{Error, Result};

pub const DEFAULT_ALPHA: f64 = 0.3;

/// Trimmed panoramic mean and variance. Pixels with `count == 0` carry
/// zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct PanoramicMoments {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub alpha: f64,
    pub mu_r: Vec<f64>,
    pub v_r: Vec<f64>,
    pub count: Vec<u32>,
}

impl PanoramicMoments {
    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn is_valid(&self, i: usize) -> bool {
        self.count[i] > 0
    }

    pub fn matches(&self, scene: &SceneDomain) -> bool {
        self.height == scene.height && self.width == scene.width
    }
}

/// Number of entries dropped from each end of a stack of `n`.
pub fn trim_count(n: usize, alpha: f64) -> usize {
    // The small slack keeps products such as 0.3 * 10 from rounding down.
    (alpha * n as f64 + 1e-9).floor() as usize
}

fn check_alpha(alpha: f64) -> Result<()> {
    if (0.0..0.5).contains(&alpha) {
        Ok(())
    } else {
        Err(Error::argument(format!("alpha must be in [0, 0.5), got {alpha}")))
    }
}

/// Mean and biased variance of the values left after dropping `⌊αN⌋`
/// entries from each end of the sorted list.
pub fn trimmed_mean_var(values: &[f64], alpha: f64) -> Result<(f64, f64)> {
    check_alpha(alpha)?;
    if values.is_empty() {
        return Err(Error::argument("trimmed moments of an empty stack"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(trimmed_sorted(&sorted, alpha))
}

fn trimmed_sorted(sorted: &[f64], alpha: f64) -> (f64, f64) {
    let k = trim_count(sorted.len(), alpha);
    let kept = &sorted[k..sorted.len() - k];
    let n = kept.len() as f64;
    let mean = kept.iter().sum::<f64>() / n;
    let var = kept.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var)
}

/// Same trimming, with each kept entry weighted by its mask value.
fn trimmed_weighted(pairs: &mut [(f64, f64)], alpha: f64) -> (f64, f64) {
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let k = trim_count(pairs.len(), alpha);
    let kept = &pairs[k..pairs.len() - k];
    let wsum: f64 = kept.iter().map(|p| p.1).sum();
    let mean = kept.iter().map(|p| p.0 * p.1).sum::<f64>() / wsum;
    let var = kept
        .iter()
        .map(|p| p.1 * (p.0 - mean) * (p.0 - mean))
        .sum::<f64>()
        / wsum;
    (mean, var)
}

/// Per-pixel trimmed moments over the frames whose mask is positive there.
pub fn compute_moments(warps: &[WarpedFrame], alpha: f64) -> Result<PanoramicMoments> {
    compute_moments_with(warps, alpha, false)
}

/// [`compute_moments`] with optional mask weighting of the kept samples.
pub fn compute_moments_with(
    warps: &[WarpedFrame],
    alpha: f64,
    mask_weighted: bool,
) -> Result<PanoramicMoments> {
    check_alpha(alpha)?;
    let first = warps
        .first()
        .ok_or_else(|| Error::argument("no warped frames"))?;
    let channels = first.channels;
    let width = first.scene_width;
    let n = first.mask.len();
    if warps
        .iter()
        .any(|w| w.channels != channels || w.mask.len() != n || w.scene_width != width)
    {
        return Err(Error::argument("warped frames disagree on scene dimensions"));
    }
    let height = n / width;

    let rows: Vec<(Vec<f64>, Vec<f64>, Vec<u32>)> = (0..height)
        .into_par_iter()
        .map(|y| {
            let mut mu = vec![0.0; channels * width];
            let mut var = vec![0.0; channels * width];
            let mut count = vec![0u32; width];
            let mut stack: Vec<f64> = Vec::with_capacity(warps.len());
            let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(warps.len());
            for x in 0..width {
                let i = y * width + x;
                let members: Vec<&WarpedFrame> =
                    warps.iter().filter(|w| w.mask[i] > 0.0).collect();
                count[x] = members.len() as u32;
                if members.is_empty() {
                    continue;
                }
                for c in 0..channels {
                    let (m, v) = if mask_weighted {
                        pairs.clear();
                        pairs.extend(members.iter().map(|w| (w.image[c * n + i], w.mask[i])));
                        trimmed_weighted(&mut pairs, alpha)
                    } else {
                        stack.clear();
                        stack.extend(members.iter().map(|w| w.image[c * n + i]));
                        stack.sort_by(f64::total_cmp);
                        trimmed_sorted(&stack, alpha)
                    };
                    mu[c * width + x] = m;
                    var[c * width + x] = v;
                }
            }
            (mu, var, count)
        })
        .collect();

    let mut mu_r = vec![0.0; channels * n];
    let mut v_r = vec![0.0; channels * n];
    let mut count = vec![0u32; n];
    for (y, (mu, var, cnt)) in rows.into_iter().enumerate() {
        count[y * width..(y + 1) * width].copy_from_slice(&cnt);
        for c in 0..channels {
            let dst = c * n + y * width;
            mu_r[dst..dst + width].copy_from_slice(&mu[c * width..(c + 1) * width]);
            v_r[dst..dst + width].copy_from_slice(&var[c * width..(c + 1) * width]);
        }
    }
    Ok(PanoramicMoments {
        channels,
        height,
        width,
        alpha,
        mu_r,
        v_r,
        count,
    })
}
