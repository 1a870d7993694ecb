//! Pixelwise background error, sequence-global scaling, ROC curves and AUC.
//!
//! TPR and FPR are normalized by the total pixel count `N·h·w`, so at
//! threshold 0 they equal the foreground and background fractions rather
//! than 1. The class-normalized curve (each rate divided by its class
//! count) is reported alongside.

use crate::warp::Frame;
use crate::{Error, Result};

pub const DEFAULT_THRESHOLDS: usize = 100;

/// Binary foreground annotation of one frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Annotation {
    pub height: usize,
    pub width: usize,
    pub foreground: Vec<bool>,
}

impl Annotation {
    pub fn new(height: usize, width: usize, foreground: Vec<bool>) -> Result<Self> {
        if foreground.len() != height * width {
            return Err(Error::argument("annotation size does not match its dimensions"));
        }
        Ok(Self {
            height,
            width,
            foreground,
        })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            foreground: vec![false; height * width],
        }
    }
}

/// Channel-averaged squared error per pixel.
pub fn pixel_error(f: &Frame, f_hat: &Frame) -> Result<Vec<f64>> {
    if f.dims() != f_hat.dims() {
        return Err(Error::argument(format!(
            "frame dimensions differ: {:?} vs {:?}",
            f.dims(),
            f_hat.dims()
        )));
    }
    let (channels, h, w) = f.dims();
    let n = h * w;
    let mut err = vec![0.0; n];
    for c in 0..channels {
        for (e, (a, b)) in err.iter_mut().zip(f.plane(c).iter().zip(f_hat.plane(c))) {
            *e += (a - b) * (a - b);
        }
    }
    err.iter_mut().for_each(|e| *e /= channels as f64);
    debug_assert_eq!(err.len(), n);
    Ok(err)
}

/// Maps errors to `[0, 1]` using the minimum and maximum over every frame
/// and pixel.
pub fn scale_errors(errors: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let (lo, hi) = errors
        .iter()
        .flatten()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if !lo.is_finite() {
        return Err(Error::argument("no error values to scale"));
    }
    if hi <= lo {
        return Err(Error::Degenerate(format!(
            "error field is constant ({lo}); cannot scale"
        )));
    }
    let range = hi - lo;
    Ok(errors
        .iter()
        .map(|e| e.iter().map(|v| (v - lo) / range).collect())
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    /// Ordered by increasing threshold.
    pub points: Vec<RocPoint>,
    pub auc_raw: f64,
    /// AUC after dividing each rate by its class fraction; NaN when a class
    /// is empty.
    pub auc_normalized: f64,
    pub positives: usize,
    pub negatives: usize,
    /// Set when the annotations hold no foreground or no background pixels.
    pub degenerate: bool,
}

/// Evenly spaced thresholds on `[0, 1]`, both ends included.
pub fn thresholds(n: usize) -> Vec<f64> {
    (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
}

/// Trapezoid area under `(fpr, tpr)` points given from the highest
/// threshold down, starting from the origin.
pub fn trapezoid_auc(points_desc: &[(f64, f64)]) -> f64 {
    let mut prev = (0.0, 0.0);
    let mut area = 0.0;
    for &(x, y) in points_desc {
        area += (x - prev.0) * (y + prev.1) / 2.0;
        prev = (x, y);
    }
    area
}

pub fn roc(scaled: &[Vec<f64>], ann: &[Annotation], n_thresholds: usize) -> Result<RocCurve> {
    if n_thresholds < 2 {
        return Err(Error::argument("need at least two thresholds"));
    }
    if scaled.is_empty() || scaled.len() != ann.len() {
        return Err(Error::argument(format!(
            "{} error maps but {} annotations",
            scaled.len(),
            ann.len()
        )));
    }
    let alphas = thresholds(n_thresholds);
    // hist[i]: pixels whose largest passed threshold is alphas[i]
    let mut pos_hist = vec![0usize; n_thresholds];
    let mut neg_hist = vec![0usize; n_thresholds];
    let mut positives = 0usize;
    let mut negatives = 0usize;
    let mut total = 0usize;
    let last = n_thresholds - 1;

    for (e, a) in scaled.iter().zip(ann) {
        if e.len() != a.foreground.len() {
            return Err(Error::argument("error map and annotation differ in size"));
        }
        for (&v, &fg) in e.iter().zip(&a.foreground) {
            total += 1;
            if fg {
                positives += 1;
            } else {
                negatives += 1;
            }
            if !(v >= 0.0) {
                continue;
            }
            let mut idx = ((v * last as f64).floor() as usize).min(last);
            while idx < last && alphas[idx + 1] <= v {
                idx += 1;
            }
            while idx > 0 && alphas[idx] > v {
                idx -= 1;
            }
            if alphas[idx] > v {
                continue;
            }
            if fg {
                pos_hist[idx] += 1;
            } else {
                neg_hist[idx] += 1;
            }
        }
    }

    let total_f = total as f64;
    let mut points = vec![
        RocPoint {
            threshold: 0.0,
            fpr: 0.0,
            tpr: 0.0
        };
        n_thresholds
    ];
    let (mut tp, mut fp) = (0usize, 0usize);
    for i in (0..n_thresholds).rev() {
        tp += pos_hist[i];
        fp += neg_hist[i];
        points[i] = RocPoint {
            threshold: alphas[i],
            fpr: fp as f64 / total_f,
            tpr: tp as f64 / total_f,
        };
    }

    let desc: Vec<(f64, f64)> = points.iter().rev().map(|p| (p.fpr, p.tpr)).collect();
    let auc_raw = trapezoid_auc(&desc);
    let degenerate = positives == 0 || negatives == 0;
    let auc_normalized = if degenerate {
        log::warn!(
            "degenerate ROC: {positives} foreground and {negatives} background pixels"
        );
        f64::NAN
    } else {
        let pf = positives as f64 / total_f;
        let nf = negatives as f64 / total_f;
        let norm: Vec<(f64, f64)> = desc.iter().map(|&(x, y)| (x / nf, y / pf)).collect();
        trapezoid_auc(&norm)
    };
    Ok(RocCurve {
        points,
        auc_raw,
        auc_normalized,
        positives,
        negatives,
        degenerate,
    })
}

/// Full protocol: per-frame errors, global scaling, ROC.
pub fn evaluate(
    frames: &[Frame],
    backgrounds: &[Frame],
    ann: &[Annotation],
    n_thresholds: usize,
) -> Result<RocCurve> {
    if frames.len() != backgrounds.len() {
        return Err(Error::argument("frame and background counts differ"));
    }
    let errors = frames
        .iter()
        .zip(backgrounds)
        .map(|(f, b)| pixel_error(f, b))
        .collect::<Result<Vec<_>>>()?;
    roc(&scale_errors(&errors)?, ann, n_thresholds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Exhaustive per-threshold counting straight from the definition.
    fn brute_force(scaled: &[Vec<f64>], ann: &[Annotation], n: usize) -> (Vec<(f64, f64, f64)>, f64) {
        let total: usize = scaled.iter().map(|e| e.len()).sum();
        let mut curve = Vec::new();
        for i in 0..n {
            let alpha = i as f64 / (n - 1) as f64;
            let mut tp = 0;
            let mut fp = 0;
            for (e, a) in scaled.iter().zip(ann) {
                for (k, &v) in e.iter().enumerate() {
                    if v >= alpha {
                        if a.foreground[k] {
                            tp += 1;
                        } else {
                            fp += 1;
                        }
                    }
                }
            }
            curve.push((alpha, fp as f64 / total as f64, tp as f64 / total as f64));
        }
        let mut area = 0.0;
        let mut prev = (0.0, 0.0);
        for &(_, x, y) in curve.iter().rev() {
            area += (x - prev.0) * (y + prev.1) / 2.0;
            prev = (x, y);
        }
        (curve, area)
    }

    #[test]
    fn pixel_error_examples() {
        let f = Frame::constant(3, 2, 2, 0.5).unwrap();
        assert!(pixel_error(&f, &f).unwrap().iter().all(|&e| e == 0.0));
        let g = Frame::constant(3, 2, 2, 0.4).unwrap();
        assert!(pixel_error(&f, &g).unwrap().iter().all(|&e| (e - 0.01).abs() < 1e-15));
        let one = Frame::constant(1, 2, 2, 1.0).unwrap();
        let zero = Frame::constant(1, 2, 2, 0.0).unwrap();
        assert!(pixel_error(&one, &zero).unwrap().iter().all(|&e| e == 1.0));
        assert!(pixel_error(&one, &Frame::constant(1, 2, 3, 0.0).unwrap()).is_err());
    }

    #[test]
    fn scaling_is_global() {
        let s = scale_errors(&[vec![2.0, 6.0], vec![10.0, 4.0]]).unwrap();
        assert_eq!(s, vec![vec![0.0, 0.5], vec![1.0, 0.25]]);
        let unit = vec![vec![0.0, 0.3], vec![1.0, 0.7]];
        assert_eq!(scale_errors(&unit).unwrap(), unit);
        assert!(s[0].iter().all(|&v| v < 1.0));
        assert!(matches!(scale_errors(&[vec![3.0, 3.0]]), Err(Error::Degenerate(_))));
    }

    #[test]
    fn perfect_separation() {
        let a = Annotation::new(2, 3, vec![true, false, false, true, false, false]).unwrap();
        let e: Vec<f64> = a.foreground.iter().map(|&f| if f { 1.0 } else { 0.0 }).collect();
        let curve = roc(&[e], &[a], 100).unwrap();
        assert_eq!(curve.auc_normalized, 1.0);
        assert!(!curve.degenerate);
        // raw rates at alpha = 0 are the class fractions
        assert_eq!(curve.points[0].tpr, 2.0 / 6.0);
        assert_eq!(curve.points[0].fpr, 4.0 / 6.0);
    }

    #[test]
    fn toy_matches_brute_force() {
        let a = Annotation::new(3, 1, vec![true, false, false]).unwrap();
        let e = vec![vec![0.9, 0.1, 0.5]];
        let curve = roc(&e, &[a.clone()], 11).unwrap();
        let (oracle, area) = brute_force(&e, &[a], 11);
        for (p, o) in curve.points.iter().zip(&oracle) {
            assert_eq!((p.threshold, p.fpr, p.tpr), *o);
        }
        assert_eq!(curve.auc_raw, area);
    }

    #[test]
    fn random_instances_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..50 {
            let frames = rng.gen_range(1..4);
            let (h, w) = (rng.gen_range(1..12), rng.gen_range(1..12));
            let n = rng.gen_range(2..30);
            let mut scaled = Vec::new();
            let mut ann = Vec::new();
            for _ in 0..frames {
                // include exact grid values to probe the >= comparison
                scaled.push(
                    (0..h * w)
                        .map(|_| if rng.gen_bool(0.3) { rng.gen_range(0..n) as f64 / (n - 1) as f64 } else { rng.gen() })
                        .collect(),
                );
                ann.push(Annotation::new(h, w, (0..h * w).map(|_| rng.gen_bool(0.3)).collect()).unwrap());
            }
            let curve = roc(&scaled, &ann, n).unwrap();
            let (oracle, area) = brute_force(&scaled, &ann, n);
            for (p, o) in curve.points.iter().zip(&oracle) {
                assert_eq!((p.threshold, p.fpr, p.tpr), *o);
            }
            assert!((curve.auc_raw - area).abs() < 1e-15);
        }
    }

    #[test]
    fn noise_gives_chance_auc() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let e: Vec<f64> = (0..10_000).map(|_| rng.gen()).collect();
        let a = Annotation::new(100, 100, (0..10_000).map(|_| rng.gen_bool(0.5)).collect()).unwrap();
        let curve = roc(&[e], &[a], 100).unwrap();
        assert!((curve.auc_normalized - 0.5).abs() < 0.03);
    }

    #[test]
    fn rates_are_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let e: Vec<f64> = (0..500).map(|_| rng.gen()).collect();
        let a = Annotation::new(20, 25, (0..500).map(|_| rng.gen_bool(0.2)).collect()).unwrap();
        let curve = roc(&[e], &[a], 37).unwrap();
        for pair in curve.points.windows(2) {
            assert!(pair[0].threshold < pair[1].threshold);
            assert!(pair[1].tpr <= pair[0].tpr);
            assert!(pair[1].fpr <= pair[0].fpr);
        }
    }

    #[test]
    fn empty_class_is_degenerate() {
        let a = Annotation::empty(2, 2);
        let curve = roc(&[vec![0.0, 0.2, 0.9, 1.0]], &[a], 10).unwrap();
        assert!(curve.degenerate);
        assert!(curve.auc_normalized.is_nan());
        assert!(roc(&[vec![0.0]], &[Annotation::empty(1, 1)], 1).is_err());
    }
}
