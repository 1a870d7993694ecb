//! Synthetic moving-camera sequences with known transforms, clean
//! backgrounds and foreground annotations.

use nalgebra::Matrix2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::eval::Annotation;
use crate::transform::{self, Matrix3, TransformParams};
use crate::warp::{bilinear_sample, Frame};
use crate::{Error, Result};

/// Bounds of the smooth camera walk. Each degree of freedom follows its own
/// damped random walk, rescaled so its largest excursion equals the bound.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionSpec {
    pub max_translation: f64,
    pub max_rotation_deg: f64,
    pub max_log_scale: f64,
    /// Velocity persistence of the walk, in `[0, 1)`.
    pub smoothness: f64,
    /// Round translations to whole pixels.
    pub integral_translation: bool,
}

impl MotionSpec {
    pub fn still() -> Self {
        Self {
            max_translation: 0.0,
            max_rotation_deg: 0.0,
            max_log_scale: 0.0,
            smoothness: 0.8,
            integral_translation: false,
        }
    }
}

impl Default for MotionSpec {
    fn default() -> Self {
        Self {
            max_translation: 20.0,
            max_rotation_deg: 10.0,
            max_log_scale: 0.0,
            smoothness: 0.8,
            integral_translation: false,
        }
    }
}

/// A square moving in a straight line across the panorama.
#[derive(Debug, Clone, PartialEq)]
pub struct ForegroundSpec {
    pub size: f64,
    pub value: f64,
    /// Path start and end, relative to the panorama center.
    pub start: [f64; 2],
    pub end: [f64; 2],
}

impl Default for ForegroundSpec {
    fn default() -> Self {
        Self {
            size: 6.0,
            value: 1.0,
            start: [-40.0, -5.0],
            end: [40.0, 5.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub n_frames: usize,
    pub frame_height: usize,
    pub frame_width: usize,
    pub motion: MotionSpec,
    pub foreground: Option<ForegroundSpec>,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_frames: 40,
            frame_height: 64,
            frame_width: 64,
            motion: MotionSpec::default(),
            foreground: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub frames: Vec<Frame>,
    /// Frames before the foreground was composited.
    pub clean: Vec<Frame>,
    pub annotations: Vec<Annotation>,
    /// Maps centered frame coordinates to panorama coordinates relative to
    /// the panorama center.
    pub truth: Vec<TransformParams>,
}

impl SynthData {
    pub fn truth_matrices(&self) -> Result<Vec<Matrix3>> {
        self.truth.iter().map(transform::realize).collect()
    }
}

/// Multi-octave smooth value noise in `[0.1, 0.9]`.
pub fn textured_panorama(channels: usize, height: usize, width: usize, seed: u64) -> Result<Frame> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let octaves = [(64.0, 1.0), (32.0, 0.7), (16.0, 0.5), (8.0, 0.35), (4.0, 0.2)];
    let n = height * width;
    let mut data = vec![0.0; channels * n];
    for c in 0..channels {
        let plane = &mut data[c * n..(c + 1) * n];
        for &(spacing, amp) in &octaves {
            let gw = (width as f64 / spacing).ceil() as usize + 2;
            let gh = (height as f64 / spacing).ceil() as usize + 2;
            let lattice: Vec<f64> = (0..gw * gh).map(|_| rng.gen::<f64>()).collect();
            for y in 0..height {
                let fy = y as f64 / spacing;
                let (iy, ty) = (fy.floor() as usize, smoothstep(fy.fract()));
                for x in 0..width {
                    let fx = x as f64 / spacing;
                    let (ix, tx) = (fx.floor() as usize, smoothstep(fx.fract()));
                    let v00 = lattice[iy * gw + ix];
                    let v10 = lattice[iy * gw + ix + 1];
                    let v01 = lattice[(iy + 1) * gw + ix];
                    let v11 = lattice[(iy + 1) * gw + ix + 1];
                    let top = v00 + (v10 - v00) * tx;
                    let bottom = v01 + (v11 - v01) * tx;
                    plane[y * width + x] += amp * (top + (bottom - top) * ty);
                }
            }
        }
        let (lo, hi) = plane
            .iter()
            .fold((f64::MAX, f64::MIN), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let range = (hi - lo).max(1e-12);
        plane.iter_mut().for_each(|v| *v = 0.1 + 0.8 * (*v - lo) / range);
    }
    Frame::new(channels, height, width, data)
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Affine parameters whose exponential is the similarity
/// `x ↦ e^s R(r) x + t`.
pub fn similarity_params(tx: f64, ty: f64, rotation: f64, log_scale: f64) -> Result<TransformParams> {
    let l = Matrix2::new(log_scale, -rotation, rotation, log_scale);
    // V = Σ Lᵏ / (k+1)!, so that exp([[L, v], [0, 0]]) has translation V v.
    let mut v = Matrix2::identity();
    let mut term = Matrix2::identity();
    for k in 1..40 {
        term = term * l / (k + 1) as f64;
        v += term;
    }
    let inv = v
        .try_inverse()
        .ok_or_else(|| Error::argument("similarity generator is singular"))?;
    let u = inv * nalgebra::Vector2::new(tx, ty);
    TransformParams::affine(vec![log_scale, -rotation, u.x, rotation, log_scale, u.y])
}

fn smooth_walk(rng: &mut ChaCha8Rng, n: usize, smoothness: f64, bound: f64) -> Vec<f64> {
    let mut pos = vec![0.0; n];
    let mut vel = 0.0;
    for i in 1..n {
        vel = smoothness * vel + rng.gen_range(-1.0..1.0);
        pos[i] = pos[i - 1] + vel;
    }
    let mean = pos.iter().sum::<f64>() / n.max(1) as f64;
    pos.iter_mut().for_each(|p| *p -= mean);
    let max = pos.iter().fold(0.0f64, |m, p| m.max(p.abs()));
    if bound == 0.0 || max == 0.0 {
        return vec![0.0; n];
    }
    pos.iter().map(|p| p / max * bound).collect()
}

/// Crops `n_frames` windows from `panorama` along a smooth random walk and
/// optionally composites a moving foreground square.
pub fn synth(panorama: &Frame, spec: &SynthSpec) -> Result<SynthData> {
    let (channels, ph, pw) = panorama.dims();
    let (h, w) = (spec.frame_height, spec.frame_width);
    if spec.n_frames == 0 || h == 0 || w == 0 {
        return Err(Error::argument("need at least one non-empty frame"));
    }
    if ph < h || pw < w {
        return Err(Error::argument("panorama is smaller than a frame"));
    }
    let m = &spec.motion;
    if !(0.0..1.0).contains(&m.smoothness) {
        return Err(Error::argument("smoothness must be in [0, 1)"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n_frames;
    let mut tx = smooth_walk(&mut rng, n, m.smoothness, m.max_translation);
    let mut ty = smooth_walk(&mut rng, n, m.smoothness, m.max_translation);
    let rot = smooth_walk(&mut rng, n, m.smoothness, m.max_rotation_deg.to_radians());
    let scale = smooth_walk(&mut rng, n, m.smoothness, m.max_log_scale);
    if m.integral_translation {
        tx.iter_mut().for_each(|v| *v = v.round());
        ty.iter_mut().for_each(|v| *v = v.round());
    }

    let pano_center = [(pw as f64 - 1.0) / 2.0, (ph as f64 - 1.0) / 2.0];
    let frame_center = [(w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0];
    let mut truth = Vec::with_capacity(n);
    let mut frames = Vec::with_capacity(n);
    let mut clean = Vec::with_capacity(n);
    let mut annotations = Vec::with_capacity(n);

    for i in 0..n {
        let params = if rot[i] == 0.0 && scale[i] == 0.0 {
            TransformParams::affine(vec![0.0, 0.0, tx[i], 0.0, 0.0, ty[i]])?
        } else {
            similarity_params(tx[i], ty[i], rot[i], scale[i])?
        };
        let t = transform::realize(&params)?;
        let mut positions = vec![[0.0; 2]; h * w];
        for y in 0..h {
            for x in 0..w {
                let p = transform::apply(&t, [x as f64 - frame_center[0], y as f64 - frame_center[1]])?;
                let q = [p[0] + pano_center[0], p[1] + pano_center[1]];
                if q[0] < 0.0 || q[1] < 0.0 || q[0] > (pw - 1) as f64 || q[1] > (ph - 1) as f64 {
                    return Err(Error::argument(format!(
                        "frame {i} leaves the panorama; reduce the motion bounds"
                    )));
                }
                positions[y * w + x] = q;
            }
        }
        let background = Frame::from_fn(channels, h, w, |c, y, x| {
            bilinear_sample(panorama, c, positions[y * w + x]).clamp(0.0, 1.0)
        })?;

        let mut fg = vec![false; h * w];
        let mut frame = background.clone();
        if let Some(spec_fg) = &spec.foreground {
            let s = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 };
            let cx = pano_center[0] + spec_fg.start[0] + s * (spec_fg.end[0] - spec_fg.start[0]);
            let cy = pano_center[1] + spec_fg.start[1] + s * (spec_fg.end[1] - spec_fg.start[1]);
            let half = spec_fg.size / 2.0;
            for y in 0..h {
                for x in 0..w {
                    let q = positions[y * w + x];
                    if (q[0] - cx).abs() < half && (q[1] - cy).abs() < half {
                        fg[y * w + x] = true;
                        for c in 0..channels {
                            frame.set(c, y, x, spec_fg.value);
                        }
                    }
                }
            }
        }
        truth.push(params);
        frames.push(frame);
        clean.push(background);
        annotations.push(Annotation::new(h, w, fg)?);
    }
    Ok(SynthData {
        frames,
        clean,
        annotations,
        truth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn similarity_params_realize_the_similarity() {
        let p = similarity_params(7.0, -3.0, 0.2, 0.05).unwrap();
        let t = transform::realize(&p).unwrap();
        let s = 0.05f64.exp();
        let expected = Matrix3::new(
            s * 0.2f64.cos(), -s * 0.2f64.sin(), 7.0,
            s * 0.2f64.sin(), s * 0.2f64.cos(), -3.0,
            0.0, 0.0, 1.0,
        );
        assert!((t - expected).abs().max() < 1e-12);
    }

    #[test]
    fn panorama_is_in_range_and_deterministic() {
        let a = textured_panorama(1, 40, 50, 3).unwrap();
        let b = textured_panorama(1, 40, 50, 3).unwrap();
        assert_eq!(a, b);
        assert!(a.data().iter().all(|v| (0.1 - 1e-12..=0.9 + 1e-12).contains(v)));
        assert_ne!(a, textured_panorama(1, 40, 50, 4).unwrap());
    }

    #[test]
    fn still_camera_gives_identical_frames() {
        let pano = textured_panorama(1, 64, 64, 1).unwrap();
        let spec = SynthSpec {
            n_frames: 5,
            frame_height: 16,
            frame_width: 16,
            motion: MotionSpec::still(),
            ..SynthSpec::default()
        };
        let data = synth(&pano, &spec).unwrap();
        for f in &data.frames {
            assert_eq!(f, &data.frames[0]);
        }
        for t in data.truth_matrices().unwrap() {
            assert_eq!(t, Matrix3::identity());
        }
    }

    #[test]
    fn integral_translations_are_exact_crops() {
        let pano = textured_panorama(1, 64, 64, 2).unwrap();
        let spec = SynthSpec {
            n_frames: 6,
            frame_height: 16,
            frame_width: 16,
            motion: MotionSpec {
                max_translation: 8.0,
                max_rotation_deg: 0.0,
                integral_translation: true,
                ..MotionSpec::default()
            },
            ..SynthSpec::default()
        };
        let data = synth(&pano, &spec).unwrap();
        for (f, t) in data.frames.iter().zip(&data.truth) {
            let (dx, dy) = (t.theta[2], t.theta[5]);
            assert_eq!(dx.fract(), 0.0);
            let ox = (24.0 + dx) as usize;
            let oy = (24.0 + dy) as usize;
            for y in 0..16 {
                for x in 0..16 {
                    assert_eq!(f.get(0, y, x), pano.get(0, oy + y, ox + x));
                }
            }
        }
    }

    #[test]
    fn same_seed_same_sequence() {
        let pano = textured_panorama(3, 128, 128, 5).unwrap();
        let spec = SynthSpec {
            n_frames: 4,
            frame_height: 32,
            frame_width: 32,
            foreground: Some(ForegroundSpec::default()),
            seed: 11,
            ..SynthSpec::default()
        };
        let a = synth(&pano, &spec).unwrap();
        let b = synth(&pano, &spec).unwrap();
        assert_eq!(a.frames, b.frames);
        assert_eq!(a.truth, b.truth);
        assert_eq!(a.annotations, b.annotations);
    }

    #[test]
    fn excessive_motion_is_rejected() {
        let pano = textured_panorama(1, 40, 40, 1).unwrap();
        let spec = SynthSpec {
            n_frames: 10,
            frame_height: 32,
            frame_width: 32,
            ..SynthSpec::default()
        };
        assert!(synth(&pano, &spec).is_err());
    }
}
