//! Frames, the scene domain, and bilinear warping into it.
//!
//! Pixel centers sit at integer coordinates `(col, row)`. Transforms act on
//! centered frame coordinates `p - c` with `c = ((w-1)/2, (h-1)/2)`, and the
//! frame center lands on [`SceneDomain::origin`] under the identity. Out of
//! domain samples are zero, which is what makes the warped all-ones image a
//! soft footprint mask.

use nalgebra::{DMatrix, Vector3};

use crate::transform::{self, Matrix3, TransformParams, HORIZON_EPS};
use crate::{Error, Result};

/// A `C × h × w` image with values in `[0, 1]`, stored as channel planes.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Frame {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::argument("frame dimensions must be positive"));
        }
        if data.len() != channels * height * width {
            return Err(Error::argument(format!(
                "frame data has {} values, expected {}",
                data.len(),
                channels * height * width
            )));
        }
        if data.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(Error::argument("frame values must be finite and in [0, 1]"));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self::new(channels, height, width, data)
    }

    pub fn constant(channels: usize, height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(channels, height, width, vec![value; channels * height * width])
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        debug_assert!((0.0..=1.0).contains(&v));
        self.data[(c * self.height + y) * self.width + x] = v;
    }
}

/// The `H × W` panoramic canvas. `offset` is the scene pixel of the frame's
/// top-left pixel under the identity transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SceneDomain {
    pub height: usize,
    pub width: usize,
    pub offset: (usize, usize),
    pub frame_height: usize,
    pub frame_width: usize,
}

impl SceneDomain {
    pub fn new(
        height: usize,
        width: usize,
        offset: (usize, usize),
        frame_height: usize,
        frame_width: usize,
    ) -> Result<Self> {
        if height < frame_height
            || width < frame_width
            || offset.0 + frame_width > width
            || offset.1 + frame_height > height
        {
            return Err(Error::argument(
                "scene domain must contain the identity-placed frame",
            ));
        }
        Ok(Self {
            height,
            width,
            offset,
            frame_height,
            frame_width,
        })
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn frame_pixels(&self) -> usize {
        self.frame_height * self.frame_width
    }

    /// Center of the frame in frame pixel coordinates.
    pub fn frame_center(&self) -> [f64; 2] {
        [
            (self.frame_width as f64 - 1.0) / 2.0,
            (self.frame_height as f64 - 1.0) / 2.0,
        ]
    }

    /// Scene position of the transform origin.
    pub fn origin(&self) -> [f64; 2] {
        let c = self.frame_center();
        [self.offset.0 as f64 + c[0], self.offset.1 as f64 + c[1]]
    }
}

/// Scene domain `⌈pad·h⌉ × ⌈pad·w⌉` with the frame centered.
pub fn scene_bounds(frame_size: (usize, usize), pad: f64) -> Result<SceneDomain> {
    let (h, w) = frame_size;
    if !(pad >= 1.0) || !pad.is_finite() {
        return Err(Error::argument(format!("pad must be >= 1, got {pad}")));
    }
    let height = (pad * h as f64).ceil() as usize;
    let width = (pad * w as f64).ceil() as usize;
    SceneDomain::new(height, width, ((width - w) / 2, (height - h) / 2), h, w)
}

/// A frame and its soft footprint mask on the scene domain.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpedFrame {
    pub channels: usize,
    pub scene_width: usize,
    /// Frame values at the pre-images, interpolated from in-domain pixels
    /// only; zero where the mask is zero.
    pub image: Vec<f64>,
    pub mask: Vec<f64>,
    /// Half-open scene rectangle `(x0, y0, x1, y1)` outside which the mask is
    /// zero.
    pub bbox: (usize, usize, usize, usize),
}

impl WarpedFrame {
    pub fn mask_sum(&self) -> f64 {
        self.mask.iter().sum()
    }
}

const COVERAGE_EPS: f64 = 1e-12;

/// Up to four bilinear taps around a sub-pixel location, restricted to
/// in-domain pixels, with weight derivatives along x and y.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct Taps {
    pub len: usize,
    pub index: [usize; 4],
    pub weight: [f64; 4],
    pub d_x: [f64; 4],
    pub d_y: [f64; 4],
}

impl Taps {
    pub fn new(x: f64, y: f64, width: usize, height: usize) -> Self {
        let mut taps = Taps::default();
        if !(x > -1.0 && y > -1.0 && x < width as f64 && y < height as f64) {
            return taps;
        }
        let x0 = x.floor();
        let y0 = y.floor();
        let a = x - x0;
        let b = y - y0;
        let (xi, yi) = (x0 as i64, y0 as i64);
        let corners = [
            (xi, yi, (1.0 - a) * (1.0 - b), -(1.0 - b), -(1.0 - a)),
            (xi + 1, yi, a * (1.0 - b), 1.0 - b, -a),
            (xi, yi + 1, (1.0 - a) * b, -b, 1.0 - a),
            (xi + 1, yi + 1, a * b, b, a),
        ];
        for (cx, cy, w, dx, dy) in corners {
            if cx >= 0 && cy >= 0 && (cx as usize) < width && (cy as usize) < height {
                let i = taps.len;
                taps.index[i] = cy as usize * width + cx as usize;
                taps.weight[i] = w;
                taps.d_x[i] = dx;
                taps.d_y[i] = dy;
                taps.len += 1;
            }
        }
        taps
    }

    pub fn sample(&self, plane: &[f64]) -> f64 {
        (0..self.len).map(|i| self.weight[i] * plane[self.index[i]]).sum()
    }

    pub fn gradient(&self, plane: &[f64]) -> [f64; 2] {
        let mut g = [0.0; 2];
        for i in 0..self.len {
            g[0] += self.d_x[i] * plane[self.index[i]];
            g[1] += self.d_y[i] * plane[self.index[i]];
        }
        g
    }

    /// Sample renormalized by the in-domain weight: the image value at the
    /// location, with out-of-domain neighbors left out instead of read as
    /// zero. Where the in-domain weight vanishes, the mean of the in-domain
    /// taps (the limit from inside).
    pub fn value(&self, plane: &[f64]) -> f64 {
        let c = self.coverage();
        if c > COVERAGE_EPS {
            self.sample(plane) / c
        } else if self.len > 0 {
            (0..self.len).map(|i| plane[self.index[i]]).sum::<f64>() / self.len as f64
        } else {
            0.0
        }
    }

    pub fn value_gradient(&self, plane: &[f64]) -> [f64; 2] {
        let c = self.coverage();
        if c <= COVERAGE_EPS {
            return [0.0; 2];
        }
        if self.len == 4 {
            return self.gradient(plane);
        }
        let s = self.sample(plane);
        let g = self.gradient(plane);
        let dc = self.coverage_gradient();
        [(g[0] * c - s * dc[0]) / (c * c), (g[1] * c - s * dc[1]) / (c * c)]
    }

    /// Sample of the all-ones image.
    pub fn coverage(&self) -> f64 {
        self.weight[..self.len].iter().sum()
    }

    pub fn coverage_gradient(&self) -> [f64; 2] {
        [
            self.d_x[..self.len].iter().sum(),
            self.d_y[..self.len].iter().sum(),
        ]
    }
}

/// Bilinear sample with zero padding. `x` is `(col, row)`.
pub fn bilinear_sample(img: &Frame, channel: usize, x: [f64; 2]) -> f64 {
    Taps::new(x[0], x[1], img.width, img.height).sample(img.plane(channel))
}

/// Inverse mapping from scene pixels to frame pixels for one transform, with
/// optional parameter derivatives.
#[derive(Debug, Clone)]
pub(crate) struct WarpGeometry {
    forward: Matrix3,
    inv: Matrix3,
    d_inv: Vec<Matrix3>,
    origin: [f64; 2],
    center: [f64; 2],
}

/// Frame-pixel pre-image of a scene pixel and the homogeneous vector it came
/// from.
#[derive(Debug, Clone, Copy)]
pub(crate) struct PreImage {
    pub p: [f64; 2],
    hom: Vector3<f64>,
    scene: Vector3<f64>,
}

impl WarpGeometry {
    pub fn new(t: &Matrix3, scene: &SceneDomain) -> Result<Self> {
        let inv = transform::inverse(t)?;
        // Orient the inverse so that points in front of the camera have a
        // positive homogeneous coordinate.
        let sign = if t[(2, 2)] < 0.0 { -1.0 } else { 1.0 };
        Ok(Self {
            forward: *t,
            inv: inv * sign,
            d_inv: Vec::new(),
            origin: scene.origin(),
            center: scene.frame_center(),
        })
    }

    pub fn with_derivatives(p: &TransformParams, scene: &SceneDomain) -> Result<Self> {
        let t = transform::realize(p)?;
        let mut geo = Self::new(&t, scene)?;
        let sign = if t[(2, 2)] < 0.0 { -1.0 } else { 1.0 };
        let raw_inv = geo.inv * sign;
        geo.d_inv = transform::d_realize_all(p)?
            .iter()
            .map(|dt| -(raw_inv * dt * raw_inv) * sign)
            .collect();
        Ok(geo)
    }

    pub fn dim(&self) -> usize {
        self.d_inv.len()
    }

    pub fn preimage(&self, sx: f64, sy: f64) -> Option<PreImage> {
        let scene = Vector3::new(sx - self.origin[0], sy - self.origin[1], 1.0);
        let hom = self.inv * scene;
        if hom.z <= HORIZON_EPS {
            return None;
        }
        Some(PreImage {
            p: [
                hom.x / hom.z + self.center[0],
                hom.y / hom.z + self.center[1],
            ],
            hom,
            scene,
        })
    }

    /// `∂p/∂θ_k` for every parameter.
    pub fn preimage_derivatives(&self, pre: &PreImage, out: &mut [[f64; 2]]) {
        let q = pre.hom;
        let px = q.x / q.z;
        let py = q.y / q.z;
        for (dk, o) in self.d_inv.iter().zip(out.iter_mut()) {
            let dq = dk * pre.scene;
            *o = [(dq.x - px * dq.z) / q.z, (dq.y - py * dq.z) / q.z];
        }
    }

    /// Half-open scene rectangle that contains every pixel with nonzero
    /// mask.
    pub fn footprint(&self, scene: &SceneDomain) -> (usize, usize, usize, usize) {
        let full = (0, 0, scene.width, scene.height);
        let (w, h) = (scene.frame_width as f64, scene.frame_height as f64);
        let c = self.center;
        let corners = [[-1.0, -1.0], [w, -1.0], [w, h], [-1.0, h]];
        let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
        for k in corners {
            let q = self.forward * Vector3::new(k[0] - c[0], k[1] - c[1], 1.0);
            if q.z <= HORIZON_EPS {
                return full;
            }
            let sx = q.x / q.z + self.origin[0];
            let sy = q.y / q.z + self.origin[1];
            x0 = x0.min(sx);
            y0 = y0.min(sy);
            x1 = x1.max(sx);
            y1 = y1.max(sy);
        }
        let clamp = |v: f64, hi: usize| v.max(0.0).min(hi as f64) as usize;
        let bx0 = clamp(x0.floor(), scene.width);
        let by0 = clamp(y0.floor(), scene.height);
        let bx1 = clamp(x1.ceil() + 1.0, scene.width);
        let by1 = clamp(y1.ceil() + 1.0, scene.height);
        if bx0 >= bx1 || by0 >= by1 {
            return (0, 0, 0, 0);
        }
        (bx0, by0, bx1, by1)
    }
}

/// Warps `f` into the scene by `t`: `g(x) = f(t⁻¹(x))`, with the warped
/// all-ones image as mask. Along the footprint edge `g` is interpolated from
/// the in-domain neighbors alone, so the fade-out lives in the mask only.
pub fn warp_frame(f: &Frame, t: &Matrix3, scene: &SceneDomain) -> Result<WarpedFrame> {
    check_frame(f, scene)?;
    let geo = WarpGeometry::new(t, scene)?;
    Ok(warp_with(f, &geo, scene))
}

pub(crate) fn warp_with(f: &Frame, geo: &WarpGeometry, scene: &SceneDomain) -> WarpedFrame {
    let n = scene.pixels();
    let mut image = vec![0.0; f.channels * n];
    let mut mask = vec![0.0; n];
    let bbox = geo.footprint(scene);
    let (x0, y0, x1, y1) = bbox;
    for sy in y0..y1 {
        for sx in x0..x1 {
            let Some(pre) = geo.preimage(sx as f64, sy as f64) else {
                continue;
            };
            let taps = Taps::new(pre.p[0], pre.p[1], f.width, f.height);
            if taps.len == 0 {
                continue;
            }
            let i = sy * scene.width + sx;
            mask[i] = taps.coverage();
            for c in 0..f.channels {
                image[c * n + i] = if mask[i] > 0.0 { taps.value(f.plane(c)) } else { 0.0 };
            }
        }
    }
    WarpedFrame {
        channels: f.channels,
        scene_width: scene.width,
        image,
        mask,
        bbox,
    }
}

pub(crate) fn check_frame(f: &Frame, scene: &SceneDomain) -> Result<()> {
    if f.height != scene.frame_height || f.width != scene.frame_width {
        return Err(Error::argument(format!(
            "frame is {}x{}, scene expects {}x{}",
            f.height, f.width, scene.frame_height, scene.frame_width
        )));
    }
    Ok(())
}

/// `∂g(x, c)/∂θ_k` at scene pixel `x = (col, row)`, as a `d × C` matrix.
/// Pixels whose pre-image is at or behind the horizon have zero Jacobian.
pub fn warp_jacobian(
    f: &Frame,
    p: &TransformParams,
    scene: &SceneDomain,
    x: (usize, usize),
) -> Result<DMatrix<f64>> {
    check_frame(f, scene)?;
    let geo = WarpGeometry::with_derivatives(p, scene)?;
    let d = geo.dim();
    let mut jac = DMatrix::zeros(d, f.channels);
    let Some(pre) = geo.preimage(x.0 as f64, x.1 as f64) else {
        return Ok(jac);
    };
    let mut dp = vec![[0.0; 2]; d];
    geo.preimage_derivatives(&pre, &mut dp);
    let taps = Taps::new(pre.p[0], pre.p[1], f.width, f.height);
    for c in 0..f.channels {
        let g = taps.value_gradient(f.plane(c));
        for k in 0..d {
            jac[(k, c)] = g[0] * dp[k][0] + g[1] * dp[k][1];
        }
    }
    Ok(jac)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transform::TransformKind;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn smooth_frame(c: usize, h: usize, w: usize) -> Frame {
        Frame::from_fn(c, h, w, |c, y, x| {
            let (x, y) = (x as f64, y as f64);
            0.5 + 0.2 * (0.21 * x + 0.1 * c as f64).sin() * (0.17 * y).cos() + 0.1 * (0.05 * (x + y)).sin()
        })
        .unwrap()
    }

    fn translation(tx: f64, ty: f64) -> Matrix3 {
        Matrix3::new(1.0, 0.0, tx, 0.0, 1.0, ty, 0.0, 0.0, 1.0)
    }

    #[test]
    fn frame_validates_range() {
        assert!(Frame::new(1, 1, 2, vec![0.0, 1.5]).is_err());
        assert!(Frame::new(1, 1, 2, vec![0.0]).is_err());
        assert!(Frame::new(1, 1, 2, vec![0.0, f64::NAN]).is_err());
    }

    #[test]
    fn sample_examples() {
        let f = Frame::new(1, 2, 3, vec![0.1, 0.4, 0.9, 0.3, 0.2, 0.6]).unwrap();
        assert_eq!(bilinear_sample(&f, 0, [2.0, 1.0]), 0.6);
        assert!((bilinear_sample(&f, 0, [0.5, 0.0]) - 0.25).abs() < 1e-15);
        assert_eq!(bilinear_sample(&f, 0, [-10.0, -10.0]), 0.0);
    }

    #[test]
    fn scene_bounds_examples() {
        let s = scene_bounds((64, 64), 1.0).unwrap();
        assert_eq!((s.height, s.width, s.offset), (64, 64, (0, 0)));
        let s = scene_bounds((64, 64), 3.0).unwrap();
        assert_eq!((s.height, s.width, s.offset), (192, 192, (64, 64)));
        let s = scene_bounds((50, 100), 2.0).unwrap();
        assert_eq!((s.height, s.width, s.offset), (100, 200, (50, 25)));
        assert!(scene_bounds((64, 64), 0.5).is_err());
    }

    #[test]
    fn identity_warp_places_frame() {
        let f = smooth_frame(2, 10, 12);
        let scene = scene_bounds((10, 12), 2.0).unwrap();
        let g = warp_frame(&f, &Matrix3::identity(), &scene).unwrap();
        let (ox, oy) = scene.offset;
        let n = scene.pixels();
        for sy in 0..scene.height {
            for sx in 0..scene.width {
                let inside = sx >= ox && sx < ox + 12 && sy >= oy && sy < oy + 10;
                let m = g.mask[sy * scene.width + sx];
                assert_eq!(m, if inside { 1.0 } else { 0.0 });
                for c in 0..2 {
                    let v = g.image[c * n + sy * scene.width + sx];
                    if inside {
                        assert!((v - f.get(c, sy - oy, sx - ox)).abs() < 1e-12);
                    } else {
                        assert_eq!(v, 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn integer_translation_shifts() {
        let f = smooth_frame(1, 8, 8);
        let scene = scene_bounds((8, 8), 2.0).unwrap();
        let g = warp_frame(&f, &translation(1.0, 0.0), &scene).unwrap();
        let (ox, oy) = scene.offset;
        for y in 0..8 {
            for x in 0..8 {
                let i = (y + oy) * scene.width + x + ox + 1;
                assert_eq!(g.mask[i], 1.0);
                assert!((g.image[i] - f.get(0, y, x)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn half_pixel_translation_gives_half_mask_on_boundary() {
        let f = smooth_frame(1, 8, 8);
        let scene = scene_bounds((8, 8), 2.0).unwrap();
        let g = warp_frame(&f, &translation(0.5, 0.0), &scene).unwrap();
        let (ox, oy) = scene.offset;
        let row = oy + 3;
        assert!((g.mask[row * scene.width + ox] - 0.5).abs() < 1e-12);
        assert!((g.mask[row * scene.width + ox + 8] - 0.5).abs() < 1e-12);
        assert!((g.mask[row * scene.width + ox + 4] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_mask_means_zero_image() {
        let f = smooth_frame(3, 16, 16);
        let scene = scene_bounds((16, 16), 3.0).unwrap();
        let p = TransformParams::affine(vec![0.1, -0.2, 3.3, 0.15, -0.05, -7.1]).unwrap();
        let g = warp_frame(&f, &transform::realize(&p).unwrap(), &scene).unwrap();
        let n = scene.pixels();
        for i in 0..n {
            assert!((0.0..=1.0).contains(&g.mask[i]));
            if g.mask[i] == 0.0 {
                for c in 0..3 {
                    assert_eq!(g.image[c * n + i], 0.0);
                }
            }
        }
    }

    #[test]
    fn mask_area_is_preserved_for_unit_determinant() {
        let f = smooth_frame(1, 32, 32);
        let scene = scene_bounds((32, 32), 3.0).unwrap();
        // Rotation by 0.3 rad with a translation.
        let p = TransformParams::affine(vec![0.0, -0.3, 4.0, 0.3, 0.0, -2.5]).unwrap();
        let g = warp_frame(&f, &transform::realize(&p).unwrap(), &scene).unwrap();
        let area = g.mask_sum();
        assert!((area - 1024.0).abs() / 1024.0 < 0.05, "area {area}");
    }

    #[test]
    fn warp_of_warp_is_close_for_smooth_images() {
        let f = smooth_frame(1, 24, 24);
        let scene = scene_bounds((24, 24), 1.0).unwrap();
        let t1 = transform::realize(&TransformParams::affine(vec![0.02, 0.05, 0.4, -0.05, 0.01, -0.3]).unwrap()).unwrap();
        let t2 = transform::realize(&TransformParams::affine(vec![-0.03, 0.02, -0.2, 0.01, 0.02, 0.6]).unwrap()).unwrap();
        let direct = warp_frame(&f, &(t2 * t1), &scene).unwrap();
        let once = warp_frame(&f, &t1, &scene).unwrap();
        let once_frame = Frame::new(1, 24, 24, once.image.clone()).unwrap();
        let twice = warp_frame(&once_frame, &t2, &scene).unwrap();
        let mut sum = 0.0;
        let mut count = 0.0;
        for i in 0..scene.pixels() {
            if direct.mask[i] > 0.999 && twice.mask[i] > 0.999 {
                sum += (direct.image[i] - twice.image[i]).abs();
                count += 1.0;
            }
        }
        assert!(count > 100.0);
        assert!(sum / count < 0.02);
    }

    #[test]
    fn constant_frame_has_zero_interior_jacobian() {
        let f = Frame::constant(2, 16, 16, 0.7).unwrap();
        let scene = scene_bounds((16, 16), 2.0).unwrap();
        let p = TransformParams::affine(vec![0.01, 0.02, 0.3, -0.01, 0.0, 0.2]).unwrap();
        let jac = warp_jacobian(&f, &p, &scene, (scene.offset.0 + 8, scene.offset.1 + 8)).unwrap();
        assert!(jac.iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn ramp_translation_derivative() {
        let w = 20;
        let f = Frame::from_fn(1, 10, w, |_, _, x| x as f64 / w as f64).unwrap();
        let scene = scene_bounds((10, w), 2.0).unwrap();
        let p = TransformParams::identity(TransformKind::Affine);
        let jac = warp_jacobian(&f, &p, &scene, (scene.offset.0 + 7, scene.offset.1 + 4)).unwrap();
        assert!((jac[(2, 0)] + 1.0 / w as f64).abs() < 1e-12);
        assert!(jac[(5, 0)].abs() < 1e-12);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let f = smooth_frame(2, 20, 20);
        let scene = scene_bounds((20, 20), 2.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut checked = 0;
        while checked < 40 {
            let kind = if checked % 2 == 0 { TransformKind::Affine } else { TransformKind::Homography };
            let mut theta: Vec<f64> = (0..kind.dim()).map(|_| rng.gen_range(-0.1..0.1)).collect();
            theta[2] *= 10.0;
            theta[5] *= 10.0;
            if kind == TransformKind::Homography {
                theta[6] *= 0.01;
                theta[7] *= 0.01;
            }
            let p = TransformParams::new(kind, theta, Matrix3::identity()).unwrap();
            let x = (scene.offset.0 + rng.gen_range(4..16), scene.offset.1 + rng.gen_range(4..16));
            // Skip pixels whose pre-image sits near a bilinear cell edge.
            let geo = WarpGeometry::new(&transform::realize(&p).unwrap(), &scene).unwrap();
            let pre = geo.preimage(x.0 as f64, x.1 as f64).unwrap();
            let frac = |v: f64| (v - v.round()).abs();
            if frac(pre.p[0]) < 0.01 || frac(pre.p[1]) < 0.01 {
                continue;
            }
            let jac = warp_jacobian(&f, &p, &scene, x).unwrap();
            let h = 1e-4;
            for k in 0..kind.dim() {
                let mut plus = p.clone();
                plus.theta[k] += h;
                let mut minus = p.clone();
                minus.theta[k] -= h;
                let gp = warp_frame(&f, &transform::realize(&plus).unwrap(), &scene).unwrap();
                let gm = warp_frame(&f, &transform::realize(&minus).unwrap(), &scene).unwrap();
                for c in 0..2 {
                    let i = c * scene.pixels() + x.1 * scene.width + x.0;
                    let fd = (gp.image[i] - gm.image[i]) / (2.0 * h);
                    let an = jac[(k, c)];
                    let scale = an.abs().max(fd.abs()).max(1e-3);
                    assert!((fd - an).abs() / scale < 1e-3, "k={k} fd={fd} an={an}");
                }
            }
            checked += 1;
        }
    }
}
