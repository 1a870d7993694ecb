//! Affine and homography transforms parameterized through the matrix
//! exponential.
//!
//! Every transform is `base · exp(G(θ))`, where `G` places the parameter
//! vector into a 3×3 generator. For the affine family the generator has a
//! zero last row, so the exponential is an affine matrix with positive
//! determinant. For homographies the generator is traceless, so the
//! exponential has unit determinant. Either way the realized matrix is
//! invertible for every finite θ.
//!
//! Transforms act on frame coordinates whose origin is the frame center; see
//! [`crate::warp::SceneDomain`] for the mapping to pixel indices.

use std::fmt;
use std::str::FromStr;

use nalgebra::{SMatrix, Vector3};

use crate::{Error, Result};

pub type Matrix3 = nalgebra::Matrix3<f64>;

/// Homogeneous coordinates with `|w|` at or below this are treated as points
/// at infinity.
pub const HORIZON_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TransformKind {
    Affine,
    Homography,
}

impl TransformKind {
    /// Number of free parameters.
    pub fn dim(self) -> usize {
        match self {
            TransformKind::Affine => 6,
            TransformKind::Homography => 8,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TransformKind::Affine => "affine",
            TransformKind::Homography => "homography",
        }
    }
}

impl fmt::Display for TransformKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TransformKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "affine" | "aff" => Ok(TransformKind::Affine),
            "homography" | "hom" => Ok(TransformKind::Homography),
            other => Err(Error::argument(format!("unknown transform kind `{other}`"))),
        }
    }
}

/// A transform family member: parameter vector plus a frozen base matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformParams {
    pub kind: TransformKind,
    pub theta: Vec<f64>,
    /// Left factor of the realized matrix. Identity for affine transforms;
    /// for homographies it holds the frozen affine warm start.
    pub base: Matrix3,
}

impl TransformParams {
    pub fn identity(kind: TransformKind) -> Self {
        Self {
            kind,
            theta: vec![0.0; kind.dim()],
            base: Matrix3::identity(),
        }
    }

    pub fn affine(theta: Vec<f64>) -> Result<Self> {
        Self::new(TransformKind::Affine, theta, Matrix3::identity())
    }

    pub fn homography(theta: Vec<f64>, base: Matrix3) -> Result<Self> {
        Self::new(TransformKind::Homography, theta, base)
    }

    pub fn new(kind: TransformKind, theta: Vec<f64>, base: Matrix3) -> Result<Self> {
        if theta.len() != kind.dim() {
            return Err(Error::argument(format!(
                "{kind} transform needs {} parameters, got {}",
                kind.dim(),
                theta.len()
            )));
        }
        if theta.iter().chain(base.iter()).any(|v| !v.is_finite()) {
            return Err(Error::argument("non-finite transform parameter"));
        }
        Ok(Self { kind, theta, base })
    }

    /// Homography warm start: the realized matrix of `self` becomes the
    /// frozen base and the homography parameters start at zero.
    pub fn to_homography(&self) -> Result<Self> {
        Ok(Self {
            kind: TransformKind::Homography,
            theta: vec![0.0; TransformKind::Homography.dim()],
            base: realize(self)?,
        })
    }

    pub fn dim(&self) -> usize {
        self.kind.dim()
    }

    pub fn matrix(&self) -> Result<Matrix3> {
        realize(self)
    }
}

fn check_len(theta: &[f64], n: usize) -> Result<()> {
    if theta.len() != n {
        return Err(Error::argument(format!(
            "expected {n} parameters, got {}",
            theta.len()
        )));
    }
    Ok(())
}

/// Affine generator with a zero last row.
pub fn affine_generator(theta: &[f64]) -> Result<Matrix3> {
    check_len(theta, 6)?;
    Ok(Matrix3::new(
        theta[0], theta[1], theta[2], theta[3], theta[4], theta[5], 0.0, 0.0, 0.0,
    ))
}

/// Traceless generator: eight free entries, `(3,3)` closes the trace.
pub fn homography_generator(theta: &[f64]) -> Result<Matrix3> {
    check_len(theta, 8)?;
    Ok(Matrix3::new(
        theta[0],
        theta[1],
        theta[2],
        theta[3],
        theta[4],
        theta[5],
        theta[6],
        theta[7],
        -(theta[0] + theta[4]),
    ))
}

pub fn generator(kind: TransformKind, theta: &[f64]) -> Result<Matrix3> {
    match kind {
        TransformKind::Affine => affine_generator(theta),
        TransformKind::Homography => homography_generator(theta),
    }
}

/// Generator of the `k`-th unit parameter vector.
pub fn basis_generator(kind: TransformKind, k: usize) -> Result<Matrix3> {
    if k >= kind.dim() {
        return Err(Error::argument(format!(
            "parameter index {k} out of range for {kind}"
        )));
    }
    let mut e = vec![0.0; kind.dim()];
    e[k] = 1.0;
    generator(kind, &e)
}

fn norm_1<const N: usize>(a: &SMatrix<f64, N, N>) -> f64 {
    (0..N)
        .map(|j| (0..N).map(|i| a[(i, j)].abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Scaling and squaring with a Taylor core. After scaling the 1-norm is at
/// most 1/16, where 16 terms are far below double precision.
pub(crate) fn expm<const N: usize>(a: &SMatrix<f64, N, N>) -> SMatrix<f64, N, N> {
    let norm = norm_1(a);
    let squarings = norm.max(1.0).log2().ceil() as i32 + 4;
    let scaled = a / 2f64.powi(squarings);

    let mut result = SMatrix::<f64, N, N>::identity();
    let mut term = SMatrix::<f64, N, N>::identity();
    for k in 1..=16 {
        term = term * scaled / k as f64;
        result += term;
    }
    for _ in 0..squarings {
        result = result * result;
    }
    result
}

pub fn matrix_exp(a: &Matrix3) -> Result<Matrix3> {
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::argument("matrix exponential of non-finite matrix"));
    }
    Ok(expm(a))
}

/// Fréchet derivative of `exp` at `a` in direction `e`: the upper-right block
/// of `exp([[a, e], [0, a]])`.
pub fn exp_frechet(a: &Matrix3, e: &Matrix3) -> Matrix3 {
    let mut block = SMatrix::<f64, 6, 6>::zeros();
    block.fixed_view_mut::<3, 3>(0, 0).copy_from(a);
    block.fixed_view_mut::<3, 3>(3, 3).copy_from(a);
    block.fixed_view_mut::<3, 3>(0, 3).copy_from(e);
    let exp = expm(&block);
    exp.fixed_view::<3, 3>(0, 3).into_owned()
}

pub fn realize(p: &TransformParams) -> Result<Matrix3> {
    let g = generator(p.kind, &p.theta)?;
    let t = matrix_exp(&g)?;
    Ok(match p.kind {
        TransformKind::Affine => t,
        TransformKind::Homography => p.base * t,
    })
}

/// Derivative of [`realize`] with respect to `theta[k]`.
pub fn d_realize(p: &TransformParams, k: usize) -> Result<Matrix3> {
    let g = generator(p.kind, &p.theta)?;
    let e = basis_generator(p.kind, k)?;
    let d = exp_frechet(&g, &e);
    Ok(match p.kind {
        TransformKind::Affine => d,
        TransformKind::Homography => p.base * d,
    })
}

/// All `d` parameter derivatives of the realized matrix.
pub fn d_realize_all(p: &TransformParams) -> Result<Vec<Matrix3>> {
    (0..p.dim()).map(|k| d_realize(p, k)).collect()
}

pub fn apply(t: &Matrix3, x: [f64; 2]) -> Result<[f64; 2]> {
    let q = t * Vector3::new(x[0], x[1], 1.0);
    if q.z.abs() <= HORIZON_EPS {
        return Err(Error::HorizonSingularity { w: q.z });
    }
    Ok([q.x / q.z, q.y / q.z])
}

pub fn inverse(t: &Matrix3) -> Result<Matrix3> {
    let det = t.determinant();
    if !det.is_finite() || det.abs() < 1e-300 {
        return Err(Error::Singular { det });
    }
    t.try_inverse().ok_or(Error::Singular { det })
}

/// Per-parameter step scales for a frame of size `h × w`. Translations are
/// measured in half-frames. The linear part gets a fifth of a unit, since
/// camera rotation and zoom between frames stay well below 0.2 rad, and the
/// perspective terms get the same, divided by the half-frame size.
pub fn parameter_scales(kind: TransformKind, h: usize, w: usize) -> Vec<f64> {
    let r = h.max(w) as f64 / 2.0;
    let l = LINEAR_SCALE;
    match kind {
        TransformKind::Affine => vec![l, l, r, l, l, r],
        TransformKind::Homography => vec![l, l, r, l, l, r, l / r, l / r],
    }
}

const LINEAR_SCALE: f64 = 0.2;

/// Pixel-center corners of an `h × w` frame in centered coordinates.
pub fn frame_corners(h: usize, w: usize) -> [[f64; 2]; 4] {
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    [[-cx, -cy], [cx, -cy], [cx, cy], [-cx, cy]]
}

/// Transform taking frame `n` coordinates to reference-frame coordinates,
/// `T_ref⁻¹ · T_n`. It does not change when every transform is
/// left-composed with the same matrix.
pub fn relative(reference: &Matrix3, t: &Matrix3) -> Result<Matrix3> {
    Ok(inverse(reference)? * t)
}

/// Mean corner displacement between two transforms of an `h × w` frame.
pub fn corner_distance(a: &Matrix3, b: &Matrix3, h: usize, w: usize) -> Result<f64> {
    let mut total = 0.0;
    for c in frame_corners(h, w) {
        let pa = apply(a, c)?;
        let pb = apply(b, c)?;
        total += ((pa[0] - pb[0]).powi(2) + (pa[1] - pb[1]).powi(2)).sqrt();
    }
    Ok(total / 4.0)
}

/// Gauge-corrected alignment error: mean over frames of the corner distance
/// between estimated and true transforms, both taken relative to frame
/// `reference`.
pub fn gauge_corrected_corner_error(
    estimated: &[Matrix3],
    truth: &[Matrix3],
    reference: usize,
    h: usize,
    w: usize,
) -> Result<f64> {
    if estimated.len() != truth.len() || reference >= estimated.len() {
        return Err(Error::argument("transform lists differ in length"));
    }
    let mut total = 0.0;
    for (e, t) in estimated.iter().zip(truth) {
        let re = relative(&estimated[reference], e)?;
        let rt = relative(&truth[reference], t)?;
        total += corner_distance(&re, &rt, h, w)?;
    }
    Ok(total / estimated.len() as f64)
}
