//! Rigid motion, plane-induced homographies and the point warp.
//!
//! Poses are searched as small vectors (translation followed by an
//! axis-angle rotation) and lifted to `SE(3)` through the exponential map.
//! A pose together with the tracked plane and the camera intrinsics induces
//! the homography `K (R + t nᵀ) K⁻¹` that maps reference pixels into the
//! current frame.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

/// Entries below this magnitude are treated as zero for determinants and
/// perspective denominators.
pub const DEGENERACY_EPS: f64 = 1e-12;

const ORTHONORMAL_DRIFT: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("degenerate homography (|det| = {0:e})")]
    DegenerateHomography(f64),
    #[error("point maps to infinity (denominator {0:e})")]
    PointAtInfinity(f64),
    #[error("pose of dof {dof} needs {dof} values, got {got}")]
    PoseLength { dof: usize, got: usize },
    #[error("pose component {0} is not finite")]
    NonFinitePose(usize),
    #[error("unsupported dof {0}; expected 2, 4 or 6")]
    UnsupportedDof(usize),
    #[error("plane normal must be finite and nonzero")]
    InvalidPlane,
    #[error("focal lengths must be positive and finite")]
    InvalidIntrinsics,
}

/// Number of pose parameters searched per frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Dof {
    /// In-plane translation `(tx, ty)`.
    Two,
    /// Translation and yaw `(tx, ty, tz, rz)`.
    Four,
    /// Full `(tx, ty, tz, rx, ry, rz)`.
    Six,
}

impl Dof {
    pub fn count(self) -> usize {
        match self {
            Dof::Two => 2,
            Dof::Four => 4,
            Dof::Six => 6,
        }
    }

    pub fn from_count(n: usize) -> Result<Self, GeometryError> {
        match n {
            2 => Ok(Dof::Two),
            4 => Ok(Dof::Four),
            6 => Ok(Dof::Six),
            other => Err(GeometryError::UnsupportedDof(other)),
        }
    }

    /// Index into the full `(tx, ty, tz, rx, ry, rz)` layout of each
    /// searched component.
    pub fn layout(self) -> &'static [usize] {
        match self {
            Dof::Two => &[0, 1],
            Dof::Four => &[0, 1, 2, 5],
            Dof::Six => &[0, 1, 2, 3, 4, 5],
        }
    }

    /// Whether the searched component at `index` is a rotation.
    pub fn is_rotation(self, index: usize) -> bool {
        self.layout()[index] >= 3
    }
}

impl fmt::Display for Dof {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.count())
    }
}

impl FromStr for Dof {
    type Err = GeometryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let n: usize = s
            .trim()
            .parse()
            .map_err(|_| GeometryError::UnsupportedDof(0))?;
        Dof::from_count(n)
    }
}

/// A point in the pose search space.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseVector {
    dof: Dof,
    values: Vec<f64>,
}

impl PoseVector {
    pub fn new(dof: Dof, values: Vec<f64>) -> Result<Self, GeometryError> {
        if values.len() != dof.count() {
            return Err(GeometryError::PoseLength {
                dof: dof.count(),
                got: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinitePose(i));
        }
        Ok(Self { dof, values })
    }

    pub fn zero(dof: Dof) -> Self {
        Self {
            dof,
            values: vec![0.0; dof.count()],
        }
    }

    pub fn dof(&self) -> Dof {
        self.dof
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Expands to `(tx, ty, tz, rx, ry, rz)` with unsearched components at 0.
    pub fn to_full(&self) -> [f64; 6] {
        let mut full = [0.0; 6];
        for (&slot, &v) in self.dof.layout().iter().zip(&self.values) {
            full[slot] = v;
        }
        full
    }
}

/// Cross-product matrix: `skew(v) * w == v × w`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rodrigues' formula for the rotation `exp(skew(w))`.
pub fn exp_so3(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta_sq = w.norm_squared();
    let theta = theta_sq.sqrt();
    // sin(θ)/θ and (1 - cos θ)/θ², with series near zero
    let (a, b) = if theta < 1e-6 {
        (1.0 - theta_sq / 6.0, 0.5 - theta_sq / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta_sq)
    };
    let k = skew(w);
    Matrix3::identity() + k * a + k * k * b
}

/// Axis-angle vector of a rotation matrix, with angle in `[0, π]`.
pub fn log_so3(r: &Matrix3<f64>) -> Vector3<f64> {
    let vee = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    // atan2 keeps precision near 0 and π where acos of the trace does not
    let theta = (0.5 * vee.norm()).atan2(0.5 * (r.trace() - 1.0));
    if theta < 1e-6 {
        return vee * 0.5;
    }
    if std::f64::consts::PI - theta > 1e-6 {
        return vee * (theta / (2.0 * theta.sin()));
    }
    // Near π: recover the axis from the symmetric part R = 2aaᵀ - I.
    let diag = Vector3::new(r[(0, 0)], r[(1, 1)], r[(2, 2)]);
    let k = diag.imax();
    let mut axis = Vector3::zeros();
    axis[k] = ((diag[k] + 1.0) * 0.5).max(0.0).sqrt();
    for j in 0..3 {
        if j != k {
            axis[j] = (r[(j, k)] + r[(k, j)]) / (4.0 * axis[k]);
        }
    }
    let axis = axis.normalize();
    // sign from the (small) antisymmetric part
    let axis = if axis.dot(&vee) < 0.0 { -axis } else { axis };
    axis * theta
}

/// A rotation and translation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    /// Lifts a pose vector; missing components are zero.
    pub fn from_pose(x: &PoseVector) -> Self {
        let f = x.to_full();
        Self {
            rotation: exp_so3(&Vector3::new(f[3], f[4], f[5])),
            translation: Vector3::new(f[0], f[1], f[2]),
        }
    }

    /// `(tx, ty, tz, rx, ry, rz)` with the rotation as an axis-angle vector.
    pub fn to_full_pose(&self) -> [f64; 6] {
        let w = log_so3(&self.rotation);
        [
            self.translation.x,
            self.translation.y,
            self.translation.z,
            w.x,
            w.y,
            w.z,
        ]
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> Self {
        let rotation = orthonormalize(self.rotation * other.rotation);
        Self {
            rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// Angle of the rotation in radians.
    pub fn rotation_angle(&self) -> f64 {
        ((self.rotation.trace() - 1.0) * 0.5).clamp(-1.0, 1.0).acos()
    }

    /// `max |RᵀR - I|` over all entries.
    pub fn orthonormality_error(&self) -> f64 {
        (self.rotation.transpose() * self.rotation - Matrix3::identity()).amax()
    }
}

/// Projects onto the nearest rotation when `r` has drifted off SO(3).
fn orthonormalize(r: Matrix3<f64>) -> Matrix3<f64> {
    let drift = (r.transpose() * r - Matrix3::identity()).amax();
    if drift <= ORTHONORMAL_DRIFT {
        return r;
    }
    let svd = r.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return r,
    };
    let mut projected = u * v_t;
    if projected.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        projected = u * v_t;
    }
    projected
}

/// Plane normal divided by the plane depth in the reference camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneParams {
    scaled_normal: Vector3<f64>,
}

impl PlaneParams {
    pub fn new(scaled_normal: Vector3<f64>) -> Result<Self, GeometryError> {
        let norm = scaled_normal.norm();
        if !norm.is_finite() || norm <= 0.0 {
            return Err(GeometryError::InvalidPlane);
        }
        Ok(Self { scaled_normal })
    }

    /// Unit normal direction `normal` at distance `depth`.
    pub fn from_normal_depth(normal: Vector3<f64>, depth: f64) -> Result<Self, GeometryError> {
        let norm = normal.norm();
        if !norm.is_finite() || norm <= 0.0 || !depth.is_finite() || depth <= 0.0 {
            return Err(GeometryError::InvalidPlane);
        }
        Self::new(normal / (norm * depth))
    }

    /// Plane `z = 1` facing the camera.
    pub fn fronto_parallel() -> Self {
        Self {
            scaled_normal: Vector3::z(),
        }
    }

    pub fn scaled_normal(&self) -> &Vector3<f64> {
        &self.scaled_normal
    }
}

/// Pinhole intrinsics without skew.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self, GeometryError> {
        if !(fx.is_finite() && fy.is_finite() && fx > 0.0 && fy > 0.0) {
            return Err(GeometryError::InvalidIntrinsics);
        }
        if !(cx.is_finite() && cy.is_finite()) {
            return Err(GeometryError::InvalidIntrinsics);
        }
        Ok(Self { fx, fy, cx, cy })
    }

    pub fn identity() -> Self {
        Self {
            fx: 1.0,
            fy: 1.0,
            cx: 0.0,
            cy: 0.0,
        }
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn inverse_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            1.0 / self.fx,
            0.0,
            -self.cx / self.fx,
            0.0,
            1.0 / self.fy,
            -self.cy / self.fy,
            0.0,
            0.0,
            1.0,
        )
    }
}

/// A projective map of the image plane, kept in a fixed scale
/// representative so that equal maps compare equal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography {
    h: Matrix3<f64>,
}

impl Homography {
    pub fn identity() -> Self {
        Self {
            h: Matrix3::identity(),
        }
    }

    /// Normalizes `m` and rejects singular maps.
    pub fn new(m: Matrix3<f64>) -> Result<Self, GeometryError> {
        let h = normalize(m);
        let det = h.determinant();
        if !det.is_finite() || det.abs() < DEGENERACY_EPS {
            return Err(GeometryError::DegenerateHomography(det));
        }
        Ok(Self { h })
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.h
    }

    /// `self · other`: applies `other` first.
    pub fn compose(&self, other: &Homography) -> Result<Homography, GeometryError> {
        Homography::new(self.h * other.h)
    }

    pub fn inverse(&self) -> Result<Homography, GeometryError> {
        let inv = self
            .h
            .try_inverse()
            .ok_or(GeometryError::DegenerateHomography(0.0))?;
        Homography::new(inv)
    }

    /// Applies the map with perspective division.
    #[inline]
    pub fn warp_point(&self, u: f64, v: f64) -> Result<(f64, f64), GeometryError> {
        let h = &self.h;
        let d = h[(2, 0)] * u + h[(2, 1)] * v + h[(2, 2)];
        if d.abs() < DEGENERACY_EPS {
            return Err(GeometryError::PointAtInfinity(d));
        }
        Ok((
            (h[(0, 0)] * u + h[(0, 1)] * v + h[(0, 2)]) / d,
            (h[(1, 0)] * u + h[(1, 1)] * v + h[(1, 2)]) / d,
        ))
    }

    /// Row-major entries `h11..h33`.
    pub fn to_row_major(&self) -> [f64; 9] {
        let h = &self.h;
        [
            h[(0, 0)],
            h[(0, 1)],
            h[(0, 2)],
            h[(1, 0)],
            h[(1, 1)],
            h[(1, 2)],
            h[(2, 0)],
            h[(2, 1)],
            h[(2, 2)],
        ]
    }
}

/// Scales so that `h33 = 1`, or by the largest-magnitude entry when `h33`
/// vanishes.
pub fn normalize(m: Matrix3<f64>) -> Matrix3<f64> {
    let h33 = m[(2, 2)];
    if h33.abs() > DEGENERACY_EPS {
        m / h33
    } else {
        let big = m.iter().copied().fold(0.0_f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
        if big == 0.0 {
            m
        } else {
            m / big
        }
    }
}

/// `K (R + t nᵀ) K⁻¹` for the plane `n` seen by the camera `K` after the
/// motion `T`.
pub fn homography_from_pose(
    transform: &RigidTransform,
    plane: &PlaneParams,
    intrinsics: &CameraIntrinsics,
) -> Result<Homography, GeometryError> {
    let euclidean = transform.rotation + transform.translation * plane.scaled_normal.transpose();
    let det = euclidean.determinant();
    if !det.is_finite() || det.abs() < DEGENERACY_EPS {
        return Err(GeometryError::DegenerateHomography(det));
    }
    Homography::new(intrinsics.matrix() * euclidean * intrinsics.inverse_matrix())
}
