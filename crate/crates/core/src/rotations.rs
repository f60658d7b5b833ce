//! Conversions among axis-angle, rotation-matrix and 6D rotation
//! representations.
//!
//! The 6D form stores the first two columns of the rotation matrix,
//! column-major: `(c0.x, c0.y, c0.z, c1.x, c1.y, c1.z)`.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Tolerance used when accepting a matrix as a rotation.
pub const ROTATION_TOLERANCE: f64 = 1e-6;

/// Minimum column norm accepted by Gram–Schmidt recovery.
pub const DEGENERATE_6D_EPS: f64 = 1e-8;

/// Axis-angle rotation; direction is the axis, magnitude the angle in radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisAngle(pub Vec3);

/// 3x3 rotation matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotMatrix(pub Mat3);

/// First two columns of a rotation matrix, column-major.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rot6D(pub [f64; 6]);

impl AxisAngle {
    pub const IDENTITY: AxisAngle = AxisAngle(Vec3::new(0.0, 0.0, 0.0));

    pub fn new(x: f64, y: f64, z: f64) -> Self {
        AxisAngle(Vec3::new(x, y, z))
    }

    pub fn from_slice(s: &[f64]) -> Self {
        AxisAngle(Vec3::new(s[0], s[1], s[2]))
    }

    pub fn angle(&self) -> f64 {
        self.0.norm()
    }

    pub fn to_array(&self) -> [f64; 3] {
        [self.0.x, self.0.y, self.0.z]
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Maps the vector onto the canonical range `[0, π]` by flipping the axis
    /// when the angle exceeds π.
    pub fn canonical(self) -> Self {
        let angle = self.angle();
        if angle <= std::f64::consts::PI || !angle.is_finite() {
            return self;
        }
        let axis = self.0 / angle;
        let wrapped = angle.rem_euclid(2.0 * std::f64::consts::PI);
        if wrapped <= std::f64::consts::PI {
            AxisAngle(axis * wrapped)
        } else {
            AxisAngle(-axis * (2.0 * std::f64::consts::PI - wrapped))
        }
    }
}

impl RotMatrix {
    pub fn identity() -> Self {
        RotMatrix(Mat3::identity())
    }

    /// Rotation by `phi` about the z axis.
    pub fn about_z(phi: f64) -> Self {
        let (s, c) = phi.sin_cos();
        RotMatrix(Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0))
    }

    /// Checks orthonormality and orientation, returning the offending error.
    pub fn validate(&self, tol: f64) -> Result<()> {
        let m = &self.0;
        if !m.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("non-finite rotation matrix".into()));
        }
        let ortho = (m.transpose() * m - Mat3::identity()).abs().max();
        let det = (m.determinant() - 1.0).abs();
        let err = ortho.max(det);
        if err > tol {
            return Err(Error::InvalidRotation(err));
        }
        Ok(())
    }

    pub fn transpose(&self) -> Self {
        RotMatrix(self.0.transpose())
    }
}

impl std::ops::Mul for RotMatrix {
    type Output = RotMatrix;
    fn mul(self, rhs: RotMatrix) -> RotMatrix {
        RotMatrix(self.0 * rhs.0)
    }
}

pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

fn vee(m: &Mat3) -> Vec3 {
    Vec3::new(
        m[(2, 1)] - m[(1, 2)],
        m[(0, 2)] - m[(2, 0)],
        m[(1, 0)] - m[(0, 1)],
    )
}

/// Rodrigues formula.
pub fn axis_angle_to_matrix(a: AxisAngle) -> Result<RotMatrix> {
    if !a.is_finite() {
        return Err(Error::InvalidInput(format!(
            "non-finite axis-angle {:?}",
            a.0
        )));
    }
    Ok(rodrigues(&a.0))
}

pub(crate) fn rodrigues(v: &Vec3) -> RotMatrix {
    let theta2 = v.norm_squared();
    let k = skew(v);
    if theta2 < 1e-16 {
        // second-order expansion
        return RotMatrix(Mat3::identity() + k + 0.5 * k * k);
    }
    let theta = theta2.sqrt();
    let a = theta.sin() / theta;
    let b = (1.0 - theta.cos()) / theta2;
    RotMatrix(Mat3::identity() + a * k + b * k * k)
}

/// Partial derivatives `dR/dv_i` of the Rodrigues map at `v`.
pub fn rodrigues_jacobian(v: &Vec3) -> [Mat3; 3] {
    let theta2 = v.norm_squared();
    if theta2 < 1e-20 {
        return [skew(&Vec3::x()), skew(&Vec3::y()), skew(&Vec3::z())];
    }
    let r = rodrigues(v).0;
    let i_minus_r = Mat3::identity() - r;
    let vx = skew(v);
    let mut out = [Mat3::zeros(); 3];
    for (i, slot) in out.iter_mut().enumerate() {
        let e = Vec3::ith(i, 1.0);
        let w = v.cross(&(i_minus_r * e));
        *slot = (v[i] * vx + skew(&w)) * r / theta2;
    }
    out
}

/// Inverse of [`axis_angle_to_matrix`], returning the canonical angle in `[0, π]`.
pub fn matrix_to_axis_angle(m: RotMatrix) -> Result<AxisAngle> {
    m.validate(ROTATION_TOLERANCE)?;
    Ok(log_map(&m.0))
}

pub(crate) fn log_map(m: &Mat3) -> AxisAngle {
    let w = vee(m);
    let sin2 = w.norm(); // 2 sin(theta)
    let cos2 = m.trace() - 1.0; // 2 cos(theta)
    let theta = sin2.atan2(cos2);
    if theta < 1e-12 {
        return AxisAngle(0.5 * w);
    }
    if theta < std::f64::consts::PI - 1e-3 {
        return AxisAngle(w * (theta / sin2));
    }
    // Near π the antisymmetric part vanishes; read the axis from the
    // symmetric part using the largest diagonal entry.
    let c = theta.cos();
    let s = 0.5 * (m + m.transpose());
    let nn = (s - c * Mat3::identity()) / (1.0 - c);
    let i = (0..3)
        .max_by(|&a, &b| nn[(a, a)].partial_cmp(&nn[(b, b)]).unwrap())
        .unwrap();
    let ni = nn[(i, i)].max(0.0).sqrt();
    let mut n = Vec3::zeros();
    for j in 0..3 {
        n[j] = if j == i { ni } else { nn[(i, j)] / ni };
    }
    n.normalize_mut();
    if w.dot(&n) < 0.0 {
        n = -n;
    }
    if w.norm() < 1e-12 {
        // exactly π: both signs are valid, pick first significant component positive
        if let Some(first) = n.iter().find(|v| v.abs() > 1e-12) {
            if *first < 0.0 {
                n = -n;
            }
        }
    }
    AxisAngle(n * theta)
}

pub fn matrix_to_rot6d(m: RotMatrix) -> Rot6D {
    let c0 = m.0.column(0);
    let c1 = m.0.column(1);
    Rot6D([c0[0], c0[1], c0[2], c1[0], c1[1], c1[2]])
}

/// Gram–Schmidt recovery of a rotation from two (not necessarily
/// orthogonal) columns.
pub fn rot6d_to_matrix(r: Rot6D) -> Result<RotMatrix> {
    let v = r.0;
    if !v.iter().all(|x| x.is_finite()) {
        return Err(Error::Degenerate6d("non-finite input".into()));
    }
    let a = Vec3::new(v[0], v[1], v[2]);
    let b = Vec3::new(v[3], v[4], v[5]);
    let na = a.norm();
    if na <= DEGENERATE_6D_EPS {
        return Err(Error::Degenerate6d(format!("first column norm {na:e}")));
    }
    let c0 = a / na;
    let b_perp = b - c0.dot(&b) * c0;
    let nb = b_perp.norm();
    if nb <= DEGENERATE_6D_EPS {
        return Err(Error::Degenerate6d(format!(
            "second column parallel to first (residual {nb:e})"
        )));
    }
    let c1 = b_perp / nb;
    let c2 = c0.cross(&c1);
    Ok(RotMatrix(Mat3::from_columns(&[c0, c1, c2])))
}

/// Geodesic interpolation between two axis-angle rotations.
pub(crate) fn slerp(a: &AxisAngle, b: &AxisAngle, t: f64) -> AxisAngle {
    let ra = rodrigues(&a.0);
    let rb = rodrigues(&b.0);
    let delta = log_map(&(ra.0.transpose() * rb.0));
    log_map(&(ra.0 * rodrigues(&(delta.0 * t)).0))
}

/// Convenience conversion used by the feature encoders.
pub fn axis_angle_to_rot6d(a: &AxisAngle) -> Rot6D {
    matrix_to_rot6d(rodrigues(&a.0))
}

pub fn rot6d_to_axis_angle(r: Rot6D) -> Result<AxisAngle> {
    Ok(log_map(&rot6d_to_matrix(r)?.0))
}
