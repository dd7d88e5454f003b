//! Lane points from vehicle pose plus lateral lane measurements, with
//! first-order covariance propagation.
//!
//! Perturbations are taken in the body frame: `p + R δp`, `R Exp(δφ)`,
//! `L + δL`. The lane point `p + R L` then has Jacobian `[R, −R L∧, R]`.

use nalgebra::{Matrix3, SMatrix, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::GeometryError;
use crate::geometry::{validate_cov, Point2};
use crate::models::DataPoint;

pub type Matrix9 = SMatrix<f64, 9, 9>;
pub type Matrix3x9 = SMatrix<f64, 3, 9>;

/// Orthonormality tolerance for [`Rotation3::new`].
pub const ROTATION_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

/// A proper rotation matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation3(Matrix3<f64>);

impl Rotation3 {
    pub fn identity() -> Self {
        Rotation3(Matrix3::identity())
    }

    /// Checks `RᵀR = I` and `det R = 1` to `tol`; returns the worst deviation
    /// on failure.
    pub fn new(m: Matrix3<f64>, tol: f64) -> Result<Self, f64> {
        let ortho = (m.transpose() * m - Matrix3::identity()).amax();
        let det = (m.determinant() - 1.0).abs();
        let err = ortho.max(det);
        if err <= tol && m.iter().all(|v| v.is_finite()) {
            Ok(Rotation3(m))
        } else {
            Err(if err.is_nan() { f64::INFINITY } else { err })
        }
    }

    /// Rotation from a unit quaternion `(w, x, y, z)`; the input is normalized.
    pub fn from_quaternion(w: f64, x: f64, y: f64, z: f64) -> Option<Self> {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if !(n > 0.0) || !n.is_finite() {
            return None;
        }
        let (w, x, y, z) = (w / n, x / n, y / n, z / n);
        Some(Rotation3(Matrix3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        )))
    }

    /// Rotation by `yaw` about the z axis.
    pub fn about_z(yaw: f64) -> Self {
        exp_so3(&Vector3::new(0.0, 0.0, yaw))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Rotation3(self.0.transpose())
    }

    pub fn compose(&self, other: &Rotation3) -> Self {
        Rotation3(self.0 * other.0)
    }
}

impl std::ops::Mul<Vector3<f64>> for Rotation3 {
    type Output = Vector3<f64>;
    fn mul(self, v: Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }
}

/// `v∧`, so that `skew(v) · w = v × w`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rodrigues' formula; second-order series below `‖φ‖ = 1e-8`.
pub fn exp_so3(phi: &Vector3<f64>) -> Rotation3 {
    let theta = phi.norm();
    let k = skew(phi);
    let k2 = k * k;
    let m = if theta < 1e-8 {
        Matrix3::identity() + k + k2 * 0.5
    } else {
        Matrix3::identity() + k * (theta.sin() / theta) + k2 * ((1.0 - theta.cos()) / (theta * theta))
    };
    Rotation3(m)
}

/// Repairs a joint covariance to symmetric PSD: symmetrize, then clamp
/// negative eigenvalues to zero. Returns the repaired matrix and whether a
/// change beyond symmetrization was needed.
pub fn repair_joint_cov(m: &Matrix9) -> Result<(Matrix9, bool), GeometryError> {
    for r in 0..9 {
        for c in 0..9 {
            if !m[(r, c)].is_finite() {
                return Err(GeometryError::NonFiniteCovariance { row: r, col: c });
            }
        }
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    if eig.eigenvalues.iter().all(|&l| l >= 0.0) {
        return Ok((sym, false));
    }
    let clamped = eig.eigenvalues.map(|l| l.max(0.0));
    let v = eig.eigenvectors;
    let out = v * Matrix9::from_diagonal(&clamped) * v.transpose();
    Ok(((out + out.transpose()) * 0.5, true))
}

#[derive(Debug, Clone, PartialEq)]
pub struct VehicleState {
    pub p: Vector3<f64>,
    pub rot: Rotation3,
    pub lane_left: Vector3<f64>,
    pub lane_right: Vector3<f64>,
    /// Covariance over `(δp, δφ, δL)` shared by both sides; `δL` refers to
    /// the side being propagated.
    pub joint_cov: Matrix9,
}

impl VehicleState {
    pub fn lane(&self, side: Side) -> Vector3<f64> {
        match side {
            Side::Left => self.lane_left,
            Side::Right => self.lane_right,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LanePoint3 {
    pub pos: Vector3<f64>,
    pub cov3: Matrix3<f64>,
}

/// `p + R L` for the chosen side.
pub fn lane_point(state: &VehicleState, side: Side) -> Vector3<f64> {
    state.p + state.rot * state.lane(side)
}

/// `[R, −R L∧, R]`, columns ordered `(δp, δφ, δL)`.
pub fn lane_point_jacobian(state: &VehicleState, side: Side) -> Matrix3x9 {
    let r = *state.rot.matrix();
    let mut j = Matrix3x9::zeros();
    j.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
    j.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-r * skew(&state.lane(side))));
    j.fixed_view_mut::<3, 3>(0, 6).copy_from(&r);
    j
}

/// Delta-method propagation `J Σ Jᵀ`.
pub fn propagate(state: &VehicleState, side: Side) -> LanePoint3 {
    let j = lane_point_jacobian(state, side);
    let cov = j * state.joint_cov * j.transpose();
    LanePoint3 { pos: lane_point(state, side), cov3: (cov + cov.transpose()) * 0.5 }
}

/// Drops `z`: position `(x, y)` and the upper-left 2×2 covariance block.
pub fn to_planar(lp: &LanePoint3, index: usize) -> Result<DataPoint, GeometryError> {
    let c = &lp.cov3;
    let (cov, _) = validate_cov([[c[(0, 0)], c[(0, 1)]], [c[(1, 0)], c[(1, 1)]]])?;
    Ok(DataPoint::new(index, Point2::new(lp.pos.x, lp.pos.y), cov))
}

/// Propagates every state for one side into ordered planar data points
/// (ordinals from 1).
pub fn ingest(states: &[VehicleState], side: Side) -> Result<Vec<DataPoint>, GeometryError> {
    states.iter().enumerate().map(|(k, s)| to_planar(&propagate(s, side), k + 1)).collect()
}
