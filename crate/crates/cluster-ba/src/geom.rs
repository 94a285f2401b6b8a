//! Rigid-body poses and the perturbation used by the optimizer.
//!
//! A pose is stored as a full rotation matrix plus a translation. The solver
//! perturbs poses on the left: `T ⊞ (dphi, dt) = (exp(⌊dphi⌋)R, dt + exp(⌊dphi⌋)t)`.
//! Note that the translation is rotated too; this is not the naive `(R, t + dt)`
//! update, and every derivative in [`crate::problem`] is taken with respect to
//! exactly this parametrization.

use nalgebra::{Matrix3, Matrix4, Vector3, Vector6};

use crate::error::{Error, Result};

/// Skew-symmetric matrix of `v`, so that `skew(v) * w == v.cross(&w)`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rotation-angle threshold below which `so3_exp` switches to its series form.
const EXP_SERIES_THRESHOLD: f64 = 1e-7;

/// Exponential map of so(3): `exp(⌊phi⌋)` by the Rodrigues formula.
pub fn so3_exp(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = phi.norm_squared();
    let theta = theta2.sqrt();
    let k = skew(phi);
    // a = sin(t)/t, b = (1 - cos(t))/t^2; series below the threshold where the
    // direct forms lose precision to cancellation.
    let (a, b) = if theta < EXP_SERIES_THRESHOLD {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    Matrix3::identity() + k * a + k * k * b
}

/// Logarithm map of SO(3). Errors when the angle is within ~3e-5 rad of pi,
/// where the axis sign is numerically ambiguous; callers must never receive a
/// silently wrong sign.
pub fn so3_log(rot: &Matrix3<f64>) -> Result<Vector3<f64>> {
    let trace = rot.trace();
    if trace <= -1.0 + 1e-9 {
        return Err(Error::AngleNearPi { trace });
    }
    let cos_theta = ((trace - 1.0) / 2.0).clamp(-1.0, 1.0);
    let theta = cos_theta.acos();
    // vee((R - R^T)/2) = sin(theta) * axis.
    let w = Vector3::new(
        (rot[(2, 1)] - rot[(1, 2)]) / 2.0,
        (rot[(0, 2)] - rot[(2, 0)]) / 2.0,
        (rot[(1, 0)] - rot[(0, 1)]) / 2.0,
    );
    if theta < 1e-4 {
        // theta/sin(theta) = 1 + t^2/6 + 7t^4/360 + O(t^6); the trace has lost
        // theta^2 by then, so estimate it from w (= sin(theta) * axis).
        let t2 = w.norm_squared();
        Ok(w * (1.0 + t2 / 6.0 + 7.0 * t2 * t2 / 360.0))
    } else {
        Ok(w * (theta / theta.sin()))
    }
}

/// Rigid-body pose `(R, t)` acting as `p -> R p + t`.
///
/// The rotation is kept as a full 3x3 matrix: the derivative assembly consumes
/// poses as 4x4 homogeneous matrices, so a matrix representation avoids a
/// conversion in the hot path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rot: Matrix3<f64>,
    pub trans: Vector3<f64>,
}

impl Pose {
    pub fn new(rot: Matrix3<f64>, trans: Vector3<f64>) -> Self {
        Pose { rot, trans }
    }

    pub fn identity() -> Self {
        Pose {
            rot: Matrix3::identity(),
            trans: Vector3::zeros(),
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rot * p + self.trans
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rot: self.rot * other.rot,
            trans: self.rot * other.trans + self.trans,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rot_inv = self.rot.transpose();
        Pose {
            rot: rot_inv,
            trans: -(rot_inv * self.trans),
        }
    }

    /// 4x4 homogeneous matrix `[[R, t], [0, 1]]`.
    pub fn homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rot);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.trans);
        m
    }

    /// Left/global perturbation: `(exp(⌊dphi⌋)R, dt + exp(⌊dphi⌋)t)`.
    pub fn boxplus(&self, d: &Perturbation6) -> Pose {
        let rot_d = so3_exp(&d.dphi);
        Pose {
            rot: rot_d * self.rot,
            trans: d.dt + rot_d * self.trans,
        }
    }
}

/// Pose perturbation, ordered `(dphi, dt)` to match the solver's block layout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Perturbation6 {
    pub dphi: Vector3<f64>,
    pub dt: Vector3<f64>,
}

impl Perturbation6 {
    pub fn new(dphi: Vector3<f64>, dt: Vector3<f64>) -> Self {
        Perturbation6 { dphi, dt }
    }

    pub fn zero() -> Self {
        Perturbation6 {
            dphi: Vector3::zeros(),
            dt: Vector3::zeros(),
        }
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Perturbation6 {
            dphi: Vector3::new(v[0], v[1], v[2]),
            dt: Vector3::new(v[3], v[4], v[5]),
        }
    }

    pub fn as_vector(&self) -> Vector6<f64> {
        Vector6::new(
            self.dphi.x, self.dphi.y, self.dphi.z, self.dt.x, self.dt.y, self.dt.z,
        )
    }
}
