//! The point-cluster coordinate and its linearized noise.
//!
//! A cluster summarizes a point set by `P = Σ p pᵀ`, `v = Σ p`, `N = count`,
//! i.e. the symmetric 4x4 matrix `[[P, v], [vᵀ, N]]`. Two facts make it useful:
//! rigid transforms act by congruence on that matrix, and merging point sets
//! adds their coordinates. Both are exact, so all cost and derivative
//! evaluation downstream works on clusters and never revisits raw points. The
//! point set cannot be recovered from its coordinate; whoever needs points
//! again (simulator, associator) has to keep them.

use nalgebra::{Matrix3, Matrix4, SMatrix, Vector3};

use crate::error::{Error, Result};
use crate::geom::Pose;

/// Point-cluster coordinate `(P, v, N)` of a point set.
///
/// `N` is kept as an exact integer: the scatter matrix divides by `N` and
/// `N²`, so the count must never accumulate rounding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointCluster {
    /// Second moment `Σ p pᵀ` (m²·count), symmetric.
    pub p: Matrix3<f64>,
    /// First moment `Σ p` (m·count).
    pub v: Vector3<f64>,
    /// Point count.
    pub n: u64,
}

impl PointCluster {
    /// The empty cluster, the identity element of [`merge`](Self::merge).
    pub fn empty() -> Self {
        PointCluster {
            p: Matrix3::zeros(),
            v: Vector3::zeros(),
            n: 0,
        }
    }

    /// Accumulate a cluster from points.
    pub fn from_points(points: &[Vector3<f64>]) -> Self {
        let mut p = Matrix3::zeros();
        let mut v = Vector3::zeros();
        for pt in points {
            p += pt * pt.transpose();
            v += pt;
        }
        PointCluster {
            p,
            v,
            n: points.len() as u64,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// The equivalent symmetric 4x4 coordinate `[[P, v], [vᵀ, N]]`.
    pub fn homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.p);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.v);
        m.fixed_view_mut::<1, 3>(3, 0)
            .copy_from(&self.v.transpose());
        m[(3, 3)] = self.n as f64;
        m
    }

    /// Cluster of the transformed point set, computed without touching points:
    /// the 4x4 coordinate transforms by congruence with the homogeneous pose.
    pub fn transform(&self, t: &Pose) -> PointCluster {
        let n = self.n as f64;
        let rp = t.rot * self.p;
        let rv = t.rot * self.v;
        let p = rp * t.rot.transpose()
            + rv * t.trans.transpose()
            + t.trans * rv.transpose()
            + t.trans * t.trans.transpose() * n;
        PointCluster {
            p: (p + p.transpose()) / 2.0,
            v: rv + t.trans * n,
            n: self.n,
        }
    }

    /// Cluster of the union of the two point sets: componentwise sum.
    pub fn merge(&self, other: &PointCluster) -> PointCluster {
        PointCluster {
            p: self.p + other.p,
            v: self.v + other.v,
            n: self.n + other.n,
        }
    }

    /// Covariance of the point set about its centroid: `P/N - v vᵀ/N²`.
    pub fn scatter(&self) -> Result<Matrix3<f64>> {
        if self.n == 0 {
            return Err(Error::EmptyCluster);
        }
        let n = self.n as f64;
        let a = self.p / n - self.v * self.v.transpose() / (n * n);
        Ok((a + a.transpose()) / 2.0)
    }
}

/// Length of the cluster perturbation basis: `vech(δP)` (6) then `δv` (3).
pub const CLUSTER_NOISE_DIM: usize = 9;

/// Upper-triangle row-major index pairs of the `vech(δP)` ordering.
pub const VECH_INDICES: [(usize, usize); 6] = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)];

/// Covariance of the cluster coordinate induced by i.i.d. isotropic per-point
/// noise, over the 9-vector `(vech(δP), δv)` with `vech` upper-triangle
/// row-major. `δN = 0`: noise moves points, it does not create them.
#[derive(Debug, Clone)]
pub struct ClusterNoise {
    pub sigma: SMatrix<f64, 9, 9>,
    pub sigma_p: f64,
}

impl ClusterNoise {
    /// Linearize `(P, v)` in the per-point perturbations: for a point `p`,
    /// `δP = δp pᵀ + p δpᵀ` and `δv = δp`, giving a 9x3 map `B_k` per point and
    /// `Sigma = σ_p² Σ_k B_k B_kᵀ`.
    pub fn from_points(points: &[Vector3<f64>], sigma_p: f64) -> Self {
        let mut sigma = SMatrix::<f64, 9, 9>::zeros();
        for p in points {
            let b = point_jacobian(p);
            sigma += b * b.transpose();
        }
        ClusterNoise {
            sigma: sigma * (sigma_p * sigma_p),
            sigma_p,
        }
    }

    pub fn zero(sigma_p: f64) -> Self {
        ClusterNoise {
            sigma: SMatrix::zeros(),
            sigma_p,
        }
    }
}

/// The 9x3 linear map from a perturbation of point `p` to the perturbation of
/// `(vech(P), v)`.
pub(crate) fn point_jacobian(p: &Vector3<f64>) -> SMatrix<f64, 9, 3> {
    let mut b = SMatrix::<f64, 9, 3>::zeros();
    for (row, &(i, j)) in VECH_INDICES.iter().enumerate() {
        // d(P_ij) = δp_i p_j + p_i δp_j.
        b[(row, i)] += p[j];
        b[(row, j)] += p[i];
    }
    for k in 0..3 {
        b[(6 + k, k)] = 1.0;
    }
    b
}
