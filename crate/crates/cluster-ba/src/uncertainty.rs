//! Pose-covariance estimation from cluster noise, and NEES consistency.
//!
//! At a converged solution the gradient is zero; perturbing the measured
//! clusters moves that zero, so the pose error inherits the cluster noise
//! through the implicit-function relation `Σ_δT = H⁻¹ G Σ_δC Gᵀ H⁻ᵀ`, where
//! `G = ∂Jᵀ/∂C` couples each observation's 9 cluster coordinates (six of
//! `vech(P)`, three of `v`) to the gradient. `G` is evaluated by central
//! finite differences of the analytic gradient, which is cheap and well
//! conditioned; everything lives on the gauge-reduced space with the first
//! pose fixed.

use nalgebra::{DMatrix, DVector};

use crate::cluster::{ClusterNoise, PointCluster, CLUSTER_NOISE_DIM, VECH_INDICES};
use crate::error::{Error, Result};
use crate::geom::{so3_log, Perturbation6, Pose};
use crate::problem::{assemble, feature_derivatives, BAProblem};
use crate::solver::gauge_reduce;

/// Per-observation cluster noise, outer index parallel to `problem.features`,
/// inner parallel to each feature's observation map in ascending pose order.
pub type NoiseTable = Vec<Vec<ClusterNoise>>;

/// Pose covariance over the gauge-reduced perturbation space: pose 1 is
/// fixed, so the matrix covers poses 2.. with six rows each, `(dphi, dt)`
/// ordered.
#[derive(Debug, Clone)]
pub struct PoseCovariance {
    pub sigma: DMatrix<f64>,
}

impl PoseCovariance {
    /// Marginal standard deviations, length `6(M_p - 1)`.
    pub fn marginal_std(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.sigma.nrows(),
            (0..self.sigma.nrows()).map(|i| self.sigma[(i, i)].max(0.0).sqrt()),
        )
    }
}

/// Additively perturbs one cluster coordinate: directions 0..6 move `vech(P)`
/// (off-diagonals move both symmetric entries), 6..9 move `v`.
fn perturb_cluster(c: &PointCluster, dir: usize, h: f64) -> PointCluster {
    let mut out = c.clone();
    if dir < 6 {
        let (i, j) = VECH_INDICES[dir];
        out.p[(i, j)] += h;
        if i != j {
            out.p[(j, i)] += h;
        }
    } else {
        out.v[dir - 6] += h;
    }
    out
}

/// Covariance of the optimized poses induced by the cluster noise table.
///
/// `poses_opt` must be a converged solution of `problem` (gradient within
/// 1e-6 of zero relative to `max(1, cost)`); the first pose is the gauge and
/// carries no uncertainty.
pub fn pose_covariance(
    problem: &BAProblem,
    poses_opt: &[Pose],
    noises: &NoiseTable,
) -> Result<PoseCovariance> {
    if noises.len() != problem.features.len() {
        return Err(Error::InvalidInput(format!(
            "noise table has {} feature entries, problem has {}",
            noises.len(),
            problem.features.len()
        )));
    }
    for (i, (f, n)) in problem.features.iter().zip(noises.iter()).enumerate() {
        if f.observations.len() != n.len() {
            return Err(Error::InvalidInput(format!(
                "feature {i}: {} observations but {} noise entries",
                f.observations.len(),
                n.len()
            )));
        }
    }

    let bundle = assemble(problem, poses_opt)?;
    if bundle.j.norm() > 1e-6 * bundle.cost.max(1.0) {
        return Err(Error::InvalidInput(format!(
            "poses are not converged: |J| = {:.3e} at cost {:.3e}",
            bundle.j.norm(),
            bundle.cost
        )));
    }
    let (_, h_red) = gauge_reduce(&bundle.j, &bundle.h);
    let red = h_red.nrows();
    if red == 0 {
        return Ok(PoseCovariance {
            sigma: DMatrix::zeros(0, 0),
        });
    }
    let chol = h_red.clone().cholesky().ok_or(Error::Unobservable)?;

    // Accumulate G Σ_δC Gᵀ observation by observation (independent noise).
    let mut middle = DMatrix::<f64>::zeros(red, red);
    for (feature, noise_row) in problem.features.iter().zip(noises.iter()) {
        let obs_poses: Vec<usize> = feature.observations.keys().copied().collect();
        for (pos, (&j_pose, cluster)) in feature.observations.iter().enumerate() {
            let noise = &noise_row[pos];
            if noise.sigma.amax() == 0.0 {
                continue;
            }
            // Step scaled to the cluster's own magnitude; the gradient is
            // polynomial in the cluster entries, so central differences are
            // accurate far beyond the needed precision.
            let h = 1e-6 * cluster.p.amax().max(cluster.v.amax()).max(1.0);

            // g columns: ∂Jᵀ/∂(coordinate k) over the reduced pose space.
            let mut g = DMatrix::<f64>::zeros(red, CLUSTER_NOISE_DIM);
            for k in 0..CLUSTER_NOISE_DIM {
                let mut feat = feature.clone();
                *feat.observations.get_mut(&j_pose).unwrap() = perturb_cluster(cluster, k, h);
                let dp = feature_derivatives(&feat, poses_opt)?;
                *feat.observations.get_mut(&j_pose).unwrap() = perturb_cluster(cluster, k, -h);
                let dm = feature_derivatives(&feat, poses_opt)?;
                for (idx, &q) in obs_poses.iter().enumerate() {
                    if q == 0 {
                        continue;
                    }
                    let col = (dp.j[idx] - dm.j[idx]) / (2.0 * h);
                    g.view_mut((6 * (q - 1), k), (6, 1)).copy_from(&col);
                }
            }
            middle += &g * noise.sigma * g.transpose();
        }
    }

    // Σ = H⁻¹ middle H⁻¹ on the reduced space, symmetrized against rounding.
    let x = chol.solve(&middle);
    let sigma = chol.solve(&x.transpose());
    let sigma = (&sigma + sigma.transpose()) * 0.5;
    Ok(PoseCovariance { sigma })
}

/// Pose error `δT = (Log(R_gt R_estᵀ), t_gt - R_gt R_estᵀ t_est)`.
///
/// The convention matches boxplus exactly: `est ⊞ pose_error(est, gt) = gt`
/// identically, not just to first order.
pub fn pose_error(est: &Pose, gt: &Pose) -> Result<Perturbation6> {
    let rel = gt.rot * est.rot.transpose();
    let dphi = so3_log(&rel)?;
    let dt = gt.trans - rel * est.trans;
    Ok(Perturbation6::new(dphi, dt))
}

/// Normalized estimation error squared against the reduced covariance.
///
/// The first pose is the gauge and is excluded; callers align the estimate so
/// its first pose matches the ground truth before evaluating. Returns the raw
/// quadratic form; divide by `6(M_p - 1)` (see [`normalized_nees`]) to compare
/// against 1.
pub fn nees(est_poses: &[Pose], gt_poses: &[Pose], cov: &PoseCovariance) -> Result<f64> {
    if est_poses.len() != gt_poses.len() {
        return Err(Error::InvalidInput(format!(
            "pose list lengths differ: {} vs {}",
            est_poses.len(),
            gt_poses.len()
        )));
    }
    let m = est_poses.len();
    let red = 6 * (m - 1);
    if cov.sigma.nrows() != red {
        return Err(Error::InvalidInput(format!(
            "covariance is {}x{}, expected {red}",
            cov.sigma.nrows(),
            cov.sigma.ncols()
        )));
    }
    if red == 0 {
        return Ok(0.0);
    }
    let mut delta = DVector::zeros(red);
    for q in 1..m {
        let e = pose_error(&est_poses[q], &gt_poses[q])?;
        delta
            .fixed_rows_mut::<6>(6 * (q - 1))
            .copy_from(&e.as_vector());
    }
    let chol = cov
        .sigma
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NumericalFailure("singular pose covariance".into()))?;
    let solved = chol.solve(&delta);
    Ok(delta.dot(&solved))
}

/// `nees` scaled by its expectation `6(M_p - 1)`; near 1 for a consistent
/// estimator.
pub fn normalized_nees(est_poses: &[Pose], gt_poses: &[Pose], cov: &PoseCovariance) -> Result<f64> {
    let m = est_poses.len();
    if m <= 1 {
        return Ok(0.0);
    }
    Ok(nees(est_poses, gt_poses, cov)? / (6.0 * (m as f64 - 1.0)))
}
