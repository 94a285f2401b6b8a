//! Trajectory and map-quality metrics.

use std::collections::HashSet;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geom::Pose;
use crate::uncertainty::pose_error;
use crate::voxel::world_hash_key;

/// Number of distinct integer cells (closed-low convention) containing at
/// least one point. Fewer occupied cells at fixed input size means a crisper
/// map: points that belong to one surface collapse into shared cells.
pub fn occupied_cells(points: &[Vector3<f64>], cell: f64) -> Result<usize> {
    if !(cell > 0.0) {
        return Err(Error::InvalidInput("cell size must be positive".into()));
    }
    let mut cells: HashSet<(i64, i64, i64)> = HashSet::new();
    for p in points {
        cells.insert(world_hash_key(p, cell));
    }
    Ok(cells.len())
}

/// All scan points registered in the world frame with the given trajectory.
pub fn registered_points(scans: &[Vec<Vector3<f64>>], poses: &[Pose]) -> Result<Vec<Vector3<f64>>> {
    if scans.len() != poses.len() {
        return Err(Error::InvalidInput(format!(
            "{} scans but {} poses",
            scans.len(),
            poses.len()
        )));
    }
    let mut out = Vec::with_capacity(scans.iter().map(Vec::len).sum());
    for (scan, pose) in scans.iter().zip(poses) {
        out.extend(scan.iter().map(|p| pose.transform_point(p)));
    }
    Ok(out)
}

/// Maps the estimate onto the ground-truth gauge: applies the left transform
/// that carries the first estimated pose exactly onto the first ground-truth
/// pose. Consistent with the solver, which pins the first pose.
pub fn align_to_gt(est: &[Pose], gt: &[Pose]) -> Result<Vec<Pose>> {
    if est.len() != gt.len() || est.is_empty() {
        return Err(Error::InvalidInput(format!(
            "trajectories must be non-empty and equally long ({} vs {})",
            est.len(),
            gt.len()
        )));
    }
    let t_align = gt[0].compose(&est[0].inverse());
    Ok(est.iter().map(|t| t_align.compose(t)).collect())
}

/// Rotation (rad) and translation (m) RMSE after gauge alignment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryRmse {
    pub rot: f64,
    pub trans: f64,
}

pub fn trajectory_rmse(est: &[Pose], gt: &[Pose]) -> Result<TrajectoryRmse> {
    let aligned = align_to_gt(est, gt)?;
    let mut rot_sq = 0.0;
    let mut trans_sq = 0.0;
    for (a, g) in aligned.iter().zip(gt) {
        let e = pose_error(a, g)?;
        rot_sq += e.dphi.norm_squared();
        trans_sq += e.dt.norm_squared();
    }
    let m = gt.len() as f64;
    Ok(TrajectoryRmse {
        rot: (rot_sq / m).sqrt(),
        trans: (trans_sq / m).sqrt(),
    })
}
