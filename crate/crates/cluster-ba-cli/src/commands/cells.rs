//! `occupied-cells`: map-quality metric for a trajectory + scans.

use std::path::PathBuf;

use cluster_ba::io::{read_poses, read_scan};
use cluster_ba::metrics::{occupied_cells, registered_points};
use cluster_ba::{Error, Result};

use super::{read_scene_dir, scan_file_name};

#[derive(Debug, Clone)]
pub struct CellsArgs {
    /// Scene directory (scan files + manifest), or explicit scan files.
    pub scene: Option<PathBuf>,
    pub scans: Vec<PathBuf>,
    /// Trajectory to register with; defaults to the scene's ground truth.
    pub poses: Option<PathBuf>,
    pub cell: f64,
}

pub fn cmd_cells(args: &CellsArgs) -> Result<usize> {
    let (scans, default_poses) = match (&args.scene, &args.scans[..]) {
        (Some(dir), []) => {
            let scene = read_scene_dir(dir)?;
            (scene.scans, Some(scene.gt_poses))
        }
        (None, files) if !files.is_empty() => (
            files.iter().map(|p| read_scan(p)).collect::<Result<Vec<_>>>()?,
            None,
        ),
        _ => {
            return Err(Error::InvalidInput(
                "give either --scene DIR or --scans FILE..., not both".into(),
            ))
        }
    };
    let poses = match &args.poses {
        Some(path) => read_poses(path)?,
        None => default_poses.ok_or_else(|| {
            Error::InvalidInput("--poses is required when scans are given as files".into())
        })?,
    };
    let world = registered_points(&scans, &poses)?;
    occupied_cells(&world, args.cell)
}

/// Name of the scan file for external callers assembling scene directories.
pub fn nth_scan_file(index1: usize) -> String {
    scan_file_name(index1)
}
