//! Command implementations shared by the binary and the test suites.

pub mod bench;
pub mod cells;
pub mod nees;
pub mod simulate;
pub mod solve;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use cluster_ba::cluster::{ClusterNoise, PointCluster};
use cluster_ba::geom::Pose;
use cluster_ba::io::{read_association, read_poses, read_scan, Association};
use cluster_ba::problem::{BAProblem, Feature, FeatureKind};
use cluster_ba::sim::perturb_trajectory;
use cluster_ba::uncertainty::NoiseTable;
use cluster_ba::{Error, Result};
use nalgebra::Vector3;

use crate::report::read_manifest;

/// Scan file name for the 1-based scan index: `scan_0001.txt`, ...
pub fn scan_file_name(index1: usize) -> String {
    format!("scan_{index1:04}.txt")
}

/// A scene loaded back from a `simulate` output directory.
pub struct LoadedScene {
    pub scans: Vec<Vec<Vector3<f64>>>,
    pub gt_poses: Vec<Pose>,
    pub association: Association,
    pub feature_kinds: Vec<FeatureKind>,
    pub sigma_p: f64,
}

pub fn read_scene_dir(dir: &Path) -> Result<LoadedScene> {
    let manifest = read_manifest(&dir.join("manifest.txt"))?;
    let need = |key: &str| -> Result<&String> {
        manifest
            .get(key)
            .ok_or_else(|| Error::InvalidInput(format!("manifest is missing key {key:?}")))
    };
    let num_scans: usize = need("num_scans")?
        .parse()
        .map_err(|_| Error::InvalidInput("manifest num_scans is not a count".into()))?;
    let sigma_p: f64 = need("sigma_p")?
        .parse()
        .map_err(|_| Error::InvalidInput("manifest sigma_p is not a number".into()))?;
    let kinds: Vec<FeatureKind> = need("feature_kinds")?
        .chars()
        .map(|c| match c {
            'p' => Ok(FeatureKind::Plane),
            'e' => Ok(FeatureKind::Edge),
            other => Err(Error::InvalidInput(format!(
                "manifest feature_kinds contains {other:?}; expected 'p' or 'e'"
            ))),
        })
        .collect::<Result<_>>()?;

    let mut scans = Vec::with_capacity(num_scans);
    for i in 1..=num_scans {
        scans.push(read_scan(&dir.join(scan_file_name(i)))?);
    }
    let gt_poses = read_poses(&dir.join("gt_poses.txt"))?;
    if gt_poses.len() != num_scans {
        return Err(Error::InvalidInput(format!(
            "scene has {num_scans} scans but {} poses",
            gt_poses.len()
        )));
    }
    let association = read_association(&dir.join("association.txt"))?;
    if association.len() != kinds.len() {
        return Err(Error::InvalidInput(format!(
            "association lists {} features, manifest lists {}",
            association.len(),
            kinds.len()
        )));
    }
    Ok(LoadedScene {
        scans,
        gt_poses,
        association,
        feature_kinds: kinds,
        sigma_p,
    })
}

/// Clusters scans by a given association, mirroring the in-memory
/// ground-truth path: empty observations are dropped, and each observation
/// gets a noise model at the stated sigma.
pub fn problem_from_parts(
    scans: &[Vec<Vector3<f64>>],
    association: &Association,
    kinds: &[FeatureKind],
    num_poses: usize,
    sigma_p: f64,
) -> Result<(BAProblem, NoiseTable)> {
    let mut features = Vec::with_capacity(association.len());
    let mut noises: NoiseTable = Vec::with_capacity(association.len());
    for (f, by_pose) in association.iter().enumerate() {
        let kind = *kinds
            .get(f)
            .ok_or_else(|| Error::InvalidInput(format!("feature {f} has no declared kind")))?;
        let mut observations = BTreeMap::new();
        let mut noise_row = Vec::new();
        for (&q, indices) in by_pose {
            if indices.is_empty() {
                continue;
            }
            let scan = scans.get(q).ok_or_else(|| {
                Error::InvalidInput(format!("feature {f} references missing pose {q}"))
            })?;
            let pts: Vec<Vector3<f64>> = indices
                .iter()
                .map(|&k| {
                    scan.get(k).copied().ok_or_else(|| {
                        Error::InvalidInput(format!(
                            "feature {f} references point {k} beyond scan {q} ({} points)",
                            scan.len()
                        ))
                    })
                })
                .collect::<Result<_>>()?;
            observations.insert(q, PointCluster::from_points(&pts));
            noise_row.push(ClusterNoise::from_points(&pts, sigma_p));
        }
        if observations.is_empty() {
            continue;
        }
        features.push(Feature::new(kind, observations));
        noises.push(noise_row);
    }
    let problem = BAProblem::new(features, num_poses)?;
    Ok((problem, noises))
}

/// Initial trajectory: the reference poses boxplus-perturbed per run flags.
pub fn initial_trajectory(
    reference: &[Pose],
    rot_deg: f64,
    trans_m: f64,
    seed: u64,
) -> Vec<Pose> {
    if rot_deg == 0.0 && trans_m == 0.0 {
        reference.to_vec()
    } else {
        perturb_trajectory(reference, rot_deg.to_radians(), trans_m, seed)
    }
}

/// Creates the output directory (and parents) if needed.
pub fn ensure_out_dir(dir: &PathBuf) -> Result<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| Error::InvalidInput(format!("cannot create {}: {e}", dir.display())))
}

/// Comma-separated list parser for numeric flag values.
pub fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|tok| {
            tok.trim()
                .parse::<T>()
                .map_err(|_| Error::InvalidInput(format!("bad {what} value {tok:?}")))
        })
        .collect()
}
