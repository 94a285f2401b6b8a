//! Feature association from raw scans by adaptive voxelization.
//!
//! Points are registered in the world frame with the initial trajectory and
//! hashed into root voxels; each voxel either passes a planarity test and
//! becomes a feature, or is cut into octants and retried down to a maximum
//! layer. Surviving voxels emit one observation cluster per contributing
//! scan, built from that scan's own local points, so an imperfect initial
//! trajectory only affects which points group together, never the
//! measurements themselves.

use std::collections::{BTreeMap, HashMap};

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::cluster::PointCluster;
use crate::eig::sym_eig3;
use crate::error::{Error, Result};
use crate::geom::Pose;
use crate::problem::{BAProblem, Feature, FeatureKind};

/// Adaptive voxelization parameters.
#[derive(Debug, Clone)]
pub struct VoxelParams {
    /// Root voxel edge length (m).
    pub root_size: f64,
    /// Maximum extra subdivision layers below the root.
    pub max_layer: usize,
    /// Minimum points for a voxel to be considered at all.
    pub min_points: usize,
    /// Eigenvalue-ratio threshold of the feature tests.
    pub gamma: f64,
    /// Also emit edge features (off by default; planes usually suffice).
    pub detect_edges: bool,
}

impl Default for VoxelParams {
    fn default() -> Self {
        VoxelParams {
            root_size: 1.0,
            max_layer: 3,
            min_points: 20,
            gamma: 1.0 / 25.0,
            detect_edges: false,
        }
    }
}

impl VoxelParams {
    fn validate(&self) -> Result<()> {
        if !(self.root_size > 0.0) {
            return Err(Error::InvalidInput("root voxel size must be positive".into()));
        }
        if self.min_points < 3 {
            return Err(Error::InvalidInput(
                "feature tests need at least 3 points per voxel".into(),
            ));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::InvalidInput("gamma must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Integer cell of a point at the given cell size, closed-low: a coordinate
/// exactly on a cell face belongs to the cell whose low face it is. Uses an
/// explicit floor so negatives do not truncate toward zero.
pub fn world_hash_key(p: &Vector3<f64>, cell: f64) -> (i64, i64, i64) {
    (
        (p.x / cell).floor() as i64,
        (p.y / cell).floor() as i64,
        (p.z / cell).floor() as i64,
    )
}

/// One registered point: where it came from and where the initial trajectory
/// puts it.
#[derive(Debug, Clone, Copy)]
struct Registered {
    scan: usize,
    idx: usize,
    world: Vector3<f64>,
}

/// Association bookkeeping alongside the returned problem.
#[derive(Debug, Clone, Default)]
pub struct AssocStats {
    pub planes: usize,
    pub edges: usize,
    /// Voxels discarded at the maximum layer or for too few points.
    pub discarded_voxels: usize,
    /// Features dropped for being seen from a single pose (their cost is
    /// rigid-invariant, so they constrain nothing).
    pub single_pose_dropped: usize,
    pub points_used: usize,
}

fn classify(entries: &[Registered], params: &VoxelParams) -> Option<FeatureKind> {
    let world: Vec<Vector3<f64>> = entries.iter().map(|e| e.world).collect();
    let cluster = PointCluster::from_points(&world);
    let a = match cluster.scatter() {
        Ok(a) => a,
        Err(_) => return None,
    };
    let e = sym_eig3(&a);
    let (l1, l2, l3) = (e.lambda[0], e.lambda[1], e.lambda[2]);
    // Plane: thin along exactly one axis. The λ₂ floor keeps degenerate
    // (collinear) sets from sneaking through the ratio test via 0/0.
    if l2 > 1e-9 * l1.max(0.0) && l3 < params.gamma * l2 {
        return Some(FeatureKind::Plane);
    }
    if params.detect_edges && l1 > 0.0 && l2 < params.gamma * l1 {
        return Some(FeatureKind::Edge);
    }
    None
}

fn build_feature(
    kind: FeatureKind,
    entries: &[Registered],
    scans: &[Vec<Vector3<f64>>],
) -> Feature {
    let mut by_pose: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for e in entries {
        by_pose.entry(e.scan).or_default().push(e.idx);
    }
    let observations = by_pose
        .into_iter()
        .map(|(j, indices)| {
            let pts: Vec<Vector3<f64>> = indices.iter().map(|&k| scans[j][k]).collect();
            (j, PointCluster::from_points(&pts))
        })
        .collect();
    Feature::new(kind, observations)
}

/// Recursive test-or-split over one voxel. `center`/`half` describe the cube.
fn process_voxel(
    entries: Vec<Registered>,
    center: Vector3<f64>,
    half: f64,
    layer: usize,
    params: &VoxelParams,
    scans: &[Vec<Vector3<f64>>],
    out: &mut Vec<Feature>,
    stats: &mut AssocStats,
) {
    if entries.len() < params.min_points {
        stats.discarded_voxels += 1;
        return;
    }
    if let Some(kind) = classify(&entries, params) {
        let feature = build_feature(kind, &entries, scans);
        if feature.observations.len() < 2 {
            stats.single_pose_dropped += 1;
            return;
        }
        match kind {
            FeatureKind::Plane => stats.planes += 1,
            FeatureKind::Edge => stats.edges += 1,
        }
        stats.points_used += entries.len();
        out.push(feature);
        return;
    }
    if layer >= params.max_layer {
        stats.discarded_voxels += 1;
        return;
    }
    // Split into octants; the closed-low convention matches the root hash.
    let mut children: [Vec<Registered>; 8] = Default::default();
    for e in entries {
        let mut oct = 0usize;
        for a in 0..3 {
            if e.world[a] >= center[a] {
                oct |= 1 << a;
            }
        }
        children[oct].push(e);
    }
    let q = half / 2.0;
    for (oct, child) in children.into_iter().enumerate() {
        if child.is_empty() {
            continue;
        }
        let offset = Vector3::new(
            if oct & 1 != 0 { q } else { -q },
            if oct & 2 != 0 { q } else { -q },
            if oct & 4 != 0 { q } else { -q },
        );
        process_voxel(child, center + offset, q, layer + 1, params, scans, out, stats);
    }
}

/// Groups raw scans into a [`BAProblem`] plus association statistics.
pub fn associate_with_stats(
    scans: &[Vec<Vector3<f64>>],
    init_poses: &[Pose],
    params: &VoxelParams,
) -> Result<(BAProblem, AssocStats)> {
    params.validate()?;
    if scans.len() != init_poses.len() {
        return Err(Error::InvalidInput(format!(
            "{} scans but {} poses",
            scans.len(),
            init_poses.len()
        )));
    }

    // Register in the world frame and bucket into root voxels.
    let mut roots: HashMap<(i64, i64, i64), Vec<Registered>> = HashMap::new();
    for (scan_idx, (scan, pose)) in scans.iter().zip(init_poses).enumerate() {
        for (idx, p) in scan.iter().enumerate() {
            let world = pose.transform_point(p);
            roots
                .entry(world_hash_key(&world, params.root_size))
                .or_default()
                .push(Registered {
                    scan: scan_idx,
                    idx,
                    world,
                });
        }
    }

    // Root voxels are independent; process in parallel but emit in key order.
    let mut keyed: Vec<((i64, i64, i64), Vec<Registered>)> = roots.into_iter().collect();
    keyed.sort_by_key(|(k, _)| *k);
    let l = params.root_size;
    let per_root: Vec<(Vec<Feature>, AssocStats)> = keyed
        .into_par_iter()
        .map(|(key, entries)| {
            let center = Vector3::new(
                (key.0 as f64 + 0.5) * l,
                (key.1 as f64 + 0.5) * l,
                (key.2 as f64 + 0.5) * l,
            );
            let mut out = Vec::new();
            let mut stats = AssocStats::default();
            process_voxel(entries, center, l / 2.0, 0, params, scans, &mut out, &mut stats);
            (out, stats)
        })
        .collect();

    let mut features = Vec::new();
    let mut stats = AssocStats::default();
    for (fs, s) in per_root {
        features.extend(fs);
        stats.planes += s.planes;
        stats.edges += s.edges;
        stats.discarded_voxels += s.discarded_voxels;
        stats.single_pose_dropped += s.single_pose_dropped;
        stats.points_used += s.points_used;
    }
    if features.is_empty() {
        return Err(Error::NoConstraints);
    }
    let problem = BAProblem::new(features, init_poses.len())?;
    Ok((problem, stats))
}

/// [`associate_with_stats`] without the bookkeeping.
pub fn associate(
    scans: &[Vec<Vector3<f64>>],
    init_poses: &[Pose],
    params: &VoxelParams,
) -> Result<BAProblem> {
    associate_with_stats(scans, init_poses, params).map(|(p, _)| p)
}
