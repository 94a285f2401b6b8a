//! Synthetic scenes: a semi-closed cuboid room swept by a spinning
//! multi-channel scanner, and random plane patches seen from random poses.
//! Both come with exact ground-truth association, so solver and consistency
//! tests can separate estimation error from data association.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::cluster::{ClusterNoise, PointCluster};
use crate::error::{Error, Result};
use crate::geom::{so3_exp, Perturbation6, Pose};
use crate::problem::{BAProblem, Feature, FeatureKind};
use crate::uncertainty::NoiseTable;

/// Generator identity recorded in reports so Monte Carlo runs are replayable.
pub const RNG_NAME: &str = "chacha8/v1";

/// White-noise trajectory perturbation preset used throughout the docs:
/// 2 degrees rotation, 0.1 m translation.
pub const NOMINAL_PERTURB_ROT: f64 = 2.0 * PI / 180.0;
/// See [`NOMINAL_PERTURB_ROT`].
pub const NOMINAL_PERTURB_TRANS: f64 = 0.1;

/// Ground-truth feature geometry: a plane through `q` with unit normal `n`,
/// or an edge through `q` with unit direction `n`.
#[derive(Debug, Clone)]
pub struct FeatureDef {
    pub kind: FeatureKind,
    pub n: Vector3<f64>,
    pub q: Vector3<f64>,
}

/// A synthetic dataset: ground-truth poses, per-scan local points, and the
/// exact feature association `feature -> pose -> point indices`.
#[derive(Debug, Clone)]
pub struct Scene {
    pub gt_poses: Vec<Pose>,
    /// Per-pose point lists in each scan's local frame.
    pub scans: Vec<Vec<Vector3<f64>>>,
    pub gt_association: Vec<BTreeMap<usize, Vec<usize>>>,
    pub feature_defs: Vec<FeatureDef>,
    /// Accumulated per-point isotropic noise level (0 for a noiseless scene).
    pub sigma_p: f64,
    /// Rays that escaped the scene without a hit (room generator only).
    pub dropped_rays: usize,
}

impl Scene {
    pub fn total_points(&self) -> usize {
        self.scans.iter().map(Vec::len).sum()
    }
}

/// Cuboid-room scene parameters. The room spans `[-ex/2, ex/2] x
/// [-ey/2, ey/2] x [0, ez]` with the `+x` face open; the scanner drives a
/// rectangle at fixed height, heading along the travel direction.
#[derive(Debug, Clone)]
pub struct RoomParams {
    pub extents: Vector3<f64>,
    pub num_poses: usize,
    /// Scanner channels, spread uniformly over the elevation span.
    pub channels: usize,
    /// Azimuth steps per revolution; `channels * azimuth_steps` rays per scan.
    pub azimuth_steps: usize,
    /// Half elevation span in degrees (symmetric about the horizon).
    pub elevation_span_deg: f64,
    /// Trajectory rectangle half-sizes and height.
    pub traj_half_x: f64,
    pub traj_half_y: f64,
    pub traj_z: f64,
}

impl Default for RoomParams {
    fn default() -> Self {
        RoomParams {
            extents: Vector3::new(30.0, 20.0, 8.0),
            num_poses: 100,
            channels: 16,
            azimuth_steps: 1800,
            elevation_span_deg: 15.0,
            traj_half_x: 14.0,
            traj_half_y: 9.0,
            traj_z: 2.0,
        }
    }
}

impl RoomParams {
    pub fn points_per_scan(&self) -> usize {
        self.channels * self.azimuth_steps
    }

    /// Rectangle perimeter; 92 m with the defaults.
    pub fn trajectory_length(&self) -> f64 {
        4.0 * (self.traj_half_x + self.traj_half_y)
    }

    fn validate(&self) -> Result<()> {
        if self.extents.min() <= 0.0 {
            return Err(Error::InvalidInput("room extents must be positive".into()));
        }
        if self.num_poses < 2 {
            return Err(Error::InvalidInput("need at least two poses".into()));
        }
        if self.traj_half_x >= self.extents.x / 2.0
            || self.traj_half_y >= self.extents.y / 2.0
            || self.traj_z <= 0.0
            || self.traj_z >= self.extents.z
        {
            return Err(Error::InvalidInput(
                "trajectory does not fit inside the room".into(),
            ));
        }
        Ok(())
    }
}

/// One bounded axis-aligned interior face.
struct Face {
    normal: Vector3<f64>,
    point: Vector3<f64>,
    min: Vector3<f64>,
    max: Vector3<f64>,
}

/// First face hit by the ray, if any: index and hit point.
fn cast_ray(origin: &Vector3<f64>, dir: &Vector3<f64>, faces: &[Face]) -> Option<(usize, Vector3<f64>)> {
    let mut best: Option<(usize, f64, Vector3<f64>)> = None;
    for (i, f) in faces.iter().enumerate() {
        let denom = f.normal.dot(dir);
        if denom.abs() < 1e-12 {
            continue;
        }
        let t = f.normal.dot(&(f.point - origin)) / denom;
        if t <= 1e-9 {
            continue;
        }
        let p = origin + dir * t;
        let inside = (0..3).all(|a| p[a] >= f.min[a] - 1e-9 && p[a] <= f.max[a] + 1e-9);
        if !inside {
            continue;
        }
        if best.as_ref().is_none_or(|(_, bt, _)| t < *bt) {
            best = Some((i, t, p));
        }
    }
    best.map(|(i, _, p)| (i, p))
}

fn room_faces(extents: &Vector3<f64>) -> Vec<Face> {
    let hx = extents.x / 2.0;
    let hy = extents.y / 2.0;
    let hz = extents.z;
    // Floor, ceiling, back wall, two side walls; the +x face stays open.
    vec![
        Face {
            normal: Vector3::z(),
            point: Vector3::zeros(),
            min: Vector3::new(-hx, -hy, 0.0),
            max: Vector3::new(hx, hy, 0.0),
        },
        Face {
            normal: -Vector3::z(),
            point: Vector3::new(0.0, 0.0, hz),
            min: Vector3::new(-hx, -hy, hz),
            max: Vector3::new(hx, hy, hz),
        },
        Face {
            normal: Vector3::x(),
            point: Vector3::new(-hx, 0.0, 0.0),
            min: Vector3::new(-hx, -hy, 0.0),
            max: Vector3::new(-hx, hy, hz),
        },
        Face {
            normal: Vector3::y(),
            point: Vector3::new(0.0, -hy, 0.0),
            min: Vector3::new(-hx, -hy, 0.0),
            max: Vector3::new(hx, -hy, hz),
        },
        Face {
            normal: -Vector3::y(),
            point: Vector3::new(0.0, hy, 0.0),
            min: Vector3::new(-hx, hy, 0.0),
            max: Vector3::new(hx, hy, hz),
        },
    ]
}

/// Position and heading at arc length `s` along the trajectory rectangle,
/// counterclockwise from the `(-traj_half_x, -traj_half_y)` corner.
fn rectangle_pose(params: &RoomParams, s: f64) -> Pose {
    let a = params.traj_half_x;
    let b = params.traj_half_y;
    let s = s.rem_euclid(params.trajectory_length());
    let (pos2, heading): (Vector3<f64>, Vector3<f64>) = if s < 2.0 * a {
        (Vector3::new(-a + s, -b, 0.0), Vector3::x())
    } else if s < 2.0 * a + 2.0 * b {
        (Vector3::new(a, -b + (s - 2.0 * a), 0.0), Vector3::y())
    } else if s < 4.0 * a + 2.0 * b {
        (
            Vector3::new(a - (s - 2.0 * a - 2.0 * b), b, 0.0),
            -Vector3::x(),
        )
    } else {
        (
            Vector3::new(-a, b - (s - 4.0 * a - 2.0 * b), 0.0),
            -Vector3::y(),
        )
    };
    let yaw = heading.y.atan2(heading.x);
    let (sy, cy) = yaw.sin_cos();
    let rot = Matrix3::new(cy, -sy, 0.0, sy, cy, 0.0, 0.0, 0.0, 1.0);
    Pose::new(rot, pos2 + Vector3::new(0.0, 0.0, params.traj_z))
}

/// Ray-casts a spinning scanner through the room along the rectangle.
///
/// Every returned point lies exactly on one of the five interior faces and is
/// recorded in the association table under that face's feature. Rays leaving
/// through the open face are counted in `dropped_rays`.
pub fn gen_room_scene(params: &RoomParams, seed: u64) -> Result<Scene> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let faces = room_faces(&params.extents);
    let feature_defs: Vec<FeatureDef> = faces
        .iter()
        .map(|f| FeatureDef {
            kind: FeatureKind::Plane,
            n: f.normal,
            q: f.point,
        })
        .collect();

    let step = params.trajectory_length() / params.num_poses as f64;
    let gt_poses: Vec<Pose> = (0..params.num_poses)
        .map(|j| rectangle_pose(params, j as f64 * step))
        .collect();

    let mut scans = Vec::with_capacity(params.num_poses);
    let mut gt_association: Vec<BTreeMap<usize, Vec<usize>>> =
        vec![BTreeMap::new(); faces.len()];
    let mut dropped_rays = 0usize;

    let span = params.elevation_span_deg.to_radians();
    for (j, pose) in gt_poses.iter().enumerate() {
        let mut scan = Vec::with_capacity(params.points_per_scan());
        // Sub-resolution spin phase decorrelates the scans without changing
        // the sampling pattern.
        let phase = rng.gen::<f64>() * 2.0 * PI / params.azimuth_steps as f64;
        let inv = pose.inverse();
        for c in 0..params.channels {
            let elev = if params.channels == 1 {
                0.0
            } else {
                -span + 2.0 * span * c as f64 / (params.channels - 1) as f64
            };
            let (se, ce) = elev.sin_cos();
            for a in 0..params.azimuth_steps {
                let az = phase + 2.0 * PI * a as f64 / params.azimuth_steps as f64;
                let (sa, ca) = az.sin_cos();
                let dir_world = pose.rot * Vector3::new(ce * ca, ce * sa, se);
                match cast_ray(&pose.trans, &dir_world, &faces) {
                    Some((face, p_world)) => {
                        gt_association[face].entry(j).or_default().push(scan.len());
                        scan.push(inv.transform_point(&p_world));
                    }
                    None => dropped_rays += 1,
                }
            }
        }
        scans.push(scan);
    }

    Ok(Scene {
        gt_poses,
        scans,
        gt_association,
        feature_defs,
        sigma_p: 0.0,
        dropped_rays,
    })
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.gen::<f64>() * 2.0 - 1.0,
            rng.gen::<f64>() * 2.0 - 1.0,
            rng.gen::<f64>() * 2.0 - 1.0,
        );
        if v.norm_squared() <= 1.0 {
            if let Some(u) = v.try_normalize(1e-6) {
                return u;
            }
        }
    }
}

/// Random plane patches in a 20 m cube, every patch seen from every pose.
///
/// Patches are 8 m squares; the wide in-plane scatter keeps the plane cost
/// nearly quadratic over solver-scale steps, so damping relaxes at full rate
/// from the first iteration. Each observation contributes `points_per_obs`
/// points drawn uniformly on the patch and expressed in the scan frame.
pub fn gen_random_planes_scene(
    num_features: usize,
    num_poses: usize,
    points_per_obs: usize,
    seed: u64,
) -> Result<Scene> {
    if num_features == 0 || num_poses == 0 || points_per_obs == 0 {
        return Err(Error::InvalidInput(
            "feature, pose, and point counts must all be at least 1".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half_cube = 10.0;
    let patch_half = 4.0;

    let gt_poses: Vec<Pose> = (0..num_poses)
        .map(|_| {
            let rot = so3_exp(&(random_unit(&mut rng) * rng.gen::<f64>() * PI * 0.999));
            let trans = Vector3::new(
                (rng.gen::<f64>() * 2.0 - 1.0) * half_cube,
                (rng.gen::<f64>() * 2.0 - 1.0) * half_cube,
                (rng.gen::<f64>() * 2.0 - 1.0) * half_cube,
            );
            Pose::new(rot, trans)
        })
        .collect();

    let mut feature_defs = Vec::with_capacity(num_features);
    let mut scans: Vec<Vec<Vector3<f64>>> = vec![Vec::new(); num_poses];
    let mut gt_association: Vec<BTreeMap<usize, Vec<usize>>> = Vec::with_capacity(num_features);

    for _ in 0..num_features {
        let n = random_unit(&mut rng);
        let q = Vector3::new(
            (rng.gen::<f64>() * 2.0 - 1.0) * half_cube,
            (rng.gen::<f64>() * 2.0 - 1.0) * half_cube,
            (rng.gen::<f64>() * 2.0 - 1.0) * half_cube,
        );
        let e1 = n.cross(&random_unit(&mut rng)).normalize();
        let e2 = n.cross(&e1);
        feature_defs.push(FeatureDef {
            kind: FeatureKind::Plane,
            n,
            q,
        });

        let mut obs = BTreeMap::new();
        for (j, pose) in gt_poses.iter().enumerate() {
            let inv = pose.inverse();
            let indices: Vec<usize> = (0..points_per_obs)
                .map(|_| {
                    let a = (rng.gen::<f64>() * 2.0 - 1.0) * patch_half;
                    let b = (rng.gen::<f64>() * 2.0 - 1.0) * patch_half;
                    let idx = scans[j].len();
                    scans[j].push(inv.transform_point(&(q + e1 * a + e2 * b)));
                    idx
                })
                .collect();
            obs.insert(j, indices);
        }
        gt_association.push(obs);
    }

    Ok(Scene {
        gt_poses,
        scans,
        gt_association,
        feature_defs,
        sigma_p: 0.0,
        dropped_rays: 0,
    })
}

/// Adds i.i.d. isotropic Gaussian noise to every local point. The scene's
/// recorded noise level combines in quadrature if called repeatedly.
pub fn add_noise(scene: &Scene, sigma_p: f64, seed: u64) -> Result<Scene> {
    if !(sigma_p >= 0.0) {
        return Err(Error::InvalidInput("sigma_p must be nonnegative".into()));
    }
    let mut out = scene.clone();
    if sigma_p == 0.0 {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gauss = Normal::new(0.0, sigma_p).unwrap();
    for scan in &mut out.scans {
        for p in scan.iter_mut() {
            *p += Vector3::new(
                gauss.sample(&mut rng),
                gauss.sample(&mut rng),
                gauss.sample(&mut rng),
            );
        }
    }
    out.sigma_p = (scene.sigma_p * scene.sigma_p + sigma_p * sigma_p).sqrt();
    Ok(out)
}

/// Boxplus-perturbs every pose (including the first; the solver's gauge
/// handles it) with independent per-axis Gaussian noise.
pub fn perturb_trajectory(
    poses: &[Pose],
    sigma_rot: f64,
    sigma_trans: f64,
    seed: u64,
) -> Vec<Pose> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rot = Normal::new(0.0, sigma_rot.max(0.0)).unwrap();
    let trans = Normal::new(0.0, sigma_trans.max(0.0)).unwrap();
    poses
        .iter()
        .map(|t| {
            let d = Perturbation6::new(
                Vector3::new(
                    rot.sample(&mut rng),
                    rot.sample(&mut rng),
                    rot.sample(&mut rng),
                ),
                Vector3::new(
                    trans.sample(&mut rng),
                    trans.sample(&mut rng),
                    trans.sample(&mut rng),
                ),
            );
            t.boxplus(&d)
        })
        .collect()
}

/// Clusters the scene's points by the ground-truth association.
///
/// Returns the problem plus the matching per-observation noise table at the
/// scene's recorded noise level. Observations with no points are dropped.
pub fn scene_to_problem(scene: &Scene) -> Result<(BAProblem, NoiseTable)> {
    let mut features = Vec::with_capacity(scene.feature_defs.len());
    let mut noises: NoiseTable = Vec::with_capacity(scene.feature_defs.len());
    for (def, obs) in scene.feature_defs.iter().zip(&scene.gt_association) {
        let mut observations = BTreeMap::new();
        let mut noise_row = Vec::new();
        for (&j, indices) in obs {
            if indices.is_empty() {
                continue;
            }
            let pts: Vec<Vector3<f64>> = indices.iter().map(|&k| scene.scans[j][k]).collect();
            observations.insert(j, PointCluster::from_points(&pts));
            noise_row.push(ClusterNoise::from_points(&pts, scene.sigma_p));
        }
        if observations.is_empty() {
            continue;
        }
        features.push(Feature::new(def.kind, observations));
        noises.push(noise_row);
    }
    let problem = BAProblem::new(features, scene.gt_poses.len())?;
    Ok((problem, noises))
}
