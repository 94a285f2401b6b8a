//! The bundle-adjustment cost over point clusters and its analytic
//! first and second derivatives.
//!
//! Each feature contributes the small eigenvalues of the scatter matrix of its
//! aggregated world-frame cluster: `λ₃` for planes, `λ₂ + λ₃` for edges. That
//! equals the mean squared point-to-feature distance at the optimal feature
//! parameters, so minimizing it over poses is exactly bundle adjustment with
//! the feature parameters eliminated analytically.
//!
//! The gradient and Hessian of `λ_l` with respect to all poses have closed
//! forms in the cluster coordinates. Two structural facts keep evaluation
//! cheap: blocks exist only for poses that observe the feature, and the
//! cross-pose Hessian blocks are rank-one across poses (`C_p F C_q` is an
//! outer product of the clusters' last homogeneous columns), so a feature's
//! Hessian is a handful of rank-one terms plus per-pose diagonal blocks.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, Matrix4, Matrix6, RowDVector, SMatrix, Vector3, Vector4, Vector6};
use rayon::prelude::*;

use crate::cluster::PointCluster;
use crate::eig::{sym_eig3, EigenDecomp3};
use crate::error::{Error, Result};
use crate::geom::{skew, Pose};

/// Feature geometry class. Planes penalize `λ₃`, edges `λ₂ + λ₃`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    Plane,
    Edge,
}

/// One feature and its per-pose local clusters. Poses that never observed the
/// feature are simply absent from the map; their derivative blocks are zero.
#[derive(Debug, Clone)]
pub struct Feature {
    pub kind: FeatureKind,
    /// Pose index -> cluster of the feature's points in that scan's frame.
    pub observations: BTreeMap<usize, PointCluster>,
}

impl Feature {
    pub fn new(kind: FeatureKind, observations: BTreeMap<usize, PointCluster>) -> Self {
        Feature { kind, observations }
    }

    /// Total point count over all observations.
    pub fn total_points(&self) -> u64 {
        self.observations.values().map(|c| c.n).sum()
    }

    /// Minimum total point count for the cost to be defined.
    pub fn min_points(&self) -> u64 {
        match self.kind {
            FeatureKind::Plane => 3,
            FeatureKind::Edge => 2,
        }
    }

    fn check_support(&self) -> Result<()> {
        let total = self.total_points();
        if total < self.min_points() {
            return Err(Error::DegenerateFeature(format!(
                "{:?} feature has {total} points, needs at least {}",
                self.kind,
                self.min_points()
            )));
        }
        Ok(())
    }
}

/// A reduced bundle-adjustment problem: features over `num_poses` poses.
#[derive(Debug, Clone)]
pub struct BAProblem {
    pub features: Vec<Feature>,
    pub num_poses: usize,
}

impl BAProblem {
    /// Validates observation indices and per-observation point counts.
    pub fn new(features: Vec<Feature>, num_poses: usize) -> Result<Self> {
        for (i, f) in features.iter().enumerate() {
            if f.observations.is_empty() {
                return Err(Error::InvalidInput(format!(
                    "feature {i} has no observations"
                )));
            }
            for (&j, c) in &f.observations {
                if j >= num_poses {
                    return Err(Error::InvalidInput(format!(
                        "feature {i} observes pose {j}, but the problem has {num_poses} poses"
                    )));
                }
                if c.n == 0 {
                    return Err(Error::InvalidInput(format!(
                        "feature {i} has an empty cluster at pose {j}; drop the observation instead"
                    )));
                }
            }
        }
        Ok(BAProblem {
            features,
            num_poses,
        })
    }

    pub fn num_observations(&self) -> usize {
        self.features.iter().map(|f| f.observations.len()).sum()
    }
}

/// Cluster of the feature's points in the world frame: the sum of each
/// observation transformed by its pose. Unobserved poses contribute nothing.
pub fn aggregate_world_cluster(feature: &Feature, poses: &[Pose]) -> PointCluster {
    feature
        .observations
        .iter()
        .fold(PointCluster::empty(), |acc, (&j, c)| {
            acc.merge(&c.transform(&poses[j]))
        })
}

fn eval_eig(feature: &Feature, poses: &[Pose]) -> Result<(PointCluster, EigenDecomp3)> {
    feature.check_support()?;
    let agg = aggregate_world_cluster(feature, poses);
    let a = agg.scatter()?;
    Ok((agg, sym_eig3(&a)))
}

fn kind_cost(kind: FeatureKind, e: &EigenDecomp3) -> f64 {
    match kind {
        FeatureKind::Plane => e.lambda[2],
        FeatureKind::Edge => e.lambda[1] + e.lambda[2],
    }
}

/// Cost of one feature: `λ₃` (plane) or `λ₂ + λ₃` (edge) of the scatter of the
/// aggregated world cluster. Equals the mean squared point-to-feature distance
/// at the analytically optimal feature parameters.
pub fn feature_cost(feature: &Feature, poses: &[Pose]) -> Result<f64> {
    let (_, e) = eval_eig(feature, poses)?;
    Ok(kind_cost(feature.kind, &e))
}

/// Sum of all feature costs.
pub fn total_cost(problem: &BAProblem, poses: &[Pose]) -> Result<f64> {
    let mut sum = 0.0;
    for f in &problem.features {
        sum += feature_cost(f, poses)?;
    }
    Ok(sum)
}

/// Eigengap threshold, relative to `trace(A)`: below it the `2/(λ_l - λ_k)`
/// Hessian term is dropped and counted as a degenerate-spectrum fallback.
pub const GAP_RELATIVE_TOL: f64 = 1e-10;

/// Analytic derivatives of one feature's cost with respect to all poses,
/// stored sparsely over the observed pose indices.
///
/// The Hessian is kept factored: per-pose diagonal blocks plus rank-one terms
/// `w · r rᵀ` whose factor vectors span the observed blocks. [`Self::h_block`]
/// reconstructs any 6x6 block; [`Self::dense`] embeds everything at full size.
#[derive(Debug, Clone)]
pub struct FeatureDerivatives {
    pub cost: f64,
    /// Observed pose indices, ascending.
    pub obs: Vec<usize>,
    /// Gradient blocks `∂cost/∂(dphi_q, dt_q)`, parallel to `obs`.
    pub j: Vec<Vector6<f64>>,
    /// Diagonal Hessian blocks, parallel to `obs`.
    diag: Vec<Matrix6<f64>>,
    /// Rank-one Hessian factors `(weight, per-observation 6-vectors)`.
    rank1: Vec<(f64, Vec<Vector6<f64>>)>,
    /// Number of `2/(λ_l - λ_k)` terms dropped for near-degenerate spectra.
    pub gap_dropped: usize,
}

impl FeatureDerivatives {
    /// Hessian block for observation positions `a`, `b` (indices into `obs`).
    pub fn h_block(&self, a: usize, b: usize) -> Matrix6<f64> {
        let mut m = Matrix6::zeros();
        for (w, r) in &self.rank1 {
            m += r[a] * r[b].transpose() * *w;
        }
        if a == b {
            m += self.diag[a];
        }
        m
    }

    /// Dense gradient row and Hessian, padded to `6 * num_poses`.
    pub fn dense(&self, num_poses: usize) -> (RowDVector<f64>, DMatrix<f64>) {
        let dim = 6 * num_poses;
        let mut j = RowDVector::zeros(dim);
        let mut h = DMatrix::zeros(dim, dim);
        for (a, &p) in self.obs.iter().enumerate() {
            j.view_mut((0, 6 * p), (1, 6))
                .copy_from(&self.j[a].transpose());
            for (b, &q) in self.obs.iter().enumerate() {
                h.view_mut((6 * p, 6 * q), (6, 6))
                    .copy_from(&self.h_block(a, b));
            }
        }
        (j, h)
    }
}

/// `U_l z` for the 6x4 eigenvector embedding `U_l = [[-⌊u⌋, 0], [0, u]]`:
/// equals `(z_xyz × u, z_w · u)`.
fn u_project(u: &Vector3<f64>, z: &Vector4<f64>) -> Vector6<f64> {
    let zv = Vector3::new(z[0], z[1], z[2]);
    let top = zv.cross(u);
    let bottom = u * z[3];
    Vector6::new(top.x, top.y, top.z, bottom.x, bottom.y, bottom.z)
}

/// The 6x4 matrix `U_l` itself, for the sandwich products.
fn u_matrix(u: &Vector3<f64>) -> SMatrix<f64, 6, 4> {
    let mut m = SMatrix::<f64, 6, 4>::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-skew(u)));
    m.fixed_view_mut::<3, 1>(3, 3).copy_from(u);
    m
}

/// Per-observation quantities shared by all eigen indices of one feature.
struct ObsContext {
    /// World-frame cluster `T_q C_q T_qᵀ` as a 4x4 matrix.
    g_world: Matrix4<f64>,
    /// `M_q = (T_q - (1/N) C F) C_q T_qᵀ`.
    m: Matrix4<f64>,
}

/// Analytic gradient and Hessian of one feature's cost.
///
/// For planes this is the `λ₃` result; for edges the `λ₂` and `λ₃` results are
/// summed. In the edge sum the `(k, l) = (2, 3)` and `(3, 2)` coupling terms
/// are equal with opposite weights and cancel exactly, so they are never
/// formed; this also removes the `λ₂ ≈ λ₃` singularity for edges.
pub fn feature_derivatives(feature: &Feature, poses: &[Pose]) -> Result<FeatureDerivatives> {
    let (agg, e) = eval_eig(feature, poses)?;
    let cost = kind_cost(feature.kind, &e);
    let n = agg.n as f64;
    let trace_a = e.lambda.sum();
    let tau_gap = GAP_RELATIVE_TOL * trace_a.abs();

    let obs: Vec<usize> = feature.observations.keys().copied().collect();
    let m_obs = obs.len();

    // Shared per-observation matrices.
    let c_tilde = Vector4::new(agg.v.x, agg.v.y, agg.v.z, n);
    let contexts: Vec<ObsContext> = feature
        .observations
        .iter()
        .map(|(&q, c_local)| {
            let t = poses[q].homogeneous();
            let g_world = c_local.transform(&poses[q]).homogeneous();
            // T_q - (1/N) C F subtracts (v; N)/N from the last column of T_q.
            let mut t_hat = t;
            {
                let mut col = t_hat.column_mut(3);
                col -= c_tilde / n;
            }
            let m = t_hat * c_local.homogeneous() * t.transpose();
            ObsContext { g_world, m }
        })
        .collect();

    // Eigen indices entering the cost, 0-based (λ₁ ≥ λ₂ ≥ λ₃ at 0, 1, 2).
    let ls: &[usize] = match feature.kind {
        FeatureKind::Plane => &[2],
        FeatureKind::Edge => &[1, 2],
    };

    let mut j = vec![Vector6::zeros(); m_obs];
    let mut diag = vec![Matrix6::zeros(); m_obs];
    let mut rank1: Vec<(f64, Vec<Vector6<f64>>)> = Vec::new();
    let mut gap_dropped = 0usize;

    for &l in ls {
        let u_l = e.vector(l);

        // Gradient blocks and diagonal Hessian blocks.
        for (pos, ctx) in contexts.iter().enumerate() {
            let x = ctx.m.fixed_view::<3, 4>(0, 0).transpose() * u_l;
            j[pos] += u_project(&u_l, &x) * (2.0 / n);

            let u_mat = u_matrix(&u_l);
            let mut block = u_mat * ctx.g_world * u_mat.transpose() * (2.0 / n);
            let w = ctx.m.fixed_view::<3, 3>(0, 0).transpose() * u_l;
            let k = (skew(&w) * skew(&u_l) + skew(&u_l) * skew(&w)) / n;
            let mut top_left = block.fixed_view_mut::<3, 3>(0, 0);
            top_left += k;
            diag[pos] += block;
        }

        // Rank-one cross-pose term: -(2/N²) y yᵀ with y_q = U_l (T_q C_q e₄),
        // the factored form of -(2/N²) U_l T_p C_p F C_q T_qᵀ U_lᵀ.
        let y: Vec<Vector6<f64>> = contexts
            .iter()
            .map(|ctx| u_project(&u_l, &ctx.g_world.column(3).into_owned()))
            .collect();
        rank1.push((-2.0 / (n * n), y));

        // Eigengap coupling terms 2/(λ_l - λ_k) g_klᵀ g_kl. For edges, skip
        // the k within {2, 3} pairing (exact cancellation, see above).
        for k_idx in 0..3 {
            if k_idx == l || (feature.kind == FeatureKind::Edge && ls.contains(&k_idx)) {
                continue;
            }
            let gap = e.lambda[l] - e.lambda[k_idx];
            if gap.abs() < tau_gap {
                gap_dropped += 1;
                continue;
            }
            let u_k = e.vector(k_idx);
            let row: Vec<Vector6<f64>> = contexts
                .iter()
                .map(|ctx| {
                    let b_t = ctx.m.fixed_view::<3, 4>(0, 0).transpose();
                    let x_l = b_t * u_l;
                    let x_k = b_t * u_k;
                    (u_project(&u_k, &x_l) + u_project(&u_l, &x_k)) / n
                })
                .collect();
            rank1.push((2.0 / gap, row));
        }
    }

    Ok(FeatureDerivatives {
        cost,
        obs,
        j,
        diag,
        rank1,
        gap_dropped,
    })
}

/// Assembled cost, gradient row, and dense symmetric Hessian of the problem.
///
/// The pose-`q` perturbation occupies columns `[6q, 6q + 6)` in `(dphi, dt)`
/// order. `gap_dropped` counts degenerate-spectrum Hessian terms that were
/// dropped; a nonzero count means H is an approximation near a repeated
/// eigenvalue (damping absorbs this during optimization).
#[derive(Debug, Clone)]
pub struct DerivativeBundle {
    pub cost: f64,
    pub j: RowDVector<f64>,
    pub h: DMatrix<f64>,
    pub gap_dropped: usize,
}

/// Evaluate and accumulate all feature derivatives.
///
/// Feature evaluation runs in parallel; accumulation walks features in index
/// order within each pose-column strip, so the result is bitwise identical
/// for any worker count.
pub fn assemble(problem: &BAProblem, poses: &[Pose]) -> Result<DerivativeBundle> {
    if poses.len() != problem.num_poses {
        return Err(Error::InvalidInput(format!(
            "pose list has {} entries, problem expects {}",
            poses.len(),
            problem.num_poses
        )));
    }
    let factors: Vec<FeatureDerivatives> = problem
        .features
        .par_iter()
        .enumerate()
        .map(|(i, f)| {
            feature_derivatives(f, poses).map_err(|e| match e {
                Error::DegenerateFeature(msg) => {
                    Error::DegenerateFeature(format!("feature {i}: {msg}"))
                }
                other => other,
            })
        })
        .collect::<Result<_>>()?;

    let dim = 6 * problem.num_poses;
    let mut cost = 0.0;
    let mut gap_dropped = 0;
    let mut j = RowDVector::zeros(dim);
    for f in &factors {
        cost += f.cost;
        gap_dropped += f.gap_dropped;
        for (pos, &q) in f.obs.iter().enumerate() {
            let mut seg = j.view_mut((0, 6 * q), (1, 6));
            seg += f.j[pos].transpose();
        }
    }

    // Upper-triangle accumulation, parallel over pose-column strips (columns
    // are contiguous in memory). Each strip q receives blocks (p, q), p <= q,
    // features visited in order.
    let mut h = DMatrix::zeros(dim, dim);
    h.as_mut_slice()
        .par_chunks_mut(dim * 6)
        .enumerate()
        .for_each(|(q, strip)| {
            for f in &factors {
                let Ok(b) = f.obs.binary_search(&q) else {
                    continue;
                };
                for (a, &p) in f.obs.iter().take_while(|&&p| p <= q).enumerate() {
                    let block = f.h_block(a, b);
                    for c in 0..6 {
                        for r in 0..6 {
                            strip[c * dim + 6 * p + r] += block[(r, c)];
                        }
                    }
                }
            }
        });
    // Mirror the strict lower triangle.
    for c in 0..dim {
        for r in (c + 1)..dim {
            h[(r, c)] = h[(c, r)];
        }
    }

    Ok(DerivativeBundle {
        cost,
        j,
        h,
        gap_dropped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{so3_exp, Perturbation6};
    use approx::assert_relative_eq;
    use nalgebra::{DVector, Matrix3, SymmetricEigen};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn random_unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
        loop {
            let v = Vector3::new(
                rng.gen::<f64>() * 2.0 - 1.0,
                rng.gen::<f64>() * 2.0 - 1.0,
                rng.gen::<f64>() * 2.0 - 1.0,
            );
            if let Some(u) = v.try_normalize(1e-3) {
                return u;
            }
        }
    }

    fn random_pose(rng: &mut ChaCha8Rng, rot_scale: f64, trans_scale: f64) -> Pose {
        let rot = so3_exp(&(random_unit(rng) * rng.gen::<f64>() * rot_scale));
        let trans = random_unit(rng) * rng.gen::<f64>() * trans_scale;
        Pose::new(rot, trans)
    }

    /// Noisy points on a random plane patch of the given half-extent.
    fn plane_points(
        rng: &mut ChaCha8Rng,
        n: usize,
        extent: f64,
        sigma: f64,
    ) -> Vec<Vector3<f64>> {
        let normal = random_unit(rng);
        let e1 = normal.cross(&random_unit(rng)).normalize();
        let e2 = normal.cross(&e1);
        let origin = random_unit(rng) * 3.0;
        let gauss = Normal::new(0.0, 1.0).unwrap();
        (0..n)
            .map(|_| {
                let a = (rng.gen::<f64>() * 2.0 - 1.0) * extent;
                let b = (rng.gen::<f64>() * 2.0 - 1.0) * extent;
                let mut p = origin + e1 * a + e2 * b;
                if sigma > 0.0 {
                    p += Vector3::new(
                        gauss.sample(rng),
                        gauss.sample(rng),
                        gauss.sample(rng),
                    ) * sigma;
                }
                p
            })
            .collect()
    }

    /// Noisy points on a random line segment of the given half-length.
    fn line_points(
        rng: &mut ChaCha8Rng,
        n: usize,
        extent: f64,
        sigma: f64,
    ) -> Vec<Vector3<f64>> {
        let dir = random_unit(rng);
        let origin = random_unit(rng) * 3.0;
        let gauss = Normal::new(0.0, 1.0).unwrap();
        (0..n)
            .map(|_| {
                let t = (rng.gen::<f64>() * 2.0 - 1.0) * extent;
                let mut p = origin + dir * t;
                if sigma > 0.0 {
                    p += Vector3::new(
                        gauss.sample(rng),
                        gauss.sample(rng),
                        gauss.sample(rng),
                    ) * sigma;
                }
                p
            })
            .collect()
    }

    /// Distributes world points round-robin over the poses and clusters each
    /// share in its scan's local frame. Returns the feature and the world
    /// points for oracle use.
    fn feature_from_world_points(
        kind: FeatureKind,
        world: &[Vector3<f64>],
        poses: &[Pose],
    ) -> Feature {
        let mut buckets: Vec<Vec<Vector3<f64>>> = vec![Vec::new(); poses.len()];
        for (i, p) in world.iter().enumerate() {
            buckets[i % poses.len()].push(poses[i % poses.len()].inverse().transform_point(p));
        }
        let observations = buckets
            .into_iter()
            .enumerate()
            .filter(|(_, pts)| !pts.is_empty())
            .map(|(j, pts)| (j, PointCluster::from_points(&pts)))
            .collect();
        Feature::new(kind, observations)
    }

    /// A small noisy scene: planes and an edge over `num_poses` scans.
    fn noisy_scene(rng: &mut ChaCha8Rng, num_poses: usize, sigma: f64) -> (BAProblem, Vec<Pose>) {
        let poses: Vec<Pose> = (0..num_poses)
            .map(|_| random_pose(rng, 0.8, 2.0))
            .collect();
        let mut features = Vec::new();
        for _ in 0..3 {
            let world = plane_points(rng, 60, 1.5, sigma);
            features.push(feature_from_world_points(FeatureKind::Plane, &world, &poses));
        }
        let world = line_points(rng, 40, 1.5, sigma);
        features.push(feature_from_world_points(FeatureKind::Edge, &world, &poses));
        (BAProblem::new(features, num_poses).unwrap(), poses)
    }

    /// Applies one boxplus increment per pose, segments in `(dphi, dt)` order.
    fn apply_delta(poses: &[Pose], delta: &DVector<f64>) -> Vec<Pose> {
        poses
            .iter()
            .enumerate()
            .map(|(q, t)| {
                t.boxplus(&Perturbation6::from_vector(
                    &delta.fixed_rows::<6>(6 * q).into_owned(),
                ))
            })
            .collect()
    }

    /// Central finite-difference gradient of a cost function over pose space.
    fn fd_gradient<F: Fn(&[Pose]) -> f64>(f: F, poses: &[Pose], h: f64) -> DVector<f64> {
        let dim = 6 * poses.len();
        let mut g = DVector::zeros(dim);
        for i in 0..dim {
            let mut delta = DVector::zeros(dim);
            delta[i] = h;
            let fp = f(&apply_delta(poses, &delta));
            delta[i] = -h;
            let fm = f(&apply_delta(poses, &delta));
            g[i] = (fp - fm) / (2.0 * h);
        }
        g
    }

    /// Scatter matrix and centroid straight from a point list, no clusters.
    fn enumerated_scatter(points: &[Vector3<f64>]) -> (Matrix3<f64>, Vector3<f64>) {
        let n = points.len() as f64;
        let c = points.iter().sum::<Vector3<f64>>() / n;
        let mut a = Matrix3::zeros();
        for p in points {
            let d = p - c;
            a += d * d.transpose();
        }
        (a / n, c)
    }

    #[test]
    fn aggregate_single_identity_pose_is_local_cluster() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts = plane_points(&mut rng, 20, 1.0, 0.1);
        let c = PointCluster::from_points(&pts);
        let f = Feature::new(FeatureKind::Plane, BTreeMap::from([(0, c.clone())]));
        let agg = aggregate_world_cluster(&f, &[Pose::identity()]);
        assert_eq!(agg.p, c.p);
        assert_eq!(agg.v, c.v);
        assert_eq!(agg.n, c.n);
    }

    #[test]
    fn aggregate_two_observations_matches_point_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let poses = vec![
            random_pose(&mut rng, 0.9, 2.0),
            random_pose(&mut rng, 0.9, 2.0),
        ];
        let local0 = plane_points(&mut rng, 15, 1.0, 0.2);
        let local1 = plane_points(&mut rng, 25, 1.0, 0.2);
        let f = Feature::new(
            FeatureKind::Plane,
            BTreeMap::from([
                (0, PointCluster::from_points(&local0)),
                (1, PointCluster::from_points(&local1)),
            ]),
        );
        let agg = aggregate_world_cluster(&f, &poses);

        let world: Vec<Vector3<f64>> = local0
            .iter()
            .map(|p| poses[0].transform_point(p))
            .chain(local1.iter().map(|p| poses[1].transform_point(p)))
            .collect();
        let oracle = PointCluster::from_points(&world);
        assert_eq!(agg.n, oracle.n);
        assert_relative_eq!(agg.v, oracle.v, epsilon = 1e-9);
        assert_relative_eq!(agg.p, oracle.p, epsilon = 1e-9 * oracle.p.norm().max(1.0));
    }

    #[test]
    fn aggregate_ignores_unobserved_poses_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut poses = vec![
            random_pose(&mut rng, 0.9, 2.0),
            random_pose(&mut rng, 0.9, 2.0),
            random_pose(&mut rng, 0.9, 2.0),
        ];
        let pts = plane_points(&mut rng, 20, 1.0, 0.1);
        let f = Feature::new(
            FeatureKind::Plane,
            BTreeMap::from([(0, PointCluster::from_points(&pts))]),
        );
        let before = aggregate_world_cluster(&f, &poses);
        // Poses 1 and 2 are unobserved; scrambling them must change nothing.
        poses[1] = random_pose(&mut rng, 2.0, 10.0);
        poses[2] = random_pose(&mut rng, 2.0, 10.0);
        let after = aggregate_world_cluster(&f, &poses);
        assert_eq!(before.p, after.p);
        assert_eq!(before.v, after.v);
        assert_eq!(before.n, after.n);
    }

    #[test]
    fn coplanar_points_have_zero_plane_cost() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let poses = vec![Pose::identity(), random_pose(&mut rng, 0.5, 1.0)];
        let world = plane_points(&mut rng, 50, 2.0, 0.0);
        let f = feature_from_world_points(FeatureKind::Plane, &world, &poses);
        let cost = feature_cost(&f, &poses).unwrap();
        let agg = aggregate_world_cluster(&f, &poses);
        let lambda1 = sym_eig3(&agg.scatter().unwrap()).lambda[0];
        assert!(cost.abs() <= 1e-12 * lambda1, "cost {cost}, λ₁ {lambda1}");
    }

    #[test]
    fn collinear_points_have_zero_edge_cost() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let poses = vec![Pose::identity(), random_pose(&mut rng, 0.5, 1.0)];
        let world = line_points(&mut rng, 50, 2.0, 0.0);
        let f = feature_from_world_points(FeatureKind::Edge, &world, &poses);
        let cost = feature_cost(&f, &poses).unwrap();
        let agg = aggregate_world_cluster(&f, &poses);
        let lambda1 = sym_eig3(&agg.scatter().unwrap()).lambda[0];
        assert!(cost.abs() <= 1e-12 * lambda1, "cost {cost}, λ₁ {lambda1}");
    }

    #[test]
    fn noisy_plane_cost_matches_brute_force_plane_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let poses: Vec<Pose> = (0..3).map(|_| random_pose(&mut rng, 0.9, 2.0)).collect();
        let world = plane_points(&mut rng, 120, 1.5, 0.05);
        let f = feature_from_world_points(FeatureKind::Plane, &world, &poses);
        let cost = feature_cost(&f, &poses).unwrap();

        // Independent oracle: scatter by point enumeration, smallest eigenvalue
        // from nalgebra's tridiagonal eigensolver. The optimal plane offset for
        // a fixed normal is the centroid projection, so the minimum over (n, q)
        // of the mean squared distance is exactly min_n nᵀ A n.
        let (a, c) = enumerated_scatter(&world);
        let eig = SymmetricEigen::new(a);
        let min_eig = eig.eigenvalues.min();
        assert_relative_eq!(cost, min_eig, max_relative = 1e-9);

        // Coarse sphere sweep of actual plane parameters brackets the same
        // minimum from above: every candidate normal scores at least `cost`.
        let mut grid_min = f64::INFINITY;
        let golden = std::f64::consts::PI * (3.0 - 5.0_f64.sqrt());
        for i in 0..20_000 {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / 20_000.0;
            let r = (1.0 - z * z).sqrt();
            let phi = golden * i as f64;
            let n = Vector3::new(r * phi.cos(), r * phi.sin(), z);
            let mean_sq = world
                .iter()
                .map(|p| {
                    let d = n.dot(&(p - c));
                    d * d
                })
                .sum::<f64>()
                / world.len() as f64;
            grid_min = grid_min.min(mean_sq);
        }
        assert!(grid_min >= cost * (1.0 - 1e-9));
        assert!(grid_min <= cost + 1e-3 * eig.eigenvalues.max());
    }

    #[test]
    fn total_cost_of_empty_problem_is_zero() {
        let problem = BAProblem::new(Vec::new(), 4).unwrap();
        let poses = vec![Pose::identity(); 4];
        assert_eq!(total_cost(&problem, &poses).unwrap(), 0.0);
    }

    #[test]
    fn total_cost_invariant_under_global_rigid_motion() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (problem, poses) = noisy_scene(&mut rng, 4, 0.05);
        let base = total_cost(&problem, &poses).unwrap();
        for _ in 0..5 {
            let t0 = random_pose(&mut rng, 2.5, 8.0);
            let moved: Vec<Pose> = poses.iter().map(|t| t0.compose(t)).collect();
            let cost = total_cost(&problem, &moved).unwrap();
            assert_relative_eq!(cost, base, max_relative = 1e-9);
        }
    }

    #[test]
    fn cost_equals_per_point_distance_evaluation() {
        // The central equivalence: the eigenvalue cost equals the per-point
        // mean squared distance to the optimal feature, for both kinds, with
        // point counts up to 10^4.
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for &n_points in &[30usize, 400, 10_000] {
            let poses: Vec<Pose> = (0..3).map(|_| random_pose(&mut rng, 0.9, 2.0)).collect();

            let world = plane_points(&mut rng, n_points, 2.0, 0.07);
            let f = feature_from_world_points(FeatureKind::Plane, &world, &poses);
            let cost = feature_cost(&f, &poses).unwrap();
            let (a, c) = enumerated_scatter(&world);
            let eig = SymmetricEigen::new(a);
            let i_min = (0..3).min_by(|&i, &j| {
                eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j])
            }).unwrap();
            let normal = eig.eigenvectors.column(i_min).into_owned();
            let per_point = world
                .iter()
                .map(|p| normal.dot(&(p - c)).powi(2))
                .sum::<f64>()
                / world.len() as f64;
            assert_relative_eq!(cost, per_point, max_relative = 1e-9);

            let world = line_points(&mut rng, n_points, 2.0, 0.07);
            let f = feature_from_world_points(FeatureKind::Edge, &world, &poses);
            let cost = feature_cost(&f, &poses).unwrap();
            let (a, c) = enumerated_scatter(&world);
            let eig = SymmetricEigen::new(a);
            let i_max = (0..3).max_by(|&i, &j| {
                eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j])
            }).unwrap();
            let dir = eig.eigenvectors.column(i_max).into_owned();
            let per_point = world
                .iter()
                .map(|p| {
                    let d = p - c;
                    (d - dir * dir.dot(&d)).norm_squared()
                })
                .sum::<f64>()
                / world.len() as f64;
            assert_relative_eq!(cost, per_point, max_relative = 1e-9);
        }
    }

    #[test]
    fn jacobian_matches_finite_differences_of_cost() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (problem, gt_poses) = noisy_scene(&mut rng, 3, 0.05);
        // Evaluate away from the optimum so the gradient is well exercised.
        let mut delta = DVector::zeros(18);
        for x in delta.iter_mut() {
            *x = (rng.gen::<f64>() * 2.0 - 1.0) * 0.02;
        }
        let poses = apply_delta(&gt_poses, &delta);

        let bundle = assemble(&problem, &poses).unwrap();
        let fd = fd_gradient(
            |p| total_cost(&problem, p).unwrap(),
            &poses,
            1e-6,
        );
        let analytic = bundle.j.transpose();
        let rel = (&fd - &analytic).norm() / analytic.norm();
        assert!(rel < 1e-5, "gradient FD mismatch: relative error {rel}");

        // Per-feature jacobians agree too.
        for f in &problem.features {
            let d = feature_derivatives(f, &poses).unwrap();
            let (j_row, _) = d.dense(problem.num_poses);
            let fd = fd_gradient(|p| feature_cost(f, p).unwrap(), &poses, 1e-6);
            let rel = (&fd - &j_row.transpose()).norm() / j_row.norm().max(1e-12);
            assert!(rel < 1e-5, "feature gradient FD mismatch: {rel}");
        }
    }

    #[test]
    fn hessian_matches_finite_differences_of_jacobian() {
        // At a noiseless ground-truth configuration the gradient vanishes, so
        // chart effects of the retraction drop out of the comparison and the
        // finite difference of the analytic jacobian converges to H.
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let (problem, poses) = noisy_scene(&mut rng, 3, 0.0);
        let bundle = assemble(&problem, &poses).unwrap();
        let dim = 6 * problem.num_poses;
        let h = 1e-5;

        let mut h_fd = DMatrix::<f64>::zeros(dim, dim);
        for i in 0..dim {
            let mut delta = DVector::zeros(dim);
            delta[i] = h;
            let jp = assemble(&problem, &apply_delta(&poses, &delta)).unwrap().j;
            delta[i] = -h;
            let jm = assemble(&problem, &apply_delta(&poses, &delta)).unwrap().j;
            let col = (jp - jm).transpose() / (2.0 * h);
            h_fd.column_mut(i).copy_from(&col);
        }

        let h_max = bundle.h.amax();
        let mut checked = 0usize;
        for r in 0..dim {
            for c in 0..dim {
                let a = bundle.h[(r, c)];
                if a.abs() > 1e-8 * h_max {
                    checked += 1;
                    let rel = (h_fd[(r, c)] - a).abs() / a.abs();
                    assert!(
                        rel < 1e-4,
                        "H[({r},{c})] = {a}, FD {} (rel {rel})",
                        h_fd[(r, c)]
                    );
                }
            }
        }
        assert!(checked > dim, "too few significant Hessian entries exercised");
    }

    #[test]
    fn gauge_direction_annihilates_jacobian_and_hessian() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (problem, gt_poses) = noisy_scene(&mut rng, 4, 0.05);
        let mut delta = DVector::zeros(24);
        for x in delta.iter_mut() {
            *x = (rng.gen::<f64>() * 2.0 - 1.0) * 0.02;
        }
        let poses = apply_delta(&gt_poses, &delta);
        let bundle = assemble(&problem, &poses).unwrap();
        let j_norm = bundle.j.norm();
        let h_norm = bundle.h.norm();

        for _ in 0..100 {
            let w = Vector6::from_fn(|_, _| rng.gen::<f64>() * 2.0 - 1.0);
            let mut d = DVector::zeros(24);
            for q in 0..4 {
                d.fixed_rows_mut::<6>(6 * q).copy_from(&w);
            }
            let jd = (&bundle.j * &d)[0];
            assert!(jd.abs() <= 1e-8 * j_norm * w.norm(), "J·d = {jd}");
            let dhd = (d.transpose() * &bundle.h * &d)[0];
            assert!(
                dhd.abs() <= 1e-8 * h_norm * w.norm_squared(),
                "dᵀHd = {dhd}"
            );
        }
    }

    #[test]
    fn unobserved_pose_blocks_are_exactly_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        // Feature observed by poses 0 and 2 only, in a 4-pose problem.
        let poses: Vec<Pose> = (0..4).map(|_| random_pose(&mut rng, 0.9, 2.0)).collect();
        let world = plane_points(&mut rng, 40, 1.5, 0.05);
        let local: Vec<Vector3<f64>> = world
            .iter()
            .map(|p| poses[0].inverse().transform_point(p))
            .collect();
        let (l0, l2) = local.split_at(20);
        // Both halves expressed in their own scan frames.
        let w2: Vec<Vector3<f64>> = l2.iter().map(|p| poses[0].transform_point(p)).collect();
        let l2: Vec<Vector3<f64>> = w2.iter().map(|p| poses[2].inverse().transform_point(p)).collect();
        let f = Feature::new(
            FeatureKind::Plane,
            BTreeMap::from([
                (0, PointCluster::from_points(l0)),
                (2, PointCluster::from_points(&l2)),
            ]),
        );
        let problem = BAProblem::new(vec![f], 4).unwrap();
        let bundle = assemble(&problem, &poses).unwrap();

        for &q in &[1usize, 3] {
            for i in 0..6 {
                assert_eq!(bundle.j[6 * q + i], 0.0);
            }
            for r in 0..24 {
                for c in 6 * q..6 * q + 6 {
                    assert_eq!(bundle.h[(r, c)], 0.0);
                    assert_eq!(bundle.h[(c, r)], 0.0);
                }
            }
        }
    }

    #[test]
    fn assemble_single_feature_equals_padded_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let poses: Vec<Pose> = (0..3).map(|_| random_pose(&mut rng, 0.9, 2.0)).collect();
        let world = plane_points(&mut rng, 60, 1.5, 0.05);
        let f = feature_from_world_points(FeatureKind::Plane, &world, &poses);
        let d = feature_derivatives(&f, &poses).unwrap();
        let (j_row, h_dense) = d.dense(3);
        let problem = BAProblem::new(vec![f], 3).unwrap();
        let bundle = assemble(&problem, &poses).unwrap();

        assert_eq!(bundle.cost, d.cost);
        assert_eq!(bundle.j, j_row);
        assert_relative_eq!(bundle.h, h_dense, epsilon = 1e-12 * h_dense.amax());
    }

    #[test]
    fn assemble_cost_is_bitwise_total_cost() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let (problem, poses) = noisy_scene(&mut rng, 4, 0.05);
        let bundle = assemble(&problem, &poses).unwrap();
        let total = total_cost(&problem, &poses).unwrap();
        assert_eq!(bundle.cost.to_bits(), total.to_bits());
    }

    #[test]
    fn assemble_bitwise_identical_across_thread_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let (problem, poses) = noisy_scene(&mut rng, 5, 0.05);
        let run = |threads: usize| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| assemble(&problem, &poses).unwrap())
        };
        let a = run(1);
        for threads in [2, 4, 7] {
            let b = run(threads);
            assert_eq!(a.cost.to_bits(), b.cost.to_bits());
            assert!(a.j.iter().zip(b.j.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
            assert!(a.h.iter().zip(b.h.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn assembled_hessian_is_exactly_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let (problem, poses) = noisy_scene(&mut rng, 4, 0.05);
        let bundle = assemble(&problem, &poses).unwrap();
        let dim = 24;
        for r in 0..dim {
            for c in 0..dim {
                assert_eq!(bundle.h[(r, c)].to_bits(), bundle.h[(c, r)].to_bits());
            }
        }
        // The mirrored triangle is also a faithful copy of what direct
        // evaluation of the transposed blocks would give.
        for f in &problem.features {
            let d = feature_derivatives(f, &poses).unwrap();
            for a in 0..d.obs.len() {
                for b in 0..d.obs.len() {
                    let ab = d.h_block(a, b);
                    let ba_t = d.h_block(b, a).transpose();
                    assert_relative_eq!(ab, ba_t, epsilon = 1e-9 * ab.amax().max(1e-12));
                }
            }
        }
    }

    #[test]
    fn hessian_psd_on_gauge_fixed_subspace_at_minimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let (problem, poses) = noisy_scene(&mut rng, 3, 0.0);
        let bundle = assemble(&problem, &poses).unwrap();
        // Removing the first pose's six columns fixes the gauge.
        let reduced = bundle.h.view((6, 6), (12, 12)).into_owned();
        let eig = SymmetricEigen::new(reduced);
        let min_eig = eig.eigenvalues.min();
        let h_norm = bundle.h.amax();
        assert!(
            min_eig >= -1e-8 * h_norm,
            "min eigenvalue {min_eig} vs scale {h_norm}"
        );
    }

    #[test]
    fn degenerate_features_error_with_index() {
        let pts = [Vector3::new(0.0, 0.0, 0.0), Vector3::new(1.0, 0.0, 0.0)];
        let plane = Feature::new(
            FeatureKind::Plane,
            BTreeMap::from([(0, PointCluster::from_points(&pts))]),
        );
        let err = feature_cost(&plane, &[Pose::identity()]).unwrap_err();
        assert!(matches!(err, Error::DegenerateFeature(_)));

        let problem = BAProblem::new(vec![plane], 1).unwrap();
        let err = assemble(&problem, &[Pose::identity()]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("feature 0"), "error should name the feature: {msg}");
    }

    #[test]
    fn problem_validation_rejects_bad_indices() {
        let pts = plane_points(&mut ChaCha8Rng::seed_from_u64(18), 10, 1.0, 0.1);
        let f = Feature::new(
            FeatureKind::Plane,
            BTreeMap::from([(3, PointCluster::from_points(&pts))]),
        );
        assert!(matches!(
            BAProblem::new(vec![f], 3),
            Err(Error::InvalidInput(_))
        ));
        let empty = Feature::new(FeatureKind::Plane, BTreeMap::new());
        assert!(matches!(
            BAProblem::new(vec![empty], 3),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn isotropic_cluster_drops_gap_terms() {
        // A perfect octahedron has a triply degenerate scatter spectrum, so
        // both 2/(λ₃ - λ_k) terms of a plane feature are dropped.
        let r = 2.0;
        let pts = [
            Vector3::new(r, 0.0, 0.0),
            Vector3::new(-r, 0.0, 0.0),
            Vector3::new(0.0, r, 0.0),
            Vector3::new(0.0, -r, 0.0),
            Vector3::new(0.0, 0.0, r),
            Vector3::new(0.0, 0.0, -r),
        ];
        let f = Feature::new(
            FeatureKind::Plane,
            BTreeMap::from([(0, PointCluster::from_points(&pts))]),
        );
        let d = feature_derivatives(&f, &[Pose::identity()]).unwrap();
        assert_eq!(d.gap_dropped, 2);
        assert!(d.j[0].iter().all(|x| x.is_finite()));
        assert!(d.h_block(0, 0).iter().all(|x| x.is_finite()));
    }

    #[test]
    fn exact_line_edge_drops_no_gap_terms() {
        // λ₂ = λ₃ = 0 for collinear points, but the edge cost never forms the
        // internal 2/(λ₂ - λ₃) coupling, so nothing is dropped.
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let poses = vec![Pose::identity()];
        let world = line_points(&mut rng, 30, 2.0, 0.0);
        let f = feature_from_world_points(FeatureKind::Edge, &world, &poses);
        let d = feature_derivatives(&f, &poses).unwrap();
        assert_eq!(d.gap_dropped, 0);
    }

    #[test]
    fn u_project_matches_u_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        for _ in 0..50 {
            let u = random_unit(&mut rng);
            let z = Vector4::from_fn(|_, _| rng.gen::<f64>() * 4.0 - 2.0);
            let viaproj = u_project(&u, &z);
            let viamat = u_matrix(&u) * z;
            assert_relative_eq!(viaproj, viamat, epsilon = 1e-14);
        }
    }

    #[test]
    fn derivative_time_independent_of_cluster_point_count() {
        use std::time::Instant;
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let num_poses = 12;
        let poses: Vec<Pose> = (0..num_poses).map(|_| random_pose(&mut rng, 0.4, 2.0)).collect();
        let build = |rng: &mut ChaCha8Rng, points_per_feature: usize| {
            let features: Vec<Feature> = (0..200)
                .map(|_| {
                    let world = plane_points(rng, points_per_feature, 1.5, 0.05);
                    feature_from_world_points(FeatureKind::Plane, &world, &poses)
                })
                .collect();
            BAProblem::new(features, num_poses).unwrap()
        };
        let small = build(&mut rng, 24);
        let large = build(&mut rng, 1000);

        let time_once = |problem: &BAProblem| {
            let t0 = Instant::now();
            let b = assemble(problem, &poses).unwrap();
            std::hint::black_box(b.cost);
            t0.elapsed().as_secs_f64()
        };
        // Warm up allocators and the thread pool before timing. Interleave
        // the measurements so load shifts on the machine hit both problems
        // alike, and judge by the median of per-pair ratios.
        let _ = assemble(&small, &poses).unwrap();
        let _ = assemble(&large, &poses).unwrap();
        let mut ratios: Vec<f64> = (0..11)
            .map(|_| time_once(&large) / time_once(&small))
            .collect();
        ratios.sort_by(f64::total_cmp);
        let ratio = ratios[5];
        assert!(
            ratio < 1.2 && ratio > 1.0 / 1.2,
            "derivative time should not depend on point count: median ratio {ratio:.3}"
        );
    }
}
