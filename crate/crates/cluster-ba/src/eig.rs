//! Symmetric 3x3 eigendecomposition.
//!
//! The solver calls this once per feature per iteration, so it avoids a general
//! iterative eigensolver: eigenvalues come from the closed-form trigonometric
//! solution of the characteristic polynomial, eigenvectors from cross products
//! of rows of `A - lambda I`, and a short cyclic-Jacobi polish removes the
//! residual error of the closed form. The polish normally needs one sweep; it
//! also covers degenerate spectra where the cross-product seed is unreliable.

use nalgebra::{Matrix3, Vector3};

/// Eigenvalues sorted descending with matching orthonormal eigenvector columns.
#[derive(Debug, Clone, Copy)]
pub struct EigenDecomp3 {
    /// `lambda[0] >= lambda[1] >= lambda[2]`.
    pub lambda: Vector3<f64>,
    /// Columns are the eigenvectors `u_1, u_2, u_3` matching `lambda`.
    pub u: Matrix3<f64>,
}

impl EigenDecomp3 {
    /// Eigenvector for the l-th largest eigenvalue, `l` in `0..3`.
    pub fn vector(&self, l: usize) -> Vector3<f64> {
        self.u.column(l).into_owned()
    }
}

/// Eigendecomposition of a symmetric matrix. The input is symmetrized first,
/// so mild asymmetry from accumulated rounding is tolerated.
///
/// Sign convention: the largest-magnitude component of each eigenvector is made
/// positive, ties broken by lowest index. This keeps downstream derivative
/// tests deterministic; callers must not rely on any other sign property.
pub fn sym_eig3(a: &Matrix3<f64>) -> EigenDecomp3 {
    let s = (a + a.transpose()) / 2.0;
    let scale = s.abs().max();
    if scale == 0.0 || !scale.is_finite() {
        return EigenDecomp3 {
            lambda: Vector3::zeros(),
            u: Matrix3::identity(),
        };
    }
    let b = s / scale;

    let lambda = analytic_eigenvalues(&b);
    let mut v = analytic_eigenvectors(&b, &lambda).unwrap_or_else(Matrix3::identity);
    let mut d = v.transpose() * b * v;
    jacobi_polish(&mut d, &mut v);

    // Sort descending; stable so exactly tied eigenvalues keep their order.
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| d[(j, j)].partial_cmp(&d[(i, i)]).unwrap());

    let mut lambda_out = Vector3::zeros();
    let mut u = Matrix3::zeros();
    for (slot, &i) in order.iter().enumerate() {
        lambda_out[slot] = d[(i, i)] * scale;
        let mut col = v.column(i).into_owned();
        // Deterministic sign: largest-magnitude component positive.
        let mut argmax = 0;
        for k in 1..3 {
            if col[k].abs() > col[argmax].abs() {
                argmax = k;
            }
        }
        if col[argmax] < 0.0 {
            col = -col;
        }
        u.set_column(slot, &col);
    }
    EigenDecomp3 { lambda: lambda_out, u }
}

/// Closed-form eigenvalues of a symmetric matrix with entries of order one,
/// returned in no particular order.
fn analytic_eigenvalues(b: &Matrix3<f64>) -> Vector3<f64> {
    let p1 = b[(0, 1)].powi(2) + b[(0, 2)].powi(2) + b[(1, 2)].powi(2);
    if p1 == 0.0 {
        return Vector3::new(b[(0, 0)], b[(1, 1)], b[(2, 2)]);
    }
    let q = b.trace() / 3.0;
    let p2 = (b[(0, 0)] - q).powi(2) + (b[(1, 1)] - q).powi(2) + (b[(2, 2)] - q).powi(2) + 2.0 * p1;
    let p = (p2 / 6.0).sqrt();
    let m = (b - Matrix3::identity() * q) / p;
    let r = (m.determinant() / 2.0).clamp(-1.0, 1.0);
    let phi = r.acos() / 3.0;
    let e1 = q + 2.0 * p * phi.cos();
    let e3 = q + 2.0 * p * (phi + 2.0 * std::f64::consts::FRAC_PI_3 * 2.0).cos();
    let e2 = 3.0 * q - e1 - e3;
    Vector3::new(e1, e2, e3)
}

/// Eigenvector seed from cross products of rows of `B - lambda I`. Returns
/// `None` when the spectrum is too degenerate for the method to be trusted;
/// the Jacobi polish then starts from the identity instead.
fn analytic_eigenvectors(b: &Matrix3<f64>, lambda: &Vector3<f64>) -> Option<Matrix3<f64>> {
    let u1 = null_direction(&(b - Matrix3::identity() * lambda[0]))?;
    let u3 = null_direction(&(b - Matrix3::identity() * lambda[2]))?;
    let u3 = (u3 - u1 * u1.dot(&u3)).try_normalize(1e-8)?;
    let u2 = u3.cross(&u1);
    Some(Matrix3::from_columns(&[u1, u2, u3]))
}

fn null_direction(m: &Matrix3<f64>) -> Option<Vector3<f64>> {
    let r0: Vector3<f64> = m.row(0).transpose();
    let r1: Vector3<f64> = m.row(1).transpose();
    let r2: Vector3<f64> = m.row(2).transpose();
    let candidates = [r0.cross(&r1), r0.cross(&r2), r1.cross(&r2)];
    let best = candidates
        .iter()
        .max_by(|a, b| a.norm_squared().partial_cmp(&b.norm_squared()).unwrap())?;
    best.try_normalize(1e-8)
}

/// Cyclic Jacobi on `d`, accumulating the rotations into `v`. With a good seed
/// `d` is already nearly diagonal and one sweep reaches machine precision;
/// degenerate seeds take a few more. Entries of `d` are of order one.
fn jacobi_polish(d: &mut Matrix3<f64>, v: &mut Matrix3<f64>) {
    const TOL: f64 = 1e-15;
    for _ in 0..16 {
        let off = d[(0, 1)].abs().max(d[(0, 2)].abs()).max(d[(1, 2)].abs());
        if off <= TOL {
            return;
        }
        for (p, q) in [(0, 1), (0, 2), (1, 2)] {
            let dpq = d[(p, q)];
            if dpq.abs() <= f64::MIN_POSITIVE {
                continue;
            }
            let theta = (d[(q, q)] - d[(p, p)]) / (2.0 * dpq);
            let t = theta.signum() / (theta.abs() + (1.0 + theta * theta).sqrt());
            let c = 1.0 / (1.0 + t * t).sqrt();
            let s = t * c;
            let mut rot = Matrix3::identity();
            rot[(p, p)] = c;
            rot[(q, q)] = c;
            rot[(p, q)] = s;
            rot[(q, p)] = -s;
            *d = rot.transpose() * *d * rot;
            *v *= rot;
            // Re-symmetrize to stop rounding drift across sweeps.
            *d = (*d + d.transpose()) / 2.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_symmetric(rng: &mut impl Rng, scale: f64) -> Matrix3<f64> {
        let m = Matrix3::from_fn(|_, _| rng.gen_range(-1.0..1.0) * scale);
        (m + m.transpose()) / 2.0
    }

    fn check_invariants(a: &Matrix3<f64>, e: &EigenDecomp3) {
        assert!(e.lambda[0] >= e.lambda[1] && e.lambda[1] >= e.lambda[2]);
        let tol = 1e-10 * e.lambda[0].abs().max(1.0);
        for l in 0..3 {
            let u = e.vector(l);
            let residual = (a * u - u * e.lambda[l]).norm();
            assert!(residual < tol, "residual {residual} vs tol {tol}");
            assert!((u.norm() - 1.0).abs() < 1e-12);
            for k in 0..l {
                assert!(e.vector(k).dot(&u).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn diagonal_matrix() {
        let e = sym_eig3(&Matrix3::from_diagonal(&Vector3::new(3.0, 2.0, 1.0)));
        assert_relative_eq!(e.lambda, Vector3::new(3.0, 2.0, 1.0), epsilon = 1e-14);
        assert_relative_eq!(e.u, Matrix3::identity(), epsilon = 1e-14);
    }

    #[test]
    fn rank_one_outer_product() {
        let q = Vector3::new(1.0, -2.0, 2.0).normalize();
        let e = sym_eig3(&(q * q.transpose()));
        assert_relative_eq!(e.lambda, Vector3::new(1.0, 0.0, 0.0), epsilon = 1e-12);
        // Sign rule: largest-magnitude component positive, so u1 = -q here
        // (q's largest-magnitude components are negative-leaning after the rule).
        let u1 = e.vector(0);
        assert!((u1 - q).norm().min((u1 + q).norm()) < 1e-12);
        let mut argmax = 0;
        for k in 1..3 {
            if u1[k].abs() > u1[argmax].abs() {
                argmax = k;
            }
        }
        assert!(u1[argmax] > 0.0);
    }

    #[test]
    fn reconstruction_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for i in 0..2000 {
            let scale = [1.0, 1e-6, 1e6, 37.0][i % 4];
            let a = random_symmetric(&mut rng, scale);
            let e = sym_eig3(&a);
            let rebuilt = e.u * Matrix3::from_diagonal(&e.lambda) * e.u.transpose();
            let tol = 1e-10 * e.lambda[0].abs().max(1.0).max(scale * 1e-10);
            assert!((rebuilt - a).abs().max() < tol.max(1e-10 * scale));
            check_invariants(&a, &e);
        }
    }

    #[test]
    fn degenerate_spectra() {
        check_invariants(
            &(Matrix3::identity() * 5.0),
            &sym_eig3(&(Matrix3::identity() * 5.0)),
        );
        let a = Matrix3::from_diagonal(&Vector3::new(2.0, 2.0, 1.0));
        check_invariants(&a, &sym_eig3(&a));

        // Nearly-degenerate pair, rotated so it is not axis-aligned.
        let r = crate::geom::so3_exp(&Vector3::new(0.3, 0.5, -0.2));
        let a = r * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0 + 1e-13, 3.0)) * r.transpose();
        let a = (a + a.transpose()) / 2.0;
        check_invariants(&a, &sym_eig3(&a));
    }

    #[test]
    fn zero_matrix() {
        let e = sym_eig3(&Matrix3::zeros());
        assert_eq!(e.lambda, Vector3::zeros());
        assert_eq!(e.u, Matrix3::identity());
    }

    #[test]
    fn eigenvalues_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        // Row/column permutation conjugates A, so the sorted spectrum is unchanged.
        let perms: [[usize; 3]; 6] = [
            [0, 1, 2],
            [0, 2, 1],
            [1, 0, 2],
            [1, 2, 0],
            [2, 0, 1],
            [2, 1, 0],
        ];
        for _ in 0..200 {
            let a = random_symmetric(&mut rng, 2.0);
            let base = sym_eig3(&a).lambda;
            for perm in &perms {
                let mut p = Matrix3::zeros();
                for (r, &c) in perm.iter().enumerate() {
                    p[(r, c)] = 1.0;
                }
                let permuted = p * a * p.transpose();
                let lambda = sym_eig3(&permuted).lambda;
                assert_relative_eq!(lambda, base, epsilon = 1e-12, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn sign_convention_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..100 {
            let a = random_symmetric(&mut rng, 1.0);
            let e1 = sym_eig3(&a);
            let e2 = sym_eig3(&a);
            assert_eq!(e1.u, e2.u);
            assert_eq!(e1.lambda, e2.lambda);
            for l in 0..3 {
                let u = e1.vector(l);
                let mut argmax = 0;
                for k in 1..3 {
                    if u[k].abs() > u[argmax].abs() {
                        argmax = k;
                    }
                }
                assert!(u[argmax] > 0.0);
            }
        }
    }
}
