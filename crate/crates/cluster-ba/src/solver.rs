//! Damped second-order minimization of the cluster cost with a fixed gauge.
//!
//! Each iteration solves the gauge-reduced damped normal equations
//! `(H + μI) Δ = -Jᵀ`, applies the step through boxplus, and adapts the
//! damping by the gain ratio between actual and predicted cost decrease.
//! The first pose never moves; that pins the rigid-motion null space of the
//! cost, making the reduced damped system positive definite.

use nalgebra::{DMatrix, DVector, RowDVector};

use crate::error::{Error, Result};
use crate::geom::{Perturbation6, Pose};
use crate::problem::{assemble, total_cost, BAProblem};

/// Knobs of the damped solve loop. Defaults follow the usual
/// Levenberg-Marquardt schedule with tight step tolerances.
#[derive(Debug, Clone)]
pub struct SolverOptions {
    /// Initial damping.
    pub mu0: f64,
    /// Initial damping growth factor on rejection.
    pub nu0: f64,
    /// Hard iteration cap (each linear solve attempt counts).
    pub max_iters: usize,
    /// Per-pose rotation step below which the solve terminates (rad).
    pub step_tol_rot: f64,
    /// Per-pose translation step below which the solve terminates (m).
    pub step_tol_trans: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            mu0: 0.01,
            nu0: 2.0,
            max_iters: 50,
            step_tol_rot: 1e-6,
            step_tol_trans: 1e-6,
        }
    }
}

/// Why the solve loop stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    /// Every per-pose rotation and translation step fell below tolerance.
    StepTol,
    /// Iteration cap reached first.
    MaxIters,
}

/// Outcome bookkeeping of one solve.
#[derive(Debug, Clone)]
pub struct SolveReport {
    /// Linear solve attempts, accepted or not.
    pub iterations: usize,
    /// Initial cost followed by each accepted cost; strictly decreasing.
    pub cost_trace: Vec<f64>,
    pub final_cost: f64,
    pub termination: Termination,
    pub accepted: usize,
    pub rejected: usize,
}

/// Damping schedule state: grow on rejection, relax on acceptance, and
/// declare the solve stalled after sustained rejection at extreme damping.
#[derive(Debug, Clone)]
pub(crate) struct Damping {
    pub mu: f64,
    nu: f64,
    nu0: f64,
    consecutive_rejections: u32,
}

impl Damping {
    pub fn new(mu0: f64, nu0: f64) -> Self {
        Damping {
            mu: mu0,
            nu: nu0,
            nu0,
            consecutive_rejections: 0,
        }
    }

    /// Gain-ratio acceptance: `μ ← μ·max(⅓, 1 - (2ρ - 1)³)`, growth reset.
    pub fn accept(&mut self, rho: f64) {
        let shrink = (1.0 - (2.0 * rho - 1.0).powi(3)).max(1.0 / 3.0);
        self.mu *= shrink;
        self.nu = self.nu0;
        self.consecutive_rejections = 0;
    }

    /// Rejection: `μ ← μ·ν`, `ν ← 2ν`. Errors once ten rejections in a row
    /// pile up past μ = 1e12; no step can succeed from there.
    pub fn reject(&mut self) -> Result<()> {
        self.mu *= self.nu;
        self.nu *= 2.0;
        self.consecutive_rejections += 1;
        if self.consecutive_rejections >= 10 && self.mu > 1e12 {
            return Err(Error::Stalled {
                rejections: self.consecutive_rejections,
                mu: self.mu,
            });
        }
        Ok(())
    }
}

/// Deletes the first pose's six rows and columns, fixing the gauge.
pub fn gauge_reduce(j: &RowDVector<f64>, h: &DMatrix<f64>) -> (RowDVector<f64>, DMatrix<f64>) {
    let dim = j.ncols();
    debug_assert!(dim >= 6 && dim % 6 == 0);
    let red = dim - 6;
    let j_red = j.columns(6, red).into_owned();
    let h_red = h.view((6, 6), (red, red)).into_owned();
    (j_red, h_red)
}

/// Re-embeds a reduced step with `Δ₁ = 0`.
pub fn embed_step(step_red: &DVector<f64>) -> DVector<f64> {
    let mut full = DVector::zeros(step_red.len() + 6);
    full.rows_mut(6, step_red.len()).copy_from(step_red);
    full
}

fn apply_step(poses: &[Pose], step: &DVector<f64>) -> Vec<Pose> {
    poses
        .iter()
        .enumerate()
        .map(|(q, t)| {
            if q == 0 {
                // Gauge pose: bit-identical passthrough, never perturbed.
                t.clone()
            } else {
                t.boxplus(&Perturbation6::from_vector(
                    &step.fixed_rows::<6>(6 * q).into_owned(),
                ))
            }
        })
        .collect()
}

/// Largest per-pose rotation and translation step magnitudes, skipping the
/// fixed first pose.
fn step_extrema(step: &DVector<f64>) -> (f64, f64) {
    let mut max_rot: f64 = 0.0;
    let mut max_trans: f64 = 0.0;
    for q in 1..step.len() / 6 {
        let s = step.fixed_rows::<6>(6 * q);
        max_rot = max_rot.max(s.fixed_rows::<3>(0).norm());
        max_trans = max_trans.max(s.fixed_rows::<3>(3).norm());
    }
    (max_rot, max_trans)
}

/// Minimizes the total cost over all poses but the first.
///
/// Returns the optimized poses and a [`SolveReport`]. The first output pose
/// is bit-identical to the first input pose.
pub fn solve(
    problem: &BAProblem,
    init_poses: &[Pose],
    opts: &SolverOptions,
) -> Result<(Vec<Pose>, SolveReport)> {
    if init_poses.len() != problem.num_poses {
        return Err(Error::InvalidInput(format!(
            "initial pose list has {} entries, problem expects {}",
            init_poses.len(),
            problem.num_poses
        )));
    }
    if problem.num_poses == 0 {
        return Err(Error::InvalidInput("problem has no poses".into()));
    }

    let mut poses: Vec<Pose> = init_poses.to_vec();
    let mut bundle = assemble(problem, &poses)?;
    if !bundle.cost.is_finite() {
        return Err(Error::NumericalFailure(
            "non-finite cost at the initial poses".into(),
        ));
    }
    let mut trace = vec![bundle.cost];
    let mut report = SolveReport {
        iterations: 0,
        cost_trace: Vec::new(),
        final_cost: bundle.cost,
        termination: Termination::MaxIters,
        accepted: 0,
        rejected: 0,
    };

    // One pose: the gauge fixes everything, nothing to optimize.
    if problem.num_poses == 1 {
        report.termination = Termination::StepTol;
        report.cost_trace = trace;
        return Ok((poses, report));
    }

    let mut damping = Damping::new(opts.mu0, opts.nu0);

    while report.iterations < opts.max_iters {
        report.iterations += 1;

        let (j_red, h_red) = gauge_reduce(&bundle.j, &bundle.h);
        if !bundle.j.iter().all(|x| x.is_finite()) || !bundle.h.iter().all(|x| x.is_finite()) {
            return Err(Error::NumericalFailure(format!(
                "non-finite derivatives at iteration {}",
                report.iterations
            )));
        }

        let red = j_red.ncols();
        let mut damped = h_red.clone();
        for i in 0..red {
            damped[(i, i)] += damping.mu;
        }
        let Some(chol) = damped.cholesky() else {
            // Not positive definite at this damping; treat as a rejection.
            report.rejected += 1;
            damping.reject()?;
            continue;
        };
        let step_red = chol.solve(&(-j_red.transpose()));
        let step = embed_step(&step_red);

        let candidate = apply_step(&poses, &step);
        let new_cost = total_cost(problem, &candidate)?;
        let (max_rot, max_trans) = step_extrema(&step);
        let below_tol = max_rot < opts.step_tol_rot && max_trans < opts.step_tol_trans;

        // Predicted decrease 0.5·Δᵀ(μΔ - Jᵀ) is positive for any nonzero step.
        let predicted = 0.5 * (damping.mu * step_red.norm_squared() - (&j_red * &step_red)[0]);
        let rho = (bundle.cost - new_cost) / predicted;

        if new_cost.is_finite() && rho > 0.0 && new_cost < bundle.cost {
            poses = candidate;
            bundle = assemble(problem, &poses)?;
            trace.push(bundle.cost);
            report.accepted += 1;
            damping.accept(rho);
            if below_tol {
                report.termination = Termination::StepTol;
                break;
            }
        } else if below_tol && new_cost >= bundle.cost - f64::EPSILON * bundle.cost.abs() {
            // Stationary already: the computed step is under tolerance and
            // offers no decrease. Stop without applying it.
            report.termination = Termination::StepTol;
            break;
        } else {
            report.rejected += 1;
            damping.reject()?;
        }
    }

    report.final_cost = *trace.last().unwrap();
    report.cost_trace = trace;
    Ok((poses, report))
}
