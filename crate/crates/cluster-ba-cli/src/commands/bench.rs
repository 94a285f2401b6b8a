//! `bench`: wall-time scaling along one problem-size axis.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use cluster_ba::metrics::trajectory_rmse;
use cluster_ba::sim::{
    add_noise, gen_random_planes_scene, perturb_trajectory, scene_to_problem, NOMINAL_PERTURB_ROT,
    NOMINAL_PERTURB_TRANS,
};
use cluster_ba::problem::assemble;
use cluster_ba::solver::{gauge_reduce, solve, SolverOptions};
use cluster_ba::{Error, Result};

use crate::report::fmt_f64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchAxis {
    Poses,
    Features,
    Points,
}

impl std::str::FromStr for BenchAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "poses" => Ok(BenchAxis::Poses),
            "features" => Ok(BenchAxis::Features),
            "points" => Ok(BenchAxis::Points),
            other => Err(Error::InvalidInput(format!(
                "unknown bench axis {other:?}; expected poses, features, or points"
            ))),
        }
    }
}

impl BenchAxis {
    pub fn name(&self) -> &'static str {
        match self {
            BenchAxis::Poses => "poses",
            BenchAxis::Features => "features",
            BenchAxis::Points => "points",
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchArgs {
    pub axis: BenchAxis,
    pub values: Vec<usize>,
    pub seed: u64,
    pub sigma_p: f64,
    /// Timing repetitions per phase; the median is reported.
    pub reps: usize,
    pub out: PathBuf,
}

impl BenchArgs {
    pub fn new(axis: BenchAxis, out: PathBuf) -> Self {
        BenchArgs {
            axis,
            values: vec![10, 20, 40, 80, 160],
            seed: 0,
            sigma_p: 0.05,
            reps: 7,
            out,
        }
    }
}

/// Median wall time of `reps` calls, in seconds.
fn median_time<R>(reps: usize, mut f: impl FnMut() -> R) -> f64 {
    let mut times: Vec<f64> = (0..reps)
        .map(|_| {
            let t = Instant::now();
            std::hint::black_box(f());
            t.elapsed().as_secs_f64()
        })
        .collect();
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    times[times.len() / 2]
}

/// Runs the sweep and returns the CSV text (also written to `args.out`).
pub fn cmd_bench(args: &BenchArgs) -> Result<String> {
    if args.values.is_empty() || args.values.contains(&0) {
        return Err(Error::InvalidInput("bench values must be positive".into()));
    }
    if args.reps == 0 {
        return Err(Error::InvalidInput("reps must be at least 1".into()));
    }
    let base = 40usize;

    let mut csv = String::new();
    writeln!(csv, "# scaling sweep along the {} axis; other sizes fixed at {base}", args.axis.name()).unwrap();
    writeln!(csv, "# build_s: point clustering; deriv_s: one derivative assembly;").unwrap();
    writeln!(csv, "# linsolve_s: one damped Cholesky solve of the reduced system;").unwrap();
    writeln!(csv, "# solve_s/iterations: full optimization from the nominal perturbed guess;").unwrap();
    writeln!(csv, "# RMSE after aligning the estimate gauge to ground truth.").unwrap();
    writeln!(
        csv,
        "{},build_s,deriv_s,linsolve_s,solve_s,iterations,rot_rmse_rad,trans_rmse_m",
        args.axis.name()
    )
    .unwrap();

    for (vi, &v) in args.values.iter().enumerate() {
        let (mf, mp, n) = match args.axis {
            BenchAxis::Poses => (base, v, base),
            BenchAxis::Features => (v, base, base),
            BenchAxis::Points => (base, base, v),
        };
        let seed = args.seed.wrapping_add(vi as u64);
        let scene = gen_random_planes_scene(mf, mp, n, seed)?;
        let noisy = add_noise(&scene, args.sigma_p, seed.wrapping_add(1))?;
        let init = perturb_trajectory(
            &noisy.gt_poses,
            NOMINAL_PERTURB_ROT,
            NOMINAL_PERTURB_TRANS,
            seed.wrapping_add(2),
        );

        let t = Instant::now();
        let (problem, _noises) = scene_to_problem(&noisy)?;
        let build_s = t.elapsed().as_secs_f64();

        let deriv_s = median_time(args.reps, || assemble(&problem, &init).unwrap());

        let bundle = assemble(&problem, &init)?;
        let (j_red, h_red) = gauge_reduce(&bundle.j, &bundle.h);
        let mu = SolverOptions::default().mu0;
        let linsolve_s = median_time(args.reps, || {
            let mut damped = h_red.clone();
            for i in 0..damped.nrows() {
                damped[(i, i)] += mu;
            }
            let chol = damped.cholesky().expect("damped Hessian is positive definite");
            chol.solve(&(-j_red.transpose()))
        });

        let t = Instant::now();
        let (est, report) = solve(&problem, &init, &SolverOptions::default())?;
        let solve_s = t.elapsed().as_secs_f64();
        let rmse = trajectory_rmse(&est, &noisy.gt_poses)?;

        writeln!(
            csv,
            "{v},{},{},{},{},{},{},{}",
            fmt_f64(build_s),
            fmt_f64(deriv_s),
            fmt_f64(linsolve_s),
            fmt_f64(solve_s),
            report.iterations,
            fmt_f64(rmse.rot),
            fmt_f64(rmse.trans)
        )
        .unwrap();
    }

    std::fs::write(&args.out, &csv)
        .map_err(|e| Error::InvalidInput(format!("cannot write {}: {e}", args.out.display())))?;
    Ok(csv)
}
