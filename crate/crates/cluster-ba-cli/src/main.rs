//! `cluster-ba`: simulate, solve, and evaluate lidar bundle adjustment runs.
//!
//! Exit codes: 0 success, 1 input error, 2 non-convergence.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cluster_ba::voxel::VoxelParams;
use cluster_ba::{Error, Result};
use cluster_ba_cli::commands::bench::{cmd_bench, BenchArgs, BenchAxis};
use cluster_ba_cli::commands::cells::{cmd_cells, CellsArgs};
use cluster_ba_cli::commands::nees::{cmd_nees, default_sigma_grid, NeesArgs};
use cluster_ba_cli::commands::simulate::{cmd_simulate, SimulateArgs};
use cluster_ba_cli::commands::solve::{cmd_solve, AssocMode, SolveArgs, SolveInput};
use cluster_ba_cli::commands::parse_list;
use cluster_ba_cli::presets::{Preset, SceneOverrides};
use cluster_ba_cli::{exit_code_for, resolve_threads, EXIT_INPUT, EXIT_NO_CONVERGENCE, EXIT_OK};

#[derive(Parser)]
#[command(name = "cluster-ba", version, about = "Bundle adjustment on lidar point clouds")]
struct Cli {
    /// Worker thread cap (default: CLUSTER_BA_THREADS env var, then all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct SizeOverrides {
    /// Override the preset's pose count
    #[arg(long)]
    poses_count: Option<usize>,
    /// Override the preset's feature count
    #[arg(long)]
    features_count: Option<usize>,
    /// Override the preset's points per observation
    #[arg(long)]
    points_count: Option<usize>,
}

impl SizeOverrides {
    fn into_overrides(self) -> SceneOverrides {
        SceneOverrides {
            poses: self.poses_count,
            features: self.features_count,
            points: self.points_count,
        }
    }
}

#[derive(Args)]
struct VoxelFlags {
    /// Root voxel edge length in meters
    #[arg(long, default_value_t = 1.0)]
    voxel_size: f64,
    /// Maximum octree subdivision layers below the root
    #[arg(long, default_value_t = 3)]
    max_layer: usize,
    /// Minimum points for a voxel to be tested
    #[arg(long, default_value_t = 20)]
    min_points: usize,
    /// Eigenvalue-ratio threshold of the plane test
    #[arg(long, default_value_t = 1.0 / 25.0)]
    gamma: f64,
    /// Also accept edge features
    #[arg(long, default_value_t = false)]
    edges: bool,
}

impl VoxelFlags {
    fn into_params(self) -> VoxelParams {
        VoxelParams {
            root_size: self.voxel_size,
            max_layer: self.max_layer,
            min_points: self.min_points,
            gamma: self.gamma,
            detect_edges: self.edges,
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic scene and write it as text files
    Simulate {
        /// Scene preset: room-v1, virtual-nominal, or desk
        #[arg(long)]
        preset: Preset,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Per-axis measurement noise in meters (default: preset's)
        #[arg(long)]
        sigma_p: Option<f64>,
        #[command(flatten)]
        sizes: SizeOverrides,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
    },
    /// Optimize a trajectory against a scene or raw files
    Solve {
        /// Regenerate this preset in memory instead of reading files
        #[arg(long, conflicts_with_all = ["scene", "poses", "scans"])]
        preset: Option<Preset>,
        /// Per-axis measurement noise for --preset (default: preset's)
        #[arg(long)]
        sigma_p: Option<f64>,
        #[command(flatten)]
        sizes: SizeOverrides,
        /// Scene directory written by `simulate`
        #[arg(long, conflicts_with_all = ["poses", "scans"])]
        scene: Option<PathBuf>,
        /// Initial trajectory file (with --scans)
        #[arg(long, requires = "scans")]
        poses: Option<PathBuf>,
        /// Scan files, one per pose, in pose order (with --poses)
        #[arg(long, num_args = 1.., requires = "poses")]
        scans: Vec<PathBuf>,
        /// Association file for --assoc gt with raw files
        #[arg(long)]
        association: Option<PathBuf>,
        /// Ground-truth trajectory for error metrics with raw files
        #[arg(long)]
        gt_poses: Option<PathBuf>,
        /// Association mode: gt or voxel
        #[arg(long, default_value = "gt")]
        assoc: AssocMode,
        #[command(flatten)]
        voxel: VoxelFlags,
        /// Initial-guess rotation perturbation in degrees
        #[arg(long, default_value_t = 0.0)]
        perturb_rot_deg: f64,
        /// Initial-guess translation perturbation in meters
        #[arg(long, default_value_t = 0.0)]
        perturb_trans: f64,
        /// Seed for the perturbation draw (default: seed + 2)
        #[arg(long)]
        perturb_seed: Option<u64>,
        #[arg(long, default_value_t = 50)]
        max_iters: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory for solved_poses.txt and report.txt
        #[arg(long)]
        out: PathBuf,
    },
    /// Monte Carlo NEES consistency sweep over noise levels
    Nees {
        /// Scene preset (default: desk)
        #[arg(long, default_value = "desk")]
        preset: Preset,
        /// Monte Carlo runs per sigma
        #[arg(long, default_value_t = 30)]
        runs: usize,
        /// Comma-separated sigma list in meters (default: 0.05..1.00 step 0.05)
        #[arg(long)]
        sigmas: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        sizes: SizeOverrides,
        /// Output CSV file
        #[arg(long)]
        out: PathBuf,
    },
    /// Wall-time scaling sweep along one problem-size axis
    Bench {
        /// Axis to sweep: poses, features, or points
        #[arg(long)]
        axis: BenchAxis,
        /// Comma-separated axis values (default: 10,20,40,80,160)
        #[arg(long)]
        values: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Per-axis measurement noise in meters
        #[arg(long, default_value_t = 0.05)]
        sigma_p: f64,
        /// Timing repetitions per phase (median reported)
        #[arg(long, default_value_t = 7)]
        reps: usize,
        /// Output CSV file
        #[arg(long)]
        out: PathBuf,
    },
    /// Count occupied map cells for a trajectory + scans
    OccupiedCells {
        /// Scene directory written by `simulate`
        #[arg(long, conflicts_with = "scans")]
        scene: Option<PathBuf>,
        /// Scan files, one per pose, in pose order
        #[arg(long, num_args = 1..)]
        scans: Vec<PathBuf>,
        /// Trajectory to register with (default: the scene's ground truth)
        #[arg(long)]
        poses: Option<PathBuf>,
        /// Cell edge length in meters
        #[arg(long, default_value_t = 0.1)]
        cell: f64,
    },
}

fn run(cmd: Cmd) -> Result<i32> {
    match cmd {
        Cmd::Simulate {
            preset,
            seed,
            sigma_p,
            sizes,
            out,
        } => {
            cmd_simulate(&SimulateArgs {
                preset,
                seed,
                sigma_p,
                overrides: sizes.into_overrides(),
                out,
            })?;
            Ok(EXIT_OK)
        }
        Cmd::Solve {
            preset,
            sigma_p,
            sizes,
            scene,
            poses,
            scans,
            association,
            gt_poses,
            assoc,
            voxel,
            perturb_rot_deg,
            perturb_trans,
            perturb_seed,
            max_iters,
            seed,
            out,
        } => {
            let input = match (preset, scene, poses) {
                (Some(p), None, None) => SolveInput::Preset {
                    preset: p,
                    sigma_p,
                    overrides: sizes.into_overrides(),
                },
                (None, Some(dir), None) => SolveInput::SceneDir(dir),
                (None, None, Some(poses)) => SolveInput::Files {
                    poses,
                    scans,
                    association,
                    gt_poses,
                    sigma_p: sigma_p.unwrap_or(0.0),
                },
                _ => {
                    return Err(Error::InvalidInput(
                        "give exactly one of --preset, --scene, or --poses/--scans".into(),
                    ))
                }
            };
            let outcome = cmd_solve(&SolveArgs {
                input,
                assoc,
                voxel: voxel.into_params(),
                perturb_rot_deg,
                perturb_trans,
                perturb_seed,
                max_iters,
                seed,
                out,
            })?;
            if outcome.converged {
                Ok(EXIT_OK)
            } else {
                eprintln!("solve: iteration cap reached before the step tolerance");
                Ok(EXIT_NO_CONVERGENCE)
            }
        }
        Cmd::Nees {
            preset,
            runs,
            sigmas,
            seed,
            sizes,
            out,
        } => {
            let sigmas = match sigmas {
                Some(s) => parse_list::<f64>(&s, "sigma")?,
                None => default_sigma_grid(),
            };
            cmd_nees(&NeesArgs {
                preset,
                runs,
                sigmas,
                seed,
                overrides: sizes.into_overrides(),
                out,
            })?;
            Ok(EXIT_OK)
        }
        Cmd::Bench {
            axis,
            values,
            seed,
            sigma_p,
            reps,
            out,
        } => {
            let values = match values {
                Some(v) => parse_list::<usize>(&v, "axis")?,
                None => vec![10, 20, 40, 80, 160],
            };
            cmd_bench(&BenchArgs {
                axis,
                values,
                seed,
                sigma_p,
                reps,
                out,
            })?;
            Ok(EXIT_OK)
        }
        Cmd::OccupiedCells {
            scene,
            scans,
            poses,
            cell,
        } => {
            let count = cmd_cells(&CellsArgs {
                scene,
                scans,
                poses,
                cell,
            })?;
            println!("{count}");
            Ok(EXIT_OK)
        }
    }
}

fn main() -> ExitCode {
    // Usage errors are input errors (exit 1); clap's default exit code of 2
    // would collide with the non-convergence code.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let help = matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            );
            let _ = e.print();
            return ExitCode::from(if help { EXIT_OK } else { EXIT_INPUT } as u8);
        }
    };
    let threads = resolve_threads(cli.threads);
    if threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("cluster-ba: cannot configure {threads} threads: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli.cmd) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("cluster-ba: {e}");
            ExitCode::from(exit_code_for(&e) as u8)
        }
    }
}
