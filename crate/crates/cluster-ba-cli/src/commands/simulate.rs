//! `simulate`: generate a synthetic scene and write it out as text files.

use std::path::PathBuf;

use cluster_ba::io::{write_association, write_poses, write_scan};
use cluster_ba::problem::FeatureKind;
use cluster_ba::sim::{add_noise, Scene, RNG_NAME};
use cluster_ba::Result;

use crate::presets::{build_scene, Preset, SceneOverrides};
use crate::report::{fmt_f64, write_manifest, ARTIFACT_VERSION};

use super::{ensure_out_dir, scan_file_name};

#[derive(Debug, Clone)]
pub struct SimulateArgs {
    pub preset: Preset,
    pub seed: u64,
    /// Measurement noise; `None` uses the preset default.
    pub sigma_p: Option<f64>,
    pub overrides: SceneOverrides,
    pub out: PathBuf,
}

/// Noise draws use their own stream so scene geometry is identical across
/// noise levels at a fixed seed.
pub fn noise_seed(seed: u64) -> u64 {
    seed.wrapping_add(1)
}

/// Generates the preset scene, applies noise, and returns it (shared with
/// `solve --preset`, which skips the files).
pub fn build_noisy_scene(
    preset: Preset,
    seed: u64,
    sigma_p: Option<f64>,
    overrides: SceneOverrides,
) -> Result<Scene> {
    let sigma = sigma_p.unwrap_or_else(|| preset.default_sigma_p());
    let scene = build_scene(preset, seed, overrides)?;
    add_noise(&scene, sigma, noise_seed(seed))
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let scene = build_noisy_scene(args.preset, args.seed, args.sigma_p, args.overrides)?;
    ensure_out_dir(&args.out)?;

    for (i, scan) in scene.scans.iter().enumerate() {
        write_scan(&args.out.join(scan_file_name(i + 1)), scan)?;
    }
    write_poses(&args.out.join("gt_poses.txt"), &scene.gt_poses)?;
    write_association(&args.out.join("association.txt"), &scene.gt_association)?;

    let kinds: String = scene
        .feature_defs
        .iter()
        .map(|d| match d.kind {
            FeatureKind::Plane => 'p',
            FeatureKind::Edge => 'e',
        })
        .collect();
    let pairs = vec![
        ("artifact_version".into(), ARTIFACT_VERSION.to_string()),
        ("preset".into(), args.preset.name().to_string()),
        ("seed".into(), args.seed.to_string()),
        ("sigma_p".into(), fmt_f64(scene.sigma_p)),
        ("noise_seed".into(), noise_seed(args.seed).to_string()),
        ("rng".into(), RNG_NAME.to_string()),
        ("num_scans".into(), scene.scans.len().to_string()),
        ("num_features".into(), scene.feature_defs.len().to_string()),
        ("feature_kinds".into(), kinds),
        ("points_total".into(), scene.total_points().to_string()),
        ("dropped_rays".into(), scene.dropped_rays.to_string()),
        ("scan_file_format".into(), "scan_%04d.txt".into()),
    ];
    write_manifest(&args.out.join("manifest.txt"), &pairs)
}
