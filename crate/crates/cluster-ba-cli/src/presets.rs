//! Named scene presets.

use std::str::FromStr;

use cluster_ba::sim::{gen_random_planes_scene, gen_room_scene, RoomParams, Scene};
use cluster_ba::{Error, Result};

/// Benchmark scenes exposed on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Rectangular room swept by a spinning scanner from 100 poses.
    RoomV1,
    /// 40 plane patches, 40 poses, 40 points per observation.
    VirtualNominal,
    /// Small consistency-study scene: 15 features, 20 poses, 50 points.
    Desk,
}

impl Preset {
    pub fn name(&self) -> &'static str {
        match self {
            Preset::RoomV1 => "room-v1",
            Preset::VirtualNominal => "virtual-nominal",
            Preset::Desk => "desk",
        }
    }

    /// Measurement noise the preset is normally run with.
    pub fn default_sigma_p(&self) -> f64 {
        match self {
            Preset::RoomV1 => 0.02,
            Preset::VirtualNominal => 0.05,
            Preset::Desk => 0.05,
        }
    }
}

impl FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "room-v1" => Ok(Preset::RoomV1),
            "virtual-nominal" => Ok(Preset::VirtualNominal),
            "desk" => Ok(Preset::Desk),
            other => Err(Error::InvalidInput(format!(
                "unknown preset {other:?}; expected room-v1, virtual-nominal, or desk"
            ))),
        }
    }
}

/// Optional size overrides; fields a preset cannot honor are rejected.
#[derive(Debug, Clone, Copy, Default)]
pub struct SceneOverrides {
    pub poses: Option<usize>,
    pub features: Option<usize>,
    pub points: Option<usize>,
}

/// Generates the noiseless preset scene; noise is applied separately.
pub fn build_scene(preset: Preset, seed: u64, ov: SceneOverrides) -> Result<Scene> {
    match preset {
        Preset::RoomV1 => {
            if ov.features.is_some() || ov.points.is_some() {
                return Err(Error::InvalidInput(
                    "room-v1 geometry fixes feature and point counts; only --poses applies".into(),
                ));
            }
            let params = RoomParams {
                num_poses: ov.poses.unwrap_or(100),
                ..RoomParams::default()
            };
            gen_room_scene(&params, seed)
        }
        Preset::VirtualNominal => gen_random_planes_scene(
            ov.features.unwrap_or(40),
            ov.poses.unwrap_or(40),
            ov.points.unwrap_or(40),
            seed,
        ),
        Preset::Desk => gen_random_planes_scene(
            ov.features.unwrap_or(15),
            ov.poses.unwrap_or(20),
            ov.points.unwrap_or(50),
            seed,
        ),
    }
}
