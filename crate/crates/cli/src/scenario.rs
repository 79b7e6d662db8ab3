//! Scenario files for `simulate` and `sweep`.
//!
//! ```toml
//! seed = 1
//! pixel_noise = 0.0
//!
//! [noise]
//! multiplier = 1.0
//!
//! [extrinsics]
//! theta_deg = [2.0, -3.0, 90.0]
//! t = [0.0, -0.17, 0.19]
//!
//! [[frames]]
//! distance = 1.5
//! azimuth_deg = 80.0
//! yaw_deg = 20.0
//! ```
//!
//! `[board]`, `[sensor]` and `[panorama]` take the same keys as the
//! pipeline config.

use ilcc_core::config::{ConfigFile, SensorSection};
use ilcc_core::geometry::Pose;
use ilcc_core::simulator::{BoardPlacement, NoiseModel, Primitive, ScenarioSpec};
use ilcc_core::{BoardSpec, Config, Error, PanoramaSpec, Result};
use nalgebra::Vector3;
use serde::Deserialize;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlacementSection {
    pub distance: f64,
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
    pub roll_deg: f64,
    pub yaw_deg: f64,
    pub pitch_deg: f64,
}

impl Default for PlacementSection {
    fn default() -> Self {
        let p = BoardPlacement::default();
        Self {
            distance: p.distance,
            azimuth_deg: p.azimuth.to_degrees(),
            elevation_deg: p.elevation.to_degrees(),
            roll_deg: p.roll.to_degrees(),
            yaw_deg: p.yaw.to_degrees(),
            pitch_deg: p.pitch.to_degrees(),
        }
    }
}

impl PlacementSection {
    pub fn to_placement(&self) -> BoardPlacement {
        BoardPlacement {
            distance: self.distance,
            azimuth: self.azimuth_deg.to_radians(),
            elevation: self.elevation_deg.to_radians(),
            roll: self.roll_deg.to_radians(),
            yaw: self.yaw_deg.to_radians(),
            pitch: self.pitch_deg.to_radians(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntensitySection {
    pub low: f64,
    pub high: f64,
    pub jitter: f64,
}

impl Default for IntensitySection {
    fn default() -> Self {
        Self {
            low: 20.0,
            high: 100.0,
            jitter: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ExtrinsicsSection {
    pub theta_deg: [f64; 3],
    pub t: [f64; 3],
}

impl ExtrinsicsSection {
    pub fn to_pose(&self) -> Pose {
        Pose::new(
            Vector3::from(self.theta_deg.map(f64::to_radians)),
            Vector3::from(self.t),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioFile {
    pub seed: u64,
    /// Standard deviation of Gaussian noise on image corners, pixels.
    pub pixel_noise: f64,
    pub board: BoardSpec,
    pub sensor: SensorSection,
    pub panorama: PanoramaSpec,
    pub noise: NoiseModel,
    pub intensity: IntensitySection,
    pub extrinsics: ExtrinsicsSection,
    pub frames: Vec<PlacementSection>,
    pub background: Vec<Primitive>,
}

/// A parsed scenario: one spec per frame plus the pipeline config that
/// matches its board, sensor and panorama.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub frames: Vec<ScenarioSpec>,
    pub extrinsics: Pose,
    pub pixel_noise: f64,
    pub config: Config,
    /// File form of `config`, written next to simulated frames.
    pub config_file: ConfigFile,
    pub seed: u64,
}

impl Scenario {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let file: ScenarioFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let config_file = ConfigFile {
            seed: file.seed,
            board: file.board,
            sensor: file.sensor.clone(),
            panorama: file.panorama,
            ..ConfigFile::default()
        };
        let config = config_file.clone().into_config()?;
        if !(file.pixel_noise >= 0.0) {
            return Err(Error::Config("pixel_noise must be non-negative".into()));
        }
        let placements = if file.frames.is_empty() {
            vec![PlacementSection::default()]
        } else {
            file.frames.clone()
        };
        let frames = placements
            .iter()
            .map(|p| {
                let spec = ScenarioSpec {
                    placement: p.to_placement(),
                    board: config.board,
                    sensor: config.sensor.clone(),
                    noise: file.noise,
                    intensity_low: file.intensity.low,
                    intensity_high: file.intensity.high,
                    intensity_jitter: file.intensity.jitter,
                    background: file.background.clone(),
                    seed: file.seed,
                };
                spec.validate()?;
                Ok(spec)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            frames,
            extrinsics: file.extrinsics.to_pose(),
            pixel_noise: file.pixel_noise,
            config,
            config_file,
            seed: file.seed,
        })
    }
}
