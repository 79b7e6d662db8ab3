//! Pipeline configuration and its TOML file form.
//!
//! Angles are written in degrees in the file and held in radians at run
//! time. Every key is optional; unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::board_locator::{BoardSpec, DetectionParams, SensorModel};
use crate::error::{Error, Result};
use crate::geometry::PanoramaSpec;
use crate::intensity_fit::FitParams;
use crate::optim::{LmParams, PowellParams};
use crate::segmentation::SegmentationParams;

/// Run-time settings of every pipeline stage.
#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub seed: u64,
    pub board: BoardSpec,
    pub sensor: SensorModel,
    pub segmentation: SegmentationParams,
    pub detection: DetectionParams,
    pub fit: FitParams,
    /// Gray-zone coefficient used when scoring extrinsics.
    pub eps_g_eval: f64,
    pub lm: LmParams,
    pub panorama: PanoramaSpec,
}

impl Default for Config {
    fn default() -> Self {
        ConfigFile::default().into_config().expect("defaults are valid")
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let file: ConfigFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        file.into_config()
    }

    pub fn to_file(&self) -> ConfigFile {
        ConfigFile {
            seed: self.seed,
            board: self.board,
            sensor: SensorSection {
                horizontal_resolution_deg: self.sensor.horizontal_resolution.to_degrees(),
                vertical_resolution_deg: self.sensor.vertical_resolution.to_degrees(),
                ring_elevations_deg: Some(self.sensor.ring_elevations.iter().map(|r| r.to_degrees()).collect()),
                ..SensorSection::default()
            },
            segmentation: SegmentationSection {
                gap_dist: self.segmentation.gap_dist,
                gap_angle_deg: self.segmentation.gap_angle.to_degrees(),
                merge_dist: self.segmentation.merge_dist,
            },
            detection: DetectionSection {
                eps_theo: self.detection.eps_theo,
                lambda3_max: self.detection.lambda3_max,
                box_min: self.detection.box_min,
                box_max: self.detection.box_max,
                uniformity_min: self.detection.uniformity_min,
                ransac_tol: self.detection.ransac_tol,
                ransac_iterations: self.detection.ransac_iterations,
            },
            fit: FitSection {
                eps_g_corners: self.fit.eps_g,
                eps_g_eval: self.eps_g_eval,
                n_bins: self.fit.n_bins,
                cost_ceiling: self.fit.cost_ceiling,
                powell_max_iter: self.fit.powell.max_iter,
                powell_ftol: self.fit.powell.ftol,
            },
            calibration: CalibrationSection {
                initializer: Initializer::MultiStart,
                lm_max_iter: self.lm.max_iter,
            },
            panorama: self.panorama,
        }
    }
}

/// Pose initialization strategy. Only the multi-start search exists.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Initializer {
    #[default]
    MultiStart,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConfigFile {
    pub seed: u64,
    pub board: BoardSpec,
    pub sensor: SensorSection,
    pub segmentation: SegmentationSection,
    pub detection: DetectionSection,
    pub fit: FitSection,
    pub calibration: CalibrationSection,
    pub panorama: PanoramaSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensorSection {
    pub horizontal_resolution_deg: f64,
    pub vertical_resolution_deg: f64,
    /// Explicit ring elevations; overrides the uniform layout below.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ring_elevations_deg: Option<Vec<f64>>,
    pub lowest_ring_deg: f64,
    pub highest_ring_deg: f64,
    pub rings: usize,
}

impl Default for SensorSection {
    fn default() -> Self {
        Self {
            horizontal_resolution_deg: 0.16,
            vertical_resolution_deg: 1.33,
            ring_elevations_deg: None,
            lowest_ring_deg: -30.67,
            highest_ring_deg: 10.67,
            rings: 32,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegmentationSection {
    pub gap_dist: f64,
    pub gap_angle_deg: f64,
    pub merge_dist: f64,
}

impl Default for SegmentationSection {
    fn default() -> Self {
        Self {
            gap_dist: 0.15,
            gap_angle_deg: 30.0,
            merge_dist: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectionSection {
    pub eps_theo: f64,
    pub lambda3_max: f64,
    pub box_min: f64,
    pub box_max: f64,
    pub uniformity_min: f64,
    pub ransac_tol: f64,
    pub ransac_iterations: usize,
}

impl Default for DetectionSection {
    fn default() -> Self {
        let d = DetectionParams::default();
        Self {
            eps_theo: d.eps_theo,
            lambda3_max: d.lambda3_max,
            box_min: d.box_min,
            box_max: d.box_max,
            uniformity_min: d.uniformity_min,
            ransac_tol: d.ransac_tol,
            ransac_iterations: d.ransac_iterations,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitSection {
    pub eps_g_corners: f64,
    pub eps_g_eval: f64,
    pub n_bins: usize,
    pub cost_ceiling: f64,
    pub powell_max_iter: usize,
    pub powell_ftol: f64,
}

impl Default for FitSection {
    fn default() -> Self {
        let f = FitParams::default();
        Self {
            eps_g_corners: f.eps_g,
            eps_g_eval: 4.0,
            n_bins: f.n_bins,
            cost_ceiling: f.cost_ceiling,
            powell_max_iter: f.powell.max_iter,
            powell_ftol: f.powell.ftol,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationSection {
    pub initializer: Initializer,
    pub lm_max_iter: usize,
}

impl Default for CalibrationSection {
    fn default() -> Self {
        Self {
            initializer: Initializer::MultiStart,
            lm_max_iter: LmParams::default().max_iter,
        }
    }
}

fn check(ok: bool, what: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Config(what.to_string()))
    }
}

impl ConfigFile {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn into_config(self) -> Result<Config> {
        self.board.validate()?;
        self.panorama.validate().map_err(|e| Error::Config(e.to_string()))?;

        let s = &self.sensor;
        check(
            s.horizontal_resolution_deg > 0.0 && s.horizontal_resolution_deg < 10.0,
            "sensor.horizontal_resolution_deg must be in (0, 10)",
        )?;
        check(
            s.vertical_resolution_deg > 0.0 && s.vertical_resolution_deg < 30.0,
            "sensor.vertical_resolution_deg must be in (0, 30)",
        )?;
        let sensor = match &s.ring_elevations_deg {
            Some(rings) => SensorModel {
                horizontal_resolution: s.horizontal_resolution_deg.to_radians(),
                vertical_resolution: s.vertical_resolution_deg.to_radians(),
                ring_elevations: rings.iter().map(|r| r.to_radians()).collect(),
            },
            None => SensorModel::uniform(
                s.horizontal_resolution_deg.to_radians(),
                s.vertical_resolution_deg.to_radians(),
                s.lowest_ring_deg,
                s.highest_ring_deg,
                s.rings,
            ),
        };
        sensor.validate()?;
        check(
            sensor.ring_elevations.iter().all(|e| e.abs() < std::f64::consts::FRAC_PI_2),
            "ring elevations must lie strictly between -90 and 90 degrees",
        )?;

        let g = &self.segmentation;
        check(g.gap_dist > 0.0, "segmentation.gap_dist must be positive")?;
        check(
            g.gap_angle_deg > 0.0 && g.gap_angle_deg <= 180.0,
            "segmentation.gap_angle_deg must be in (0, 180]",
        )?;
        check(g.merge_dist > 0.0, "segmentation.merge_dist must be positive")?;

        let d = &self.detection;
        check(d.eps_theo > 0.0 && d.eps_theo <= 1.0, "detection.eps_theo must be in (0, 1]")?;
        check(
            d.lambda3_max > 0.0 && d.lambda3_max < 1.0 / 3.0,
            "detection.lambda3_max must be in (0, 1/3)",
        )?;
        check(
            d.box_min > 0.0 && d.box_min <= d.box_max,
            "detection.box_min must be positive and not above box_max",
        )?;
        check(
            (0.0..=1.0).contains(&d.uniformity_min),
            "detection.uniformity_min must be in [0, 1]",
        )?;
        check(d.ransac_tol > 0.0, "detection.ransac_tol must be positive")?;
        check(d.ransac_iterations > 0, "detection.ransac_iterations must be positive")?;

        let f = &self.fit;
        check(f.eps_g_corners >= 2.0, "fit.eps_g_corners must be at least 2")?;
        check(f.eps_g_eval >= 2.0, "fit.eps_g_eval must be at least 2")?;
        check(f.n_bins >= 2, "fit.n_bins must be at least 2")?;
        check(f.cost_ceiling > 0.0, "fit.cost_ceiling must be positive")?;
        check(f.powell_max_iter > 0, "fit.powell_max_iter must be positive")?;
        check(f.powell_ftol > 0.0, "fit.powell_ftol must be positive")?;

        check(self.calibration.lm_max_iter > 0, "calibration.lm_max_iter must be positive")?;

        Ok(Config {
            seed: self.seed,
            board: self.board,
            sensor,
            segmentation: SegmentationParams {
                gap_dist: g.gap_dist,
                gap_angle: g.gap_angle_deg.to_radians(),
                merge_dist: g.merge_dist,
            },
            detection: DetectionParams {
                eps_theo: d.eps_theo,
                lambda3_max: d.lambda3_max,
                box_min: d.box_min,
                box_max: d.box_max,
                uniformity_min: d.uniformity_min,
                ransac_tol: d.ransac_tol,
                ransac_iterations: d.ransac_iterations,
                seed: self.seed,
            },
            fit: FitParams {
                eps_g: f.eps_g_corners,
                n_bins: f.n_bins,
                cost_ceiling: f.cost_ceiling,
                powell: PowellParams {
                    max_iter: f.powell_max_iter,
                    ftol: f.powell_ftol,
                    ..PowellParams::default()
                },
            },
            eps_g_eval: f.eps_g_eval,
            lm: LmParams {
                max_iter: self.calibration.lm_max_iter,
                ..LmParams::default()
            },
            panorama: self.panorama,
        })
    }
}
