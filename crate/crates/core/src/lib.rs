//! LiDAR–camera extrinsic calibration from chessboard reflectance.
//!
//! The pipeline runs per frame: [`segmentation`] splits the scan into
//! candidate objects, [`board_locator`] picks the chessboard, and
//! [`intensity_fit`] estimates its interior corners. [`calibration`] then
//! solves for the pose that maps LiDAR corners onto their panoramic image
//! counterparts. [`simulator`] produces synthetic scans with ground truth.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod board_locator;
pub mod calibration;
pub mod cloud;
pub mod config;
pub mod error;
pub mod geometry;
pub mod intensity_fit;
pub mod optim;
pub mod segmentation;
pub mod simulator;

pub use board_locator::{BoardSpec, DetectionParams, PlaneTransform, SensorModel, WidthAxis};
pub use cloud::PointCloud;
pub use config::Config;
pub use error::{Error, Result};
pub use geometry::{LidarPoint, PanoramaSpec, Pixel, Pose, SphericalAngles};
pub use intensity_fit::{CellColor, FitParams, GrayZone};
pub use segmentation::{Segment, SegmentationParams};
