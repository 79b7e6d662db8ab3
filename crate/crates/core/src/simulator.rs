//! Synthetic multi-beam scans of a posed chessboard with ground truth.
//!
//! Rays are cast at every ring elevation and azimuth step. A return keeps
//! the nearest hit among the board and optional background walls and
//! poles. Board returns get a two-level intensity from the cell they hit,
//! then Gaussian noise expressed in the board frame.

use nalgebra::{Rotation3, Unit, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::board_locator::{canonicalize, BoardSpec, SensorModel};
use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::geometry::{project_point, LidarPoint, PanoramaSpec, Pixel, Pose};
use crate::intensity_fit::{estimate_corners, CellColor, ChessboardModel, FitParams, PatternHit};

/// Per-axis Gaussian noise in the board frame, scaled by `multiplier`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseModel {
    /// Standard deviations along the board's x, y and normal, meters.
    pub sigma: [f64; 3],
    pub multiplier: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            sigma: [0.0016, 0.0016, 0.01],
            multiplier: 1.0,
        }
    }
}

impl NoiseModel {
    pub fn noiseless() -> Self {
        Self {
            multiplier: 0.0,
            ..Self::default()
        }
    }

    fn scaled(&self) -> [f64; 3] {
        self.sigma.map(|s| s * self.multiplier)
    }
}

/// Where the board sits relative to the LiDAR. Angles in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoardPlacement {
    /// Range of the board centre, meters.
    pub distance: f64,
    /// Direction of the board centre.
    pub azimuth: f64,
    pub elevation: f64,
    /// Rotation about the board normal.
    pub roll: f64,
    /// Rotation about the board's vertical axis.
    pub yaw: f64,
    /// Rotation about the board's horizontal axis.
    pub pitch: f64,
}

impl Default for BoardPlacement {
    fn default() -> Self {
        Self {
            distance: 1.0,
            azimuth: 90f64.to_radians(),
            elevation: -2f64.to_radians(),
            roll: 0.0,
            yaw: 20f64.to_radians(),
            pitch: 0.0,
        }
    }
}

/// Orthonormal board frame; `x` runs along the long side, `z` is the normal
/// facing the LiDAR.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoardFrame {
    pub center: Vector3<f64>,
    pub x: Vector3<f64>,
    pub y: Vector3<f64>,
    pub z: Vector3<f64>,
}

impl BoardFrame {
    pub fn to_world(&self, local: &Vector3<f64>) -> Vector3<f64> {
        self.center + self.x * local.x + self.y * local.y + self.z * local.z
    }

    pub fn to_local(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let d = p - self.center;
        Vector3::new(d.dot(&self.x), d.dot(&self.y), d.dot(&self.z))
    }
}

impl BoardPlacement {
    pub fn validate(&self) -> Result<()> {
        if !(self.distance > 0.0 && self.distance.is_finite()) {
            return Err(Error::NonPositiveRange(self.distance));
        }
        Ok(())
    }

    /// The board axes follow the same sign rule as plane canonicalization:
    /// the long axis never points against the LiDAR x axis.
    pub fn frame(&self) -> BoardFrame {
        let (ce, se) = (self.elevation.cos(), self.elevation.sin());
        let center = Vector3::new(ce * self.azimuth.cos(), ce * self.azimuth.sin(), se) * self.distance;
        let forward = center.normalize();
        let mut right = forward.cross(&Vector3::z());
        if right.norm() < 1e-9 {
            right = Vector3::x();
        }
        let right = right.normalize();
        let toward = -forward;
        let up = toward.cross(&right);

        let tilt = Rotation3::from_axis_angle(&Unit::new_normalize(up), self.yaw)
            * Rotation3::from_axis_angle(&Unit::new_normalize(right), self.pitch);
        let (r, u, z) = (tilt * right, tilt * up, tilt * toward);
        let (s, c) = self.roll.sin_cos();
        let mut x = r * c + u * s;
        let mut y = -r * s + u * c;
        if x.x < 0.0 {
            x = -x;
            y = -y;
        }
        BoardFrame { center, x, y, z }
    }
}

/// Background objects that only exist to give the board locator something
/// to reject.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Primitive {
    /// Rectangle with horizontal `width` and vertical `height`.
    Wall {
        center: [f64; 3],
        normal: [f64; 3],
        width: f64,
        height: f64,
        intensity: f64,
    },
    /// Vertical cylinder.
    Pole {
        x: f64,
        y: f64,
        radius: f64,
        z_min: f64,
        z_max: f64,
        intensity: f64,
    },
}

impl Primitive {
    fn intensity(&self) -> f64 {
        match *self {
            Primitive::Wall { intensity, .. } | Primitive::Pole { intensity, .. } => intensity,
        }
    }

    /// Ray parameter of the nearest hit along unit direction `d` from the origin.
    fn intersect(&self, d: &Vector3<f64>) -> Option<f64> {
        match *self {
            Primitive::Wall { center, normal, width, height, .. } => {
                let c = Vector3::from(center);
                let n = Vector3::from(normal).normalize();
                let denom = d.dot(&n);
                if denom.abs() < 1e-12 {
                    return None;
                }
                let s = c.dot(&n) / denom;
                if s <= 0.0 {
                    return None;
                }
                let mut across = n.cross(&Vector3::z());
                if across.norm() < 1e-9 {
                    across = Vector3::x();
                }
                let across = across.normalize();
                let vertical = across.cross(&n);
                let rel = d * s - c;
                (rel.dot(&across).abs() <= width / 2.0 && rel.dot(&vertical).abs() <= height / 2.0).then_some(s)
            }
            Primitive::Pole { x, y, radius, z_min, z_max, .. } => {
                let a = d.x * d.x + d.y * d.y;
                if a < 1e-15 {
                    return None;
                }
                let b = -2.0 * (d.x * x + d.y * y);
                let c = x * x + y * y - radius * radius;
                let disc = b * b - 4.0 * a * c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                [(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)]
                    .into_iter()
                    .filter(|&s| s > 0.0)
                    .find(|&s| (z_min..=z_max).contains(&(d.z * s)))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub placement: BoardPlacement,
    pub board: BoardSpec,
    pub sensor: SensorModel,
    pub noise: NoiseModel,
    pub intensity_low: f64,
    pub intensity_high: f64,
    /// Standard deviation of additive intensity noise.
    pub intensity_jitter: f64,
    pub background: Vec<Primitive>,
    pub seed: u64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            placement: BoardPlacement::default(),
            board: BoardSpec::default(),
            sensor: SensorModel::default(),
            noise: NoiseModel::default(),
            intensity_low: 20.0,
            intensity_high: 100.0,
            intensity_jitter: 0.0,
            background: Vec::new(),
            seed: 0,
        }
    }
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        self.placement.validate()?;
        self.board.validate()?;
        self.sensor.validate()?;
        if !(self.intensity_low < self.intensity_high) {
            return Err(Error::Config(format!(
                "low intensity {} must be below high intensity {}",
                self.intensity_low, self.intensity_high
            )));
        }
        if self.noise.multiplier < 0.0 || self.noise.sigma.iter().any(|s| *s < 0.0) || self.intensity_jitter < 0.0 {
            return Err(Error::Config("noise parameters must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PointLabel {
    Board,
    Background,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Interior corners in counting order, LiDAR frame.
    pub corners: Vec<Vector3<f64>>,
    /// LiDAR-to-camera pose used for image corners, if any.
    pub extrinsics: Option<Pose>,
    pub board_frame: BoardFrame,
    pub labels: Vec<PointLabel>,
    /// Cell color under each board return before noise; `None` for background.
    pub colors: Vec<Option<CellColor>>,
}

impl GroundTruth {
    pub fn board_indices(&self) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, l)| **l == PointLabel::Board)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Corners of `spec` placed by `frame`, in counting order.
pub fn board_corners(spec: &BoardSpec, frame: &BoardFrame) -> Vec<Vector3<f64>> {
    ChessboardModel::new(*spec)
        .interior_corners()
        .iter()
        .map(|c| frame.to_world(&Vector3::new(c.x, c.y, 0.0)))
        .collect()
}

/// Casts one revolution of rays and returns the cloud in acquisition order
/// (azimuth-major) with its ground truth.
pub fn simulate_scan(spec: &ScenarioSpec) -> Result<(PointCloud, GroundTruth)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let frame = spec.placement.frame();
    let model = ChessboardModel::new(spec.board);
    let sigma = spec.noise.scaled();
    let normals: Vec<Option<Normal<f64>>> = sigma.iter().map(|&s| (s > 0.0).then(|| Normal::new(0.0, s).unwrap())).collect();
    let jitter = (spec.intensity_jitter > 0.0).then(|| Normal::new(0.0, spec.intensity_jitter).unwrap());

    let dh = spec.sensor.horizontal_resolution;
    let steps = (std::f64::consts::TAU / dh).round() as usize;
    let phase = rng.random_range(0.0..dh);
    let ring_dirs: Vec<(f64, f64)> = spec.sensor.ring_elevations.iter().map(|e| (e.cos(), e.sin())).collect();
    let plane_offset = frame.center.dot(&frame.z);

    let mut points = Vec::new();
    let mut labels = Vec::new();
    let mut colors = Vec::new();
    for step in 0..steps {
        let az = phase + step as f64 * dh - std::f64::consts::PI;
        let (sa, ca) = az.sin_cos();
        for (ring, &(ce, se)) in ring_dirs.iter().enumerate() {
            let d = Vector3::new(ce * ca, ce * sa, se);

            let mut best: Option<(f64, Option<CellColor>, f64)> = None;
            let denom = d.dot(&frame.z);
            if denom.abs() > 1e-12 {
                let s = plane_offset / denom;
                if s > 0.0 {
                    let local = frame.to_local(&(d * s));
                    if let PatternHit::Inside { color, .. } = model.locate(&Vector2::new(local.x, local.y)) {
                        let level = match color {
                            CellColor::Black => spec.intensity_low,
                            CellColor::White => spec.intensity_high,
                        };
                        best = Some((s, Some(color), level));
                    }
                }
            }
            for prim in &spec.background {
                if let Some(s) = prim.intersect(&d) {
                    if best.is_none_or(|(b, _, _)| s < b) {
                        best = Some((s, None, prim.intensity()));
                    }
                }
            }
            let Some((s, color, level)) = best else { continue };

            let mut noise = [0.0; 3];
            for (k, n) in normals.iter().enumerate() {
                if let Some(n) = n {
                    noise[k] = n.sample(&mut rng);
                }
            }
            let hit = d * s;
            let p = match color {
                Some(_) => hit + frame.x * noise[0] + frame.y * noise[1] + frame.z * noise[2],
                None => hit + Vector3::from(noise),
            };
            let mut intensity = level;
            if let Some(j) = &jitter {
                intensity = (intensity + j.sample(&mut rng)).max(0.0);
            }
            points.push(LidarPoint::new(p.x, p.y, p.z, intensity, ring as u16));
            labels.push(if color.is_some() { PointLabel::Board } else { PointLabel::Background });
            colors.push(color);
        }
    }
    if !labels.contains(&PointLabel::Board) {
        return Err(Error::EmptyScan);
    }
    let truth = GroundTruth {
        corners: board_corners(&spec.board, &frame),
        extrinsics: None,
        board_frame: frame,
        labels,
        colors,
    };
    Ok((PointCloud::new(points, format!("sim-{}", spec.seed)), truth))
}

/// Projects the true corners into the panorama through `extrinsics`, with
/// optional Gaussian pixel noise.
pub fn project_corners(
    corners: &[Vector3<f64>],
    extrinsics: &Pose,
    pano: &PanoramaSpec,
    pixel_noise: f64,
    seed: u64,
) -> Result<Vec<Pixel>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = (pixel_noise > 0.0).then(|| Normal::new(0.0, pixel_noise).unwrap());
    corners
        .iter()
        .map(|c| {
            let mut px = project_point(&extrinsics.transform(c), pano)?;
            if let Some(n) = &noise {
                px.u = (px.u + n.sample(&mut rng)).rem_euclid(pano.w());
                px.v = (px.v + n.sample(&mut rng)).clamp(0.0, pano.h());
            }
            Ok(px)
        })
        .collect()
}

/// One simulated calibration frame: scan, ground truth and image corners.
#[derive(Debug, Clone)]
pub struct SimulatedFrame {
    pub cloud: PointCloud,
    pub truth: GroundTruth,
    pub corners: Vec<Pixel>,
}

/// Scans every spec and projects its corners through `extrinsics`.
///
/// Frame `k` draws its scan from `run_seed(seed, 0, k)` and its pixel
/// noise from `run_seed(seed, 1, k)`; the seeds stored in `specs` are
/// ignored.
pub fn simulate_frames(
    specs: &[ScenarioSpec],
    extrinsics: &Pose,
    pano: &PanoramaSpec,
    pixel_noise: f64,
    seed: u64,
) -> Result<Vec<SimulatedFrame>> {
    specs
        .iter()
        .enumerate()
        .map(|(k, base)| {
            let spec = ScenarioSpec {
                seed: run_seed(seed, 0, k),
                ..base.clone()
            };
            let (cloud, mut truth) = simulate_scan(&spec)?;
            truth.extrinsics = Some(*extrinsics);
            let corners = project_corners(&truth.corners, extrinsics, pano, pixel_noise, run_seed(seed, 1, k))?;
            Ok(SimulatedFrame { cloud, truth, corners })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CornerError {
    /// `sqrt(Σ|p̂ − p|²) / n`, meters.
    pub distance: f64,
    /// `100 · distance / square`, percent.
    pub relative: f64,
    /// `sqrt(Σ|p̂ − p|² / n)`, meters.
    pub rms: f64,
}

pub fn corner_error(estimated: &[Vector3<f64>], truth: &[Vector3<f64>], square: f64) -> Result<CornerError> {
    if estimated.len() != truth.len() || truth.is_empty() {
        return Err(Error::CountMismatch {
            estimated: estimated.len(),
            truth: truth.len(),
        });
    }
    let n = truth.len() as f64;
    let sum_sq: f64 = estimated.iter().zip(truth).map(|(a, b)| (a - b).norm_squared()).sum();
    let distance = sum_sq.sqrt() / n;
    Ok(CornerError {
        distance,
        relative: 100.0 * distance / square,
        rms: (sum_sq / n).sqrt(),
    })
}

/// Corner estimation on the labeled board returns of a simulated scan.
///
/// Detection is bypassed: the board points come from the ground-truth
/// labels and are mapped onto their principal plane directly.
pub fn estimate_from_truth(cloud: &PointCloud, truth: &GroundTruth, spec: &BoardSpec, fit: &FitParams) -> Result<Vec<Vector3<f64>>> {
    let idx = truth.board_indices();
    let pts = cloud.positions(&idx);
    let intensities: Vec<f64> = idx.iter().map(|&i| cloud.points[i].intensity).collect();
    let (tf, canonical) = canonicalize(&pts, &Vector3::zeros())?;
    Ok(estimate_corners(&canonical, &intensities, &tf, spec, fit)?.corners)
}

/// Quantity varied across sweep conditions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    /// Noise multiplier `m`.
    Noise,
    /// Board distance, meters.
    Distance,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Noise => "noise",
            SweepAxis::Distance => "distance",
        }
    }

    pub fn apply(self, base: &ScenarioSpec, value: f64) -> ScenarioSpec {
        let mut s = base.clone();
        match self {
            SweepAxis::Noise => s.noise.multiplier = value,
            SweepAxis::Distance => s.placement.distance = value,
        }
        s
    }
}

/// Seed of one sweep run, independent of execution order.
pub fn run_seed(seed: u64, condition: usize, repeat: usize) -> u64 {
    let mut z = seed
        ^ (condition as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (repeat as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub axis: SweepAxis,
    pub value: f64,
    pub repeats: usize,
    pub failures: usize,
    pub mean_distance: f64,
    pub std_distance: f64,
    pub mean_relative: f64,
    pub std_relative: f64,
    pub mean_rms: f64,
    /// Per-run errors of the successful runs, in repeat order.
    #[serde(skip)]
    pub runs: Vec<CornerError>,
}

fn mean_std(v: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = v.clone().count();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = v.clone().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = v.map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// One simulation plus corner estimation per (condition, repeat).
pub fn sweep(
    base: &ScenarioSpec,
    axis: SweepAxis,
    values: &[f64],
    repeats: usize,
    seed: u64,
    fit: &FitParams,
) -> Result<Vec<SweepRow>> {
    if repeats == 0 {
        return Err(Error::InvalidInput("repeats must be at least 1".into()));
    }
    let jobs: Vec<(usize, usize)> = (0..values.len()).flat_map(|c| (0..repeats).map(move |r| (c, r))).collect();
    let results: Vec<Result<CornerError>> = jobs
        .par_iter()
        .map(|&(c, r)| {
            let mut spec = axis.apply(base, values[c]);
            spec.seed = run_seed(seed, c, r);
            let (cloud, truth) = simulate_scan(&spec)?;
            let est = estimate_from_truth(&cloud, &truth, &spec.board, fit)?;
            corner_error(&est, &truth.corners, spec.board.square)
        })
        .collect();

    let mut rows = Vec::with_capacity(values.len());
    for (c, &value) in values.iter().enumerate() {
        let slice = &results[c * repeats..(c + 1) * repeats];
        let runs: Vec<CornerError> = slice.iter().filter_map(|r| r.as_ref().ok().copied()).collect();
        let (mean_distance, std_distance) = mean_std(runs.iter().map(|e| e.distance));
        let (mean_relative, std_relative) = mean_std(runs.iter().map(|e| e.relative));
        let (mean_rms, _) = mean_std(runs.iter().map(|e| e.rms));
        rows.push(SweepRow {
            axis,
            value,
            repeats,
            failures: repeats - runs.len(),
            mean_distance,
            std_distance,
            mean_relative,
            std_relative,
            mean_rms,
            runs,
        });
    }
    Ok(rows)
}

pub const SWEEP_HEADER: &str =
    "axis,value,repeats,failures,mean_distance_m,std_distance_m,mean_relative_pct,std_relative_pct,mean_rms_m";

pub fn write_sweep_csv(mut w: impl std::io::Write, rows: &[SweepRow]) -> std::io::Result<()> {
    writeln!(w, "{SWEEP_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            r.axis.name(),
            r.value,
            r.repeats,
            r.failures,
            r.mean_distance,
            r.std_distance,
            r.mean_relative,
            r.std_relative,
            r.mean_rms
        )?;
    }
    w.flush()
}
