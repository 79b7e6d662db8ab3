//! Finding the chessboard among the segments of one frame and mapping its
//! points onto the board plane.
//!
//! A segment is accepted when its point count is plausible for a board at
//! its range, it is planar, its extent matches the board, and its points
//! are spread evenly over the four quadrants of the board plane.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::intensity_fit::CellColor;
use crate::segmentation::Segment;

/// Which pattern count runs along the board's horizontal width `d_W`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum WidthAxis {
    #[default]
    Cols,
    Rows,
}

/// Printed chessboard geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoardSpec {
    /// Pattern (square) counts.
    pub rows: usize,
    pub cols: usize,
    /// Square side, meters.
    pub square: f64,
    pub width_axis: WidthAxis,
    /// Color of the lower-left square in the board-plane frame.
    pub origin_color: CellColor,
}

impl Default for BoardSpec {
    fn default() -> Self {
        Self {
            rows: 8,
            cols: 6,
            square: 0.075,
            width_axis: WidthAxis::Cols,
            origin_color: CellColor::Black,
        }
    }
}

impl BoardSpec {
    pub fn validate(&self) -> Result<()> {
        if self.rows < 2 || self.cols < 2 {
            return Err(Error::Config(format!(
                "board needs at least 2x2 squares, got {}x{}",
                self.rows, self.cols
            )));
        }
        if !(self.square > 0.0 && self.square.is_finite()) {
            return Err(Error::Config(format!(
                "square size must be positive, got {}",
                self.square
            )));
        }
        Ok(())
    }

    /// `d_W`, meters.
    pub fn width(&self) -> f64 {
        match self.width_axis {
            WidthAxis::Cols => self.cols as f64 * self.square,
            WidthAxis::Rows => self.rows as f64 * self.square,
        }
    }

    /// `d_H`, meters.
    pub fn height(&self) -> f64 {
        match self.width_axis {
            WidthAxis::Cols => self.rows as f64 * self.square,
            WidthAxis::Rows => self.cols as f64 * self.square,
        }
    }

    /// Squares along the board-plane x axis (the longer side).
    pub fn cells_x(&self) -> usize {
        self.rows.max(self.cols)
    }

    /// Squares along the board-plane y axis.
    pub fn cells_y(&self) -> usize {
        self.rows.min(self.cols)
    }

    pub fn long_side(&self) -> f64 {
        self.cells_x() as f64 * self.square
    }

    pub fn short_side(&self) -> f64 {
        self.cells_y() as f64 * self.square
    }

    pub fn interior_corners(&self) -> usize {
        (self.rows - 1) * (self.cols - 1)
    }
}

/// Angular layout of a spinning multi-beam LiDAR.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorModel {
    /// Azimuth step between successive firings, radians.
    pub horizontal_resolution: f64,
    /// Elevation step between rings, radians.
    pub vertical_resolution: f64,
    /// Ring elevations, radians, strictly increasing.
    pub ring_elevations: Vec<f64>,
}

impl Default for SensorModel {
    /// Velodyne HDL-32e.
    fn default() -> Self {
        Self::uniform(0.16f64.to_radians(), 1.33f64.to_radians(), -30.67, 10.67, 32)
    }
}

impl SensorModel {
    /// `rings` elevations evenly spaced over `[lowest_deg, highest_deg]`.
    pub fn uniform(
        horizontal_resolution: f64,
        vertical_resolution: f64,
        lowest_deg: f64,
        highest_deg: f64,
        rings: usize,
    ) -> Self {
        let step = if rings > 1 {
            (highest_deg - lowest_deg) / (rings - 1) as f64
        } else {
            0.0
        };
        Self {
            horizontal_resolution,
            vertical_resolution,
            ring_elevations: (0..rings)
                .map(|k| (lowest_deg + k as f64 * step).to_radians())
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizontal_resolution > 0.0 && self.vertical_resolution > 0.0) {
            return Err(Error::Config("angular resolutions must be positive".into()));
        }
        if self.ring_elevations.is_empty()
            || self.ring_elevations.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(Error::Config(
                "ring elevations must be non-empty and strictly increasing".into(),
            ));
        }
        Ok(())
    }
}

/// Thresholds of the board filters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionParams {
    /// Lower bound of the point-count window as a fraction of `n_theo`.
    pub eps_theo: f64,
    /// Planarity threshold on the smallest PCA ratio.
    pub lambda3_max: f64,
    pub box_min: f64,
    pub box_max: f64,
    pub uniformity_min: f64,
    pub ransac_tol: f64,
    pub ransac_iterations: usize,
    pub seed: u64,
}

impl Default for DetectionParams {
    fn default() -> Self {
        Self {
            eps_theo: 0.5,
            lambda3_max: 0.01,
            box_min: 0.8,
            box_max: 1.6,
            uniformity_min: 0.85,
            ransac_tol: 0.03,
            ransac_iterations: 200,
            seed: 0,
        }
    }
}

/// Maximum number of returns a board at range `r` can produce.
///
/// `⌊d_W / (2r sin(Δh/2))⌋ · ⌊d_H / (2r sin(Δv/2))⌋`, with both brackets
/// truncated toward zero.
pub fn theoretical_count(spec: &BoardSpec, sensor: &SensorModel, r: f64) -> Result<u64> {
    if !(r > 0.0) {
        return Err(Error::NonPositiveRange(r));
    }
    let across = spec.width() / (2.0 * r * (sensor.horizontal_resolution / 2.0).sin());
    let down = spec.height() / (2.0 * r * (sensor.vertical_resolution / 2.0).sin());
    Ok(across.floor() as u64 * down.floor() as u64)
}

pub fn count_plausible(
    n: usize,
    centroid: &Vector3<f64>,
    spec: &BoardSpec,
    sensor: &SensorModel,
    eps_theo: f64,
) -> bool {
    match theoretical_count(spec, sensor, centroid.norm()) {
        Ok(n_theo) => {
            let n = n as f64;
            n >= eps_theo * n_theo as f64 && n <= n_theo as f64
        }
        Err(_) => false,
    }
}

/// Keeps segments whose size lies in `[eps_theo · n_theo, n_theo]` at their centroid range.
pub fn count_prefilter<'a>(
    segments: &'a [Segment],
    spec: &BoardSpec,
    sensor: &SensorModel,
    eps_theo: f64,
) -> Vec<&'a Segment> {
    segments
        .iter()
        .filter(|s| count_plausible(s.len(), &s.centroid, spec, sensor, eps_theo))
        .collect()
}

/// Principal axes of a point set. `axes[2]` is the plane normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneBasis {
    pub axes: [Vector3<f64>; 3],
    /// Eigenvalues over their sum, descending.
    pub ratios: [f64; 3],
    pub centroid: Vector3<f64>,
}

impl PlaneBasis {
    pub fn is_planar(&self, lambda3_max: f64) -> bool {
        self.ratios[2] < lambda3_max
    }
}

fn centroid(points: &[Vector3<f64>]) -> Vector3<f64> {
    points.iter().fold(Vector3::zeros(), |a, p| a + p) / points.len() as f64
}

pub fn pca_plane(points: &[Vector3<f64>]) -> Result<PlaneBasis> {
    if points.len() < 3 {
        return Err(Error::DegenerateGeometry(format!(
            "PCA needs at least 3 points, got {}",
            points.len()
        )));
    }
    let c = centroid(points);
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - c;
        cov += d * d.transpose();
    }
    cov /= points.len() as f64;

    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k].max(0.0)).collect();
    let total: f64 = values.iter().sum();
    if !(total > 0.0) || values[1] <= 1e-12 * total {
        return Err(Error::DegenerateGeometry("points are collinear".into()));
    }
    let axes = [
        eig.eigenvectors.column(order[0]).into_owned(),
        eig.eigenvectors.column(order[1]).into_owned(),
        eig.eigenvectors.column(order[2]).into_owned(),
    ];
    Ok(PlaneBasis {
        axes,
        ratios: [values[0] / total, values[1] / total, values[2] / total],
        centroid: c,
    })
}

/// Plane `normal · p + offset = 0` with its inliers projected onto it.
#[derive(Debug, Clone, PartialEq)]
pub struct RansacPlane {
    pub normal: Vector3<f64>,
    pub offset: f64,
    /// Indices into the input slice.
    pub inliers: Vec<usize>,
    /// Inliers orthogonally projected onto the plane, same order as `inliers`.
    pub projected: Vec<Vector3<f64>>,
}

impl RansacPlane {
    pub fn distance(&self, p: &Vector3<f64>) -> f64 {
        self.normal.dot(p) + self.offset
    }
}

fn inliers_of(points: &[Vector3<f64>], normal: &Vector3<f64>, offset: f64, tol: f64) -> Vec<usize> {
    points
        .iter()
        .enumerate()
        .filter(|(_, p)| (normal.dot(p) + offset).abs() <= tol)
        .map(|(i, _)| i)
        .collect()
}

/// Best three-point plane hypothesis by inlier count, refined by a
/// least-squares fit to its inliers. The RNG is seeded so results repeat.
pub fn ransac_plane(
    points: &[Vector3<f64>],
    inlier_tol: f64,
    iterations: usize,
    seed: u64,
) -> Result<RansacPlane> {
    let n = points.len();
    if n < 3 {
        return Err(Error::DegenerateGeometry(format!(
            "RANSAC needs at least 3 points, got {n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(usize, Vector3<f64>, f64)> = None;
    for _ in 0..iterations {
        let a = rng.random_range(0..n);
        let mut b = rng.random_range(0..n - 1);
        if b >= a {
            b += 1;
        }
        let mut c = rng.random_range(0..n - 2);
        for taken in [a.min(b), a.max(b)] {
            if c >= taken {
                c += 1;
            }
        }
        let cross = (points[b] - points[a]).cross(&(points[c] - points[a]));
        let norm = cross.norm();
        if norm < 1e-12 {
            continue;
        }
        let normal = cross / norm;
        let offset = -normal.dot(&points[a]);
        let count = points
            .iter()
            .filter(|p| (normal.dot(p) + offset).abs() <= inlier_tol)
            .count();
        if best.is_none_or(|(k, _, _)| count > k) {
            best = Some((count, normal, offset));
        }
    }
    let (count, mut normal, mut offset) =
        best.ok_or_else(|| Error::DegenerateGeometry("all RANSAC samples were collinear".into()))?;
    if 2 * count < n {
        return Err(Error::DegenerateGeometry(format!(
            "best plane has only {count} of {n} inliers"
        )));
    }

    let mut inliers = inliers_of(points, &normal, offset, inlier_tol);
    let subset: Vec<Vector3<f64>> = inliers.iter().map(|&i| points[i]).collect();
    if let Ok(fit) = pca_plane(&subset) {
        let refined = fit.axes[2];
        let refined_offset = -refined.dot(&fit.centroid);
        let refit = inliers_of(points, &refined, refined_offset, inlier_tol);
        if 2 * refit.len() >= n {
            normal = refined;
            offset = refined_offset;
            inliers = refit;
        }
    }

    let projected = inliers
        .iter()
        .map(|&i| {
            let p = points[i];
            p - normal * (normal.dot(&p) + offset)
        })
        .collect();
    Ok(RansacPlane {
        normal,
        offset,
        inliers,
        projected,
    })
}

/// Rigid map from the LiDAR frame onto the board plane: `q = R p + t`.
///
/// Rows of `rotation` are the oriented principal axes; `t = -R · centroid`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaneTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl PlaneTransform {
    pub fn to_plane(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn to_lidar(&self, q: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (q - self.translation)
    }

    /// Rotation row-major followed by translation.
    pub fn to_array(&self) -> [f64; 12] {
        let r = &self.rotation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            self.translation.x,
            self.translation.y,
            self.translation.z,
        ]
    }
}

/// Orients the principal axes of a planar point set and maps the points
/// onto the board plane.
///
/// The axes are right-handed, the normal `μ3` points to the side of
/// `lidar_origin`, and `μ1` makes at most 90° with the LiDAR x axis.
pub fn canonicalize(
    points: &[Vector3<f64>],
    lidar_origin: &Vector3<f64>,
) -> Result<(PlaneTransform, Vec<Vector3<f64>>)> {
    let basis = pca_plane(points)?;
    let [mut mu1, _, mut mu3] = basis.axes;
    let side = (lidar_origin - basis.centroid).dot(&mu3);
    if side.abs() < 1e-6 {
        return Err(Error::DegenerateGeometry(
            "board plane passes through the LiDAR origin".into(),
        ));
    }
    if side < 0.0 {
        mu3 = -mu3;
    }
    if mu1.x < 0.0 {
        mu1 = -mu1;
    }
    let mu2 = mu3.cross(&mu1);
    let rotation = Matrix3::from_rows(&[mu1.transpose(), mu2.transpose(), mu3.transpose()]);
    let translation = -(rotation * basis.centroid);
    let tf = PlaneTransform {
        rotation,
        translation,
    };
    let mapped = points.iter().map(|p| tf.to_plane(p)).collect();
    Ok((tf, mapped))
}

/// `1 - (n_max - n_min) / n_all` over quadrant counts.
pub fn uniformity(counts: [usize; 4]) -> f64 {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let max = *counts.iter().max().unwrap();
    let min = *counts.iter().min().unwrap();
    1.0 - (max - min) as f64 / total as f64
}

/// Point counts in the four sign quadrants of the board plane,
/// counter-clockwise from `x ≥ 0, y ≥ 0`.
pub fn quadrant_counts(points: &[Vector3<f64>]) -> [usize; 4] {
    let mut counts = [0usize; 4];
    for p in points {
        let q = match (p.x >= 0.0, p.y >= 0.0) {
            (true, true) => 0,
            (false, true) => 1,
            (false, false) => 2,
            (true, false) => 3,
        };
        counts[q] += 1;
    }
    counts
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoardCheck {
    pub accepted: bool,
    pub uniformity: f64,
    pub extent: (f64, f64),
}

/// Extent and uniformity test on board-plane points. The x extent is
/// compared with the board's long side, the y extent with the short side.
pub fn bounding_and_uniformity(
    canonical: &[Vector3<f64>],
    spec: &BoardSpec,
    params: &DetectionParams,
) -> BoardCheck {
    if canonical.is_empty() {
        return BoardCheck {
            accepted: false,
            uniformity: 0.0,
            extent: (0.0, 0.0),
        };
    }
    let (mut lo, mut hi) = (canonical[0], canonical[0]);
    for p in canonical {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let extent = (hi.x - lo.x, hi.y - lo.y);
    let within = |e: f64, side: f64| e >= params.box_min * side && e <= params.box_max * side;
    let boxed = within(extent.0, spec.long_side()) && within(extent.1, spec.short_side());
    let u = uniformity(quadrant_counts(canonical));
    BoardCheck {
        accepted: boxed && u >= params.uniformity_min,
        uniformity: u,
        extent,
    }
}

/// The selected board segment and its points on the board plane.
#[derive(Debug, Clone)]
pub struct BoardDetection {
    /// Index into the segment list.
    pub segment: usize,
    /// Cloud indices of the plane inliers.
    pub indices: Vec<usize>,
    pub transform: PlaneTransform,
    /// Inliers on the board plane, same order as `indices`.
    pub canonical: Vec<Vector3<f64>>,
    pub uniformity: f64,
}

impl BoardDetection {
    pub fn intensities(&self, cloud: &PointCloud) -> Vec<f64> {
        self.indices
            .iter()
            .map(|&i| cloud.points[i].intensity)
            .collect()
    }
}

fn examine_segment(
    index: usize,
    segment: &Segment,
    cloud: &PointCloud,
    spec: &BoardSpec,
    sensor: &SensorModel,
    params: &DetectionParams,
) -> Option<BoardDetection> {
    if !count_plausible(segment.len(), &segment.centroid, spec, sensor, params.eps_theo) {
        return None;
    }
    let points = cloud.positions(&segment.indices);
    let basis = pca_plane(&points).ok()?;
    if !basis.is_planar(params.lambda3_max) {
        return None;
    }
    let plane = ransac_plane(&points, params.ransac_tol, params.ransac_iterations, params.seed).ok()?;
    let (transform, canonical) = canonicalize(&plane.projected, &Vector3::zeros()).ok()?;
    let check = bounding_and_uniformity(&canonical, spec, params);
    if !check.accepted {
        return None;
    }
    Some(BoardDetection {
        segment: index,
        indices: plane.inliers.iter().map(|&k| segment.indices[k]).collect(),
        transform,
        canonical,
        uniformity: check.uniformity,
    })
}

/// Runs every filter on every segment and returns the most uniform survivor.
pub fn find_board(
    cloud: &PointCloud,
    segments: &[Segment],
    spec: &BoardSpec,
    sensor: &SensorModel,
    params: &DetectionParams,
) -> Result<BoardDetection> {
    let survivors: Vec<Option<BoardDetection>> = segments
        .par_iter()
        .enumerate()
        .map(|(i, s)| examine_segment(i, s, cloud, spec, sensor, params))
        .collect();
    let mut best: Option<BoardDetection> = None;
    for cand in survivors.into_iter().flatten() {
        if best.as_ref().is_none_or(|b| cand.uniformity > b.uniformity) {
            best = Some(cand);
        }
    }
    best.ok_or(Error::BoardNotFound)
}
