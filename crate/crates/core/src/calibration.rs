//! Extrinsic estimation from 3D–2D corner correspondences and the
//! intensity re-projection score.
//!
//! Corners are paired by position in the shared counting order, so no
//! matching search is needed. The pose is found by Levenberg–Marquardt on
//! spherical angle differences, started from every rotation of the cube
//! group.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{Matrix3, Vector2, Vector3};
use rayon::prelude::*;
use serde::Serialize;

use crate::board_locator::{find_board, BoardDetection, BoardSpec};
use crate::cloud::PointCloud;
use crate::config::Config;
use crate::error::{Error, Result};
use crate::geometry::{
    pixel_to_angles, point_to_angles, project_point, wrap_angle, LidarPoint, PanoramaSpec, Pixel,
    Pose,
};
use crate::intensity_fit::{estimate_corners, estimate_gray_zone, l1_margin, ChessboardModel, CornerFit, Rect};
use crate::optim::{levenberg_marquardt, LmParams, LmResult};
use crate::segmentation::segment_cloud;

pub const CORNER_HEADER: [&str; 2] = ["u", "v"];

/// Minimum number of point pairs for a pose solve.
pub const MIN_CORRESPONDENCES: usize = 4;

/// Frames needed before a calibration is reported as confident.
pub const CONFIDENT_FRAMES: usize = 4;

/// Corners of one frame, paired index by index.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameCorrespondence {
    pub frame_id: String,
    pub lidar: Vec<Vector3<f64>>,
    pub image: Vec<Pixel>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorrespondenceSet {
    pub frames: Vec<FrameCorrespondence>,
}

impl CorrespondenceSet {
    pub fn pairs(&self) -> usize {
        self.frames.iter().map(|f| f.lidar.len().min(f.image.len())).sum()
    }

    pub fn validate(&self) -> Result<()> {
        for f in &self.frames {
            if f.lidar.len() != f.image.len() {
                return Err(Error::InvalidInput(format!(
                    "frame {}: {} lidar corners but {} image corners",
                    f.frame_id,
                    f.lidar.len(),
                    f.image.len()
                )));
            }
        }
        let got = self.pairs();
        if got < MIN_CORRESPONDENCES {
            return Err(Error::InsufficientCorrespondences {
                required: MIN_CORRESPONDENCES,
                got,
            });
        }
        Ok(())
    }
}

/// Unwraps `u` to within half an image width of `reference`.
fn unwrap_u(u: f64, reference: f64, pano: &PanoramaSpec) -> f64 {
    let w = pano.w();
    reference + (u - reference + w / 2.0).rem_euclid(w) - w / 2.0
}

fn cross2(a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    a.x * b.y - a.y * b.x
}

/// Checks that `corners` form the interior-corner grid of `spec` in
/// counting order.
///
/// Every grid cell spanned by consecutive corners along a row and along the
/// next row must have positive orientation in `(u, v)`; this is how the
/// board's right-handed frame appears in an equirectangular image seen from
/// the front, whatever the in-plane rotation of the board.
pub fn check_corner_order(corners: &[Pixel], spec: &BoardSpec, pano: &PanoramaSpec) -> Result<()> {
    let n = spec.interior_corners();
    if corners.len() != n {
        return Err(Error::BadCorners(format!("expected {n} corners, got {}", corners.len())));
    }
    for (k, c) in corners.iter().enumerate() {
        if !(c.u.is_finite() && c.v.is_finite())
            || c.u < 0.0
            || c.u >= pano.w()
            || c.v < 0.0
            || c.v > pano.h()
        {
            return Err(Error::BadCorners(format!(
                "corner {k} at ({}, {}) is outside the {}x{} image",
                c.u, c.v, pano.width, pano.height
            )));
        }
    }
    let grid = unwrapped_grid(corners, pano);
    let nx = spec.cells_x() - 1;
    let ny = spec.cells_y() - 1;
    for j in 0..ny - 1 {
        for i in 0..nx - 1 {
            let o = grid[j * nx + i];
            let along = grid[j * nx + i + 1] - o;
            let up = grid[(j + 1) * nx + i] - o;
            if cross2(&along, &up) <= 0.0 {
                return Err(Error::BadCorners(format!(
                    "corners are not in counting order near row {j}, column {i}"
                )));
            }
        }
    }
    Ok(())
}

fn unwrapped_grid(corners: &[Pixel], pano: &PanoramaSpec) -> Vec<Vector2<f64>> {
    let u0 = corners.first().map_or(0.0, |c| c.u);
    corners
        .iter()
        .map(|c| Vector2::new(unwrap_u(c.u, u0, pano), c.v))
        .collect()
}

pub fn read_image_corners(reader: impl Read) -> Result<Vec<Pixel>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::BadCorners(e.to_string()))?.clone();
    if headers.iter().ne(CORNER_HEADER.iter().copied()) {
        return Err(Error::BadCorners(format!(
            "expected header `u,v`, got `{}`",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| Error::BadCorners(e.to_string()))?;
        let num = |k: usize| {
            record[k]
                .parse::<f64>()
                .map_err(|e| Error::BadCorners(format!("line {}: {e}", row + 2)))
        };
        out.push(Pixel::new(num(0)?, num(1)?));
    }
    Ok(out)
}

/// Reads a `u,v` corner file and validates count, bounds and order.
pub fn load_image_corners(path: &Path, spec: &BoardSpec, pano: &PanoramaSpec) -> Result<Vec<Pixel>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let corners = read_image_corners(file).map_err(|e| match e {
        Error::BadCorners(m) => Error::BadCorners(format!("{}: {m}", path.display())),
        other => other,
    })?;
    check_corner_order(&corners, spec, pano).map_err(|e| match e {
        Error::BadCorners(m) => Error::BadCorners(format!("{}: {m}", path.display())),
        other => other,
    })?;
    Ok(corners)
}

pub fn write_image_corners(w: impl Write, corners: &[Pixel]) -> std::io::Result<()> {
    let mut w = std::io::BufWriter::new(w);
    writeln!(w, "{}", CORNER_HEADER.join(","))?;
    for c in corners {
        writeln!(w, "{},{}", c.u, c.v)?;
    }
    w.flush()
}

/// Inclination and azimuth differences between each transformed LiDAR
/// corner and its image corner, two entries per pair.
///
/// The azimuth difference is wrapped into `(−π, π]` and scaled by the sine
/// of the image corner's inclination; at the poles it is zero.
pub fn angular_residuals(pose: &Pose, set: &CorrespondenceSet, pano: &PanoramaSpec) -> Result<Vec<f64>> {
    let rot = pose.rotation();
    let mut out = Vec::with_capacity(2 * set.pairs());
    for f in &set.frames {
        for (p, px) in f.lidar.iter().zip(&f.image) {
            let a = point_to_angles(&(rot * p + pose.t))?;
            let b = pixel_to_angles(px, pano);
            out.push(a.inclination - b.inclination);
            out.push(if b.near_pole() {
                0.0
            } else {
                wrap_angle(a.azimuth - b.azimuth) * b.inclination.sin()
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Refinement {
    pub pose: Pose,
    /// `½‖r‖²`, radians².
    pub cost: f64,
    /// Root mean square angular residual, radians.
    pub rms: f64,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<f64>,
}

fn to_refinement(res: LmResult, residuals: usize) -> Refinement {
    // Angles leave LM unwrapped; re-extract them so θy ∈ [−π/2, π/2] and
    // θx, θz ∈ (−π, π].
    let raw = Pose::from_params(&res.x);
    Refinement {
        pose: Pose::from_rotation(&raw.rotation(), raw.t),
        cost: res.cost,
        rms: (2.0 * res.cost / residuals.max(1) as f64).sqrt(),
        iterations: res.iterations,
        converged: res.converged,
        trace: res.trace,
    }
}

/// Levenberg–Marquardt over `[θx, θy, θz, tx, ty, tz]` from `init`.
pub fn refine(set: &CorrespondenceSet, pano: &PanoramaSpec, init: &Pose, params: &LmParams) -> Result<Refinement> {
    set.validate()?;
    if !init.is_finite() {
        return Err(Error::InvalidInput("initial pose is not finite".into()));
    }
    let res = levenberg_marquardt(
        |x| angular_residuals(&Pose::from_params(x), set, pano),
        &init.params(),
        params,
    )?;
    Ok(to_refinement(res, 2 * set.pairs()))
}

/// The 24 proper rotations that map the coordinate axes onto themselves.
pub fn cube_rotations() -> Vec<Matrix3<f64>> {
    let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut out = Vec::with_capacity(24);
    for perm in perms {
        for signs in 0..8u8 {
            let mut m = Matrix3::zeros();
            for (row, &col) in perm.iter().enumerate() {
                m[(row, col)] = if signs & (1 << row) != 0 { -1.0 } else { 1.0 };
            }
            if m.determinant() > 0.0 {
                out.push(m);
            }
        }
    }
    out
}

/// Multi-start pose search: refines from each cube rotation with two
/// translation seeds and keeps the lowest final cost.
///
/// The translation seeds are zero and the offset that aligns the centroid of
/// the LiDAR corners (rotated) with the centroid of the image bearings
/// scaled to the LiDAR ranges.
pub fn initial_pose(set: &CorrespondenceSet, pano: &PanoramaSpec, params: &LmParams) -> Result<Refinement> {
    set.validate()?;
    let n = set.pairs() as f64;
    let mut lidar_c = Vector3::zeros();
    let mut bearing_c = Vector3::zeros();
    for f in &set.frames {
        for (p, px) in f.lidar.iter().zip(&f.image) {
            lidar_c += p;
            bearing_c += pixel_to_angles(px, pano).direction() * p.norm();
        }
    }
    lidar_c /= n;
    bearing_c /= n;

    let seeds: Vec<Pose> = cube_rotations()
        .iter()
        .flat_map(|r| {
            [
                Pose::from_rotation(r, Vector3::zeros()),
                Pose::from_rotation(r, bearing_c - r * lidar_c),
            ]
        })
        .collect();
    let results: Vec<Result<Refinement>> = seeds.par_iter().map(|s| refine(set, pano, s, params)).collect();

    let mut best: Option<Refinement> = None;
    let mut last_err = None;
    for r in results {
        match r {
            Ok(r) if r.cost.is_finite() => {
                if best.as_ref().is_none_or(|b| r.cost < b.cost) {
                    best = Some(r);
                }
            }
            Ok(_) => {}
            Err(e) => last_err = Some(e),
        }
    }
    best.ok_or_else(|| {
        Error::NoConvergence(format!(
            "every start failed{}",
            last_err.map(|e| format!(" (last: {e})")).unwrap_or_default()
        ))
    })
}

/// Re-projection score terms for one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReprojectionReport {
    pub e: f64,
    /// Pixel-distance cost of mismatched points.
    pub cost: f64,
    /// Points inside the detected pattern cells.
    pub n_inside: usize,
    /// All board points.
    pub n_all: usize,
    /// Pattern cells bounded by detected corners.
    pub cells_detected: usize,
    /// Pattern cells on the board.
    pub cells_all: usize,
    /// Distance of the board centroid, meters.
    pub range: f64,
}

/// `e = (C_m / N_c) · r · (P_c · N_a) / (P_a · N_c)`.
pub fn normalized_error(cost: f64, n_inside: usize, range: f64, cells_detected: usize, cells_all: usize, n_all: usize) -> f64 {
    let nc = n_inside as f64;
    (cost / nc) * range * (cells_detected as f64 * n_all as f64) / (cells_all as f64 * nc)
}

struct Quad {
    pts: [Vector2<f64>; 4],
    bbox: Rect,
    white: bool,
}

impl Quad {
    fn contains(&self, p: &Vector2<f64>) -> bool {
        let mut sign = 0.0f64;
        for k in 0..4 {
            let a = self.pts[k];
            let b = self.pts[(k + 1) % 4];
            let c = cross2(&(b - a), &(p - a));
            if c != 0.0 {
                if sign != 0.0 && c.signum() != sign {
                    return false;
                }
                sign = c.signum();
            }
        }
        true
    }
}

/// Scores extrinsics by projecting board points into the image and
/// comparing their intensity class with the color of the detected pattern
/// cell they land in.
pub fn reprojection_error(
    pose: &Pose,
    board: &[LidarPoint],
    corners: &[Pixel],
    spec: &BoardSpec,
    pano: &PanoramaSpec,
    eps_g: f64,
    n_bins: usize,
) -> Result<ReprojectionReport> {
    let n = spec.interior_corners();
    if corners.len() != n {
        return Err(Error::BadCorners(format!("expected {n} corners, got {}", corners.len())));
    }
    let intensities: Vec<f64> = board.iter().map(|p| p.intensity).collect();
    let zone = estimate_gray_zone(&intensities, eps_g, n_bins)?;
    let model = ChessboardModel::new(*spec);

    let grid = unwrapped_grid(corners, pano);
    let nx = spec.cells_x() - 1;
    let ny = spec.cells_y() - 1;
    let mut quads = Vec::with_capacity((nx - 1) * (ny - 1));
    for j in 0..ny - 1 {
        for i in 0..nx - 1 {
            let pts = [
                grid[j * nx + i],
                grid[j * nx + i + 1],
                grid[(j + 1) * nx + i + 1],
                grid[(j + 1) * nx + i],
            ];
            let (mut lo, mut hi) = (pts[0], pts[0]);
            for p in &pts[1..] {
                lo = lo.inf(p);
                hi = hi.sup(p);
            }
            quads.push(Quad {
                pts,
                bbox: Rect { x0: lo.x, x1: hi.x, y0: lo.y, y1: hi.y },
                white: model.cell_color(i + 1, j + 1) == crate::intensity_fit::CellColor::White,
            });
        }
    }

    let u0 = grid[0].x;
    let mut cost = 0.0;
    let mut inside = 0usize;
    let mut centroid = Vector3::zeros();
    for p in board {
        let pos = p.position();
        centroid += pos;
        let px = project_point(&pose.transform(&pos), pano)?;
        let q = Vector2::new(unwrap_u(px.u, u0, pano), px.v);
        let Some(quad) = quads.iter().find(|c| c.contains(&q)) else {
            continue;
        };
        inside += 1;
        if let Some(color) = zone.classify(p.intensity) {
            let white = color == crate::intensity_fit::CellColor::White;
            if white != quad.white {
                cost += l1_margin(&q, &quad.bbox);
            }
        }
    }
    if inside == 0 {
        return Err(Error::NoPointsInside);
    }
    let range = (centroid / board.len() as f64).norm();
    let cells_detected = quads.len();
    let cells_all = spec.rows * spec.cols;
    Ok(ReprojectionReport {
        e: normalized_error(cost, inside, range, cells_detected, cells_all, board.len()),
        cost,
        n_inside: inside,
        n_all: board.len(),
        cells_detected,
        cells_all,
        range,
    })
}

/// Board detection and corner fit of one frame.
#[derive(Debug, Clone)]
pub struct FrameCorners {
    pub board: BoardDetection,
    pub fit: CornerFit,
}

impl FrameCorners {
    pub fn board_points(&self, cloud: &PointCloud) -> Vec<LidarPoint> {
        self.board.indices.iter().map(|&i| cloud.points[i]).collect()
    }
}

/// Segmentation, board selection and corner estimation for one scan.
pub fn detect_corners(cloud: &PointCloud, config: &Config) -> Result<FrameCorners> {
    let segments = segment_cloud(cloud, &config.segmentation);
    let board = find_board(cloud, &segments, &config.board, &config.sensor, &config.detection)?;
    let fit = estimate_corners(
        &board.canonical,
        &board.intensities(cloud),
        &board.transform,
        &config.board,
        &config.fit,
    )?;
    Ok(FrameCorners { board, fit })
}

/// One scan with its detected image corners.
#[derive(Debug, Clone)]
pub struct Frame {
    pub id: String,
    pub cloud: PointCloud,
    pub corners: Vec<Pixel>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FrameOutcome {
    pub id: String,
    pub used: bool,
    pub report: Option<ReprojectionReport>,
    /// Error kind and message when the frame failed.
    pub error: Option<(String, String)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Calibration {
    pub extrinsics: Pose,
    pub refinement: Refinement,
    pub frames: Vec<FrameOutcome>,
    pub low_confidence: bool,
}

fn failure(id: &str, e: &Error) -> FrameOutcome {
    FrameOutcome {
        id: id.to_string(),
        used: false,
        report: None,
        error: Some((e.kind().to_string(), e.to_string())),
    }
}

/// Full pipeline over a set of frames. Frames whose board or corners
/// cannot be found are reported and skipped.
pub fn calibrate(frames: &[Frame], config: &Config) -> Result<Calibration> {
    if frames.is_empty() {
        return Err(Error::InvalidInput("no frames given".into()));
    }
    let detected: Vec<Result<FrameCorners>> = frames
        .par_iter()
        .map(|f| {
            check_corner_order(&f.corners, &config.board, &config.panorama)?;
            detect_corners(&f.cloud, config)
        })
        .collect();

    let mut set = CorrespondenceSet::default();
    let mut outcomes = Vec::with_capacity(frames.len());
    for (f, d) in frames.iter().zip(&detected) {
        match d {
            Ok(fc) => {
                set.frames.push(FrameCorrespondence {
                    frame_id: f.id.clone(),
                    lidar: fc.fit.corners.clone(),
                    image: f.corners.clone(),
                });
                outcomes.push(FrameOutcome {
                    id: f.id.clone(),
                    used: true,
                    report: None,
                    error: None,
                });
            }
            Err(e) => outcomes.push(failure(&f.id, e)),
        }
    }
    if set.frames.is_empty() {
        let reasons: Vec<String> = outcomes
            .iter()
            .filter_map(|o| o.error.as_ref().map(|(k, m)| format!("{}: {k}: {m}", o.id)))
            .collect();
        return Err(Error::InvalidInput(format!("no frame survived: {}", reasons.join("; "))));
    }

    let refinement = initial_pose(&set, &config.panorama, &config.lm)?;
    let pose = refinement.pose;
    for ((f, d), out) in frames.iter().zip(&detected).zip(outcomes.iter_mut()) {
        if let Ok(fc) = d {
            match reprojection_error(
                &pose,
                &fc.board_points(&f.cloud),
                &f.corners,
                &config.board,
                &config.panorama,
                config.eps_g_eval,
                config.fit.n_bins,
            ) {
                Ok(r) => out.report = Some(r),
                Err(e) => out.error = Some((e.kind().to_string(), e.to_string())),
            }
        }
    }
    Ok(Calibration {
        extrinsics: pose,
        low_confidence: set.frames.len() < CONFIDENT_FRAMES,
        refinement,
        frames: outcomes,
    })
}
