//! Corner estimation by fitting a full-scale chessboard model to the
//! reflectance pattern of the board points.
//!
//! Points are first split into black, white and gray by two intensity
//! thresholds. The model is then moved in the board plane (rotation about
//! the normal plus a 2D shift) to minimize an L1 misfit between point colors
//! and model cells, and its interior corners are mapped back to the LiDAR
//! frame.

use nalgebra::{Rotation2, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::board_locator::{BoardSpec, PlaneTransform};
use crate::error::{Error, Result};
use crate::optim::{powell_minimize, PowellParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CellColor {
    #[default]
    Black,
    White,
}

impl CellColor {
    pub fn value(self) -> u8 {
        match self {
            CellColor::Black => 0,
            CellColor::White => 1,
        }
    }

    pub fn from_parity(p: usize) -> Self {
        if p.is_multiple_of(2) {
            CellColor::Black
        } else {
            CellColor::White
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CellColor::Black => "black",
            CellColor::White => "white",
        }
    }
}

/// Intensity interval whose points are ignored by the fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GrayZone {
    pub tau_l: f64,
    pub tau_h: f64,
    pub r_low: f64,
    pub r_high: f64,
    pub eps_g: f64,
}

impl GrayZone {
    pub fn from_peaks(r_low: f64, r_high: f64, eps_g: f64) -> Self {
        Self {
            tau_l: ((eps_g - 1.0) * r_low + r_high) / eps_g,
            tau_h: (r_low + (eps_g - 1.0) * r_high) / eps_g,
            r_low,
            r_high,
            eps_g,
        }
    }

    /// `None` for gray.
    pub fn classify(&self, r: f64) -> Option<CellColor> {
        if r < self.tau_l {
            Some(CellColor::Black)
        } else if r > self.tau_h {
            Some(CellColor::White)
        } else {
            None
        }
    }
}

/// Histogram peaks below and above the mean intensity, and the thresholds
/// placed between them.
///
/// Bin `k` of `n_bins` is centred at `min + k·(max − min)/(n_bins − 1)`, so
/// the extreme intensities sit exactly on bin centres.
pub fn estimate_gray_zone(intensities: &[f64], eps_g: f64, n_bins: usize) -> Result<GrayZone> {
    if !(eps_g >= 2.0) {
        return Err(Error::Config(format!("gray-zone coefficient must be >= 2, got {eps_g}")));
    }
    if n_bins < 2 {
        return Err(Error::Config(format!("need at least 2 histogram bins, got {n_bins}")));
    }
    if intensities.is_empty() {
        return Err(Error::UnimodalIntensity);
    }
    let (min, max) = intensities
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &r| (lo.min(r), hi.max(r)));
    if !(max > min) {
        return Err(Error::UnimodalIntensity);
    }
    let width = (max - min) / (n_bins - 1) as f64;
    let mut counts = vec![0usize; n_bins];
    for &r in intensities {
        let k = (((r - min) / width).round() as usize).min(n_bins - 1);
        counts[k] += 1;
    }
    let mean = intensities.iter().sum::<f64>() / intensities.len() as f64;
    let center = |k: usize| min + k as f64 * width;

    let mut low: Option<(usize, usize)> = None;
    let mut high: Option<(usize, usize)> = None;
    for (k, &c) in counts.iter().enumerate() {
        if c == 0 {
            continue;
        }
        let slot = if center(k) < mean {
            &mut low
        } else if center(k) > mean {
            &mut high
        } else {
            continue;
        };
        if slot.is_none_or(|(_, best)| c > best) {
            *slot = Some((k, c));
        }
    }
    match (low, high) {
        (Some((kl, _)), Some((kh, _))) => Ok(GrayZone::from_peaks(center(kl), center(kh), eps_g)),
        _ => Err(Error::UnimodalIntensity),
    }
}

/// Axis-aligned rectangle `[x0, x1] × [y0, y1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rect {
    pub fn contains(&self, p: &Vector2<f64>) -> bool {
        p.x >= self.x0 && p.x <= self.x1 && p.y >= self.y0 && p.y <= self.y1
    }
}

/// Sum of the distances from `p` to the nearer vertical side line and to
/// the nearer horizontal side line of `rect`.
pub fn l1_margin(p: &Vector2<f64>, rect: &Rect) -> f64 {
    (p.x - rect.x0).abs().min((p.x - rect.x1).abs()) + (p.y - rect.y0).abs().min((p.y - rect.y1).abs())
}

/// Result of locating a model-frame point on the pattern.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PatternHit {
    Inside { cell: (usize, usize), color: CellColor },
    Outside,
}

/// The board pattern centred on the origin of the board plane, long side
/// along x.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChessboardModel {
    pub spec: BoardSpec,
}

impl ChessboardModel {
    pub fn new(spec: BoardSpec) -> Self {
        Self { spec }
    }

    pub fn width(&self) -> f64 {
        self.spec.long_side()
    }

    pub fn height(&self) -> f64 {
        self.spec.short_side()
    }

    /// Outer rectangle `G`.
    pub fn outline(&self) -> Rect {
        let (w, h) = (self.width() / 2.0, self.height() / 2.0);
        Rect { x0: -w, x1: w, y0: -h, y1: h }
    }

    /// Cell `(i, j)`: `i` counts along x, `j` along y, both from the lower-left.
    pub fn cell(&self, i: usize, j: usize) -> Rect {
        let s = self.spec.square;
        let g = self.outline();
        Rect {
            x0: g.x0 + i as f64 * s,
            x1: g.x0 + (i + 1) as f64 * s,
            y0: g.y0 + j as f64 * s,
            y1: g.y0 + (j + 1) as f64 * s,
        }
    }

    pub fn cell_color(&self, i: usize, j: usize) -> CellColor {
        CellColor::from_parity(i + j + self.spec.origin_color.value() as usize)
    }

    pub fn locate(&self, p: &Vector2<f64>) -> PatternHit {
        let g = self.outline();
        if !g.contains(p) {
            return PatternHit::Outside;
        }
        let s = self.spec.square;
        let i = (((p.x - g.x0) / s).floor() as usize).min(self.spec.cells_x() - 1);
        let j = (((p.y - g.y0) / s).floor() as usize).min(self.spec.cells_y() - 1);
        PatternHit::Inside {
            cell: (i, j),
            color: self.cell_color(i, j),
        }
    }

    /// Interior corners in counting order: rows bottom to top, each row left to right.
    pub fn interior_corners(&self) -> Vec<Vector2<f64>> {
        let s = self.spec.square;
        let g = self.outline();
        let mut out = Vec::with_capacity(self.spec.interior_corners());
        for j in 1..self.spec.cells_y() {
            for i in 1..self.spec.cells_x() {
                out.push(Vector2::new(g.x0 + i as f64 * s, g.y0 + j as f64 * s));
            }
        }
        out
    }

    /// Misfit of one classified model-frame point.
    pub fn point_cost(&self, p: &Vector2<f64>, color: CellColor) -> f64 {
        match self.locate(p) {
            PatternHit::Outside => l1_margin(p, &self.outline()),
            PatternHit::Inside { cell, color: c } if c != color => l1_margin(p, &self.cell(cell.0, cell.1)),
            PatternHit::Inside { .. } => 0.0,
        }
    }
}

/// Rotation about the board normal followed by an in-plane shift, taking
/// board-plane points into the model frame: `p̂ = R(θz) p + t`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct InPlanePose {
    pub theta_z: f64,
    pub tx: f64,
    pub ty: f64,
}

impl InPlanePose {
    pub fn from_params(x: &[f64]) -> Self {
        Self {
            theta_z: x[0],
            tx: x[1],
            ty: x[2],
        }
    }

    pub fn apply(&self, p: &Vector2<f64>) -> Vector2<f64> {
        Rotation2::new(self.theta_z) * p + Vector2::new(self.tx, self.ty)
    }

    pub fn apply_inverse(&self, q: &Vector2<f64>) -> Vector2<f64> {
        Rotation2::new(self.theta_z).inverse() * (q - Vector2::new(self.tx, self.ty))
    }
}

/// Board-plane point with its color class; gray points are dropped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifiedPoint {
    pub p: Vector2<f64>,
    pub color: CellColor,
}

pub fn classify_points(canonical: &[Vector3<f64>], intensities: &[f64], zone: &GrayZone) -> Vec<ClassifiedPoint> {
    canonical
        .iter()
        .zip(intensities)
        .filter_map(|(p, &r)| {
            zone.classify(r).map(|color| ClassifiedPoint {
                p: Vector2::new(p.x, p.y),
                color,
            })
        })
        .collect()
}

/// Total misfit of the model at `pose`. Non-negative.
pub fn board_cost(points: &[ClassifiedPoint], model: &ChessboardModel, pose: &InPlanePose) -> f64 {
    let rot = Rotation2::new(pose.theta_z);
    let t = Vector2::new(pose.tx, pose.ty);
    points
        .iter()
        .map(|cp| model.point_cost(&(rot * cp.p + t), cp.color))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitParams {
    /// Gray-zone coefficient for corner estimation.
    pub eps_g: f64,
    pub n_bins: usize,
    /// Largest accepted mean cost per classified point, meters.
    pub cost_ceiling: f64,
    pub powell: PowellParams,
}

impl Default for FitParams {
    fn default() -> Self {
        Self {
            eps_g: 2.0,
            n_bins: 64,
            cost_ceiling: 0.05,
            powell: PowellParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CornerFit {
    /// Interior corners in the LiDAR frame, counting order.
    pub corners: Vec<Vector3<f64>>,
    pub pose: InPlanePose,
    pub cost: f64,
    pub classified: usize,
    pub zone: GrayZone,
    pub iterations: usize,
}

impl CornerFit {
    pub fn mean_cost(&self) -> f64 {
        if self.classified == 0 {
            0.0
        } else {
            self.cost / self.classified as f64
        }
    }
}

const PLATEAU_REACH_RAD: f64 = 0.05;
const PLATEAU_SWEEPS: usize = 3;
const PLATEAU_BISECTIONS: usize = 30;

/// Distance from `x` along `±e_k` over which `cost` stays zero, searched up
/// to `reach`.
fn zero_extent(cost: &impl Fn(&[f64]) -> f64, x: &[f64], k: usize, sign: f64, reach: f64) -> f64 {
    let at = |a: f64| {
        let mut p = x.to_vec();
        p[k] += sign * a;
        cost(&p) == 0.0
    };
    if at(reach) {
        return reach;
    }
    let (mut lo, mut hi) = (0.0, reach);
    for _ in 0..PLATEAU_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        if at(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Noiseless scans leave a set of in-plane poses with zero cost, all equally
/// optimal. Moves `x` to the middle of that set along each parameter in turn
/// so the result does not depend on where the search first touched it.
fn centre_zero_plateau(cost: impl Fn(&[f64]) -> f64, x: &[f64], reach: &[f64]) -> Vec<f64> {
    let mut x = x.to_vec();
    for _ in 0..PLATEAU_SWEEPS {
        for k in 0..x.len() {
            let up = zero_extent(&cost, &x, k, 1.0, reach[k]);
            let down = zero_extent(&cost, &x, k, -1.0, reach[k]);
            x[k] += 0.5 * (up - down);
        }
    }
    x
}

/// Fits the model to board-plane points and returns the interior corners
/// in the LiDAR frame.
pub fn estimate_corners(
    canonical: &[Vector3<f64>],
    intensities: &[f64],
    transform: &PlaneTransform,
    spec: &BoardSpec,
    params: &FitParams,
) -> Result<CornerFit> {
    if canonical.len() != intensities.len() {
        return Err(Error::InvalidInput(format!(
            "{} points but {} intensities",
            canonical.len(),
            intensities.len()
        )));
    }
    let zone = estimate_gray_zone(intensities, params.eps_g, params.n_bins)?;
    let points = classify_points(canonical, intensities, &zone);
    let model = ChessboardModel::new(*spec);
    let res = powell_minimize(
        |x| board_cost(&points, &model, &InPlanePose::from_params(x)),
        &[0.0, 0.0, 0.0],
        &params.powell,
    )?;
    let cost = |x: &[f64]| board_cost(&points, &model, &InPlanePose::from_params(x));
    let x = if res.f == 0.0 {
        centre_zero_plateau(cost, &res.x, &[PLATEAU_REACH_RAD, spec.square / 2.0, spec.square / 2.0])
    } else {
        res.x
    };
    let pose = InPlanePose::from_params(&x);
    let fit = CornerFit {
        corners: model
            .interior_corners()
            .iter()
            .map(|c| {
                let q = pose.apply_inverse(c);
                transform.to_lidar(&Vector3::new(q.x, q.y, 0.0))
            })
            .collect(),
        pose,
        cost: res.f,
        classified: points.len(),
        zone,
        iterations: res.iterations,
    };
    if fit.mean_cost() > params.cost_ceiling {
        return Err(Error::FitRejected {
            mean_cost: fit.mean_cost(),
            ceiling: params.cost_ceiling,
        });
    }
    Ok(fit)
}
