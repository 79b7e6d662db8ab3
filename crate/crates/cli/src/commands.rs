use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ilcc_core::board_locator::find_board as locate_board;
use ilcc_core::calibration::{self, detect_corners, read_image_corners, reprojection_error, write_image_corners, Frame};
use ilcc_core::geometry::Pose;
use ilcc_core::segmentation::segment_cloud;
use ilcc_core::simulator::{self, simulate_frames, write_sweep_csv, SimulatedFrame, SweepAxis};
use ilcc_core::{Config, Error, PointCloud, Result};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::manifest::{frame_id, Manifest, ManifestEntry};
use crate::scenario::Scenario;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

fn load_config(path: Option<&Path>) -> Result<Config> {
    match path {
        Some(p) => Config::load(p),
        None => Ok(Config::default()),
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| io_err(path)(e.into()))?;
    writeln!(w).and_then(|_| w.flush()).map_err(io_err(path))
}

pub fn segment(cloud_path: &Path, config: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let config = load_config(config)?;
    let cloud = PointCloud::read_csv(cloud_path)?;
    let segments = segment_cloud(&cloud, &config.segmentation);
    println!("segments: {}", segments.len());
    for (k, s) in segments.iter().enumerate() {
        let c = s.centroid;
        println!("{k}\t{} points\tcentroid ({:.3}, {:.3}, {:.3})\trange {:.3} m", s.len(), c.x, c.y, c.z, c.norm());
    }
    if let Some(out) = out {
        let mut label = vec![usize::MAX; cloud.len()];
        for (k, s) in segments.iter().enumerate() {
            for &i in &s.indices {
                label[i] = k;
            }
        }
        let mut w = create(out)?;
        let mut run = || -> std::io::Result<()> {
            writeln!(w, "x,y,z,intensity,ring,segment")?;
            for (p, l) in cloud.points.iter().zip(&label) {
                writeln!(w, "{},{},{},{},{},{}", p.x, p.y, p.z, p.intensity, p.ring, l)?;
            }
            w.flush()
        };
        run().map_err(io_err(out))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct BoardSummary {
    segment: usize,
    points: usize,
    uniformity: f64,
    rotation_row_major: [f64; 9],
    translation: [f64; 3],
}

pub fn find_board(cloud_path: &Path, config: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let config = load_config(config)?;
    let cloud = PointCloud::read_csv(cloud_path)?;
    let segments = segment_cloud(&cloud, &config.segmentation);
    let board = locate_board(&cloud, &segments, &config.board, &config.sensor, &config.detection)?;
    let a = board.transform.to_array();
    let summary = BoardSummary {
        segment: board.segment,
        points: board.indices.len(),
        uniformity: board.uniformity,
        rotation_row_major: a[..9].try_into().unwrap(),
        translation: a[9..].try_into().unwrap(),
    };
    println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
    if let Some(out) = out {
        let mut w = create(out)?;
        let mut run = || -> std::io::Result<()> {
            writeln!(w, "x,y,z,intensity,ring,px,py,pz")?;
            for (&i, q) in board.indices.iter().zip(&board.canonical) {
                let p = &cloud.points[i];
                writeln!(w, "{},{},{},{},{},{},{},{}", p.x, p.y, p.z, p.intensity, p.ring, q.x, q.y, q.z)?;
            }
            w.flush()
        };
        run().map_err(io_err(out))?;
    }
    Ok(())
}

pub fn corners_3d(cloud_path: &Path, config: Option<&Path>, out: &Path, debug_dump: Option<&Path>) -> Result<()> {
    let config = load_config(config)?;
    let cloud = PointCloud::read_csv(cloud_path)?;
    let fc = detect_corners(&cloud, &config)?;
    let mut w = create(out)?;
    let run = |w: &mut BufWriter<File>| -> std::io::Result<()> {
        writeln!(w, "x,y,z")?;
        for c in &fc.fit.corners {
            writeln!(w, "{},{},{}", c.x, c.y, c.z)?;
        }
        w.flush()
    };
    run(&mut w).map_err(io_err(out))?;
    println!(
        "{} corners, in-plane pose theta_z {:.4} deg, t ({:.5}, {:.5}) m, mean cost {:.6} m over {} classified points",
        fc.fit.corners.len(),
        fc.fit.pose.theta_z.to_degrees(),
        fc.fit.pose.tx,
        fc.fit.pose.ty,
        fc.fit.mean_cost(),
        fc.fit.classified
    );

    if let Some(dump) = debug_dump {
        let intensities = fc.board.intensities(&cloud);
        let mut w = create(dump)?;
        let mut run = || -> std::io::Result<()> {
            writeln!(w, "px,py,model_x,model_y,intensity,class")?;
            for (q, r) in fc.board.canonical.iter().zip(&intensities) {
                let m = fc.fit.pose.apply(&nalgebra::Vector2::new(q.x, q.y));
                let class = fc.fit.zone.classify(*r).map_or("gray", |c| c.name());
                writeln!(w, "{},{},{},{},{},{}", q.x, q.y, m.x, m.y, r, class)?;
            }
            w.flush()
        };
        run().map_err(io_err(dump))?;
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
struct FrameRecord {
    id: String,
    used: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    report: Option<calibration::ReprojectionReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error_kind: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

#[derive(Debug, Serialize)]
struct ExtrinsicsFile {
    theta_deg: [f64; 3],
    t_m: [f64; 3],
    rotation_row_major: [f64; 9],
    rms_rad: f64,
    converged: bool,
    iterations: usize,
    low_confidence: bool,
    trace: Vec<f64>,
    frames: Vec<FrameRecord>,
}

/// The part of `extrinsics.json` that `evaluate` reads.
#[derive(Debug, Deserialize)]
struct ExtrinsicsInput {
    theta_deg: [f64; 3],
    t_m: [f64; 3],
}

fn load_frames(manifest: &Manifest) -> Result<Vec<Frame>> {
    manifest
        .entries
        .iter()
        .map(|e| {
            let cloud = PointCloud::read_csv(&e.cloud)?;
            let corners = File::open(&e.corners2d)
                .map_err(io_err(&e.corners2d))
                .and_then(read_image_corners)
                .map_err(|err| match err {
                    Error::BadCorners(m) => Error::BadCorners(format!("{}: {m}", e.corners2d.display())),
                    other => other,
                })?;
            Ok(Frame {
                id: frame_id(&e.cloud),
                cloud,
                corners,
            })
        })
        .collect()
}

pub fn calibrate(manifest_path: &Path, config: Option<&Path>, out: &Path) -> Result<()> {
    let config = load_config(config)?;
    let manifest = Manifest::load(manifest_path)?;
    let frames = load_frames(&manifest)?;
    let cal = calibration::calibrate(&frames, &config)?;

    let pose = cal.extrinsics;
    let r = pose.rotation();
    let file = ExtrinsicsFile {
        theta_deg: pose.theta.map(f64::to_degrees).into(),
        t_m: pose.t.into(),
        rotation_row_major: [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
        ],
        rms_rad: cal.refinement.rms,
        converged: cal.refinement.converged,
        iterations: cal.refinement.iterations,
        low_confidence: cal.low_confidence,
        trace: cal.refinement.trace.clone(),
        frames: cal
            .frames
            .iter()
            .map(|f| FrameRecord {
                id: f.id.clone(),
                used: f.used,
                report: f.report,
                error_kind: f.error.as_ref().map(|e| e.0.clone()),
                error: f.error.as_ref().map(|e| e.1.clone()),
            })
            .collect(),
    };
    write_json(out, &file)?;
    let used = cal.frames.iter().filter(|f| f.used).count();
    println!(
        "theta {:.4?} deg, t {:.5?} m from {used} of {} frames{}",
        file.theta_deg,
        file.t_m,
        frames.len(),
        if cal.low_confidence { " (low confidence)" } else { "" }
    );
    for f in cal.frames.iter().filter(|f| f.error.is_some()) {
        let (kind, msg) = f.error.as_ref().unwrap();
        eprintln!("frame {}: {kind}: {msg}", f.id);
    }
    Ok(())
}

pub fn evaluate(extrinsics: &Path, manifest_path: &Path, config: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let config = load_config(config)?;
    let text = std::fs::read_to_string(extrinsics).map_err(io_err(extrinsics))?;
    let input: ExtrinsicsInput = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: extrinsics.to_path_buf(),
        message: e.to_string(),
    })?;
    let pose = Pose::new(
        Vector3::from(input.theta_deg.map(f64::to_radians)),
        Vector3::from(input.t_m),
    );
    let manifest = Manifest::load(manifest_path)?;
    let frames = load_frames(&manifest)?;

    let mut buf = Vec::new();
    writeln!(buf, "frame,e,cost_px,n_inside,n_all,cells_detected,cells_all,range_m,error").unwrap();
    for f in &frames {
        let report = detect_corners(&f.cloud, &config).and_then(|fc| {
            reprojection_error(
                &pose,
                &fc.board_points(&f.cloud),
                &f.corners,
                &config.board,
                &config.panorama,
                config.eps_g_eval,
                config.fit.n_bins,
            )
        });
        match report {
            Ok(r) => writeln!(
                buf,
                "{},{},{},{},{},{},{},{},",
                f.id, r.e, r.cost, r.n_inside, r.n_all, r.cells_detected, r.cells_all, r.range
            ),
            Err(e) => writeln!(buf, "{},,,,,,,,{}", f.id, e.kind()),
        }
        .unwrap();
    }
    match out {
        Some(p) => std::fs::write(p, &buf).map_err(io_err(p)),
        None => std::io::stdout().write_all(&buf).map_err(io_err(Path::new("<stdout>"))),
    }
}

pub fn simulate(scenario_path: &Path, out_dir: &Path) -> Result<()> {
    let scenario = Scenario::load(scenario_path)?;
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let frames = simulate_frames(
        &scenario.frames,
        &scenario.extrinsics,
        &scenario.config.panorama,
        scenario.pixel_noise,
        scenario.seed,
    )?;
    let mut entries = Vec::with_capacity(frames.len());
    for (k, SimulatedFrame { cloud, truth, corners }) in frames.iter().enumerate() {
        let stem = format!("frame_{k:02}");
        let cloud_name = PathBuf::from(format!("{stem}.csv"));
        let corners_name = PathBuf::from(format!("{stem}_corners.csv"));
        let truth_name = PathBuf::from(format!("{stem}_truth.json"));
        cloud.write_csv(&out_dir.join(&cloud_name))?;
        let corners_path = out_dir.join(&corners_name);
        write_image_corners(File::create(&corners_path).map_err(io_err(&corners_path))?, corners)
            .map_err(io_err(&corners_path))?;
        write_json(&out_dir.join(&truth_name), truth)?;
        println!("{stem}: {} points, {} on the board", cloud.len(), truth.board_indices().len());
        entries.push(ManifestEntry {
            cloud: cloud_name,
            corners2d: corners_name,
            truth: Some(truth_name),
        });
    }
    Manifest::write(&entries, &out_dir.join("manifest.json"))?;
    let config_path = out_dir.join("config.toml");
    std::fs::write(&config_path, scenario.config_file.to_toml()).map_err(io_err(&config_path))?;
    Ok(())
}

/// `axis=v1,v2,...` argument of `sweep`.
#[derive(Debug, Clone, PartialEq)]
pub struct Vary {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

impl FromStr for Vary {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (name, list) = s.split_once('=').ok_or("expected `noise=...` or `distance=...`")?;
        let axis = match name.trim() {
            "noise" => SweepAxis::Noise,
            "distance" => SweepAxis::Distance,
            other => return Err(format!("unknown sweep axis `{other}`; use `noise` or `distance`")),
        };
        let values = list
            .split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|e| format!("bad value `{v}`: {e}")))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        if values.is_empty() || values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err("values must be finite and non-negative".into());
        }
        Ok(Self { axis, values })
    }
}

pub fn sweep(scenario_path: &Path, vary: &Vary, repeats: usize, seed: Option<u64>, out: &Path) -> Result<()> {
    let scenario = Scenario::load(scenario_path)?;
    let base = &scenario.frames[0];
    let rows = simulator::sweep(
        base,
        vary.axis,
        &vary.values,
        repeats,
        seed.unwrap_or(scenario.seed),
        &scenario.config.fit,
    )?;
    let mut w = create(out)?;
    write_sweep_csv(&mut w, &rows).map_err(io_err(out))?;
    for r in &rows {
        println!(
            "{}={}: mean relative error {:.4}% (std {:.4}), {} failures of {}",
            r.axis.name(),
            r.value,
            r.mean_relative,
            r.std_relative,
            r.failures,
            r.repeats
        );
    }
    Ok(())
}
