//! Acceptance run: one line per criterion, non-zero exit if any fails.
//!
//! Every seed below was fixed before the first run.

use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use ilcc_core::board_locator::{theoretical_count, uniformity, SensorModel};
use ilcc_core::calibration::{
    angular_residuals, calibrate, normalized_error, reprojection_error, CorrespondenceSet, Frame, FrameCorrespondence,
};
use ilcc_core::intensity_fit::estimate_gray_zone;
use ilcc_core::optim::{forward_jacobian, levenberg_marquardt, powell_minimize, LmParams, PowellParams};
use ilcc_core::simulator::{simulate_frames, sweep, BoardPlacement, NoiseModel, Primitive, ScenarioSpec, SweepAxis};
use ilcc_core::{BoardSpec, Config, Pose};
use nalgebra::{DMatrix, DVector, Rotation3, Unit, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn deg(v: f64) -> f64 {
    v.to_radians()
}

fn wrapped_deg(a: f64, b: f64) -> f64 {
    (a - b + std::f64::consts::PI).rem_euclid(std::f64::consts::TAU) - std::f64::consts::PI
}

fn truth_extrinsics() -> Pose {
    Pose::new(Vector3::new(deg(2.0), deg(-3.0), deg(90.0)), Vector3::new(0.02, -0.17, 0.19))
}

/// Ten board poses with a wall and a pole behind them.
fn rig(noise: NoiseModel) -> Vec<ScenarioSpec> {
    let background = vec![
        Primitive::Wall {
            center: [0.0, 5.0, 0.0],
            normal: [0.0, -1.0, 0.0],
            width: 12.0,
            height: 4.0,
            intensity: 40.0,
        },
        Primitive::Pole {
            x: -1.5,
            y: 2.0,
            radius: 0.08,
            z_min: -1.7,
            z_max: 1.5,
            intensity: 60.0,
        },
    ];
    [
        (1.2, 70.0, -2.0, 0.0, 20.0, 0.0),
        (1.5, 100.0, 3.0, 5.0, -15.0, 0.0),
        (1.8, 125.0, -4.0, -8.0, 10.0, 5.0),
        (1.3, 85.0, 0.0, 0.0, -25.0, 10.0),
        (1.6, 55.0, 4.0, 8.0, 15.0, -5.0),
        (1.1, 110.0, -3.0, -5.0, 25.0, 0.0),
        (1.7, 80.0, 6.0, 3.0, -10.0, -8.0),
        (1.4, 135.0, 0.0, 10.0, 5.0, 5.0),
        (1.9, 95.0, -6.0, -3.0, -20.0, 0.0),
        (1.25, 45.0, 2.0, 0.0, 30.0, 8.0),
    ]
    .into_iter()
    .map(|(distance, az, el, roll, yaw, pitch)| ScenarioSpec {
        placement: BoardPlacement {
            distance,
            azimuth: deg(az),
            elevation: deg(el),
            roll: deg(roll),
            yaw: deg(yaw),
            pitch: deg(pitch),
        },
        noise,
        background: background.clone(),
        ..ScenarioSpec::default()
    })
    .collect()
}

fn rig_frames(noise: NoiseModel, seed: u64) -> Vec<Frame> {
    let config = Config::default();
    simulate_frames(&rig(noise), &truth_extrinsics(), &config.panorama, 0.0, seed)
        .expect("rig simulates")
        .into_iter()
        .enumerate()
        .map(|(k, f)| Frame {
            id: format!("frame_{k:02}"),
            cloud: f.cloud,
            corners: f.corners,
        })
        .collect()
}

/// Largest per-angle error in degrees and per-axis error in meters.
fn pose_error(p: &Pose, truth: &Pose) -> (f64, f64) {
    let dth = (0..3).map(|k| wrapped_deg(p.theta[k], truth.theta[k]).abs()).fold(0.0, f64::max);
    (dth.to_degrees(), (p.t - truth.t).abs().max())
}

fn noise_at(m: f64) -> NoiseModel {
    NoiseModel {
        multiplier: m,
        ..NoiseModel::default()
    }
}

fn corner_accuracy() -> Outcome {
    let start = Instant::now();
    let base = ScenarioSpec::default();
    let rows = sweep(&base, SweepAxis::Noise, &[1.0], 100, 101, &Config::default().fit).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let r = &rows[0];
    check(
        r.failures == 0 && (0.0..=0.6).contains(&r.mean_relative) && secs <= 300.0,
        format!(
            "m=1, r={} m, 100 repeats: mean relative error {:.4}% (std {:.4}), {} failures, {:.1} s",
            base.placement.distance, r.mean_relative, r.std_relative, r.failures, secs
        ),
    )
}

fn noise_monotonicity() -> Outcome {
    let levels = [1.0, 2.0, 3.0, 4.0];
    let rows = sweep(&ScenarioSpec::default(), SweepAxis::Noise, &levels, 50, 102, &Config::default().fit)
        .map_err(|e| e.to_string())?;
    if rows.iter().any(|r| r.failures > 0) {
        return Err("some runs failed".into());
    }
    let samples: Vec<Vec<f64>> = rows.iter().map(|r| r.runs.iter().map(|e| e.relative).collect()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let resamples = 10_000;
    let resampled_mean = |s: &[f64], rng: &mut ChaCha8Rng| -> f64 {
        (0..s.len()).map(|_| s[rng.random_range(0..s.len())]).sum::<f64>() / s.len() as f64
    };
    let mut confidence = Vec::new();
    for w in samples.windows(2) {
        let wins = (0..resamples)
            .filter(|_| resampled_mean(&w[1], &mut rng) > resampled_mean(&w[0], &mut rng))
            .count();
        confidence.push(wins as f64 / resamples as f64);
    }
    let means: Vec<String> = rows.iter().map(|r| format!("{:.4}", r.mean_relative)).collect();
    let increasing = rows.windows(2).all(|w| w[1].mean_relative > w[0].mean_relative);
    check(
        increasing && confidence.iter().all(|&c| c >= 0.95),
        format!("means {} %, bootstrap P(step up) {confidence:?}", means.join(" < ")),
    )
}

fn distance_insensitivity() -> Outcome {
    let base = ScenarioSpec::default();
    let fit = Config::default().fit;
    let noise = sweep(&base, SweepAxis::Noise, &[1.0, 2.0], 100, 103, &fit).map_err(|e| e.to_string())?;
    let dist = sweep(&base, SweepAxis::Distance, &[1.0, 2.6], 100, 103, &fit).map_err(|e| e.to_string())?;
    let by_distance = dist[1].mean_relative - dist[0].mean_relative;
    let by_noise = noise[1].mean_relative - noise[0].mean_relative;
    check(
        by_distance < by_noise,
        format!(
            "r 1.0 -> 2.6 m adds {by_distance:.4} points of relative error, m 1 -> 2 adds {by_noise:.4} (r=1 m: {:.4}%)",
            dist[0].mean_relative
        ),
    )
}

fn pose_recovery() -> Outcome {
    let config = Config::default();
    let truth = truth_extrinsics();
    let mut lines = Vec::new();
    let mut ok = true;
    for (m, tol_deg, tol_m) in [(0.0, 0.05, 0.002), (1.0, 0.5, 0.01)] {
        let frames = rig_frames(noise_at(m), 104);
        let cal = calibrate(&frames[..5], &config).map_err(|e| e.to_string())?;
        let used = cal.frames.iter().filter(|f| f.used).count();
        let (dth, dt) = pose_error(&cal.extrinsics, &truth);
        ok &= used == 5 && dth <= tol_deg && dt <= tol_m;
        lines.push(format!(
            "m={m}: {dth:.4} deg / {:.2} mm (bound {tol_deg} deg / {:.0} mm, {used} of 5 frames)",
            dt * 1e3,
            tol_m * 1e3
        ));
    }
    check(ok, lines.join("; "))
}

fn frame_count_stability() -> Outcome {
    let config = Config::default();
    let frames = rig_frames(noise_at(1.0), 105);
    let mut poses = Vec::new();
    for k in 4..=10 {
        let cal = calibrate(&frames[..k], &config).map_err(|e| e.to_string())?;
        if cal.frames.iter().any(|f| !f.used) {
            return Err(format!("a frame was dropped at k={k}"));
        }
        poses.push(cal.extrinsics);
    }
    let (mut dth, mut dt) = (0.0f64, 0.0f64);
    for a in &poses {
        for b in &poses {
            let (r, t) = pose_error(a, b);
            dth = dth.max(r);
            dt = dt.max(t);
        }
    }
    check(
        dth <= 0.3 && dt <= 0.01,
        format!("k = 4..10 at m=1: max pairwise spread {dth:.4} deg / {:.2} mm", dt * 1e3),
    )
}

fn reprojection_metric() -> Outcome {
    let e = normalized_error(8.0, 100, 2.0, 24, 48, 1000);
    let hand = e == 0.8;

    let config = Config::default();
    let frames = rig_frames(noise_at(1.0), 106);
    let cal = calibrate(&frames, &config).map_err(|e| e.to_string())?;
    let detected: Vec<_> = frames
        .iter()
        .map(|f| ilcc_core::calibration::detect_corners(&f.cloud, &config).map(|fc| fc.board_points(&f.cloud)))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let mean_e = |pose: &Pose| -> Result<f64, String> {
        let mut sum = 0.0;
        for (f, board) in frames.iter().zip(&detected) {
            sum += reprojection_error(
                pose,
                board,
                &f.corners,
                &config.board,
                &config.panorama,
                config.eps_g_eval,
                config.fit.n_bins,
            )
            .map_err(|e| e.to_string())?
            .e;
        }
        Ok(sum / frames.len() as f64)
    };
    let at_recovered = mean_e(&cal.extrinsics)?;
    let mut rng = ChaCha8Rng::seed_from_u64(206);
    let mut unit = || loop {
        let v = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        if (1e-3..=1.0).contains(&v.norm()) {
            return Unit::new_normalize(v);
        }
    };
    let mut lowest = f64::INFINITY;
    for _ in 0..20 {
        let r = Rotation3::from_axis_angle(&unit(), deg(2.0)).into_inner() * cal.extrinsics.rotation();
        let t = cal.extrinsics.t + unit().into_inner() * 0.02;
        lowest = lowest.min(mean_e(&Pose::from_rotation(&r, t))?);
    }
    check(
        hand && at_recovered <= lowest,
        format!(
            "hand example e = {e}; mean e at recovered pose {at_recovered:.4} vs lowest of 20 perturbations (2 deg, 2 cm) {lowest:.4}"
        ),
    )
}

fn optimizer_suites() -> Outcome {
    let params = PowellParams::default();
    let mut notes = Vec::new();
    let mut ok = true;

    // Coupled quadratic with a known minimizer.
    let xs = [0.7, -1.3, 2.1, 0.4, -0.9];
    let quad = |x: &[f64]| {
        let d: Vec<f64> = x.iter().zip(&xs).map(|(a, b)| a - b).collect();
        d.iter().map(|v| v * v).sum::<f64>() + 0.5 * d.windows(2).map(|w| w[0] * w[1]).sum::<f64>()
    };
    let q = powell_minimize(quad, &[0.0; 5], &params).map_err(|e| e.to_string())?;
    let qerr = q.x.iter().zip(&xs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    ok &= qerr <= 1e-6;
    notes.push(format!("Powell quadratic {qerr:.1e}"));

    let rosen = |x: &[f64]| 100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2);
    let r = powell_minimize(rosen, &[-1.2, 1.0], &params).map_err(|e| e.to_string())?;
    let rerr = (r.x[0] - 1.0).abs().max((r.x[1] - 1.0).abs());
    ok &= rerr <= 1e-4;
    notes.push(format!("Rosenbrock {rerr:.1e}"));

    let mut rng = ChaCha8Rng::seed_from_u64(207);
    let a = DMatrix::<f64>::from_fn(30, 6, |_, _| rng.random_range(-1.0..1.0));
    let b = DVector::<f64>::from_fn(30, |_, _| rng.random_range(-1.0..1.0));
    let linear = |x: &[f64]| -> ilcc_core::Result<Vec<f64>> { Ok((&a * DVector::from_row_slice(x) - &b).as_slice().to_vec()) };
    let lm = levenberg_marquardt(linear, &[0.0; 6], &LmParams::default()).map_err(|e| e.to_string())?;
    let exact = (a.transpose() * &a).cholesky().ok_or("singular normal matrix")?.solve(&(a.transpose() * &b));
    let lerr = (DVector::from_vec(lm.x) - exact).amax();
    ok &= lerr <= 1e-8;
    notes.push(format!("LM vs normal equations {lerr:.1e}"));

    // Forward-difference Jacobian of the angular residuals against central differences.
    let config = Config::default();
    let truth = truth_extrinsics();
    let sims = simulate_frames(&rig(NoiseModel::noiseless())[..3], &truth, &config.panorama, 0.0, 107)
        .map_err(|e| e.to_string())?;
    let set = CorrespondenceSet {
        frames: sims
            .iter()
            .enumerate()
            .map(|(k, s)| FrameCorrespondence {
                frame_id: k.to_string(),
                lidar: s.truth.corners.clone(),
                image: s.corners.clone(),
            })
            .collect(),
    };
    let res = |x: &[f64]| angular_residuals(&Pose::from_params(x), &set, &config.panorama);
    let h = LmParams::default().fd_step;
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let mut x = truth.params();
        for (k, v) in x.iter_mut().enumerate() {
            *v += if k < 3 { deg(rng.random_range(-5.0..5.0)) } else { rng.random_range(-0.05..0.05) };
        }
        let r0 = DVector::from_vec(res(&x).map_err(|e| e.to_string())?);
        let fwd = forward_jacobian(&res, &x, &r0, h).map_err(|e| e.to_string())?;
        let mut central = DMatrix::zeros(r0.len(), 6);
        for k in 0..6 {
            let (mut xp, mut xm) = (x, x);
            xp[k] += h;
            xm[k] -= h;
            let d = (DVector::from_vec(res(&xp).map_err(|e| e.to_string())?)
                - DVector::from_vec(res(&xm).map_err(|e| e.to_string())?))
                / (2.0 * h);
            central.set_column(k, &d);
        }
        worst = worst.max((fwd - &central).norm() / central.norm());
    }
    ok &= worst <= 1e-4;
    notes.push(format!("forward vs central Jacobian {worst:.1e} relative"));
    check(ok, notes.join(", "))
}

fn detection_filters() -> Outcome {
    let spec = BoardSpec::default();
    let sensor = SensorModel::default();
    let n1 = theoretical_count(&spec, &sensor, 1.0).map_err(|e| e.to_string())?;
    let n2 = theoretical_count(&spec, &sensor, 2.0).map_err(|e| e.to_string())?;
    let (u1, u2) = (uniformity([25, 25, 25, 25]), uniformity([40, 10, 30, 20]));
    let mut two_level = vec![20.0; 300];
    two_level.extend([100.0; 200]);
    let z4 = estimate_gray_zone(&two_level, 4.0, 64).map_err(|e| e.to_string())?;
    let z2 = estimate_gray_zone(&two_level, 2.0, 64).map_err(|e| e.to_string())?;
    check(
        n1 == 4025 && n2 == 960 && u1 == 1.0 && u2 == 0.7 && (z4.tau_l, z4.tau_h) == (40.0, 80.0) && z2.tau_l == z2.tau_h,
        format!(
            "n_theo {n1} / {n2}; uniformity {u1} / {u2}; gray zone [{}, {}] at eps_g=4, [{}, {}] at eps_g=2",
            z4.tau_l, z4.tau_h, z2.tau_l, z2.tau_h
        ),
    )
}

const SCENARIO: &str = r#"
seed = 108

[extrinsics]
theta_deg = [2.0, -3.0, 90.0]
t = [0.02, -0.17, 0.19]

[[frames]]
distance = 1.2
azimuth_deg = 70.0
elevation_deg = -2.0
yaw_deg = 20.0

[[frames]]
distance = 1.5
azimuth_deg = 100.0
elevation_deg = 3.0
roll_deg = 5.0
yaw_deg = -15.0

[[frames]]
distance = 1.8
azimuth_deg = 125.0
elevation_deg = -4.0
roll_deg = -8.0
yaw_deg = 10.0
pitch_deg = 5.0

[[frames]]
distance = 1.3
azimuth_deg = 85.0
yaw_deg = -25.0
pitch_deg = 10.0

[[frames]]
distance = 1.6
azimuth_deg = 55.0
elevation_deg = 4.0
roll_deg = 8.0
yaw_deg = 15.0
pitch_deg = -5.0
"#;

fn run_cli(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_ilcc"))
        .current_dir(dir)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

fn determinism() -> Outcome {
    let dir = tempfile::TempDir::new().map_err(|e| e.to_string())?;
    let p = dir.path();
    fs::write(p.join("scenario.toml"), SCENARIO).map_err(|e| e.to_string())?;
    run_cli(p, &["simulate", "--scenario", "scenario.toml", "--out-dir", "sim"])?;
    let mut same = Vec::new();
    for (name, args) in [
        ("calibrate", vec!["calibrate", "--frames", "sim/manifest.json", "--config", "sim/config.toml", "--out"]),
        ("sweep", vec!["--jobs", "4", "sweep", "--scenario", "scenario.toml", "--vary", "noise=1,2", "--repeats", "20", "--out"]),
    ] {
        let mut bytes = Vec::new();
        for run in ["a", "b"] {
            let out = format!("{name}_{run}.out");
            let mut a = args.clone();
            a.push(&out);
            run_cli(p, &a)?;
            bytes.push(fs::read(p.join(&out)).map_err(|e| e.to_string())?);
        }
        same.push((name, bytes[0] == bytes[1], bytes[0].len()));
    }
    check(
        same.iter().all(|s| s.1),
        same.iter()
            .map(|(n, eq, len)| format!("{n}: {} ({len} bytes)", if *eq { "identical" } else { "differs" }))
            .collect::<Vec<_>>()
            .join(", "),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("corner accuracy at baseline noise", corner_accuracy),
        ("error grows with noise", noise_monotonicity),
        ("distance matters less than noise", distance_insensitivity),
        ("end-to-end pose recovery", pose_recovery),
        ("stability over 4..10 frames", frame_count_stability),
        ("re-projection metric", reprojection_metric),
        ("optimizer suites", optimizer_suites),
        ("detection filters", detection_filters),
        ("byte-identical reruns", determinism),
    ];
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {}: PASS  {name}: {detail} [{secs:.1} s]", k + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {}: FAIL  {name}: {detail} [{secs:.1} s]", k + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
