use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use gaitrecon::eval::{bench, mse_eval, phase_accuracy};
use gaitrecon::hmm::{EmConfig, HierarchicalModel};
use gaitrecon::motion::io::{read_imu_csv, read_motion_csv, write_imu_csv, write_motion_csv};
use gaitrecon::motion::{extract_features_multi, sensor_features, ImuStream, Skeleton};
use gaitrecon::reconstruction::{ReconstructConfig, ReconstructionState};
use gaitrecon::segmentation::{segment_auto, segment_gait, GaitPhase, SegmentParams};
use gaitrecon::synth::{
    generate_with_schedule, simulate_imu, GaitNoise, GaitSpec, ImuNoise, MotionType, SensorMount, GRAVITY,
};
use gaitrecon::train::{train, TrainConfig, TrainingClip};
use gaitrecon::Error;

const LOG_ENV: &str = "GAITRECON_LOG";

#[derive(Parser, Debug)]
#[command(
    name = "gaitrecon",
    version,
    about = "Full-body locomotion reconstruction from body-worn IMUs",
    after_help = "Exit codes: 0 ok, 2 missing input, 3 parse error, 4 numerical failure, \
                  5 segmentation failure, 1 anything else.\n\
                  Logging: GAITRECON_LOG=error|warn|info|debug (default warn)."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic motion clip and its simulated IMU streams.
    Synth(SynthArgs),
    /// Split a motion clip into gait or flight phases.
    Segment(SegmentArgs),
    /// Train a reconstruction model from motion/IMU pairs.
    Train(TrainArgs),
    /// Reconstruct full-body motion from IMU streams.
    Reconstruct(ReconstructArgs),
    /// Compare a reconstructed clip with ground truth.
    Eval(EvalArgs),
    /// Time the per-frame reconstruction step.
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Motion type [walk, run, jump, hop or idle].
    #[arg(long = "type", value_name = "TYPE", default_value = "walk")]
    motion_type: String,
    /// Number of cycles [count].
    #[arg(long, default_value_t = 8)]
    cycles: usize,
    /// Frame rate [frames/s].
    #[arg(long, default_value_t = 30.0)]
    fps: f64,
    /// Random seed for gait and sensor noise [integer].
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Cycle duration [s]; defaults per motion type.
    #[arg(long, value_name = "SECONDS")]
    cycle_duration: Option<f64>,
    /// Distance covered per cycle [m]; defaults per motion type.
    #[arg(long, value_name = "METERS")]
    stride: Option<f64>,
    /// Heading drift [rad/s].
    #[arg(long, default_value_t = 0.0, value_name = "RAD_PER_S")]
    turn_rate: f64,
    /// Add per-cycle variation of stride, timing, arm swing and trunk [flag].
    #[arg(long)]
    gait_noise: bool,
    /// Accelerometer white-noise standard deviation [m/s²].
    #[arg(long, default_value_t = 0.0, value_name = "M_PER_S2")]
    accel_noise: f64,
    /// Gyroscope white-noise standard deviation [rad/s].
    #[arg(long, default_value_t = 0.0, value_name = "RAD_PER_S")]
    gyro_noise: f64,
    /// Sensor joints, comma-separated [joint names].
    #[arg(long, default_value = "right_ankle", value_delimiter = ',')]
    mount: Vec<String>,
    /// Output motion CSV [path].
    #[arg(long)]
    out_motion: PathBuf,
    /// Output IMU CSV, one per mount, comma-separated [paths].
    #[arg(long, value_delimiter = ',', required = true)]
    out_imu: Vec<PathBuf>,
    /// Output per-frame phase schedule CSV [path].
    #[arg(long)]
    out_phases: Option<PathBuf>,
    /// Output skeleton JSON [path].
    #[arg(long)]
    out_skeleton: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct ContactArgs {
    /// Heel/toe contact height threshold [m].
    #[arg(long, default_value_t = 0.03, value_name = "METERS")]
    height_eps: f64,
    /// Heel/toe contact speed threshold [m/s].
    #[arg(long, default_value_t = 0.15, value_name = "M_PER_S")]
    vel_eps: f64,
    /// Peak vertical root speed a contact-free interval needs to count as flight [m/s].
    #[arg(long, default_value_t = 0.3, value_name = "M_PER_S")]
    min_flight_speed: f64,
}

impl ContactArgs {
    fn params(&self) -> SegmentParams {
        SegmentParams {
            height_eps: self.height_eps,
            vel_eps: self.vel_eps,
            min_flight_speed: self.min_flight_speed,
        }
    }
}

#[derive(Args, Debug)]
struct SegmentArgs {
    /// Motion CSV [path].
    #[arg(long)]
    motion: PathBuf,
    /// IMU CSV; comma-separated for several sensors [paths].
    #[arg(long, value_delimiter = ',', required = true)]
    imu: Vec<PathBuf>,
    /// Skeleton JSON [path]; defaults to the built-in 18-joint biped.
    #[arg(long)]
    skeleton: Option<PathBuf>,
    /// Frame rate of the inputs [frames/s].
    #[arg(long, default_value_t = 30.0)]
    fps: f64,
    #[command(flatten)]
    contact: ContactArgs,
    /// Require walk/run gait phases and fail if no gait cycle is found [flag].
    #[arg(long)]
    gait: bool,
    /// Output segments JSON [path].
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Motion CSV; repeat once per clip [path].
    #[arg(long, required = true)]
    motion: Vec<PathBuf>,
    /// IMU CSV of the matching clip; repeat once per clip, comma-join several sensors [paths].
    #[arg(long, required = true)]
    imu: Vec<String>,
    /// Family label of the matching clip; repeat once per clip [name].
    #[arg(long)]
    family: Vec<String>,
    /// Skeleton JSON [path]; defaults to the built-in 18-joint biped.
    #[arg(long)]
    skeleton: Option<PathBuf>,
    /// Frame rate of the inputs [frames/s].
    #[arg(long, default_value_t = 30.0)]
    fps: f64,
    /// Candidate states blended per output frame [count].
    #[arg(long, default_value_t = 5)]
    k: usize,
    /// Observation window kept for recovery [frames].
    #[arg(long, default_value_t = 3)]
    window: usize,
    /// Global Gaussian states fitted by EM [count].
    #[arg(long, default_value_t = 8)]
    states: usize,
    /// EM stopping tolerance [log-likelihood per frame].
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    /// EM iteration cap [count].
    #[arg(long, default_value_t = 200)]
    max_iter: usize,
    /// Covariance diagonal floor [standardized units²].
    #[arg(long, default_value_t = 1e-6)]
    reg_floor: f64,
    /// Lower bound of per-frame sensor sigmas [standardized units].
    #[arg(long, default_value_t = 0.1)]
    sigma_floor: f64,
    /// EM seed [integer].
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Linearly resample IMU streams to the motion length [flag].
    #[arg(long)]
    resample: bool,
    #[command(flatten)]
    contact: ContactArgs,
    /// Output model JSON [path].
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ReconstructArgs {
    /// Model JSON [path].
    #[arg(long)]
    model: PathBuf,
    /// IMU CSV; comma-separated for several sensors, in training order [paths].
    #[arg(long, value_delimiter = ',', required = true)]
    imu: Vec<PathBuf>,
    /// Candidate states blended per frame [count]; defaults to the model's K.
    #[arg(long)]
    k: Option<usize>,
    /// Observation window kept for recovery [frames]; defaults to the model's W.
    #[arg(long)]
    window: Option<usize>,
    /// Disable foot locking [flag].
    #[arg(long)]
    no_footlock: bool,
    /// Longest crossfade on a phase switch [frames].
    #[arg(long, default_value_t = 8)]
    blend_frames: usize,
    /// Root speed at which the crossfade halves [m/s].
    #[arg(long, default_value_t = 1.0, value_name = "M_PER_S")]
    blend_speed: f64,
    /// Heading of the first frame [rad].
    #[arg(long, default_value_t = 0.0, value_name = "RAD")]
    heading: f64,
    /// Output motion CSV [path].
    #[arg(long)]
    out: PathBuf,
    /// Output per-frame phase and posterior CSV [path].
    #[arg(long)]
    emit_phases: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Predicted motion CSV [path].
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth motion CSV [path].
    #[arg(long)]
    truth: PathBuf,
    /// Skeleton JSON [path]; defaults to the built-in 18-joint biped.
    #[arg(long)]
    skeleton: Option<PathBuf>,
    /// Frame rate of both clips [frames/s].
    #[arg(long, default_value_t = 30.0)]
    fps: f64,
    /// Predicted phases CSV from reconstruct --emit-phases [path].
    #[arg(long, requires = "truth_phases")]
    pred_phases: Option<PathBuf>,
    /// Ground-truth phases CSV from synth --out-phases [path].
    #[arg(long, requires = "pred_phases")]
    truth_phases: Option<PathBuf>,
    /// Leading frames left out of phase accuracy [frames].
    #[arg(long, default_value_t = 30)]
    warmup: usize,
    /// Output report JSON [path]; the summary is printed either way.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Model JSON [path].
    #[arg(long)]
    model: PathBuf,
    /// IMU CSV; comma-separated for several sensors [paths].
    #[arg(long, value_delimiter = ',', required = true)]
    imu: Vec<PathBuf>,
    /// Output report JSON [path].
    #[arg(long)]
    json: Option<PathBuf>,
}

/// A failure with its process exit code.
#[derive(Debug)]
struct Failure {
    code: u8,
    msg: String,
}

impl Failure {
    fn new(code: u8, msg: impl Into<String>) -> Self {
        Self {
            code,
            msg: msg.into(),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.msg)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Io { .. } => 2,
            Error::Parse { .. } => 3,
            Error::Singular { .. } | Error::Conditioning(_) | Error::TrackingLost => 4,
            Error::Segmentation { .. } => 5,
            _ => 1,
        };
        Failure::new(code, e.to_string())
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn write_file(path: &Path, contents: &str) -> CliResult {
    std::fs::write(path, contents)
        .map_err(|e| Failure::new(1, format!("cannot write {}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Failure::new(1, e.to_string()))?;
    text.push('\n');
    write_file(path, &text)
}

fn load_skeleton(path: Option<&Path>) -> CliResult<Arc<Skeleton>> {
    Ok(Arc::new(match path {
        Some(p) => Skeleton::load(p)?,
        None => Skeleton::biped18(),
    }))
}

fn read_imus(paths: &[PathBuf], fps: f64) -> CliResult<Vec<ImuStream>> {
    Ok(paths
        .iter()
        .map(|p| read_imu_csv(p, fps))
        .collect::<Result<Vec<_>, _>>()?)
}

fn split_paths(joined: &str) -> Vec<PathBuf> {
    joined.split(',').map(|s| PathBuf::from(s.trim())).collect()
}

fn synth(a: &SynthArgs) -> CliResult {
    let ty: MotionType = a.motion_type.parse()?;
    if a.mount.len() != a.out_imu.len() {
        return Err(Failure::new(
            1,
            format!("{} mounts but {} --out-imu paths", a.mount.len(), a.out_imu.len()),
        ));
    }
    let mut spec = GaitSpec::new(ty)
        .cycles(a.cycles)
        .fps(a.fps)
        .seed(a.seed)
        .turn_rate(a.turn_rate);
    if let Some(d) = a.cycle_duration {
        spec.cycle_duration = d;
    }
    if let Some(s) = a.stride {
        spec.stride_length = s;
    }
    if a.gait_noise {
        spec = spec.noise(GaitNoise::default());
    }
    let skeleton = Arc::new(Skeleton::biped18());
    let g = generate_with_schedule(&spec, &skeleton)?;
    write_file(&a.out_motion, &write_motion_csv(&g.clip.frames))?;
    for (i, (joint, out)) in a.mount.iter().zip(&a.out_imu).enumerate() {
        let mount = SensorMount::named(&skeleton, joint.trim())?;
        let noise = (a.accel_noise > 0.0 || a.gyro_noise > 0.0).then_some(ImuNoise {
            accel_std: a.accel_noise,
            gyro_std: a.gyro_noise,
            seed: a.seed.wrapping_mul(1000).wrapping_add(i as u64),
        });
        let imu = simulate_imu(&g.clip, &mount, GRAVITY, noise.as_ref())?;
        write_file(out, &write_imu_csv(&imu))?;
    }
    if let Some(p) = &a.out_phases {
        let mut text = String::from("frame,phase\n");
        for (t, phase) in g.schedule.iter().enumerate() {
            text.push_str(&format!("{t},{phase}\n"));
        }
        write_file(p, &text)?;
    }
    if let Some(p) = &a.out_skeleton {
        write_file(p, &(skeleton.to_json_string() + "\n"))?;
    }
    log::info!("synthesized {} frames of {}", g.clip.len(), ty);
    Ok(())
}

#[derive(Serialize)]
struct SegmentRecord {
    phase: GaitPhase,
    start: usize,
    end: usize,
}

fn segment(a: &SegmentArgs) -> CliResult {
    let skeleton = load_skeleton(a.skeleton.as_deref())?;
    let clip = read_motion_csv(&a.motion, skeleton, a.fps)?;
    let imus = read_imus(&a.imu, a.fps)?;
    let obs = extract_features_multi(&clip, &imus)?;
    let segs = if a.gait {
        segment_gait(&clip, &obs, &a.contact.params(), true)?
    } else {
        segment_auto(&clip, &obs, &a.contact.params())?
    };
    let records: Vec<SegmentRecord> = segs
        .iter()
        .map(|s| SegmentRecord {
            phase: s.phase,
            start: s.start,
            end: s.end,
        })
        .collect();
    println!("{} segments", records.len());
    write_json(&a.out, &records)
}

fn train_cmd(a: &TrainArgs) -> CliResult {
    if a.imu.len() != a.motion.len() {
        return Err(Failure::new(
            1,
            format!(
                "{} --motion files but {} --imu groups",
                a.motion.len(),
                a.imu.len()
            ),
        ));
    }
    if !a.family.is_empty() && a.family.len() != a.motion.len() {
        return Err(Failure::new(
            1,
            format!(
                "{} --motion files but {} --family labels",
                a.motion.len(),
                a.family.len()
            ),
        ));
    }
    let skeleton = load_skeleton(a.skeleton.as_deref())?;
    let mut clips = Vec::with_capacity(a.motion.len());
    for (i, (m, imu)) in a.motion.iter().zip(&a.imu).enumerate() {
        let motion = read_motion_csv(m, skeleton.clone(), a.fps)?;
        let mut imus = read_imus(&split_paths(imu), a.fps)?;
        for s in &mut imus {
            if s.len() != motion.len() {
                if !a.resample {
                    return Err(Failure::new(
                        1,
                        format!(
                            "{} has {} frames but its IMU stream has {}; pass --resample to interpolate",
                            m.display(),
                            motion.len(),
                            s.len()
                        ),
                    ));
                }
                log::info!(
                    "resampling IMU stream from {} to {} frames",
                    s.len(),
                    motion.len()
                );
                *s = s.resample(motion.len())?;
            }
        }
        let mut clip = TrainingClip::new(motion, imus);
        if let Some(f) = a.family.get(i) {
            clip = clip.family(f);
        }
        clips.push(clip);
    }
    let config = TrainConfig {
        fps: a.fps,
        k: a.k,
        w: a.window,
        segment: a.contact.params(),
        em: EmConfig {
            n_states: a.states,
            max_iter: a.max_iter,
            tol: a.tol,
            reg_floor: a.reg_floor,
            seed: a.seed,
        },
        sigma_floor: a.sigma_floor,
    };
    let (model, report) = train(&clips, &config)?;
    for (family, phase, n) in &report.phase_counts {
        println!("{family}\t{phase}\t{n} segments");
    }
    println!(
        "{} frames, {} segments, {} EM iterations, final log-likelihood {:.6}",
        report.frames, report.segments, report.em_iterations, report.final_log_likelihood
    );
    write_file(&a.out, &model.to_json()?)
}

fn reconstruct(a: &ReconstructArgs) -> CliResult {
    let model = Arc::new(HierarchicalModel::load(&a.model)?);
    let imus = read_imus(&a.imu, model.fps)?;
    let ys = sensor_features(&imus)?;
    let mut config = ReconstructConfig::for_model(&model);
    config.k = a.k.unwrap_or(config.k);
    config.w = a.window.unwrap_or(config.w);
    config.foot_lock = !a.no_footlock;
    config.blend_frames = a.blend_frames;
    config.blend_ref_speed = a.blend_speed;
    config.initial_heading = a.heading;
    let mut state = ReconstructionState::new(model.clone(), config)?;
    let mut poses = Vec::with_capacity(ys.len());
    let mut phases = String::from("frame,family,phase,posterior\n");
    let mut resets = 0;
    for (t, y) in ys.iter().enumerate() {
        let out = state.step(y)?;
        resets += usize::from(out.reset);
        phases.push_str(&format!(
            "{t},{},{},{}\n",
            model.phases[out.phase].family, out.phase_label, out.posterior
        ));
        poses.push(out.pose);
    }
    if resets > 0 {
        log::warn!("tracking was lost and recovered {resets} times");
    }
    write_file(&a.out, &write_motion_csv(&poses))?;
    if let Some(p) = &a.emit_phases {
        write_file(p, &phases)?;
    }
    Ok(())
}

fn read_phase_column(path: &Path) -> CliResult<Vec<GaitPhase>> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        Failure::from(Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    })?;
    let parse_err = |line: u64, msg: String| {
        Failure::from(Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        })
    };
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let col = rdr
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .iter()
        .position(|h| h == "phase")
        .ok_or_else(|| parse_err(1, "no 'phase' column".into()))?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| parse_err(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let field = rec
            .get(col)
            .ok_or_else(|| parse_err(line, "missing phase".into()))?;
        out.push(field.parse().map_err(|e: Error| parse_err(line, e.to_string()))?);
    }
    Ok(out)
}

fn eval(a: &EvalArgs) -> CliResult {
    let skeleton = load_skeleton(a.skeleton.as_deref())?;
    let pred = read_motion_csv(&a.pred, skeleton.clone(), a.fps)?;
    let truth = read_motion_csv(&a.truth, skeleton, a.fps)?;
    let mut report = mse_eval(&pred, &truth)?;
    if let (Some(p), Some(t)) = (&a.pred_phases, &a.truth_phases) {
        let p = read_phase_column(p)?;
        let t = read_phase_column(t)?;
        report.phase_accuracy = Some(phase_accuracy(&p, &t, a.warmup));
    }
    println!(
        "frames {}  rmse {:.3} cm  mse {:.3} cm²",
        report.frames, report.rmse_cm, report.mse_cm2
    );
    if let Some(acc) = report.phase_accuracy {
        println!("phase accuracy {:.2}%", acc * 100.0);
    }
    if let Some(p) = &a.json {
        write_json(p, &report)?;
    }
    Ok(())
}

fn bench_cmd(a: &BenchArgs) -> CliResult {
    let model = Arc::new(HierarchicalModel::load(&a.model)?);
    let imus = read_imus(&a.imu, model.fps)?;
    let ys = sensor_features(&imus)?;
    let report = bench(model, &ys)?;
    println!(
        "{} database frames, {} segments: {:.1} fps, {:.3} ms per frame",
        report.database_frames,
        report.segments,
        report.fps,
        report.latency_s * 1e3
    );
    if let Some(p) = &a.json {
        write_json(p, &report)?;
    }
    Ok(())
}

fn init_logging() {
    let level = match std::env::var(LOG_ENV) {
        Ok(v) => match v.to_ascii_lowercase().as_str() {
            l @ ("error" | "warn" | "info" | "debug") => l.to_string(),
            other => {
                eprintln!("warning: {LOG_ENV}='{other}' is not one of error, warn, info, debug; using warn");
                "warn".to_string()
            }
        },
        Err(_) => "warn".to_string(),
    };
    env_logger::Builder::new()
        .parse_filters(&level)
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .init();
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind::*;
            let code = match e.kind() {
                DisplayHelp | DisplayVersion | DisplayHelpOnMissingArgumentOrSubcommand => 0,
                MissingRequiredArgument | MissingSubcommand => 2,
                InvalidValue | ValueValidation => 3,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    init_logging();
    let result = match &cli.command {
        Command::Synth(a) => synth(a),
        Command::Segment(a) => segment(a),
        Command::Train(a) => train_cmd(a),
        Command::Reconstruct(a) => reconstruct(a),
        Command::Eval(a) => eval(a),
        Command::Bench(a) => bench_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code)
        }
    }
}
