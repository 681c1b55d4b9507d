//! Command-line front end: `synth`, `estimate`, `bench` and `eval`.
//!
//! Exit codes: 0 on success, 1 on bad input or usage, 2 when estimation
//! failed for at least one frame pair.

use std::ffi::OsString;
use std::fs;
use std::io::{Read, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::RngCore;
use rayon::prelude::*;

use crate::geometry::{ImuAttitude, ImuAttitudePair, PoseHypothesis};
use crate::io::{
    format_dataset, format_estimates, format_eval_csv, load_kitti_poses, kitti_relative_pose,
    parse_dataset, parse_estimates, representable_angle, Dataset, EstimateOutcome, EstimateRecord,
    EvalRow, FramePair,
};
use crate::ransac::{preemptive_tol_for_noise, ransac_estimate, RansacConfig, SolverKind};
use crate::synth::{
    generate_instance_with_rng, trial_rng, write_grid_csv, run_experiment_grid, GridSpec, MotionSpec,
    NoiseConfig, SceneConfig, GRID_NAMES,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_DATA: i32 = 1;
pub const EXIT_ESTIMATION: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "mcpose", version, about = "Multi-camera relative pose from affine correspondences")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset.
    Synth(SynthArgs),
    /// Estimate the relative pose of every frame pair of a dataset.
    Estimate(EstimateArgs),
    /// Run a named experiment grid and write its CSV table.
    Bench(BenchArgs),
    /// Compare estimates with ground truth.
    Eval(EvalArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MotionArg {
    Planar,
    Vertical,
}

#[derive(Debug, Args)]
pub struct RansacArgs {
    #[arg(long, default_value = "planar-2ac")]
    pub solver: SolverKind,
    /// Inlier threshold angle, degrees.
    #[arg(long, default_value_t = 0.1)]
    pub threshold_deg: f64,
    #[arg(long, default_value_t = 0.99)]
    pub confidence: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Switch::On)]
    pub preemptive: Switch,
    /// Relative residual tolerance of the preemptive test; derived from the
    /// expected image noise when omitted.
    #[arg(long)]
    pub preemptive_tol: Option<f64>,
    #[arg(long, default_value_t = crate::ransac::DEFAULT_MAX_ITERATIONS)]
    pub max_iterations: usize,
}

impl RansacArgs {
    fn config(&self, expected_noise_px: f64) -> RansacConfig {
        RansacConfig {
            confidence: self.confidence,
            inlier_threshold: self.threshold_deg.to_radians(),
            max_iterations: self.max_iterations,
            solver: self.solver,
            preemptive: self.preemptive == Switch::On,
            preemptive_residual_tol: self
                .preemptive_tol
                .unwrap_or_else(|| preemptive_tol_for_noise(expected_noise_px)),
            seed: self.seed,
            ..RansacConfig::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of frame pairs.
    #[arg(long, default_value_t = 10)]
    pub pairs: usize,
    #[arg(long, value_enum, default_value_t = MotionArg::Planar)]
    pub motion: MotionArg,
    /// Image noise standard deviation, pixels.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    /// Non-planar motion noise, degrees.
    #[arg(long, default_value_t = 0.0)]
    pub nonplanar_noise: f64,
    /// Roll and pitch noise of the attitudes, degrees.
    #[arg(long, default_value_t = 0.0)]
    pub imu_noise: f64,
    /// Fraction of gross outliers.
    #[arg(long, default_value_t = 0.0)]
    pub outliers: f64,
    /// Mount both cameras at the same height.
    #[arg(long)]
    pub equal_heights: bool,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// Dataset file; standard input when omitted or `-`.
    pub input: Option<PathBuf>,
    #[command(flatten)]
    pub ransac: RansacArgs,
    /// Expected image noise in pixels, used to scale the preemptive tolerance.
    #[arg(long, default_value_t = 1.0)]
    pub expected_noise_px: f64,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(GRID_NAMES))]
    pub grid: String,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Run only this solver.
    #[arg(long)]
    pub solver: Option<SolverKind>,
    #[arg(long, default_value_t = 0.1)]
    pub threshold_deg: f64,
    #[arg(long, default_value_t = 0.99)]
    pub confidence: f64,
    #[arg(long, value_enum, default_value_t = Switch::On)]
    pub preemptive: Switch,
    /// Fixed preemptive tolerance instead of one scaled by each cell's noise.
    #[arg(long)]
    pub preemptive_tol: Option<f64>,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Estimates file; standard input when omitted or `-`.
    pub input: Option<PathBuf>,
    /// KITTI pose file; pair ids are frame indices `k` of the motion `k -> k+1`.
    #[arg(long)]
    pub kitti_gt: Option<PathBuf>,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

enum Failure {
    Data(String),
    Estimation(String),
}

type Outcome = Result<(), Failure>;

fn data<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Data(e.to_string())
}

fn read_input(path: &Option<PathBuf>, stdin: &mut dyn Read) -> Result<String, Failure> {
    match path {
        Some(p) if p.as_os_str() != "-" => {
            fs::read_to_string(p).map_err(|e| Failure::Data(format!("{}: {e}", p.display())))
        }
        _ => {
            let mut s = String::new();
            stdin
                .read_to_string(&mut s)
                .map_err(|e| Failure::Data(format!("standard input: {e}")))?;
            Ok(s)
        }
    }
}

fn write_output(path: &Option<PathBuf>, stdout: &mut dyn Write, bytes: &[u8]) -> Outcome {
    match path {
        Some(p) if p.as_os_str() != "-" => {
            fs::write(p, bytes).map_err(|e| Failure::Data(format!("{}: {e}", p.display())))
        }
        _ => stdout.write_all(bytes).and_then(|_| stdout.flush()).map_err(data),
    }
}

fn synth(args: &SynthArgs, stdout: &mut dyn Write) -> Outcome {
    let scene = SceneConfig {
        outlier_ratio: args.outliers,
        ..SceneConfig::default()
    };
    let scene = if args.equal_heights { scene.equal_heights() } else { scene };
    let motion = match args.motion {
        MotionArg::Planar => MotionSpec::planar(),
        MotionArg::Vertical => MotionSpec::vertical(),
    };
    let noise = NoiseConfig {
        image_noise_std: args.noise,
        nonplanar_noise: args.nonplanar_noise,
        imu_roll_noise: args.imu_noise,
        imu_pitch_noise: args.imu_noise,
    };
    scene.validate().map_err(data)?;
    noise.validate().map_err(data)?;

    let pairs = (0..args.pairs)
        .into_par_iter()
        .map(|i| {
            let inst = generate_instance_with_rng(&scene, &motion, &noise, &mut trial_rng(args.seed, 0, i as u64))
                .map_err(data)?;
            let snap = |a: ImuAttitude| ImuAttitude::new(representable_angle(a.roll), representable_angle(a.pitch));
            Ok(FramePair {
                id: i.to_string(),
                acs: inst.acs,
                attitudes: matches!(motion, MotionSpec::Vertical { .. })
                    .then(|| ImuAttitudePair::new(snap(inst.attitudes.frame_k), snap(inst.attitudes.frame_k1))),
                ground_truth: Some(PoseHypothesis::general(inst.pose.rotation, inst.pose.translation)),
            })
        })
        .collect::<Result<Vec<_>, Failure>>()?;
    let dataset = Dataset {
        rig: scene.rig(),
        pairs,
    };
    write_output(&args.output, stdout, format_dataset(&dataset).as_bytes())
}

fn estimate(args: &EstimateArgs, stdin: &mut dyn Read, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Outcome {
    let text = read_input(&args.input, stdin)?;
    let dataset = parse_dataset(&text).map_err(data)?;
    if !(args.expected_noise_px >= 0.0) {
        return Err(Failure::Data("--expected-noise-px must be non-negative".into()));
    }
    let config = args.ransac.config(args.expected_noise_px);
    config.validate().map_err(data)?;
    if config.solver.needs_attitudes() {
        if let Some(p) = dataset.pairs.iter().find(|p| p.attitudes.is_none()) {
            return Err(Failure::Data(format!(
                "solver {} needs attitude records, but pair '{}' has none",
                config.solver, p.id
            )));
        }
    }

    let records: Vec<EstimateRecord> = dataset
        .pairs
        .par_iter()
        .enumerate()
        .map(|(i, pair)| {
            let cfg = RansacConfig {
                seed: trial_rng(config.seed, 1, i as u64).next_u64(),
                ..config.clone()
            };
            let outcome = match ransac_estimate(&dataset.rig, &pair.acs, &cfg, pair.attitudes.as_ref()) {
                Ok(res) => EstimateOutcome::Pose {
                    pose: res.pose,
                    inliers: res.inlier_count,
                    total: pair.acs.len(),
                    iterations: res.iterations,
                },
                Err(e) => EstimateOutcome::Failed { reason: e.to_string() },
            };
            EstimateRecord {
                id: pair.id.clone(),
                outcome: Some(outcome),
                ground_truth: pair.ground_truth,
            }
        })
        .collect();

    write_output(&args.output, stdout, format_estimates(&records).as_bytes())?;
    let failed: Vec<&str> = records
        .iter()
        .filter(|r| matches!(r.outcome, Some(EstimateOutcome::Failed { .. })))
        .map(|r| r.id.as_str())
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        let _ = writeln!(stderr, "estimation failed for {} of {} pairs", failed.len(), records.len());
        Err(Failure::Estimation(format!("failed pairs: {}", failed.join(" "))))
    }
}

fn bench(args: &BenchArgs, stdout: &mut dyn Write) -> Outcome {
    let mut spec = GridSpec::named(&args.grid).map_err(data)?;
    spec.master_seed = args.seed;
    if let Some(t) = args.trials {
        spec.trials = t;
    }
    if let Some(s) = args.solver {
        if !spec.solvers.contains(&s) {
            return Err(Failure::Data(format!("grid {} does not run solver {s}", spec.name)));
        }
        spec.solvers = vec![s];
    }
    spec.ransac.inlier_threshold = args.threshold_deg.to_radians();
    spec.ransac.confidence = args.confidence;
    spec.ransac.preemptive = args.preemptive == Switch::On;
    if let Some(tol) = args.preemptive_tol {
        spec.ransac.preemptive_residual_tol = tol;
        spec.preemptive_tol_from_noise = false;
    }
    spec.ransac.validate().map_err(data)?;
    let cells = run_experiment_grid(&spec);
    let mut buf = Vec::new();
    write_grid_csv(&mut buf, &cells).map_err(data)?;
    write_output(&args.output, stdout, &buf)
}

fn eval(args: &EvalArgs, stdin: &mut dyn Read, stdout: &mut dyn Write) -> Outcome {
    let text = read_input(&args.input, stdin)?;
    let records = parse_estimates(&text).map_err(data)?;
    let kitti = match &args.kitti_gt {
        Some(p) => Some(load_kitti_poses(p).map_err(data)?),
        None => None,
    };
    let mut rows = Vec::with_capacity(records.len());
    for rec in &records {
        let gt = match &kitti {
            Some(poses) => {
                let k: usize = rec
                    .id
                    .parse()
                    .map_err(|_| Failure::Data(format!("pair id '{}' is not a KITTI frame index", rec.id)))?;
                if k + 1 >= poses.len() {
                    return Err(Failure::Data(format!(
                        "pair {k} needs frames {k} and {} but the KITTI file has {} poses",
                        k + 1,
                        poses.len()
                    )));
                }
                kitti_relative_pose(&poses[k], &poses[k + 1])
            }
            None => rec
                .ground_truth
                .ok_or_else(|| Failure::Data(format!("pair '{}' has no ground truth", rec.id)))?,
        };
        let outcome = rec
            .outcome
            .as_ref()
            .ok_or_else(|| Failure::Data(format!("pair '{}' has no estimate", rec.id)))?;
        rows.push(EvalRow::new(&rec.id, &gt, outcome));
    }
    write_output(&args.output, stdout, format_eval_csv(&rows).as_bytes())
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, stdin: &mut dyn Read, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            return if e.use_stderr() {
                let _ = write!(stderr, "{e}");
                EXIT_DATA
            } else {
                let _ = write!(stdout, "{e}");
                EXIT_OK
            };
        }
    };
    let result = match &cli.command {
        Command::Synth(a) => synth(a, stdout),
        Command::Estimate(a) => estimate(a, stdin, stdout, stderr),
        Command::Bench(a) => bench(a, stdout),
        Command::Eval(a) => eval(a, stdin, stdout),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(Failure::Data(msg)) => {
            let _ = writeln!(stderr, "error: {msg}");
            EXIT_DATA
        }
        Err(Failure::Estimation(msg)) => {
            let _ = writeln!(stderr, "{msg}");
            EXIT_ESTIMATION
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_str(args: &[&str], input: &str) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run(
            std::iter::once("mcpose").chain(args.iter().copied()),
            &mut input.as_bytes(),
            &mut out,
            &mut err,
        );
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run_str(&["estimate", "--solver", "nope"], "").0, EXIT_DATA);
        assert_eq!(run_str(&["bench", "--grid", "unknown"], "").0, EXIT_DATA);
        assert_eq!(run_str(&[], "").0, EXIT_DATA);
    }

    #[test]
    fn help_exits_zero() {
        let (code, out, _) = run_str(&["--help"], "");
        assert_eq!(code, EXIT_OK);
        assert!(out.contains("estimate"));
    }

    #[test]
    fn malformed_dataset_is_a_data_error() {
        let (code, _, err) = run_str(&["estimate"], "camera 0 1 0\n");
        assert_eq!(code, EXIT_DATA);
        assert!(err.contains("line 1"), "{err}");
    }

    #[test]
    fn too_few_correspondences_is_an_estimation_failure() {
        let text = "camera 0 1 0 0 0 1 0 0 0 1 0 0 0\npair a\nac 0 0 0.1 0.2 0.11 0.19 1 0 0 1\n";
        let (code, out, _) = run_str(&["estimate"], text);
        assert_eq!(code, EXIT_ESTIMATION);
        assert!(out.starts_with("failed a "), "{out}");
    }
}
