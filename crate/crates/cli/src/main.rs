//! `musculo`: batch front end for model checks, simulation, mocap
//! processing, task rollouts and gait analysis.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use manifest::RunManifest;

#[derive(Parser)]
#[command(
    name = "musculo",
    version,
    about = "Musculotendon simulation and motion-analysis toolkit"
)]
struct Cli {
    /// Worker threads (falls back to MUSCULO_THREADS, then all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Model documents and meshes.
    #[command(subcommand)]
    Model(ModelCmd),
    /// Forward simulation.
    #[command(subcommand)]
    Sim(SimCmd),
    /// Marker clips: interval selection, gap filling, IK, cyclic clips.
    #[command(subcommand)]
    Mocap(MocapCmd),
    /// Task environments.
    #[command(subcommand)]
    Env(EnvCmd),
    /// Gait segmentation and excitation comparison.
    #[command(subcommand)]
    Gait(GaitCmd),
    /// Rest lengths and length-range calibration.
    #[command(subcommand)]
    Muscle(MuscleCmd),
}

/// Output directory shared by most commands.
#[derive(Args, Clone)]
pub struct OutDir {
    /// Directory receiving every output file and the run manifest.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Subcommand)]
pub enum ModelCmd {
    /// Load and check a model (a path or `builtin:<name>`).
    Validate {
        model: String,
        #[command(flatten)]
        out: OutDir,
    },
    /// Volume, mass, centre of mass and inertia of a triangle mesh.
    Inertia {
        mesh: PathBuf,
        #[arg(long, default_value_t = 1000.0)]
        density: f64,
        #[command(flatten)]
        out: OutDir,
    },
}

#[derive(Subcommand)]
pub enum SimCmd {
    /// Simulate control steps under constant excitation and dump the trajectory.
    Step {
        #[arg(long)]
        model: String,
        #[arg(long, default_value_t = 40)]
        steps: usize,
        /// Excitation applied to every muscle.
        #[arg(long, default_value_t = 0.0)]
        excitation: f64,
        #[arg(long, default_value_t = 1.0 / 240.0)]
        physics_dt: f64,
        #[arg(long, default_value_t = 1.0 / 40.0)]
        control_dt: f64,
        #[arg(long, default_value = "trajectory.csv")]
        dump: PathBuf,
        #[command(flatten)]
        out: OutDir,
    },
    /// Small-angle pendulum period against the analytic value.
    PendulumCheck {
        /// Release angle, rad.
        #[arg(long, default_value_t = 0.05)]
        amplitude: f64,
        #[arg(long, default_value_t = 1.0 / 240.0)]
        physics_dt: f64,
        #[command(flatten)]
        out: OutDir,
    },
}

#[derive(Clone, Copy, ValueEnum)]
pub enum ImputerKind {
    Spline,
    Hold,
}

#[derive(Subcommand)]
pub enum MocapCmd {
    /// Longest window with enough markers present; writes it as a clip.
    Select {
        #[arg(long)]
        clip: PathBuf,
        #[arg(long, default_value_t = 10)]
        min_markers: usize,
        #[arg(long, default_value_t = 1.0)]
        min_duration: f64,
        #[command(flatten)]
        out: OutDir,
    },
    /// Fill missing markers.
    Impute {
        #[arg(long)]
        clip: PathBuf,
        #[arg(long, value_enum, default_value = "spline")]
        method: ImputerKind,
        /// Multiply coordinates by this factor after filling.
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        #[command(flatten)]
        out: OutDir,
    },
    /// Masking evaluation of an imputer.
    Evaluate {
        #[arg(long)]
        clip: PathBuf,
        #[arg(long, value_enum, default_value = "spline")]
        method: ImputerKind,
        #[arg(long, default_value_t = 0.1)]
        mask_prob: f64,
        #[arg(long, default_value_t = 100)]
        segment_len: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        out: OutDir,
    },
    /// Fit marker attachments and joint trajectories to complete clips.
    Ik {
        #[arg(long)]
        model: String,
        /// One or more clips (repeat the flag).
        #[arg(long, required = true)]
        clip: Vec<PathBuf>,
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        #[arg(long, default_value_t = 500)]
        iterations: usize,
        #[arg(long, default_value_t = 0.01)]
        learning_rate: f64,
        #[arg(long, default_value_t = musculo_core::mocap::DEFAULT_REGULARIZER_WEIGHT)]
        regularizer: f64,
        /// Gaussian noise on the initial angles, rad.
        #[arg(long, default_value_t = 0.0)]
        init_noise: f64,
        /// Markers whose attachment offsets stay fixed (comma separated).
        #[arg(long, value_delimiter = ',')]
        fixed_markers: Vec<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        out: OutDir,
    },
    /// Loop the middle of a trajectory into a repeating clip.
    Cyclic {
        #[arg(long)]
        model: String,
        #[arg(long)]
        traj: PathBuf,
        #[arg(long)]
        period: usize,
        #[arg(long)]
        crossfade: usize,
        #[arg(long, default_value_t = 1)]
        repeats: usize,
        /// Joints that keep advancing across repeats (comma separated).
        #[arg(long, value_delimiter = ',')]
        advance: Vec<String>,
        #[command(flatten)]
        out: OutDir,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TaskKind {
    #[value(name = "run_forward")]
    RunForward,
    Tracking,
    Neck,
}

#[derive(Subcommand)]
pub enum EnvCmd {
    /// Roll out a scripted policy and dump every control step.
    Run {
        #[arg(long, value_enum)]
        task: TaskKind,
        #[arg(long, default_value = "builtin:planar_leg")]
        model: String,
        /// Reference trajectory CSV (tracking only).
        #[arg(long, required_if_eq("task", "tracking"))]
        clip: Option<PathBuf>,
        /// random | constant[:<action>] | replay:<csv>
        #[arg(long, default_value = "random")]
        policy: String,
        #[arg(long, default_value_t = 1000)]
        steps: usize,
        #[arg(long, default_value_t = musculo_core::tasks::DEFAULT_HORIZON)]
        horizon: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Trajectory dump, relative to --out.
        #[arg(long)]
        dump: Option<PathBuf>,
        /// Output directory (default: the dump's directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
pub enum GaitCmd {
    /// Phase-normalise a dump's excitations and compare them with reference EMG.
    Analyze {
        #[arg(long)]
        traj: PathBuf,
        /// Contact site marking the foot.
        #[arg(long)]
        foot: String,
        #[arg(long)]
        emg: PathBuf,
        /// Comparison report CSV; the profile and manifest go beside it.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = musculo_core::gait::DEFAULT_GRID)]
        grid: usize,
    },
}

#[derive(Subcommand)]
pub enum MuscleCmd {
    /// L0 and LT from a length range and an operating range.
    SolveLengths {
        #[arg(long, value_delimiter = ',', required = true)]
        lr: Vec<f64>,
        #[arg(long, value_delimiter = ',', required = true)]
        r: Vec<f64>,
        #[command(flatten)]
        out: OutDir,
    },
    /// Sample random poses and record every muscle's length extrema.
    Calibrate {
        #[arg(long)]
        model: String,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        out: OutDir,
    },
}

/// Failure classes, mapped to exit codes 1 and 2.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(String),
}

impl From<musculo_core::Error> for Failure {
    fn from(e: musculo_core::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

fn init_threads(flag: Option<usize>) -> Result<(), Failure> {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var("MUSCULO_THREADS") {
            Ok(v) => Some(
                v.trim()
                    .parse()
                    .map_err(|_| Failure::Usage(format!("MUSCULO_THREADS is not a count: `{v}`")))?,
            ),
            Err(_) => None,
        },
    };
    if let Some(n) = n {
        if n == 0 {
            return Err(Failure::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Usage(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let mut manifest = RunManifest::new(&argv);
    let result = init_threads(cli.threads).and_then(|_| commands::dispatch(cli.command, &mut manifest));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Data(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
