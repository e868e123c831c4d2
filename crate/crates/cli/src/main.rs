//! `smallgs` command-line driver.

mod plot;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use smallgs::eval::{evaluate, EvalOptions};
use smallgs::io::config::RunConfig;
use smallgs::io::{load_config, read_tum, write_map, write_tum, Dataset, Dtype};
use smallgs::pipeline::{estimate_sequence_observed, Progress};
use smallgs::raster::rasterize;
use smallgs::scene_init::{fit_canonical, init_gaussians, lift_depth};
use smallgs::synth::{generate, SynthConfig};
use smallgs::{Error, Se3Pose};

#[derive(Parser)]
#[command(name = "smallgs", version, about = "Gaussian-splat pose estimation for small-baseline video")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with ground truth.
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate a camera trajectory for a dataset.
    Estimate {
        #[arg(long)]
        data: PathBuf,
        /// Run configuration (JSON); defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Prior trajectory (TUM); switches to refinement mode.
        #[arg(long)]
        init: Option<PathBuf>,
        /// Log every n-th optimizer iteration (0 disables).
        #[arg(long, default_value_t = 50)]
        log_every: usize,
    },
    /// Score an estimate against ground truth.
    Eval {
        #[command(flatten)]
        pair: TrajPair,
        /// Rigid instead of similarity alignment.
        #[arg(long)]
        no_scale: bool,
        #[arg(long)]
        report: PathBuf,
    },
    /// Write top-down and per-axis plots (SVG) plus raw positions (CSV).
    Plot {
        #[command(flatten)]
        pair: TrajPair,
        /// Output path; the `.svg` and `.csv` siblings are both written.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        no_scale: bool,
    },
    /// Fit a frame as canonical and render it at a pose.
    Render {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        frame: usize,
        /// `identity`, or a TUM line `t tx ty tz qx qy qz qw` giving the
        /// camera-to-world pose relative to the fitted frame.
        #[arg(long, allow_hyphen_values = true)]
        pose: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Args)]
struct TrajPair {
    #[arg(long)]
    est: PathBuf,
    #[arg(long)]
    gt: PathBuf,
}

/// Failure classes mapped to exit codes.
enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config { .. } | Error::Json(_) => Failure::Usage(e.to_string()),
            e => Failure::Runtime(e),
        }
    }
}

fn init_logging() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format(|buf, record| {
            let line = serde_json::json!({
                "level": record.level().as_str().to_ascii_lowercase(),
                "target": record.target(),
                "msg": record.args().to_string(),
            });
            writeln!(buf, "{line}")
        })
        .init();
}

fn init_threads() -> Result<(), Failure> {
    let Ok(v) = std::env::var("SMALLGS_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::Usage(format!("SMALLGS_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Runtime(Error::InvalidArgument(e.to_string())))
}

fn run_config(path: Option<&Path>) -> Result<RunConfig, Failure> {
    match path {
        Some(p) => load_config(p).map_err(|e| match e {
            Error::Io { .. } => Failure::Usage(e.to_string()),
            e => e.into(),
        }),
        None => Ok(RunConfig::default()),
    }
}

fn synth_config(path: &Path) -> Result<SynthConfig, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    Ok(SynthConfig::parse(&text)?)
}

fn emit(event: &Progress<'_>) {
    if let Ok(line) = serde_json::to_string(event) {
        eprintln!("{line}");
    }
}

/// Parses `identity` or a TUM line into a camera-to-world pose.
fn parse_pose(s: &str) -> Result<Se3Pose, Failure> {
    if s.trim() == "identity" {
        return Ok(Se3Pose::identity());
    }
    let traj = smallgs::io::tum::parse_tum(s, Path::new("--pose")).map_err(|e| Failure::Usage(e.to_string()))?;
    if traj.len() != 1 {
        return Err(Failure::Usage("--pose takes a single TUM line".into()));
    }
    Ok(traj.poses()[0])
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Synth { config, out } => {
            let cfg = synth_config(&config)?;
            let seq = generate(&cfg, &out)?;
            println!(
                "wrote {} frames of {}x{} to {} (mean depth {:.3}, trajectory extent {:.4})",
                seq.frames.len(),
                seq.intrinsics.width,
                seq.intrinsics.height,
                out.display(),
                seq.mean_depth,
                seq.ground_truth.spatial_extent()
            );
        }
        Command::Estimate {
            data,
            config,
            out,
            init,
            log_every,
        } => {
            let cfg = run_config(config.as_deref())?;
            let ds = Dataset::open(&data)?;
            if cfg.loss_space == smallgs::window::LossSpace::Feature {
                ds.require_features()?;
            }
            let prior = init.as_deref().map(read_tum).transpose()?;
            let traj = estimate_sequence_observed(&ds, &cfg, prior.as_ref(), &mut |p| match p {
                Progress::Iteration { stats, .. } if log_every == 0 || stats.iter % log_every != 0 => {}
                other => emit(other),
            })?;
            write_tum(&out, &traj)?;
            log::info!("wrote {} poses to {}", traj.len(), out.display());
        }
        Command::Eval { pair, no_scale, report } => {
            let (est, gt) = (read_tum(&pair.est)?, read_tum(&pair.gt)?);
            let opts = EvalOptions {
                with_scale: !no_scale,
                ..Default::default()
            };
            let r = evaluate(&est, &gt, &opts)?;
            let json = serde_json::to_string_pretty(&r).map_err(Error::from)?;
            std::fs::write(&report, json + "\n").map_err(|e| Failure::Runtime(io_err(&report, e)))?;
            print!("{}", r.table());
        }
        Command::Plot { pair, out, no_scale } => {
            let (est, gt) = (read_tum(&pair.est)?, read_tum(&pair.gt)?);
            let opts = EvalOptions {
                with_scale: !no_scale,
                ..Default::default()
            };
            let rows = smallgs::eval::aligned_positions(&est, &gt, &opts)?;
            let (svg, csv) = (out.with_extension("svg"), out.with_extension("csv"));
            plot::write_csv(&csv, &rows).map_err(|e| Failure::Runtime(io_err(&csv, e)))?;
            std::fs::write(&svg, plot::svg(&rows)).map_err(|e| Failure::Runtime(io_err(&svg, e)))?;
            println!("wrote {} and {}", svg.display(), csv.display());
        }
        Command::Render {
            data,
            frame,
            pose,
            out,
            config,
        } => {
            let pose = parse_pose(&pose)?;
            let cfg = run_config(config.as_deref())?;
            let ds = Dataset::open(&data)?;
            if frame >= ds.len() {
                return Err(Failure::Runtime(Error::InvalidArgument(format!(
                    "frame {frame} out of range for {} frames",
                    ds.len()
                ))));
            }
            let k = ds.intrinsics();
            let (rgb, mask) = (ds.rgb(frame)?, ds.mask(frame)?);
            let points = lift_depth(&ds.depth(frame)?, &mask, k, &rgb, &cfg.lift)?;
            let scene = init_gaussians(&points, &cfg.lift)?;
            let scene = fit_canonical(scene, &rgb, &mask, cfg.lift.mask_threshold, k, &cfg.fit, &cfg.raster)?;
            let img = rasterize(&scene, &pose.inverse(), k, &cfg.raster)?.map;
            write_map(&out, &img, Dtype::F32)?;
            let mse = smallgs::loss::masked_mse(&img, &rgb, &mask, cfg.lift.mask_threshold)?;
            println!("wrote {} (masked MSE vs frame {frame}: {mse:.3e})", out.display());
        }
    }
    Ok(())
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    init_logging();
    let result = init_threads().and_then(|_| run(cli));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            log::error!("{msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            log::error!("{e}");
            ExitCode::from(1)
        }
    }
}
