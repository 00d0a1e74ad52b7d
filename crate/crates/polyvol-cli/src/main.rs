//! Command-line entry points: train, render, eval, bench, check-grad, and
//! export. All subcommands accept a `section.key = value` config file plus
//! repeated `--set key=value` overrides; single precision is the default
//! and `--precision double` switches the whole pipeline to f64.

mod commands;

use clap::{Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Precision {
    Single,
    Double,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum RenderModeArg {
    Color,
    Depth,
    Alpha,
}

#[derive(Parser)]
#[command(
    name = "polyvol",
    about = "Differentiable polyhedral volume renderer and scene optimizer",
    version
)]
struct Cli {
    /// Configuration file (section.key = value lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override a configuration key, e.g. --set train.iterations=500.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Floating-point width for the whole pipeline.
    #[arg(long, global = true, value_enum, default_value = "single")]
    precision: Precision,

    /// Worker thread count (default: all cores; also honors POLYVOL_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Pin the run to the deterministic code paths. Output is already
    /// bit-reproducible for a fixed seed regardless of thread count; the
    /// flag is accepted so scripted invocations can state the intent.
    #[arg(long, global = true)]
    deterministic: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize a primitive set against a COLMAP scene.
    Train {
        /// Directory with cameras.txt, images.txt, points3D.txt.
        #[arg(long)]
        scene: PathBuf,
        /// Directory with the training images (defaults to the scene dir).
        #[arg(long)]
        images: Option<PathBuf>,
        /// Output directory for checkpoints and the event log.
        #[arg(long)]
        out: PathBuf,
        /// Override train.iterations.
        #[arg(long)]
        iterations: Option<usize>,
        /// Override train.seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Render views from a checkpoint.
    Render {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Output kind; depth writes the raw depth format, alpha a PNG.
        #[arg(long, value_enum, default_value = "color")]
        mode: RenderModeArg,
        /// Comma-separated view names or indices; default all.
        #[arg(long)]
        views: Option<String>,
        /// Use the brute-force reference renderer.
        #[arg(long)]
        oracle: bool,
        /// Disable the affine ray-space approximation (per-vertex exact
        /// projection).
        #[arg(long = "no-ray-space")]
        no_ray_space: bool,
        /// Disable the 2D screen-space anti-aliasing filter.
        #[arg(long = "no-aa-2d")]
        no_aa_2d: bool,
        /// Disable the 3D smoothing filter.
        #[arg(long = "no-aa-3d")]
        no_aa_3d: bool,
        /// Background color.
        #[arg(long, default_value = "black")]
        background: String,
    },
    /// Render a test split and report PSNR/SSIM.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        images: Option<PathBuf>,
        /// Report file (line-delimited records); also printed to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Timing and counter report over the views of a scene.
    Bench {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        /// Timed passes per view after one warm-up.
        #[arg(long, default_value = "3")]
        passes: usize,
    },
    /// Validate analytic gradients against finite differences.
    CheckGrad {
        /// Checkpoint to check (alternative to --synthetic).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Scene directory providing the camera (with --checkpoint).
        #[arg(long)]
        scene: Option<PathBuf>,
        /// Use a bundled deterministic fixture with N primitives.
        #[arg(long, value_name = "N")]
        synthetic: Option<usize>,
        /// Relative tolerance (defaults to 1e-3 single, 1e-5 double).
        #[arg(long)]
        tolerance: Option<f64>,
        /// Check only the first N primitives of a checkpoint.
        #[arg(long, default_value = "4")]
        limit: usize,
        /// Test hook: corrupt the analytic gradients by this relative amount
        /// (the report must then fail).
        #[arg(long, hide = true, default_value = "0.0")]
        inject_error: f64,
    },
    /// Convert checkpoints between binary and text PLY.
    Export {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Output encoding.
        #[arg(long, value_parser = ["binary", "text"], default_value = "binary")]
        format: String,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();

    let threads = cli
        .threads
        .or_else(|| {
            std::env::var("POLYVOL_THREADS")
                .ok()
                .and_then(|v| v.parse().ok())
        })
        .unwrap_or(0);
    if threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("error: failed to configure thread pool: {e}");
            return ExitCode::from(1);
        }
    }

    match commands::run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            let code = err
                .downcast_ref::<polyvol::Error>()
                .map(|e| e.exit_code())
                .unwrap_or(1);
            ExitCode::from(code as u8)
        }
    }
}

pub(crate) use {Cli, Command};
