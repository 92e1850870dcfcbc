//! `rawscale`: synthetic data, training, inference, baselines and evaluation
//! for rational-factor RAW downscaling.

mod commands;
mod config;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use rawscale_core::{parse_scale, RationalScale, ResampleKernel};

use commands::Domain;

/// Threads used by `gen-data` and `eval`; the rayon default when unset.
const THREADS_ENV: &str = "RAWSCALE_THREADS";

#[derive(Debug, Parser)]
#[command(name = "rawscale", version, about = "RAW image downscaling by arbitrary rational factors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

fn scale_arg(s: &str) -> Result<RationalScale, String> {
    parse_scale(s).map_err(|e| e.to_string())
}

fn kernel_arg(s: &str) -> Result<ResampleKernel, String> {
    s.parse().map_err(|e: rawscale_core::Error| e.to_string())
}

/// `N` or `HxW`, in packed pixels.
fn size_arg(s: &str) -> Result<(usize, usize), String> {
    let parse = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("bad size {s:?}: {e}"));
    match s.split_once(['x', 'X']) {
        Some((h, w)) => Ok((parse(h)?, parse(w)?)),
        None => parse(s).map(|n| (n, n)),
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write seeded synthetic HR/LR pairs as `.nraw` files.
    GenData {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        count: usize,
        /// Packed HR size, `N` or `HxW`.
        #[arg(long, value_parser = size_arg)]
        hr_size: (usize, usize),
        /// Downscale factor such as `2`, `1.3` or `4/3`.
        #[arg(long, value_parser = scale_arg)]
        scale: RationalScale,
        /// Gaussian read-noise sigma added to both images.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        /// Shortest scene period in units of the LR Nyquist period.
        #[arg(long, default_value_t = 1.5)]
        period_margin: f64,
        /// Produce the LR image by prefilter plus Lanczos resampling.
        #[arg(long)]
        resampled_gt: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on a directory of pairs.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Overrides the configured scales; repeat for mixed-scale training.
        #[arg(long, value_parser = scale_arg)]
        scale: Vec<RationalScale>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        iterations: Option<usize>,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Output checkpoint directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        curve: Option<PathBuf>,
    },
    /// Write an untrained checkpoint.
    Init {
        #[arg(long, value_parser = scale_arg, required = true)]
        scale: Vec<RationalScale>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a checkpoint on a packed image or the HR side of a pair.
    Downscale {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_parser = scale_arg)]
        scale: RationalScale,
        #[arg(long)]
        out: PathBuf,
        /// Also render the result through the ISP (`.ppm` or `.png`).
        #[arg(long)]
        srgb: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Classical resampling in the RAW or sRGB domain.
    Baseline {
        #[arg(long, value_parser = kernel_arg)]
        kernel: ResampleKernel,
        #[arg(long, value_enum, default_value = "raw")]
        domain: Domain,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_parser = scale_arg)]
        scale: RationalScale,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// PSNR and SSIM of predictions against references, as CSV.
    Eval {
        /// Prediction file or directory.
        #[arg(long)]
        pred: PathBuf,
        /// Reference file or directory; pairs contribute their LR side.
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long, value_enum, default_value = "raw")]
        domain: Domain,
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value = "pred")]
        method: String,
        /// Scale reported for packed references without one.
        #[arg(long, value_parser = scale_arg)]
        scale: Option<RationalScale>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Finite-difference check of every primitive and of the full model.
    Gradcheck {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Exit with a contract error when any check fails.
        #[arg(long)]
        strict: bool,
    },
    /// Dump the wavelet pyramid of an image.
    Dwt {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        levels: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Center-crop an image or pair to the dims the model accepts.
    CropValid {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_parser = scale_arg)]
        scale: RationalScale,
        #[arg(long)]
        levels: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cmd: Command) -> anyhow::Result<()> {
    match cmd {
        Command::GenData { seed, count, hr_size, scale, noise, period_margin, resampled_gt, out } => {
            commands::gen_data(&commands::GenData {
                seed,
                count,
                hr_size,
                scale,
                noise,
                period_margin,
                resampled_gt,
                out,
            })
        }
        Command::Train { data, scale, config, iterations, resume, out, curve } => {
            commands::train(&commands::Train { data, scales: scale, config, iterations, resume, out, curve })
        }
        Command::Init { scale, config, seed, out } => {
            commands::init(&commands::Init { scales: scale, config, seed, out })
        }
        Command::Downscale { ckpt, input, scale, out, srgb, config } => {
            commands::downscale(&commands::Downscale { ckpt, input, scale, out, srgb, config })
        }
        Command::Baseline { kernel, domain, input, scale, out, config } => {
            commands::baseline(&commands::Baseline { kernel, domain, input, scale, out, config })
        }
        Command::Eval { pred, reference, domain, report, method, scale, config } => {
            commands::eval(&commands::Eval { pred, reference, domain, report, method, scale, config })
        }
        Command::Gradcheck { config, strict } => commands::gradcheck(config.as_deref(), strict),
        Command::Dwt { input, levels, out, config } => commands::dwt(&input, levels, &out, config.as_deref()),
        Command::CropValid { input, scale, levels, out } => commands::crop_valid_cmd(&input, scale, levels, &out),
    }
}

/// 1 for contract violations, 2 for I/O and format failures.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<rawscale_core::Error>()) {
        Some(e) if !e.is_contract() => 2,
        _ => 1,
    }
}

/// Context chain without causes already quoted by their wrapper.
fn describe(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain() {
        let msg = cause.to_string();
        if !out.contains(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
    }
    out
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    if let Some(n) = std::env::var(THREADS_ENV).ok().and_then(|v| v.parse::<usize>().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
