mod config;
mod error;
mod io;
mod pipeline;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::PipelineConfig;
use error::CliError;
use io::OutputLock;
use pipeline::Context;

/// Simulate, analyze and bound a spin-dependent exotic interaction searched
/// for with a polarized source and a nuclear-spin amplifier.
#[derive(Parser)]
#[command(name = "poss", version)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// Configuration file; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory. Does not enter the config hash.
    #[arg(long, global = true, env = "POSS_OUT_DIR")]
    out: Option<PathBuf>,
    /// Interaction range in meters.
    #[arg(long, global = true)]
    lambda_m: Option<f64>,
    /// Injected coupling f11.
    #[arg(long, global = true, allow_hyphen_values = true)]
    f11: Option<f64>,
    /// Number of synthetic records.
    #[arg(long, global = true)]
    records: Option<u64>,
    /// Master seed for the record noise.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Confidence level as a fraction, e.g. 0.95.
    #[arg(long, global = true)]
    cl: Option<f64>,
    /// Add projected limits for an upgraded setup.
    #[arg(long, global = true)]
    project: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Exotic field at the sensor by quadrature and Monte Carlo.
    Field {
        /// Reflect the source through the sensor center.
        #[arg(long)]
        mirrored: bool,
    },
    /// Unit-coupling field over the λ grid.
    Sweep,
    /// Synthesize records into <out>/records.
    Simulate,
    /// Lock-in analysis of records; defaults to <out>/records/*.csv.
    Analyze { files: Vec<PathBuf> },
    /// Systematic budget and exclusion curve from <out>/combined.csv.
    Limits {
        /// Combined result to use instead of <out>/combined.csv.
        #[arg(long)]
        combined: Option<PathBuf>,
    },
    /// field, simulate, analyze and limits in sequence.
    Full {
        #[arg(long)]
        mirrored: bool,
    },
}

fn resolve_config(g: &GlobalArgs) -> Result<PipelineConfig, CliError> {
    let mut cfg = match &g.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(v) = g.lambda_m {
        cfg.set_num("analysis", "lambda_m", v)?;
    }
    if let Some(v) = g.f11 {
        cfg.set_num("analysis", "f11_ratio", v)?;
    }
    if let Some(v) = g.records {
        cfg.set("analysis", "records_count", &v.to_string())?;
    }
    if let Some(v) = g.seed {
        cfg.set("analysis", "master_seed", &v.to_string())?;
    }
    if let Some(v) = g.cl {
        cfg.set_num("limits", "cl_frac", v)?;
    }
    if g.project {
        cfg.set("limits", "project", "true")?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = resolve_config(&cli.global)?;
    let out = cli.global.out.clone().unwrap_or_else(|| cfg.output_dir());
    std::fs::create_dir_all(&out).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;
    let _lock = OutputLock::acquire(&out)?;
    let ctx = Context::new(cfg, out);
    let outputs = match cli.command {
        Command::Field { mirrored } => pipeline::cmd_field(&ctx, mirrored)?,
        Command::Sweep => pipeline::cmd_sweep(&ctx)?,
        Command::Simulate => pipeline::cmd_simulate(&ctx)?,
        Command::Analyze { files } => {
            let files = if files.is_empty() {
                pipeline::default_inputs(&ctx.out)
            } else {
                files
            };
            pipeline::cmd_analyze(&ctx, &files)?
        }
        Command::Limits { combined } => {
            let combined = combined.unwrap_or_else(|| ctx.out.join(pipeline::COMBINED_FILE));
            pipeline::cmd_limits(&ctx, &combined)?
        }
        Command::Full { mirrored } => pipeline::cmd_full(&ctx, mirrored)?,
    };
    for p in outputs {
        println!("{}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
