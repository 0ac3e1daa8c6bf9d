use std::path::PathBuf;
use std::process::ExitCode;

use bodymesh_cli::{pipeline, CliError, CliResult, Context, PipelineConfig};
use clap::{Parser, Subcommand};

const EXIT_CODES: &str = "Exit codes:
  0  success
  1  I/O or other failure
  2  configuration error
  3  missing or stale prerequisite (run the named command first, or pass --force)
  4  numeric failure (non-finite loss or value)";

#[derive(Parser)]
#[command(name = "bodymesh", version, about = "Body surface meshes to fat volume regression", after_help = EXIT_CODES)]
struct Cli {
    /// Pipeline configuration (JSON)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the seed of the configuration
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for per-subject stages (default: all cores)
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Run even if upstream outputs do not match their records
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Generate the synthetic cohort: volumes and labels
    Synth,
    /// Segment volumes and extract full-resolution surface meshes
    Extract,
    /// Decimate every mesh to each configured level
    Decimate,
    /// Rigidly register each level to the reference subject
    Register,
    /// Cross-validated training of the configured model
    Train,
    /// Re-evaluate the saved fold checkpoints
    Eval,
    /// Epoch time and accuracy against mesh resolution
    Sweep,
    /// Per-sex label histograms of the cohort
    Stats,
    /// synth, extract, decimate, register, train, eval and stats in order
    All,
}

fn run(cli: &Cli) -> CliResult<()> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("--config <path> is required".into()))?;
    let mut config = PipelineConfig::load(path)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let ctx = Context::new(config, cli.jobs, cli.force)?;
    match cli.command {
        Command::Synth => pipeline::synth(&ctx).map(drop),
        Command::Extract => pipeline::extract(&ctx).map(drop),
        Command::Decimate => pipeline::decimate_cmd(&ctx).map(drop),
        Command::Register => pipeline::register(&ctx).map(drop),
        Command::Train => pipeline::train(&ctx).map(|r| print_r2(&r)),
        Command::Eval => pipeline::eval(&ctx).map(|r| print_r2(&r)),
        Command::Sweep => pipeline::sweep(&ctx).map(|r| print!("{}", r.to_csv())),
        Command::Stats => pipeline::stats(&ctx).map(|s| {
            for g in s {
                println!("{} {} n={} mean={:?}", g.tissue, g.sex, g.n, g.mean_mm3);
            }
        }),
        Command::All => pipeline::run_all(&ctx),
    }
}

fn print_r2(r: &bodymesh::train::MetricsReport) {
    for s in &r.summary {
        let std = s.r2_std.map(|v| format!(" ± {v:.4}")).unwrap_or_default();
        println!("{} R² {:.4}{std}", s.tissue, s.r2_mean);
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
