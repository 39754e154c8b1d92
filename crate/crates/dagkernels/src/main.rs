use clap::{Parser, Subcommand};
use dagkernels::cli::{run, CliOptions, Command};
use std::path::PathBuf;
use std::process::ExitCode;

/// Neural-kernel experiment runner.
#[derive(Parser)]
#[command(name = "dagkernels", version, about)]
struct Args {
    #[command(subcommand)]
    command: Cmd,
    /// Experiment configuration file.
    #[arg(long, global = true, default_value = "experiment.cfg")]
    config: PathBuf,
    /// Output directory for CSV/SVG files.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Override the number of seeds in the config.
    #[arg(long, global = true)]
    seeds: Option<usize>,
    /// Worker threads (default: all cores). Outputs are identical for any
    /// value.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Refuse kernel matrices larger than this many bytes.
    #[arg(long, global = true)]
    mem_cap: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Exact spatial/frequency/learning index table per eigenfunction and
    /// architecture.
    Indices,
    /// Eigenvalue estimates across a dimension sweep with fitted slopes.
    Eigvals,
    /// Kernel-regression learning curves.
    Regress,
    /// Paired GAP vs Flatten learning curves on symmetric targets.
    GapCompare,
    /// Check the structural assumptions of the configured architecture.
    Validate,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let opts = CliOptions {
        command: match args.command {
            Cmd::Indices => Command::Indices,
            Cmd::Eigvals => Command::Eigvals,
            Cmd::Regress => Command::Regress,
            Cmd::GapCompare => Command::GapCompare,
            Cmd::Validate => Command::Validate,
        },
        config_path: args.config,
        out_dir: args.out,
        seeds: args.seeds,
        threads: args.threads,
        mem_cap: args.mem_cap,
    };
    match run(&opts) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
