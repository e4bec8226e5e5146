mod commands;
mod manifest;
mod output;

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "cone-mosaic", version, about = "Cone photoreceptor mosaic analysis")]
struct Cli {
    /// Worker threads for per-record processing (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,

    /// Dataset manifest (JSON).
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,

    /// Directory that receives all outputs.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,

    /// Base seed for synthetic data.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Turn centre annotations into Voronoi regions or circles.
    Convert(commands::convert::Args),
    /// Score predicted label maps against ground truth.
    Evaluate(commands::evaluate::Args),
    /// Cone density and mean cone area per image.
    Density(commands::density::Args),
    /// Fit the power-law density model to a density table.
    Fit(commands::fit::Args),
    /// Generate synthetic mosaics and a manifest for them.
    Synth(commands::synth::Args),
}

pub struct Context {
    pub manifest: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.jobs).build_global() {
        eprintln!("error: cannot start worker pool: {e}");
        return ExitCode::FAILURE;
    }
    let ctx = Context { manifest: cli.manifest, out_dir: cli.out_dir, seed: cli.seed };
    let result = match &cli.command {
        Command::Convert(a) => commands::convert::run(&ctx, a),
        Command::Evaluate(a) => commands::evaluate::run(&ctx, a),
        Command::Density(a) => commands::density::run(&ctx, a),
        Command::Fit(a) => commands::fit::run(&ctx, a),
        Command::Synth(a) => commands::synth::run(&ctx, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
