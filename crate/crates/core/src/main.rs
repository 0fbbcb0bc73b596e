use chipnet::config::{ExperimentConfig, Mode, OUT_DIR_ENV};
use chipnet::run::{run, write_error, RunError};
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "chipnet",
    version,
    about = "Chiplet and optical-interconnect training cluster explorer"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one design point.
    Evaluate(Flags),
    /// Project per-parallelism traffic and the device heatmap.
    Traffic(Flags),
    /// Search the best strategy for each value of one architecture variable.
    Sweep(Flags),
    /// Nested architecture, strategy and topology search.
    Optimize(Flags),
    /// Compare cluster organisations across compute scales.
    Baselines(Flags),
}

#[derive(Args)]
struct Flags {
    /// Experiment TOML file; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the config and the environment.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for candidate evaluation.
    #[arg(long)]
    jobs: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (mode, flags) = match cli.command {
        Command::Evaluate(f) => (Mode::Evaluate, f),
        Command::Traffic(f) => (Mode::Traffic, f),
        Command::Sweep(f) => (Mode::Sweep, f),
        Command::Optimize(f) => (Mode::Optimize, f),
        Command::Baselines(f) => (Mode::Baselines, f),
    };
    if let Some(jobs) = flags.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("warning: {e}");
        }
    }
    let env_out = std::env::var_os(OUT_DIR_ENV).map(PathBuf::from);

    let cfg = match &flags.config {
        Some(path) => ExperimentConfig::load(path),
        None => Ok(ExperimentConfig::new(mode)),
    };
    let mut cfg = match cfg {
        Ok(c) => c,
        Err(e) => {
            let out = flags.out.or(env_out).unwrap_or_else(|| PathBuf::from("results"));
            return fail(&out, mode, &RunError::from(e));
        }
    };
    cfg.mode = mode;
    if let Some(seed) = flags.seed {
        cfg.seed = seed;
    }
    if let Some(out) = flags.out.or(env_out) {
        cfg.output_dir = out;
    }
    let out = cfg.output_dir.clone();
    match run(&cfg, &out) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => fail(&out, mode, &e),
    }
}

fn fail(out: &std::path::Path, mode: Mode, e: &RunError) -> ExitCode {
    eprintln!("error: {e}");
    if let Err(w) = write_error(out, Some(mode), e.kind(), &e.to_string()) {
        eprintln!("cannot write error record: {w}");
    }
    ExitCode::FAILURE
}
