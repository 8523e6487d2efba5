use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use deepim::harness::{exit_code, ExperimentConfig, Pipeline, Stage};

#[derive(Parser)]
#[command(name = "deepim", version, about = "Batch influence-maximization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the config's run directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    GenGraph,
    GenData,
    Train,
    Infer,
    Baseline,
    Evaluate,
    /// Writes results.csv and results.txt, and prints the table.
    Report,
    /// Teacher vs student inference time on synthetic graphs.
    Timing,
    /// Runs one named stage, or `all` of them in order.
    Run {
        #[arg(long, default_value = "all")]
        stage: String,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}

fn run(cli: Cli) -> deepim::Result<()> {
    let path = cli
        .config
        .ok_or_else(|| deepim::Error::Config("--config is required".into()))?;
    let mut cfg = ExperimentConfig::load(&path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = cli.out {
        cfg.out = out;
    }
    let pipeline = Pipeline::new(cfg)?.with_progress(|m| eprintln!("{m}"));
    let stage = match cli.command {
        Command::GenGraph => Stage::GenGraph,
        Command::GenData => Stage::GenData,
        Command::Train => Stage::Train,
        Command::Infer => Stage::Infer,
        Command::Baseline => Stage::Baseline,
        Command::Evaluate => Stage::Evaluate,
        Command::Report => Stage::Report,
        Command::Timing => {
            for r in pipeline.timing()? {
                println!(
                    "n={:>6}  teacher {:>9.3}s  student {:>9.3}s{}",
                    r.nodes,
                    r.teacher_s,
                    r.student_s,
                    if r.student_faster() { "" } else { "  (student not faster)" }
                );
            }
            return Ok(());
        }
        Command::Run { stage } if stage == "all" => {
            print!("{}", pipeline.run_all()?.to_text());
            return Ok(());
        }
        Command::Run { stage } => Stage::parse(&stage)?,
    };
    pipeline.run(stage)?;
    if stage == Stage::Report {
        print!("{}", pipeline.table()?.to_text());
    }
    Ok(())
}
