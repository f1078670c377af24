use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tsxplain_pipeline::{report_only, run_until, PipelineError, RunConfig, RunManifest, StageName};

#[derive(Parser)]
#[command(name = "tsxplain", version, about = "Explain time-series clusterings through proxy classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Load and preprocess the dataset.
    Preprocess(Common),
    /// Fit the candidate clusterings and pick the medium k.
    Selectk(Common),
    /// Fit the three clustering levels (or take labels as clusters).
    Cluster(Common),
    /// Train and evaluate the proxy classifiers.
    Classify(Common),
    /// Explain the classifiers at the medium k.
    Explain(Common),
    /// Rebuild report.json and the plots from completed stages.
    Report(Common),
    /// Run the full pipeline.
    Run(Common),
}

fn load(c: &Common) -> Result<RunConfig, PipelineError> {
    let mut cfg = RunConfig::load(&c.config)?;
    if let Some(out) = &c.out {
        cfg.output_dir = out.clone();
    }
    if let Some(s) = c.seed {
        cfg.master_seed = s;
    }
    Ok(cfg)
}

fn execute(cmd: &Command) -> Result<RunManifest, PipelineError> {
    let (common, last) = match cmd {
        Command::Preprocess(c) => (c, StageName::Preprocess),
        Command::Selectk(c) => (c, StageName::SelectK),
        Command::Cluster(c) => (c, StageName::Cluster),
        Command::Classify(c) => (c, StageName::Classify),
        Command::Explain(c) => (c, StageName::Explain),
        Command::Report(c) => return report_only(&load(c)?),
        Command::Run(c) => (c, StageName::Report),
    };
    run_until(&load(common)?, last)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli.command) {
        Ok(m) => {
            for s in &m.stages {
                println!(
                    "{:<10} {:<9} {:>8} ms  {} artifacts",
                    s.name,
                    format!("{:?}", s.status).to_lowercase(),
                    s.wall_clock_ms,
                    s.artifacts.len()
                );
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            match e.stage() {
                Some(stage) => eprintln!("error in stage {stage}: {}", source_of(&e)),
                None => eprintln!("error: {e}"),
            }
            ExitCode::FAILURE
        }
    }
}

fn source_of(e: &PipelineError) -> String {
    match e {
        PipelineError::Stage { source, .. } => source.to_string(),
        other => other.to_string(),
    }
}
