use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use qalab_core::harness::{self, run_pipeline, run_stage, validate_stage, Assertion};
use qalab_core::{ExperimentConfig, Stage};

#[derive(Parser)]
#[command(name = "qalab", version, about = "Staged quasi-adiabatic continuation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and check a configuration; prints its hash.
    ValidateConfig(Common),
    /// Ground and first excited energies on the s-grid.
    GapScan(Common),
    /// Integrate the full, side and boundary flows.
    Flow(Common),
    /// Tabulate decomposition errors, supports, ranks and overlaps.
    DecomposeScan(Common),
    /// Schmidt spectra, entropies, decay profile and tail checks.
    EntropyReport(Common),
    /// Assemble the area-law bound at every s.
    BoundReport(Common),
    /// Every stage in order, then run_record.json.
    Run(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `[output] dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for independent (s, R) points.
    #[arg(long)]
    workers: Option<usize>,
}

fn report(assertions: &[Assertion]) -> bool {
    for a in assertions {
        println!("{} {}: {}", if a.passed { "PASS" } else { "FAIL" }, a.name, a.detail);
    }
    assertions.iter().all(|a| a.passed)
}

fn execute(stage: Option<Stage>, args: &Common) -> anyhow::Result<bool> {
    let config = ExperimentConfig::load(&args.config)?;
    let out = config.output_dir(args.out.as_deref());
    harness::with_workers(args.workers, || -> anyhow::Result<bool> {
        match stage {
            None => {
                let record = run_pipeline(&config, &out)?;
                report(&record.assertions);
                if let Some(f) = &record.failure {
                    eprintln!("error: stage {} failed: {}", f.stage.name(), f.message);
                }
                println!("run record: {}", out.join("run_record.json").display());
                Ok(record.passed)
            }
            Some(Stage::ValidateConfig) => {
                let setup = config.setup()?;
                let (assertions, data) = validate_stage(&setup)?;
                println!("config hash {}", data.config_hash);
                println!("dimension {}, |dA| = {}, J1 = {}, J2 = {}", data.dimension, data.boundary_size, data.j1, data.j2);
                let ok = report(&assertions);
                if ok {
                    println!("OK");
                }
                Ok(ok)
            }
            Some(stage) => {
                let setup = config.setup()?;
                let assertions = run_stage(stage, &setup, &out).with_context(|| format!("stage {}", stage.name()))?;
                Ok(report(&assertions))
            }
        }
    })?
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (stage, args) = match &cli.command {
        Command::ValidateConfig(a) => (Some(Stage::ValidateConfig), a),
        Command::GapScan(a) => (Some(Stage::GapScan), a),
        Command::Flow(a) => (Some(Stage::Flow), a),
        Command::DecomposeScan(a) => (Some(Stage::DecomposeScan), a),
        Command::EntropyReport(a) => (Some(Stage::EntropyReport), a),
        Command::BoundReport(a) => (Some(Stage::BoundReport), a),
        Command::Run(a) => (None, a),
    };
    match execute(stage, args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
