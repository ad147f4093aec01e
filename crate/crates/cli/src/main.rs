use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use ghr_cli::{exit_code, Pipeline, RunConfig, STAGES};
use ghr_core::GhrError;

#[derive(Parser)]
#[command(
    name = "ghr",
    about = "Toy high-resolution global forecasting pipeline"
)]
struct Cli {
    /// Run configuration (TOML).
    #[arg(short, long, default_value = "configs/toy.toml")]
    config: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthetic splits, manifests, normalisation statistics, climatology and stations.
    GenData(Overrides),
    /// Train the meta model on the LR split.
    Pretrain(Overrides),
    /// Train RES modules on HR data with the meta model frozen.
    Dctl(Overrides),
    /// Tune per-step rollout adapters.
    LoraTune(Overrides),
    /// Write lead-time state files for `forecast.init`.
    Forecast(Overrides),
    /// Score the model, persistence and climatology on the HR test split.
    Evaluate(Overrides),
    /// Verify forecasts against station observations.
    StationEval(Overrides),
    /// Combine evaluation outputs into a summary.
    Report(Overrides),
    /// Every stage in order.
    All(Overrides),
    /// Validate the configuration and print it.
    Check(Overrides),
}

#[derive(clap::Args)]
struct Overrides {
    /// `key=value` overrides of config entries, e.g. `dctl.steps=100`.
    #[arg(value_name = "KEY=VALUE")]
    set: Vec<String>,
}

fn run(cli: Cli) -> ghr_core::Result<()> {
    let (stages, overrides): (Vec<&str>, _) = match &cli.command {
        Command::GenData(o) => (vec!["gen-data"], o),
        Command::Pretrain(o) => (vec!["pretrain"], o),
        Command::Dctl(o) => (vec!["dctl"], o),
        Command::LoraTune(o) => (vec!["lora-tune"], o),
        Command::Forecast(o) => (vec!["forecast"], o),
        Command::Evaluate(o) => (vec!["evaluate"], o),
        Command::StationEval(o) => (vec!["station-eval"], o),
        Command::Report(o) => (vec!["report"], o),
        Command::All(o) => (STAGES.to_vec(), o),
        Command::Check(o) => (vec![], o),
    };
    let cfg = RunConfig::load(&cli.config, &overrides.set)?;
    if stages.is_empty() {
        println!("{cfg:#?}");
        return Ok(());
    }
    let pipeline = Pipeline::new(cfg);
    for stage in stages {
        let t0 = Instant::now();
        pipeline.run(stage)?;
        eprintln!("{stage}: done in {:.1} s", t0.elapsed().as_secs_f64());
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match &e {
                GhrError::Config(v) => {
                    eprintln!("error: invalid configuration ({} problems)", v.len());
                    for p in v {
                        eprintln!("  - {p}");
                    }
                }
                e => eprintln!("error: {e}"),
            }
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
