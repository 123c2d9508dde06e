use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use erfas_core::harness::{self, ExperimentConfig, ExperimentKind};

#[derive(Parser)]
#[command(name = "erfas", version, about = "Codebook design and localization experiments for reconfigurable-pattern arrays")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Azimuth cut of the type-1 beam toward the UE.
    Beampattern(RunArgs),
    /// PEB over an x-y grid with uniform and optimized power.
    PebMap(RunArgs),
    /// Monte-Carlo RMSE and PEB versus SNR.
    RmseVsSnr(RunArgs),
    /// PEB versus the number of basis functions.
    PebVsQ(RunArgs),
    /// PEB versus the number of pattern states.
    PebVsS(RunArgs),
    /// RMSE versus LOS-to-multipath ratio with random scatterers.
    LmrSweep(RunArgs),
    /// Write the power-allocated codebook as JSON.
    CodebookDump(RunArgs),
    /// Print the default configuration of an experiment kind.
    DefaultConfig { kind: String },
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment configuration; defaults are used for missing fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    trials: Option<usize>,
    /// Worker threads (all cores by default).
    #[arg(long)]
    threads: Option<usize>,
}

fn load_config(kind: ExperimentKind, args: &RunArgs) -> Result<ExperimentConfig> {
    let mut config = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let mut value: serde_json::Value =
                serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            if let Some(obj) = value.as_object_mut() {
                if let Some(k) = obj.get("kind").and_then(|k| k.as_str()) {
                    if k != kind.name() {
                        anyhow::bail!("{} describes a '{k}' experiment, not '{kind}'", path.display());
                    }
                }
                let defaults = serde_json::to_value(ExperimentConfig::for_kind(kind))?;
                let mut merged = defaults.as_object().cloned().unwrap_or_default();
                merged.extend(obj.clone());
                value = serde_json::Value::Object(merged);
            }
            serde_json::from_value(value).with_context(|| format!("invalid configuration in {}", path.display()))?
        }
        None => ExperimentConfig::for_kind(kind),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(out) = &args.out {
        config.output = out.clone();
    }
    if let Some(trials) = args.trials {
        config.trials = trials;
    }
    config.validate()?;
    Ok(config)
}

fn run(cli: Cli) -> Result<()> {
    let (kind, args) = match cli.command {
        Command::Beampattern(a) => (ExperimentKind::Beampattern, a),
        Command::PebMap(a) => (ExperimentKind::PebMap, a),
        Command::RmseVsSnr(a) => (ExperimentKind::RmseVsSnr, a),
        Command::PebVsQ(a) => (ExperimentKind::PebVsQ, a),
        Command::PebVsS(a) => (ExperimentKind::PebVsS, a),
        Command::LmrSweep(a) => (ExperimentKind::LmrSweep, a),
        Command::CodebookDump(a) => (ExperimentKind::CodebookDump, a),
        Command::DefaultConfig { kind } => {
            let kind: ExperimentKind = kind.parse()?;
            println!("{}", ExperimentConfig::for_kind(kind).to_json()?);
            return Ok(());
        }
    };
    let config = load_config(kind, &args)?;
    log::info!("running {kind} with seed {} and {} trials", config.seed, config.trials);
    let (out, written) = harness::run_and_write(&config, args.threads)
        .with_context(|| format!("{kind} experiment failed"))?;
    if out.codebook.is_none() && out.table.rows.len() <= 64 {
        print!("{}", harness::describe(&out.table));
    }
    for path in written {
        eprintln!("wrote {}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
