use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use parksim_core::data_ingest::formats::write_json;
use parksim_core::data_ingest::{synth_generate, SynthConfig};
use parksim_core::pipeline::{self, parse_hours, RunConfig, Stage, StageContext, StageError};
use parksim_core::{Error, ErrorKind};

/// Estimate on-street versus off-street parking time per block and hour.
#[derive(Parser)]
#[command(name = "parksim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Combine surveys into block samples and estimate lot rates.
    Ingest(RunArgs),
    /// Train the availability network.
    Train(RunArgs),
    /// Compare the network with the logistic baseline.
    Eval(RunArgs),
    /// Predict block availability for the configured date and hours.
    Predict(RunArgs),
    /// Simulate on-street search times.
    SimOn(RunArgs),
    /// Simulate off-street (lot) times.
    SimOff(RunArgs),
    /// Join on- and off-street times and write the maps.
    Diff(RunArgs),
    /// Run every stage from ingest to diff.
    Pipeline(RunArgs),
    /// Generate a synthetic city and a run config for it.
    Synth(SynthArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Run config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Seed for training and both simulators.
    #[arg(long)]
    seed: Option<u64>,
    /// Hours to estimate, e.g. `8-18` or `9,12,17`.
    #[arg(long)]
    hours: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// Synthetic city parameters (JSON); defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Hours written into the generated run config.
    #[arg(long)]
    hours: Option<String>,
    /// Directory receiving the bundle.
    #[arg(long)]
    out: PathBuf,
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::Numeric => 4,
    }
}

fn load_run_config(args: &RunArgs) -> Result<RunConfig, StageError> {
    let stage = Stage::Config;
    let mut cfg = RunConfig::load(&args.config).stage(stage)?;
    if let Some(seed) = args.seed {
        cfg.apply_seed(seed);
    }
    if let Some(h) = &args.hours {
        cfg.hours = parse_hours(h).stage(stage)?;
    }
    if let Some(out) = &args.out {
        cfg.output_dir = out.clone();
    }
    cfg.validate().stage(stage)?;
    Ok(cfg)
}

fn run_stage<T>(
    args: &RunArgs,
    stage: Stage,
    f: impl FnOnce(&RunConfig) -> parksim_core::Result<T>,
) -> Result<(RunConfig, T), StageError> {
    let cfg = load_run_config(args)?;
    let out = f(&cfg).stage(stage)?;
    Ok((cfg, out))
}

fn synth(args: &SynthArgs) -> Result<(), StageError> {
    let mut cfg = match &args.config {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read `{}`: {e}", p.display())))
                .stage(Stage::Synth)?;
            serde_json::from_str::<SynthConfig>(&text)
                .map_err(|e| Error::Config(format!("invalid synthetic city config: {e}")))
                .stage(Stage::Synth)?
        }
        None => SynthConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let bundle = synth_generate(&cfg).stage(Stage::Synth)?;
    bundle.write_to(&args.out).stage(Stage::Synth)?;
    let mut run = RunConfig::for_synth_bundle(&cfg);
    if let Some(h) = &args.hours {
        run.hours = parse_hours(h).stage(Stage::Synth)?;
    }
    write_json(args.out.join("config.json"), &run).stage(Stage::Synth)?;
    println!(
        "wrote {} blocks, {} payments, {} survey checks to {}",
        bundle.graph.edge_count(),
        bundle.payments.len(),
        bundle.surveys.len(),
        args.out.display()
    );
    Ok(())
}

fn report(path: &Path, what: &str) {
    println!("{what}: {}", path.display());
}

fn run(cli: Cli) -> Result<(), StageError> {
    match cli.command {
        Command::Ingest(a) => {
            let (cfg, r) = run_stage(&a, Stage::Ingest, pipeline::run_ingest)?;
            println!(
                "{} samples from {} survey checks ({} without timestamp)",
                r.samples, r.survey_records, r.surveys_discarded
            );
            report(&cfg.output_dir, "outputs");
        }
        Command::Train(a) => {
            let (cfg, r) = run_stage(&a, Stage::Train, pipeline::run_train)?;
            println!(
                "validation cross-entropy {:.4} nats, accuracy {:.3}",
                r.mean_val_cross_entropy, r.mean_val_accuracy
            );
            report(&cfg.output_dir.join(pipeline::MODEL_FILE), "model");
        }
        Command::Eval(a) => {
            let (_, r) = run_stage(&a, Stage::Eval, pipeline::run_eval)?;
            println!(
                "network {:.4} nats / {:.3}, baseline {:.4} nats / {:.3}",
                r.mlp.mean_val_cross_entropy,
                r.mlp.mean_val_accuracy,
                r.baseline.mean_val_cross_entropy,
                r.baseline.mean_val_accuracy
            );
        }
        Command::Predict(a) => {
            let (cfg, rows) = run_stage(&a, Stage::Predict, pipeline::run_predict)?;
            println!("{} block-hour predictions", rows.len());
            report(
                &cfg.output_dir.join(pipeline::PROBABILITIES_FILE),
                "probabilities",
            );
        }
        Command::SimOn(a) => {
            let (cfg, rows) = run_stage(&a, Stage::SimOn, pipeline::run_sim_on)?;
            println!("{} on-street estimates", rows.len());
            report(&cfg.output_dir.join(pipeline::ONSTREET_FILE), "on-street");
        }
        Command::SimOff(a) => {
            let (cfg, rows) = run_stage(&a, Stage::SimOff, pipeline::run_sim_off)?;
            println!("{} off-street estimates", rows.len());
            report(&cfg.output_dir.join(pipeline::OFFSTREET_FILE), "off-street");
        }
        Command::Diff(a) => {
            let (cfg, rows) = run_stage(&a, Stage::Diff, pipeline::run_diff)?;
            let faster = rows.iter().filter(|r| r.delta_s < 0.0).count();
            println!(
                "off-street faster for {faster} of {} block-hours",
                rows.len()
            );
            report(&cfg.output_dir.join(pipeline::MAPS_DIR), "maps");
        }
        Command::Pipeline(a) => {
            let cfg = load_run_config(&a)?;
            let s = pipeline::run_pipeline(&cfg)?;
            let faster = s.estimates.iter().filter(|r| r.delta_s < 0.0).count();
            println!(
                "validation cross-entropy {:.4} nats; off-street faster for {faster} of {} block-hours",
                s.train.mean_val_cross_entropy,
                s.estimates.len()
            );
            report(&cfg.output_dir, "outputs");
        }
        Command::Synth(a) => synth(&a)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.kind()))
        }
    }
}
