//! `presep` command line: generate synthetic cohorts, validate configs,
//! execute pipeline runs, and recompute audits.
//!
//! Exit codes: 0 success, 2 usage, 3 invalid input data or config,
//! 4 pipeline failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use presep::config::{load_config, ConfigError};
use presep::pipeline::{audit_existing, run, PipelineError, RunOptions};
use presep::synth::{generate, synth_embeddings, GeneratorSpec, SynthError};

const EXIT_DATA: u8 = 3;
const EXIT_PIPELINE: u8 = 4;

#[derive(Parser)]
#[command(
    name = "presep",
    version,
    about = "Early severe-sepsis risk prediction pipeline"
)]
struct Cli {
    /// Seed override applied to every seeded stage.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded synthetic cohort, optionally with embeddings.
    Synth(SynthArgs),
    /// Parse a config file and report every validation problem.
    Validate(ValidateArgs),
    /// Run the full pipeline and write its artifacts.
    Run(RunArgs),
    /// Recompute the audits for an existing run directory.
    Audit(AuditArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output path for the cohort JSONL.
    #[arg(long)]
    out: PathBuf,
    /// Number of encounters.
    #[arg(long, default_value_t = 1000)]
    n: usize,
    /// Fraction of encounters given a planted onset.
    #[arg(long, default_value_t = 0.021)]
    prevalence: f64,
    /// 0 disables the pre-onset signal entirely.
    #[arg(long, default_value_t = 1.0)]
    signal_strength: f64,
    /// Fraction of positives given an in-window diagnosis phrase.
    #[arg(long, default_value_t = 0.0)]
    leak_fraction: f64,
    /// Number of positives given an in-window vasopressor event.
    #[arg(long, default_value_t = 0)]
    vasopressor_in_window: usize,
    /// Also write a matching embedding table here.
    #[arg(long)]
    embeddings_out: Option<PathBuf>,
    #[arg(long, default_value_t = 300)]
    embedding_dim: usize,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    config: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides run.out_dir from the config.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Skip malformed cohort records instead of aborting.
    #[arg(long)]
    skip_invalid: bool,
}

#[derive(Args)]
struct AuditArgs {
    #[arg(long)]
    config: PathBuf,
    /// Directory holding scores.csv from a previous run.
    #[arg(long)]
    run_dir: PathBuf,
    #[arg(long)]
    skip_invalid: bool,
}

struct CliFailure {
    message: String,
    code: u8,
}

impl CliFailure {
    fn data(message: impl Into<String>) -> Self {
        CliFailure {
            message: message.into(),
            code: EXIT_DATA,
        }
    }

    fn pipeline(message: impl Into<String>) -> Self {
        CliFailure {
            message: message.into(),
            code: EXIT_PIPELINE,
        }
    }
}

impl From<ConfigError> for CliFailure {
    fn from(e: ConfigError) -> Self {
        CliFailure::data(e.to_string())
    }
}

impl From<SynthError> for CliFailure {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::InvalidSpec(_) | SynthError::Infeasible(_) => {
                CliFailure::data(e.to_string())
            }
            SynthError::Cohort(_) => CliFailure::pipeline(e.to_string()),
        }
    }
}

impl From<PipelineError> for CliFailure {
    fn from(e: PipelineError) -> Self {
        if e.is_data_error() {
            CliFailure::data(e.to_string())
        } else {
            CliFailure::pipeline(e.to_string())
        }
    }
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            ExitCode::from(failure.code)
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliFailure> {
    match cli.command {
        Command::Synth(args) => cmd_synth(args, cli.seed),
        Command::Validate(args) => cmd_validate(args),
        Command::Run(args) => cmd_run(args, cli.seed),
        Command::Audit(args) => cmd_audit(args, cli.seed),
    }
}

fn cmd_synth(args: SynthArgs, seed: Option<u64>) -> Result<(), CliFailure> {
    let spec = GeneratorSpec {
        n_encounters: args.n,
        prevalence: args.prevalence,
        signal_strength: args.signal_strength,
        leak_fraction: args.leak_fraction,
        vasopressor_in_window: args.vasopressor_in_window,
        seed: seed.unwrap_or(0),
        ..GeneratorSpec::default()
    };
    let (cohort, truth) = generate(&spec)?;
    cohort
        .write_jsonl(&args.out)
        .map_err(|e| CliFailure::pipeline(e.to_string()))?;
    println!(
        "wrote cohort: {} ({} encounters, {} positive)",
        args.out.display(),
        cohort.len(),
        truth.positives()
    );
    if let Some(path) = args.embeddings_out {
        let table = synth_embeddings(&spec, args.embedding_dim);
        table
            .write(&path)
            .map_err(|e| CliFailure::pipeline(e.to_string()))?;
        println!(
            "wrote embeddings: {} ({} tokens, dimension {})",
            path.display(),
            table.len(),
            table.dimension()
        );
    }
    Ok(())
}

fn cmd_validate(args: ValidateArgs) -> Result<(), CliFailure> {
    let loaded = load_config(&args.config)?;
    let issues = loaded.validate();
    if issues.is_empty() {
        println!("config ok (fingerprint {})", loaded.fingerprint);
        Ok(())
    } else {
        for issue in &issues {
            eprintln!("  - {issue}");
        }
        Err(CliFailure::data(format!(
            "{} validation problem(s) in {}",
            issues.len(),
            args.config.display()
        )))
    }
}

fn cmd_run(args: RunArgs, seed: Option<u64>) -> Result<(), CliFailure> {
    let loaded = load_config(&args.config)?;
    let opts = RunOptions {
        skip_invalid: args.skip_invalid,
        out_dir: args.out_dir,
        seed,
    };
    let summary = run(&loaded, &opts)?;
    let eval = &summary.report.evaluation;
    println!(
        "rows evaluated: {} ({} positive), split {}",
        eval.n, eval.positives, eval.split
    );
    println!("auc: {:.4}", eval.auc);
    for row in &eval.capture {
        println!(
            "top {:.4} capture: {} selected, {} found, recall {:.4}",
            row.fraction, row.k_selected, row.positives_found, row.recall
        );
    }
    for file in &summary.files {
        println!("wrote: {}", file.display());
    }
    Ok(())
}

fn cmd_audit(args: AuditArgs, seed: Option<u64>) -> Result<(), CliFailure> {
    let loaded = load_config(&args.config)?;
    let opts = RunOptions {
        skip_invalid: args.skip_invalid,
        out_dir: None,
        seed,
    };
    let artifact = audit_existing(&loaded, &args.run_dir, &opts)?;
    println!(
        "leakage: {} of {} audited flagged (rate {:.4})",
        artifact.leakage.flagged.len(),
        artifact.leakage.audited,
        artifact.leakage.flagged_rate
    );
    println!(
        "vasopressor: {} of {} rows flagged",
        artifact.vasopressor.flagged.len(),
        artifact.vasopressor.audited
    );
    println!("wrote: {}", args.run_dir.join("audit.json").display());
    Ok(())
}
