use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use zslc_cli::commands::{self, PLOT_TERMS};
use zslc_cli::config::{parse_file, parse_flag, RunConfig, Setting};
use zslc_cli::{init_threads, CliError};

/// Generalized zero-shot learning with adversarially coupled feature
/// generation and attribute inference.
#[derive(Parser)]
#[command(name = "zslc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Named preset: cub, flo, awa1, awa2 or desk.
    #[arg(long)]
    preset: Option<String>,
    /// Ablation mode: S1, S2, S3 or S4.
    #[arg(long)]
    ablation: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dataset directory holding features.csv, attributes.csv and splits.json.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Overrides one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset.
    SynthData {
        #[command(flatten)]
        common: Common,
        /// Overwrite existing dataset files.
        #[arg(long)]
        force: bool,
    },
    /// Train the model, writing a checkpoint and a loss log.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Start over even if the output directory has a checkpoint.
        #[arg(long)]
        force: bool,
    },
    /// Evaluate a checkpoint on the test partitions.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to evaluate; defaults to <out>/checkpoint.bin.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train and evaluate once per value of one hyper-parameter.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// alpha1, alpha2, gamma or n_syn.
        #[arg(long)]
        axis: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(long)]
        force: bool,
    },
    /// Plot a loss log as SVG.
    Plot {
        /// JSON-lines loss log written by `train`.
        #[arg(long)]
        log: PathBuf,
        /// Output SVG file; defaults to the log path with an .svg extension.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Only plot steps of this phase: critic or generator.
        #[arg(long)]
        phase: Option<String>,
        /// Comma-separated terms to plot.
        #[arg(long, value_delimiter = ',')]
        terms: Vec<String>,
    },
}

fn settings(common: &Common) -> Result<(Vec<Setting>, Vec<Setting>), CliError> {
    let file = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            parse_file(&text, path)?
        }
        None => Vec::new(),
    };
    let mut flags = common.set.iter().map(|s| parse_flag(s)).collect::<Result<Vec<_>, _>>()?;
    let named = [
        ("preset", common.preset.clone()),
        ("ablation", common.ablation.clone()),
        ("seed", common.seed.clone()),
        ("out", common.out.as_ref().map(|p| p.display().to_string())),
        ("dataset", common.dataset.as_ref().map(|p| p.display().to_string())),
    ];
    for (key, value) in named {
        if let Some(value) = value {
            flags.push(Setting { key: key.into(), value, origin: format!("--{key}") });
        }
    }
    Ok((file, flags))
}

fn resolve(common: &Common) -> Result<RunConfig, CliError> {
    let (file, flags) = settings(common)?;
    RunConfig::resolve(&file, &flags)
}

fn run(cli: Cli) -> Result<(), CliError> {
    init_threads()?;
    match cli.command {
        Command::SynthData { common, force } => {
            let p = commands::synth_data(&resolve(&common)?, force)?;
            println!("wrote {}, {}, {}", p.features.display(), p.attributes.display(), p.splits.display());
        }
        Command::Train { common, resume, force } => {
            let state = commands::train(&resolve(&common)?, resume.as_deref(), force)?;
            let last = state.history.last();
            println!("trained {} epochs, {} steps, last total {}", state.epoch, state.step, last.map_or(f64::NAN, |r| r.total));
        }
        Command::Eval { common, checkpoint } => {
            let m = commands::eval(&resolve(&common)?, checkpoint.as_deref())?;
            println!("U = {:.2}  S = {:.2}  H = {:.2}", m.unseen, m.seen, m.harmonic);
        }
        Command::Sweep { common, axis, values, force } => {
            let (file, flags) = settings(&common)?;
            let cells = commands::sweep(&file, &flags, &axis, &values, force)?;
            let mut first_failure = None;
            for c in &cells {
                match &c.result {
                    Ok(m) => println!("{axis}={}: U = {:.2}  S = {:.2}  H = {:.2}", c.value, m.unseen, m.seen, m.harmonic),
                    Err(e) => {
                        eprintln!("{axis}={} failed: {e}", c.value);
                        first_failure.get_or_insert(e.exit_code());
                    }
                }
            }
            if let Some(code) = first_failure {
                std::process::exit(code);
            }
        }
        Command::Plot { log, out, phase, terms } => {
            let out = out.unwrap_or_else(|| log.with_extension("svg"));
            let phase = phase.as_deref().map(commands::parse_phase).transpose()?;
            let terms = if terms.is_empty() { PLOT_TERMS.iter().map(|t| t.to_string()).collect() } else { terms };
            for w in commands::plot(&log, &out, phase, &terms)? {
                eprintln!("warning: {w}");
            }
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}


fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("zslc: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
