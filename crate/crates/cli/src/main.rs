use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use oneround::config::{parse_override, ExperimentConfig};
use oneround::harness::{Diagnostic, Harness, OUT_DIR_ENV};
use oneround::Error;

/// One-round active learning: learn a data-utility model from a small labeled
/// set and select a whole labeling budget from an unlabeled pool.
///
/// Any `--key=value` or `--dotted.key=value` argument overrides the matching config entry,
/// e.g. `--selection.budgets=[100,200]` or `--dataset.dim=4`.
#[derive(Parser, Debug)]
#[command(name = "oneround", version)]
struct Cli {
    /// Experiment config (TOML).
    #[arg(long, short, global = true, default_value = "oneround.toml")]
    config: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample subsets of the labeled set and record proxy utilities.
    BuildCorpus {
        /// Keep complete samples from a previous run and fill in the rest.
        #[arg(long)]
        resume: bool,
    },
    /// Fit the set-utility model on the corpus.
    TrainUtility,
    /// Run every configured selection strategy at every budget.
    Select,
    /// Train the target model on each selection and score it on the test split.
    Evaluate,
    /// Write diagnostic tables.
    Diagnose {
        #[arg(value_enum, default_value_t = Which::All)]
        which: Which,
    },
    /// Corpus, utility fit, selection, evaluation and rank diagnostics.
    RunAll,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Which {
    Curve,
    Transfer,
    Ranks,
    All,
}

impl From<Which> for Diagnostic {
    fn from(w: Which) -> Self {
        match w {
            Which::Curve => Diagnostic::Curve,
            Which::Transfer => Diagnostic::Transfer,
            Which::Ranks => Diagnostic::Ranks,
            Which::All => Diagnostic::All,
        }
    }
}

fn is_override(arg: &str) -> bool {
    arg.strip_prefix("--")
        .and_then(|body| body.split_once('='))
        .is_some_and(|(key, _)| !key.is_empty() && key != "config")
}

fn run(cli: Cli, overrides: Vec<(String, String)>) -> Result<(), Error> {
    let mut config = ExperimentConfig::load(&cli.config, &overrides)?;
    if let Some(dir) = std::env::var_os(OUT_DIR_ENV) {
        config.output_dir = PathBuf::from(dir);
    }
    let harness = Harness::new(config)?;
    let json = |v: serde_json::Value| println!("{}", serde_json::to_string_pretty(&v).expect("json"));
    match cli.command {
        Command::BuildCorpus { resume } => {
            let corpora = harness.build_corpus(resume)?;
            for (r, c) in corpora.iter().enumerate() {
                println!("repeat {r}: {} samples", c.len());
            }
        }
        Command::TrainUtility => {
            for (r, fit) in harness.train_utility()?.iter().enumerate() {
                let sp = fit.heldout_spearman.map_or("n/a".to_string(), |s| format!("{s:.3}"));
                println!("repeat {r}: held-out spearman {sp}");
            }
        }
        Command::Select => {
            for (r, results) in harness.select()?.iter().enumerate() {
                for s in results {
                    println!("repeat {r}: {} picked {}", s.strategy, s.picks.len());
                }
            }
        }
        Command::Evaluate => {
            for e in harness.evaluate()? {
                println!("{} m={} accuracy {:.4} ± {:.4}", e.strategy, e.budget, e.mean, e.stderr);
            }
        }
        Command::Diagnose { which } => {
            let summary = harness.diagnose(which.into())?;
            json(serde_json::to_value(&summary).expect("summary serializes"));
        }
        Command::RunAll => {
            let summary = harness.run_all()?;
            for e in &summary.evaluation {
                println!("{} m={} accuracy {:.4} ± {:.4}", e.strategy, e.budget, e.mean, e.stderr);
            }
        }
    }
    println!("output: {}", harness.output_dir().display());
    Ok(())
}

fn main() -> ExitCode {
    let (overrides, rest): (Vec<String>, Vec<String>) = std::env::args().partition(|a| is_override(a));
    let cli = Cli::parse_from(rest);
    let overrides = match overrides.iter().map(|a| parse_override(a)).collect::<Result<Vec<_>, _>>() {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match run(cli, overrides) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
