//! Command-line driver for the betarate pipeline: synthesize or ingest a
//! corpus, split it, train the Beta prediction model, score instances,
//! post-process, evaluate, measure rater agreement, and fuse judges.

mod artifacts;
mod commands;
mod config;
mod errors;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use betarate::splits::Scenario;

use config::{PartitionChoice, RunConfig};
use errors::CliError;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ScenarioArg {
    UnseenQuestion,
    UnseenLalm,
}

impl From<ScenarioArg> for Scenario {
    fn from(s: ScenarioArg) -> Scenario {
        match s {
            ScenarioArg::UnseenQuestion => Scenario::UnseenQuestion,
            ScenarioArg::UnseenLalm => Scenario::UnseenLalm,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "betarate", version, about = "Beta-distribution correctness scoring pipeline")]
struct Cli {
    /// JSON run configuration; command-line flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Split scenario.
    #[arg(long, global = true, value_enum)]
    scenario: Option<ScenarioArg>,
    /// Exactly two held-out system ids for the unseen-lalm scenario.
    #[arg(long, global = true, value_delimiter = ',', value_name = "LALM,LALM")]
    holdout: Option<Vec<String>>,
    /// Drop the question slot from assembled model input.
    #[arg(long, global = true)]
    no_question: bool,
    /// Drop the rationale slot from assembled model input.
    #[arg(long, global = true)]
    no_rationale: bool,
    /// Add the audio-transcript slot to assembled model input.
    #[arg(long, global = true)]
    with_transcript: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic benchmark corpus.
    Synth {
        /// Output corpus file (instances + annotations, JSONL).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Assign instances to train/dev/test partitions.
    Split {
        #[arg(long)]
        instances: Option<PathBuf>,
        /// Output manifest file.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Train the Beta prediction model on the train partition.
    Train {
        #[arg(long)]
        instances: Option<PathBuf>,
        /// Annotation file; defaults to the instances file.
        #[arg(long)]
        annotations: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Output model file.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Score instances with a trained model.
    Predict {
        #[arg(long)]
        instances: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Restrict scoring to one partition (needs --manifest).
        #[arg(long, value_enum)]
        partition: Option<PartitionChoice>,
        /// Output predictions file (JSONL).
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Fit the variance-gated clamp threshold on dev predictions.
    ClampFit {
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        instances: Option<PathBuf>,
        #[arg(long)]
        annotations: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Output clamp-rule file.
        #[arg(long)]
        clamp: Option<PathBuf>,
    },
    /// Apply a fitted clamp rule to predictions.
    ClampApply {
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        clamp: Option<PathBuf>,
        /// Output predictions file with clamped scores.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare predictions against human rating targets.
    Evaluate {
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        instances: Option<PathBuf>,
        #[arg(long)]
        annotations: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Restrict evaluation to one partition (needs --manifest).
        #[arg(long, value_enum)]
        partition: Option<PartitionChoice>,
        /// Also write the printed report to this file.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Krippendorff's alpha before and after feedback filtering.
    Agreement {
        #[arg(long)]
        instances: Option<PathBuf>,
        #[arg(long)]
        annotations: Option<PathBuf>,
        /// Also write the printed summary to this file.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Calibrate judges on dev targets and fit fusion weights on train.
    FuseFit {
        /// Judge score files (annotation schema, `judge:<id>` sources).
        #[arg(long, value_delimiter = ',', value_name = "FILE,FILE")]
        judges: Option<Vec<PathBuf>>,
        #[arg(long)]
        instances: Option<PathBuf>,
        #[arg(long)]
        annotations: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Output fusion-model file.
        #[arg(long)]
        fusion: Option<PathBuf>,
    },
    /// Combine judge scores with a fitted fusion model.
    FuseApply {
        #[arg(long, value_delimiter = ',', value_name = "FILE,FILE")]
        judges: Option<Vec<PathBuf>>,
        #[arg(long)]
        fusion: Option<PathBuf>,
        /// Output fused-score file (JSONL).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn merge(dst: &mut Option<PathBuf>, src: Option<PathBuf>) {
    if src.is_some() {
        *dst = src;
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(scenario) = cli.scenario {
        cfg.scenario = scenario.into();
    }
    if let Some(holdout) = cli.holdout {
        cfg.holdout = holdout;
    }
    if cli.no_question {
        cfg.include_question = false;
    }
    if cli.no_rationale {
        cfg.include_rationale = false;
    }
    if cli.with_transcript {
        cfg.include_transcript = true;
    }

    match cli.command {
        Command::Synth { out } => {
            merge(&mut cfg.paths.out, out);
            commands::synth(&cfg)
        }
        Command::Split { instances, manifest } => {
            merge(&mut cfg.paths.instances, instances);
            merge(&mut cfg.paths.manifest, manifest);
            commands::split(&cfg)
        }
        Command::Train { instances, annotations, manifest, model } => {
            merge(&mut cfg.paths.instances, instances);
            merge(&mut cfg.paths.annotations, annotations);
            merge(&mut cfg.paths.manifest, manifest);
            merge(&mut cfg.paths.model, model);
            commands::train(&cfg)
        }
        Command::Predict { instances, model, manifest, partition, predictions } => {
            merge(&mut cfg.paths.instances, instances);
            merge(&mut cfg.paths.model, model);
            merge(&mut cfg.paths.manifest, manifest);
            merge(&mut cfg.paths.predictions, predictions);
            if let Some(partition) = partition {
                cfg.partition = partition;
            }
            commands::predict(&cfg)
        }
        Command::ClampFit { predictions, instances, annotations, manifest, clamp } => {
            merge(&mut cfg.paths.predictions, predictions);
            merge(&mut cfg.paths.instances, instances);
            merge(&mut cfg.paths.annotations, annotations);
            merge(&mut cfg.paths.manifest, manifest);
            merge(&mut cfg.paths.clamp, clamp);
            commands::clamp_fit(&cfg)
        }
        Command::ClampApply { predictions, clamp, out } => {
            merge(&mut cfg.paths.predictions, predictions);
            merge(&mut cfg.paths.clamp, clamp);
            merge(&mut cfg.paths.out, out);
            commands::clamp_apply(&cfg)
        }
        Command::Evaluate { predictions, instances, annotations, manifest, partition, report } => {
            merge(&mut cfg.paths.predictions, predictions);
            merge(&mut cfg.paths.instances, instances);
            merge(&mut cfg.paths.annotations, annotations);
            merge(&mut cfg.paths.manifest, manifest);
            merge(&mut cfg.paths.report, report);
            if let Some(partition) = partition {
                cfg.partition = partition;
            }
            commands::evaluate(&cfg)
        }
        Command::Agreement { instances, annotations, report } => {
            merge(&mut cfg.paths.instances, instances);
            merge(&mut cfg.paths.annotations, annotations);
            merge(&mut cfg.paths.report, report);
            commands::agreement(&cfg)
        }
        Command::FuseFit { judges, instances, annotations, manifest, fusion } => {
            if let Some(judges) = judges {
                cfg.paths.judges = judges;
            }
            merge(&mut cfg.paths.instances, instances);
            merge(&mut cfg.paths.annotations, annotations);
            merge(&mut cfg.paths.manifest, manifest);
            merge(&mut cfg.paths.fusion, fusion);
            commands::fuse_fit(&cfg)
        }
        Command::FuseApply { judges, fusion, out } => {
            if let Some(judges) = judges {
                cfg.paths.judges = judges;
            }
            merge(&mut cfg.paths.fusion, fusion);
            merge(&mut cfg.paths.out, out);
            commands::fuse_apply(&cfg)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{}", err.to_json());
            ExitCode::from(err.exit_code())
        }
    }
}
