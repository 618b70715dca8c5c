//! `gazectl`: scenario generation, corpus synthesis, training, baselines,
//! evaluation, the offline controller and the session service.

pub mod config;
mod commands;
pub mod session;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gaze_core::attention::AttentionForm;
use gaze_core::models::Arch;
use gaze_core::scene::Variant;

pub use commands::BaselineFile;

/// Failure classes, mapped one-to-one onto exit codes.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Runtime(m) => m,
        }
    }
}

pub(crate) fn data(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

pub(crate) fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "gazectl", version, about = "Attention-driven gaze control for social robots")]
pub struct Cli {
    /// TOML file with defaults for training, policy, GA, geometry and
    /// normalization.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    Variant::parse(s).ok_or_else(|| format!("unknown variant {s:?} (expected 2d or 3d)"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormArg {
    Product,
    Sum,
}

impl From<FormArg> for AttentionForm {
    fn from(f: FormArg) -> Self {
        match f {
            FormArg::Product => AttentionForm::Product,
            FormArg::Sum => AttentionForm::Sum,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ArchArg {
    Lstm,
    Transformer,
}

impl From<ArchArg> for Arch {
    fn from(a: ArchArg) -> Self {
        match a {
            ArchArg::Lstm => Arch::Lstm,
            ArchArg::Transformer => Arch::Transformer,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FileKind {
    Auto,
    Dataset,
    Checkpoint,
    Timeline,
}

/// Choice of gaze predictor for `run` and `serve`.
#[derive(Debug, Clone, Args)]
pub struct PredictorArgs {
    /// Trained checkpoint.
    #[arg(long, conflicts_with_all = ["baseline", "oracle"], required_unless_present_any = ["baseline", "oracle"])]
    pub model: Option<PathBuf>,
    /// Fitted heuristic written by `fit-baseline`.
    #[arg(long, conflicts_with = "oracle")]
    pub baseline: Option<PathBuf>,
    /// Use the synthetic gazer itself.
    #[arg(long)]
    pub oracle: bool,
    /// Persona JSON for `--oracle` (default: the planted persona).
    #[arg(long, requires = "oracle")]
    pub persona: Option<PathBuf>,
    /// Scene variant; inferred from the checkpoint or baseline file when omitted.
    #[arg(long, value_parser = parse_variant)]
    pub variant: Option<Variant>,
    /// Window length for the heuristic and oracle predictors.
    #[arg(long)]
    pub m: Option<usize>,
}

/// Training hyperparameter overrides.
#[derive(Debug, Clone, Args)]
pub struct TrainOverrides {
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    /// Examples drawn per epoch (default: the whole training split).
    #[arg(long)]
    pub epoch_examples: Option<usize>,
    /// Cap on early-stopping evaluation examples.
    #[arg(long)]
    pub eval_examples: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// List the enumerated situations, or compile them into a timeline.
    Scenarios {
        /// Restrict to one variant (default: both).
        #[arg(long, value_parser = parse_variant)]
        variant: Option<Variant>,
        /// Print only the number of situations per variant.
        #[arg(long)]
        count_only: bool,
        /// Write the situation list here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also compile the situations into a timeline file (needs --variant).
        #[arg(long, requires = "variant")]
        timeline: Option<PathBuf>,
    },
    /// Generate a labelled corpus from synthetic gazers.
    Synth {
        #[arg(long, value_parser = parse_variant, default_value = "2d")]
        variant: Variant,
        #[arg(long, default_value_t = 24)]
        m: usize,
        /// Number of gazers in the persona family.
        #[arg(long, default_value_t = 15)]
        personas: usize,
        /// Log-scale jitter of persona parameters around the base persona.
        #[arg(long, default_value_t = 0.08)]
        jitter: f64,
        /// Override the base persona's attention form.
        #[arg(long, value_enum)]
        form: Option<FormArg>,
        /// Argmax gazers with no noise and no stickiness.
        #[arg(long, conflicts_with_all = ["noise_rate", "temperature"])]
        deterministic: bool,
        #[arg(long)]
        noise_rate: Option<f64>,
        #[arg(long)]
        temperature: Option<f64>,
        /// Base persona JSON (default: the planted persona).
        #[arg(long)]
        persona: Option<PathBuf>,
        /// Scene timeline to gaze at (default: every enumerated situation).
        #[arg(long)]
        timeline: Option<PathBuf>,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit one model and save its best checkpoint.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "lstm")]
        arch: ArchArg,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: u64,
        /// Separate early-stopping dataset.
        #[arg(long, conflicts_with = "holdout")]
        eval: Option<PathBuf>,
        /// Fraction of situations held out for early stopping; 0 evaluates on
        /// the training data.
        #[arg(long, default_value_t = 0.1)]
        holdout: f64,
        /// Per-epoch history CSV.
        #[arg(long)]
        history: Option<PathBuf>,
        #[command(flatten)]
        overrides: TrainOverrides,
    },
    /// Situation-partitioned cross-validation.
    Kfold {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "lstm")]
        arch: ArchArg,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        seed: u64,
        /// Early-stop on this fraction of each fold's training situations
        /// instead of on the test fold.
        #[arg(long)]
        holdout: Option<f64>,
        /// Run only the first N folds.
        #[arg(long)]
        folds: Option<usize>,
        /// Cap on training examples scored for the reported train accuracy.
        #[arg(long, default_value_t = 5000)]
        train_eval_examples: usize,
        #[command(flatten)]
        overrides: TrainOverrides,
    },
    /// Fit an effective-attention heuristic with the genetic algorithm.
    FitBaseline {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "product")]
        form: FormArg,
        /// Comma-separated cues the heuristic may use (default: all).
        #[arg(long)]
        cues: Option<String>,
        #[arg(long)]
        seed: u64,
        /// Fraction of situations held out for scoring; 0 disables.
        #[arg(long, default_value_t = 0.1)]
        holdout: f64,
        #[arg(long)]
        population: Option<usize>,
        #[arg(long)]
        generations: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Aggregate cross-validation results, or score a model on a dataset.
    Eval {
        /// `kfold.json` files to aggregate.
        #[arg(long, num_args = 1.., conflicts_with_all = ["model", "baseline"])]
        kfold: Vec<PathBuf>,
        #[arg(long, conflicts_with = "baseline")]
        model: Option<PathBuf>,
        #[arg(long)]
        baseline: Option<PathBuf>,
        /// Dataset to score `--model` or `--baseline` on.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Directory for report.csv, report.json and plot.json.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Drive the controller over a timeline and log its gaze commands.
    Run {
        #[command(flatten)]
        predictor: PredictorArgs,
        /// Scene timeline (default: every enumerated situation of the variant).
        #[arg(long)]
        timeline: Option<PathBuf>,
        /// Gaze command log (JSON lines; default: standard output).
        #[arg(long)]
        log: Option<PathBuf>,
        /// Pace ticks at wall-clock rate.
        #[arg(long)]
        realtime: bool,
    },
    /// Serve controller sessions over TCP.
    Serve {
        #[command(flatten)]
        predictor: PredictorArgs,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Port to listen on; 0 picks a free one.
        #[arg(long, default_value_t = 7878)]
        port: u16,
        /// Where recorded sessions are written.
        #[arg(long, default_value = "recordings")]
        record_dir: PathBuf,
    },
    /// Check a dataset, checkpoint or timeline file.
    Validate {
        file: PathBuf,
        #[arg(long, value_enum, default_value = "auto")]
        kind: FileKind,
    },
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match commands::execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}
