mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use privaudit_core::mia::ScoreKind;
use privaudit_core::runner::{Scale, Task};

const TRAIN_KEYS: &str = "\
Config keys (JSON; every key is optional and can be set with --override):
  task                           mnist_fcnn | cifar10_cnn | text_classifier | synthetic
  data.source                    mnist | cifar10 | synthetic_images | text_csv | synthetic_text | blobs | csv_table
  data.dir                       dataset directory (mnist, cifar10); default $PRIVAUDIT_DATA_DIR/<name>
  data.train_rows, data.val_rows row limits (mnist, cifar10)
  data.path                      CSV path with header text,label[,vulnerable] (text_csv)
  data.images.*                  n_train n_test height width channels classes noise clutter label_noise
  data.tweets.*                  n vocab_size zipf_exponent min_len max_len
  data.text.*                    val_fraction max_tokens sequence_length embed_dim bias
  data.text.bias.*               p_vulnerable p_toxic_given_vulnerable p_toxic_given_not seed
  data.blobs.*                   n_train n_test dim classes separation label_noise
  data.train, data.val           numeric CSV paths with header label,x0,x1,... (csv_table)
  data.classes                   class count (csv_table); inferred from labels when null
  model                          architecture {input_shape, layers}; null uses the task default
  train.epochs, train.batch_size
  train.optimizer.*              kind (sgd | adam | dp_adam) learning_rate beta1 beta2 epsilon
  train.dp.*                     noise_multiplier clip_norm microbatch_size (required with dp_adam)
  train.l2_lambda                L2 strength (alias: lambda)
  train.seed                     seeds data preparation, initialization, shuffling and noise
  train.shuffle
A bare override key (epochs=3) resolves to the shallowest key of that name.";

const SWEEP_KEYS: &str = "\
Config keys (JSON; every key is optional and can be set with --override):
  task, data.*, model            as for `train`
  methods                        list of baseline | dp
  lambdas                        strictly increasing, >= 0
  runs_per_cell                  independently seeded runs per (method, λ)
  seed                           base seed for data and every cell
  train.*                        base training settings; each cell sets l2_lambda, seed and the optimizer kind
  dp.*                           noise_multiplier clip_norm microbatch_size for dp cells
  score_kind                     neg_loss | max_confidence | correct_class_confidence
  record_timing                  fill the seconds column (breaks byte-identical reruns)
  workers                        concurrent cells; 0 uses every core
  output_dir                     report directory (--out takes precedence)
A bare override key (epochs=3) resolves to the shallowest key of that name.";

#[derive(Parser)]
#[command(
    name = "privaudit",
    version,
    about = "Train, audit and sweep models for membership-inference risk"
)]
struct Cli {
    /// Increase log detail (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    /// Only print errors.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON config file.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Start from a built-in preset instead of a config file.
    #[arg(long, value_enum, conflicts_with = "config")]
    task: Option<TaskArg>,
    /// Preset size used with --task.
    #[arg(long, value_enum, default_value = "small")]
    scale: ScaleArg,
    /// key=value overrides applied after the config is loaded.
    #[arg(long = "override", short = 'o', value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Print the resolved config as JSON and exit.
    #[arg(long)]
    dump_config: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model; writes model.json and history.csv.
    #[command(after_long_help = TRAIN_KEYS)]
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output directory.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run the threshold attack against a saved model.
    #[command(after_long_help = "\
Data files are recognized by content: a CSV whose header starts with `text`
(text corpus, vectorized with the model's vectorizer), a CSV whose header
starts with `label` (numeric rows), a CIFAR-10 `.bin` batch, or an IDX image
file whose labels sit next to it with `images-idx3` replaced by `labels-idx1`.")]
    Attack {
        /// Saved model JSON.
        #[arg(long)]
        model: PathBuf,
        /// Members: the model's training data.
        #[arg(long = "train-data")]
        train_data: PathBuf,
        /// Nonmembers.
        #[arg(long)]
        holdout: PathBuf,
        #[arg(long, value_enum, default_value = "neg-loss")]
        score_kind: ScoreKindArg,
        /// Seed for size matching.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Result JSON path.
        #[arg(long, default_value = "attack.json")]
        out: PathBuf,
    },
    /// Run a λ sweep and write its report.
    #[command(after_long_help = SWEEP_KEYS)]
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Report directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rebuild summaries, plots and the table from one or more cells.csv files.
    Report {
        /// cells.csv files; several are pooled.
        #[arg(long = "cells", required = true)]
        cells: Vec<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Write synthetic datasets in the formats the loaders read.
    SynthData {
        #[arg(value_enum)]
        kind: SynthKind,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        n_train: usize,
        #[arg(long, default_value_t = 1000)]
        n_test: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    MnistFcnn,
    Cifar10Cnn,
    TextClassifier,
    Synthetic,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Task {
        match t {
            TaskArg::MnistFcnn => Task::MnistFcnn,
            TaskArg::Cifar10Cnn => Task::Cifar10Cnn,
            TaskArg::TextClassifier => Task::TextClassifier,
            TaskArg::Synthetic => Task::Synthetic,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ScaleArg {
    Small,
    Full,
}

impl From<ScaleArg> for Scale {
    fn from(s: ScaleArg) -> Scale {
        match s {
            ScaleArg::Small => Scale::Small,
            ScaleArg::Full => Scale::Full,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ScoreKindArg {
    NegLoss,
    MaxConfidence,
    CorrectClassConfidence,
}

impl From<ScoreKindArg> for ScoreKind {
    fn from(s: ScoreKindArg) -> ScoreKind {
        match s {
            ScoreKindArg::NegLoss => ScoreKind::NegLoss,
            ScoreKindArg::MaxConfidence => ScoreKind::MaxConfidence,
            ScoreKindArg::CorrectClassConfidence => ScoreKind::CorrectClassConfidence,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SynthKind {
    /// 28x28 grayscale images as IDX files.
    Mnist,
    /// 32x32x3 images as CIFAR-10 binary batches.
    Cifar10,
    /// Tweet-like posts as toxic_tweets.csv.
    Text,
    /// Gaussian blobs as numeric train.csv and test.csv.
    Blobs,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => "error",
        (false, 0) => "warn",
        (false, 1) => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match cli.command {
        Command::Train { cfg, out } => commands::train(&cfg, &out),
        Command::Attack {
            model,
            train_data,
            holdout,
            score_kind,
            seed,
            out,
        } => commands::attack(&model, &train_data, &holdout, score_kind.into(), seed, &out),
        Command::Sweep { cfg, out } => commands::sweep(&cfg, out.as_deref()),
        Command::Report { cells, out } => commands::report(&cells, &out),
        Command::SynthData {
            kind,
            out,
            seed,
            n_train,
            n_test,
        } => commands::synth_data(kind, &out, seed, n_train, n_test),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
