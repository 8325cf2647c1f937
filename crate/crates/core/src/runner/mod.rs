//! λ sweeps over training methods: data preparation, per-cell training and
//! auditing, aggregation, correlation and report files.

mod report;
mod stats;
mod svg;

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use report::{
    emit_report, format_lambda, format_table, read_cells_csv, write_history_csv, ReportFiles,
};
pub use stats::{
    aggregate, gap_advantage_correlation, pearson, CellSummary, Correlation, CorrelationPoint, Stat,
};

use crate::data::{
    fit_vectorizer, inject_bias, load_cifar10_bin, load_mnist_idx, load_numeric_csv, load_text_csv,
    split, synth_blobs, synth_images, synth_tweets, text_dataset, BiasSpec, BlobSpec, Dataset,
    ImageSpec, TextCorpus, TextVectorizer, TweetSpec,
};
use crate::error::{Error, Result};
use crate::mia::{
    scores_from_logits, size_matched_indices, threshold_attack, MembershipScores, ScoreKind,
};
use crate::nn::{init_model, loss_for_width, LossKind, Model, ModelSpec, EVAL_CHUNK};
use crate::optim::{train, DpConfig, OptimizerConfig, OptimizerKind, TrainConfig};
use crate::rng::{derive_seed, STREAM_INIT};

/// Environment variable naming the dataset root directory.
pub const DATA_DIR_ENV: &str = "PRIVAUDIT_DATA_DIR";

const DATA_STREAM: u64 = 11;
const ATTACK_STREAM: u64 = 12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    MnistFcnn,
    Cifar10Cnn,
    TextClassifier,
    Synthetic,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::MnistFcnn => "mnist_fcnn",
            Task::Cifar10Cnn => "cifar10_cnn",
            Task::TextClassifier => "text_classifier",
            Task::Synthetic => "synthetic",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Non-private training (Adam or SGD as configured).
    Baseline,
    /// DP-Adam with per-example clipping and Gaussian noise.
    Dp,
}

impl Method {
    fn tag(self) -> u64 {
        match self {
            Method::Baseline => 0,
            Method::Dp => 1,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Baseline => "Baseline",
            Method::Dp => "DP",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    /// Desk-scale subsets and few epochs.
    Small,
    /// Full datasets and the original training lengths.
    Full,
}

/// Text pipeline settings shared by the CSV and synthetic text sources.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TextSettings {
    pub val_fraction: f64,
    pub max_tokens: usize,
    pub sequence_length: usize,
    pub embed_dim: usize,
    /// Label-bias injection applied to the whole corpus before splitting.
    pub bias: Option<BiasSpec>,
}

impl Default for TextSettings {
    fn default() -> Self {
        TextSettings {
            val_fraction: 0.2,
            max_tokens: 10_000,
            sequence_length: 15,
            embed_dim: 128,
            bias: Some(BiasSpec::default()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// IDX files `train-*-ubyte` and `t10k-*-ubyte` in `dir`
    /// (default `$PRIVAUDIT_DATA_DIR/mnist`).
    Mnist {
        #[serde(default)]
        dir: Option<PathBuf>,
        #[serde(default)]
        train_rows: Option<usize>,
        #[serde(default)]
        val_rows: Option<usize>,
    },
    /// Binary batches `data_batch_{1..5}.bin` and `test_batch.bin` in `dir`
    /// (default `$PRIVAUDIT_DATA_DIR/cifar-10-batches-bin`).
    Cifar10 {
        #[serde(default)]
        dir: Option<PathBuf>,
        #[serde(default)]
        train_rows: Option<usize>,
        #[serde(default)]
        val_rows: Option<usize>,
    },
    SyntheticImages {
        #[serde(default)]
        images: ImageSpec,
    },
    /// CSV with header `text,label[,vulnerable]`.
    TextCsv {
        path: PathBuf,
        #[serde(default)]
        text: TextSettings,
    },
    SyntheticText {
        #[serde(default)]
        tweets: TweetSpec,
        #[serde(default)]
        text: TextSettings,
    },
    Blobs {
        #[serde(default)]
        blobs: BlobSpec,
    },
    /// Numeric CSV files with header `label,x0,x1,...`.
    CsvTable {
        train: PathBuf,
        val: PathBuf,
        /// Class count; inferred from the largest label when absent.
        #[serde(default)]
        classes: Option<usize>,
    },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Blobs {
            blobs: BlobSpec::default(),
        }
    }
}

/// Train and validation sets ready for a model, plus the fitted vectorizer
/// for text sources.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub train: Dataset,
    pub val: Dataset,
    pub vectorizer: Option<TextVectorizer>,
}

/// `$PRIVAUDIT_DATA_DIR`, or `data` relative to the working directory.
pub fn data_root() -> PathBuf {
    std::env::var_os(DATA_DIR_ENV).map_or_else(|| PathBuf::from("data"), PathBuf::from)
}

fn limit(ds: Dataset, rows: Option<usize>, seed: u64) -> Dataset {
    match rows {
        Some(k) if k < ds.len() => ds.sample(k, seed),
        _ => ds,
    }
}

fn prepare_text(corpus: &TextCorpus, text: &TextSettings, seed: u64) -> Result<PreparedData> {
    if corpus.is_empty() {
        return Err(Error::EmptyDataset("text corpus has no rows".into()));
    }
    let n = corpus.len();
    let index = Dataset::new(
        crate::tensor::Tensor::new(vec![n, 1], (0..n).map(|i| i as f64).collect())?,
        corpus.labels.clone(),
        2,
    )?;
    let (tr, va) = split(&index, 1.0 - text.val_fraction, derive_seed(seed, &[0]))?;
    let rows =
        |d: &Dataset| -> Vec<usize> { d.features().data().iter().map(|&v| v as usize).collect() };
    let (tr_rows, va_rows) = (rows(&tr), rows(&va));
    let train_texts: Vec<&str> = tr_rows.iter().map(|&i| corpus.texts[i].as_str()).collect();
    let vectorizer = fit_vectorizer(&train_texts, text.max_tokens, text.sequence_length);
    let mut all = text_dataset(&vectorizer, corpus)?;
    if let Some(bias) = &text.bias {
        all = inject_bias(&all, bias)?;
    }
    Ok(PreparedData {
        train: all.subset(&tr_rows),
        val: all.subset(&va_rows),
        vectorizer: Some(vectorizer),
    })
}

impl DataSource {
    /// Loads or generates the data. Subsampling and splits are seeded.
    pub fn prepare(&self, seed: u64) -> Result<PreparedData> {
        let plain = |train, val| PreparedData {
            train,
            val,
            vectorizer: None,
        };
        match self {
            DataSource::Mnist {
                dir,
                train_rows,
                val_rows,
            } => {
                let dir = dir.clone().unwrap_or_else(|| data_root().join("mnist"));
                let train = load_mnist_idx(
                    dir.join("train-images-idx3-ubyte"),
                    dir.join("train-labels-idx1-ubyte"),
                )?;
                let val = load_mnist_idx(
                    dir.join("t10k-images-idx3-ubyte"),
                    dir.join("t10k-labels-idx1-ubyte"),
                )?;
                Ok(plain(
                    limit(train, *train_rows, derive_seed(seed, &[1])),
                    limit(val, *val_rows, derive_seed(seed, &[2])),
                ))
            }
            DataSource::Cifar10 {
                dir,
                train_rows,
                val_rows,
            } => {
                let dir = dir
                    .clone()
                    .unwrap_or_else(|| data_root().join("cifar-10-batches-bin"));
                let batches: Vec<PathBuf> = (1..=5)
                    .map(|i| dir.join(format!("data_batch_{i}.bin")))
                    .filter(|p| p.exists())
                    .collect();
                if batches.is_empty() {
                    return Err(Error::DataNotFound(dir.join("data_batch_1.bin")));
                }
                let train = load_cifar10_bin(&batches)?;
                let val = load_cifar10_bin(&[dir.join("test_batch.bin")])?;
                Ok(plain(
                    limit(train, *train_rows, derive_seed(seed, &[1])),
                    limit(val, *val_rows, derive_seed(seed, &[2])),
                ))
            }
            DataSource::SyntheticImages { images } => {
                let (train, val) = synth_images(images, seed)?;
                Ok(plain(train, val))
            }
            DataSource::TextCsv { path, text } => prepare_text(&load_text_csv(path)?, text, seed),
            DataSource::SyntheticText { tweets, text } => {
                prepare_text(&synth_tweets(tweets, derive_seed(seed, &[3]))?, text, seed)
            }
            DataSource::Blobs { blobs } => {
                let (train, val) = synth_blobs(blobs, seed)?;
                Ok(plain(train, val))
            }
            DataSource::CsvTable {
                train,
                val,
                classes,
            } => {
                let train = load_numeric_csv(train, *classes)?;
                let val = load_numeric_csv(val, *classes)?;
                let k = train.num_classes().max(val.num_classes());
                let widen = |d: Dataset| Dataset::new(d.features().clone(), d.labels().to_vec(), k);
                Ok(plain(widen(train)?, widen(val)?))
            }
        }
    }

    fn text_settings(&self) -> Option<&TextSettings> {
        match self {
            DataSource::TextCsv { text, .. } | DataSource::SyntheticText { text, .. } => Some(text),
            _ => None,
        }
    }
}

/// The architecture a task uses unless a config overrides it. Synthetic
/// tasks get a one-hidden-layer ReLU network of width 64.
pub fn default_model(task: Task, data: &DataSource, prepared: &PreparedData) -> Result<ModelSpec> {
    Ok(match task {
        Task::MnistFcnn => ModelSpec::mnist_fcnn(),
        Task::Cifar10Cnn => ModelSpec::cifar10_cnn(),
        Task::TextClassifier => {
            let text = data.text_settings().ok_or_else(|| {
                Error::InvalidConfig("text_classifier needs a text data source".into())
            })?;
            let vocab = prepared
                .vectorizer
                .as_ref()
                .map_or(text.max_tokens, TextVectorizer::max_tokens);
            ModelSpec::text_classifier(vocab, text.sequence_length, text.embed_dim)
        }
        Task::Synthetic => {
            let input = prepared.train.features().row_len();
            ModelSpec::mlp(input, &[64], prepared.train.num_classes())
        }
    })
}

/// Loss matching the model's output width: sigmoid cross-entropy for a
/// single output, softmax cross-entropy otherwise.
pub fn loss_for(model: &ModelSpec) -> Result<LossKind> {
    Ok(loss_for_width(model.output_dim()?))
}

/// Views both datasets with the model's input shape.
pub fn conform(prepared: &PreparedData, model: &ModelSpec) -> Result<PreparedData> {
    Ok(PreparedData {
        train: prepared.train.reshape_inputs(&model.input_shape)?,
        val: prepared.val.reshape_inputs(&model.input_shape)?,
        vectorizer: prepared.vectorizer.clone(),
    })
}

/// Data conformed to a model, with the matching loss.
#[derive(Clone, Debug)]
pub struct TaskSetup {
    pub data: PreparedData,
    pub model: ModelSpec,
    pub loss: LossKind,
}

/// Loads the task's data (seeded from `seed`), picks the architecture and
/// reshapes the inputs to fit it.
pub fn prepare_task(
    task: Task,
    data: &DataSource,
    model: Option<&ModelSpec>,
    seed: u64,
) -> Result<TaskSetup> {
    let raw = data.prepare(derive_seed(seed, &[DATA_STREAM]))?;
    let model = match model {
        Some(m) => m.clone(),
        None => default_model(task, data, &raw)?,
    };
    let loss = loss_for(&model)?;
    let data = conform(&raw, &model)?;
    let width = model.output_dim()?;
    let classes = loss.num_classes(width);
    if let Some(&bad) = data
        .train
        .labels()
        .iter()
        .chain(data.val.labels())
        .find(|&&y| y >= classes)
    {
        return Err(Error::InvalidSpec(format!(
            "label {bad} does not fit a model with {width} outputs"
        )));
    }
    Ok(TaskSetup { data, model, loss })
}

/// A full sweep: every method × λ × run is one independently seeded cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSpec {
    pub task: Task,
    pub methods: Vec<Method>,
    /// Nonnegative and strictly increasing.
    pub lambdas: Vec<f64>,
    pub runs_per_cell: usize,
    /// Base seed; data, cell and attack seeds derive from it.
    pub seed: u64,
    /// Base training settings; each cell sets `l2_lambda`, `seed` and the
    /// optimizer kind for its method.
    pub train: TrainConfig,
    /// DP settings used by `dp` cells.
    pub dp: DpConfig,
    pub data: DataSource,
    /// Overrides the task's default architecture.
    pub model: Option<ModelSpec>,
    pub score_kind: ScoreKind,
    /// Fill the `seconds` column with wall-clock time. Off by default so
    /// reruns produce identical files.
    pub record_timing: bool,
    /// Concurrent cells; 0 uses the available parallelism.
    pub workers: usize,
    pub output_dir: Option<PathBuf>,
}

pub const PAPER_LAMBDAS: [f64; 6] = [0.0, 0.001, 0.002, 0.003, 0.004, 0.005];
pub const TEXT_LAMBDAS: [f64; 6] = [0.0, 0.0001, 0.0002, 0.0003, 0.0004, 0.0005];

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            task: Task::Synthetic,
            methods: vec![Method::Baseline, Method::Dp],
            lambdas: PAPER_LAMBDAS.to_vec(),
            runs_per_cell: 5,
            seed: 0,
            train: TrainConfig::default(),
            dp: DpConfig::default(),
            data: DataSource::default(),
            model: None,
            score_kind: ScoreKind::NegLoss,
            record_timing: false,
            workers: 0,
            output_dir: None,
        }
    }
}

impl SweepSpec {
    /// Ready-made sweeps for each task. Small presets shrink data and
    /// epochs (and raise the learning rate to 1e-3 where the original used
    /// 1e-4) so they finish at a desk.
    pub fn preset(task: Task, scale: Scale) -> SweepSpec {
        let adam = |lr: f64| OptimizerConfig {
            learning_rate: lr,
            ..OptimizerConfig::default()
        };
        let small = scale == Scale::Small;
        match task {
            Task::MnistFcnn => SweepSpec {
                task,
                runs_per_cell: 5,
                train: TrainConfig {
                    epochs: if small { 5 } else { 50 },
                    batch_size: 32,
                    optimizer: adam(if small { 1e-3 } else { 1e-4 }),
                    ..TrainConfig::default()
                },
                data: DataSource::Mnist {
                    dir: None,
                    train_rows: small.then_some(6000),
                    val_rows: None,
                },
                ..SweepSpec::default()
            },
            Task::Cifar10Cnn => SweepSpec {
                task,
                runs_per_cell: if small { 1 } else { 5 },
                train: TrainConfig {
                    epochs: if small { 10 } else { 50 },
                    batch_size: 32,
                    optimizer: adam(if small { 1e-3 } else { 1e-4 }),
                    ..TrainConfig::default()
                },
                data: DataSource::Cifar10 {
                    dir: None,
                    train_rows: small.then_some(8000),
                    val_rows: small.then_some(2000),
                },
                ..SweepSpec::default()
            },
            Task::TextClassifier => SweepSpec {
                task,
                lambdas: TEXT_LAMBDAS.to_vec(),
                runs_per_cell: 5,
                train: TrainConfig {
                    epochs: if small { 20 } else { 100 },
                    batch_size: 1024,
                    optimizer: adam(1e-3),
                    ..TrainConfig::default()
                },
                data: if small {
                    DataSource::SyntheticText {
                        tweets: TweetSpec::default(),
                        text: TextSettings::default(),
                    }
                } else {
                    DataSource::TextCsv {
                        path: data_root().join("toxic_tweets.csv"),
                        text: TextSettings::default(),
                    }
                },
                ..SweepSpec::default()
            },
            Task::Synthetic => SweepSpec {
                task,
                train: TrainConfig {
                    epochs: 30,
                    batch_size: 32,
                    optimizer: adam(1e-3),
                    ..TrainConfig::default()
                },
                data: DataSource::Blobs {
                    blobs: BlobSpec {
                        n_train: 500,
                        n_test: 500,
                        dim: 20,
                        classes: 4,
                        separation: 3.0,
                        label_noise: 0.2,
                    },
                },
                ..SweepSpec::default()
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::InvalidConfig("methods must not be empty".into()));
        }
        let mut seen = self.methods.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.methods.len() {
            return Err(Error::InvalidConfig("methods must not repeat".into()));
        }
        if self.lambdas.is_empty() {
            return Err(Error::InvalidConfig("lambdas must not be empty".into()));
        }
        if self.lambdas.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return Err(Error::InvalidConfig(
                "lambdas must be finite and >= 0".into(),
            ));
        }
        if self.lambdas.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig(
                "lambdas must be strictly increasing".into(),
            ));
        }
        if self.runs_per_cell == 0 {
            return Err(Error::InvalidConfig(
                "runs_per_cell must be at least 1".into(),
            ));
        }
        for m in &self.methods {
            self.cell_config(*m, 0.0, 0).validate()?;
        }
        Ok(())
    }

    /// Seed of one cell, from (base seed, method, λ index, run index).
    pub fn cell_seed(&self, method: Method, lambda_index: usize, run: usize) -> u64 {
        derive_seed(self.seed, &[method.tag(), lambda_index as u64, run as u64])
    }

    fn cell_config(&self, method: Method, lambda: f64, seed: u64) -> TrainConfig {
        let mut cfg = self.train.clone();
        cfg.l2_lambda = lambda;
        cfg.seed = seed;
        match method {
            Method::Baseline => {
                if cfg.optimizer.kind == OptimizerKind::DpAdam {
                    cfg.optimizer.kind = OptimizerKind::Adam;
                }
                cfg.dp = None;
            }
            Method::Dp => {
                cfg.optimizer.kind = OptimizerKind::DpAdam;
                cfg.dp = Some(self.dp.clone());
            }
        }
        cfg
    }

    pub fn expected_cells(&self) -> usize {
        self.methods.len() * self.lambdas.len() * self.runs_per_cell
    }
}

/// Outcome of one (method, λ, run). Accuracies and advantage are percent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub task: Task,
    pub method: Method,
    pub lambda: f64,
    pub run: usize,
    pub seed: u64,
    pub train_acc: f64,
    pub val_acc: f64,
    pub attacker_advantage: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub task: Task,
    pub method: Method,
    pub lambda: f64,
    pub run: usize,
    pub seed: u64,
    pub error: String,
    /// True for divergence and non-finite values.
    pub numeric: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub cells: Vec<CellResult>,
    pub failures: Vec<CellFailure>,
    pub cells_expected: usize,
}

impl SweepReport {
    /// Concatenates several reports, e.g. sweeps over different tasks.
    pub fn merge(reports: impl IntoIterator<Item = SweepReport>) -> SweepReport {
        let mut out = SweepReport::default();
        for r in reports {
            out.cells.extend(r.cells);
            out.failures.extend(r.failures);
            out.cells_expected += r.cells_expected;
        }
        out
    }

    /// Per-cell aggregates; empty when no cell completed.
    pub fn summary(&self) -> Vec<CellSummary> {
        aggregate(&self.cells).unwrap_or_default()
    }

    pub fn correlation(&self, tasks: Option<&[Task]>) -> Result<Correlation> {
        gap_advantage_correlation(&self.summary(), tasks)
    }
}

/// Trains and audits one model. Returns percent-scale metrics.
pub fn evaluate_cell(
    model: &Model,
    data: &PreparedData,
    loss: LossKind,
    score_kind: ScoreKind,
    attack_seed: u64,
) -> Result<(f64, f64, f64)> {
    let width = model.output_dim();
    let eval = |ds: &Dataset| -> Result<(f64, Vec<f64>)> {
        let logits = model.forward_chunked(ds.features(), EVAL_CHUNK)?;
        let preds = loss.predict(logits.data(), width);
        let correct = preds
            .iter()
            .zip(ds.labels())
            .filter(|(p, y)| p == y)
            .count();
        let scores = scores_from_logits(loss, logits.data(), width, ds.labels(), score_kind)?;
        Ok((100.0 * correct as f64 / ds.len() as f64, scores))
    };
    let (train_acc, train_scores) = eval(&data.train)?;
    let (val_acc, val_scores) = eval(&data.val)?;
    let (mi, ni) = size_matched_indices(train_scores.len(), val_scores.len(), attack_seed);
    let scores = MembershipScores::new(
        mi.iter().map(|&i| train_scores[i]).collect(),
        ni.iter().map(|&i| val_scores[i]).collect(),
        score_kind,
    )?;
    let advantage = 100.0 * threshold_attack(&scores).advantage;
    Ok((train_acc, val_acc, advantage))
}

struct Job {
    method: Method,
    lambda_index: usize,
    run: usize,
}

/// Runs every cell of the sweep. Data problems and invalid settings are
/// errors; failures inside a cell are recorded in the report instead.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepReport> {
    spec.validate()?;
    let TaskSetup {
        data,
        model: model_spec,
        loss,
    } = prepare_task(spec.task, &spec.data, spec.model.as_ref(), spec.seed)?;

    let mut jobs = Vec::with_capacity(spec.expected_cells());
    for &method in &spec.methods {
        for lambda_index in 0..spec.lambdas.len() {
            for run in 0..spec.runs_per_cell {
                jobs.push(Job {
                    method,
                    lambda_index,
                    run,
                });
            }
        }
    }

    let run_job = |job: &Job| -> std::result::Result<CellResult, CellFailure> {
        let lambda = spec.lambdas[job.lambda_index];
        let seed = spec.cell_seed(job.method, job.lambda_index, job.run);
        let start = Instant::now();
        let outcome = (|| {
            let model = init_model(&model_spec, derive_seed(seed, &[STREAM_INIT]))?;
            let cfg = spec.cell_config(job.method, lambda, seed);
            let (model, _) = train(model, &data.train, &data.val, loss, &cfg)?;
            evaluate_cell(
                &model,
                &data,
                loss,
                spec.score_kind,
                derive_seed(seed, &[ATTACK_STREAM]),
            )
        })();
        match outcome {
            Ok((train_acc, val_acc, attacker_advantage)) => {
                log::info!(
                    "{} {} λ={lambda} run {}: train {train_acc:.2} val {val_acc:.2} adv {attacker_advantage:.2}",
                    spec.task,
                    job.method,
                    job.run
                );
                Ok(CellResult {
                    task: spec.task,
                    method: job.method,
                    lambda,
                    run: job.run,
                    seed,
                    train_acc,
                    val_acc,
                    attacker_advantage,
                    seconds: if spec.record_timing {
                        start.elapsed().as_secs_f64()
                    } else {
                        0.0
                    },
                })
            }
            Err(e) => {
                log::warn!(
                    "{} {} λ={lambda} run {} failed: {e}",
                    spec.task,
                    job.method,
                    job.run
                );
                Err(CellFailure {
                    task: spec.task,
                    method: job.method,
                    lambda,
                    run: job.run,
                    seed,
                    numeric: e.is_numeric_failure(),
                    error: e.to_string(),
                })
            }
        }
    };

    let workers = match spec.workers {
        0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
        w => w,
    }
    .min(jobs.len());
    let outcomes: Vec<std::result::Result<CellResult, CellFailure>> = if workers <= 1 {
        jobs.iter().map(run_job).collect()
    } else {
        let next = AtomicUsize::new(0);
        let slots: Mutex<Vec<Option<std::result::Result<CellResult, CellFailure>>>> =
            Mutex::new((0..jobs.len()).map(|_| None).collect());
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= jobs.len() {
                        break;
                    }
                    let out = run_job(&jobs[i]);
                    slots
                        .lock()
                        .expect("no worker panics while holding the lock")[i] = Some(out);
                });
            }
        });
        slots
            .into_inner()
            .expect("workers finished")
            .into_iter()
            .map(|o| o.expect("every job ran"))
            .collect()
    };

    let mut report = SweepReport {
        cells_expected: jobs.len(),
        ..SweepReport::default()
    };
    for o in outcomes {
        match o {
            Ok(c) => report.cells.push(c),
            Err(f) => report.failures.push(f),
        }
    }
    Ok(report)
}

/// Runs the sweep and, if `output_dir` is set, writes its report there.
pub fn run_and_emit(spec: &SweepSpec) -> Result<(SweepReport, Option<ReportFiles>)> {
    let report = run_sweep(spec)?;
    let files = match &spec.output_dir {
        Some(dir) => Some(emit_report(&report, dir)?),
        None => None,
    };
    Ok((report, files))
}

/// Reads a JSON sweep spec, reporting the exact path of an unknown or
/// mistyped key.
pub fn load_sweep_spec(path: &Path) -> Result<SweepSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de)
        .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> SweepSpec {
        SweepSpec {
            methods: vec![Method::Baseline],
            lambdas: vec![0.0],
            runs_per_cell: 1,
            train: TrainConfig {
                epochs: 1,
                ..TrainConfig::default()
            },
            data: DataSource::Blobs {
                blobs: BlobSpec {
                    n_train: 40,
                    n_test: 40,
                    ..BlobSpec::default()
                },
            },
            workers: 1,
            ..SweepSpec::default()
        }
    }

    #[test]
    fn one_cell_sweep() {
        let report = run_sweep(&tiny()).unwrap();
        assert_eq!(report.cells.len(), 1);
        assert!(report.failures.is_empty());
        let c = &report.cells[0];
        assert!(
            (0.0..=100.0).contains(&c.train_acc) && (0.0..=100.0).contains(&c.attacker_advantage)
        );
        assert_eq!(c.seconds, 0.0);
    }

    #[test]
    fn lambdas_must_increase() {
        let spec = SweepSpec {
            lambdas: vec![0.0, 0.002, 0.001],
            ..tiny()
        };
        assert!(matches!(spec.validate(), Err(Error::InvalidConfig(_))));
        let spec = SweepSpec {
            lambdas: vec![-0.1],
            ..tiny()
        };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn cell_seeds_differ_by_coordinate() {
        let s = tiny();
        let a = s.cell_seed(Method::Baseline, 0, 0);
        assert_ne!(a, s.cell_seed(Method::Dp, 0, 0));
        assert_ne!(a, s.cell_seed(Method::Baseline, 1, 0));
        assert_ne!(a, s.cell_seed(Method::Baseline, 0, 1));
    }

    #[test]
    fn threaded_and_sequential_sweeps_agree() {
        let spec = SweepSpec {
            methods: vec![Method::Baseline, Method::Dp],
            lambdas: vec![0.0, 0.01],
            ..tiny()
        };
        let seq = run_sweep(&spec).unwrap();
        let par = run_sweep(&SweepSpec { workers: 3, ..spec }).unwrap();
        assert_eq!(seq, par);
        assert_eq!(seq.cells.len(), 4);
    }

    #[test]
    fn presets_validate() {
        for task in [
            Task::MnistFcnn,
            Task::Cifar10Cnn,
            Task::TextClassifier,
            Task::Synthetic,
        ] {
            for scale in [Scale::Small, Scale::Full] {
                SweepSpec::preset(task, scale).validate().unwrap();
            }
        }
    }

    #[test]
    fn unknown_keys_report_their_path() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.json");
        std::fs::write(&p, r#"{"train": {"optimizer": {"learning_rat": 0.1}}}"#).unwrap();
        let err = load_sweep_spec(&p).unwrap_err().to_string();
        assert!(err.contains("train.optimizer"), "{err}");
    }
}
