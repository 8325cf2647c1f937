use std::fmt;
use std::fs;
use std::io::Read as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _, Result};
use serde::{Deserialize, Serialize};

use privaudit_core::data::{
    load_cifar10_bin, load_mnist_idx, load_numeric_csv, load_text_csv, synth_blobs, synth_images,
    synth_tweets, text_dataset, write_cifar10_bin, write_mnist_idx, write_numeric_csv,
    write_text_csv, BlobSpec, Dataset, ImageSpec, TextVectorizer, TweetSpec, IDX_IMAGES_MAGIC,
};
use privaudit_core::mia::{audit_model, AttackResult, ScoreKind};
use privaudit_core::nn::{accuracy, init_model};
use privaudit_core::optim::{train as train_model, TrainConfig};
use privaudit_core::persist::{load_model, save_model};
use privaudit_core::rng::{derive_seed, STREAM_INIT};
use privaudit_core::runner::{
    emit_report, format_table, loss_for, prepare_task, read_cells_csv, run_sweep,
    write_history_csv, DataSource, Scale, SweepReport, SweepSpec, Task,
};
use privaudit_core::{Error, ModelSpec};

use crate::config::{apply_overrides, read_config, ConfigProblem};
use crate::{ConfigArgs, SynthKind};

/// Marks an error as a data problem (exit code 2).
#[derive(Debug)]
pub struct DataProblem(pub String);

impl fmt::Display for DataProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for DataProblem {}

/// 1 for configuration errors, 2 for data errors, 3 for numeric failures.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<ConfigProblem>().is_some() {
        return 1;
    }
    if err.downcast_ref::<DataProblem>().is_some() {
        return 2;
    }
    match err.chain().find_map(|c| c.downcast_ref::<Error>()) {
        Some(e) if e.is_data_error() => 2,
        Some(e) if e.is_numeric_failure() => 3,
        _ => 1,
    }
}

/// Configuration of the `train` subcommand.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainJob {
    pub task: Task,
    pub data: DataSource,
    pub model: Option<ModelSpec>,
    pub train: TrainConfig,
}

impl Default for TrainJob {
    fn default() -> Self {
        TrainJob::from(SweepSpec::default())
    }
}

impl From<SweepSpec> for TrainJob {
    fn from(s: SweepSpec) -> Self {
        TrainJob {
            task: s.task,
            data: s.data,
            model: s.model,
            train: TrainConfig {
                seed: s.seed,
                ..s.train
            },
        }
    }
}

fn load<T>(args: &ConfigArgs, preset: impl Fn(Task, Scale) -> T) -> Result<T>
where
    T: Serialize + serde::de::DeserializeOwned,
{
    let base = match (&args.config, args.task) {
        (Some(path), _) => read_config(path)?,
        (None, Some(task)) => preset(task.into(), args.scale.into()),
        (None, None) => bail!(ConfigProblem("give --config or --task".into())),
    };
    apply_overrides(base, &args.overrides)
}

fn config_error(e: Error) -> anyhow::Error {
    match e {
        Error::InvalidConfig(_) | Error::InvalidSpec(_) => ConfigProblem(e.to_string()).into(),
        e => e.into(),
    }
}

pub fn train(args: &ConfigArgs, out: &Path) -> Result<u8> {
    let mut job: TrainJob = load(args, |t, s| TrainJob::from(SweepSpec::preset(t, s)))?;
    if let Some(seed) = args.seed {
        job.train.seed = seed;
    }
    if args.dump_config {
        println!("{}", serde_json::to_string_pretty(&job)?);
        return Ok(0);
    }
    job.train.validate().map_err(config_error)?;
    let setup = prepare_task(job.task, &job.data, job.model.as_ref(), job.train.seed)
        .map_err(config_error)?;
    let model = init_model(&setup.model, derive_seed(job.train.seed, &[STREAM_INIT]))
        .map_err(config_error)?;
    let (model, history) = train_model(
        model,
        &setup.data.train,
        &setup.data.val,
        setup.loss,
        &job.train,
    )?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    save_model(
        &model,
        setup.data.vectorizer.as_ref(),
        out.join("model.json"),
    )?;
    write_history_csv(&history, &out.join("history.csv"))?;
    fs::write(
        out.join("config.json"),
        serde_json::to_string_pretty(&job)? + "\n",
    )?;
    println!(
        "train accuracy: {:.2}%",
        100.0 * accuracy(&model, &setup.data.train)?
    );
    println!(
        "val accuracy: {:.2}%",
        100.0 * accuracy(&model, &setup.data.val)?
    );
    println!("wrote {}", out.display());
    Ok(0)
}

fn read_prefix(path: &Path) -> Result<Vec<u8>> {
    if !path.exists() {
        return Err(Error::DataNotFound(path.to_path_buf()).into());
    }
    let mut buf = Vec::with_capacity(64);
    fs::File::open(path)
        .and_then(|f| f.take(64).read_to_end(&mut buf))
        .with_context(|| DataProblem(format!("cannot read {}", path.display())))?;
    Ok(buf)
}

/// Loads a data file in any supported format, recognized by content.
fn load_data_file(
    path: &Path,
    vectorizer: Option<&TextVectorizer>,
    classes: usize,
) -> Result<Dataset> {
    let head = read_prefix(path)?;
    if head.starts_with(&IDX_IMAGES_MAGIC.to_be_bytes()) {
        let name = path.to_string_lossy();
        if !name.contains("images-idx3") {
            bail!(DataProblem(format!(
                "{name}: IDX image files must be named *images-idx3* so the labels file can be found"
            )));
        }
        let labels = PathBuf::from(name.replace("images-idx3", "labels-idx1"));
        return Ok(load_mnist_idx(path, labels)?);
    }
    if path.extension().is_some_and(|e| e == "bin") {
        return Ok(load_cifar10_bin(&[path])?);
    }
    let first_line = String::from_utf8_lossy(&head);
    let first = first_line.split([',', '\n']).next().unwrap_or("").trim();
    match first {
        "text" => {
            let Some(v) = vectorizer else {
                bail!(DataProblem(format!(
                    "{} is a text corpus but the model has no vectorizer",
                    path.display()
                )));
            };
            Ok(text_dataset(v, &load_text_csv(path)?)?)
        }
        "label" => Ok(load_numeric_csv(path, Some(classes))?),
        _ => bail!(DataProblem(format!(
            "{}: unrecognized data format",
            path.display()
        ))),
    }
}

#[derive(Serialize)]
struct AttackReport<'a> {
    model: &'a Path,
    train_data: &'a Path,
    holdout: &'a Path,
    members: usize,
    nonmembers: usize,
    /// Percent scale.
    attacker_advantage: f64,
    result: AttackResult,
}

pub fn attack(
    model_path: &Path,
    train_path: &Path,
    holdout_path: &Path,
    kind: ScoreKind,
    seed: u64,
    out: &Path,
) -> Result<u8> {
    let saved = load_model(model_path)?;
    let model = &saved.model;
    let loss = loss_for(model.spec())?;
    let classes = loss.num_classes(model.output_dim());
    let fit = |path: &Path| -> Result<Dataset> {
        let ds = load_data_file(path, saved.vectorizer.as_ref(), classes)?;
        let ds = ds.reshape_inputs(model.input_shape()).map_err(|e| {
            DataProblem(format!(
                "{} does not match the model input {:?}: {e}",
                path.display(),
                model.input_shape()
            ))
        })?;
        if let Some(&y) = ds.labels().iter().find(|&&y| y >= classes) {
            bail!(DataProblem(format!(
                "{}: label {y} does not fit a model with {classes} classes",
                path.display()
            )));
        }
        Ok(ds)
    };
    let members = fit(train_path)?;
    let nonmembers = fit(holdout_path)?;
    let result = audit_model(model, &members, &nonmembers, loss, kind, seed)?;
    let k = members.len().min(nonmembers.len());
    let report = AttackReport {
        model: model_path,
        train_data: train_path,
        holdout: holdout_path,
        members: k,
        nonmembers: k,
        attacker_advantage: 100.0 * result.advantage,
        result,
    };
    if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(out, serde_json::to_string_pretty(&report)? + "\n")
        .with_context(|| format!("writing {}", out.display()))?;
    println!(
        "attacker advantage: {:.2} ({} members vs {} nonmembers, score {})",
        report.attacker_advantage,
        k,
        k,
        serde_json::to_value(kind)?.as_str().unwrap_or("?")
    );
    Ok(0)
}

fn print_report(report: &SweepReport, out: &Path) -> Result<()> {
    let files = emit_report(report, out)?;
    print!("{}", format_table(&report.summary()));
    if let Ok(c) = report.correlation(None) {
        println!(
            "gap/advantage Pearson r = {:.3} over {} cells",
            c.r,
            c.points.len()
        );
    }
    for w in &files.warnings {
        log::warn!("{w}");
    }
    println!("wrote {}", out.display());
    Ok(())
}

pub fn sweep(args: &ConfigArgs, out: Option<&Path>) -> Result<u8> {
    let mut spec: SweepSpec = load(args, SweepSpec::preset)?;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    if args.dump_config {
        println!("{}", serde_json::to_string_pretty(&spec)?);
        return Ok(0);
    }
    spec.validate().map_err(config_error)?;
    let out = out
        .map(Path::to_path_buf)
        .or_else(|| spec.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("runs").join(spec.task.name()));
    let report = run_sweep(&spec).map_err(config_error)?;
    for f in &report.failures {
        eprintln!(
            "cell {} {} λ={} run {} failed: {}",
            f.task, f.method, f.lambda, f.run, f.error
        );
    }
    print_report(&report, &out)?;
    Ok(if report.cells.is_empty() { 3 } else { 0 })
}

pub fn report(cells: &[PathBuf], out: &Path) -> Result<u8> {
    let mut all = Vec::new();
    for p in cells {
        all.extend(read_cells_csv(p)?);
    }
    let report = SweepReport {
        cells_expected: all.len(),
        cells: all,
        failures: Vec::new(),
    };
    print_report(&report, out)?;
    Ok(0)
}

pub fn synth_data(
    kind: SynthKind,
    out: &Path,
    seed: u64,
    n_train: usize,
    n_test: usize,
) -> Result<u8> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    match kind {
        SynthKind::Mnist => {
            let spec = ImageSpec {
                n_train,
                n_test,
                height: 28,
                width: 28,
                channels: 1,
                ..ImageSpec::default()
            };
            let (train, test) = synth_images(&spec, seed).map_err(config_error)?;
            write_mnist_idx(
                &train,
                out.join("train-images-idx3-ubyte"),
                out.join("train-labels-idx1-ubyte"),
            )?;
            write_mnist_idx(
                &test,
                out.join("t10k-images-idx3-ubyte"),
                out.join("t10k-labels-idx1-ubyte"),
            )?;
        }
        SynthKind::Cifar10 => {
            let spec = ImageSpec {
                n_train,
                n_test,
                ..ImageSpec::default()
            };
            let (train, test) = synth_images(&spec, seed).map_err(config_error)?;
            write_cifar10_bin(&train, out.join("data_batch_1.bin"))?;
            write_cifar10_bin(&test, out.join("test_batch.bin"))?;
        }
        SynthKind::Text => {
            let spec = TweetSpec {
                n: n_train + n_test,
                ..TweetSpec::default()
            };
            write_text_csv(
                &synth_tweets(&spec, seed).map_err(config_error)?,
                out.join("toxic_tweets.csv"),
            )?;
        }
        SynthKind::Blobs => {
            let blobs = match SweepSpec::preset(Task::Synthetic, Scale::Small).data {
                DataSource::Blobs { blobs } => blobs,
                _ => BlobSpec::default(),
            };
            let spec = BlobSpec {
                n_train,
                n_test,
                ..blobs
            };
            let (train, test) = synth_blobs(&spec, seed).map_err(config_error)?;
            write_numeric_csv(&train, out.join("train.csv"))?;
            write_numeric_csv(&test, out.join("test.csv"))?;
        }
    }
    println!("wrote {}", out.display());
    Ok(0)
}
