use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::ExperimentConfig;
use crate::data::{
    load_manifest, split_preset, synthesize_toy_dataset, Dataset, DatasetManifest, Split, SplitCounts, SplitDiff,
    SynthSpec,
};
use crate::error::{Error, Result};
use crate::metrics::{
    bootstrap_mcc_samples, evaluate_scores, fps, paired_t_test, roc_csv, Evaluation, EvaluationReport, FpsMeasurement,
};
use crate::models::Model;
use crate::tensor::Tensor;
use crate::training::{evaluate_loss, lr_at_epoch, predict_proba, Objective, Trainer};

pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const TRAIN_LOG: &str = "train_log.csv";
pub const RUN_META: &str = "run_meta.toml";
pub const REPORT: &str = "report.toml";
pub const ROC_CSV: &str = "roc.csv";
pub const CONFUSION_CSV: &str = "confusion.csv";
pub const PREDS_CSV: &str = "preds.csv";
pub const COMPARE_CSV: &str = "compare.csv";

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn unix_seconds() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

/// Timing and other run-dependent values, kept apart from the
/// reproducible artifacts.
#[derive(Debug, Serialize)]
struct RunMeta<'a> {
    command: &'a str,
    started_unix: f64,
    finished_unix: f64,
    elapsed_seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    fps: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    fps_batch: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    parameters: Option<usize>,
}

struct Clock {
    started_unix: f64,
    start: Instant,
}

impl Clock {
    fn start() -> Self {
        Clock { started_unix: unix_seconds(), start: Instant::now() }
    }

    fn write(&self, dir: &Path, command: &str, fps: Option<FpsMeasurement>, parameters: Option<usize>) -> Result<()> {
        let meta = RunMeta {
            command,
            started_unix: self.started_unix,
            finished_unix: unix_seconds(),
            elapsed_seconds: self.start.elapsed().as_secs_f64(),
            fps: fps.map(|f| f.fps),
            fps_batch: fps.map(|f| f.batch),
            parameters,
        };
        let text = toml::to_string(&meta).map_err(|e| Error::Contract(format!("run metadata: {e}")))?;
        write_file(&dir.join(RUN_META), &text)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub valid_loss: Option<f64>,
    pub valid_accuracy: Option<f64>,
}

impl EpochRecord {
    fn csv_line(&self) -> String {
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{}\n",
            self.epoch,
            self.lr,
            self.train_loss,
            opt(self.valid_loss),
            opt(self.valid_accuracy)
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub epochs: Vec<EpochRecord>,
}

/// Trains the configured model, writing `train_log.csv` as epochs finish,
/// then the checkpoint and run metadata under `config.output`.
pub fn cmd_train(config: &ExperimentConfig) -> Result<TrainOutcome> {
    let clock = Clock::start();
    let manifest = load_manifest(&config.dataset.manifest)?;
    let resolution = config.dataset.resolution.dims();
    let channels = config.dataset.channels;
    let model_config = config.model.resolve(resolution, channels, manifest.num_classes())?;
    let mut model = Model::new(config.model.display_name(), &model_config, config.seed, config.model.precision())?;
    let policy = config.dataset.augmentation.policy()?;

    let train = Dataset::load(&manifest, Split::Train, resolution, channels)?;
    let valid = if manifest.split_counts().valid > 0 {
        Some(Dataset::load(&manifest, Split::Valid, resolution, channels)?)
    } else {
        None
    };
    let objective = Objective::from_config(&config.train, &train.class_counts())?;
    let mut trainer = Trainer::new(&model, objective);

    let out = &config.output;
    create_dir(out)?;
    let log_path = out.join(TRAIN_LOG);
    let log_file = File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let mut log = BufWriter::new(log_file);
    let mut log_line = |line: &str| -> Result<()> {
        log.write_all(line.as_bytes()).and_then(|_| log.flush()).map_err(|e| Error::io(&log_path, e))
    };
    log_line("epoch,lr,train_loss,valid_loss,valid_accuracy\n")?;

    let mut data_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(2));
    let mut epochs = Vec::with_capacity(config.train.epochs);
    for epoch in 0..config.train.epochs {
        let lr = lr_at_epoch(&config.train, epoch);
        let batches = train.batches(config.train.batch_size, &policy, &mut data_rng)?;
        let train_loss = trainer.train_epoch(&mut model, batches, lr, &mut dropout_rng)?;
        let (valid_loss, valid_accuracy) = match &valid {
            Some(v) => {
                let (l, a) = evaluate_loss(&model, &trainer.objective, v.ordered_batches(config.eval.batch_size))?;
                (Some(l), Some(a))
            }
            None => (None, None),
        };
        let record = EpochRecord { epoch: epoch + 1, lr, train_loss, valid_loss, valid_accuracy };
        log_line(&record.csv_line())?;
        epochs.push(record);
    }

    let checkpoint = out.join(CHECKPOINT_DIR);
    model.save(&checkpoint)?;
    clock.write(out, "train", None, Some(model.parameter_count()))?;
    Ok(TrainOutcome { checkpoint, log: log_path, epochs })
}

/// `[n, K]` class probabilities over the whole split in manifest order.
pub fn score_dataset(model: &Model, dataset: &Dataset, batch_size: usize) -> Result<Tensor> {
    let mut rows = Vec::with_capacity(dataset.len() * model.config().num_classes());
    for batch in dataset.ordered_batches(batch_size) {
        rows.extend_from_slice(predict_proba(model, &batch?.images)?.data());
    }
    Tensor::from_vec(rows, &[dataset.len(), model.config().num_classes()])
}

fn check_compatible(model: &Model, manifest: &DatasetManifest, checkpoint: &Path) -> Result<()> {
    let k = model.config().num_classes();
    if k != manifest.num_classes() {
        return Err(Error::Config(format!(
            "checkpoint {} predicts {k} classes but the manifest lists {}",
            checkpoint.display(),
            manifest.num_classes()
        )));
    }
    Ok(())
}

fn load_checkpoint(checkpoint: &Path) -> Result<Model> {
    Model::load(checkpoint).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("checkpoint {}: {m}", checkpoint.display())),
        other => other,
    })
}

#[derive(Debug, Clone)]
pub struct EvaluateArgs {
    pub checkpoint: PathBuf,
    pub manifest: PathBuf,
    pub split: Split,
    pub out: PathBuf,
    pub batch_size: usize,
    /// Resolution the experiment config expects, checked against the
    /// checkpoint.
    pub expected_resolution: Option<(usize, usize)>,
    /// `(batch, warmup, iters)`; the measurement goes to run metadata only.
    pub fps: Option<(usize, usize, usize)>,
}

#[derive(Debug, Clone)]
pub struct EvaluateOutcome {
    pub report: EvaluationReport,
    pub evaluation: Evaluation,
    pub fps: Option<FpsMeasurement>,
}

fn preds_csv(paths: &[String], ev: &Evaluation, scores: &Tensor) -> String {
    let k = scores.shape()[1];
    let mut out = String::from("path,true,pred");
    for j in 0..k {
        out.push_str(&format!(",score_{j}"));
    }
    out.push('\n');
    for (i, row) in scores.data().chunks(k).enumerate() {
        out.push_str(&format!("{},{},{}", paths[i], ev.labels[i], ev.preds[i]));
        for v in row {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}

/// Augmentation-free inference over one split; writes the report, ROC,
/// confusion and prediction files.
pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<EvaluateOutcome> {
    let clock = Clock::start();
    let model = load_checkpoint(&args.checkpoint)?;
    let config = model.config();
    if let Some(expected) = args.expected_resolution {
        if expected != config.image_size() {
            return Err(Error::Config(format!(
                "checkpoint {} expects {:?} images but the config asks for {expected:?}",
                args.checkpoint.display(),
                config.image_size()
            )));
        }
    }
    let manifest = load_manifest(&args.manifest)?;
    check_compatible(&model, &manifest, &args.checkpoint)?;
    let dataset = Dataset::load(&manifest, args.split, config.image_size(), config.channels())?;
    let scores = score_dataset(&model, &dataset, args.batch_size)?;
    let evaluation = evaluate_scores(&scores, &dataset.labels(), &manifest.classes)?;
    let report = EvaluationReport::new(model.name(), args.split.as_str(), &evaluation);

    create_dir(&args.out)?;
    write_file(&args.out.join(REPORT), &report.to_toml()?)?;
    write_file(&args.out.join(ROC_CSV), &roc_csv(&evaluation.roc, &manifest.classes))?;
    write_file(&args.out.join(CONFUSION_CSV), &evaluation.confusion.to_csv())?;
    write_file(&args.out.join(PREDS_CSV), &preds_csv(&dataset.paths, &evaluation, &scores))?;

    let fps = match args.fps {
        Some((batch, warmup, iters)) => Some(measure_fps(&model, batch, warmup, iters)?),
        None => None,
    };
    clock.write(&args.out, "evaluate", fps, Some(model.parameter_count()))?;
    Ok(EvaluateOutcome { report, evaluation, fps })
}

fn measure_fps(model: &Model, batch: usize, warmup: usize, iters: usize) -> Result<FpsMeasurement> {
    let config = model.config();
    let (h, w) = config.image_size();
    fps(model, &Tensor::zeros(&[batch, h, w, config.channels()]), warmup, iters)
}

#[derive(Debug, Clone)]
pub struct CompareArgs {
    pub checkpoints: Vec<PathBuf>,
    pub manifest: PathBuf,
    pub split: Split,
    pub seed: u64,
    pub resamples: usize,
    pub batch_size: usize,
    pub out: PathBuf,
    pub fps: Option<(usize, usize, usize)>,
}

#[derive(Debug, Clone)]
pub struct CompareRow {
    pub checkpoint: PathBuf,
    /// `p_value` is set on every row but the best; `fps` when measured.
    pub report: EvaluationReport,
    pub t: Option<f64>,
    pub is_best: bool,
}

/// Evaluates every checkpoint once and tests the best-MCC model against
/// each other one with a paired bootstrap t-test.
pub fn cmd_compare(args: &CompareArgs) -> Result<Vec<CompareRow>> {
    if args.checkpoints.len() < 2 {
        return Err(Error::Config("compare needs at least two checkpoints".into()));
    }
    let clock = Clock::start();
    let manifest = load_manifest(&args.manifest)?;
    let mut rows = Vec::new();
    let mut evaluations = Vec::new();
    for path in &args.checkpoints {
        let model = load_checkpoint(path)?;
        check_compatible(&model, &manifest, path)?;
        let config = model.config();
        let dataset = Dataset::load(&manifest, args.split, config.image_size(), config.channels())?;
        let scores = score_dataset(&model, &dataset, args.batch_size)?;
        let ev = evaluate_scores(&scores, &dataset.labels(), &manifest.classes)?;
        let mut report = EvaluationReport::new(model.name(), args.split.as_str(), &ev);
        if let Some((batch, warmup, iters)) = args.fps {
            report.fps = Some(measure_fps(&model, batch, warmup, iters)?.fps);
        }
        rows.push(CompareRow { checkpoint: path.clone(), report, t: None, is_best: false });
        evaluations.push(ev);
    }
    let best = (0..rows.len())
        .reduce(|b, i| if rows[i].report.mcc > rows[b].report.mcc { i } else { b })
        .expect("at least two rows");
    rows[best].is_best = true;
    let k = manifest.num_classes();
    let sample = |ev: &Evaluation| bootstrap_mcc_samples(&ev.preds, &ev.labels, k, args.resamples, args.seed);
    let best_samples = sample(&evaluations[best])?;
    for (i, ev) in evaluations.iter().enumerate() {
        if i == best {
            continue;
        }
        let test = paired_t_test(&best_samples, &sample(ev)?)?;
        rows[i].report.p_value = Some(test.p);
        rows[i].t = Some(test.t);
    }
    create_dir(&args.out)?;
    write_file(&args.out.join(COMPARE_CSV), &compare_csv(&rows))?;
    clock.write(&args.out, "compare", None, None)?;
    Ok(rows)
}

/// Excludes FPS so repeated runs produce identical bytes.
pub fn compare_csv(rows: &[CompareRow]) -> String {
    let mut out =
        String::from("model,checkpoint,precision,precision_std,recall,recall_std,f1,f1_std,accuracy,mcc,p_value\n");
    for row in rows {
        let r = &row.report;
        let p = r.p_value.map_or("-".to_string(), |p| p.to_string());
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{p}\n",
            r.model,
            row.checkpoint.display(),
            r.precision,
            r.precision_std,
            r.recall,
            r.recall_std,
            r.f1,
            r.f1_std,
            r.accuracy,
            r.mcc
        ));
    }
    out
}

#[derive(Debug, Clone)]
pub struct BenchmarkOutcome {
    pub model: String,
    pub measurement: FpsMeasurement,
}

impl BenchmarkOutcome {
    pub fn csv_line(&self) -> String {
        format!("{},{},{:.3}", self.model, self.measurement.batch, self.measurement.fps)
    }
}

pub fn cmd_benchmark(checkpoint: &Path, batch: usize, warmup: usize, iters: usize) -> Result<BenchmarkOutcome> {
    if batch == 0 {
        return Err(Error::Config("benchmark batch must be positive".into()));
    }
    let model = load_checkpoint(checkpoint)?;
    let measurement = measure_fps(&model, batch, warmup, iters)?;
    Ok(BenchmarkOutcome { model: model.name().to_string(), measurement })
}

/// Expected counts from a named preset or an explicit triple.
pub fn expected_counts(preset: Option<&str>, explicit: Option<SplitCounts>) -> Result<SplitCounts> {
    match (preset, explicit) {
        (Some(name), None) => split_preset(name),
        (None, Some(c)) => Ok(c),
        _ => Err(Error::Config("give exactly one of a preset or explicit expected counts".into())),
    }
}

/// Compares manifest split sizes against `expected`; a mismatch is a
/// validation error listing each differing split.
pub fn cmd_validate_manifest(manifest: &Path, expected: SplitCounts) -> Result<SplitDiff> {
    let m = load_manifest(manifest)?;
    let diff = SplitDiff::new(m.split_counts(), expected);
    if !diff.is_match() {
        return Err(Error::Validation(format!(
            "{}: split counts differ\n  {}",
            manifest.display(),
            diff.lines().join("\n  ")
        )));
    }
    Ok(diff)
}

pub fn cmd_synth(spec: &SynthSpec, out: &Path) -> Result<PathBuf> {
    Ok(synthesize_toy_dataset(spec, out)?.0)
}
