//! Experiment orchestration: load a dataset, split it, corrupt the training
//! labels once, train an MLP with minibatch SGD, and evaluate accuracy and
//! calibration on the clean test side at a fixed cadence. A run is fully
//! described by one serializable [`ExperimentConfig`], so any result can be
//! reproduced from the config echo in its summary.

use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{
    gen_gaussian_blobs, load_csv, load_idx_images, split_train_test, DataError, LabeledDataset,
    Standardizer,
};
use crate::losses::{LossError, LossSpec};
use crate::nn::{argmax, sgd_step, LrSchedule, MlpModel, NnError, OptimizerState};
use crate::noise::{corrupt, NoiseError, NoiseKind, NoiseModel};
use crate::rng::{stream, StreamPurpose};

/// Seed used when a config leaves `seed` unset.
pub const DEFAULT_SEED: u64 = 42;

/// Bin count for ECE and reliability diagrams.
pub const DEFAULT_ECE_BINS: usize = 10;

#[derive(Debug, Error)]
pub enum TrainerError {
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("invalid experiment config: {0}")]
    InvalidConfig(String),
    #[error("evaluation requires at least one sample")]
    EmptyEval,
    #[error("probability matrix has {rows} rows but {labels} labels were given")]
    EvalSizeMismatch { rows: usize, labels: usize },
    #[error("label {label} out of range for {k} classes")]
    LabelOutOfRange { label: usize, k: usize },
    #[error("ece needs at least one bin")]
    ZeroBins,
    #[error("unknown sweep parameter {0:?}; expected loss.a, loss.alpha, loss.beta, or noise.eta")]
    UnknownParameter(String),
    #[error("sweep parameter {parameter} does not apply to {target}")]
    ParameterMismatch { parameter: String, target: String },
}

/// Where the samples come from. Generated sources derive their randomness
/// from the experiment seed; file sources are deterministic by content.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DatasetConfig {
    Blobs {
        k: usize,
        per_class: usize,
        d: usize,
        separation: f64,
    },
    Csv {
        path: String,
    },
    Idx {
        images: String,
        labels: String,
    },
}

impl DatasetConfig {
    pub fn load(&self, seed: u64) -> Result<LabeledDataset, DataError> {
        match self {
            DatasetConfig::Blobs {
                k,
                per_class,
                d,
                separation,
            } => gen_gaussian_blobs(*k, *per_class, *d, *separation, seed),
            DatasetConfig::Csv { path } => load_csv(path),
            DatasetConfig::Idx { images, labels } => load_idx_images(images, labels),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimConfig {
    pub lr0: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default)]
    pub l1_decay: f64,
    #[serde(default = "default_schedule")]
    pub schedule: LrSchedule,
}

/// One experiment, end to end. Unknown JSON keys are rejected so a typo in a
/// config file fails loudly instead of silently falling back to a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub noise: Option<NoiseModel>,
    pub loss: LossSpec,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    pub optim: OptimConfig,
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default = "default_standardize")]
    pub standardize: bool,
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_momentum() -> f64 {
    0.9
}

fn default_schedule() -> LrSchedule {
    LrSchedule::Cosine
}

fn default_hidden() -> Vec<usize> {
    vec![128, 128]
}

fn default_batch_size() -> usize {
    128
}

fn default_eval_every() -> usize {
    1
}

fn default_test_fraction() -> f64 {
    0.2
}

fn default_standardize() -> bool {
    true
}

impl ExperimentConfig {
    pub fn effective_seed(&self) -> u64 {
        self.seed.unwrap_or(DEFAULT_SEED)
    }

    pub fn validate(&self) -> Result<(), TrainerError> {
        if self.epochs == 0 {
            return Err(TrainerError::InvalidConfig("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainerError::InvalidConfig("batch_size must be at least 1".into()));
        }
        if self.eval_every == 0 {
            return Err(TrainerError::InvalidConfig("eval_every must be at least 1".into()));
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return Err(TrainerError::InvalidConfig(
                "hidden layer widths must be positive".into(),
            ));
        }
        self.loss.validate()?;
        if let Some(noise) = &self.noise {
            noise.validate()?;
        }
        Ok(())
    }
}

/// One evaluation point. `train_loss` is the mean loss over the epoch that
/// ended at `epoch`; `lr` is the rate that governed that epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_accuracy: f64,
    pub test_ece: f64,
    pub lr: f64,
}

/// Everything a finished (or aborted) run produced. `best_acc`, `last_acc`,
/// and `gap` are NaN when the run diverged before its first evaluation.
#[derive(Debug)]
pub struct RunResult {
    /// Config echo with the seed resolved, sufficient to reproduce the run.
    pub config: ExperimentConfig,
    pub metrics: Vec<MetricsRecord>,
    pub best_acc: f64,
    pub last_acc: f64,
    /// `best_acc − last_acc`: how much clean-test accuracy the model gave
    /// back after its peak. Large values indicate label memorization.
    pub gap: f64,
    pub wall_secs: f64,
    /// Diagnostic when training aborted on a non-finite loss or parameter;
    /// `metrics` then holds only the evaluations that completed.
    pub diverged: Option<String>,
    /// Fraction of training labels the noise model actually flipped.
    pub train_flip_fraction: Option<f64>,
    /// Reliability diagram of the most recent evaluation.
    pub reliability: Vec<BinStat>,
    pub model: MlpModel,
}

#[derive(Debug, Serialize)]
pub struct RunSummary<'a> {
    pub config: &'a ExperimentConfig,
    pub best_acc: f64,
    pub last_acc: f64,
    pub gap: f64,
    pub wall_secs: f64,
    pub evaluated_epochs: usize,
    pub train_flip_fraction: Option<f64>,
    pub diverged: Option<&'a str>,
}

impl RunResult {
    pub fn summary(&self) -> RunSummary<'_> {
        RunSummary {
            config: &self.config,
            best_acc: self.best_acc,
            last_acc: self.last_acc,
            gap: self.gap,
            wall_secs: self.wall_secs,
            evaluated_epochs: self.metrics.len(),
            train_flip_fraction: self.train_flip_fraction,
            diverged: self.diverged.as_deref(),
        }
    }
}

/// Runs one experiment: load, split, corrupt the train side, train, and
/// evaluate every `eval_every` epochs (the final epoch is always evaluated).
///
/// Corruption happens exactly once, before training, on the raw training
/// split: label noise models an annotation process that sees the data as
/// collected, not the model-side preprocessing. Test labels are never
/// touched, which is asserted against a snapshot at every evaluation.
/// Divergence (non-finite loss, gradient, or parameter) aborts training and
/// returns the metrics gathered so far along with a diagnostic.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunResult, TrainerError> {
    cfg.validate()?;
    let clock = Instant::now();
    let mut cfg = cfg.clone();
    let seed = cfg.effective_seed();
    cfg.seed = Some(seed);

    let full = cfg.dataset.load(seed)?;
    let (train, test) = split_train_test(&full, cfg.test_fraction, seed)?;
    drop(full);

    let (train_labels, train_flip_fraction) = match &cfg.noise {
        Some(model) => {
            let record = corrupt(train.features.view(), &train.labels, train.k, model, seed)?;
            let fraction = record.flip_fraction();
            (record.noisy_labels, Some(fraction))
        }
        None => (train.labels.clone(), None),
    };

    let (train_x, test_x) = if cfg.standardize {
        let scaler = Standardizer::fit(&train.features);
        (
            scaler.transform(&train.features),
            scaler.transform(&test.features),
        )
    } else {
        (train.features.clone(), test.features.clone())
    };
    let clean_test_labels = test.labels.clone();

    let k = train.k;
    let mut dims = Vec::with_capacity(cfg.hidden.len() + 2);
    dims.push(train_x.ncols());
    dims.extend_from_slice(&cfg.hidden);
    dims.push(k);

    let mut model = MlpModel::new(&dims, seed)?;
    let mut opt = OptimizerState::new(
        cfg.optim.lr0,
        cfg.optim.momentum,
        cfg.optim.l1_decay,
        cfg.optim.schedule,
        cfg.epochs,
        &model,
    )?;

    let n_train = train_x.nrows();
    let mut indices: Vec<usize> = (0..n_train).collect();
    let mut metrics = Vec::new();
    let mut reliability = Vec::new();
    let mut diverged = None;

    'training: for epoch in 0..cfg.epochs {
        let mut rng = stream(seed, StreamPurpose::Shuffle, epoch as u64);
        indices.shuffle(&mut rng);
        let lr = opt.lr_at(epoch)?;
        let mut loss_sum = 0.0;

        for (batch_no, batch_idx) in indices.chunks(cfg.batch_size).enumerate() {
            let xb = train_x.select(Axis(0), batch_idx);
            let fwd = model.forward(xb.view())?;
            let mut dl = Array2::zeros((batch_idx.len(), k));
            let mut batch_sum = 0.0;
            for (row, &i) in batch_idx.iter().enumerate() {
                let y = train_labels[i];
                let probs = fwd.probs.row(row);
                let probs = probs.as_slice().expect("softmax rows are contiguous");
                batch_sum += cfg.loss.value_unchecked(probs, y);
                let out = dl.row_mut(row);
                cfg.loss
                    .grad_into(probs, y, out.into_slice().expect("grad rows are contiguous"));
            }
            if !batch_sum.is_finite() {
                diverged = Some(format!(
                    "non-finite training loss in epoch {}, batch {}",
                    epoch + 1,
                    batch_no + 1
                ));
                break 'training;
            }
            loss_sum += batch_sum;
            let grads = model.backward(&fwd, dl.view())?;
            match sgd_step(&mut model, &grads, &mut opt, epoch) {
                Ok(()) => {}
                Err(e @ (NnError::NonFiniteGradient { .. } | NnError::NonFiniteParameter { .. })) => {
                    diverged = Some(format!(
                        "{e} in epoch {}, batch {}",
                        epoch + 1,
                        batch_no + 1
                    ));
                    break 'training;
                }
                Err(e) => return Err(e.into()),
            }
        }

        let completed = epoch + 1;
        if completed % cfg.eval_every == 0 || completed == cfg.epochs {
            assert_eq!(
                test.labels, clean_test_labels,
                "test labels must stay clean for the whole run"
            );
            let probs = model.predict_probs(test_x.view())?;
            let acc = compute_accuracy(probs.view(), &test.labels)?;
            let bins = reliability_bins(probs.view(), &test.labels, DEFAULT_ECE_BINS)?;
            let ece = ece_from_bins(&bins, test.labels.len());
            reliability = bins;
            metrics.push(MetricsRecord {
                epoch: completed,
                train_loss: loss_sum / n_train as f64,
                test_accuracy: acc,
                test_ece: ece,
                lr,
            });
        }
    }

    let best_acc = metrics
        .iter()
        .map(|m| m.test_accuracy)
        .fold(f64::NAN, f64::max);
    let last_acc = metrics.last().map_or(f64::NAN, |m| m.test_accuracy);
    Ok(RunResult {
        config: cfg,
        metrics,
        best_acc,
        last_acc,
        gap: best_acc - last_acc,
        wall_secs: clock.elapsed().as_secs_f64(),
        diverged,
        train_flip_fraction,
        reliability,
        model,
    })
}

fn check_eval_inputs(probs: ArrayView2<'_, f64>, labels: &[usize]) -> Result<(), TrainerError> {
    if probs.nrows() != labels.len() {
        return Err(TrainerError::EvalSizeMismatch {
            rows: probs.nrows(),
            labels: labels.len(),
        });
    }
    if labels.is_empty() {
        return Err(TrainerError::EmptyEval);
    }
    let k = probs.ncols();
    if let Some(&label) = labels.iter().find(|&&y| y >= k) {
        return Err(TrainerError::LabelOutOfRange { label, k });
    }
    Ok(())
}

/// Fraction of rows whose argmax equals the label; ties break toward the
/// lowest class index.
pub fn compute_accuracy(probs: ArrayView2<'_, f64>, labels: &[usize]) -> Result<f64, TrainerError> {
    check_eval_inputs(probs, labels)?;
    let correct = probs
        .outer_iter()
        .zip(labels)
        .filter(|(row, &y)| argmax(row) == y)
        .count();
    Ok(correct as f64 / labels.len() as f64)
}

/// One reliability-diagram bin over the confidence interval `(lo, hi]`.
/// `avg_conf` and `avg_acc` are 0 when the bin is empty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BinStat {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub avg_conf: f64,
    pub avg_acc: f64,
}

// Right-closed equal-width bins: (0, 1/B], (1/B, 2/B], ..., (1−1/B, 1].
fn bin_index(conf: f64, n_bins: usize) -> usize {
    let scaled = (conf * n_bins as f64).ceil() as isize - 1;
    scaled.clamp(0, n_bins as isize - 1) as usize
}

/// Confidence histogram for reliability diagrams: per bin, how many
/// predictions landed there and their mean confidence and accuracy.
/// Confidence is the maximum predicted probability.
pub fn reliability_bins(
    probs: ArrayView2<'_, f64>,
    labels: &[usize],
    n_bins: usize,
) -> Result<Vec<BinStat>, TrainerError> {
    if n_bins == 0 {
        return Err(TrainerError::ZeroBins);
    }
    check_eval_inputs(probs, labels)?;
    let mut count = vec![0usize; n_bins];
    let mut conf_sum = vec![0.0; n_bins];
    let mut acc_sum = vec![0.0; n_bins];
    for (row, &y) in probs.outer_iter().zip(labels) {
        let j = argmax(&row);
        let conf = row[j];
        let b = bin_index(conf, n_bins);
        count[b] += 1;
        conf_sum[b] += conf;
        if j == y {
            acc_sum[b] += 1.0;
        }
    }
    Ok((0..n_bins)
        .map(|i| BinStat {
            lo: i as f64 / n_bins as f64,
            hi: (i + 1) as f64 / n_bins as f64,
            count: count[i],
            avg_conf: if count[i] == 0 {
                0.0
            } else {
                conf_sum[i] / count[i] as f64
            },
            avg_acc: if count[i] == 0 {
                0.0
            } else {
                acc_sum[i] / count[i] as f64
            },
        })
        .collect())
}

/// `Σ_b (|B_b|/N)·|acc(B_b) − conf(B_b)|` over non-empty bins.
pub fn ece_from_bins(bins: &[BinStat], n_samples: usize) -> f64 {
    if n_samples == 0 {
        return 0.0;
    }
    bins.iter()
        .filter(|b| b.count > 0)
        .map(|b| b.count as f64 / n_samples as f64 * (b.avg_acc - b.avg_conf).abs())
        .sum()
}

/// Expected calibration error with equal-width right-closed bins.
pub fn compute_ece(
    probs: ArrayView2<'_, f64>,
    labels: &[usize],
    n_bins: usize,
) -> Result<f64, TrainerError> {
    let bins = reliability_bins(probs, labels, n_bins)?;
    Ok(ece_from_bins(&bins, labels.len()))
}

/// Which config knob a sweep varies. The names mirror the config JSON
/// structure: `loss.a` is the loss hyperparameter, `loss.alpha`/`loss.beta`
/// the combination weights, `noise.eta` the corruption rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepParameter {
    #[serde(rename = "loss.a")]
    LossA,
    #[serde(rename = "loss.alpha")]
    LossAlpha,
    #[serde(rename = "loss.beta")]
    LossBeta,
    #[serde(rename = "noise.eta")]
    NoiseEta,
}

impl fmt::Display for SweepParameter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepParameter::LossA => "loss.a",
            SweepParameter::LossAlpha => "loss.alpha",
            SweepParameter::LossBeta => "loss.beta",
            SweepParameter::NoiseEta => "noise.eta",
        })
    }
}

impl FromStr for SweepParameter {
    type Err = TrainerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "loss.a" => Ok(SweepParameter::LossA),
            "loss.alpha" => Ok(SweepParameter::LossAlpha),
            "loss.beta" => Ok(SweepParameter::LossBeta),
            "noise.eta" => Ok(SweepParameter::NoiseEta),
            other => Err(TrainerError::UnknownParameter(other.to_string())),
        }
    }
}

/// Summary row of one sweep run, in the order the values were given.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub value: f64,
    pub seed: u64,
    pub best_acc: f64,
    pub last_acc: f64,
    pub gap: f64,
    pub diverged: bool,
}

fn with_loss_a(spec: &LossSpec, a: f64) -> Result<LossSpec, TrainerError> {
    match spec {
        LossSpec::Vce { .. } => Ok(LossSpec::vce(a)?),
        LossSpec::Vel { .. } => Ok(LossSpec::vel(a)?),
        LossSpec::Vsl { .. } => Ok(LossSpec::vsl(a)?),
        // In a combination the bounded half carries the hyperparameter.
        LossSpec::Combined {
            alpha,
            beta,
            active,
            passive,
        } => Ok(LossSpec::combined(
            *alpha,
            *beta,
            (**active).clone(),
            with_loss_a(passive, a)?,
        )?),
        other => Err(TrainerError::ParameterMismatch {
            parameter: "loss.a".into(),
            target: other.to_string(),
        }),
    }
}

fn apply_sweep_value(
    base: &ExperimentConfig,
    parameter: SweepParameter,
    value: f64,
    index: usize,
) -> Result<ExperimentConfig, TrainerError> {
    let mut cfg = base.clone();
    cfg.seed = Some(base.effective_seed() + index as u64 * 1000);
    match parameter {
        SweepParameter::LossA => {
            cfg.loss = with_loss_a(&base.loss, value)?;
        }
        SweepParameter::LossAlpha | SweepParameter::LossBeta => match &base.loss {
            LossSpec::Combined {
                alpha,
                beta,
                active,
                passive,
            } => {
                let (alpha, beta) = if parameter == SweepParameter::LossAlpha {
                    (value, *beta)
                } else {
                    (*alpha, value)
                };
                cfg.loss =
                    LossSpec::combined(alpha, beta, (**active).clone(), (**passive).clone())?;
            }
            other => {
                return Err(TrainerError::ParameterMismatch {
                    parameter: parameter.to_string(),
                    target: other.to_string(),
                })
            }
        },
        SweepParameter::NoiseEta => {
            let noise = base.noise.as_ref().ok_or(TrainerError::ParameterMismatch {
                parameter: "noise.eta".into(),
                target: "a config without a noise model".into(),
            })?;
            cfg.noise = Some(match noise.kind {
                NoiseKind::Symmetric => NoiseModel::symmetric(value)?,
                NoiseKind::AsymmetricCircular => NoiseModel::asymmetric_circular(value)?,
                NoiseKind::InstanceDependent => {
                    NoiseModel::instance_dependent(value, noise.rate_std)?
                }
            });
        }
    }
    Ok(cfg)
}

/// Runs `run_experiment` once per value, varying `parameter` around
/// `base`. Run `i` uses seed `base seed + i·1000` so every row is
/// individually reproducible. Up to `jobs` runs execute in parallel;
/// results are returned in value order regardless of completion order.
pub fn sweep(
    base: &ExperimentConfig,
    parameter: SweepParameter,
    values: &[f64],
    jobs: usize,
) -> Result<Vec<SweepRow>, TrainerError> {
    if values.is_empty() {
        return Err(TrainerError::InvalidConfig(
            "sweep needs at least one value".into(),
        ));
    }
    let configs: Vec<ExperimentConfig> = values
        .iter()
        .enumerate()
        .map(|(i, &v)| apply_sweep_value(base, parameter, v, i))
        .collect::<Result<_, _>>()?;

    let workers = jobs.max(1).min(configs.len());
    let slots: Vec<Mutex<Option<Result<RunResult, TrainerError>>>> =
        (0..configs.len()).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= configs.len() {
                    break;
                }
                let outcome = run_experiment(&configs[i]);
                *slots[i].lock().expect("sweep slot lock") = Some(outcome);
            });
        }
    });

    values
        .iter()
        .zip(&configs)
        .zip(slots)
        .map(|((&value, cfg), slot)| {
            let result = slot
                .into_inner()
                .expect("sweep slot lock")
                .expect("every sweep slot is filled")?;
            Ok(SweepRow {
                value,
                seed: cfg.effective_seed(),
                best_acc: result.best_acc,
                last_acc: result.last_acc,
                gap: result.gap,
                diverged: result.diverged.is_some(),
            })
        })
        .collect()
}

/// Metric series as CSV. Floats use shortest round-trip formatting, so the
/// bytes are a deterministic function of the records.
pub fn write_metrics_csv<W: Write>(out: &mut W, records: &[MetricsRecord]) -> io::Result<()> {
    writeln!(out, "epoch,train_loss,test_acc,test_ece,lr")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.epoch, r.train_loss, r.test_accuracy, r.test_ece, r.lr
        )?;
    }
    Ok(())
}

/// Reliability diagram as CSV, one row per confidence bin.
pub fn write_reliability_csv<W: Write>(out: &mut W, bins: &[BinStat]) -> io::Result<()> {
    writeln!(out, "bin_lo,bin_hi,count,avg_conf,avg_acc")?;
    for b in bins {
        writeln!(
            out,
            "{},{},{},{},{}",
            b.lo, b.hi, b.count, b.avg_conf, b.avg_acc
        )?;
    }
    Ok(())
}

/// Sweep table as CSV, one row per swept value.
pub fn write_sweep_csv<W: Write>(out: &mut W, rows: &[SweepRow]) -> io::Result<()> {
    writeln!(out, "value,seed,best_acc,last_acc,gap,diverged")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.value, r.seed, r.best_acc, r.last_acc, r.gap, r.diverged
        )?;
    }
    Ok(())
}
