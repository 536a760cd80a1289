//! Single runs, grid sweeps, and accountant queries driven by an
//! [`ExperimentConfig`].
//!
//! A run writes `<run_id>.csv` (one [`RunRecord`] per step) and
//! `<run_id>.params` (final parameters) into the output directory. A sweep
//! runs every point of the grid `grad_acc × sigma × clip` (grad_acc varying
//! slowest) with seed `run.seed + point_index` and writes
//! `<run_id>_frontier.csv` with one row per point.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::accountant::{epsilon_for_training, EpsilonReport};
use crate::config::{DataConfig, ExperimentConfig, ModelConfig, Precision};
use crate::data::{load_csv, load_idx, synth_blobs, Dataset, Split};
use crate::dp_engine::{evaluate_accuracy, TrainSettings, Trainer};
use crate::error::{Error, Result};
use crate::metrics::{emit_csv, format_float, RunRecord};
use crate::models::{build_model, Model, ModelSpec};
use crate::tensor::Scalar;

pub const FRONTIER_HEADER: &str = "grad_acc,sigma,clip,best_accuracy,best_epoch,epsilon_at_best,final_epsilon,mean_snr,status";
pub const ACCOUNT_HEADER: &str = "q,T,epsilon,best_order";

/// Offset applied to the data seed for the synthetic held-out split.
const EVAL_SEED_OFFSET: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub run_id: String,
    pub records: Vec<RunRecord>,
    /// Accuracy after the last epoch (the untrained model when `epochs = 0`).
    pub final_accuracy: f64,
    pub final_epsilon: f64,
    /// Best held-out accuracy over epochs with its 0-based epoch.
    pub best: Option<(f64, usize)>,
    pub epsilon_at_best: Option<f64>,
    pub mean_snr: Option<f64>,
    pub max_raw_norm: f64,
    pub wall_clock: Duration,
    pub csv_path: PathBuf,
    pub params_path: PathBuf,
}

impl RunSummary {
    pub fn summary_line(&self) -> String {
        format!(
            "run {}: steps={} final_accuracy={} epsilon={} wall_clock={:.3}s csv={}",
            self.run_id,
            self.records.len(),
            format_float(self.final_accuracy),
            format_float(self.final_epsilon),
            self.wall_clock.as_secs_f64(),
            self.csv_path.display()
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub index: usize,
    pub grad_acc: usize,
    pub sigma: f64,
    pub clip: f64,
    pub outcome: std::result::Result<RunSummary, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSummary {
    pub points: Vec<SweepPoint>,
    pub frontier_path: PathBuf,
}

/// Training and held-out datasets for a configuration.
pub fn load_data(cfg: &DataConfig) -> Result<(Dataset, Dataset)> {
    match cfg {
        DataConfig::Synth {
            classes,
            per_class,
            eval_per_class,
            shape,
            spread,
            seed,
        } => {
            let train = synth_blobs(*classes, *per_class, shape, *spread, *seed)?;
            let eval = synth_blobs(*classes, *eval_per_class, shape, *spread, seed ^ EVAL_SEED_OFFSET)?;
            Ok((train, eval.with_split(Split::Eval)))
        }
        DataConfig::Idx {
            train_images,
            train_labels,
            eval,
            eval_fraction,
        } => {
            let train = load_idx(train_images, train_labels)?;
            match eval {
                Some((i, l)) => {
                    let eval = load_idx(i, l)?;
                    let classes = train.num_classes.max(eval.num_classes);
                    Ok((
                        Dataset { num_classes: classes, ..train },
                        Dataset {
                            num_classes: classes,
                            ..eval.with_split(Split::Eval)
                        },
                    ))
                }
                None => split_tail(train, *eval_fraction),
            }
        }
        DataConfig::Csv {
            train,
            eval,
            classes,
            eval_fraction,
        } => {
            let train = load_csv(train, *classes)?;
            match eval {
                Some(p) => {
                    let eval = load_csv(p, Some(train.num_classes))?;
                    if eval.shape != train.shape {
                        return Err(Error::Input(format!(
                            "eval rows have {:?} features, training rows {:?}",
                            eval.shape, train.shape
                        )));
                    }
                    Ok((train, eval.with_split(Split::Eval)))
                }
                None => split_tail(train, *eval_fraction),
            }
        }
    }
}

/// Holds out the last `fraction` of the examples (at least one) for
/// evaluation. With `fraction = 0` the training set doubles as eval set.
fn split_tail(all: Dataset, fraction: f64) -> Result<(Dataset, Dataset)> {
    if fraction == 0.0 {
        let eval = all.clone().with_split(Split::Eval);
        return Ok((all, eval));
    }
    let n = all.len();
    let held = ((n as f64 * fraction).round() as usize).max(1);
    if held >= n {
        return Err(Error::config("data.eval_fraction", format!("leaves no training data out of {n} examples")));
    }
    let cut = (n - held) * all.example_len();
    let train = Dataset::new(
        all.shape.clone(),
        all.features[..cut].to_vec(),
        all.labels[..n - held].to_vec(),
        all.num_classes,
        Split::Train,
        all.provenance.clone(),
    )?;
    let eval = Dataset::new(
        all.shape.clone(),
        all.features[cut..].to_vec(),
        all.labels[n - held..].to_vec(),
        all.num_classes,
        Split::Eval,
        all.provenance,
    )?;
    Ok((train, eval))
}

pub fn model_spec(cfg: &ModelConfig, data: &Dataset) -> Result<ModelSpec> {
    match cfg {
        ModelConfig::Mlp { hidden } => Ok(ModelSpec::mlp(data.example_len(), hidden, data.num_classes)),
        ModelConfig::Cnn {
            channels,
            groups,
            eps,
            batch_norm,
        } => {
            let input: [usize; 3] = data
                .shape
                .as_slice()
                .try_into()
                .map_err(|_| Error::config("model.kind", format!("cnn needs c×h×w inputs, data has {:?}", data.shape)))?;
            let mut spec = ModelSpec::cnn_with_norm(input, *channels, *groups, data.num_classes, *batch_norm);
            for layer in &mut spec.layers {
                if let crate::models::LayerSpec::GroupNorm { eps: e, .. } = layer {
                    *e = *eps;
                }
            }
            Ok(spec)
        }
    }
}

/// Trains for `cfg.epochs` epochs and writes the run artifacts.
pub fn run(cfg: &ExperimentConfig) -> Result<RunSummary> {
    let (train, eval) = load_data(&cfg.data)?;
    run_on(cfg, &train, &eval)
}

/// Like [`run`] with already loaded data.
pub fn run_on(cfg: &ExperimentConfig, train: &Dataset, eval: &Dataset) -> Result<RunSummary> {
    match cfg.precision {
        Precision::F32 => run_typed::<f32>(cfg, train, eval),
        Precision::F64 => run_typed::<f64>(cfg, train, eval),
    }
}

fn run_typed<T: Scalar>(cfg: &ExperimentConfig, train: &Dataset, eval: &Dataset) -> Result<RunSummary> {
    let started = Instant::now();
    let spec = model_spec(&cfg.model, train)?;
    let (model, mut params) = build_model::<T>(spec, cfg.seed)?;
    let mut dp = cfg.dp.clone();
    dp.seed = cfg.seed;
    let settings = TrainSettings {
        dp,
        schedule: cfg.schedule.clone(),
        momentum: cfg.momentum,
        delta: cfg.delta,
        workers: cfg.workers,
    };
    let mut trainer = Trainer::<T>::new(&model, settings, train.len())?;

    std::fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))?;
    let csv_path = cfg.output_dir.join(format!("{}.csv", cfg.run_id));
    let params_path = cfg.output_dir.join(format!("{}.params", cfg.run_id));

    let mut records = Vec::new();
    let mut best: Option<(f64, usize)> = None;
    let mut epsilon_at_best = None;
    let mut max_raw_norm = 0.0f64;
    let mut final_accuracy = None;
    let mut failure = None;
    for epoch in 0..cfg.epochs {
        match trainer.train_epoch(&mut params, train, Some(eval), epoch) {
            Ok(out) => {
                max_raw_norm = max_raw_norm.max(out.max_raw_norm);
                let acc = out.accuracy.expect("eval set supplied");
                if best.is_none_or(|(b, _)| acc > b) {
                    best = Some((acc, epoch));
                    epsilon_at_best = Some(trainer.epsilon()?);
                }
                final_accuracy = Some(acc);
                records.extend(out.records);
            }
            Err(e) => {
                failure = Some(e);
                break;
            }
        }
    }
    emit_csv(&records, &csv_path)?;
    std::fs::write(&params_path, params.to_le_bytes()).map_err(|e| Error::io(&params_path, e))?;
    if let Some(e) = failure {
        return Err(e);
    }
    let final_accuracy = match final_accuracy {
        Some(a) => a,
        None => untrained_accuracy(&model, &params, eval)?,
    };
    let snrs: Vec<f64> = records.iter().filter_map(|r| r.snr).filter(|s| s.is_finite()).collect();
    let mean_snr = (!snrs.is_empty()).then(|| snrs.iter().sum::<f64>() / snrs.len() as f64);
    Ok(RunSummary {
        run_id: cfg.run_id.clone(),
        final_epsilon: trainer.epsilon()?,
        records,
        final_accuracy,
        best,
        epsilon_at_best,
        mean_snr,
        max_raw_norm,
        wall_clock: started.elapsed(),
        csv_path,
        params_path,
    })
}

fn untrained_accuracy<T: Scalar>(model: &Model, params: &crate::models::ParamSet<T>, eval: &Dataset) -> Result<f64> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| Error::Internal(format!("worker pool: {e}")))?;
    evaluate_accuracy(&pool, model, params, eval)
}

/// Grid points in sweep order.
pub fn sweep_points(cfg: &ExperimentConfig) -> Result<Vec<(usize, f64, f64)>> {
    if cfg.sweep.is_empty() {
        return Err(Error::config("sweep", "at least one of sweep.grad_acc, sweep.sigma, sweep.clip is required"));
    }
    let grad_acc = cfg.sweep.grad_acc.clone().unwrap_or_else(|| vec![cfg.dp.grad_acc]);
    let sigma = cfg.sweep.sigma.clone().unwrap_or_else(|| vec![cfg.dp.noise_multiplier]);
    let clip = cfg.sweep.clip.clone().unwrap_or_else(|| vec![cfg.dp.clip_norm]);
    let mut points = Vec::with_capacity(grad_acc.len() * sigma.len() * clip.len());
    for &g in &grad_acc {
        for &s in &sigma {
            for &c in &clip {
                points.push((g, s, c));
            }
        }
    }
    Ok(points)
}

/// Runs every grid point; failed points are recorded and the sweep goes on.
pub fn sweep(cfg: &ExperimentConfig) -> Result<SweepSummary> {
    let grid = sweep_points(cfg)?;
    let (train, eval) = load_data(&cfg.data)?;
    std::fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.sweep.concurrent_points)
        .build()
        .map_err(|e| Error::Internal(format!("worker pool: {e}")))?;
    let points: Vec<SweepPoint> = pool.install(|| {
        grid.par_iter()
            .enumerate()
            .map(|(index, &(grad_acc, sigma, clip))| {
                let point = cfg.with_point(grad_acc, sigma, clip, index);
                SweepPoint {
                    index,
                    grad_acc,
                    sigma,
                    clip,
                    outcome: run_on(&point, &train, &eval).map_err(|e| e.to_string()),
                }
            })
            .collect()
    });
    let frontier_path = cfg.output_dir.join(format!("{}_frontier.csv", cfg.run_id));
    std::fs::write(&frontier_path, frontier_csv(&points)).map_err(|e| Error::io(&frontier_path, e))?;
    Ok(SweepSummary { points, frontier_path })
}

pub fn frontier_csv(points: &[SweepPoint]) -> String {
    let mut out = format!("{FRONTIER_HEADER}\n");
    for p in points {
        let head = format!("{},{},{}", p.grad_acc, format_float(p.sigma), format_float(p.clip));
        let row = match &p.outcome {
            Ok(s) => format!(
                "{head},{},{},{},{},{},ok",
                s.best.map(|b| format_float(b.0)).unwrap_or_default(),
                s.best.map(|b| b.1.to_string()).unwrap_or_default(),
                s.epsilon_at_best.map(format_float).unwrap_or_default(),
                format_float(s.final_epsilon),
                s.mean_snr.map(format_float).unwrap_or_default(),
            ),
            Err(msg) => {
                let clean: String = msg.chars().map(|c| if matches!(c, ',' | '\n' | '\r') { ';' } else { c }).collect();
                format!("{head},,,,,,failed: {clean}")
            }
        };
        out.push_str(&row);
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrontierRow {
    pub grad_acc: usize,
    pub sigma: f64,
    pub clip: f64,
    pub best_accuracy: Option<f64>,
    pub best_epoch: Option<usize>,
    pub epsilon_at_best: Option<f64>,
    pub final_epsilon: Option<f64>,
    pub mean_snr: Option<f64>,
    pub status: String,
}

/// Parses a file written by [`frontier_csv`].
pub fn parse_frontier(text: &str) -> Result<Vec<FrontierRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(FRONTIER_HEADER) {
        return Err(Error::Input("unexpected frontier header".into()));
    }
    let bad = |line: &str| Error::Input(format!("malformed frontier row: {line}"));
    lines
        .map(|line| {
            let f: Vec<&str> = line.splitn(9, ',').collect();
            if f.len() != 9 {
                return Err(bad(line));
            }
            let opt = |s: &str| -> Result<Option<f64>> {
                if s.is_empty() {
                    Ok(None)
                } else {
                    s.parse().map(Some).map_err(|_| bad(line))
                }
            };
            Ok(FrontierRow {
                grad_acc: f[0].parse().map_err(|_| bad(line))?,
                sigma: f[1].parse().map_err(|_| bad(line))?,
                clip: f[2].parse().map_err(|_| bad(line))?,
                best_accuracy: opt(f[3])?,
                best_epoch: if f[4].is_empty() { None } else { Some(f[4].parse().map_err(|_| bad(line))?) },
                epsilon_at_best: opt(f[5])?,
                final_epsilon: opt(f[6])?,
                mean_snr: opt(f[7])?,
                status: f[8].to_string(),
            })
        })
        .collect()
}

/// ε for `epochs` passes over `n` examples at batch `batch`.
pub fn account(n: usize, batch: usize, sigma: f64, epochs: u64, delta: f64) -> Result<EpsilonReport> {
    epsilon_for_training(n, batch, sigma, epochs, delta)
}

pub fn account_row(r: &EpsilonReport) -> String {
    format!(
        "{},{},{},{}",
        format_float(r.q),
        r.steps,
        format_float(r.epsilon),
        r.best_order
    )
}
