//! The per-step DPSGD loop over shuffled effective batches.
//!
//! Each example in a batch is processed independently (gradient, clip,
//! noise) on a worker pool. Results are folded into the accumulator in batch
//! order, so the worker count never changes the result.

use rayon::prelude::*;

use super::accumulate::Accumulator;
use super::clip::{clip_global, clip_per_layer, clip_per_stage};
use super::config::{stage_partition, ClipMode, DpConfig, NoisePlacement};
use super::gradient::{Extent, FlatGradient};
use super::noise::{gaussian_vector, noise_rng, BATCH_SLOT};
use super::optim::{sgd_step, LrSchedule, OptimizerState};
use crate::accountant::{default_orders, PrivacyLedger};
use crate::data::{sample_batches, Dataset};
use crate::error::{Error, Result};
use crate::metrics::{record_step, RunRecord, StepContext};
use crate::models::{Model, ParamSet};
use crate::tensor::Scalar;

/// Examples handed to the pool per round. Bounds memory to a few gradients
/// per worker.
const EXAMPLES_PER_WORKER: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSettings {
    pub dp: DpConfig,
    pub schedule: LrSchedule,
    pub momentum: f64,
    pub delta: f64,
    pub workers: usize,
}

/// What one epoch produced.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochOutcome {
    pub records: Vec<RunRecord>,
    /// Largest raw per-example gradient norm seen this epoch.
    pub max_raw_norm: f64,
    pub accuracy: Option<f64>,
}

struct Example<T> {
    loss: f64,
    raw_norm: f64,
    clipped: FlatGradient<T>,
    noise: Option<Vec<T>>,
}

pub struct Trainer<'m, T> {
    model: &'m Model,
    settings: TrainSettings,
    stages: Option<Vec<Extent>>,
    state: OptimizerState<T>,
    ledger: PrivacyLedger,
    pool: rayon::ThreadPool,
}

impl<'m, T: Scalar> Trainer<'m, T> {
    /// `dataset_size` fixes the sampling ratio used by the accountant.
    pub fn new(model: &'m Model, settings: TrainSettings, dataset_size: usize) -> Result<Self> {
        settings.dp.validate()?;
        if !(settings.momentum >= 0.0 && settings.momentum < 1.0) {
            return Err(Error::config("optim.momentum", "must lie in [0, 1)"));
        }
        let batch = settings.dp.effective_batch();
        if batch > dataset_size {
            return Err(Error::config(
                "dp.grad_acc",
                format!("effective batch {batch} exceeds the {dataset_size} training examples"),
            ));
        }
        let stages = match &settings.dp.mode {
            ClipMode::PerStage { stages, boundaries } if settings.dp.private => {
                Some(stage_partition(model.layer_extents(), *stages, boundaries.as_deref())?)
            }
            _ => None,
        };
        let ledger = if settings.dp.private {
            PrivacyLedger::new(
                batch as f64 / dataset_size as f64,
                settings.dp.noise_multiplier,
                settings.delta,
                &default_orders(),
            )?
        } else {
            PrivacyLedger::non_private()
        };
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(settings.workers.max(1))
            .build()
            .map_err(|e| Error::Internal(format!("worker pool: {e}")))?;
        Ok(Self {
            model,
            state: OptimizerState::new(model.dim(), settings.momentum),
            settings,
            stages,
            ledger,
            pool,
        })
    }

    pub fn steps(&self) -> u64 {
        self.state.step
    }

    pub fn epsilon(&self) -> Result<f64> {
        self.ledger.epsilon()
    }

    pub fn settings(&self) -> &TrainSettings {
        &self.settings
    }

    /// One pass over `⌊N/|B|⌋` effective batches. Held-out accuracy (when
    /// `eval` is given) is attached to the epoch's last record. On error the
    /// parameters stay at the last completed step.
    pub fn train_epoch(
        &mut self,
        params: &mut ParamSet<T>,
        train: &Dataset,
        eval: Option<&Dataset>,
        epoch: usize,
    ) -> Result<EpochOutcome> {
        let batches = sample_batches(train.len(), self.settings.dp.effective_batch(), self.settings.dp.seed, epoch as u64)?;
        let mut records = Vec::with_capacity(batches.len());
        let mut max_raw_norm = 0.0f64;
        for batch in &batches {
            let step = self.state.step;
            let (record, raw) = self.step(params, train, batch, epoch).map_err(|e| Error::Step {
                step,
                epoch,
                source: Box::new(e),
            })?;
            max_raw_norm = max_raw_norm.max(raw);
            records.push(record);
        }
        let accuracy = match eval {
            Some(d) => Some(self.accuracy(params, d)?),
            None => None,
        };
        if let Some(last) = records.last_mut() {
            last.accuracy = accuracy;
        }
        Ok(EpochOutcome {
            records,
            max_raw_norm,
            accuracy,
        })
    }

    fn step(&mut self, params: &mut ParamSet<T>, data: &Dataset, batch: &[usize], epoch: usize) -> Result<(RunRecord, f64)> {
        let dp = &self.settings.dp;
        let step = self.state.step;
        let dim = self.model.dim();
        let mut acc = Accumulator::<T>::new(dim, batch.len());
        let mut clipped_sum = vec![T::zero(); dim];
        let mut noise_sum: Option<Vec<T>> = None;
        let mut loss_sum = 0.0;
        let mut max_raw = 0.0f64;
        let chunk = self.settings.workers.max(1) * EXAMPLES_PER_WORKER;
        for (c, indices) in batch.chunks(chunk).enumerate() {
            let model = self.model;
            let stages = self.stages.as_ref();
            let frozen: &ParamSet<T> = params;
            let results: Vec<Result<Example<T>>> = self.pool.install(|| {
                indices
                    .par_iter()
                    .enumerate()
                    .map(|(k, &i)| process_example(model, frozen, data, i, dp, stages, step, (c * chunk + k) as u64))
                    .collect()
            });
            for r in results {
                let ex = r?;
                loss_sum += ex.loss;
                max_raw = max_raw.max(ex.raw_norm);
                add_into(&mut clipped_sum, &ex.clipped.values);
                let mut noised = ex.clipped;
                if let Some(n) = &ex.noise {
                    add_into(&mut noised.values, n);
                    add_into(noise_sum.get_or_insert_with(|| vec![T::zero(); dim]), n);
                }
                acc.add(&noised)?;
            }
        }
        if dp.private && dp.noise_placement == NoisePlacement::PerBatch && dp.noise_multiplier > 0.0 {
            let n = gaussian_vector::<T>(dim, dp.batch_noise_std(), &mut noise_rng(dp.seed, step, BATCH_SLOT));
            acc.add_to_sum(&n);
            noise_sum = Some(n);
        }
        let g = acc.finish()?;
        let lr = self.settings.schedule.lr(epoch);
        sgd_step(params, &g, lr, &mut self.state)?;
        let epsilon = self.ledger.step()?;
        let sigma = if dp.private { dp.noise_multiplier } else { 0.0 };
        let record = record_step(
            &clipped_sum,
            noise_sum.as_deref(),
            StepContext {
                step,
                epoch,
                lr,
                loss: loss_sum / batch.len() as f64,
                accuracy: None,
                epsilon,
                noise_multiplier: sigma,
            },
        )?;
        Ok((record, max_raw))
    }

    /// Fraction of `data` classified correctly.
    pub fn accuracy(&self, params: &ParamSet<T>, data: &Dataset) -> Result<f64> {
        evaluate_accuracy(&self.pool, self.model, params, data)
    }
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + s;
    }
}

#[allow(clippy::too_many_arguments)]
fn process_example<T: Scalar>(
    model: &Model,
    params: &ParamSet<T>,
    data: &Dataset,
    index: usize,
    dp: &DpConfig,
    stages: Option<&Vec<Extent>>,
    step: u64,
    slot: u64,
) -> Result<Example<T>> {
    let (loss, grad) = model.per_example_gradient(params, &data.example::<T>(index), data.labels[index])?;
    if let Some((i, v)) = grad.values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFinite {
            step,
            layer: grad.layer_of(i),
            index: i,
            value: v.as_f64(),
        });
    }
    let raw_norm = grad.norm();
    if !dp.private {
        return Ok(Example {
            loss: loss.as_f64(),
            raw_norm,
            clipped: grad,
            noise: None,
        });
    }
    let clipped = match &dp.mode {
        ClipMode::Global => clip_global(grad, dp.clip_norm),
        ClipMode::PerLayer => clip_per_layer(grad, dp.clip_norm)?,
        ClipMode::PerStage { stages: m, .. } => {
            let parts = stages.ok_or_else(|| Error::Internal("stage partition missing".into()))?;
            clip_per_stage(grad.with_stages(parts.clone())?, dp.clip_norm, *m)?
        }
    };
    let noise = if dp.noise_placement == NoisePlacement::PerExample && dp.noise_multiplier > 0.0 {
        Some(gaussian_vector::<T>(
            clipped.dim(),
            dp.per_example_noise_std(),
            &mut noise_rng(dp.seed, step, slot),
        ))
    } else {
        None
    };
    Ok(Example {
        loss: loss.as_f64(),
        raw_norm,
        clipped,
        noise,
    })
}

/// Fraction of `data` that `model` classifies correctly.
pub fn evaluate_accuracy<T: Scalar>(pool: &rayon::ThreadPool, model: &Model, params: &ParamSet<T>, data: &Dataset) -> Result<f64> {
    let hits: Result<Vec<bool>> = pool.install(|| {
        (0..data.len())
            .into_par_iter()
            .map(|i| Ok(model.predict(params, &data.example::<T>(i))? == data.labels[i]))
            .collect()
    });
    let correct = hits?.into_iter().filter(|&h| h).count();
    Ok(correct as f64 / data.len() as f64)
}

/// Runs the DPSGD loop for a single step on explicit indices. Used where a
/// caller needs one step outside the epoch sampler.
pub fn train_on_batch<T: Scalar>(
    trainer: &mut Trainer<'_, T>,
    params: &mut ParamSet<T>,
    data: &Dataset,
    batch: &[usize],
    epoch: usize,
) -> Result<RunRecord> {
    if batch.len() != trainer.settings.dp.effective_batch() {
        return Err(Error::Protocol(format!(
            "batch of {} examples for effective batch {}",
            batch.len(),
            trainer.settings.dp.effective_batch()
        )));
    }
    trainer.step(params, data, batch, epoch).map(|(r, _)| r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_blobs;
    use crate::models::{build_model, ModelSpec};

    fn settings(dp: DpConfig, lr: f64, workers: usize) -> TrainSettings {
        TrainSettings {
            dp,
            schedule: LrSchedule::constant(lr),
            momentum: 0.0,
            delta: 1e-5,
            workers,
        }
    }

    #[test]
    fn full_batch_step_matches_sgd_oracle() {
        let data = synth_blobs(3, 4, &[5], 0.3, 1).unwrap();
        let (model, mut params) = build_model::<f64>(ModelSpec::mlp(5, &[6], 3), 2).unwrap();
        let start = params.clone();
        let dp = DpConfig::new(1e6, 0.0, ClipMode::Global).with_batch(1, data.len());
        let mut t = Trainer::new(&model, settings(dp, 0.1, 2), data.len()).unwrap();
        let out = t.train_epoch(&mut params, &data, None, 0).unwrap();
        assert_eq!(out.records.len(), 1);

        let mut mean = vec![0.0; model.dim()];
        for i in 0..data.len() {
            let (_, g) = model.per_example_gradient(&start, &data.example(i), data.labels[i]).unwrap();
            for (m, v) in mean.iter_mut().zip(&g.values) {
                *m += v / data.len() as f64;
            }
        }
        for ((p, s), m) in params.values.iter().zip(&start.values).zip(&mean) {
            assert!((p - (s - 0.1 * m)).abs() < 1e-10);
        }
    }

    #[test]
    fn single_example_single_step() {
        let data = synth_blobs(2, 1, &[3], 0.0, 1).unwrap();
        let data = Dataset::new(data.shape.clone(), data.features[..3].to_vec(), vec![0], 2, data.split, "one").unwrap();
        let (model, mut params) = build_model::<f64>(ModelSpec::mlp(3, &[], 2), 0).unwrap();
        let mut t = Trainer::new(&model, settings(DpConfig::new(1.0, 1.0, ClipMode::Global), 0.1, 1), 1).unwrap();
        assert_eq!(t.train_epoch(&mut params, &data, None, 0).unwrap().records.len(), 1);
        assert_eq!(t.steps(), 1);
    }

    #[test]
    fn worker_count_does_not_change_records() {
        let data = synth_blobs(4, 10, &[6], 0.5, 3).unwrap();
        let run = |workers| {
            let (model, mut params) = build_model::<f32>(ModelSpec::mlp(6, &[8], 4), 5).unwrap();
            let dp = DpConfig::new(0.5, 1.0, ClipMode::PerLayer).with_batch(2, 4).with_seed(9);
            let mut t = Trainer::new(&model, settings(dp, 0.05, workers), data.len()).unwrap();
            let mut recs = Vec::new();
            for e in 0..2 {
                recs.extend(t.train_epoch(&mut params, &data, Some(&data), e).unwrap().records);
            }
            (recs, params)
        };
        let (a, pa) = run(1);
        let (b, pb) = run(3);
        assert_eq!(a, b);
        assert_eq!(pa, pb);
    }

    #[test]
    fn per_batch_noise_has_batch_scale() {
        let data = synth_blobs(2, 32, &[4], 0.5, 3).unwrap();
        let (model, mut params) = build_model::<f64>(ModelSpec::mlp(4, &[], 2), 5).unwrap();
        let mut dp = DpConfig::new(1.0, 2.0, ClipMode::Global).with_batch(1, 64);
        dp.noise_placement = NoisePlacement::PerBatch;
        let mut t = Trainer::new(&model, settings(dp, 0.01, 1), data.len()).unwrap();
        let r = &t.train_epoch(&mut params, &data, None, 0).unwrap().records[0];
        let expect = 2.0 * (model.dim() as f64).sqrt();
        assert!((r.noise_norm / expect - 1.0).abs() < 0.5, "{}", r.noise_norm);
        assert!(r.snr.is_some());
    }

    #[test]
    fn non_finite_gradient_aborts_step_with_context() {
        let mut data = synth_blobs(2, 2, &[2], 0.0, 0).unwrap();
        data.features[0] = f64::NAN;
        let (model, mut params) = build_model::<f64>(ModelSpec::mlp(2, &[], 2), 0).unwrap();
        let start = params.clone();
        let dp = DpConfig::new(1.0, 0.0, ClipMode::Global).with_batch(1, 4);
        let mut t = Trainer::new(&model, settings(dp, 0.1, 1), 4).unwrap();
        let err = t.train_epoch(&mut params, &data, None, 0).unwrap_err();
        assert!(matches!(err, Error::Step { step: 0, epoch: 0, .. }), "{err}");
        assert_eq!(params, start);
    }

    #[test]
    fn stage_mode_uses_configured_partition() {
        let data = synth_blobs(2, 4, &[3], 0.5, 3).unwrap();
        let (model, mut params) = build_model::<f64>(ModelSpec::mlp(3, &[4, 4], 2), 5).unwrap();
        let mode = ClipMode::PerStage {
            stages: 2,
            boundaries: Some(vec![2]),
        };
        let dp = DpConfig::new(0.1, 0.0, mode).with_batch(1, 2);
        let mut t = Trainer::new(&model, settings(dp, 0.1, 1), data.len()).unwrap();
        let out = t.train_epoch(&mut params, &data, None, 0).unwrap();
        assert!(out.records.iter().all(|r| r.grad_norm <= 2.0 * 0.1 * (1.0 + 1e-9)));
    }
}
