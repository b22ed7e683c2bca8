//! Training loop with warmup-cosine AdamW, gradient clipping, EMA and SWA
//! weight averaging, top-k checkpoint selection and batch-level mixing.

mod infer;
mod optim;
mod pipeline;

pub use infer::{
    accuracy, argmax, predict_ensemble, predict_pairs, predict_tta, reestimate_batch_norm, softmax_rows, tta_views,
    TtaConfig, TtaView,
};
pub use optim::{AdamW, Ema, LrSchedule, Swa};
pub use pipeline::{
    augmented_streams, mix_batch, prepare_streams, range_shifted, stack, time_reversed, time_shifted, with_noise, Batch,
    MixEvent, MixKind, PipelineConfig, SampleAugLog, StreamPair,
};

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::augment::AugmentConfig;
use crate::error::{bail_validation, Error, Result};
use crate::model::{cast_loss, CastModel, ModelConfig};
use crate::nn::{Graph, ParamStore, Scalar, Tensor};
use crate::rng;
use crate::rtm::{PreprocessConfig, RangeTimeMap, ANTENNAS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub min_lr_frac: f64,
    pub grad_clip: f64,
    pub label_smoothing: f64,
    pub lambda_aux: f64,
    pub swa_start_frac: f64,
    pub ema_decay: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub use_ema: bool,
    pub use_swa: bool,
    pub top_k: usize,
    /// MixUp and CutMix are switched off for this many final epochs.
    pub mix_off_final_epochs: usize,
    pub bn_momentum: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            weight_decay: 0.05,
            epochs: 70,
            warmup_epochs: 5,
            min_lr_frac: 0.01,
            grad_clip: 1.0,
            label_smoothing: 0.1,
            lambda_aux: 0.3,
            swa_start_frac: 0.8,
            ema_decay: 0.9995,
            batch_size: 16,
            seed: 42,
            use_ema: true,
            use_swa: true,
            top_k: 5,
            mix_off_final_epochs: 3,
            bn_momentum: 0.1,
        }
    }
}

impl TrainConfig {
    /// Laptop-sized run: 20 epochs and an EMA horizon that fits a few hundred steps.
    pub fn desk() -> Self {
        Self { epochs: 20, warmup_epochs: 2, lr: 1e-3, ema_decay: 0.99, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.warmup_epochs >= self.epochs {
            bail_validation!("warmup_epochs ({}) must be below epochs ({})", self.warmup_epochs, self.epochs);
        }
        let positive = [("lr", self.lr), ("grad_clip", self.grad_clip)];
        for (n, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                bail_validation!("{n} must be positive, got {v}");
            }
        }
        if !(self.weight_decay >= 0.0) || !(self.lambda_aux >= 0.0) {
            bail_validation!("weight_decay and lambda_aux must be non-negative");
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            bail_validation!("label_smoothing must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.ema_decay) || !(0.0..=1.0).contains(&self.swa_start_frac) {
            bail_validation!("ema_decay must lie in [0, 1) and swa_start_frac in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.min_lr_frac) || !(0.0..=1.0).contains(&self.bn_momentum) {
            bail_validation!("min_lr_frac and bn_momentum must lie in [0, 1]");
        }
        if self.batch_size < 2 {
            bail_validation!("batch_size must be at least 2 for batch statistics");
        }
        Ok(())
    }

    pub fn swa_start_epoch(&self) -> usize {
        libm::floor(self.swa_start_frac * self.epochs as f64) as usize
    }
}

pub const DESK_TEMPORAL_WARP_SIGMA: f64 = 0.03;

/// Everything needed to build, feed and train one network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub pipeline: PipelineConfig,
    pub train: TrainConfig,
}

impl ExperimentConfig {
    /// Desk-scale preset: 32×32 inputs, the short training schedule and a
    /// milder time warp (σ = 0.03) so cadence classes stay separable.
    pub fn desk(num_classes: usize) -> Self {
        Self {
            model: ModelConfig { num_classes, ..ModelConfig::default() },
            pipeline: PipelineConfig {
                preprocess: PreprocessConfig { spatial_size: 32, ..PreprocessConfig::default() },
                augment: AugmentConfig { temporal_warp_sigma: DESK_TEMPORAL_WARP_SIGMA, ..AugmentConfig::default() },
                ..PipelineConfig::default()
            },
            train: TrainConfig::desk(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.pipeline.augment.validate()?;
        self.train.validate()?;
        let s = self.pipeline.preprocess.spatial_size;
        let need = 1usize << self.model.widths.len();
        if s < need {
            bail_validation!("spatial size {s} too small for {} encoder stages (need {need})", self.model.widths.len());
        }
        Ok(())
    }
}

/// A saved set of weights with its validation score.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<S> {
    pub epoch: usize,
    pub val_accuracy: f64,
    pub values: Vec<Tensor<S>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
    pub lr: f64,
    pub mix_events: usize,
    pub dropped_antennas: usize,
}

pub struct TrainedBundle<S> {
    pub model: CastModel,
    /// Parameters after the last step.
    pub params: ParamStore<S>,
    pub ema: Option<Vec<Tensor<S>>>,
    pub swa: Option<Vec<Tensor<S>>>,
    /// Best epochs by validation accuracy, best first.
    pub top_k: Vec<Checkpoint<S>>,
    pub log: Vec<EpochLog>,
    pub mix_events: Vec<MixEvent>,
}

impl<S: Scalar> TrainedBundle<S> {
    /// Named ensemble members: top-k checkpoints, then EMA and SWA.
    pub fn members(&self) -> Vec<(String, &[Tensor<S>])> {
        let mut out: Vec<(String, &[Tensor<S>])> =
            self.top_k.iter().map(|c| (alloc::format!("epoch-{}", c.epoch), c.values.as_slice())).collect();
        if let Some(e) = &self.ema {
            out.push(("ema".into(), e.as_slice()));
        }
        if let Some(s) = &self.swa {
            out.push(("swa".into(), s.as_slice()));
        }
        out
    }

    pub fn best_val_accuracy(&self) -> f64 {
        self.top_k.first().map_or(0.0, |c| c.val_accuracy)
    }
}

fn labels_of(samples: &[RangeTimeMap], idx: &[usize], classes: usize) -> Result<Vec<usize>> {
    idx.iter()
        .map(|&i| {
            let s = samples.get(i).ok_or_else(|| Error::Validation(alloc::format!("sample index {i} out of range")))?;
            match s.label {
                Some(l) if l < classes => Ok(l),
                Some(l) => Err(Error::Validation(alloc::format!("label {l} outside {classes} classes"))),
                None => Err(Error::Validation(alloc::format!("sample {i} has no label"))),
            }
        })
        .collect()
}

/// Runs one optimisation step on `batch`; returns the loss.
fn train_step<S: Scalar>(
    model: &CastModel,
    ps: &mut ParamStore<S>,
    opt: &mut AdamW<S>,
    batch: &Batch,
    cfg: &TrainConfig,
    lr: f64,
    graph_seed: u64,
) -> Result<f64> {
    let s = libm::sqrt((batch.rtm.len() / (batch.size * ANTENNAS)) as f64) as usize;
    let shape = [batch.size, ANTENNAS, s, s];
    let mut g = Graph::<S>::new(true, graph_seed);
    g.bn_momentum = cfg.bn_momentum;
    let rtm = g.constant(Tensor::from_f64(&shape, &batch.rtm)?);
    let cvd = g.constant(Tensor::from_f64(&shape, &batch.cvd)?);
    let out = model.forward(&mut g, ps, Some(rtm), Some(cvd))?;
    let loss = cast_loss(&mut g, out.logits, out.aux_rtm, out.aux_cvd, &batch.targets, cfg.label_smoothing, cfg.lambda_aux)?;
    let value = g.value(loss).data[0].f64();
    if !value.is_finite() {
        return Ok(value);
    }
    ps.zero_grad();
    g.backward(loss, ps)?;
    ps.clip_grad_norm(cfg.grad_clip);
    opt.step(ps, lr);
    Ok(value)
}

/// Trains `exp.model` on `train_idx` and scores every epoch on `val_idx`.
pub fn train<S: Scalar>(
    exp: &ExperimentConfig,
    samples: &[RangeTimeMap],
    train_idx: &[usize],
    val_idx: &[usize],
) -> Result<TrainedBundle<S>> {
    exp.validate()?;
    if train_idx.len() < 2 || val_idx.is_empty() {
        bail_validation!("need at least 2 training and 1 validation samples");
    }
    let cfg = &exp.train;
    let pipe = &exp.pipeline;
    let classes = exp.model.num_classes;
    let train_labels = labels_of(samples, train_idx, classes)?;
    let val_labels = labels_of(samples, val_idx, classes)?;
    let (model, mut ps) = CastModel::build::<S>(&exp.model, rng::mix(cfg.seed, 0x1417))?;

    let val_pairs: Vec<StreamPair> = val_idx.iter().map(|&i| prepare_streams(&samples[i], pipe)).collect::<Result<_>>()?;
    let steps_per_epoch = train_idx.len().div_ceil(cfg.batch_size);
    let total = steps_per_epoch * cfg.epochs;
    let sched = LrSchedule::new(cfg.lr, cfg.warmup_epochs * steps_per_epoch, total, cfg.min_lr_frac)?;
    let mut opt = AdamW::new(&ps, cfg.weight_decay);
    let mut ema = cfg.use_ema.then(|| Ema::new(&ps, cfg.ema_decay));
    let mut swa = Swa::new();
    let swa_start = cfg.swa_start_epoch();
    let mix_until = cfg.epochs.saturating_sub(cfg.mix_off_final_epochs);

    let mut order: Vec<usize> = (0..train_idx.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut events = Vec::new();
    let mut top: Vec<Checkpoint<S>> = Vec::new();
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng::stream(cfg.seed, 1 + epoch as u64));
        let mut loss_sum = 0.0;
        let mut epoch_events = 0;
        let mut dropped = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let mut pairs = Vec::with_capacity(chunk.len());
            let mut labels = Vec::with_capacity(chunk.len());
            for &j in chunk {
                let seed = rng::mix(rng::mix(cfg.seed, epoch as u64), train_idx[j] as u64);
                let (p, l) = augmented_streams(&samples[train_idx[j]], pipe, seed)?;
                dropped += l.dropped_antenna.is_some() as usize;
                pairs.push(p);
                labels.push(train_labels[j]);
            }
            let mut batch = stack(&pairs, &labels, classes)?;
            if epoch < mix_until {
                if let Some((kind, lambda)) = mix_batch(&mut batch, pipe, classes, rng::mix(cfg.seed ^ 0x5eed, step as u64))? {
                    events.push(MixEvent { epoch, step, kind, lambda });
                    epoch_events += 1;
                }
            }
            let lr = sched.at(step);
            let loss = train_step(&model, &mut ps, &mut opt, &batch, cfg, lr, rng::mix(cfg.seed, 0xd0 + step as u64))?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, step, loss });
            }
            loss_sum += loss * batch.size as f64;
            if let Some(e) = ema.as_mut() {
                e.update(&ps);
            }
            step += 1;
        }
        if cfg.use_swa && epoch >= swa_start {
            swa.add(&ps.snapshot());
        }
        let probs = predict_pairs(&model, &mut ps, &val_pairs, 32)?;
        let acc = accuracy(&probs, &val_labels);
        log.push(EpochLog {
            epoch,
            train_loss: loss_sum / train_idx.len() as f64,
            val_accuracy: acc,
            lr: sched.at(step - 1),
            mix_events: epoch_events,
            dropped_antennas: dropped,
        });
        if cfg.top_k > 0 {
            top.push(Checkpoint { epoch, val_accuracy: acc, values: ps.snapshot() });
            // best accuracy first, later epoch wins ties
            top.sort_by(|a, b| b.val_accuracy.total_cmp(&a.val_accuracy).then(b.epoch.cmp(&a.epoch)));
            top.truncate(cfg.top_k);
        }
    }
    if events.iter().any(|e| e.epoch >= mix_until) {
        bail_validation!("mixing happened inside the final {} epochs", cfg.mix_off_final_epochs);
    }

    let train_pairs: Vec<StreamPair> =
        train_idx.iter().map(|&i| prepare_streams(&samples[i], pipe)).collect::<Result<_>>()?;
    let final_snapshot = ps.snapshot();
    let averaged = |values: &[Tensor<S>], ps: &mut ParamStore<S>| -> Result<Vec<Tensor<S>>> {
        ps.load_snapshot(values)?;
        reestimate_batch_norm(&model, ps, &train_pairs, cfg.batch_size)?;
        Ok(ps.snapshot())
    };
    let ema_values = match &ema {
        Some(e) => Some(averaged(e.snapshot(), &mut ps)?),
        None => None,
    };
    let swa_values = match swa.average() {
        Some(a) if cfg.use_swa => Some(averaged(a, &mut ps)?),
        _ => None,
    };
    ps.load_snapshot(&final_snapshot)?;
    Ok(TrainedBundle { model, params: ps, ema: ema_values, swa: swa_values, top_k: top, log, mix_events: events })
}
