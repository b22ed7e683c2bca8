//! Inference: batched prediction, test-time views and checkpoint ensembles.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::pipeline::{self, prepare_streams, StreamPair};
use crate::error::{bail_validation, Result};
use crate::model::CastModel;
use crate::nn::{Graph, ParamStore, Scalar, Tensor};
use crate::rng;
use crate::rtm::{RangeTimeMap, ANTENNAS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TtaView {
    Original,
    TimeReversed,
    Noise,
    RangeShift,
    TimeShift,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TtaConfig {
    pub views: Vec<TtaView>,
    /// Noise standard deviation relative to the map's dB span.
    pub noise_sigma: f64,
    pub range_shift_bins: usize,
    pub time_shift_frames: usize,
    pub seed: u64,
}

impl Default for TtaConfig {
    fn default() -> Self {
        Self {
            views: vec![
                TtaView::Original,
                TtaView::TimeReversed,
                TtaView::Noise,
                TtaView::RangeShift,
                TtaView::TimeShift,
            ],
            noise_sigma: 0.01,
            range_shift_bins: 3,
            time_shift_frames: 2,
            seed: 0,
        }
    }
}

impl TtaConfig {
    /// Only the unmodified input.
    pub fn single() -> Self {
        Self { views: vec![TtaView::Original], ..Self::default() }
    }
}

/// Builds the configured views of one map. `key` individualises the noise draw.
pub fn tta_views(rtm: &RangeTimeMap, tta: &TtaConfig, key: u64) -> Result<Vec<RangeTimeMap>> {
    if tta.views.is_empty() {
        bail_validation!("at least one test-time view is required");
    }
    tta.views
        .iter()
        .map(|v| match v {
            TtaView::Original => Ok(rtm.clone()),
            TtaView::TimeReversed => pipeline::time_reversed(rtm),
            TtaView::Noise => pipeline::with_noise(rtm, tta.noise_sigma, rng::mix(tta.seed, key)),
            TtaView::RangeShift => pipeline::range_shifted(rtm, tta.range_shift_bins),
            TtaView::TimeShift => pipeline::time_shifted(rtm, tta.time_shift_frames),
        })
        .collect()
}

/// Eval-mode softmax outputs for prepared inputs, `batch` at a time.
pub fn predict_pairs<S: Scalar>(
    model: &CastModel,
    ps: &mut ParamStore<S>,
    pairs: &[StreamPair],
    batch: usize,
) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(pairs.len());
    for chunk in pairs.chunks(batch.max(1)) {
        let n = chunk.len();
        let img = chunk[0].rtm.len();
        let s = isqrt(img / ANTENNAS);
        let shape = [n, ANTENNAS, s, s];
        let mut g = Graph::<S>::new(false, 0);
        let rtm = g.constant(Tensor::from_f64(&shape, &chunk.iter().flat_map(|p| p.rtm.iter().copied()).collect::<Vec<_>>())?);
        let cvd = g.constant(Tensor::from_f64(&shape, &chunk.iter().flat_map(|p| p.cvd.iter().copied()).collect::<Vec<_>>())?);
        let o = model.forward(&mut g, ps, Some(rtm), Some(cvd))?;
        let logits = g.value(o.logits).to_f64();
        out.extend(softmax_rows(&logits, model.cfg.num_classes));
    }
    Ok(out)
}

fn isqrt(n: usize) -> usize {
    let mut s = libm::sqrt(n as f64) as usize;
    while s * s > n {
        s -= 1;
    }
    while (s + 1) * (s + 1) <= n {
        s += 1;
    }
    s
}

/// Averages softmax outputs over every (member × view) with equal weight.
///
/// `members` are full snapshots (parameters and buffers) loaded into `ps` in
/// turn; `ps` is restored afterwards. `keys` individualise per-sample noise.
pub fn predict_ensemble<S: Scalar>(
    model: &CastModel,
    ps: &mut ParamStore<S>,
    members: &[&[Tensor<S>]],
    samples: &[&RangeTimeMap],
    keys: &[u64],
    pipe: &super::PipelineConfig,
    tta: &TtaConfig,
    batch: usize,
) -> Result<Vec<Vec<f64>>> {
    if members.is_empty() {
        bail_validation!("ensemble has no members");
    }
    if keys.len() != samples.len() {
        bail_validation!("one key per sample is required");
    }
    let nv = tta.views.len();
    let mut pairs = Vec::with_capacity(samples.len() * nv);
    for (s, &k) in samples.iter().zip(keys) {
        for v in tta_views(s, tta, k)? {
            pairs.push(prepare_streams(&v, pipe)?);
        }
    }
    let saved = ps.snapshot();
    let c = model.cfg.num_classes;
    let mut acc = vec![vec![0.0; c]; samples.len()];
    for m in members {
        ps.load_snapshot(m)?;
        let probs = predict_pairs(model, ps, &pairs, batch)?;
        for (i, p) in probs.iter().enumerate() {
            acc[i / nv].iter_mut().zip(p).for_each(|(a, b)| *a += b);
        }
    }
    ps.load_snapshot(&saved)?;
    let w = 1.0 / (members.len() * nv) as f64;
    for row in &mut acc {
        row.iter_mut().for_each(|v| *v *= w);
    }
    Ok(acc)
}

/// Test-time prediction for one map with a single set of weights.
pub fn predict_tta<S: Scalar>(
    model: &CastModel,
    ps: &mut ParamStore<S>,
    rtm: &RangeTimeMap,
    pipe: &super::PipelineConfig,
    tta: &TtaConfig,
) -> Result<Vec<f64>> {
    let snap = ps.snapshot();
    let mut out = predict_ensemble(model, ps, &[&snap], &[rtm], &[0], pipe, tta, 8)?;
    Ok(out.remove(0))
}

/// Row-wise softmax of `[n, classes]` logits.
pub fn softmax_rows(logits: &[f64], classes: usize) -> Vec<Vec<f64>> {
    logits
        .chunks(classes)
        .map(|row| {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = row.iter().map(|&v| libm::exp(v - max)).collect();
            let sum: f64 = e.iter().sum();
            e.into_iter().map(|v| v / sum).collect()
        })
        .collect()
}

pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

pub fn accuracy(probs: &[Vec<f64>], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = probs.iter().zip(labels).filter(|(p, &l)| argmax(p) == l).count();
    hits as f64 / labels.len() as f64
}

/// Replaces batch-norm running statistics by their average over `pairs`
/// (train-mode forward passes without gradient).
pub fn reestimate_batch_norm<S: Scalar>(
    model: &CastModel,
    ps: &mut ParamStore<S>,
    pairs: &[StreamPair],
    batch: usize,
) -> Result<()> {
    let buffers: Vec<_> = ps.ids().filter(|&id| !ps.get(id).trainable).collect();
    for &id in &buffers {
        let name = &ps.get(id).name;
        let fill = if name.ends_with("running_var") { S::one() } else { S::zero() };
        ps.value_mut(id).data.iter_mut().for_each(|v| *v = fill);
    }
    for (k, chunk) in pairs.chunks(batch.max(2)).enumerate() {
        if chunk.len() < 2 && k > 0 {
            continue;
        }
        let n = chunk.len();
        let s = isqrt(chunk[0].rtm.len() / ANTENNAS);
        let shape = [n, ANTENNAS, s, s];
        let mut g = Graph::<S>::new(true, 0);
        g.bn_momentum = 1.0 / (k + 1) as f64;
        let rtm = g.constant(Tensor::from_f64(&shape, &chunk.iter().flat_map(|p| p.rtm.iter().copied()).collect::<Vec<_>>())?);
        let cvd = g.constant(Tensor::from_f64(&shape, &chunk.iter().flat_map(|p| p.cvd.iter().copied()).collect::<Vec<_>>())?);
        model.forward(&mut g, ps, Some(rtm), Some(cvd))?;
    }
    Ok(())
}
