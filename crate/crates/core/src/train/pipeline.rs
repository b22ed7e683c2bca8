//! Turning dB range-time maps into the two network input images.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::augment::{self, AugmentConfig, Volume};
use crate::error::{bail_validation, Result};
use crate::rng;
use crate::rtm::{self, normalize_slice, pad_and_resize, PreprocessConfig, RangeTimeMap, ANTENNAS, DEFAULT_DB_EPS};
use crate::spectral::{extract_cvd, CvdConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct PipelineConfig {
    pub preprocess: PreprocessConfig,
    pub cvd: CvdConfig,
    pub augment: AugmentConfig,
}

impl PipelineConfig {
    pub fn spatial(&self) -> usize {
        self.preprocess.spatial_size
    }

    /// Values per stream image, `3·S·S`.
    pub fn image_len(&self) -> usize {
        ANTENNAS * self.spatial() * self.spatial()
    }
}

/// Both network inputs for one sample, each `[3, S, S]` in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamPair {
    pub rtm: Vec<f64>,
    pub cvd: Vec<f64>,
}

/// Deterministic path: CVD from the dB map, independent min-max scaling of
/// each stream, time padding to `t_max` and bilinear resizing.
pub fn prepare_streams(rtm: &RangeTimeMap, cfg: &PipelineConfig) -> Result<StreamPair> {
    let cvd = extract_cvd(rtm, &cfg.cvd)?;
    let (rtm_n, _) = normalize_slice(rtm.data());
    let rtm_img = pad_and_resize(&rtm.with_data(rtm_n)?, &cfg.preprocess)?;
    let (cvd_n, _) = normalize_slice(&cvd.data);
    let s = cfg.spatial();
    let plane = cvd.range_bins * cvd.freq_bins;
    let mut cvd_img = Vec::with_capacity(ANTENNAS * s * s);
    for a in 0..ANTENNAS {
        cvd_img.extend(rtm::resize_bilinear(&cvd_n[a * plane..(a + 1) * plane], cvd.range_bins, cvd.freq_bins, s, s));
    }
    Ok(StreamPair { rtm: rtm_img, cvd: cvd_img })
}

/// Which per-sample augmentations fired.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SampleAugLog {
    pub dropped_antenna: Option<usize>,
    pub masks: usize,
}

/// Training path: physics augmentations on the map (warp in dB, envelope and
/// multipath in linear amplitude), then the deterministic path, then antenna
/// dropout on the same plane of both streams and SpecAugment per stream.
pub fn augmented_streams(rtm: &RangeTimeMap, cfg: &PipelineConfig, seed: u64) -> Result<(StreamPair, SampleAugLog)> {
    let a = &cfg.augment;
    let on = a.enabled;
    let sub = |k: u64| rng::mix(seed, k);
    let mut vol = Volume::from_rtm(rtm);
    if on.temporal_warp {
        vol = augment::temporal_warp(&vol, a.temporal_warp_sigma, sub(1))?;
    }
    if on.magnitude_warp || on.multipath {
        let mut lin = Volume { data: rtm::db_to_linear(&vol.data)?, ..vol };
        if on.magnitude_warp {
            lin = augment::magnitude_warp(&lin, a.mag_warp_sigma, a.mag_warp_knots, sub(2))?;
        }
        if on.multipath {
            lin = augment::random_multipath(&lin, a.multipath_max_delay, a.multipath_atten, sub(3))?;
        }
        vol = Volume { data: rtm::linear_to_db(&lin.data, DEFAULT_DB_EPS)?, ..lin };
    }
    let warped = rtm.with_data(vol.data)?;
    let mut pair = prepare_streams(&warped, cfg)?;
    let s = cfg.spatial();
    let mut log = SampleAugLog::default();
    if on.antenna_dropout {
        if let Some(c) = augment::dropout_choice(ANTENNAS, a.antenna_dropout_p, sub(4)) {
            for img in [&mut pair.rtm, &mut pair.cvd] {
                img[c * s * s..(c + 1) * s * s].iter_mut().for_each(|v| *v = 0.0);
            }
            log.dropped_antenna = Some(c);
        }
    }
    if on.spec_augment {
        for (k, img) in [(5, &mut pair.rtm), (6, &mut pair.cvd)] {
            let v = Volume::new(ANTENNAS, s, s, core::mem::take(img))?;
            let (v, bands) = augment::spec_augment(&v, a.spec_freq_masks, a.spec_time_masks, a.spec_max_frac, sub(k))?;
            log.masks += bands.iter().filter(|b| b.width > 0).count();
            *img = v.data;
        }
    }
    Ok((pair, log))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MixKind {
    MixUp,
    CutMix,
}

/// One batch-level mixing event.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixEvent {
    pub epoch: usize,
    pub step: usize,
    pub kind: MixKind,
    /// Weight of the original batch in the mixed labels.
    pub lambda: f64,
}

/// A batch ready for the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub size: usize,
    pub rtm: Vec<f64>,
    pub cvd: Vec<f64>,
    /// Soft targets `[size, classes]`.
    pub targets: Vec<f64>,
    pub labels: Vec<usize>,
}

pub fn stack(pairs: &[StreamPair], labels: &[usize], classes: usize) -> Result<Batch> {
    if pairs.len() != labels.len() || pairs.is_empty() {
        bail_validation!("batch needs matching non-empty pairs and labels");
    }
    let mut rtm = Vec::with_capacity(pairs.len() * pairs[0].rtm.len());
    let mut cvd = Vec::with_capacity(pairs.len() * pairs[0].cvd.len());
    for p in pairs {
        rtm.extend_from_slice(&p.rtm);
        cvd.extend_from_slice(&p.cvd);
    }
    let targets = crate::model::one_hot(labels, classes)?;
    Ok(Batch { size: pairs.len(), rtm, cvd, targets, labels: labels.to_vec() })
}

/// Applies MixUp (probability `mix_prob`) or CutMix (probability `mix_prob`)
/// against a shuffled partner batch. The same λ or box is used for both streams.
pub fn mix_batch(batch: &mut Batch, cfg: &PipelineConfig, classes: usize, seed: u64) -> Result<Option<(MixKind, f64)>> {
    let a = &cfg.augment;
    if batch.size < 2 {
        return Ok(None);
    }
    let mut r = rng::seeded(seed);
    let u: f64 = r.random();
    let kind = if a.enabled.mixup && u < a.mix_prob {
        MixKind::MixUp
    } else if a.enabled.cutmix && u >= a.mix_prob && u < 2.0 * a.mix_prob {
        MixKind::CutMix
    } else {
        return Ok(None);
    };
    let mut partner: Vec<usize> = (0..batch.size).collect();
    partner.shuffle(&mut r);
    let img = batch.rtm.len() / batch.size;
    let s = cfg.spatial();
    let mix_seed = rng::mix(seed, 0x3d);
    let src = batch.clone();
    let lambda = match kind {
        MixKind::MixUp => {
            let l = augment::sample_beta(a.mixup_alpha, mix_seed)?;
            for i in 0..batch.size {
                let j = partner[i];
                for (dst, from) in [(&mut batch.rtm, &src.rtm), (&mut batch.cvd, &src.cvd)] {
                    let (x, _) = augment::mix_with_lambda(
                        &from[i * img..(i + 1) * img],
                        &from[j * img..(j + 1) * img],
                        &[],
                        &[],
                        l,
                    )?;
                    dst[i * img..(i + 1) * img].copy_from_slice(&x);
                }
                let (_, y) = augment::mix_with_lambda(
                    &[],
                    &[],
                    &src.targets[i * classes..(i + 1) * classes],
                    &src.targets[j * classes..(j + 1) * classes],
                    l,
                )?;
                batch.targets[i * classes..(i + 1) * classes].copy_from_slice(&y);
            }
            l
        }
        MixKind::CutMix => {
            let l = augment::sample_beta(a.cutmix_alpha, mix_seed)?;
            let bx = augment::cut_box(s, s, l, mix_seed);
            for i in 0..batch.size {
                let j = partner[i];
                let mut y = Vec::new();
                for (dst, from) in [(&mut batch.rtm, &src.rtm), (&mut batch.cvd, &src.cvd)] {
                    let x1 = Volume::new(ANTENNAS, s, s, from[i * img..(i + 1) * img].to_vec())?;
                    let x2 = Volume::new(ANTENNAS, s, s, from[j * img..(j + 1) * img].to_vec())?;
                    let (v, yy) = augment::cutmix_with_box(
                        &x1,
                        &x2,
                        &src.targets[i * classes..(i + 1) * classes],
                        &src.targets[j * classes..(j + 1) * classes],
                        bx,
                    )?;
                    dst[i * img..(i + 1) * img].copy_from_slice(&v.data);
                    y = yy;
                }
                batch.targets[i * classes..(i + 1) * classes].copy_from_slice(&y);
            }
            1.0 - bx.area() as f64 / (s * s) as f64
        }
    };
    Ok(Some((kind, lambda)))
}

/// Sample value used to fill regions uncovered by a shift: the map minimum,
/// which becomes zero after min-max scaling.
fn fill_value(rtm: &RangeTimeMap) -> f64 {
    rtm.min_max().0
}

/// Reverses slow time.
pub fn time_reversed(rtm: &RangeTimeMap) -> Result<RangeTimeMap> {
    let (t, r) = (rtm.frames(), rtm.range_bins());
    let mut data = vec![0.0; rtm.data().len()];
    for a in 0..rtm.antennas() {
        for f in 0..t {
            let src = &rtm.plane(a)[(t - 1 - f) * r..(t - f) * r];
            data[(a * t + f) * r..(a * t + f + 1) * r].copy_from_slice(src);
        }
    }
    rtm.with_data(data)
}

/// Adds Gaussian noise with standard deviation `sigma` in unit-scaled terms
/// (`sigma` times the map's dB span).
pub fn with_noise(rtm: &RangeTimeMap, sigma: f64, seed: u64) -> Result<RangeTimeMap> {
    let (lo, hi) = rtm.min_max();
    let s = sigma * (hi - lo);
    let mut r = rng::seeded(seed);
    rtm.with_data(rtm.data().iter().map(|&v| v + s * rng::normal(&mut r)).collect())
}

/// Shifts content by `bins` towards larger range; uncovered bins are clipped to the fill value.
pub fn range_shifted(rtm: &RangeTimeMap, bins: usize) -> Result<RangeTimeMap> {
    let fill = fill_value(rtm);
    let r = rtm.range_bins();
    let mut data = rtm.data().to_vec();
    for row in data.chunks_mut(r) {
        let orig = row.to_vec();
        for k in 0..r {
            row[k] = if k >= bins { orig[k - bins] } else { fill };
        }
    }
    rtm.with_data(data)
}

/// Delays content by `frames`; the leading frames take the fill value.
pub fn time_shifted(rtm: &RangeTimeMap, frames: usize) -> Result<RangeTimeMap> {
    let fill = fill_value(rtm);
    let (t, r) = (rtm.frames(), rtm.range_bins());
    let mut data = vec![fill; rtm.data().len()];
    for a in 0..rtm.antennas() {
        for f in frames..t {
            let src = &rtm.plane(a)[(f - frames) * r..(f - frames + 1) * r];
            data[(a * t + f) * r..(a * t + f + 1) * r].copy_from_slice(src);
        }
    }
    rtm.with_data(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::AugmentToggles;
    use crate::synth;

    fn sample(seed: u64) -> RangeTimeMap {
        let ds = synth::generate_dataset(2, 2, seed).unwrap();
        ds.samples[0].clone()
    }

    fn small() -> PipelineConfig {
        PipelineConfig { preprocess: PreprocessConfig { spatial_size: 16, ..Default::default() }, ..Default::default() }
    }

    #[test]
    fn streams_have_image_shape_and_unit_range() {
        let cfg = small();
        let p = prepare_streams(&sample(1), &cfg).unwrap();
        assert_eq!(p.rtm.len(), cfg.image_len());
        assert_eq!(p.cvd.len(), cfg.image_len());
        for v in p.rtm.iter().chain(&p.cvd) {
            assert!((0.0..=1.0).contains(v));
        }
    }

    #[test]
    fn augmentation_off_matches_plain_path() {
        let mut cfg = small();
        cfg.augment.enabled = AugmentToggles {
            temporal_warp: false,
            magnitude_warp: false,
            multipath: false,
            antenna_dropout: false,
            spec_augment: false,
            mixup: false,
            cutmix: false,
        };
        let s = sample(2);
        assert_eq!(augmented_streams(&s, &cfg, 5).unwrap().0, prepare_streams(&s, &cfg).unwrap());
    }

    #[test]
    fn augmentation_is_seed_deterministic() {
        let cfg = small();
        let s = sample(3);
        let a = augmented_streams(&s, &cfg, 9).unwrap();
        assert_eq!(a, augmented_streams(&s, &cfg, 9).unwrap());
        assert_ne!(a.0, augmented_streams(&s, &cfg, 10).unwrap().0);
    }

    #[test]
    fn dropout_hits_same_plane_in_both_streams() {
        let mut cfg = small();
        cfg.augment.antenna_dropout_p = 1.0;
        cfg.augment.enabled.spec_augment = false;
        let (p, log) = augmented_streams(&sample(4), &cfg, 1).unwrap();
        let c = log.dropped_antenna.unwrap();
        let n = 16 * 16;
        assert!(p.rtm[c * n..(c + 1) * n].iter().all(|&v| v == 0.0));
        assert!(p.cvd[c * n..(c + 1) * n].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mixed_targets_stay_distributions() {
        let cfg = small();
        let pairs: Vec<StreamPair> = (0..4).map(|i| prepare_streams(&sample(i), &cfg).unwrap()).collect();
        let mut fired = [false; 2];
        for seed in 0..40 {
            let mut b = stack(&pairs, &[0, 1, 2, 1], 3).unwrap();
            if let Some((kind, lambda)) = mix_batch(&mut b, &cfg, 3, seed).unwrap() {
                fired[kind as usize] = true;
                assert!((0.0..=1.0).contains(&lambda));
                for row in b.targets.chunks(3) {
                    assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                }
            }
        }
        assert_eq!(fired, [true, true]);
    }

    #[test]
    fn tta_views() {
        let s = sample(5);
        let rev = time_reversed(&s).unwrap();
        assert_eq!(time_reversed(&rev).unwrap(), s);
        let t = s.frames();
        assert_eq!(rev.at(1, 0, 10), s.at(1, t - 1, 10));
        let lo = s.min_max().0;
        let sh = range_shifted(&s, 3).unwrap();
        assert_eq!(sh.at(0, 4, 2), lo);
        assert_eq!(sh.at(2, 4, 50), s.at(2, 4, 47));
        let ts = time_shifted(&s, 2).unwrap();
        assert_eq!(ts.at(0, 1, 9), lo);
        assert_eq!(ts.at(0, 5, 9), s.at(0, 3, 9));
        let n = with_noise(&s, 0.01, 1).unwrap();
        let (lo, hi) = s.min_max();
        let rms = libm::sqrt(n.data().iter().zip(s.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / s.data().len() as f64);
        assert!((rms / (0.01 * (hi - lo)) - 1.0).abs() < 0.05);
    }
}
