//! Radar-specific augmentations, SpecAugment masking, MixUp and CutMix.
//!
//! All operations are deterministic functions of their input, parameters and
//! seed. Each one is the identity at zero strength.

mod spline;

use alloc::vec::Vec;

use rand::Rng as _;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{bail_shape, bail_validation, Result};
use crate::rng;
use crate::rtm::RangeTimeMap;

pub use spline::{even_knots, NaturalSpline};

/// A stack of equally sized row-major planes: `[channels × rows × cols]`.
///
/// For range-time maps rows are frames and columns range bins; for cadence
/// diagrams rows are range bins and columns frequency bins.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub channels: usize,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Volume {
    pub fn new(channels: usize, rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * rows * cols {
            bail_shape!("volume data length {} != {channels}x{rows}x{cols}", data.len());
        }
        Ok(Self { channels, rows, cols, data })
    }

    pub fn from_rtm(rtm: &RangeTimeMap) -> Self {
        Self {
            channels: rtm.antennas(),
            rows: rtm.frames(),
            cols: rtm.range_bins(),
            data: rtm.data().to_vec(),
        }
    }

    fn same_shape(&self, other: &Self) -> bool {
        (self.channels, self.rows, self.cols) == (other.channels, other.rows, other.cols)
    }

    #[inline]
    fn idx(&self, c: usize, r: usize, k: usize) -> usize {
        (c * self.rows + r) * self.cols + k
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentToggles {
    pub temporal_warp: bool,
    pub magnitude_warp: bool,
    pub multipath: bool,
    pub antenna_dropout: bool,
    pub spec_augment: bool,
    pub mixup: bool,
    pub cutmix: bool,
}

impl Default for AugmentToggles {
    fn default() -> Self {
        Self {
            temporal_warp: true,
            magnitude_warp: true,
            multipath: true,
            antenna_dropout: true,
            spec_augment: true,
            mixup: true,
            cutmix: true,
        }
    }
}

impl AugmentToggles {
    pub fn physics_enabled(&self) -> bool {
        self.temporal_warp || self.magnitude_warp || self.multipath || self.antenna_dropout
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub temporal_warp_sigma: f64,
    pub mag_warp_sigma: f64,
    pub mag_warp_knots: usize,
    pub multipath_max_delay: usize,
    pub multipath_atten: (f64, f64),
    pub antenna_dropout_p: f64,
    pub spec_freq_masks: usize,
    pub spec_time_masks: usize,
    pub spec_max_frac: f64,
    pub mixup_alpha: f64,
    pub cutmix_alpha: f64,
    /// Probability that a batch is mixed with MixUp; CutMix gets the same
    /// probability and the two are mutually exclusive.
    pub mix_prob: f64,
    pub enabled: AugmentToggles,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            temporal_warp_sigma: 0.15,
            mag_warp_sigma: 0.1,
            mag_warp_knots: 4,
            multipath_max_delay: 10,
            multipath_atten: (0.05, 0.15),
            antenna_dropout_p: 0.1,
            spec_freq_masks: 2,
            spec_time_masks: 2,
            spec_max_frac: 0.15,
            mixup_alpha: 0.4,
            cutmix_alpha: 1.0,
            mix_prob: 0.5,
            enabled: AugmentToggles::default(),
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        let probs = [("antenna_dropout_p", self.antenna_dropout_p), ("mix_prob", self.mix_prob)];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                bail_validation!("{name} must lie in [0, 1], got {p}");
            }
        }
        if self.mix_prob > 0.5 {
            bail_validation!("mix_prob must be at most 0.5 (MixUp and CutMix are exclusive)");
        }
        let sigmas = [
            ("temporal_warp_sigma", self.temporal_warp_sigma),
            ("mag_warp_sigma", self.mag_warp_sigma),
            ("mixup_alpha", self.mixup_alpha),
            ("cutmix_alpha", self.cutmix_alpha),
        ];
        for (name, s) in sigmas {
            if !(s > 0.0 && s.is_finite()) {
                bail_validation!("{name} must be positive, got {s}");
            }
        }
        if self.mag_warp_knots < 2 {
            bail_validation!("magnitude warp needs at least 2 knots");
        }
        if self.spec_freq_masks > 2 || self.spec_time_masks > 2 {
            bail_validation!("at most two SpecAugment masks per axis");
        }
        if !(self.spec_max_frac > 0.0 && self.spec_max_frac <= 0.5) {
            bail_validation!("spec_max_frac must lie in (0, 0.5]");
        }
        let (lo, hi) = self.multipath_atten;
        if !(0.0 <= lo && lo <= hi && hi < 1.0) {
            bail_validation!("multipath attenuation range ({lo}, {hi}) is invalid");
        }
        if self.multipath_max_delay == 0 {
            bail_validation!("multipath delay must allow at least one bin");
        }
        Ok(())
    }
}

/// Resamples the rows (time axis) along a smooth monotone warp.
///
/// The warp is a natural cubic spline through four evenly spaced control
/// points; the interior two are displaced by `N(0, (sigma·T)²)` frames and
/// the end points stay fixed. Knots are clamped to stay increasing and the
/// evaluated map is forced monotone, then every channel is linearly
/// interpolated at the warped positions.
pub fn temporal_warp(x: &Volume, sigma: f64, seed: u64) -> Result<Volume> {
    let t = x.rows;
    if t < 4 {
        bail_validation!("temporal warp needs at least 4 rows, got {t}");
    }
    let last = (t - 1) as f64;
    let base = even_knots(4, last);
    let mut rng = rng::seeded(seed);
    let mut knots = base.clone();
    let min_gap = last * 1e-3;
    for j in 1..3 {
        let shifted = base[j] + sigma * t as f64 * rng::normal(&mut rng);
        knots[j] = shifted.clamp(knots[j - 1] + min_gap, last - (3 - j) as f64 * min_gap);
    }
    let warp = NaturalSpline::new(base, knots);
    let mut positions = Vec::with_capacity(t);
    let mut floor = 0.0f64;
    for i in 0..t {
        let p = warp.eval(i as f64).clamp(0.0, last).max(floor);
        floor = p;
        positions.push(p);
    }

    let mut out = x.clone();
    for c in 0..x.channels {
        for (i, &p) in positions.iter().enumerate() {
            let i0 = (libm::floor(p) as usize).min(t - 1);
            let i1 = (i0 + 1).min(t - 1);
            let f = p - i0 as f64;
            for k in 0..x.cols {
                let a = x.data[x.idx(c, i0, k)];
                let b = x.data[x.idx(c, i1, k)];
                let o = out.idx(c, i, k);
                out.data[o] = if f == 0.0 { a } else { a + (b - a) * f };
            }
        }
    }
    Ok(out)
}

/// Smooth positive envelope `exp(s(t))` over the rows, `s` a natural spline
/// through `knots` evenly spaced `N(0, sigma²)` values.
pub fn magnitude_envelope(rows: usize, sigma: f64, knots: usize, seed: u64) -> Result<Vec<f64>> {
    if knots < 2 {
        bail_validation!("magnitude warp needs at least 2 knots, got {knots}");
    }
    if rows < 2 {
        bail_validation!("magnitude warp needs at least 2 rows");
    }
    let mut rng = rng::seeded(seed);
    let xs = even_knots(knots, (rows - 1) as f64);
    let ys: Vec<f64> = (0..knots).map(|_| sigma * rng::normal(&mut rng)).collect();
    let s = NaturalSpline::new(xs, ys);
    Ok((0..rows).map(|i| libm::exp(s.eval(i as f64))).collect())
}

/// Multiplies every row by a smooth random envelope (linear amplitude domain).
pub fn magnitude_warp(x: &Volume, sigma: f64, knots: usize, seed: u64) -> Result<Volume> {
    let env = magnitude_envelope(x.rows, sigma, knots, seed)?;
    let mut out = x.clone();
    for (i, v) in out.data.iter_mut().enumerate() {
        *v *= env[(i / x.cols) % x.rows];
    }
    Ok(out)
}

/// Adds a copy delayed by `delay` columns and scaled by `atten`:
/// `y[c,t,r] = x[c,t,r] + atten·x[c,t,r−delay]` for `r ≥ delay`.
///
/// Works on linear amplitude.
pub fn simulated_multipath(x: &Volume, delay: usize, atten: f64) -> Result<Volume> {
    if delay == 0 || delay >= x.cols {
        bail_validation!("multipath delay {delay} must lie in [1, {})", x.cols);
    }
    if !(0.0..1.0).contains(&atten) {
        bail_validation!("multipath attenuation {atten} must lie in [0, 1)");
    }
    let mut out = x.clone();
    for row in 0..x.channels * x.rows {
        let base = row * x.cols;
        for r in delay..x.cols {
            out.data[base + r] += atten * x.data[base + r - delay];
        }
    }
    Ok(out)
}

/// Multipath with delay drawn from `1..=max_delay` and attenuation from `atten`.
pub fn random_multipath(x: &Volume, max_delay: usize, atten: (f64, f64), seed: u64) -> Result<Volume> {
    let mut rng = rng::seeded(seed);
    let delay = rng.random_range(1..=max_delay.min(x.cols.saturating_sub(1)).max(1));
    let a = if atten.1 > atten.0 { rng.random_range(atten.0..atten.1) } else { atten.0 };
    simulated_multipath(x, delay, a)
}

/// With probability `p`, picks one channel uniformly to drop.
pub fn dropout_choice(channels: usize, p: f64, seed: u64) -> Option<usize> {
    let mut rng = rng::seeded(seed);
    let u: f64 = rng.random();
    (u < p).then(|| rng.random_range(0..channels))
}

/// Zeroes at most one channel plane; returns the dropped channel.
pub fn antenna_dropout(x: &Volume, p: f64, seed: u64) -> Result<(Volume, Option<usize>)> {
    if !(0.0..=1.0).contains(&p) {
        bail_validation!("dropout probability {p} must lie in [0, 1]");
    }
    let mut out = x.clone();
    let dropped = dropout_choice(x.channels, p, seed);
    if let Some(c) = dropped {
        zero_channel(&mut out, c);
    }
    Ok((out, dropped))
}

pub fn zero_channel(x: &mut Volume, channel: usize) {
    let n = x.rows * x.cols;
    x.data[channel * n..(channel + 1) * n].iter_mut().for_each(|v| *v = 0.0);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskAxis {
    /// Columns (range or frequency bins).
    Freq,
    /// Rows (frames, or range bins for a cadence diagram).
    Time,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskBand {
    pub axis: MaskAxis,
    pub start: usize,
    pub width: usize,
}

/// Zeroes up to `freq_masks` column bands and `time_masks` row bands across
/// all channels. Each axis draws its mask count uniformly from `0..=max` and
/// each width uniformly from `0..=floor(max_frac·len)`.
pub fn spec_augment(
    x: &Volume,
    freq_masks: usize,
    time_masks: usize,
    max_frac: f64,
    seed: u64,
) -> Result<(Volume, Vec<MaskBand>)> {
    if freq_masks > 2 || time_masks > 2 {
        bail_validation!("at most two masks per axis");
    }
    if !(max_frac > 0.0 && max_frac <= 0.5) {
        bail_validation!("max_frac must lie in (0, 0.5], got {max_frac}");
    }
    let mut rng = rng::seeded(seed);
    let mut bands = Vec::new();
    for (axis, max_count, len) in [(MaskAxis::Freq, freq_masks, x.cols), (MaskAxis::Time, time_masks, x.rows)] {
        let count = rng.random_range(0..=max_count);
        let max_width = libm::floor(max_frac * len as f64) as usize;
        for _ in 0..count {
            let width = rng.random_range(0..=max_width);
            let start = rng.random_range(0..=len - width);
            bands.push(MaskBand { axis, start, width });
        }
    }
    let mut out = x.clone();
    for band in &bands {
        for c in 0..x.channels {
            for r in 0..x.rows {
                for k in 0..x.cols {
                    let hit = match band.axis {
                        MaskAxis::Freq => (band.start..band.start + band.width).contains(&k),
                        MaskAxis::Time => (band.start..band.start + band.width).contains(&r),
                    };
                    if hit {
                        let i = out.idx(c, r, k);
                        out.data[i] = 0.0;
                    }
                }
            }
        }
    }
    Ok((out, bands))
}

pub fn sample_beta(alpha: f64, seed: u64) -> Result<f64> {
    let beta = Beta::new(alpha, alpha)
        .map_err(|_| crate::Error::Validation(alloc::format!("invalid Beta parameter {alpha}")))?;
    Ok(beta.sample(&mut rng::seeded(seed)))
}

/// `x = λ·x1 + (1 − λ)·x2`, same for the label vectors.
pub fn mix_with_lambda(x1: &[f64], x2: &[f64], y1: &[f64], y2: &[f64], lambda: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if x1.len() != x2.len() || y1.len() != y2.len() {
        bail_shape!("mixup operands differ in shape");
    }
    let blend = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| lambda * p + (1.0 - lambda) * q).collect();
    Ok((blend(x1, x2), blend(y1, y2)))
}

/// MixUp with `λ ~ Beta(alpha, alpha)`. Returns the mixed pair and `λ`.
pub fn mixup(x1: &[f64], x2: &[f64], y1: &[f64], y2: &[f64], alpha: f64, seed: u64) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    let lambda = sample_beta(alpha, seed)?;
    let (x, y) = mix_with_lambda(x1, x2, y1, y2, lambda)?;
    Ok((x, y, lambda))
}

/// Axis-aligned patch `[row0, row1) × [col0, col1)` in every channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CutBox {
    pub row0: usize,
    pub row1: usize,
    pub col0: usize,
    pub col1: usize,
}

impl CutBox {
    pub fn area(&self) -> usize {
        (self.row1 - self.row0) * (self.col1 - self.col0)
    }
}

/// Patch of area fraction roughly `1 − λ`, centred uniformly and clipped.
pub fn cut_box(rows: usize, cols: usize, lambda: f64, seed: u64) -> CutBox {
    let mut rng = rng::seeded(rng::mix(seed, 0xC07));
    let cut = libm::sqrt((1.0 - lambda).clamp(0.0, 1.0));
    let h = libm::floor(rows as f64 * cut) as usize;
    let w = libm::floor(cols as f64 * cut) as usize;
    let cy = rng.random_range(0..rows);
    let cx = rng.random_range(0..cols);
    let clip = |c: usize, half: usize, lo: bool, n: usize| {
        if lo {
            c.saturating_sub(half)
        } else {
            (c + half).min(n)
        }
    };
    let (row0, row1) = (clip(cy, h / 2, true, rows), clip(cy, h - h / 2, false, rows));
    let (col0, col1) = (clip(cx, w / 2, true, cols), clip(cx, w - w / 2, false, cols));
    CutBox { row0, row1, col0, col1 }
}

/// Pastes `bx` of `x2` into `x1`; labels mix by the pasted-area fraction.
pub fn cutmix_with_box(x1: &Volume, x2: &Volume, y1: &[f64], y2: &[f64], bx: CutBox) -> Result<(Volume, Vec<f64>)> {
    if !x1.same_shape(x2) || y1.len() != y2.len() {
        bail_shape!("cutmix operands differ in shape");
    }
    if bx.row1 > x1.rows || bx.col1 > x1.cols || bx.row0 > bx.row1 || bx.col0 > bx.col1 {
        bail_validation!("cut box {bx:?} outside {}x{}", x1.rows, x1.cols);
    }
    let mut out = x1.clone();
    for c in 0..x1.channels {
        for r in bx.row0..bx.row1 {
            for k in bx.col0..bx.col1 {
                let i = out.idx(c, r, k);
                out.data[i] = x2.data[i];
            }
        }
    }
    let frac = bx.area() as f64 / (x1.rows * x1.cols) as f64;
    let y = y1.iter().zip(y2).map(|(a, b)| (1.0 - frac) * a + frac * b).collect();
    Ok((out, y))
}

/// CutMix with `λ ~ Beta(alpha, alpha)`. Returns the mix and the box used.
pub fn cutmix(x1: &Volume, x2: &Volume, y1: &[f64], y2: &[f64], alpha: f64, seed: u64) -> Result<(Volume, Vec<f64>, CutBox)> {
    if x1.rows < 2 || x1.cols < 2 {
        bail_validation!("cutmix needs spatial dims of at least 2");
    }
    let lambda = sample_beta(alpha, seed)?;
    let bx = cut_box(x1.rows, x1.cols, lambda, seed);
    let (x, y) = cutmix_with_box(x1, x2, y1, y2, bx)?;
    Ok((x, y, bx))
}
