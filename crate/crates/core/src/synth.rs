//! Synthetic multi-antenna range-time maps with known cadence, range and
//! antenna-gain ground truth.
//!
//! The hand return is a Gaussian range profile whose amplitude follows
//! `1 + m·cos(2π f t)` and whose centre drifts linearly in range. A broad
//! static torso return and additive noise sit underneath; every antenna sees
//! the same scene scaled by its gain.

use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{bail_validation, Result};
use crate::rng::{self, Rng};
use crate::rtm::{RangeTimeMap, ANTENNAS, DEFAULT_FRAME_RATE_HZ, MAX_FRAMES, MIN_FRAMES, RANGE_BINS};

/// Amplitude floor keeping empty range bins finite in dB (−100 dB).
const AMPLITUDE_FLOOR: f64 = 1e-5;
/// Torso return sits this many bins behind the hand, with this width.
const TORSO_OFFSET_BINS: f64 = 24.0;
const TORSO_WIDTH_BINS: f64 = 20.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GestureSpec {
    pub class_id: usize,
    pub cadence_hz: f64,
    /// Amplitude modulation depth `m`.
    pub mod_depth: f64,
    pub range_center: f64,
    pub range_width: f64,
    /// Range drift in bins per frame.
    pub range_drift: f64,
    pub duration_frames: usize,
    pub antenna_gains: [f64; ANTENNAS],
    /// Peak torso amplitude relative to the hand, `None` for no torso.
    pub torso_amp_db: Option<f64>,
    /// Noise standard deviation in amplitude dB, `None` for noiseless.
    pub noise_db: Option<f64>,
}

impl GestureSpec {
    pub fn validate(&self, frame_rate: f64) -> Result<()> {
        if !(self.cadence_hz >= 0.0 && self.cadence_hz < frame_rate / 2.0) {
            bail_validation!("cadence {} Hz must lie in [0, {})", self.cadence_hz, frame_rate / 2.0);
        }
        if !(0.0..1.0).contains(&self.mod_depth) {
            bail_validation!("modulation depth {} must lie in [0, 1)", self.mod_depth);
        }
        if !(self.range_width > 0.0) {
            bail_validation!("range width must be positive");
        }
        let lo = self.range_center - self.range_width;
        let hi = self.range_center + self.range_width;
        if lo < 0.0 || hi >= RANGE_BINS as f64 {
            bail_validation!("range profile [{lo}, {hi}] leaves [0, {RANGE_BINS})");
        }
        if self.duration_frames < 2 {
            bail_validation!("duration must be at least 2 frames");
        }
        if self.antenna_gains.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
            bail_validation!("antenna gains must be finite and non-negative");
        }
        if !self.range_drift.is_finite() {
            bail_validation!("range drift must be finite");
        }
        Ok(())
    }

    /// Full cadence cycles inside the gesture.
    pub fn cycles(&self, frame_rate: f64) -> f64 {
        self.duration_frames as f64 * self.cadence_hz / frame_rate
    }
}

/// Noise-free linear amplitude of antenna `a` at frame `t`, range bin `r`.
fn clean_amplitude(spec: &GestureSpec, frame_rate: f64, a: usize, t: usize, r: usize) -> f64 {
    let centre = spec.range_center + spec.range_drift * t as f64;
    let d = (r as f64 - centre) / spec.range_width;
    let envelope = 1.0 + spec.mod_depth * libm::cos(2.0 * PI * spec.cadence_hz * t as f64 / frame_rate);
    let mut amp = libm::exp(-0.5 * d * d) * envelope;
    if let Some(db) = spec.torso_amp_db {
        let dt = (r as f64 - spec.range_center - TORSO_OFFSET_BINS) / TORSO_WIDTH_BINS;
        amp += libm::pow(10.0, db / 20.0) * libm::exp(-0.5 * dt * dt);
    }
    spec.antenna_gains[a] * amp
}

/// Renders one gesture as a dB range-time map.
pub fn generate_sample(spec: &GestureSpec, frame_rate: f64, seed: u64) -> Result<RangeTimeMap> {
    spec.validate(frame_rate)?;
    let frames = spec.duration_frames;
    let mut rng = rng::seeded(seed);
    let sigma = spec.noise_db.map(|db| libm::pow(10.0, db / 20.0));
    let mut data = Vec::with_capacity(ANTENNAS * frames * RANGE_BINS);
    for a in 0..ANTENNAS {
        for t in 0..frames {
            for r in 0..RANGE_BINS {
                let mut amp = clean_amplitude(spec, frame_rate, a, t, r);
                if let Some(s) = sigma {
                    amp = (amp + s * rng::normal(&mut rng)).abs();
                }
                data.push(20.0 * libm::log10(amp + AMPLITUDE_FLOOR));
            }
        }
    }
    RangeTimeMap::new(ANTENNAS, frames, RANGE_BINS, data, frame_rate, Some(spec.class_id))
}

/// How classes differ from one another.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClassLayout {
    /// Grid over cadence × range centre × gain pattern: some class pairs
    /// differ only in cadence, others only in range.
    #[default]
    Mixed,
    /// Classes differ only in cadence.
    CadenceDominant,
    /// Classes differ only in range centre.
    RangeDominant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub samples: Vec<RangeTimeMap>,
    pub specs: Vec<GestureSpec>,
    pub splits: Vec<Split>,
    pub seed: u64,
    pub num_classes: usize,
}

impl SynthDataset {
    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.samples.len()).filter(|&i| self.splits[i] == split).collect()
    }
}

const MIXED_CADENCES_HZ: [f64; 4] = [1.0, 1.8, 2.6, 3.4];
const MIXED_RANGE_CENTERS: [f64; 2] = [70.0, 150.0];
const GAIN_PATTERNS: [[f64; 3]; 4] =
    [[1.0, 0.7, 0.5], [0.6, 1.0, 0.5], [0.5, 0.7, 1.0], [1.0, 1.0, 0.3]];
/// Fraction of each class assigned to validation.
pub const VAL_FRACTION: f64 = 0.2;

/// Nominal (cadence, range centre, gain pattern) of a class.
pub fn class_prototype(layout: ClassLayout, class: usize, num_classes: usize) -> (f64, f64, [f64; 3]) {
    match layout {
        ClassLayout::Mixed => {
            let nc = MIXED_CADENCES_HZ.len();
            let nr = MIXED_RANGE_CENTERS.len();
            (
                MIXED_CADENCES_HZ[class % nc],
                MIXED_RANGE_CENTERS[(class / nc) % nr],
                GAIN_PATTERNS[(class / (nc * nr)) % GAIN_PATTERNS.len()],
            )
        }
        ClassLayout::CadenceDominant => {
            // Spread over 1.0–4.6 Hz; at 8 classes the spacing is 0.5 Hz (≈5 bins).
            let step = (3.6 / (num_classes.max(2) - 1) as f64).min(0.5);
            (1.0 + step * class as f64, 110.0, GAIN_PATTERNS[0])
        }
        ClassLayout::RangeDominant => {
            let step = (160.0 / (num_classes.max(2) - 1) as f64).min(20.0);
            (2.0, 40.0 + step * class as f64, GAIN_PATTERNS[0])
        }
    }
}

fn jittered_spec(layout: ClassLayout, class: usize, num_classes: usize, rng: &mut Rng) -> GestureSpec {
    let (cadence, centre, gains) = class_prototype(layout, class, num_classes);
    let mut jitter = |half: f64| rng.random_range(-half..=half);
    let cadence_hz = cadence + jitter(0.05);
    let range_center = centre + jitter(4.0);
    let range_width = 6.0 + jitter(1.5).abs();
    let range_drift = jitter(0.15);
    let mod_depth = 0.5 + jitter(0.2);
    let torso_amp_db = Some(-3.0 + jitter(3.0));
    let noise_db = Some(-35.0 + jitter(5.0));
    let gains = gains.map(|g| g * (1.0 + jitter(0.05)));
    let duration_frames = rng.random_range(MIN_FRAMES..=MAX_FRAMES);
    GestureSpec {
        class_id: class,
        cadence_hz,
        mod_depth,
        range_center,
        range_width,
        range_drift,
        duration_frames,
        antenna_gains: gains,
        torso_amp_db,
        noise_db,
    }
}

/// Specs and splits for a dataset; sample `i` is class `i / per_class`.
pub fn dataset_specs(
    num_classes: usize,
    per_class: usize,
    seed: u64,
    layout: ClassLayout,
) -> Result<(Vec<GestureSpec>, Vec<Split>)> {
    if num_classes < 2 {
        bail_validation!("need at least 2 classes, got {num_classes}");
    }
    if per_class == 0 {
        bail_validation!("need at least one sample per class");
    }
    let mut specs = Vec::with_capacity(num_classes * per_class);
    let mut splits = Vec::with_capacity(num_classes * per_class);
    let n_val = libm::round(per_class as f64 * VAL_FRACTION) as usize;
    for class in 0..num_classes {
        let mut order: Vec<usize> = (0..per_class).collect();
        let mut shuffle = rng::stream(rng::mix(seed, 0x5911_7000), class as u64);
        for i in (1..order.len()).rev() {
            order.swap(i, shuffle.random_range(0..=i));
        }
        let mut class_splits = alloc::vec![Split::Train; per_class];
        for &j in &order[..n_val.min(per_class.saturating_sub(1))] {
            class_splits[j] = Split::Val;
        }
        for (j, split) in class_splits.into_iter().enumerate() {
            let index = (class * per_class + j) as u64;
            let mut r = rng::stream(seed, index);
            specs.push(jittered_spec(layout, class, num_classes, &mut r));
            splits.push(split);
        }
    }
    Ok((specs, splits))
}

/// Per-sample noise seed, derived from the dataset seed and sample index.
pub fn sample_seed(seed: u64, index: usize) -> u64 {
    rng::mix(seed, index as u64 + 1)
}

pub fn generate_dataset(num_classes: usize, per_class: usize, seed: u64) -> Result<SynthDataset> {
    generate_dataset_with_layout(num_classes, per_class, seed, ClassLayout::Mixed)
}

pub fn generate_dataset_with_layout(
    num_classes: usize,
    per_class: usize,
    seed: u64,
    layout: ClassLayout,
) -> Result<SynthDataset> {
    let (specs, splits) = dataset_specs(num_classes, per_class, seed, layout)?;
    let samples = specs
        .iter()
        .enumerate()
        .map(|(i, spec)| generate_sample(spec, DEFAULT_FRAME_RATE_HZ, sample_seed(seed, i)))
        .collect::<Result<Vec<_>>>()?;
    Ok(SynthDataset { samples, specs, splits, seed, num_classes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{extract_cvd, CvdConfig};

    fn base_spec() -> GestureSpec {
        GestureSpec {
            class_id: 0,
            cadence_hz: 2.0,
            mod_depth: 0.5,
            range_center: 100.0,
            range_width: 8.0,
            range_drift: 0.0,
            duration_frames: 39,
            antenna_gains: [1.0, 0.5, 0.25],
            torso_amp_db: None,
            noise_db: None,
        }
    }

    #[test]
    fn static_target_repeats_every_frame() {
        let spec = GestureSpec { mod_depth: 0.0, torso_amp_db: Some(0.0), ..base_spec() };
        let rtm = generate_sample(&spec, 13.0, 1).unwrap();
        for a in 0..3 {
            let plane = rtm.plane(a);
            for t in 1..rtm.frames() {
                assert_eq!(&plane[..RANGE_BINS], &plane[t * RANGE_BINS..(t + 1) * RANGE_BINS]);
            }
        }
    }

    #[test]
    fn antenna_gains_scale_linear_amplitude() {
        let rtm = generate_sample(&base_spec(), 13.0, 1).unwrap();
        let peak = |a: usize| {
            let lin = crate::rtm::db_to_linear(rtm.plane(a)).unwrap();
            lin.into_iter().fold(0.0, f64::max) - AMPLITUDE_FLOOR
        };
        let p0 = peak(0);
        assert!((peak(1) / p0 - 0.5).abs() < 1e-6);
        assert!((peak(2) / p0 - 0.25).abs() < 1e-6);
    }

    #[test]
    fn two_hertz_cadence_recovered_at_bin_20() {
        let rtm = generate_sample(&base_spec(), 13.0, 3).unwrap();
        let cvd = extract_cvd(&rtm, &CvdConfig::default()).unwrap();
        assert_eq!(cvd.peak_bin(0), 20);
    }

    #[test]
    fn invalid_specs_rejected() {
        let bad = GestureSpec { cadence_hz: 7.0, ..base_spec() };
        assert!(generate_sample(&bad, 13.0, 0).is_err());
        let bad = GestureSpec { range_center: 250.0, ..base_spec() };
        assert!(generate_sample(&bad, 13.0, 0).is_err());
        let bad = GestureSpec { mod_depth: 1.0, ..base_spec() };
        assert!(generate_sample(&bad, 13.0, 0).is_err());
        assert!(generate_dataset(1, 10, 0).is_err());
    }

    #[test]
    fn datasets_are_reproducible() {
        let a = generate_dataset(3, 4, 42).unwrap();
        let b = generate_dataset(3, 4, 42).unwrap();
        assert_eq!(a, b);
        let c = generate_dataset(3, 4, 43).unwrap();
        assert_ne!(a.samples, c.samples);
    }

    #[test]
    fn dataset_size_and_durations() {
        let ds = generate_dataset(8, 50, 42).unwrap();
        assert_eq!(ds.samples.len(), 400);
        assert!(ds.samples.iter().all(|s| (20..=43).contains(&s.frames())));
        for c in 0..8 {
            let val = (0..400).filter(|&i| ds.specs[i].class_id == c && ds.splits[i] == Split::Val).count();
            assert_eq!(val, 10);
        }
    }

    #[test]
    fn neighbouring_class_cadences_are_separated() {
        // Jitter is ±0.05 Hz, so nominal gaps must exceed 2 bins plus 0.1 Hz.
        let bin = 13.0 / 128.0;
        for layout in [ClassLayout::Mixed, ClassLayout::CadenceDominant] {
            let (c0, _, _) = class_prototype(layout, 0, 2);
            let (c1, _, _) = class_prototype(layout, 1, 2);
            assert!((c1 - c0).abs() - 0.1 >= 2.0 * bin, "{layout:?}");
        }
        let (specs, _) = dataset_specs(2, 10, 9, ClassLayout::Mixed).unwrap();
        let max0 = specs[..10].iter().map(|s| s.cadence_hz).fold(f64::MIN, f64::max);
        let min1 = specs[10..].iter().map(|s| s.cadence_hz).fold(f64::MAX, f64::min);
        assert!((min1 - max0) / bin >= 2.0);
    }
}
