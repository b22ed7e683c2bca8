//! Range-time maps and the preprocessing shared by both network streams.

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{bail_shape, bail_validation, Result};

/// Receive antennas on the sensor (two azimuth, one elevation).
pub const ANTENNAS: usize = 3;
/// Range bins per frame in dataset-conformant samples.
pub const RANGE_BINS: usize = 256;
pub const DEFAULT_FRAME_RATE_HZ: f64 = 13.0;
/// Frame-count bounds for dataset-conformant samples.
pub const MIN_FRAMES: usize = 20;
pub const MAX_FRAMES: usize = 43;
/// Floor added before taking logarithms of magnitudes.
pub const DEFAULT_DB_EPS: f64 = 1e-10;

/// One gesture: per-antenna amplitude dB over slow time × range.
///
/// `data` is laid out antenna-major, then frame, then range bin.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeTimeMap {
    antennas: usize,
    frames: usize,
    range_bins: usize,
    data: Vec<f64>,
    pub frame_rate_hz: f64,
    pub label: Option<usize>,
}

impl RangeTimeMap {
    pub fn new(
        antennas: usize,
        frames: usize,
        range_bins: usize,
        data: Vec<f64>,
        frame_rate_hz: f64,
        label: Option<usize>,
    ) -> Result<Self> {
        if antennas != ANTENNAS {
            bail_validation!("expected {ANTENNAS} antennas, got {antennas}");
        }
        if frames < 2 || range_bins < 1 {
            bail_validation!("need at least 2 frames and 1 range bin, got {frames}x{range_bins}");
        }
        if data.len() != antennas * frames * range_bins {
            bail_shape!(
                "data length {} does not match {antennas}x{frames}x{range_bins}",
                data.len()
            );
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            bail_validation!("non-finite value at flat index {i}");
        }
        if !(frame_rate_hz.is_finite() && frame_rate_hz > 0.0) {
            bail_validation!("frame rate must be positive, got {frame_rate_hz}");
        }
        Ok(Self { antennas, frames, range_bins, data, frame_rate_hz, label })
    }

    pub fn antennas(&self) -> usize {
        self.antennas
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn range_bins(&self) -> usize {
        self.range_bins
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Replaces the samples, keeping the geometry. Non-finite values are rejected.
    pub fn with_data(&self, data: Vec<f64>) -> Result<Self> {
        Self::new(self.antennas, self.frames, self.range_bins, data, self.frame_rate_hz, self.label)
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// The `frames × range_bins` plane of one antenna.
    pub fn plane(&self, antenna: usize) -> &[f64] {
        let n = self.frames * self.range_bins;
        &self.data[antenna * n..(antenna + 1) * n]
    }

    #[inline]
    pub fn at(&self, antenna: usize, frame: usize, bin: usize) -> f64 {
        self.data[(antenna * self.frames + frame) * self.range_bins + bin]
    }

    /// Within the frame/range envelope of the public dataset.
    pub fn is_dataset_conformant(&self) -> bool {
        self.range_bins == RANGE_BINS && (MIN_FRAMES..=MAX_FRAMES).contains(&self.frames)
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub t_max: usize,
    pub spatial_size: usize,
    pub normalize_to_unit: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self { t_max: 48, spatial_size: 224, normalize_to_unit: true }
    }
}

/// Amplitude dB to linear: `10^(x/20)`.
pub fn db_to_linear(x: &[f64]) -> Result<Vec<f64>> {
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        bail_validation!("non-finite dB value at index {i}");
    }
    Ok(x.iter().map(|&v| Float::powf(10.0, v / 20.0)).collect())
}

/// Linear amplitude to dB: `20·log10(x + eps)`.
pub fn linear_to_db(x: &[f64], eps: f64) -> Result<Vec<f64>> {
    if !(eps > 0.0 && eps.is_finite()) {
        bail_validation!("eps must be positive and finite, got {eps}");
    }
    if let Some(i) = x.iter().position(|v| !(*v >= 0.0) || !v.is_finite()) {
        bail_validation!("linear magnitude must be finite and non-negative, got {} at {i}", x[i]);
    }
    Ok(x.iter().map(|&v| 20.0 * Float::log10(v + eps)).collect())
}

/// Joint min-max scaling of all antennas to `[0, 1]`.
///
/// A constant map has no scale; it comes back as zeros with the second
/// element set to `true`.
pub fn normalize_unit(rtm: &RangeTimeMap) -> (RangeTimeMap, bool) {
    let (data, degenerate) = normalize_slice(rtm.data());
    let out = RangeTimeMap { data, ..rtm.clone() };
    (out, degenerate)
}

pub(crate) fn normalize_slice(x: &[f64]) -> (Vec<f64>, bool) {
    let (lo, hi) = x
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !(hi > lo) {
        return (vec![0.0; x.len()], true);
    }
    let span = hi - lo;
    (x.iter().map(|&v| ((v - lo) / span).clamp(0.0, 1.0)).collect(), false)
}

/// Bilinear resize of a row-major `h × w` plane (half-pixel centres, edge clamped).
pub fn resize_bilinear(src: &[f64], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    debug_assert_eq!(src.len(), h * w);
    let rows = axis_taps(h, out_h);
    let cols = axis_taps(w, out_w);
    let mut out = Vec::with_capacity(out_h * out_w);
    for &(r0, r1, fr) in &rows {
        for &(c0, c1, fc) in &cols {
            let top = src[r0 * w + c0] * (1.0 - fc) + src[r0 * w + c1] * fc;
            let bottom = src[r1 * w + c0] * (1.0 - fc) + src[r1 * w + c1] * fc;
            out.push(top * (1.0 - fr) + bottom * fr);
        }
    }
    out
}

fn axis_taps(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64)> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|i| {
            let pos = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (pos.floor() as usize).min(n_in - 1);
            let i1 = (i0 + 1).min(n_in - 1);
            let frac = if i1 == i0 { 0.0 } else { pos - i0 as f64 };
            (i0, i1, frac)
        })
        .collect()
}

/// Zero-pads slow time to `t_max` (after the gesture) and resizes every
/// antenna plane to `spatial_size × spatial_size`. Output is `[3, S, S]`.
pub fn pad_and_resize(rtm: &RangeTimeMap, cfg: &PreprocessConfig) -> Result<Vec<f64>> {
    let t = rtm.frames();
    if t > cfg.t_max {
        bail_validation!("{t} frames exceed t_max = {}", cfg.t_max);
    }
    if cfg.spatial_size == 0 {
        bail_validation!("spatial_size must be at least 1");
    }
    let r = rtm.range_bins();
    let s = cfg.spatial_size;
    let mut out = Vec::with_capacity(rtm.antennas() * s * s);
    let mut padded = vec![0.0; cfg.t_max * r];
    for a in 0..rtm.antennas() {
        padded[..t * r].copy_from_slice(rtm.plane(a));
        padded[t * r..].iter_mut().for_each(|v| *v = 0.0);
        out.extend(resize_bilinear(&padded, cfg.t_max, r, s, s));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rtm_from(frames: usize, bins: usize, f: impl Fn(usize, usize, usize) -> f64) -> RangeTimeMap {
        let mut data = Vec::new();
        for a in 0..3 {
            for t in 0..frames {
                for r in 0..bins {
                    data.push(f(a, t, r));
                }
            }
        }
        RangeTimeMap::new(3, frames, bins, data, 13.0, None).unwrap()
    }

    #[test]
    fn db_conversion_examples() {
        let y = db_to_linear(&[0.0, -20.0, 6.0206]).unwrap();
        assert_eq!(y[0], 1.0);
        assert!((y[1] - 0.1).abs() < 1e-15);
        assert!((y[2] - 2.0).abs() < 1e-4);

        let d = linear_to_db(&[1.0, 0.0], 1e-10).unwrap();
        assert!(d[0].abs() < 1e-8);
        assert!((d[1] + 200.0).abs() < 1e-9);
    }

    #[test]
    fn db_round_trip_offset_by_eps() {
        // 20·log10(10^(-2) + 1e-10): the eps floor shifts -40 dB by 20/ln10 · 1e-8 ≈ 8.7e-8 dB.
        let back = linear_to_db(&db_to_linear(&[-40.0]).unwrap(), 1e-10).unwrap()[0];
        let expected = -40.0 + 20.0 * libm::log10(1.0 + 1e-10 / 1e-2);
        assert!((back - expected).abs() < 1e-12);
        assert!((back + 39.99999).abs() < 1e-4);
    }

    #[test]
    fn conversions_reject_bad_input() {
        assert!(db_to_linear(&[f64::NAN]).is_err());
        assert!(db_to_linear(&[f64::INFINITY]).is_err());
        assert!(linear_to_db(&[-1.0], 1e-10).is_err());
        assert!(linear_to_db(&[1.0], 0.0).is_err());
    }

    #[test]
    fn constructor_validates() {
        assert!(RangeTimeMap::new(2, 4, 4, vec![0.0; 32], 13.0, None).is_err());
        assert!(RangeTimeMap::new(3, 4, 4, vec![0.0; 47], 13.0, None).is_err());
        let mut d = vec![0.0; 48];
        d[7] = f64::NAN;
        assert!(RangeTimeMap::new(3, 4, 4, d, 13.0, None).is_err());
    }

    #[test]
    fn normalize_examples() {
        let rtm = rtm_from(4, 8, |a, t, r| -60.0 + 60.0 * ((a + t + r) as f64) / 12.0);
        let (n, degenerate) = normalize_unit(&rtm);
        assert!(!degenerate);
        let (lo, hi) = n.min_max();
        assert_eq!((lo, hi), (0.0, 1.0));

        let (again, _) = normalize_unit(&n);
        for (x, y) in again.data().iter().zip(n.data()) {
            assert!((x - y).abs() < 1e-7);
        }

        let flat = rtm_from(4, 8, |_, _, _| -12.0);
        let (z, degenerate) = normalize_unit(&flat);
        assert!(degenerate);
        assert!(z.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pad_and_resize_shapes() {
        let rtm = rtm_from(30, 256, |a, t, r| (a * 7 + t + r) as f64 * 0.01);
        let out = pad_and_resize(&rtm, &PreprocessConfig::default()).unwrap();
        assert_eq!(out.len(), 3 * 224 * 224);

        let zeros = rtm_from(30, 256, |_, _, _| 0.0);
        assert!(pad_and_resize(&zeros, &PreprocessConfig::default()).unwrap().iter().all(|&v| v == 0.0));

        let long = rtm_from(50, 16, |_, _, _| 1.0);
        assert!(pad_and_resize(&long, &PreprocessConfig::default()).is_err());
    }

    #[test]
    fn resize_is_identity_at_equal_size() {
        let rtm = rtm_from(16, 16, |a, t, r| (a as f64) - (t as f64) * 0.3 + libm::sin(r as f64));
        let cfg = PreprocessConfig { t_max: 16, spatial_size: 16, normalize_to_unit: false };
        let out = pad_and_resize(&rtm, &cfg).unwrap();
        for (x, y) in out.iter().zip(rtm.data()) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn padding_goes_after_the_gesture() {
        let rtm = rtm_from(2, 1, |_, _, _| 1.0);
        let cfg = PreprocessConfig { t_max: 4, spatial_size: 4, normalize_to_unit: false };
        let out = pad_and_resize(&rtm, &cfg).unwrap();
        // The first rows sample the gesture, the last row samples the padding.
        assert_eq!(out[0], 1.0);
        assert_eq!(out[3 * 4], 0.0);
    }

    proptest! {
        #[test]
        fn linearization_inverts_compression(x in 1e-6f64..1e3) {
            let eps = 1e-10;
            let y = db_to_linear(&linear_to_db(&[x], eps).unwrap()).unwrap()[0];
            prop_assert!(((y - (x + eps)) / (x + eps)).abs() < 1e-9);
        }

        #[test]
        fn db_to_linear_is_monotone(a in -150.0f64..150.0, b in -150.0f64..150.0) {
            prop_assume!(a != b);
            let y = db_to_linear(&[a, b]).unwrap();
            prop_assert_eq!(a < b, y[0] < y[1]);
        }

        #[test]
        fn resize_is_linear(scale in -5.0f64..5.0, seed in 0u64..1000) {
            let mut rng = crate::rng::seeded(seed);
            let src: Vec<f64> = (0..7 * 11).map(|_| crate::rng::normal(&mut rng)).collect();
            let scaled: Vec<f64> = src.iter().map(|v| v * scale).collect();
            let a = resize_bilinear(&src, 7, 11, 5, 9);
            let b = resize_bilinear(&scaled, 7, 11, 5, 9);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x * scale - y).abs() < 1e-6);
            }
        }

        #[test]
        fn normalized_values_stay_in_unit_interval(seed in 0u64..1000) {
            let mut rng = crate::rng::seeded(seed);
            let rtm = rtm_from(5, 6, |_, _, _| 0.0);
            let data: Vec<f64> = (0..rtm.data().len()).map(|_| 40.0 * crate::rng::normal(&mut rng)).collect();
            let (n, _) = normalize_unit(&rtm.with_data(data).unwrap());
            prop_assert!(n.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
