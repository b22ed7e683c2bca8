use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::fft::real_dft_magnitude;
use super::window::{make_window, WindowKind};
use crate::error::{bail_validation, Result};
use crate::rtm::{RangeTimeMap, DEFAULT_DB_EPS};

/// DFT length along slow time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FftLength {
    /// Zero-pad every series to this many points (a power of two).
    Fixed(usize),
    /// No zero-padding: the DFT length equals the frame count.
    Frames,
}

impl FftLength {
    pub fn resolve(self, frames: usize) -> usize {
        match self {
            FftLength::Fixed(n) => n,
            FftLength::Frames => frames,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CvdConfig {
    pub n_fft: FftLength,
    pub window: WindowKind,
    /// Remove the zero-frequency component before the DFT and drop bin 0.
    pub discard_dc: bool,
    pub eps: f64,
    /// Convert dB to linear amplitude before the DFT.
    pub linearize: bool,
}

impl Default for CvdConfig {
    fn default() -> Self {
        Self {
            n_fft: FftLength::Fixed(128),
            window: WindowKind::BlackmanHarris4Term,
            discard_dc: true,
            eps: DEFAULT_DB_EPS,
            linearize: true,
        }
    }
}

impl CvdConfig {
    fn validate(&self, frames: usize) -> Result<usize> {
        if frames < 2 {
            bail_validation!("cadence analysis needs at least 2 frames, got {frames}");
        }
        let n_fft = self.n_fft.resolve(frames);
        if let FftLength::Fixed(n) = self.n_fft {
            if !n.is_power_of_two() {
                bail_validation!("n_fft must be a power of two, got {n}");
            }
        }
        if frames > n_fft {
            bail_validation!("{frames} frames exceed n_fft = {n_fft}");
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            bail_validation!("eps must be positive, got {}", self.eps);
        }
        Ok(n_fft)
    }

    /// Number of frequency bins kept for a series of `frames` samples.
    pub fn freq_bins(&self, frames: usize) -> usize {
        let n = self.n_fft.resolve(frames);
        if self.discard_dc {
            n / 2
        } else {
            n / 2 + 1
        }
    }
}

/// Range × cadence-frequency magnitude (dB) per antenna.
///
/// `data` is laid out `[antenna][range_bin][freq_bin]`; frequency bin `j`
/// sits at `(j + first_bin) · bin_hz` where `first_bin` is 1 when DC is discarded.
#[derive(Debug, Clone, PartialEq)]
pub struct CadenceVelocityDiagram {
    pub antennas: usize,
    pub range_bins: usize,
    pub freq_bins: usize,
    pub bin_hz: f64,
    pub first_bin: usize,
    pub data: Vec<f64>,
    pub label: Option<usize>,
}

impl CadenceVelocityDiagram {
    pub fn plane(&self, antenna: usize) -> &[f64] {
        let n = self.range_bins * self.freq_bins;
        &self.data[antenna * n..(antenna + 1) * n]
    }

    pub fn at(&self, antenna: usize, range_bin: usize, freq_bin: usize) -> f64 {
        self.data[(antenna * self.range_bins + range_bin) * self.freq_bins + freq_bin]
    }

    /// Centre frequency of stored bin `j`.
    pub fn frequency_hz(&self, j: usize) -> f64 {
        (j + self.first_bin) as f64 * self.bin_hz
    }

    /// Highest-magnitude stored bin of one antenna, over all range bins.
    pub fn peak_bin(&self, antenna: usize) -> usize {
        let plane = self.plane(antenna);
        let (idx, _) = plane
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best });
        idx % self.freq_bins + self.first_bin
    }
}

/// Linear DFT magnitudes of one slow-time series, bins `0..=n_fft/2`.
///
/// The series is windowed over its own length and zero-padded. With
/// `discard_dc` the window-weighted mean is subtracted first, so bin 0 of
/// the windowed series is exactly zero and the static return leaves no
/// leakage in the low bins.
pub fn cadence_spectrum(series: &[f64], window: &[f64], n_fft: usize, discard_dc: bool) -> Result<Vec<f64>> {
    debug_assert_eq!(series.len(), window.len());
    let offset = if discard_dc {
        let wsum: f64 = window.iter().sum();
        series.iter().zip(window).map(|(x, w)| x * w).sum::<f64>() / wsum
    } else {
        0.0
    };
    let windowed: Vec<f64> = series.iter().zip(window).map(|(x, w)| (x - offset) * w).collect();
    real_dft_magnitude(&windowed, n_fft)
}

/// Cadence velocity diagram of every antenna and range bin.
pub fn extract_cvd(rtm: &RangeTimeMap, cfg: &CvdConfig) -> Result<CadenceVelocityDiagram> {
    let frames = rtm.frames();
    let n_fft = cfg.validate(frames)?;
    let window = make_window(cfg.window, frames)?;
    let bins = rtm.range_bins();
    let first_bin = usize::from(cfg.discard_dc);
    let freq_bins = cfg.freq_bins(frames);

    let mut data = Vec::with_capacity(rtm.antennas() * bins * freq_bins);
    let mut series = alloc::vec![0.0; frames];
    for a in 0..rtm.antennas() {
        let plane = rtm.plane(a);
        for r in 0..bins {
            for (t, s) in series.iter_mut().enumerate() {
                let v = plane[t * bins + r];
                *s = if cfg.linearize { libm::pow(10.0, v / 20.0) } else { v };
            }
            let mag = cadence_spectrum(&series, &window, n_fft, cfg.discard_dc)?;
            data.extend(
                mag[first_bin..first_bin + freq_bins]
                    .iter()
                    .map(|&m| 20.0 * libm::log10(m + cfg.eps)),
            );
        }
    }
    Ok(CadenceVelocityDiagram {
        antennas: rtm.antennas(),
        range_bins: bins,
        freq_bins,
        bin_hz: rtm.frame_rate_hz / n_fft as f64,
        first_bin,
        data,
        label: rtm.label,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use core::f64::consts::PI;

    fn modulated(frames: usize, bins: usize, f0: f64, m: f64, fs: f64, hot_bin: usize) -> RangeTimeMap {
        let mut data = Vec::new();
        for _ in 0..3 {
            for t in 0..frames {
                for r in 0..bins {
                    let amp = if r == hot_bin {
                        1.0 + m * libm::cos(2.0 * PI * f0 * t as f64 / fs)
                    } else {
                        0.01
                    };
                    data.push(20.0 * libm::log10(amp));
                }
            }
        }
        RangeTimeMap::new(3, frames, bins, data, fs, Some(1)).unwrap()
    }

    #[test]
    fn dataset_shaped_input_gives_256_by_64() {
        let rtm = RangeTimeMap::new(3, 30, 256, vec![-30.0; 3 * 30 * 256], 13.0, None).unwrap();
        let cvd = extract_cvd(&rtm, &CvdConfig::default()).unwrap();
        assert_eq!((cvd.antennas, cvd.range_bins, cvd.freq_bins), (3, 256, 64));
        assert_eq!(cvd.data.len(), 3 * 256 * 64);
        assert!((cvd.bin_hz - 13.0 / 128.0).abs() < 1e-12);
        assert!(cvd.frequency_hz(cvd.freq_bins - 1) <= 6.5 + 1e-12);
        assert!(cvd.data.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn static_target_sits_at_the_eps_floor() {
        let rtm = RangeTimeMap::new(3, 30, 8, vec![-12.5; 3 * 30 * 8], 13.0, None).unwrap();
        let cvd = extract_cvd(&rtm, &CvdConfig::default()).unwrap();
        for v in &cvd.data {
            assert!((v + 200.0).abs() < 1.0, "{v}");
        }
    }

    #[test]
    fn two_hertz_cadence_peaks_at_bin_20() {
        let rtm = modulated(39, 16, 2.0, 0.5, 13.0, 5);
        let cvd = extract_cvd(&rtm, &CvdConfig::default()).unwrap();
        for a in 0..3 {
            assert_eq!(cvd.peak_bin(a), 20);
        }
    }

    #[test]
    fn dc_kept_when_requested() {
        let rtm = modulated(39, 4, 2.0, 0.5, 13.0, 1);
        let cfg = CvdConfig { discard_dc: false, ..CvdConfig::default() };
        let cvd = extract_cvd(&rtm, &cfg).unwrap();
        assert_eq!(cvd.freq_bins, 65);
        assert_eq!(cvd.first_bin, 0);
    }

    #[test]
    fn frame_length_dft_without_padding() {
        let rtm = modulated(39, 4, 2.0, 0.5, 13.0, 1);
        let cfg = CvdConfig { n_fft: FftLength::Frames, ..CvdConfig::default() };
        let cvd = extract_cvd(&rtm, &cfg).unwrap();
        assert_eq!(cvd.freq_bins, 19);
        assert!((cvd.bin_hz - 13.0 / 39.0).abs() < 1e-12);
        // 2 Hz at 1/3 Hz spacing is bin 6.
        assert_eq!(cvd.peak_bin(0), 6);
    }

    #[test]
    fn rejects_invalid_configs() {
        let rtm = modulated(39, 4, 2.0, 0.5, 13.0, 1);
        let short = CvdConfig { n_fft: FftLength::Fixed(32), ..CvdConfig::default() };
        assert!(extract_cvd(&rtm, &short).is_err());
        let odd = CvdConfig { n_fft: FftLength::Fixed(100), ..CvdConfig::default() };
        assert!(extract_cvd(&rtm, &odd).is_err());
    }

    #[test]
    fn padding_keeps_on_bin_tone_peak() {
        // 32 frames, tone exactly on bin 4 of a 32-point DFT -> bin 16 of 128.
        let fs = 13.0;
        let f0 = 4.0 * fs / 32.0;
        let rtm = modulated(32, 4, f0, 0.5, fs, 2);
        let unpadded = extract_cvd(&rtm, &CvdConfig { n_fft: FftLength::Fixed(32), ..CvdConfig::default() }).unwrap();
        let padded = extract_cvd(&rtm, &CvdConfig::default()).unwrap();
        assert_eq!(unpadded.peak_bin(0), 4);
        assert_eq!(padded.peak_bin(0), 16);
        assert!((unpadded.frequency_hz(unpadded.peak_bin(0) - 1) - padded.frequency_hz(padded.peak_bin(0) - 1)).abs() < 1e-12);
    }
}
