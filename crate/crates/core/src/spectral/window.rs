use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::fft::real_dft_magnitude;
use crate::error::{bail_validation, Result};

/// Minimum 4-term Blackman-Harris coefficients (−92 dB peak sidelobe).
pub const BLACKMAN_HARRIS_4: [f64; 4] = [0.35875, 0.48829, 0.14128, 0.01168];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum WindowKind {
    #[default]
    #[serde(alias = "bh4")]
    BlackmanHarris4Term,
    Hamming,
    #[serde(alias = "rect")]
    Rectangular,
}

impl WindowKind {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "bh4" | "blackman-harris" | "blackman-harris4-term" => Some(Self::BlackmanHarris4Term),
            "hamming" => Some(Self::Hamming),
            "rect" | "rectangular" => Some(Self::Rectangular),
            _ => None,
        }
    }
}

/// Symmetric window of `length` samples (denominator `length − 1`).
pub fn make_window(kind: WindowKind, length: usize) -> Result<Vec<f64>> {
    if length < 2 {
        bail_validation!("window length must be at least 2, got {length}");
    }
    let denom = (length - 1) as f64;
    let w = match kind {
        WindowKind::Rectangular => vec![1.0; length],
        WindowKind::Hamming => (0..length)
            .map(|n| 0.54 - 0.46 * libm::cos(2.0 * PI * n as f64 / denom))
            .collect(),
        WindowKind::BlackmanHarris4Term => {
            let [a0, a1, a2, a3] = BLACKMAN_HARRIS_4;
            (0..length)
                .map(|n| {
                    let x = 2.0 * PI * n as f64 / denom;
                    a0 - a1 * libm::cos(x) + a2 * libm::cos(2.0 * x) - a3 * libm::cos(3.0 * x)
                })
                .collect()
        }
    };
    Ok(w)
}

/// Peak sidelobe of the window's spectrum relative to its mainlobe, in dB.
///
/// The window is zero-padded to at least `length · oversample` points (rounded
/// up to a power of two). The mainlobe ends at the first local minimum of the
/// magnitude spectrum.
pub fn sidelobe_level_db(kind: WindowKind, length: usize, oversample: usize) -> Result<f64> {
    if length < 16 {
        bail_validation!("sidelobe measurement needs length >= 16, got {length}");
    }
    if oversample < 8 {
        bail_validation!("sidelobe measurement needs oversample >= 8, got {oversample}");
    }
    let w = make_window(kind, length)?;
    let n_fft = (length * oversample).next_power_of_two();
    let spectrum = real_dft_magnitude(&w, n_fft)?;
    let peak = spectrum[0];
    let mut edge = 1;
    while edge + 1 < spectrum.len() && spectrum[edge + 1] < spectrum[edge] {
        edge += 1;
    }
    let sidelobe = spectrum[edge..].iter().copied().fold(0.0, f64::max);
    Ok(20.0 * libm::log10(sidelobe / peak))
}
