use alloc::vec::Vec;
use core::f64::consts::PI;

use super::cvd::cadence_spectrum;
use super::window::{make_window, WindowKind};
use crate::error::{bail_validation, Result};

/// Second-harmonic to fundamental magnitude ratio of a dB-compressed
/// amplitude modulation `A(1 + m·cos(2π f0 t))`, A = 1.
///
/// The series runs through the same window/DFT path as [`super::extract_cvd`],
/// either after dB-to-linear inversion (`linearize`) or directly on the dB
/// values. Returns `|X(2 f0)| / |X(f0)|` in linear units, reading the bins
/// nearest each frequency.
pub fn harmonic_artifact_ratio(m: f64, f0_hz: f64, frame_rate: f64, frames: usize, linearize: bool) -> Result<f64> {
    if !(m > 0.0 && m < 1.0) {
        bail_validation!("modulation depth must lie in (0, 1), got {m}");
    }
    if !(f0_hz > 0.0 && frame_rate > 0.0) {
        bail_validation!("frequencies must be positive");
    }
    if 2.0 * f0_hz >= frame_rate / 2.0 {
        bail_validation!("second harmonic {} Hz is at or above Nyquist {} Hz", 2.0 * f0_hz, frame_rate / 2.0);
    }
    let cycles = frames as f64 * f0_hz / frame_rate;
    if cycles < 4.0 {
        bail_validation!("{frames} frames hold only {cycles:.2} cycles of {f0_hz} Hz; need 4");
    }

    let n_fft = frames.next_power_of_two().max(128);
    let window = make_window(WindowKind::BlackmanHarris4Term, frames)?;
    let series: Vec<f64> = (0..frames)
        .map(|n| {
            let amp = 1.0 + m * libm::cos(2.0 * PI * f0_hz * n as f64 / frame_rate);
            let db = 20.0 * libm::log10(amp);
            if linearize {
                libm::pow(10.0, db / 20.0)
            } else {
                db
            }
        })
        .collect();
    let mag = cadence_spectrum(&series, &window, n_fft, true)?;
    let bin = |f: f64| libm::round(f * n_fft as f64 / frame_rate) as usize;
    Ok(mag[bin(2.0 * f0_hz)] / mag[bin(f0_hz)])
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Exact Fourier series of ln(1 + m cos θ): the n-th harmonic has
    /// amplitude 2 rⁿ/n with r = m / (1 + √(1 − m²)), so the 2nd/1st ratio is r/2.
    fn log_series_ratio(m: f64) -> f64 {
        m / (1.0 + libm::sqrt(1.0 - m * m)) / 2.0
    }

    #[test]
    fn linearized_path_has_no_second_harmonic() {
        for m in [0.1, 0.2, 0.4, 0.8] {
            let r = harmonic_artifact_ratio(m, 2.0, 13.0, 39, true).unwrap();
            assert!(r <= 0.01, "m = {m}: {r}");
        }
    }

    #[test]
    fn db_path_follows_the_log_series() {
        for m in [0.1, 0.2, 0.4, 0.8] {
            let r = harmonic_artifact_ratio(m, 2.0, 13.0, 39, false).unwrap();
            let exact = log_series_ratio(m);
            assert!(((r - exact) / exact).abs() < 0.02, "m = {m}: {r} vs {exact}");
        }
    }

    #[test]
    fn db_path_near_quarter_depth_for_moderate_modulation() {
        let r = harmonic_artifact_ratio(0.4, 2.0, 13.0, 39, false).unwrap();
        assert!(((r - 0.1) / 0.1).abs() <= 0.2, "{r}");
    }

    #[test]
    fn linearization_always_reduces_the_artifact() {
        for m in [0.1, 0.2, 0.4, 0.8] {
            let lin = harmonic_artifact_ratio(m, 2.0, 13.0, 39, true).unwrap();
            let db = harmonic_artifact_ratio(m, 2.0, 13.0, 39, false).unwrap();
            assert!(lin < db);
        }
    }

    #[test]
    fn vanishing_modulation_vanishing_artifact() {
        let r = harmonic_artifact_ratio(1e-4, 2.0, 13.0, 39, false).unwrap();
        assert!(r < 1e-4);
    }

    #[test]
    fn rejects_out_of_range_parameters() {
        assert!(harmonic_artifact_ratio(0.4, 3.5, 13.0, 80, false).is_err());
        assert!(harmonic_artifact_ratio(1.2, 2.0, 13.0, 39, false).is_err());
        assert!(harmonic_artifact_ratio(0.4, 2.0, 13.0, 20, false).is_err());
    }

    fn ratio_of(series: &[f64]) -> f64 {
        let w = make_window(WindowKind::BlackmanHarris4Term, series.len()).unwrap();
        let mag = cadence_spectrum(series, &w, 128, true).unwrap();
        // 2 Hz at 13 Hz frame rate and 128 points: bins 20 and 39
        mag[39] / mag[20]
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(48))]
        #[test]
        fn amplitude_scale_leaves_harmonic_ratio_unchanged(m in 0.05f64..0.9, gain in 0.01f64..100.0) {
            let base: Vec<f64> = (0..39).map(|n| 1.0 + m * libm::cos(2.0 * PI * 2.0 * n as f64 / 13.0)).collect();
            let scaled: Vec<f64> = base.iter().map(|a| gain * a).collect();
            let to_db = |v: &[f64]| v.iter().map(|a| 20.0 * libm::log10(*a)).collect::<Vec<_>>();
            let (r_lin, r_lin_scaled) = (ratio_of(&base), ratio_of(&scaled));
            proptest::prop_assert!((r_lin - r_lin_scaled).abs() <= 1e-9 * r_lin.max(1e-12));
            let (r_db, r_db_scaled) = (ratio_of(&to_db(&base)), ratio_of(&to_db(&scaled)));
            proptest::prop_assert!((r_db - r_db_scaled).abs() <= 1e-9 * r_db);
        }
    }
}
