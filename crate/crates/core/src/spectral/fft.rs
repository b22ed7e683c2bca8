use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::{bail_validation, Result};

/// In-place iterative radix-2 FFT. `re.len()` must be a power of two.
pub fn fft_in_place(re: &mut [f64], im: &mut [f64]) {
    let n = re.len();
    debug_assert!(n.is_power_of_two() && im.len() == n);
    if n < 2 {
        return;
    }
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            re.swap(i, j);
            im.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let step = -2.0 * PI / len as f64;
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let (s, c) = libm::sincos(step * k as f64);
                let (a, b) = (start + k, start + k + half);
                let tr = re[b] * c - im[b] * s;
                let ti = re[b] * s + im[b] * c;
                re[b] = re[a] - tr;
                im[b] = im[a] - ti;
                re[a] += tr;
                im[a] += ti;
            }
        }
        len <<= 1;
    }
}

/// Direct O(N·K) DFT of a real signal zero-padded to `n_fft`, for bins `0..=n_fft/2`.
pub fn dft_naive(signal: &[f64], n_fft: usize) -> Vec<(f64, f64)> {
    (0..=n_fft / 2)
        .map(|k| {
            signal.iter().enumerate().fold((0.0, 0.0), |(re, im), (n, &x)| {
                // Reduce k·n mod n_fft first to keep the phase argument small.
                let phase = -2.0 * PI * ((k * n) % n_fft) as f64 / n_fft as f64;
                let (s, c) = libm::sincos(phase);
                (re + x * c, im + x * s)
            })
        })
        .collect()
}

/// `|Σ x[n]·e^{−j2πkn/n_fft}|` for `k = 0..=n_fft/2`; `signal` is zero-padded.
///
/// Power-of-two lengths use the radix-2 FFT, anything else the direct sum.
pub fn real_dft_magnitude(signal: &[f64], n_fft: usize) -> Result<Vec<f64>> {
    if n_fft == 0 || signal.len() > n_fft {
        bail_validation!("signal of length {} does not fit n_fft = {n_fft}", signal.len());
    }
    if !n_fft.is_power_of_two() {
        return Ok(dft_naive(signal, n_fft)
            .into_iter()
            .map(|(re, im)| libm::hypot(re, im))
            .collect());
    }
    let mut re = vec![0.0; n_fft];
    let mut im = vec![0.0; n_fft];
    re[..signal.len()].copy_from_slice(signal);
    fft_in_place(&mut re, &mut im);
    Ok((0..=n_fft / 2).map(|k| libm::hypot(re[k], im[k])).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn dc_only_signal() {
        let mag = real_dft_magnitude(&[1.0; 4], 4).unwrap();
        assert_eq!(mag.len(), 3);
        assert!((mag[0] - 4.0).abs() < 1e-12);
        assert!(mag[1].abs() < 1e-12 && mag[2].abs() < 1e-12);
    }

    #[test]
    fn pure_tone_lands_on_its_bin() {
        let x: Vec<f64> = (0..32).map(|n| libm::cos(2.0 * PI * n as f64 * 8.0 / 32.0)).collect();
        let mag = real_dft_magnitude(&x, 32).unwrap();
        for (k, m) in mag.iter().enumerate() {
            if k == 8 {
                assert!((m - 16.0).abs() < 1e-9);
            } else {
                assert!(*m <= 1e-9, "bin {k}: {m}");
            }
        }
    }

    #[test]
    fn fft_matches_direct_sum() {
        let mut r = rng::seeded(7);
        for &(len, n_fft) in &[(16, 128), (5, 8), (43, 64), (128, 128)] {
            let x: Vec<f64> = (0..len).map(|_| rng::normal(&mut r)).collect();
            let fast = real_dft_magnitude(&x, n_fft).unwrap();
            let slow = dft_naive(&x, n_fft);
            for (f, (re, im)) in fast.iter().zip(slow) {
                let s = libm::hypot(re, im);
                assert!((f - s).abs() <= 1e-9 * s.max(1.0), "{f} vs {s}");
            }
        }
    }

    #[test]
    fn non_power_of_two_falls_back_to_direct_sum() {
        let x = [1.0, -2.0, 0.5, 3.0, 0.0, 1.0, 1.0];
        let mag = real_dft_magnitude(&x, 7).unwrap();
        assert_eq!(mag.len(), 4);
        assert!((mag[0] - 4.5).abs() < 1e-12);
    }

    #[test]
    fn parseval_with_rectangular_window() {
        let mut r = rng::seeded(11);
        let n = 64;
        let x: Vec<f64> = (0..n).map(|_| rng::normal(&mut r)).collect();
        let mag = real_dft_magnitude(&x, n).unwrap();
        let mut spectral = mag[0] * mag[0] + mag[n / 2] * mag[n / 2];
        spectral += 2.0 * mag[1..n / 2].iter().map(|m| m * m).sum::<f64>();
        let temporal = n as f64 * x.iter().map(|v| v * v).sum::<f64>();
        assert!(((spectral - temporal) / temporal).abs() < 1e-6);
    }

    #[test]
    fn oversized_signal_rejected() {
        assert!(real_dft_magnitude(&[0.0; 9], 8).is_err());
    }
}
