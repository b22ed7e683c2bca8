//! Slow-time spectral analysis: windows, DFT magnitudes and cadence velocity
//! diagrams.

mod artifact;
mod cvd;
mod fft;
mod window;

pub use artifact::harmonic_artifact_ratio;
pub use cvd::{cadence_spectrum, extract_cvd, CadenceVelocityDiagram, CvdConfig, FftLength};
pub use fft::{dft_naive, fft_in_place, real_dft_magnitude};
pub use window::{make_window, sidelobe_level_db, WindowKind, BLACKMAN_HARRIS_4};
