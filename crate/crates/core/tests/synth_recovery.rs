use cadence_core::spectral::{extract_cvd, CvdConfig};
use cadence_core::synth::{generate_sample, GestureSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FS: f64 = 13.0;

fn random_spec(rng: &mut ChaCha8Rng, cycles: (f64, f64)) -> GestureSpec {
    let duration_frames = rng.random_range(20..=43usize);
    let want = rng.random_range(cycles.0..cycles.1);
    let cadence_hz = (want * FS / duration_frames as f64).min(4.0);
    GestureSpec {
        class_id: 0,
        cadence_hz,
        mod_depth: rng.random_range(0.3..0.9),
        range_center: rng.random_range(60.0..190.0),
        range_width: rng.random_range(5.0..9.0),
        range_drift: rng.random_range(-0.15..0.15),
        duration_frames,
        antenna_gains: [1.0, rng.random_range(0.3..1.0), rng.random_range(0.3..1.0)],
        torso_amp_db: Some(rng.random_range(-6.0..0.0)),
        noise_db: None,
    }
}

fn recovered(spec: &GestureSpec, seed: u64) -> bool {
    let rtm = generate_sample(spec, FS, seed).unwrap();
    let cvd = extract_cvd(&rtm, &CvdConfig::default()).unwrap();
    let expected = (spec.cadence_hz * 128.0 / FS).round() as i64;
    (cvd.peak_bin(0) as i64 - expected).abs() <= 1
}

fn recovery_rate(cycles: (f64, f64), seed: u64, n: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hits = (0..n)
        .filter(|&i| {
            let spec = random_spec(&mut rng, cycles);
            recovered(&spec, i as u64)
        })
        .count();
    hits as f64 / n as f64
}

#[test]
fn cadence_recovered_with_two_or_more_cycles() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for i in 0..200 {
        let spec = random_spec(&mut rng, (2.0, 13.0));
        assert!(spec.cycles(FS) >= 2.0);
        assert!(recovered(&spec, i), "{spec:?}");
    }
}

#[test]
fn short_gestures_lose_the_cadence_peak() {
    let long = recovery_rate((2.0, 4.0), 17, 200);
    let short = recovery_rate((0.6, 1.4), 17, 200);
    println!("recovery: >=2 cycles {long:.3}, <2 cycles {short:.3}");
    assert!(short < long);
}
