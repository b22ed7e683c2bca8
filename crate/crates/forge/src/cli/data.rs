use std::io::Write;
use std::path::PathBuf;

use cadence_core::augment::{self, AugmentConfig, Volume};
use cadence_core::rng;
use cadence_core::rtm::{self, DEFAULT_DB_EPS, DEFAULT_FRAME_RATE_HZ};
use cadence_core::spectral::{extract_cvd, harmonic_artifact_ratio, CvdConfig, FftLength, WindowKind};
use cadence_core::synth::{self, ClassLayout};
use clap::{Args, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use super::{create_dir, csv_bytes, write_json, Context, WindowArg};
use crate::config::config_hash;
use crate::dataset::{sample_file, DatasetIndex, SampleEntry, INDEX_FILE};
use crate::error::{invalid, ForgeError, Result};
use crate::formats::{read_file, read_rtm, write_atomic, write_cvd, write_rtm};
use crate::manifest::RunManifest;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LayoutArg {
    Mixed,
    CadenceDominant,
    RangeDominant,
}

impl From<LayoutArg> for ClassLayout {
    fn from(l: LayoutArg) -> Self {
        match l {
            LayoutArg::Mixed => ClassLayout::Mixed,
            LayoutArg::CadenceDominant => ClassLayout::CadenceDominant,
            LayoutArg::RangeDominant => ClassLayout::RangeDominant,
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 8)]
    pub classes: usize,
    #[arg(long, default_value_t = 50)]
    pub per_class: usize,
    #[arg(long, value_enum, default_value_t = LayoutArg::Mixed)]
    pub layout: LayoutArg,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Serialize)]
struct SynthSettings {
    classes: usize,
    per_class: usize,
    layout: ClassLayout,
    seed: u64,
}

pub fn synth(a: &SynthArgs, ctx: &Context) -> Result<()> {
    let mut manifest = RunManifest::start("synth", &ctx.argv, ctx.seed);
    let layout = ClassLayout::from(a.layout);
    let (specs, splits) = synth::dataset_specs(a.classes, a.per_class, ctx.seed, layout)?;
    create_dir(&a.out_dir)?;
    let samples = specs
        .par_iter()
        .enumerate()
        .map(|(i, spec)| {
            let rtm = synth::generate_sample(spec, DEFAULT_FRAME_RATE_HZ, synth::sample_seed(ctx.seed, i))?;
            let file = sample_file(i);
            write_rtm(&a.out_dir.join(&file), &rtm)?;
            Ok(SampleEntry { file, label: spec.class_id, split: splits[i], spec: spec.clone() })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut outputs: Vec<String> = samples.iter().map(|s| s.file.clone()).collect();
    let index = DatasetIndex {
        seed: ctx.seed,
        num_classes: a.classes,
        per_class: a.per_class,
        layout,
        frame_rate_hz: DEFAULT_FRAME_RATE_HZ,
        samples,
    };
    write_json(&a.out_dir, INDEX_FILE, &index, &mut outputs)?;
    manifest.config_hash = config_hash(&SynthSettings { classes: a.classes, per_class: a.per_class, layout, seed: ctx.seed });
    manifest.finish(&a.out_dir, outputs)?;
    println!("wrote {} samples to {}", index.samples.len(), a.out_dir.display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct CvdArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long = "out")]
    pub output: PathBuf,
    /// Run the DFT on dB values directly.
    #[arg(long)]
    pub no_linearize: bool,
    #[arg(long, value_enum, default_value_t = WindowArg::Bh4)]
    pub window: WindowArg,
    /// Zero-padded DFT length (power of two).
    #[arg(long, default_value_t = 128, conflicts_with = "no_zero_pad")]
    pub nfft: usize,
    /// Use the frame count as the DFT length.
    #[arg(long)]
    pub no_zero_pad: bool,
}

pub fn cvd(a: &CvdArgs) -> Result<()> {
    let rtm = read_rtm(&a.input)?;
    let cfg = CvdConfig {
        n_fft: if a.no_zero_pad { FftLength::Frames } else { FftLength::Fixed(a.nfft) },
        window: match a.window {
            WindowArg::Bh4 => WindowKind::BlackmanHarris4Term,
            WindowArg::Hamming => WindowKind::Hamming,
            WindowArg::Rect => WindowKind::Rectangular,
        },
        linearize: !a.no_linearize,
        ..CvdConfig::default()
    };
    let cvd = extract_cvd(&rtm, &cfg)?;
    write_cvd(&a.output, &cvd, rtm.frame_rate_hz)?;
    println!(
        "{} antennas x {} range bins x {} frequency bins, {:.6} Hz per bin",
        cvd.antennas, cvd.range_bins, cvd.freq_bins, cvd.bin_hz
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct ArtifactArgs {
    /// Modulation depths in (0, 1).
    #[arg(long, value_delimiter = ',', default_values_t = [0.2, 0.4, 0.8])]
    pub m: Vec<f64>,
    #[arg(long, default_value_t = 2.0)]
    pub f0: f64,
    #[arg(long, default_value_t = DEFAULT_FRAME_RATE_HZ)]
    pub frame_rate: f64,
    #[arg(long, default_value_t = 39)]
    pub frames: usize,
    /// CSV destination (default: stdout).
    #[arg(long = "out")]
    pub output: Option<PathBuf>,
}

pub fn artifact_demo(a: &ArtifactArgs) -> Result<()> {
    let rows = a
        .m
        .iter()
        .map(|&m| {
            let lin = harmonic_artifact_ratio(m, a.f0, a.frame_rate, a.frames, true)?;
            let db = harmonic_artifact_ratio(m, a.f0, a.frame_rate, a.frames, false)?;
            Ok(vec![m.to_string(), lin.to_string(), db.to_string(), (m / 4.0).to_string()])
        })
        .collect::<Result<Vec<_>>>()?;
    let bytes = csv_bytes(&["m", "ratio_linearized", "ratio_db", "m_over_4"], &rows)?;
    match &a.output {
        Some(p) => write_atomic(p, &bytes),
        None => std::io::stdout().write_all(&bytes).map_err(|e| ForgeError::io("<stdout>", e)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum AugStep {
    TemporalWarp,
    MagnitudeWarp,
    Multipath,
    AntennaDropout,
    SpecAugment,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long = "out")]
    pub output: PathBuf,
    /// Steps applied in order. MixUp and CutMix need a batch and are not offered here.
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [
        AugStep::TemporalWarp, AugStep::MagnitudeWarp, AugStep::Multipath, AugStep::AntennaDropout, AugStep::SpecAugment,
    ])]
    pub chain: Vec<AugStep>,
    /// JSON overrides for the augmentation settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Serialize)]
struct AugmentReport {
    steps: Vec<AugStep>,
    dropped_antenna: Option<usize>,
    masks: Vec<augment::MaskBand>,
}

/// Runs `f` on the volume shifted so its minimum is zero, so zeroed cells
/// land on the map floor instead of 0 dB.
fn on_floor<T>(vol: &mut Volume, f: impl FnOnce(&Volume) -> Result<(Volume, T)>) -> Result<T> {
    let floor = vol.data.iter().copied().fold(f64::INFINITY, f64::min);
    let shifted = Volume { data: vol.data.iter().map(|v| v - floor).collect(), ..vol.clone() };
    let (out, t) = f(&shifted)?;
    vol.data = out.data.iter().map(|v| v + floor).collect();
    Ok(t)
}

pub fn augment(a: &AugmentArgs, ctx: &Context) -> Result<()> {
    let cfg: AugmentConfig = match &a.config {
        Some(p) => {
            let mut v = serde_json::to_value(AugmentConfig::default())?;
            crate::config::merge(&mut v, serde_json::from_slice(&read_file(p)?)?, "")?;
            serde_json::from_value(v)?
        }
        None => AugmentConfig::default(),
    };
    cfg.validate()?;
    if a.chain.is_empty() {
        invalid!("augmentation chain is empty");
    }
    let rtm = read_rtm(&a.input)?;
    let mut vol = Volume::from_rtm(&rtm);
    let mut report = AugmentReport { steps: a.chain.clone(), dropped_antenna: None, masks: Vec::new() };
    for (k, step) in a.chain.iter().enumerate() {
        let seed = rng::mix(ctx.seed, k as u64);
        match step {
            AugStep::TemporalWarp => vol = augment::temporal_warp(&vol, cfg.temporal_warp_sigma, seed)?,
            AugStep::MagnitudeWarp | AugStep::Multipath => {
                let lin = Volume { data: rtm::db_to_linear(&vol.data)?, ..vol.clone() };
                let lin = if *step == AugStep::MagnitudeWarp {
                    augment::magnitude_warp(&lin, cfg.mag_warp_sigma, cfg.mag_warp_knots, seed)?
                } else {
                    augment::random_multipath(&lin, cfg.multipath_max_delay, cfg.multipath_atten, seed)?
                };
                vol.data = rtm::linear_to_db(&lin.data, DEFAULT_DB_EPS)?;
            }
            AugStep::AntennaDropout => {
                let p = cfg.antenna_dropout_p;
                let d = on_floor(&mut vol, |v| Ok(augment::antenna_dropout(v, p, seed)?))?;
                report.dropped_antenna = report.dropped_antenna.or(d);
            }
            AugStep::SpecAugment => {
                let masks = on_floor(&mut vol, |v| {
                    Ok(augment::spec_augment(v, cfg.spec_freq_masks, cfg.spec_time_masks, cfg.spec_max_frac, seed)?)
                })?;
                report.masks.extend(masks);
            }
        }
    }
    write_rtm(&a.output, &rtm.with_data(vol.data)?)?;
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}
