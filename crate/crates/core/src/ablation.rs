//! Registry of single-change experiment variants.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{EncoderKind, FusionKind, Streams};
use crate::spectral::{FftLength, WindowKind};
use crate::train::ExperimentConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VariantGroup {
    Reference,
    CvdExtraction,
    Casa,
    Fusion,
    Training,
    Encoders,
}

/// One row of the ablation table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Variant {
    /// Stable identifier used on the command line.
    pub slug: &'static str,
    pub label: &'static str,
    pub group: VariantGroup,
}

const fn v(slug: &'static str, label: &'static str, group: VariantGroup) -> Variant {
    Variant { slug, label, group }
}

use VariantGroup::*;

pub const VARIANTS: [Variant; 16] = [
    v("full", "Full CAST", Reference),
    v("no-linearize", "No linearisation (FFT on dB directly)", CvdExtraction),
    v("hamming", "Hamming window instead of Blackman-Harris", CvdExtraction),
    v("no-zero-pad", "No zero-padding (N_FFT = T)", CvdExtraction),
    v("no-casa", "Remove CASA (standard 3-channel stacking)", Casa),
    v("casa-1-head", "CASA with 1 head instead of 4 heads", Casa),
    v("concat-fusion", "Concatenation instead of cross-attention", Fusion),
    v("symmetric-fusion", "Symmetric cross-attention (both as Q)", Fusion),
    v("rtm-only", "RTM-only (no CVD stream)", Fusion),
    v("cvd-only", "CVD-only (no RTM stream)", Fusion),
    v("no-aux", "No auxiliary losses (lambda_aux = 0)", Training),
    v("no-physics-aug", "No physics-aware augmentation", Training),
    v("no-swa-ema", "No SWA or EMA", Training),
    v("no-mix", "MixUp/CutMix disabled", Training),
    v("swap-encoders", "Swap encoders (B for RTM, A for CVD)", Encoders),
    v("shared-encoder", "Same encoder type both streams (A)", Encoders),
];

pub fn find(slug: &str) -> Result<&'static Variant> {
    VARIANTS
        .iter()
        .find(|v| v.slug == slug)
        .ok_or_else(|| Error::Validation(alloc::format!("unknown variant '{slug}'")))
}

impl Variant {
    /// `base` with exactly this variant's change applied.
    pub fn apply(&self, base: &ExperimentConfig) -> ExperimentConfig {
        let mut c = base.clone();
        let m = &mut c.model;
        let cvd = &mut c.pipeline.cvd;
        let aug = &mut c.pipeline.augment.enabled;
        let t = &mut c.train;
        match self.slug {
            "full" => {}
            "no-linearize" => cvd.linearize = false,
            "hamming" => cvd.window = WindowKind::Hamming,
            "no-zero-pad" => cvd.n_fft = FftLength::Frames,
            "no-casa" => m.use_casa = false,
            "casa-1-head" => m.casa.heads = 1,
            "concat-fusion" => m.fusion.kind = FusionKind::Concat,
            "symmetric-fusion" => m.fusion.kind = FusionKind::Symmetric,
            "rtm-only" => m.streams = Streams::RtmOnly,
            "cvd-only" => m.streams = Streams::CvdOnly,
            "no-aux" => t.lambda_aux = 0.0,
            "no-physics-aug" => {
                aug.temporal_warp = false;
                aug.magnitude_warp = false;
                aug.multipath = false;
                aug.antenna_dropout = false;
            }
            "no-swa-ema" => {
                t.use_swa = false;
                t.use_ema = false;
            }
            "no-mix" => {
                aug.mixup = false;
                aug.cutmix = false;
            }
            "swap-encoders" => core::mem::swap(&mut m.enc_rtm, &mut m.enc_cvd),
            "shared-encoder" => {
                m.enc_rtm = EncoderKind::A;
                m.enc_cvd = EncoderKind::A;
            }
            other => unreachable!("variant '{other}' has no configuration"),
        }
        c
    }
}

/// Every variant applied to `base`, in table order.
pub fn ablation_variants(base: &ExperimentConfig) -> Vec<(Variant, ExperimentConfig)> {
    VARIANTS.iter().map(|v| (*v, v.apply(base))).collect()
}
