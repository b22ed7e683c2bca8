//! The dual-stream network: per-stream antenna attention, two encoders,
//! projections, gated cross-attention fusion and classification heads.

mod casa;
mod encoder;
mod fusion;
mod loss;

pub use casa::{zero_gate, CasaConfig, CasaModule, CasaOutput, CasaParamCount};
pub use encoder::{Encoder, EncoderKind};
pub use fusion::{FusionBlock, FusionConfig, FusionKind, FusionOutput};
pub use loss::{cast_loss, one_hot, smooth_targets};

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{bail_shape, bail_validation, Result};
use crate::nn::layers::{LayerNorm, Linear};
use crate::nn::{Graph, ParamStore, Scalar, Var};
use crate::rng;
use crate::rtm::ANTENNAS;

/// Which input streams the network consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Streams {
    #[default]
    Both,
    RtmOnly,
    CvdOnly,
}

impl Streams {
    pub fn uses_rtm(self) -> bool {
        self != Streams::CvdOnly
    }

    pub fn uses_cvd(self) -> bool {
        self != Streams::RtmOnly
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub num_classes: usize,
    pub use_casa: bool,
    pub casa: CasaConfig,
    pub enc_rtm: EncoderKind,
    pub enc_cvd: EncoderKind,
    pub widths: Vec<usize>,
    pub fusion: FusionConfig,
    pub streams: Streams,
    pub head_dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            num_classes: 8,
            use_casa: true,
            casa: CasaConfig::default(),
            enc_rtm: EncoderKind::A,
            enc_cvd: EncoderKind::B,
            widths: vec![16, 32, 64, 128],
            fusion: FusionConfig::default(),
            streams: Streams::Both,
            head_dropout: 0.3,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            bail_validation!("need at least 2 classes, got {}", self.num_classes);
        }
        if !(0.0..1.0).contains(&self.head_dropout) || !(0.0..1.0).contains(&self.fusion.attn_dropout) {
            bail_validation!("dropout rates must lie in [0, 1)");
        }
        if self.fusion.dim == 0 || self.fusion.ffn_dim == 0 || self.fusion.heads == 0 {
            bail_validation!("fusion dimensions must be positive");
        }
        if self.fusion.dim % self.fusion.heads != 0 {
            bail_validation!("fusion dim {} not divisible by {} heads", self.fusion.dim, self.fusion.heads);
        }
        Ok(())
    }
}

/// One stream: optional CASA, encoder and projection to the fusion width.
#[derive(Debug, Clone)]
pub struct StreamBranch {
    pub casa: Option<CasaModule>,
    pub encoder: Encoder,
    pub proj: Linear,
}

#[derive(Debug, Clone, Copy)]
pub struct BranchOutput {
    /// Projected features `[B, d]`.
    pub features: Var,
    pub alphas: Option<Var>,
}

impl StreamBranch {
    fn new<S: Scalar>(ps: &mut ParamStore<S>, stream: &str, cfg: &ModelConfig, kind: EncoderKind, r: &mut rng::Rng) -> Result<Self> {
        let casa = if cfg.use_casa {
            Some(CasaModule::new(ps, &alloc::format!("casa.{stream}"), cfg.casa, r)?)
        } else {
            None
        };
        let encoder = Encoder::new(ps, &alloc::format!("enc.{stream}"), kind, ANTENNAS, &cfg.widths, r)?;
        let proj = Linear::new(ps, &alloc::format!("proj.{stream}"), encoder.out_dim(), cfg.fusion.dim, r);
        Ok(Self { casa, encoder, proj })
    }

    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, ps: &mut ParamStore<S>, x: Var) -> Result<BranchOutput> {
        let s = g.shape(x);
        if s.len() != 4 || s[1] != ANTENNAS {
            bail_shape!("stream input must be [B, {ANTENNAS}, H, W], got {:?}", s);
        }
        let (x, alphas) = match &self.casa {
            Some(c) => {
                let o = c.forward(g, ps, x)?;
                (o.x, Some(o.alphas))
            }
            None => (x, None),
        };
        let f = self.encoder.forward(g, ps, x)?;
        let features = self.proj.forward(g, ps, f)?;
        Ok(BranchOutput { features, alphas })
    }
}

#[derive(Debug, Clone)]
pub struct CastModel {
    pub cfg: ModelConfig,
    pub rtm: Option<StreamBranch>,
    pub cvd: Option<StreamBranch>,
    pub fusion: Option<FusionBlock>,
    pub head_ln: LayerNorm,
    pub head_fc: Linear,
    pub head_rtm: Option<Linear>,
    pub head_cvd: Option<Linear>,
}

/// Everything a forward pass exposes.
#[derive(Debug, Clone, Copy)]
pub struct CastOutput {
    pub logits: Var,
    pub aux_rtm: Option<Var>,
    pub aux_cvd: Option<Var>,
    pub f_rtm: Option<Var>,
    pub f_cvd: Option<Var>,
    pub fusion: Option<FusionOutput>,
    pub alphas_rtm: Option<Var>,
    pub alphas_cvd: Option<Var>,
}

impl CastModel {
    /// Builds the model and its freshly initialised parameters.
    pub fn build<S: Scalar>(cfg: &ModelConfig, seed: u64) -> Result<(Self, ParamStore<S>)> {
        cfg.validate()?;
        let mut ps = ParamStore::new();
        let mut r = rng::seeded(seed);
        let s = cfg.streams;
        let rtm = s.uses_rtm().then(|| StreamBranch::new(&mut ps, "rtm", cfg, cfg.enc_rtm, &mut r)).transpose()?;
        let cvd = s.uses_cvd().then(|| StreamBranch::new(&mut ps, "cvd", cfg, cfg.enc_cvd, &mut r)).transpose()?;
        let both = s == Streams::Both;
        let fusion = both.then(|| FusionBlock::new(&mut ps, "fusion", cfg.fusion, &mut r)).transpose()?;
        let d = cfg.fusion.dim;
        let c = cfg.num_classes;
        let head_ln = LayerNorm::new(&mut ps, "head.main.ln", d);
        let head_fc = Linear::new(&mut ps, "head.main.fc", d, c, &mut r);
        let head_rtm = both.then(|| Linear::new(&mut ps, "head.rtm", d, c, &mut r));
        let head_cvd = both.then(|| Linear::new(&mut ps, "head.cvd", d, c, &mut r));
        let model = Self { cfg: cfg.clone(), rtm, cvd, fusion, head_ln, head_fc, head_rtm, head_cvd };
        Ok((model, ps))
    }

    /// Main head: layer norm, dropout, linear.
    pub fn head<S: Scalar>(&self, g: &mut Graph<S>, ps: &ParamStore<S>, features: Var) -> Result<Var> {
        let h = self.head_ln.forward(g, ps, features)?;
        let h = g.dropout(h, self.cfg.head_dropout)?;
        self.head_fc.forward(g, ps, h)
    }

    /// Runs the network. Inputs are `[B, 3, S, S]`; a stream the variant does
    /// not use may be `None`.
    pub fn forward<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        ps: &mut ParamStore<S>,
        rtm: Option<Var>,
        cvd: Option<Var>,
    ) -> Result<CastOutput> {
        let run = |branch: &Option<StreamBranch>, x: Option<Var>, g: &mut Graph<S>, ps: &mut ParamStore<S>, what: &str| {
            match (branch, x) {
                (Some(b), Some(x)) => b.forward(g, ps, x).map(Some),
                (Some(_), None) => Err(crate::Error::Validation(alloc::format!("variant needs the {what} input"))),
                (None, _) => Ok(None),
            }
        };
        let br = run(&self.rtm, rtm, g, ps, "RTM")?;
        let bc = run(&self.cvd, cvd, g, ps, "CVD")?;
        if let (Some(a), Some(b)) = (br, bc) {
            if g.shape(a.features)[0] != g.shape(b.features)[0] {
                bail_shape!("stream batch sizes differ");
            }
        }
        let f_rtm = br.map(|b| b.features);
        let f_cvd = bc.map(|b| b.features);
        let (fused, fusion) = match (&self.fusion, f_rtm, f_cvd) {
            (Some(fb), Some(fr), Some(fc)) => {
                let o = fb.forward(g, ps, fr, fc)?;
                (o.out, Some(o))
            }
            (_, Some(fr), None) => (fr, None),
            (_, None, Some(fc)) => (fc, None),
            _ => bail_validation!("model has no active stream"),
        };
        let logits = self.head(g, ps, fused)?;
        let aux_rtm = match (&self.head_rtm, f_rtm) {
            (Some(h), Some(f)) => Some(h.forward(g, ps, f)?),
            _ => None,
        };
        let aux_cvd = match (&self.head_cvd, f_cvd) {
            (Some(h), Some(f)) => Some(h.forward(g, ps, f)?),
            _ => None,
        };
        Ok(CastOutput {
            logits,
            aux_rtm,
            aux_cvd,
            f_rtm,
            f_cvd,
            fusion,
            alphas_rtm: br.and_then(|b| b.alphas),
            alphas_cvd: bc.and_then(|b| b.alphas),
        })
    }
}
