//! Fusion of the two projected stream features with a gated RTM residual.

use alloc::format;

use serde::{Deserialize, Serialize};

use crate::error::{bail_shape, Result};
use crate::nn::layers::{LayerNorm, Linear, MultiHeadAttention};
use crate::nn::{Graph, ParamStore, Scalar, Var};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FusionKind {
    /// RTM queries, CVD supplies keys and values.
    #[default]
    CrossAttention,
    /// Both directions attended and averaged.
    Symmetric,
    /// Concatenated features through a linear map.
    Concat,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    pub kind: FusionKind,
    pub dim: usize,
    pub heads: usize,
    pub attn_dropout: f64,
    pub ffn_dim: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self { kind: FusionKind::CrossAttention, dim: 512, heads: 8, attn_dropout: 0.1, ffn_dim: 2048 }
    }
}

#[derive(Debug, Clone)]
pub struct FusionBlock {
    pub cfg: FusionConfig,
    pub mha: Option<MultiHeadAttention>,
    pub mha_rev: Option<MultiHeadAttention>,
    pub concat: Option<Linear>,
    pub ln: LayerNorm,
    pub ffn1: Linear,
    pub ffn2: Linear,
    pub gate: Linear,
}

/// Intermediate values of one fusion pass.
#[derive(Debug, Clone, Copy)]
pub struct FusionOutput {
    pub out: Var,
    /// Refined attended features `e′`.
    pub refined: Var,
    pub gate: Var,
}

impl FusionBlock {
    pub fn new<S: Scalar>(ps: &mut ParamStore<S>, name: &str, cfg: FusionConfig, rng: &mut Rng) -> Result<Self> {
        let d = cfg.dim;
        let attn = |ps: &mut ParamStore<S>, rng: &mut Rng, n: &str| {
            MultiHeadAttention::with_dropout(ps, &format!("{name}.{n}"), d, cfg.heads, cfg.attn_dropout, rng)
        };
        let (mha, mha_rev, concat) = match cfg.kind {
            FusionKind::CrossAttention => (Some(attn(ps, rng, "mha")?), None, None),
            FusionKind::Symmetric => (Some(attn(ps, rng, "mha")?), Some(attn(ps, rng, "mha_rev")?), None),
            FusionKind::Concat => (None, None, Some(Linear::new(ps, &format!("{name}.concat"), 2 * d, d, rng))),
        };
        let ln = LayerNorm::new(ps, &format!("{name}.ln"), d);
        let ffn1 = Linear::new(ps, &format!("{name}.ffn.0"), d, cfg.ffn_dim, rng);
        let ffn2 = Linear::new(ps, &format!("{name}.ffn.1"), cfg.ffn_dim, d, rng);
        let gate = Linear::new(ps, &format!("{name}.gate"), 2 * d, d, rng);
        Ok(Self { cfg, mha, mha_rev, concat, ln, ffn1, ffn2, gate })
    }

    /// `f_rtm` and `f_cvd` are `[B, dim]`.
    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, ps: &ParamStore<S>, f_rtm: Var, f_cvd: Var) -> Result<FusionOutput> {
        let (sr, sc) = (g.shape(f_rtm).to_vec(), g.shape(f_cvd).to_vec());
        if sr.len() != 2 || sr != sc || sr[1] != self.cfg.dim {
            bail_shape!("fusion inputs {:?} and {:?}, expected [B, {}]", sr, sc, self.cfg.dim);
        }
        let (b, d) = (sr[0], sr[1]);
        let e = match self.cfg.kind {
            FusionKind::Concat => {
                let cat = g.concat_last(f_rtm, f_cvd)?;
                self.concat.as_ref().unwrap().forward(g, ps, cat)?
            }
            kind => {
                let q = g.reshape(f_rtm, &[b, 1, d])?;
                let kv = g.reshape(f_cvd, &[b, 1, d])?;
                let mut e = self.mha.as_ref().unwrap().forward(g, ps, q, kv)?;
                if kind == FusionKind::Symmetric {
                    let rev = self.mha_rev.as_ref().unwrap().forward(g, ps, kv, q)?;
                    let sum = g.add(e, rev)?;
                    e = g.scale(sum, 0.5);
                }
                g.reshape(e, &[b, d])?
            }
        };
        let h = self.ln.forward(g, ps, e)?;
        let h = self.ffn1.forward(g, ps, h)?;
        let h = g.gelu(h);
        let refined = self.ffn2.forward(g, ps, h)?;
        let cat = g.concat_last(f_rtm, refined)?;
        let gl = self.gate.forward(g, ps, cat)?;
        let gate = g.sigmoid(gl);
        let a = g.mul(gate, refined)?;
        let keep = g.one_minus(gate);
        let r = g.mul(keep, f_rtm)?;
        let out = g.add(a, r)?;
        Ok(FusionOutput { out, refined, gate })
    }
}
