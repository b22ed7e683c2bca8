//! Small convolutional encoders standing in for large pretrained backbones.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{bail_shape, bail_validation, Result};
use crate::nn::layers::{BatchNorm, Conv2d};
use crate::nn::{Graph, ParamStore, Scalar, Var};
use crate::rng::Rng;

/// Two structurally different encoder families (kernel 3 vs kernel 5).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderKind {
    #[default]
    A,
    B,
}

impl EncoderKind {
    pub fn kernel(self) -> usize {
        match self {
            EncoderKind::A => 3,
            EncoderKind::B => 5,
        }
    }
}

#[derive(Debug, Clone)]
struct Stage {
    conv: Conv2d,
    bn: BatchNorm,
}

/// Stages of conv → batch norm → ReLU → 2×2 average pool, then global average pooling.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub kind: EncoderKind,
    pub widths: Vec<usize>,
    stages: Vec<Stage>,
}

impl Encoder {
    pub fn new<S: Scalar>(
        ps: &mut ParamStore<S>,
        name: &str,
        kind: EncoderKind,
        in_channels: usize,
        widths: &[usize],
        rng: &mut Rng,
    ) -> Result<Self> {
        if widths.is_empty() || widths.contains(&0) {
            bail_validation!("encoder widths must be non-empty and positive, got {:?}", widths);
        }
        let mut cin = in_channels;
        let mut stages = Vec::with_capacity(widths.len());
        for (i, &w) in widths.iter().enumerate() {
            let conv = Conv2d::new(ps, &format!("{name}.stage{i}.conv"), cin, w, kind.kernel(), rng);
            let bn = BatchNorm::new(ps, &format!("{name}.stage{i}.bn"), w);
            stages.push(Stage { conv, bn });
            cin = w;
        }
        Ok(Self { kind, widths: widths.to_vec(), stages })
    }

    pub fn out_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    /// Smallest square input the pooling chain accepts.
    pub fn min_input(&self) -> usize {
        1 << self.stages.len()
    }

    /// `[B, C, H, W] -> [B, out_dim]`.
    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, ps: &mut ParamStore<S>, x: Var) -> Result<Var> {
        let s = g.shape(x);
        if s.len() != 4 || s[2] < self.min_input() || s[3] < self.min_input() {
            bail_shape!("encoder input {:?} smaller than {}×{}", s, self.min_input(), self.min_input());
        }
        let mut h = x;
        for st in &self.stages {
            h = st.conv.forward(g, ps, h)?;
            h = st.bn.forward(g, ps, h)?;
            h = g.relu(h);
            h = g.avg_pool2(h)?;
        }
        g.global_avg_pool(h)
    }
}
