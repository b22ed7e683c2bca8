//! Cross-antenna spatial attention: each antenna plane is embedded on its own,
//! the three embeddings attend to each other, and a sigmoid gate rescales
//! every plane.

use alloc::format;

use serde::{Deserialize, Serialize};

use crate::error::{bail_shape, bail_validation, Result};
use crate::nn::layers::{BatchNorm, Conv2d, LayerNorm, Linear, MultiHeadAttention};
use crate::nn::{Graph, ParamId, ParamStore, Scalar, Tensor, Var};
use crate::rng::Rng;
use crate::rtm::ANTENNAS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CasaConfig {
    /// Conv output channels, which is also the token width.
    pub embed_dim: usize,
    pub heads: usize,
    pub gate_hidden: usize,
    /// Adds a learned embedding per antenna slot before attention.
    pub positional: bool,
}

impl Default for CasaConfig {
    fn default() -> Self {
        Self { embed_dim: 16, heads: 4, gate_hidden: 8, positional: false }
    }
}

/// Trainable parameter counts per sub-block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CasaParamCount {
    pub conv: usize,
    pub batch_norm: usize,
    pub attention: usize,
    pub layer_norm: usize,
    pub gate: usize,
    pub positional: usize,
}

impl CasaParamCount {
    pub fn total(&self) -> usize {
        self.conv + self.batch_norm + self.attention + self.layer_norm + self.gate + self.positional
    }
}

#[derive(Debug, Clone)]
pub struct CasaModule {
    pub cfg: CasaConfig,
    pub conv: Conv2d,
    pub bn: BatchNorm,
    pub mha: MultiHeadAttention,
    pub ln: LayerNorm,
    pub gate_hidden: Linear,
    pub gate_out: Linear,
    pub pos: Option<ParamId>,
    name: alloc::string::String,
}

/// Output of [`CasaModule::forward`].
#[derive(Debug, Clone, Copy)]
pub struct CasaOutput {
    /// Gated input, same shape as the input.
    pub x: Var,
    /// Per-antenna gate values `[B, 3]`.
    pub alphas: Var,
    /// Attended token embeddings `[B, 3, embed]`.
    pub tokens: Var,
}

impl CasaModule {
    pub fn new<S: Scalar>(ps: &mut ParamStore<S>, name: &str, cfg: CasaConfig, rng: &mut Rng) -> Result<Self> {
        if cfg.embed_dim == 0 || cfg.gate_hidden == 0 {
            bail_validation!("CASA dimensions must be positive");
        }
        let e = cfg.embed_dim;
        let conv = Conv2d::new(ps, &format!("{name}.conv"), 1, e, 3, rng);
        let bn = BatchNorm::new(ps, &format!("{name}.bn"), e);
        let mha = MultiHeadAttention::new(ps, &format!("{name}.mha"), e, cfg.heads, rng)?;
        let ln = LayerNorm::new(ps, &format!("{name}.ln"), e);
        let gate_hidden = Linear::new(ps, &format!("{name}.gate.0"), e, cfg.gate_hidden, rng);
        let gate_out = Linear::new(ps, &format!("{name}.gate.1"), cfg.gate_hidden, 1, rng);
        let pos = cfg.positional.then(|| ps.add_uniform(format!("{name}.pos"), &[ANTENNAS, e], e, rng));
        Ok(Self { cfg, conv, bn, mha, ln, gate_hidden, gate_out, pos, name: name.into() })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Exact trainable counts read back from the store.
    pub fn param_count<S: Scalar>(&self, ps: &ParamStore<S>) -> CasaParamCount {
        let n = &self.name;
        CasaParamCount {
            conv: ps.count_with_prefix(&format!("{n}.conv.")),
            batch_norm: ps.count_with_prefix(&format!("{n}.bn.")),
            attention: ps.count_with_prefix(&format!("{n}.mha.")),
            layer_norm: ps.count_with_prefix(&format!("{n}.ln.")),
            gate: ps.count_with_prefix(&format!("{n}.gate.")),
            positional: ps.count_with_prefix(&format!("{n}.pos")),
        }
    }

    /// `x` is `[B, 3, H, W]`.
    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, ps: &mut ParamStore<S>, x: Var) -> Result<CasaOutput> {
        let s = g.shape(x).to_vec();
        if s.len() != 4 {
            bail_shape!("CASA input must be [B, 3, H, W], got {:?}", s);
        }
        if s[1] != ANTENNAS {
            bail_validation!("CASA needs exactly {ANTENNAS} antenna planes, got {}", s[1]);
        }
        let (b, h, w) = (s[0], s[2], s[3]);
        let e = self.cfg.embed_dim;
        let planes = g.reshape(x, &[b * ANTENNAS, 1, h, w])?;
        let z = self.conv.forward(g, ps, planes)?;
        let z = self.bn.forward(g, ps, z)?;
        let z = g.relu(z);
        let z = g.global_avg_pool(z)?;
        let mut z = g.reshape(z, &[b, ANTENNAS, e])?;
        if let Some(pos) = self.pos {
            let p = g.param(ps, pos);
            z = g.add_broadcast(z, p)?;
        }
        let a = self.mha.forward(g, ps, z, z)?;
        let r = g.add(z, a)?;
        let tokens = self.ln.forward(g, ps, r)?;
        let hdn = self.gate_hidden.forward(g, ps, tokens)?;
        let hdn = g.relu(hdn);
        let logit = self.gate_out.forward(g, ps, hdn)?;
        let alpha = g.sigmoid(logit);
        let alphas = g.reshape(alpha, &[b, ANTENNAS])?;
        let gated = g.scale_channels(x, alphas)?;
        Ok(CasaOutput { x: gated, alphas, tokens })
    }
}

/// Zeroes the gate MLP so every antenna weight is exactly one half.
pub fn zero_gate<S: Scalar>(casa: &CasaModule, ps: &mut ParamStore<S>) {
    for lin in [&casa.gate_hidden, &casa.gate_out] {
        *ps.value_mut(lin.w) = Tensor::zeros(&ps.value(lin.w).shape.clone());
        if let Some(b) = lin.b {
            *ps.value_mut(b) = Tensor::zeros(&ps.value(b).shape.clone());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use alloc::vec::Vec;

    fn input(seed: u64, b: usize, h: usize, w: usize) -> Tensor<f64> {
        let mut r = rng::seeded(seed);
        let n = b * 3 * h * w;
        Tensor::new(&[b, 3, h, w], (0..n).map(|_| rng::normal(&mut r)).collect()).unwrap()
    }

    #[test]
    fn zero_gate_halves_input_exactly() {
        let mut ps = ParamStore::<f64>::new();
        let casa = CasaModule::new(&mut ps, "casa", CasaConfig::default(), &mut rng::seeded(1)).unwrap();
        zero_gate(&casa, &mut ps);
        for training in [false, true] {
            let mut g = Graph::new(training, 0);
            let xt = input(2, 2, 6, 5);
            let x = g.constant(xt.clone());
            let out = casa.forward(&mut g, &mut ps, x).unwrap();
            assert!(g.value(out.alphas).data.iter().all(|&a| a == 0.5));
            for (y, x) in g.value(out.x).data.iter().zip(&xt.data) {
                assert_eq!(*y, 0.5 * x);
            }
        }
    }

    #[test]
    fn gates_lie_in_open_unit_interval() {
        let mut ps = ParamStore::<f64>::new();
        let casa = CasaModule::new(&mut ps, "casa", CasaConfig::default(), &mut rng::seeded(3)).unwrap();
        let mut g = Graph::new(true, 0);
        let x = g.constant(input(4, 3, 8, 8));
        let out = casa.forward(&mut g, &mut ps, x).unwrap();
        assert_eq!(g.shape(out.alphas), &[3, 3]);
        assert!(g.value(out.alphas).data.iter().all(|&a| a > 0.0 && a < 1.0));
    }

    #[test]
    fn rejects_wrong_antenna_count() {
        let mut ps = ParamStore::<f64>::new();
        let casa = CasaModule::new(&mut ps, "casa", CasaConfig::default(), &mut rng::seeded(3)).unwrap();
        let mut g = Graph::new(false, 0);
        let x = g.constant(Tensor::zeros(&[1, 2, 4, 4]));
        assert!(matches!(casa.forward(&mut g, &mut ps, x), Err(crate::Error::Validation(_))));
    }

    #[test]
    fn antenna_permutation_permutes_outputs() {
        let mut ps = ParamStore::<f64>::new();
        let casa = CasaModule::new(&mut ps, "casa", CasaConfig::default(), &mut rng::seeded(5)).unwrap();
        let xt = input(6, 2, 6, 6);
        let perm = [2usize, 0, 1];
        let plane = 36;
        let mut permuted = xt.clone();
        for b in 0..2 {
            for (dst, &src) in perm.iter().enumerate() {
                let s = (b * 3 + src) * plane;
                let d = (b * 3 + dst) * plane;
                permuted.data[d..d + plane].copy_from_slice(&xt.data[s..s + plane]);
            }
        }
        let run = |ps: &mut ParamStore<f64>, t: Tensor<f64>| {
            let mut g = Graph::new(false, 0);
            let x = g.constant(t);
            let o = casa.forward(&mut g, ps, x).unwrap();
            (g.value(o.alphas).data.clone(), g.value(o.x).data.clone())
        };
        let (a0, y0) = run(&mut ps, xt);
        let (a1, y1) = run(&mut ps, permuted);
        for b in 0..2 {
            for (dst, &src) in perm.iter().enumerate() {
                assert!((a1[b * 3 + dst] - a0[b * 3 + src]).abs() < 1e-12);
                for j in 0..plane {
                    let d = y1[(b * 3 + dst) * plane + j];
                    let s = y0[(b * 3 + src) * plane + j];
                    assert!((d - s).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn positional_embedding_breaks_equivariance() {
        let cfg = CasaConfig { positional: true, ..CasaConfig::default() };
        let mut ps = ParamStore::<f64>::new();
        let casa = CasaModule::new(&mut ps, "casa", cfg, &mut rng::seeded(5)).unwrap();
        // identical planes, so any difference between gates comes from position
        let one: Vec<f64> = input(7, 1, 4, 4).data[..16].to_vec();
        let mut data = Vec::new();
        for _ in 0..3 {
            data.extend_from_slice(&one);
        }
        let mut g = Graph::new(false, 0);
        let x = g.constant(Tensor::new(&[1, 3, 4, 4], data).unwrap());
        let o = casa.forward(&mut g, &mut ps, x).unwrap();
        let a = &g.value(o.alphas).data;
        assert!((a[0] - a[1]).abs() > 1e-9 || (a[1] - a[2]).abs() > 1e-9);
        assert_eq!(casa.param_count(&ps).positional, 48);
    }

    #[test]
    fn parameter_count_breakdown() {
        let cfg = CasaConfig { heads: 1, ..CasaConfig::default() };
        let mut ps = ParamStore::<f32>::new();
        let casa = CasaModule::new(&mut ps, "casa.rtm", cfg, &mut rng::seeded(0)).unwrap();
        let c = casa.param_count(&ps);
        // 16·9 + 16, 2·16, 4·(16·16 + 16), 2·16, (16·8 + 8) + (8 + 1)
        assert_eq!((c.conv, c.batch_norm, c.attention, c.layer_norm, c.gate), (160, 32, 1088, 32, 145));
        assert_eq!(c.total(), 1457);
        assert_eq!(c.total(), ps.num_trainable());
        // head count does not change the total
        let mut ps4 = ParamStore::<f32>::new();
        let casa4 = CasaModule::new(&mut ps4, "c", CasaConfig::default(), &mut rng::seeded(0)).unwrap();
        assert_eq!(casa4.param_count(&ps4).total(), 1457);
    }
}
