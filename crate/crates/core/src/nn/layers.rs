//! Parameterised building blocks over [`Graph`].

use alloc::format;
use alloc::string::String;

use super::{Graph, ParamId, ParamStore, Scalar, Tensor, Var};
use crate::error::{bail_shape, bail_validation, Result};
use crate::rng::Rng;

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<S: Scalar>(ps: &mut ParamStore<S>, name: &str, in_dim: usize, out_dim: usize, rng: &mut Rng) -> Self {
        let w = ps.add_uniform(format!("{name}.weight"), &[out_dim, in_dim], in_dim, rng);
        let b = ps.add_uniform(format!("{name}.bias"), &[out_dim], in_dim, rng);
        Self { w, b: Some(b), in_dim, out_dim }
    }

    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, ps: &ParamStore<S>, x: Var) -> Result<Var> {
        let w = g.param(ps, self.w);
        let b = self.b.map(|b| g.param(ps, b));
        g.linear(x, w, b)
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub w: ParamId,
    pub b: ParamId,
}

impl Conv2d {
    pub fn new<S: Scalar>(ps: &mut ParamStore<S>, name: &str, cin: usize, cout: usize, k: usize, rng: &mut Rng) -> Self {
        let fan_in = cin * k * k;
        let w = ps.add_uniform(format!("{name}.weight"), &[cout, cin, k, k], fan_in, rng);
        let b = ps.add_uniform(format!("{name}.bias"), &[cout], fan_in, rng);
        Self { w, b }
    }

    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, ps: &ParamStore<S>, x: Var) -> Result<Var> {
        let w = g.param(ps, self.w);
        let b = g.param(ps, self.b);
        g.conv2d(x, w, Some(b))
    }
}

pub const BN_EPS: f64 = 1e-5;
pub const LN_EPS: f64 = 1e-5;

/// Batch norm over channel axis 1 with running statistics kept as buffers.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm {
    pub fn new<S: Scalar>(ps: &mut ParamStore<S>, name: &str, channels: usize) -> Self {
        Self {
            gamma: ps.add(format!("{name}.weight"), Tensor::full(&[channels], S::one())),
            beta: ps.add(format!("{name}.bias"), Tensor::zeros(&[channels])),
            running_mean: ps.add_buffer(format!("{name}.running_mean"), Tensor::zeros(&[channels])),
            running_var: ps.add_buffer(format!("{name}.running_var"), Tensor::full(&[channels], S::one())),
        }
    }

    /// Training mode normalises with batch statistics and folds them into the
    /// running averages; evaluation mode uses the running averages.
    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, ps: &mut ParamStore<S>, x: Var) -> Result<Var> {
        let gamma = g.param(ps, self.gamma);
        let beta = g.param(ps, self.beta);
        if g.is_training() {
            let (y, mean, var) = g.batch_norm_train(x, gamma, beta, BN_EPS)?;
            let m = S::lit(g.bn_momentum);
            let keep = S::one() - m;
            for (r, b) in ps.value_mut(self.running_mean).data.iter_mut().zip(&mean) {
                *r = keep * *r + m * *b;
            }
            for (r, b) in ps.value_mut(self.running_var).data.iter_mut().zip(&var) {
                *r = keep * *r + m * *b;
            }
            Ok(y)
        } else {
            let mean = ps.value(self.running_mean).data.clone();
            let var = ps.value(self.running_var).data.clone();
            g.batch_norm_eval(x, gamma, beta, &mean, &var, BN_EPS)
        }
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<S: Scalar>(ps: &mut ParamStore<S>, name: &str, dim: usize) -> Self {
        Self {
            gamma: ps.add(format!("{name}.weight"), Tensor::full(&[dim], S::one())),
            beta: ps.add(format!("{name}.bias"), Tensor::zeros(&[dim])),
        }
    }

    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, ps: &ParamStore<S>, x: Var) -> Result<Var> {
        let gamma = g.param(ps, self.gamma);
        let beta = g.param(ps, self.beta);
        g.layer_norm(x, gamma, beta, LN_EPS)
    }
}

/// Scaled dot-product multi-head attention with separate query and key/value inputs.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
    pub dim: usize,
    /// Dropout on attention weights, active only in training.
    pub dropout: f64,
}

impl MultiHeadAttention {
    pub fn new<S: Scalar>(ps: &mut ParamStore<S>, name: &str, dim: usize, heads: usize, rng: &mut Rng) -> Result<Self> {
        Self::with_dropout(ps, name, dim, heads, 0.0, rng)
    }

    pub fn with_dropout<S: Scalar>(
        ps: &mut ParamStore<S>,
        name: &str,
        dim: usize,
        heads: usize,
        dropout: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&dropout) {
            bail_validation!("attention dropout {dropout} outside [0, 1)");
        }
        if heads == 0 || dim % heads != 0 {
            bail_validation!("{dim} features cannot be split into {heads} heads");
        }
        let lin = |ps: &mut ParamStore<S>, rng: &mut Rng, p: &str| -> Linear {
            let n: String = format!("{name}.{p}");
            Linear::new(ps, &n, dim, dim, rng)
        };
        Ok(Self {
            q: lin(ps, rng, "q"),
            k: lin(ps, rng, "k"),
            v: lin(ps, rng, "v"),
            o: lin(ps, rng, "out"),
            heads,
            dim,
            dropout,
        })
    }

    /// `[B,N,d] -> [B·h, N, d/h]`.
    fn split<S: Scalar>(&self, g: &mut Graph<S>, x: Var) -> Result<Var> {
        let s = g.shape(x).to_vec();
        let (b, n, dh) = (s[0], s[1], self.dim / self.heads);
        let x = g.reshape(x, &[b, n, self.heads, dh])?;
        let x = g.swap_axes12(x)?;
        g.reshape(x, &[b * self.heads, n, dh])
    }

    /// `query` is `[B,Nq,d]`, `context` is `[B,Nk,d]`; returns `[B,Nq,d]`.
    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, ps: &ParamStore<S>, query: Var, context: Var) -> Result<Var> {
        let (qs, cs) = (g.shape(query).to_vec(), g.shape(context).to_vec());
        if qs.len() != 3 || cs.len() != 3 || qs[0] != cs[0] || qs[2] != self.dim || cs[2] != self.dim {
            bail_shape!("attention: query {:?} context {:?} for dim {}", qs, cs, self.dim);
        }
        let (b, nq) = (qs[0], qs[1]);
        let dh = self.dim / self.heads;
        let q = self.q.forward(g, ps, query)?;
        let k = self.k.forward(g, ps, context)?;
        let v = self.v.forward(g, ps, context)?;
        let (q, k, v) = (self.split(g, q)?, self.split(g, k)?, self.split(g, v)?);
        let scores = g.bmm(q, k, true)?;
        let scores = g.scale(scores, 1.0 / libm::sqrt(dh as f64));
        let attn = g.softmax(scores);
        let attn = g.dropout(attn, self.dropout)?;
        let ctx = g.bmm(attn, v, false)?;
        let ctx = g.reshape(ctx, &[b, self.heads, nq, dh])?;
        let ctx = g.swap_axes12(ctx)?;
        let ctx = g.reshape(ctx, &[b, nq, self.dim])?;
        self.o.forward(g, ps, ctx)
    }
}

/// Trainable scalars a layer stack would hold, for sizing checks.
pub fn linear_params(in_dim: usize, out_dim: usize) -> usize {
    in_dim * out_dim + out_dim
}

pub fn attention_params(dim: usize) -> usize {
    4 * linear_params(dim, dim)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use alloc::vec;

    #[test]
    fn attention_parameter_count() {
        let mut ps = ParamStore::<f64>::new();
        let mut r = rng::seeded(0);
        MultiHeadAttention::new(&mut ps, "mha", 16, 4, &mut r).unwrap();
        assert_eq!(ps.num_trainable(), attention_params(16));
        assert_eq!(attention_params(16), 1088);
        assert!(MultiHeadAttention::new(&mut ps, "bad", 16, 3, &mut r).is_err());
    }

    fn set<S: Scalar>(ps: &mut ParamStore<S>, id: ParamId, data: &[f64]) {
        ps.value_mut(id).data = data.iter().map(|&v| S::lit(v)).collect();
    }

    fn identity(d: usize) -> alloc::vec::Vec<f64> {
        (0..d * d).map(|i| if i % (d + 1) == 0 { 1.0 } else { 0.0 }).collect()
    }

    #[test]
    fn linear_small_cases() {
        let mut ps = ParamStore::<f64>::new();
        let mut r = rng::seeded(0);
        let lin = Linear::new(&mut ps, "l", 1, 1, &mut r);
        set(&mut ps, lin.w, &[2.0]);
        set(&mut ps, lin.b.unwrap(), &[3.0]);
        let mut g = Graph::new(false, 0);
        let x = g.constant(Tensor::from_f64(&[1, 1], &[5.0]).unwrap());
        let y = lin.forward(&mut g, &ps, x).unwrap();
        assert_eq!(g.value(y).data, vec![13.0]);

        let lin = Linear::new(&mut ps, "eye", 3, 3, &mut r);
        set(&mut ps, lin.w, &identity(3));
        set(&mut ps, lin.b.unwrap(), &[0.0; 3]);
        let xs = [0.5, -1.0, 2.0, 4.0, 0.0, -3.0];
        let x = g.constant(Tensor::from_f64(&[2, 3], &xs).unwrap());
        let y = lin.forward(&mut g, &ps, x).unwrap();
        assert_eq!(g.value(y).data, xs.to_vec());
        let w = g.constant(Tensor::zeros(&[3, 2]));
        assert!(g.linear(x, w, None).is_err());
    }

    #[test]
    fn conv_identity_and_box_kernels() {
        let mut ps = ParamStore::<f64>::new();
        let mut r = rng::seeded(0);
        let conv = Conv2d::new(&mut ps, "c", 1, 1, 3, &mut r);
        let mut k = [0.0; 9];
        k[4] = 1.0;
        set(&mut ps, conv.w, &k);
        set(&mut ps, conv.b, &[0.0]);
        let xs: alloc::vec::Vec<f64> = (0..20).map(|i| i as f64 * 0.3 - 2.0).collect();
        let mut g = Graph::new(false, 0);
        let x = g.constant(Tensor::from_f64(&[1, 1, 4, 5], &xs).unwrap());
        let y = conv.forward(&mut g, &ps, x).unwrap();
        assert_eq!(g.value(y).data, xs);

        set(&mut ps, conv.w, &[1.0; 9]);
        let mut g = Graph::new(false, 0);
        let c = g.constant(Tensor::full(&[1, 1, 4, 5], 1.5));
        let y = conv.forward(&mut g, &ps, c).unwrap();
        let out = &g.value(y).data;
        for yy in 1..3 {
            for xx in 1..4 {
                assert_eq!(out[yy * 5 + xx], 13.5);
            }
        }
        assert_eq!(out[0], 6.0);
    }

    #[test]
    fn attention_singleton_key_passes_value_projection() {
        let mut ps = ParamStore::<f64>::new();
        let mut r = rng::seeded(4);
        let mha = MultiHeadAttention::new(&mut ps, "m", 8, 4, &mut r).unwrap();
        let mut g = Graph::new(false, 0);
        let q = g.constant(Tensor::from_f64(&[2, 1, 8], &[0.3; 16]).unwrap());
        let kv: alloc::vec::Vec<f64> = (0..16).map(|i| (i as f64).sin()).collect();
        let c = g.constant(Tensor::from_f64(&[2, 1, 8], &kv).unwrap());
        let y = mha.forward(&mut g, &ps, q, c).unwrap();
        let v = mha.v.forward(&mut g, &ps, c).unwrap();
        let o = mha.o.forward(&mut g, &ps, v).unwrap();
        for (a, b) in g.value(y).data.iter().zip(&g.value(o).data) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_equal_scores_average_values() {
        let mut ps = ParamStore::<f64>::new();
        let mut r = rng::seeded(4);
        let mha = MultiHeadAttention::new(&mut ps, "m", 2, 1, &mut r).unwrap();
        for lin in [&mha.q, &mha.k, &mha.v, &mha.o] {
            set(&mut ps, lin.w, &identity(2));
            set(&mut ps, lin.b.unwrap(), &[0.0, 0.0]);
        }
        let mut g = Graph::new(false, 0);
        let q = g.constant(Tensor::from_f64(&[1, 1, 2], &[0.7, -0.2]).unwrap());
        // identical keys, different values is impossible with shared K/V input, so
        // use keys orthogonal to the query: scores are equal.
        let c = g.constant(Tensor::from_f64(&[1, 2, 2], &[0.2, 0.7, -0.2, -0.7]).unwrap());
        let y = mha.forward(&mut g, &ps, q, c).unwrap();
        let out = &g.value(y).data;
        assert!(out[0].abs() < 1e-15 && out[1].abs() < 1e-15);
    }

    #[test]
    fn layer_norm_of_constant_is_zero() {
        let mut ps = ParamStore::<f64>::new();
        let ln = LayerNorm::new(&mut ps, "ln", 5);
        let mut g = Graph::new(false, 0);
        let x = g.constant(Tensor::full(&[2, 5], 3.25));
        let y = ln.forward(&mut g, &ps, x).unwrap();
        assert!(g.value(y).data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn eval_mode_is_bit_deterministic() {
        let mut r = rng::seeded(9);
        let mut ps = ParamStore::<f32>::new();
        let mha = MultiHeadAttention::with_dropout(&mut ps, "m", 8, 2, 0.5, &mut r).unwrap();
        let xs: alloc::vec::Vec<f64> = (0..48).map(|i| ((i * 7 % 11) as f64).cos()).collect();
        let run = |seed| {
            let mut g = Graph::<f32>::new(false, seed);
            let x = g.constant(Tensor::from_f64(&[2, 3, 8], &xs).unwrap());
            let y = mha.forward(&mut g, &ps, x, x).unwrap();
            g.value(y).data.clone()
        };
        assert_eq!(run(1), run(2));
    }

    #[test]
    fn batch_norm_updates_running_stats_only_in_training() {
        let mut ps = ParamStore::<f64>::new();
        let bn = BatchNorm::new(&mut ps, "bn", 2);
        let x = Tensor::from_f64(&[2, 2, 1, 2], &[1.0, 3.0, 0.0, 0.0, 5.0, 7.0, 0.0, 0.0]).unwrap();
        let mut g = Graph::new(false, 0);
        let xv = g.constant(x.clone());
        bn.forward(&mut g, &mut ps, xv).unwrap();
        assert_eq!(ps.value(bn.running_mean).data, vec![0.0, 0.0]);

        let mut g = Graph::new(true, 0);
        let xv = g.constant(x);
        let y = bn.forward(&mut g, &mut ps, xv).unwrap();
        // channel 0: values 1,3,5,7 mean 4, unbiased var 20/3
        assert!((ps.value(bn.running_mean).data[0] - 0.4).abs() < 1e-12);
        assert!((ps.value(bn.running_var).data[0] - (0.9 + 0.1 * 20.0 / 3.0)).abs() < 1e-12);
        let out = &g.value(y).data;
        let m: f64 = [out[0], out[1], out[4], out[5]].iter().sum();
        assert!(m.abs() < 1e-12);
    }
}
