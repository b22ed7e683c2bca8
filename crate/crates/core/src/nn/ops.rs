use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use super::graph::Op;
use super::{gemm, Graph, Scalar, Tensor, Var};
use crate::error::{bail_shape, bail_validation, Result};

/// Splits a shape into (rows, last).
fn rows_last(shape: &[usize]) -> (usize, usize) {
    let last = *shape.last().unwrap_or(&1);
    let rows = if last == 0 { 0 } else { shape.iter().product::<usize>() / last };
    (rows, last)
}

/// im2col for one `[C,H,W]` image, `k×k` kernel, same padding, stride 1.
/// Output is `[C·k·k, H·W]`.
pub(crate) fn im2col<S: Scalar>(x: &[S], c: usize, h: usize, w: usize, k: usize, out: &mut [S]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    for ci in 0..c {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut out[row * hw..(row + 1) * hw];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + dy;
                    let drow = &mut dst[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        drow.iter_mut().for_each(|v| *v = S::zero());
                        continue;
                    }
                    let srow = &plane[sy as usize * w..(sy as usize + 1) * w];
                    for (xo, d) in drow.iter_mut().enumerate() {
                        let sx = xo as isize + dx;
                        *d = if sx < 0 || sx >= w as isize { S::zero() } else { srow[sx as usize] };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back onto the image.
pub(crate) fn col2im<S: Scalar>(cols: &[S], c: usize, h: usize, w: usize, k: usize, dx: &mut [S]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    for ci in 0..c {
        let plane = &mut dx[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &cols[row * hw..(row + 1) * hw];
                let dy = ky as isize - pad;
                let ddx = kx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let prow = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    for xo in 0..w {
                        let sx = xo as isize + ddx;
                        if sx >= 0 && sx < w as isize {
                            prow[sx as usize] += src[y * w + xo];
                        }
                    }
                }
            }
        }
    }
}

impl<S: Scalar> Graph<S> {
    /// `x·Wᵀ + b` over the last axis; `w` is `[out, in]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let (m, k) = rows_last(&xs);
        if ws.len() != 2 || ws[1] != k {
            bail_shape!("linear: input {:?} incompatible with weight {:?}", xs, ws);
        }
        let n = ws[0];
        let mut out = vec![S::zero(); m * n];
        gemm(m, k, n, &self.value(x).data, false, &self.value(w).data, true, &mut out, false);
        if let Some(b) = b {
            let bv = &self.value(b).data;
            if bv.len() != n {
                bail_shape!("linear: bias length {} != {}", bv.len(), n);
            }
            for row in out.chunks_mut(n) {
                row.iter_mut().zip(bv).for_each(|(o, b)| *o += *b);
            }
        }
        let mut shape = xs;
        *shape.last_mut().unwrap() = n;
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        Ok(self.push(Tensor { shape, data: out }, Op::Linear { x, w, b }, &inputs))
    }

    /// Batched matmul of `[B,m,k]` with `[B,k,n]` (or `[B,n,k]` when `trans_b`).
    pub fn bmm(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let as_ = self.shape(a).to_vec();
        let bs = self.shape(b).to_vec();
        if as_.len() != 3 || bs.len() != 3 || as_[0] != bs[0] {
            bail_shape!("bmm: shapes {:?} and {:?}", as_, bs);
        }
        let (bt, m, k) = (as_[0], as_[1], as_[2]);
        let (kb, n) = if trans_b { (bs[2], bs[1]) } else { (bs[1], bs[2]) };
        if kb != k {
            bail_shape!("bmm: inner dims {} and {}", k, kb);
        }
        let mut out = vec![S::zero(); bt * m * n];
        let (av, bv) = (&self.value(a).data, &self.value(b).data);
        for i in 0..bt {
            gemm(
                m,
                k,
                n,
                &av[i * m * k..(i + 1) * m * k],
                false,
                &bv[i * k * n..(i + 1) * k * n],
                trans_b,
                &mut out[i * m * n..(i + 1) * m * n],
                false,
            );
        }
        Ok(self.push(Tensor { shape: vec![bt, m, n], data: out }, Op::Bmm { a, b, trans_b }, &[a, b]))
    }

    /// Same-padded stride-1 convolution. `x` is `[B,C,H,W]`, `w` is `[O,C,k,k]` with odd `k`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 4 || ws.len() != 4 || ws[1] != xs[1] || ws[2] != ws[3] || ws[2] % 2 == 0 {
            bail_shape!("conv2d: input {:?} weight {:?}", xs, ws);
        }
        let (bn, c, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let (o, k) = (ws[0], ws[2]);
        let ckk = c * k * k;
        let hw = h * wd;
        let mut cols = vec![S::zero(); bn * ckk * hw];
        let mut out = vec![S::zero(); bn * o * hw];
        {
            let xv = &self.value(x).data;
            let wv = &self.value(w).data;
            for i in 0..bn {
                let col = &mut cols[i * ckk * hw..(i + 1) * ckk * hw];
                im2col(&xv[i * c * hw..(i + 1) * c * hw], c, h, wd, k, col);
                gemm(o, ckk, hw, wv, false, col, false, &mut out[i * o * hw..(i + 1) * o * hw], false);
            }
        }
        if let Some(b) = b {
            let bv = self.value(b).data.clone();
            if bv.len() != o {
                bail_shape!("conv2d: bias length {} != {}", bv.len(), o);
            }
            for (j, chunk) in out.chunks_mut(hw).enumerate() {
                let bj = bv[j % o];
                chunk.iter_mut().for_each(|v| *v += bj);
            }
        }
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        Ok(self.push(Tensor { shape: vec![bn, o, h, wd], data: out }, Op::Conv2d { x, w, b, k, cols }, &inputs))
    }

    /// 2×2 average pooling with stride 2 (odd trailing rows/columns are dropped).
    pub fn avg_pool2(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 || xs[2] < 2 || xs[3] < 2 {
            bail_shape!("avg_pool2: shape {:?}", xs);
        }
        let (bc, h, w) = (xs[0] * xs[1], xs[2], xs[3]);
        let (oh, ow) = (h / 2, w / 2);
        let quarter = S::lit(0.25);
        let xv = &self.value(x).data;
        let mut out = vec![S::zero(); bc * oh * ow];
        for p in 0..bc {
            let src = &xv[p * h * w..];
            for y in 0..oh {
                for xo in 0..ow {
                    let i = 2 * y * w + 2 * xo;
                    out[(p * oh + y) * ow + xo] = (src[i] + src[i + 1] + src[i + w] + src[i + w + 1]) * quarter;
                }
            }
        }
        Ok(self.push(Tensor { shape: vec![xs[0], xs[1], oh, ow], data: out }, Op::AvgPool2 { x }, &[x]))
    }

    /// Mean over all axes after the second: `[B,C,...] -> [B,C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() < 3 {
            bail_shape!("global_avg_pool: shape {:?}", xs);
        }
        let rest: usize = xs[2..].iter().product();
        let inv = S::lit(1.0 / rest as f64);
        let out = self.value(x).data.chunks(rest).map(|c| c.iter().copied().sum::<S>() * inv).collect();
        Ok(self.push(Tensor { shape: vec![xs[0], xs[1]], data: out }, Op::GlobalAvgPool { x }, &[x]))
    }

    /// Channel statistics over `[B,C,...]`: (count per channel, stride of the rest).
    fn bn_dims(&self, x: Var, gamma: Var, beta: Var) -> Result<(usize, usize, usize)> {
        let xs = self.shape(x);
        if xs.len() < 2 {
            bail_shape!("batch_norm: shape {:?}", xs);
        }
        let (b, c) = (xs[0], xs[1]);
        let rest: usize = xs[2..].iter().product();
        if self.value(gamma).len() != c || self.value(beta).len() != c {
            bail_shape!("batch_norm: affine length does not match {} channels", c);
        }
        Ok((b, c, rest))
    }

    /// Batch normalisation with batch statistics. Returns the output plus the
    /// per-channel batch mean and unbiased variance for running-average updates.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<(Var, Vec<S>, Vec<S>)> {
        let (b, c, rest) = self.bn_dims(x, gamma, beta)?;
        let n = b * rest;
        if n < 2 {
            bail_validation!("batch_norm: need at least 2 values per channel in training");
        }
        let xv = &self.value(x).data;
        let (gv, bv) = (&self.value(gamma).data, &self.value(beta).data);
        let mut mean = vec![S::zero(); c];
        let mut var = vec![S::zero(); c];
        for bi in 0..b {
            for ci in 0..c {
                let s = &xv[(bi * c + ci) * rest..(bi * c + ci + 1) * rest];
                mean[ci] += s.iter().copied().sum::<S>();
            }
        }
        let nf = S::lit(n as f64);
        mean.iter_mut().for_each(|m| *m /= nf);
        for bi in 0..b {
            for ci in 0..c {
                let s = &xv[(bi * c + ci) * rest..(bi * c + ci + 1) * rest];
                var[ci] += s.iter().map(|&v| (v - mean[ci]) * (v - mean[ci])).sum::<S>();
            }
        }
        let inv_std: Vec<S> = var.iter().map(|&v| S::one() / (v / nf + S::lit(eps)).sqrt()).collect();
        let unbiased: Vec<S> = var.iter().map(|&v| v / S::lit((n - 1) as f64)).collect();
        let mut xhat = vec![S::zero(); xv.len()];
        let mut out = vec![S::zero(); xv.len()];
        for bi in 0..b {
            for ci in 0..c {
                let o = (bi * c + ci) * rest;
                for j in o..o + rest {
                    xhat[j] = (xv[j] - mean[ci]) * inv_std[ci];
                    out[j] = xhat[j] * gv[ci] + bv[ci];
                }
            }
        }
        let shape = self.shape(x).to_vec();
        let v = self.push(
            Tensor { shape, data: out },
            Op::BatchNorm { x, gamma, beta, xhat, inv_std },
            &[x, gamma, beta],
        );
        Ok((v, mean, unbiased))
    }

    /// Batch normalisation with fixed statistics.
    pub fn batch_norm_eval(&mut self, x: Var, gamma: Var, beta: Var, mean: &[S], var: &[S], eps: f64) -> Result<Var> {
        let (b, c, rest) = self.bn_dims(x, gamma, beta)?;
        if mean.len() != c || var.len() != c {
            bail_shape!("batch_norm: running statistics do not match {} channels", c);
        }
        let xv = &self.value(x).data;
        let (gv, bv) = (&self.value(gamma).data, &self.value(beta).data);
        let inv_std: Vec<S> = var.iter().map(|&v| S::one() / (v + S::lit(eps)).sqrt()).collect();
        let mut xhat = vec![S::zero(); xv.len()];
        let mut out = vec![S::zero(); xv.len()];
        for bi in 0..b {
            for ci in 0..c {
                let o = (bi * c + ci) * rest;
                for j in o..o + rest {
                    xhat[j] = (xv[j] - mean[ci]) * inv_std[ci];
                    out[j] = xhat[j] * gv[ci] + bv[ci];
                }
            }
        }
        let shape = self.shape(x).to_vec();
        Ok(self.push(
            Tensor { shape, data: out },
            Op::BatchNormEval { x, gamma, beta, xhat, inv_std },
            &[x, gamma, beta],
        ))
    }

    /// Layer normalisation over the last axis.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (rows, d) = rows_last(&shape);
        if self.value(gamma).len() != d || self.value(beta).len() != d {
            bail_shape!("layer_norm: affine length does not match {}", d);
        }
        let xv = &self.value(x).data;
        let (gv, bv) = (&self.value(gamma).data, &self.value(beta).data);
        let df = S::lit(d as f64);
        let mut xhat = vec![S::zero(); xv.len()];
        let mut out = vec![S::zero(); xv.len()];
        let mut inv_std = vec![S::zero(); rows];
        for r in 0..rows {
            let s = &xv[r * d..(r + 1) * d];
            let mean = s.iter().copied().sum::<S>() / df;
            let var = s.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / df;
            let inv = S::one() / (var + S::lit(eps)).sqrt();
            inv_std[r] = inv;
            for j in 0..d {
                let xh = (s[j] - mean) * inv;
                xhat[r * d + j] = xh;
                out[r * d + j] = xh * gv[j] + bv[j];
            }
        }
        Ok(self.push(
            Tensor { shape, data: out },
            Op::LayerNorm { x, gamma, beta, xhat, inv_std },
            &[x, gamma, beta],
        ))
    }

    fn unary(&mut self, x: Var, op: Op<S>, f: impl Fn(S) -> S) -> Var {
        let t = self.value(x);
        let out = Tensor { shape: t.shape.clone(), data: t.data.iter().map(|&v| f(v)).collect() };
        self.push(out, op, &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Relu { x }, |v| if v > S::zero() { v } else { S::zero() })
    }

    /// Exact GELU, `x·Φ(x)`.
    pub fn gelu(&mut self, x: Var) -> Var {
        let half = S::lit(0.5);
        let r2 = S::lit(core::f64::consts::FRAC_1_SQRT_2);
        self.unary(x, Op::Gelu { x }, |v| half * v * (S::one() + (v * r2).erf()))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid { x }, sigmoid)
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let d = t.last_dim();
        let mut out = t.data.clone();
        for row in out.chunks_mut(d) {
            softmax_in_place(row);
        }
        let shape = t.shape.clone();
        self.push(Tensor { shape, data: out }, Op::Softmax { x }, &[x])
    }

    /// Inverted dropout; identity outside training or when `p == 0`.
    pub fn dropout(&mut self, x: Var, p: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            bail_validation!("dropout probability {p} outside [0, 1)");
        }
        if !self.is_training() || p == 0.0 {
            return Ok(x);
        }
        let n = self.value(x).len();
        let keep = S::lit(1.0 / (1.0 - p));
        let mask: Vec<S> = (0..n).map(|_| if self.rng.random::<f64>() < p { S::zero() } else { keep }).collect();
        let t = self.value(x);
        let out = Tensor { shape: t.shape.clone(), data: t.data.iter().zip(&mask).map(|(&v, &m)| v * m).collect() };
        Ok(self.push(out, Op::Dropout { x, mask }, &[x]))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            bail_shape!("{what}: shapes {:?} and {:?}", self.shape(a), self.shape(b));
        }
        Ok(())
    }

    fn binary(&mut self, a: Var, b: Var, op: Op<S>, f: impl Fn(S, S) -> S) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data.iter().zip(&tb.data).map(|(&x, &y)| f(x, y)).collect();
        let shape = ta.shape.clone();
        self.push(Tensor { shape, data }, op, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        Ok(self.binary(a, b, Op::Add { a, b }, |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        Ok(self.binary(a, b, Op::Sub { a, b }, |x, y| x - y))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        Ok(self.binary(a, b, Op::Mul { a, b }, |x, y| x * y))
    }

    /// Adds `p` to every leading slice of `x`; `p`'s shape must equal `x`'s trailing axes.
    pub fn add_broadcast(&mut self, x: Var, p: Var) -> Result<Var> {
        let (xs, ps) = (self.shape(x), self.shape(p));
        if ps.len() > xs.len() || xs[xs.len() - ps.len()..] != *ps {
            bail_shape!("add_broadcast: {:?} onto {:?}", ps, xs);
        }
        let pv = &self.value(p).data;
        let n = pv.len();
        let t = self.value(x);
        let data = t.data.iter().enumerate().map(|(i, &v)| v + pv[i % n]).collect();
        let shape = t.shape.clone();
        Ok(self.push(Tensor { shape, data }, Op::AddBroadcast { x, p }, &[x, p]))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let c = S::lit(c);
        self.unary(x, Op::Scale { x, c }, |v| v * c)
    }

    /// `1 − x`.
    pub fn one_minus(&mut self, x: Var) -> Var {
        self.unary(x, Op::OneMinus { x }, |v| S::one() - v)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x);
        if shape.iter().product::<usize>() != t.len() {
            bail_shape!("reshape: {:?} to {:?}", t.shape, shape);
        }
        let out = Tensor { shape: shape.to_vec(), data: t.data.clone() };
        Ok(self.push(out, Op::Reshape { x }, &[x]))
    }

    /// Swaps axes 1 and 2 of a rank-4 tensor: `[a,b,c,d] -> [a,c,b,d]`.
    pub fn swap_axes12(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 {
            bail_shape!("swap_axes12: rank {} input", s.len());
        }
        let dims = [s[0], s[1], s[2], s[3]];
        let data = swap12(&self.value(x).data, dims);
        Ok(self.push(Tensor { shape: vec![s[0], s[2], s[1], s[3]], data }, Op::SwapAxes12 { x, dims }, &[x]))
    }

    /// Concatenation along the last axis.
    pub fn concat_last(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != sb.len() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
            bail_shape!("concat_last: {:?} and {:?}", sa, sb);
        }
        let (da, db) = (sa[sa.len() - 1], sb[sb.len() - 1]);
        let (av, bv) = (&self.value(a).data, &self.value(b).data);
        let rows = if da + db == 0 { 0 } else { (av.len() + bv.len()) / (da + db) };
        let mut data = Vec::with_capacity(av.len() + bv.len());
        for r in 0..rows {
            data.extend_from_slice(&av[r * da..(r + 1) * da]);
            data.extend_from_slice(&bv[r * db..(r + 1) * db]);
        }
        let mut shape = sa;
        *shape.last_mut().unwrap() = da + db;
        Ok(self.push(Tensor { shape, data }, Op::Concat { a, b }, &[a, b]))
    }

    /// Multiplies each `[b, c, ...]` slice of `x` by `a[b, c]`.
    pub fn scale_channels(&mut self, x: Var, a: Var) -> Result<Var> {
        let (xs, as_) = (self.shape(x).to_vec(), self.shape(a).to_vec());
        if xs.len() < 2 || as_ != xs[..2] {
            bail_shape!("scale_channels: {:?} by {:?}", xs, as_);
        }
        let rest: usize = xs[2..].iter().product();
        let av = &self.value(a).data;
        let data = self.value(x).data.chunks(rest.max(1)).zip(av).flat_map(|(c, &s)| c.iter().map(move |&v| v * s)).collect();
        Ok(self.push(Tensor { shape: xs, data }, Op::ScaleChannels { x, a }, &[x, a]))
    }

    /// Mean over the batch of `−Σ_c t_c · log softmax(z)_c` for soft targets `t` (`[B,C]`).
    pub fn soft_cross_entropy(&mut self, logits: Var, targets: &[S]) -> Result<Var> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 || targets.len() != s[0] * s[1] {
            bail_shape!("soft_cross_entropy: logits {:?}, {} targets", s, targets.len());
        }
        let (b, c) = (s[0], s[1]);
        let zv = &self.value(logits).data;
        let mut probs = zv.clone();
        let mut total = S::zero();
        for i in 0..b {
            let row = &zv[i * c..(i + 1) * c];
            let max = row.iter().copied().fold(S::neg_infinity(), S::max);
            let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<S>().ln();
            for j in 0..c {
                let lp = row[j] - lse;
                probs[i * c + j] = lp.exp();
                total -= targets[i * c + j] * lp;
            }
        }
        let loss = total / S::lit(b as f64);
        let op = Op::SoftCrossEntropy { logits, targets: targets.to_vec(), probs };
        Ok(self.push(Tensor::scalar(loss), op, &[logits]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let v = self.value(x).data.iter().copied().sum::<S>();
        self.push(Tensor::scalar(v), Op::Sum { x }, &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let v = t.data.iter().copied().sum::<S>() / S::lit(t.len().max(1) as f64);
        self.push(Tensor::scalar(v), Op::Mean { x }, &[x])
    }
}

pub(crate) fn sigmoid<S: Scalar>(v: S) -> S {
    if v >= S::zero() {
        S::one() / (S::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (S::one() + e)
    }
}

pub(crate) fn softmax_in_place<S: Scalar>(row: &mut [S]) {
    let max = row.iter().copied().fold(S::neg_infinity(), S::max);
    let mut sum = S::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    row.iter_mut().for_each(|v| *v /= sum);
}

pub(crate) fn swap12<S: Scalar>(src: &[S], [a, b, c, d]: [usize; 4]) -> Vec<S> {
    let mut out = vec![S::zero(); src.len()];
    for i in 0..a {
        for j in 0..b {
            for k in 0..c {
                let s = ((i * b + j) * c + k) * d;
                let t = ((i * c + k) * b + j) * d;
                out[t..t + d].copy_from_slice(&src[s..s + d]);
            }
        }
    }
    out
}
