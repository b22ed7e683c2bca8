use alloc::vec;
use alloc::vec::Vec;

use super::graph::{accumulate, Node, Op};
use super::ops::{col2im, swap12};
use super::{gemm, Scalar, Var};
use crate::error::Result;

fn needs<S>(nodes: &[Node<S>], v: Var) -> bool {
    nodes[v.0].needs_grad
}

/// Pushes the gradient `g` of node `i` onto its inputs.
pub(crate) fn propagate<S: Scalar>(
    nodes: &[Node<S>],
    i: usize,
    g: &[S],
    grads: &mut [Option<Vec<S>>],
) -> Result<()> {
    let val = |v: Var| &nodes[v.0].value;
    let out = &nodes[i].value;
    match &nodes[i].op {
        Op::Leaf | Op::Param(_) => {}
        Op::Linear { x, w, b } => {
            let xs = &val(*x).shape;
            let k = *xs.last().unwrap();
            let n = val(*w).shape[0];
            let m = val(*x).len() / k.max(1);
            if needs(nodes, *x) {
                let mut dx = vec![S::zero(); m * k];
                gemm(m, n, k, g, false, &val(*w).data, false, &mut dx, false);
                accumulate(grads, *x, dx);
            }
            if needs(nodes, *w) {
                let mut dw = vec![S::zero(); n * k];
                gemm(n, m, k, g, true, &val(*x).data, false, &mut dw, false);
                accumulate(grads, *w, dw);
            }
            if let Some(b) = b.filter(|b| needs(nodes, *b)) {
                let mut db = vec![S::zero(); n];
                for row in g.chunks(n) {
                    db.iter_mut().zip(row).for_each(|(d, v)| *d += *v);
                }
                accumulate(grads, b, db);
            }
        }
        Op::Bmm { a, b, trans_b } => {
            let (bt, m, k) = (val(*a).shape[0], val(*a).shape[1], val(*a).shape[2]);
            let n = out.shape[2];
            let (av, bv) = (&val(*a).data, &val(*b).data);
            if needs(nodes, *a) {
                let mut da = vec![S::zero(); bt * m * k];
                for t in 0..bt {
                    // da = g · op(B)ᵀ
                    gemm(
                        m,
                        n,
                        k,
                        &g[t * m * n..(t + 1) * m * n],
                        false,
                        &bv[t * k * n..(t + 1) * k * n],
                        !*trans_b,
                        &mut da[t * m * k..(t + 1) * m * k],
                        false,
                    );
                }
                accumulate(grads, *a, da);
            }
            if needs(nodes, *b) {
                let mut db = vec![S::zero(); bt * k * n];
                for t in 0..bt {
                    let gs = &g[t * m * n..(t + 1) * m * n];
                    let as_ = &av[t * m * k..(t + 1) * m * k];
                    let dst = &mut db[t * k * n..(t + 1) * k * n];
                    if *trans_b {
                        gemm(n, m, k, gs, true, as_, false, dst, false);
                    } else {
                        gemm(k, m, n, as_, true, gs, false, dst, false);
                    }
                }
                accumulate(grads, *b, db);
            }
        }
        Op::Conv2d { x, w, b, k, cols } => {
            let xs = &val(*x).shape;
            let (bn, c, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
            let o = val(*w).shape[0];
            let (ckk, hw) = (c * k * k, h * wd);
            if needs(nodes, *w) {
                let mut dw = vec![S::zero(); o * ckk];
                for t in 0..bn {
                    gemm(
                        o,
                        hw,
                        ckk,
                        &g[t * o * hw..(t + 1) * o * hw],
                        false,
                        &cols[t * ckk * hw..(t + 1) * ckk * hw],
                        true,
                        &mut dw,
                        true,
                    );
                }
                accumulate(grads, *w, dw);
            }
            if let Some(b) = b.filter(|b| needs(nodes, *b)) {
                let mut db = vec![S::zero(); o];
                for (j, chunk) in g.chunks(hw).enumerate() {
                    db[j % o] += chunk.iter().copied().sum::<S>();
                }
                accumulate(grads, b, db);
            }
            if needs(nodes, *x) {
                let mut dx = vec![S::zero(); bn * c * hw];
                let mut dcol = vec![S::zero(); ckk * hw];
                let wv = &val(*w).data;
                for t in 0..bn {
                    gemm(ckk, o, hw, wv, true, &g[t * o * hw..(t + 1) * o * hw], false, &mut dcol, false);
                    col2im(&dcol, c, h, wd, *k, &mut dx[t * c * hw..(t + 1) * c * hw]);
                }
                accumulate(grads, *x, dx);
            }
        }
        Op::AvgPool2 { x } => {
            let xs = &val(*x).shape;
            let (bc, h, w) = (xs[0] * xs[1], xs[2], xs[3]);
            let (oh, ow) = (h / 2, w / 2);
            let q = S::lit(0.25);
            let mut dx = vec![S::zero(); bc * h * w];
            for p in 0..bc {
                for y in 0..oh {
                    for xo in 0..ow {
                        let gv = g[(p * oh + y) * ow + xo] * q;
                        let base = p * h * w + 2 * y * w + 2 * xo;
                        dx[base] += gv;
                        dx[base + 1] += gv;
                        dx[base + w] += gv;
                        dx[base + w + 1] += gv;
                    }
                }
            }
            accumulate(grads, *x, dx);
        }
        Op::GlobalAvgPool { x } => {
            let n = val(*x).len();
            let rest = n / g.len();
            let inv = S::lit(1.0 / rest as f64);
            let dx = (0..n).map(|j| g[j / rest] * inv).collect();
            accumulate(grads, *x, dx);
        }
        Op::BatchNorm { x, gamma, beta, xhat, inv_std } => {
            let xs = &val(*x).shape;
            let (b, c) = (xs[0], xs[1]);
            let rest: usize = xs[2..].iter().product();
            let gv = &val(*gamma).data;
            let mut dgamma = vec![S::zero(); c];
            let mut dbeta = vec![S::zero(); c];
            for t in 0..b {
                for ci in 0..c {
                    let o = (t * c + ci) * rest;
                    for j in o..o + rest {
                        dgamma[ci] += g[j] * xhat[j];
                        dbeta[ci] += g[j];
                    }
                }
            }
            if needs(nodes, *x) {
                let nf = S::lit((b * rest) as f64);
                let mut dx = vec![S::zero(); g.len()];
                for t in 0..b {
                    for ci in 0..c {
                        let o = (t * c + ci) * rest;
                        // dxhat = g·γ; Σdxhat = γ·dβ; Σ dxhat·xhat = γ·dγ
                        let scale = gv[ci] * inv_std[ci] / nf;
                        for j in o..o + rest {
                            dx[j] = scale * (nf * g[j] - dbeta[ci] - xhat[j] * dgamma[ci]);
                        }
                    }
                }
                accumulate(grads, *x, dx);
            }
            if needs(nodes, *gamma) {
                accumulate(grads, *gamma, dgamma);
            }
            if needs(nodes, *beta) {
                accumulate(grads, *beta, dbeta);
            }
        }
        Op::BatchNormEval { x, gamma, beta, xhat, inv_std } => {
            let xs = &val(*x).shape;
            let (b, c) = (xs[0], xs[1]);
            let rest: usize = xs[2..].iter().product();
            let gv = &val(*gamma).data;
            let mut dgamma = vec![S::zero(); c];
            let mut dbeta = vec![S::zero(); c];
            let mut dx = vec![S::zero(); g.len()];
            for t in 0..b {
                for ci in 0..c {
                    let o = (t * c + ci) * rest;
                    for j in o..o + rest {
                        dgamma[ci] += g[j] * xhat[j];
                        dbeta[ci] += g[j];
                        dx[j] = g[j] * gv[ci] * inv_std[ci];
                    }
                }
            }
            if needs(nodes, *x) {
                accumulate(grads, *x, dx);
            }
            if needs(nodes, *gamma) {
                accumulate(grads, *gamma, dgamma);
            }
            if needs(nodes, *beta) {
                accumulate(grads, *beta, dbeta);
            }
        }
        Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
            let d = val(*x).last_dim();
            let gv = &val(*gamma).data;
            let df = S::lit(d as f64);
            let mut dgamma = vec![S::zero(); d];
            let mut dbeta = vec![S::zero(); d];
            let mut dx = vec![S::zero(); g.len()];
            for (r, inv) in inv_std.iter().enumerate() {
                let gr = &g[r * d..(r + 1) * d];
                let xr = &xhat[r * d..(r + 1) * d];
                let mut s1 = S::zero();
                let mut s2 = S::zero();
                for j in 0..d {
                    let dxh = gr[j] * gv[j];
                    s1 += dxh;
                    s2 += dxh * xr[j];
                    dgamma[j] += gr[j] * xr[j];
                    dbeta[j] += gr[j];
                }
                let scale = *inv / df;
                for j in 0..d {
                    dx[r * d + j] = scale * (df * gr[j] * gv[j] - s1 - xr[j] * s2);
                }
            }
            if needs(nodes, *x) {
                accumulate(grads, *x, dx);
            }
            if needs(nodes, *gamma) {
                accumulate(grads, *gamma, dgamma);
            }
            if needs(nodes, *beta) {
                accumulate(grads, *beta, dbeta);
            }
        }
        Op::Relu { x } => {
            let dx = val(*x).data.iter().zip(g).map(|(&v, &gv)| if v > S::zero() { gv } else { S::zero() }).collect();
            accumulate(grads, *x, dx);
        }
        Op::Gelu { x } => {
            let r2 = S::lit(core::f64::consts::FRAC_1_SQRT_2);
            let inv_sqrt_2pi = S::lit(0.398_942_280_401_432_7);
            let half = S::lit(0.5);
            let dx = val(*x)
                .data
                .iter()
                .zip(g)
                .map(|(&v, &gv)| {
                    let cdf = half * (S::one() + (v * r2).erf());
                    let pdf = inv_sqrt_2pi * (-half * v * v).exp();
                    gv * (cdf + v * pdf)
                })
                .collect();
            accumulate(grads, *x, dx);
        }
        Op::Sigmoid { x } => {
            let dx = out.data.iter().zip(g).map(|(&y, &gv)| gv * y * (S::one() - y)).collect();
            accumulate(grads, *x, dx);
        }
        Op::Softmax { x } => {
            let d = out.last_dim();
            let mut dx = vec![S::zero(); g.len()];
            for ((yr, gr), dr) in out.data.chunks(d).zip(g.chunks(d)).zip(dx.chunks_mut(d)) {
                let dot: S = yr.iter().zip(gr).map(|(&y, &gv)| y * gv).sum();
                for j in 0..d {
                    dr[j] = yr[j] * (gr[j] - dot);
                }
            }
            accumulate(grads, *x, dx);
        }
        Op::Dropout { x, mask } => {
            accumulate(grads, *x, g.iter().zip(mask).map(|(&a, &m)| a * m).collect());
        }
        Op::Add { a, b } => {
            if needs(nodes, *a) {
                accumulate(grads, *a, g.to_vec());
            }
            if needs(nodes, *b) {
                accumulate(grads, *b, g.to_vec());
            }
        }
        Op::AddBroadcast { x, p } => {
            if needs(nodes, *x) {
                accumulate(grads, *x, g.to_vec());
            }
            if needs(nodes, *p) {
                let n = val(*p).len();
                let mut dp = vec![S::zero(); n];
                for chunk in g.chunks(n) {
                    dp.iter_mut().zip(chunk).for_each(|(d, v)| *d += *v);
                }
                accumulate(grads, *p, dp);
            }
        }
        Op::Sub { a, b } => {
            if needs(nodes, *a) {
                accumulate(grads, *a, g.to_vec());
            }
            if needs(nodes, *b) {
                accumulate(grads, *b, g.iter().map(|&v| -v).collect());
            }
        }
        Op::Mul { a, b } => {
            if needs(nodes, *a) {
                accumulate(grads, *a, g.iter().zip(&val(*b).data).map(|(&x, &y)| x * y).collect());
            }
            if needs(nodes, *b) {
                accumulate(grads, *b, g.iter().zip(&val(*a).data).map(|(&x, &y)| x * y).collect());
            }
        }
        Op::Scale { x, c } => accumulate(grads, *x, g.iter().map(|&v| v * *c).collect()),
        Op::OneMinus { x } => accumulate(grads, *x, g.iter().map(|&v| -v).collect()),
        Op::Reshape { x } => accumulate(grads, *x, g.to_vec()),
        Op::SwapAxes12 { x, dims } => {
            let [a, b, c, d] = *dims;
            accumulate(grads, *x, swap12(g, [a, c, b, d]));
        }
        Op::Concat { a, b } => {
            let (da, db) = (val(*a).last_dim(), val(*b).last_dim());
            let rows = g.len() / (da + db).max(1);
            let mut ga = Vec::with_capacity(rows * da);
            let mut gb = Vec::with_capacity(rows * db);
            for r in 0..rows {
                let row = &g[r * (da + db)..(r + 1) * (da + db)];
                ga.extend_from_slice(&row[..da]);
                gb.extend_from_slice(&row[da..]);
            }
            if needs(nodes, *a) {
                accumulate(grads, *a, ga);
            }
            if needs(nodes, *b) {
                accumulate(grads, *b, gb);
            }
        }
        Op::ScaleChannels { x, a } => {
            let av = &val(*a).data;
            let rest = g.len() / av.len().max(1);
            if needs(nodes, *x) {
                let dx = g.iter().enumerate().map(|(j, &v)| v * av[j / rest]).collect();
                accumulate(grads, *x, dx);
            }
            if needs(nodes, *a) {
                let xv = &val(*x).data;
                let da = (0..av.len())
                    .map(|c| (c * rest..(c + 1) * rest).map(|j| g[j] * xv[j]).sum::<S>())
                    .collect();
                accumulate(grads, *a, da);
            }
        }
        Op::SoftCrossEntropy { logits, targets, probs } => {
            let c = val(*logits).shape[1];
            let b = val(*logits).shape[0];
            let scale = g[0] / S::lit(b as f64);
            let mut dz = vec![S::zero(); probs.len()];
            for r in 0..b {
                let tsum: S = targets[r * c..(r + 1) * c].iter().copied().sum();
                for j in r * c..(r + 1) * c {
                    dz[j] = scale * (probs[j] * tsum - targets[j]);
                }
            }
            accumulate(grads, *logits, dz);
        }
        Op::Sum { x } => accumulate(grads, *x, vec![g[0]; val(*x).len()]),
        Op::Mean { x } => {
            let n = val(*x).len();
            accumulate(grads, *x, vec![g[0] / S::lit(n.max(1) as f64); n]);
        }
    }
    Ok(())
}
