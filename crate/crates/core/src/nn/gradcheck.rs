//! Central-difference checks of every tape operation at f64.

use alloc::vec;
use alloc::vec::Vec;

use proptest::prelude::*;
use rand::Rng as _;

use super::layers::{LayerNorm, MultiHeadAttention};
use super::{Graph, ParamStore, Tensor, Var};
use crate::error::Result;
use crate::rng::{self, Rng};

const H: f64 = 1e-5;
const REL_TOL: f64 = 1e-4;

type Build = dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>;

fn randn(rng: &mut Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v = rng::normal(rng);
            // keep clear of the ReLU kink
            if v.abs() < 1e-2 { v + 0.05 } else { v }
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}

/// Scalar objective `Σ r ⊙ f(x)` with fixed random weights `r`.
fn objective(build: &Build, inputs: &[Tensor<f64>], store: &ParamStore<f64>, weights_seed: u64, grads: bool) -> (f64, Vec<Vec<f64>>) {
    let mut g = Graph::new(true, 99);
    let vars: Vec<Var> = inputs.iter().map(|t| if grads { g.input(t.clone()) } else { g.constant(t.clone()) }).collect();
    let out = build(&mut g, &vars).unwrap();
    let mut r = rng::seeded(weights_seed);
    let w = randn(&mut r, &g.shape(out).to_vec());
    let wv = g.constant(w);
    let prod = g.mul(out, wv).unwrap();
    let loss = g.sum(prod);
    let value = g.value(loss).data[0];
    if !grads {
        return (value, Vec::new());
    }
    let mut ps = store.clone();
    g.backward(loss, &mut ps).unwrap();
    let gs = vars.iter().map(|&v| g.grad(v).map(|s| s.to_vec()).unwrap_or_else(|| vec![0.0; g.value(v).len()])).collect();
    (value, gs)
}

fn rel_err(a: f64, n: f64) -> f64 {
    let scale = a.abs().max(n.abs());
    if scale < 1e-7 {
        0.0
    } else {
        (a - n).abs() / scale
    }
}

fn check(name: &str, build: &Build, inputs: Vec<Tensor<f64>>) {
    check_with(name, build, inputs, &ParamStore::new());
}

/// `store` must hold every parameter `build` reads.
fn check_with(name: &str, build: &Build, inputs: Vec<Tensor<f64>>, store: &ParamStore<f64>) {
    let (_, analytic) = objective(build, &inputs, store, 7, true);
    for (i, t) in inputs.iter().enumerate() {
        for j in 0..t.len() {
            let mut plus = inputs.clone();
            plus[i].data[j] += H;
            let mut minus = inputs.clone();
            minus[i].data[j] -= H;
            let num = (objective(build, &plus, store, 7, false).0 - objective(build, &minus, store, 7, false).0) / (2.0 * H);
            let a = analytic[i][j];
            assert!(
                rel_err(a, num) <= REL_TOL,
                "{name}: input {i} element {j} shape {:?}: analytic {a} numeric {num}",
                t.shape
            );
        }
    }
}

/// Runs `check` on three random shapes produced by `shapes`.
fn check3(name: &str, build: &Build, shapes: impl Fn(&mut Rng) -> Vec<Vec<usize>>) {
    let mut r = rng::seeded(name.len() as u64 * 31 + 5);
    for _ in 0..3 {
        let ss = shapes(&mut r);
        let inputs = ss.iter().map(|s| randn(&mut r, s)).collect();
        check(name, build, inputs);
    }
}

fn dim(r: &mut Rng, lo: usize, hi: usize) -> usize {
    r.random_range(lo..=hi)
}

#[test]
fn linear() {
    check3("linear", &|g, v| g.linear(v[0], v[1], Some(v[2])), |r| {
        let (m, k, n) = (dim(r, 1, 4), dim(r, 1, 5), dim(r, 1, 4));
        vec![vec![m, k], vec![n, k], vec![n]]
    });
    check3("linear3d", &|g, v| g.linear(v[0], v[1], None), |r| {
        let (b, t, k, n) = (dim(r, 1, 3), dim(r, 1, 3), dim(r, 1, 4), dim(r, 1, 4));
        vec![vec![b, t, k], vec![n, k]]
    });
}

#[test]
fn bmm() {
    check3("bmm", &|g, v| g.bmm(v[0], v[1], false), |r| {
        let (b, m, k, n) = (dim(r, 1, 3), dim(r, 1, 4), dim(r, 1, 4), dim(r, 1, 4));
        vec![vec![b, m, k], vec![b, k, n]]
    });
    check3("bmm_t", &|g, v| g.bmm(v[0], v[1], true), |r| {
        let (b, m, k, n) = (dim(r, 1, 3), dim(r, 1, 4), dim(r, 1, 4), dim(r, 1, 4));
        vec![vec![b, m, k], vec![b, n, k]]
    });
}

#[test]
fn conv2d() {
    check3("conv2d", &|g, v| g.conv2d(v[0], v[1], Some(v[2])), |r| {
        let (b, c, h, w, o) = (dim(r, 1, 2), dim(r, 1, 3), dim(r, 2, 6), dim(r, 2, 6), dim(r, 1, 3));
        let k = if r.random::<bool>() { 3 } else { 5 };
        vec![vec![b, c, h, w], vec![o, c, k, k], vec![o]]
    });
}

#[test]
fn pooling() {
    check3("avg_pool2", &|g, v| g.avg_pool2(v[0]), |r| {
        vec![vec![dim(r, 1, 2), dim(r, 1, 3), dim(r, 2, 7), dim(r, 2, 7)]]
    });
    check3("global_avg_pool", &|g, v| g.global_avg_pool(v[0]), |r| {
        vec![vec![dim(r, 1, 3), dim(r, 1, 3), dim(r, 1, 4), dim(r, 1, 4)]]
    });
}

#[test]
fn batch_norm() {
    check3("batch_norm_train", &|g, v| Ok(g.batch_norm_train(v[0], v[1], v[2], 1e-5)?.0), |r| {
        let c = dim(r, 1, 3);
        vec![vec![dim(r, 2, 3), c, dim(r, 1, 3), dim(r, 1, 3)], vec![c], vec![c]]
    });
    check3(
        "batch_norm_eval",
        &|g, v| {
            let c = g.shape(v[1]).to_vec()[0];
            let mean: Vec<f64> = (0..c).map(|i| 0.1 * i as f64).collect();
            let var: Vec<f64> = (0..c).map(|i| 0.5 + i as f64).collect();
            g.batch_norm_eval(v[0], v[1], v[2], &mean, &var, 1e-5)
        },
        |r| {
            let c = dim(r, 1, 3);
            vec![vec![dim(r, 1, 3), c, dim(r, 1, 3), dim(r, 1, 3)], vec![c], vec![c]]
        },
    );
}

#[test]
fn layer_norm() {
    check3("layer_norm", &|g, v| g.layer_norm(v[0], v[1], v[2], 1e-5), |r| {
        let d = dim(r, 2, 6);
        vec![vec![dim(r, 1, 3), dim(r, 1, 3), d], vec![d], vec![d]]
    });
}

#[test]
fn activations() {
    let shape = |r: &mut Rng| vec![vec![dim(r, 1, 4), dim(r, 1, 5)]];
    check3("relu", &|g, v| Ok(g.relu(v[0])), shape);
    check3("gelu", &|g, v| Ok(g.gelu(v[0])), shape);
    check3("sigmoid", &|g, v| Ok(g.sigmoid(v[0])), shape);
    check3("softmax", &|g, v| Ok(g.softmax(v[0])), shape);
    check3("dropout", &|g, v| g.dropout(v[0], 0.3), shape);
}

#[test]
fn elementwise() {
    let two = |r: &mut Rng| {
        let s = vec![dim(r, 1, 4), dim(r, 1, 4)];
        vec![s.clone(), s]
    };
    check3("add", &|g, v| g.add(v[0], v[1]), two);
    check3("sub", &|g, v| g.sub(v[0], v[1]), two);
    check3("mul", &|g, v| g.mul(v[0], v[1]), two);
    let one = |r: &mut Rng| vec![vec![dim(r, 1, 4), dim(r, 1, 4)]];
    check3("scale", &|g, v| Ok(g.scale(v[0], -1.7)), one);
    check3("one_minus", &|g, v| Ok(g.one_minus(v[0])), one);
    check3("sum", &|g, v| Ok(g.sum(v[0])), one);
    check3("mean", &|g, v| Ok(g.mean(v[0])), one);
    check3("add_broadcast", &|g, v| g.add_broadcast(v[0], v[1]), |r| {
        let (n, d) = (dim(r, 1, 3), dim(r, 1, 4));
        vec![vec![dim(r, 1, 3), n, d], vec![n, d]]
    });
}

#[test]
fn shape_ops() {
    check3("reshape", &|g, v| {
        let n = g.value(v[0]).len();
        g.reshape(v[0], &[n])
    }, |r| vec![vec![dim(r, 1, 3), dim(r, 1, 4)]]);
    check3("swap_axes12", &|g, v| g.swap_axes12(v[0]), |r| {
        vec![vec![dim(r, 1, 2), dim(r, 1, 3), dim(r, 1, 3), dim(r, 1, 3)]]
    });
    check3("concat_last", &|g, v| g.concat_last(v[0], v[1]), |r| {
        let (a, b) = (dim(r, 1, 3), dim(r, 1, 3));
        vec![vec![a, b, dim(r, 1, 3)], vec![a, b, dim(r, 1, 3)]]
    });
    check3("scale_channels", &|g, v| g.scale_channels(v[0], v[1]), |r| {
        let (b, c) = (dim(r, 1, 3), dim(r, 1, 3));
        vec![vec![b, c, dim(r, 1, 3), dim(r, 1, 3)], vec![b, c]]
    });
}

#[test]
fn soft_cross_entropy() {
    check3(
        "soft_cross_entropy",
        &|g, v| {
            let s = g.shape(v[0]).to_vec();
            let (b, c) = (s[0], s[1]);
            let mut t = vec![0.0; b * c];
            for i in 0..b {
                for j in 0..c {
                    t[i * c + j] = if j == i % c { 0.9 } else { 0.1 / (c - 1).max(1) as f64 };
                }
            }
            g.soft_cross_entropy(v[0], &t)
        },
        |r| vec![vec![dim(r, 1, 4), dim(r, 2, 6)]],
    );
}

#[test]
fn attention_through_param_store() {
    let mut r = rng::seeded(3);
    let mut ps = ParamStore::<f64>::new();
    let mha = MultiHeadAttention::new(&mut ps, "mha", 4, 2, &mut r).unwrap();
    let ln = LayerNorm::new(&mut ps, "ln", 4);
    let q = randn(&mut r, &[2, 3, 4]);
    let c = randn(&mut r, &[2, 2, 4]);
    let wt = randn(&mut r, &[2, 3, 4]);
    let eval = |ps: &mut ParamStore<f64>, grads: bool| {
        let mut g = Graph::new(false, 0);
        let (qv, cv) = (g.constant(q.clone()), g.constant(c.clone()));
        let y = mha.forward(&mut g, ps, qv, cv).unwrap();
        let y = ln.forward(&mut g, ps, y).unwrap();
        let w = g.constant(wt.clone());
        let p = g.mul(y, w).unwrap();
        let l = g.sum(p);
        if grads {
            g.backward(l, ps).unwrap();
        }
        g.value(l).data[0]
    };
    ps.zero_grad();
    eval(&mut ps, true);
    let analytic: Vec<Vec<f64>> = ps.entries().iter().map(|e| e.grad.clone()).collect();
    for id in ps.ids().collect::<Vec<_>>() {
        for j in 0..ps.value(id).len() {
            let orig = ps.value(id).data[j];
            ps.value_mut(id).data[j] = orig + H;
            let fp = eval(&mut ps, false);
            ps.value_mut(id).data[j] = orig - H;
            let fm = eval(&mut ps, false);
            ps.value_mut(id).data[j] = orig;
            let num = (fp - fm) / (2.0 * H);
            let a = analytic[id.0][j];
            assert!(rel_err(a, num) <= REL_TOL, "{}[{j}]: {a} vs {num}", ps.get(id).name);
        }
    }
}

#[test]
fn attention_inputs() {
    let mut r = rng::seeded(8);
    let mut ps = ParamStore::<f64>::new();
    let mha = MultiHeadAttention::new(&mut ps, "mha", 8, 4, &mut r).unwrap();
    let store = ps.clone();
    let build = move |g: &mut Graph<f64>, v: &[Var]| mha.forward(g, &ps, v[0], v[1]);
    check_with("mha", &build, vec![randn(&mut r, &[2, 3, 8]), randn(&mut r, &[2, 3, 8])], &store);
}

#[test]
fn backward_accumulates_into_store() {
    let mut r = rng::seeded(1);
    let mut ps = ParamStore::<f64>::new();
    let lin = super::layers::Linear::new(&mut ps, "l", 3, 2, &mut r);
    let x = randn(&mut r, &[4, 3]);
    let run = |ps: &mut ParamStore<f64>| {
        let mut g = Graph::new(false, 0);
        let xv = g.constant(x.clone());
        let y = lin.forward(&mut g, ps, xv).unwrap();
        let l = g.sum(y);
        g.backward(l, ps).unwrap();
    };
    run(&mut ps);
    let once = ps.get(lin.w).grad.clone();
    run(&mut ps);
    for (a, b) in ps.get(lin.w).grad.iter().zip(&once) {
        assert!((a - 2.0 * b).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn softmax_rows_sum_to_one(vals in proptest::collection::vec(-30.0f64..30.0, 1..24), d in 1usize..6) {
        let n = vals.len() / d * d;
        prop_assume!(n > 0);
        let mut g = Graph::<f64>::new(false, 0);
        let x = g.constant(Tensor::new(&[n / d, d], vals[..n].to_vec()).unwrap());
        let y = g.softmax(x);
        for row in g.value(y).data.chunks(d) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
    }

    #[test]
    fn conv_is_linear_in_input(seed in any::<u64>(), a in -3.0f64..3.0) {
        let mut r = rng::seeded(seed);
        let x = randn(&mut r, &[1, 2, 4, 5]);
        let w = randn(&mut r, &[3, 2, 3, 3]);
        let mut g = Graph::<f64>::new(false, 0);
        let xv = g.constant(x.clone());
        let wv = g.constant(w.clone());
        let y = g.conv2d(xv, wv, None).unwrap();
        let xs = g.constant(Tensor::new(&x.shape, x.data.iter().map(|v| v * a).collect()).unwrap());
        let ys = g.conv2d(xs, wv, None).unwrap();
        for (p, q) in g.value(y).data.iter().zip(&g.value(ys).data) {
            prop_assert!((p * a - q).abs() < 1e-9);
        }
    }
}

#[test]
fn conv_matches_direct_loop() {
    let mut r = rng::seeded(11);
    let (b, c, h, w, o, k) = (2, 2, 5, 4, 3, 3);
    let x = randn(&mut r, &[b, c, h, w]);
    let wt = randn(&mut r, &[o, c, k, k]);
    let bias = randn(&mut r, &[o]);
    let mut g = Graph::<f64>::new(false, 0);
    let (xv, wv, bv) = (g.constant(x.clone()), g.constant(wt.clone()), g.constant(bias.clone()));
    let y = g.conv2d(xv, wv, Some(bv)).unwrap();
    let out = &g.value(y).data;
    for n in 0..b {
        for oc in 0..o {
            for yy in 0..h {
                for xx in 0..w {
                    let mut acc = bias.data[oc];
                    for ic in 0..c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let sy = yy as isize + ky as isize - 1;
                                let sx = xx as isize + kx as isize - 1;
                                if sy >= 0 && sy < h as isize && sx >= 0 && sx < w as isize {
                                    acc += wt.data[((oc * c + ic) * k + ky) * k + kx]
                                        * x.data[((n * c + ic) * h + sy as usize) * w + sx as usize];
                                }
                            }
                        }
                    }
                    let got = out[((n * o + oc) * h + yy) * w + xx];
                    assert!((got - acc).abs() < 1e-12);
                }
            }
        }
    }
}
