use alloc::vec::Vec;

use crate::error::{bail_shape, bail_validation, Result};
use crate::nn::{Graph, Scalar, Var};

/// Label-smoothed targets `(1−ε)·y + ε/C` for rows of a `[B, C]` target matrix.
pub fn smooth_targets(targets: &[f64], classes: usize, eps: f64) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&eps) {
        bail_validation!("label smoothing {eps} outside [0, 1)");
    }
    if classes == 0 || targets.len() % classes != 0 {
        bail_shape!("{} targets do not form rows of {} classes", targets.len(), classes);
    }
    let u = eps / classes as f64;
    Ok(targets.iter().map(|&t| (1.0 - eps) * t + u).collect())
}

/// One-hot rows for integer labels.
pub fn one_hot(labels: &[usize], classes: usize) -> Result<Vec<f64>> {
    let mut out = alloc::vec![0.0; labels.len() * classes];
    for (i, &l) in labels.iter().enumerate() {
        if l >= classes {
            bail_validation!("label {l} out of range for {classes} classes");
        }
        out[i * classes + l] = 1.0;
    }
    Ok(out)
}

/// `CE(main) + λ·(CE(rtm) + CE(cvd))` with label-smoothed soft targets.
/// Missing auxiliary heads contribute nothing.
pub fn cast_loss<S: Scalar>(
    g: &mut Graph<S>,
    main: Var,
    aux_rtm: Option<Var>,
    aux_cvd: Option<Var>,
    targets: &[f64],
    eps_ls: f64,
    lambda_aux: f64,
) -> Result<Var> {
    if !(lambda_aux >= 0.0) {
        bail_validation!("auxiliary weight {lambda_aux} must be non-negative");
    }
    let s = g.shape(main).to_vec();
    if s.len() != 2 {
        bail_shape!("logits must be [B, C], got {:?}", s);
    }
    for v in [aux_rtm, aux_cvd].into_iter().flatten() {
        if g.shape(v) != s.as_slice() {
            bail_shape!("auxiliary logits {:?} differ from main {:?}", g.shape(v), s);
        }
    }
    let t: Vec<S> = smooth_targets(targets, s[1], eps_ls)?.into_iter().map(S::lit).collect();
    let mut loss = g.soft_cross_entropy(main, &t)?;
    if lambda_aux > 0.0 {
        for v in [aux_rtm, aux_cvd].into_iter().flatten() {
            let ce = g.soft_cross_entropy(v, &t)?;
            let w = g.scale(ce, lambda_aux);
            loss = g.add(loss, w)?;
        }
    }
    Ok(loss)
}
