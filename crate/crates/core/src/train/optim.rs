//! Optimiser, learning-rate schedule and weight averaging.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail_validation, Result};
use crate::nn::{ParamStore, Scalar, Tensor};

/// Decoupled weight decay Adam. Decay applies to weight matrices and
/// kernels (rank ≥ 2), not to biases or normalisation parameters.
#[derive(Debug, Clone)]
pub struct AdamW<S> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<Vec<S>>,
    v: Vec<Vec<S>>,
    t: u64,
}

impl<S: Scalar> AdamW<S> {
    pub fn new(ps: &ParamStore<S>, weight_decay: f64) -> Self {
        let zeros = |e: &crate::nn::ParamEntry<S>| if e.trainable { vec![S::zero(); e.value.len()] } else { Vec::new() };
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            m: ps.entries().iter().map(zeros).collect(),
            v: ps.entries().iter().map(zeros).collect(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, ps: &mut ParamStore<S>, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - libm::pow(self.beta1, self.t as f64);
        let bc2 = 1.0 - libm::pow(self.beta2, self.t as f64);
        let (b1, b2) = (S::lit(self.beta1), S::lit(self.beta2));
        let (ob1, ob2) = (S::one() - b1, S::one() - b2);
        let step = S::lit(lr / bc1);
        let inv_bc2 = S::lit(1.0 / bc2);
        let eps = S::lit(self.eps);
        let ids: Vec<_> = ps.trainable_ids().collect();
        for id in ids {
            let decay = ps.value(id).rank() >= 2;
            let shrink = S::lit(1.0 - lr * self.weight_decay);
            let entry_grad = ps.get(id).grad.clone();
            let (m, v) = (&mut self.m[id.0], &mut self.v[id.0]);
            let p = &mut ps.value_mut(id).data;
            for j in 0..p.len() {
                let g = entry_grad[j];
                m[j] = b1 * m[j] + ob1 * g;
                v[j] = b2 * v[j] + ob2 * g * g;
                if decay {
                    p[j] *= shrink;
                }
                p[j] -= step * m[j] / ((v[j] * inv_bc2).sqrt() + eps);
            }
        }
    }
}

/// Linear warmup then cosine decay to `min_frac·lr` on the final step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub base: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
    pub min_frac: f64,
}

impl LrSchedule {
    pub fn new(base: f64, warmup_steps: usize, total_steps: usize, min_frac: f64) -> Result<Self> {
        if !(base > 0.0) || total_steps == 0 || warmup_steps >= total_steps {
            bail_validation!("schedule needs lr > 0 and warmup ({warmup_steps}) < total ({total_steps}) steps");
        }
        if !(0.0..=1.0).contains(&min_frac) {
            bail_validation!("min-lr fraction {min_frac} outside [0, 1]");
        }
        Ok(Self { base, warmup_steps, total_steps, min_frac })
    }

    pub fn at(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            return self.base * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let span = (self.total_steps - self.warmup_steps - 1).max(1) as f64;
        let p = ((step - self.warmup_steps) as f64 / span).min(1.0);
        let cos = 0.5 * (1.0 + libm::cos(core::f64::consts::PI * p));
        self.base * (self.min_frac + (1.0 - self.min_frac) * cos)
    }
}

/// Exponential moving average of trainable values.
#[derive(Debug, Clone)]
pub struct Ema<S> {
    pub decay: f64,
    shadow: Vec<Tensor<S>>,
}

impl<S: Scalar> Ema<S> {
    pub fn new(ps: &ParamStore<S>, decay: f64) -> Self {
        Self { decay, shadow: ps.snapshot() }
    }

    /// `shadow += (1 − decay)·(p − shadow)`, so a constant parameter is a fixed point.
    pub fn update(&mut self, ps: &ParamStore<S>) {
        let w = S::lit(1.0 - self.decay);
        for (id, sh) in ps.ids().zip(self.shadow.iter_mut()) {
            if !ps.get(id).trainable {
                continue;
            }
            for (s, &p) in sh.data.iter_mut().zip(&ps.value(id).data) {
                *s += w * (p - *s);
            }
        }
    }

    pub fn snapshot(&self) -> &[Tensor<S>] {
        &self.shadow
    }
}

/// Equal-weight running average of snapshots.
#[derive(Debug, Clone, Default)]
pub struct Swa<S> {
    avg: Option<Vec<Tensor<S>>>,
    count: usize,
}

impl<S: Scalar> Swa<S> {
    pub fn new() -> Self {
        Self { avg: None, count: 0 }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn add(&mut self, snap: &[Tensor<S>]) {
        self.count += 1;
        match &mut self.avg {
            None => self.avg = Some(snap.to_vec()),
            Some(avg) => {
                let w = S::lit(1.0 / self.count as f64);
                for (a, s) in avg.iter_mut().zip(snap) {
                    for (x, &y) in a.data.iter_mut().zip(&s.data) {
                        *x += w * (y - *x);
                    }
                }
            }
        }
    }

    pub fn average(&self) -> Option<&[Tensor<S>]> {
        self.avg.as_deref()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn store() -> ParamStore<f64> {
        let mut ps = ParamStore::new();
        let mut r = rng::seeded(0);
        ps.add_uniform("w", &[3, 2], 2, &mut r);
        ps.add_uniform("b", &[3], 2, &mut r);
        ps
    }

    #[test]
    fn schedule_endpoints() {
        let s = LrSchedule::new(3e-4, 100, 400, 0.01).unwrap();
        assert_eq!(s.at(0), 3e-4 / 100.0);
        assert!((s.at(99) - 3e-4).abs() < 1e-15);
        assert!((s.at(100) - 3e-4).abs() < 1e-15);
        assert!((s.at(399) - 3e-6).abs() < 1e-9);
        let mut prev = f64::INFINITY;
        for step in 100..400 {
            let v = s.at(step);
            assert!(v <= prev + 1e-18);
            prev = v;
        }
        assert!(LrSchedule::new(1e-3, 10, 10, 0.01).is_err());
    }

    #[test]
    fn ema_fixed_point() {
        let ps = store();
        let mut e = Ema::new(&ps, 0.9995);
        for _ in 0..1000 {
            e.update(&ps);
        }
        assert_eq!(e.snapshot(), ps.snapshot().as_slice());
    }

    #[test]
    fn ema_tracks_moving_parameter() {
        let mut ps = store();
        let mut e = Ema::new(&ps, 0.5);
        let id = ps.find("b").unwrap();
        let start = ps.value(id).data[0];
        ps.value_mut(id).data[0] = start + 1.0;
        e.update(&ps);
        assert!((e.snapshot()[1].data[0] - (start + 0.5)).abs() < 1e-12);
    }

    #[test]
    fn swa_of_identical_snapshots_is_identity() {
        let ps = store();
        let mut s = Swa::new();
        for _ in 0..7 {
            s.add(&ps.snapshot());
        }
        assert_eq!(s.average().unwrap(), ps.snapshot().as_slice());
        let mut s2 = Swa::<f64>::new();
        let a = vec![Tensor::from_f64(&[2], &[1.0, 2.0]).unwrap()];
        let b = vec![Tensor::from_f64(&[2], &[3.0, 6.0]).unwrap()];
        s2.add(&a);
        s2.add(&b);
        assert_eq!(s2.average().unwrap()[0].data, vec![2.0, 4.0]);
    }

    #[test]
    fn adamw_first_step_moves_by_lr() {
        let mut ps = store();
        let id = ps.find("b").unwrap();
        let before = ps.value(id).data.clone();
        ps.grad_mut(id).copy_from_slice(&[0.5, -2.0, 0.0]);
        let mut opt = AdamW::new(&ps, 0.05);
        opt.step(&mut ps, 0.1);
        let after = &ps.value(id).data;
        // bias-corrected first step is lr·sign(g); biases are not decayed
        assert!((after[0] - (before[0] - 0.1)).abs() < 1e-6);
        assert!((after[1] - (before[1] + 0.1)).abs() < 1e-6);
        assert_eq!(after[2], before[2]);
    }

    #[test]
    fn adamw_decays_weights_without_gradient() {
        let mut ps = store();
        let id = ps.find("w").unwrap();
        let before = ps.value(id).data.clone();
        let mut opt = AdamW::new(&ps, 0.05);
        opt.step(&mut ps, 0.1);
        for (a, b) in ps.value(id).data.iter().zip(&before) {
            assert!((a - b * (1.0 - 0.005)).abs() < 1e-15);
        }
    }
}
