//! SGD, Adam with decoupled weight decay, and cosine annealing.

use crate::error::{Error, Result};
use crate::params::ParameterSet;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CosineSchedule {
    pub lr_max: f64,
    pub lr_min: f64,
    pub total_steps: usize,
}

impl CosineSchedule {
    pub fn new(lr_max: f64, lr_min: f64, total_steps: usize) -> Result<Self> {
        if !(lr_min > 0.0 && lr_min <= lr_max) || total_steps == 0 {
            return Err(Error::Invalid(format!(
                "cosine schedule needs 0 < lr_min <= lr_max and T >= 1 (got {lr_min}, {lr_max}, {total_steps})"
            )));
        }
        Ok(CosineSchedule {
            lr_max,
            lr_min,
            total_steps,
        })
    }

    /// The default `0.001 → 0.0001` schedule over `total_steps`.
    pub fn standard(total_steps: usize) -> Self {
        CosineSchedule {
            lr_max: 1e-3,
            lr_min: 1e-4,
            total_steps: total_steps.max(1),
        }
    }

    /// Same shape, rescaled so that it starts at `lr_max`.
    pub fn with_peak(self, lr_max: f64) -> Self {
        if lr_max == self.lr_max {
            return self;
        }
        let ratio = self.lr_min / self.lr_max;
        CosineSchedule {
            lr_max,
            lr_min: lr_max * ratio,
            ..self
        }
    }

    pub fn lr(&self, t: usize) -> Result<f64> {
        cosine_lr(self, t)
    }
}

pub fn cosine_lr(s: &CosineSchedule, t: usize) -> Result<f64> {
    if t > s.total_steps {
        return Err(Error::Invalid(format!(
            "step {t} beyond schedule length {}",
            s.total_steps
        )));
    }
    let phase = std::f64::consts::PI * t as f64 / s.total_steps as f64;
    Ok(s.lr_min + 0.5 * (s.lr_max - s.lr_min) * (1.0 + phase.cos()))
}

pub fn sgd_step(params: &mut ParameterSet, grads: &ParameterSet, lr: f64) -> Result<()> {
    params.check_layout(grads)?;
    for (p, g) in params.iter_mut().zip(grads.iter()) {
        for (v, d) in p.tensor.data_mut().iter_mut().zip(g.tensor.data()) {
            *v -= lr * d;
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimKind {
    Sgd,
    Adam,
}

impl OptimKind {
    pub fn tag(self) -> &'static str {
        match self {
            OptimKind::Sgd => "sgd",
            OptimKind::Adam => "adam",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimState {
    pub kind: OptimKind,
    pub lr: f64,
    pub weight_decay: f64,
    m: ParameterSet,
    v: ParameterSet,
    t: u64,
}

impl OptimState {
    pub fn adam(params: &ParameterSet, lr: f64, weight_decay: f64) -> Result<Self> {
        Self::build(OptimKind::Adam, params, lr, weight_decay)
    }

    pub fn sgd(params: &ParameterSet, lr: f64, weight_decay: f64) -> Result<Self> {
        Self::build(OptimKind::Sgd, params, lr, weight_decay)
    }

    fn build(kind: OptimKind, params: &ParameterSet, lr: f64, weight_decay: f64) -> Result<Self> {
        if !(lr > 0.0) || !(weight_decay >= 0.0) {
            return Err(Error::Invalid(format!(
                "optimizer needs lr > 0 and wd >= 0 (got {lr}, {weight_decay})"
            )));
        }
        let (m, v) = match kind {
            OptimKind::Adam => (params.zeros_like(), params.zeros_like()),
            OptimKind::Sgd => (ParameterSet::new(), ParameterSet::new()),
        };
        Ok(OptimState {
            kind,
            lr,
            weight_decay,
            m,
            v,
            t: 0,
        })
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Adam first and second moments (empty for SGD).
    pub fn moments(&self) -> (&ParameterSet, &ParameterSet) {
        (&self.m, &self.v)
    }

    /// Rebuilds a state from saved parts.
    pub fn from_parts(
        kind: OptimKind,
        lr: f64,
        weight_decay: f64,
        m: ParameterSet,
        v: ParameterSet,
        t: u64,
    ) -> Result<Self> {
        if kind == OptimKind::Adam {
            m.check_layout(&v)?;
        }
        Ok(OptimState {
            kind,
            lr,
            weight_decay,
            m,
            v,
            t,
        })
    }

    /// One update with the current `lr`.
    pub fn step(&mut self, params: &mut ParameterSet, grads: &ParameterSet) -> Result<()> {
        params.check_layout(grads)?;
        let decay = 1.0 - self.lr * self.weight_decay;
        match self.kind {
            OptimKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads.iter()) {
                    for (v, d) in p.tensor.data_mut().iter_mut().zip(g.tensor.data()) {
                        *v = *v * decay - self.lr * d;
                    }
                }
            }
            OptimKind::Adam => {
                params.check_layout(&self.m)?;
                self.t += 1;
                let c1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
                let c2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
                for (i, (p, g)) in params.iter_mut().zip(grads.iter()).enumerate() {
                    let m = self.m.tensor_at_mut(i).data_mut();
                    let v = self.v.tensor_at_mut(i).data_mut();
                    let values = p.tensor.data_mut();
                    for (k, &d) in g.tensor.data().iter().enumerate() {
                        m[k] = ADAM_BETA1 * m[k] + (1.0 - ADAM_BETA1) * d;
                        v[k] = ADAM_BETA2 * v[k] + (1.0 - ADAM_BETA2) * d * d;
                        let step = (m[k] / c1) / ((v[k] / c2).sqrt() + ADAM_EPS);
                        values[k] = values[k] * decay - self.lr * step;
                    }
                }
            }
        }
        Ok(())
    }
}

pub fn adam_step(
    state: &mut OptimState,
    params: &mut ParameterSet,
    grads: &ParameterSet,
) -> Result<()> {
    if state.kind != OptimKind::Adam {
        return Err(Error::Invalid("adam_step on a non-Adam state".into()));
    }
    state.step(params, grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn one(v: f64) -> ParameterSet {
        ParameterSet::new().with("w", Tensor::scalar(v), 0)
    }

    #[test]
    fn sgd_examples() {
        let mut p = one(1.0);
        sgd_step(&mut p, &one(2.0), 0.1).unwrap();
        assert_abs_diff_eq!(p.get("w").unwrap().item(), 0.8, epsilon = 1e-15);
        let mut p = one(1.0);
        sgd_step(&mut p, &one(0.0), 0.1).unwrap();
        assert_eq!(p.get("w").unwrap().item(), 1.0);
        sgd_step(&mut p, &one(3.0), 0.0).unwrap();
        assert_eq!(p.get("w").unwrap().item(), 1.0);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = one(1.0);
        let g = ParameterSet::new().with("w", Tensor::zeros(1, 2), 0);
        assert!(sgd_step(&mut p, &g, 0.1).is_err());
        let mut s = OptimState::adam(&p, 1e-3, 0.0).unwrap();
        assert!(s.step(&mut p, &g).is_err());
    }

    #[test]
    fn adam_first_step() {
        let mut p = one(0.0);
        let mut s = OptimState::adam(&p, 1e-3, 0.0).unwrap();
        adam_step(&mut s, &mut p, &one(1.0)).unwrap();
        assert_abs_diff_eq!(p.get("w").unwrap().item(), -1e-3, epsilon = 1e-10);
    }

    #[test]
    fn decoupled_weight_decay_applies_before_delta() {
        let mut p = one(2.0);
        let mut s = OptimState::adam(&p, 0.1, 0.5).unwrap();
        s.step(&mut p, &one(0.0)).unwrap();
        assert_abs_diff_eq!(p.get("w").unwrap().item(), 2.0 * 0.95, epsilon = 1e-15);
    }

    #[test]
    fn zero_gradient_adam_is_fixed() {
        let mut p = one(0.3);
        let mut s = OptimState::adam(&p, 1e-3, 0.0).unwrap();
        for _ in 0..10 {
            s.step(&mut p, &one(0.0)).unwrap();
        }
        assert_eq!(p.get("w").unwrap().item(), 0.3);
    }

    #[test]
    fn adam_is_deterministic() {
        let run = || {
            let mut p = one(0.3);
            let mut s = OptimState::adam(&p, 1e-2, 1e-4).unwrap();
            for i in 0..50 {
                s.step(&mut p, &one((i as f64).sin())).unwrap();
            }
            p.get("w").unwrap().item()
        };
        assert_eq!(run().to_bits(), run().to_bits());
    }

    #[test]
    fn cosine_examples() {
        let s = CosineSchedule::standard(100);
        assert_abs_diff_eq!(s.lr(0).unwrap(), 0.001, epsilon = 1e-15);
        assert_abs_diff_eq!(s.lr(100).unwrap(), 0.0001, epsilon = 1e-15);
        assert_abs_diff_eq!(s.lr(50).unwrap(), 0.00055, epsilon = 1e-15);
        assert!(s.lr(101).is_err());
        assert!(CosineSchedule::new(1e-3, 1e-2, 10).is_err());
        assert!(CosineSchedule::new(1e-3, 1e-4, 0).is_err());
        let p = s.with_peak(0.01);
        assert_abs_diff_eq!(p.lr(100).unwrap(), 0.001, epsilon = 1e-15);
    }

    /// Cauchy–Schwarz constant bounding `|m̂_t| / √v̂_t` for any gradient history.
    fn adam_ratio_bound(t: u64) -> f64 {
        let (b1, b2) = (ADAM_BETA1, ADAM_BETA2);
        let c1 = 1.0 - b1.powi(t as i32);
        let c2 = 1.0 - b2.powi(t as i32);
        let s: f64 = (0..t).map(|k| (b1 * b1 / b2).powi(k as i32)).sum();
        ((1.0 - b1).powi(2) / (c1 * c1) * c2 / (1.0 - b2) * s).sqrt()
    }

    proptest! {
        #[test]
        fn cosine_is_non_increasing(t in 1usize..500, lr_max in 1e-4f64..1.0, ratio in 0.01f64..1.0) {
            let s = CosineSchedule::new(lr_max, lr_max * ratio, t).unwrap();
            let mut prev = f64::INFINITY;
            for k in 0..=t {
                let lr = s.lr(k).unwrap();
                prop_assert!(lr <= prev + 1e-18);
                prev = lr;
            }
        }

        #[test]
        fn zero_gradient_step_is_identity(v in -10.0f64..10.0, lr in 1e-5f64..1.0, adam in any::<bool>()) {
            let mut p = one(v);
            let mut s = if adam { OptimState::adam(&p, lr, 0.0) } else { OptimState::sgd(&p, lr, 0.0) }.unwrap();
            s.step(&mut p, &one(0.0)).unwrap();
            prop_assert_eq!(p.get("w").unwrap().item(), v);
        }

        #[test]
        fn first_adam_step_is_at_most_lr(g in -1e6f64..1e6, lr in 1e-5f64..1.0) {
            let mut p = one(0.0);
            let mut s = OptimState::adam(&p, lr, 0.0).unwrap();
            s.step(&mut p, &one(g)).unwrap();
            prop_assert!(p.get("w").unwrap().item().abs() <= lr);
        }

        #[test]
        fn adam_steps_are_bounded(gs in proptest::collection::vec(-100.0f64..100.0, 1..60), lr in 1e-4f64..0.1) {
            let mut p = one(0.0);
            let mut s = OptimState::adam(&p, lr, 0.0).unwrap();
            for (i, &g) in gs.iter().enumerate() {
                let before = p.get("w").unwrap().item();
                s.step(&mut p, &one(g)).unwrap();
                let delta = (p.get("w").unwrap().item() - before).abs();
                prop_assert!(delta <= lr * adam_ratio_bound(i as u64 + 1) * (1.0 + 1e-9));
            }
        }

        #[test]
        fn constant_gradient_adam_steps_at_most_lr(g in -100.0f64..100.0, n in 1usize..200) {
            let lr = 1e-3;
            let mut p = one(0.0);
            let mut s = OptimState::adam(&p, lr, 0.0).unwrap();
            for _ in 0..n {
                let before = p.get("w").unwrap().item();
                s.step(&mut p, &one(g)).unwrap();
                prop_assert!((p.get("w").unwrap().item() - before).abs() <= lr * (1.0 + 1e-9));
            }
        }
    }
}
