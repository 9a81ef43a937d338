use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Bias-corrected Adam moments for one parameter set.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new<'a>(shapes: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let m: Vec<Tensor> = shapes.into_iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self {
            v: m.clone(),
            m,
            t: 0,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
        }
    }
}

/// Applies one Adam update. Returns `Ok(false)` without touching anything
/// when a gradient is non-finite.
pub fn adam_step(params: &mut [&mut Tensor], grads: &[Tensor], state: &mut AdamState, lr: f64) -> Result<bool> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::shape(
            "adam_step",
            format!("{} params, {} grads, {} moment slots", params.len(), grads.len(), state.m.len()),
        ));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        p.expect_same_shape(g, "adam_step")
            .map_err(|e| Error::shape("adam_step", format!("parameter {i}: {e}")))?;
    }
    if let Some(i) = grads.iter().position(|g| !g.all_finite()) {
        log::warn!("adam_step: non-finite gradient in parameter {i}; skipping update");
        return Ok(false);
    }
    state.t += 1;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        let pd = p.data_mut();
        for (((pi, &gi), mi), vi) in pd.iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
            *mi = b1 * *mi + (1.0 - b1) * gi;
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            let mhat = *mi / c1;
            let vhat = *vi / c2;
            *pi -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(true)
}

/// Linear warm-up followed by reduce-on-plateau.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub warmup_epochs: usize,
    pub factor: f64,
    pub patience: usize,
    pub min_delta: f64,
    best: f64,
    stale_epochs: usize,
    reductions: u32,
}

impl LrSchedule {
    pub fn new(base_lr: f64, warmup_epochs: usize, factor: f64, patience: usize, min_delta: f64) -> Result<Self> {
        if !(factor > 0.0 && factor < 1.0) {
            return Err(Error::Config(format!("plateau factor {factor} must lie in (0, 1)")));
        }
        if base_lr.is_nan() || base_lr <= 0.0 {
            return Err(Error::Config(format!("base learning rate {base_lr} must be positive")));
        }
        Ok(Self {
            base_lr,
            warmup_epochs,
            factor,
            patience,
            min_delta,
            best: f64::INFINITY,
            stale_epochs: 0,
            reductions: 0,
        })
    }

    pub fn reductions(&self) -> u32 {
        self.reductions
    }

    /// Learning rate for 1-based `epoch`. Warm-up ramps linearly from
    /// `base_lr/10` at epoch 1 to `base_lr` at the last warm-up epoch.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let epoch = epoch.max(1);
        if epoch <= self.warmup_epochs {
            let start = self.base_lr / 10.0;
            if self.warmup_epochs == 1 {
                return self.base_lr;
            }
            let frac = (epoch - 1) as f64 / (self.warmup_epochs - 1) as f64;
            return start + (self.base_lr - start) * frac;
        }
        self.base_lr * self.factor.powi(self.reductions as i32)
    }

    /// Records the monitored loss after `epoch`. Observations during warm-up
    /// are ignored. Returns true when a reduction fired.
    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> bool {
        if epoch <= self.warmup_epochs {
            return false;
        }
        if val_loss < self.best - self.min_delta {
            self.best = val_loss;
            self.stale_epochs = 0;
            return false;
        }
        self.stale_epochs += 1;
        if self.stale_epochs >= self.patience {
            self.reductions += 1;
            self.stale_epochs = 0;
            return true;
        }
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = Tensor::scalar(0.0);
        let mut st = AdamState::new([&p]);
        adam_step(&mut [&mut p], &[Tensor::scalar(1.0)], &mut st, 0.1).unwrap();
        assert!((p.item() + 0.1).abs() < 1e-8);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = Tensor::new(&[3], vec![1.0, -2.0, 0.5]).unwrap();
        let orig = p.clone();
        let mut st = AdamState::new([&p]);
        for _ in 0..3 {
            adam_step(&mut [&mut p], &[Tensor::zeros(&[3])], &mut st, 0.1).unwrap();
        }
        assert_eq!(p, orig);
    }

    #[test]
    fn quadratic_decreases_monotonically() {
        let mut p = Tensor::scalar(1.0);
        let mut st = AdamState::new([&p]);
        let mut last = 1.0;
        for _ in 0..5 {
            let g = Tensor::scalar(2.0 * p.item());
            adam_step(&mut [&mut p], &[g], &mut st, 0.1).unwrap();
            let f = p.item() * p.item();
            assert!(f < last);
            last = f;
        }
    }

    #[test]
    fn non_finite_gradient_skips() {
        let mut p = Tensor::scalar(1.0);
        let mut st = AdamState::new([&p]);
        let ok = adam_step(&mut [&mut p], &[Tensor::scalar(f64::NAN)], &mut st, 0.1).unwrap();
        assert!(!ok);
        assert_eq!(p.item(), 1.0);
        assert_eq!(st.t, 0);
    }

    #[test]
    fn second_moments_stay_non_negative() {
        let mut p = Tensor::new(&[2], vec![0.3, -0.3]).unwrap();
        let mut st = AdamState::new([&p]);
        for k in 0..10 {
            let g = Tensor::new(&[2], vec![(k as f64).sin(), -(k as f64).cos()]).unwrap();
            adam_step(&mut [&mut p], &[g], &mut st, 0.01).unwrap();
            assert!(st.v[0].data().iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn warmup_endpoints() {
        let s = LrSchedule::new(1e-4, 10, 0.5, 5, 1e-5).unwrap();
        assert!((s.lr_at(1) - 1e-5).abs() < 1e-20);
        assert!((s.lr_at(10) - 1e-4).abs() < 1e-20);
        assert!((s.lr_at(11) - 1e-4).abs() < 1e-20);
        let mid = s.lr_at(5);
        assert!(mid > 1e-5 && mid < 1e-4);
    }

    #[test]
    fn rejects_bad_factor() {
        assert!(LrSchedule::new(1e-4, 10, 1.0, 5, 1e-5).is_err());
        assert!(LrSchedule::new(1e-4, 10, 0.0, 5, 1e-5).is_err());
    }
}
