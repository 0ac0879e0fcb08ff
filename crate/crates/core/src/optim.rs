//! SGD with momentum and coupled weight decay, plus the two learning-rate
//! schedules used for pretraining (cosine) and task training (step decay).

use crate::error::{Error, Result};
use crate::numerics::MlpParams;

/// One in-place update: `v ← μ v + g + λ θ`, `θ ← θ − η v`.
pub fn sgd_step(
    params: &mut [f64],
    grads: &[f64],
    velocity: &mut [f64],
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != velocity.len() {
        return Err(Error::dim(format!(
            "sgd_step: {} params, {} grads, {} velocity slots",
            params.len(),
            grads.len(),
            velocity.len()
        )));
    }
    for ((p, &g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        *v = momentum * *v + g + weight_decay * *p;
        *p -= lr * *v;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdConfig {
    pub momentum: f64,
    pub weight_decay: f64,
}

/// Momentum buffers for one network.
#[derive(Debug, Clone)]
pub struct Sgd {
    cfg: SgdConfig,
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(params: &MlpParams, cfg: SgdConfig) -> Self {
        Self::for_tensors(&params.tensors(), cfg)
    }

    pub fn for_tensors(tensors: &[&[f64]], cfg: SgdConfig) -> Self {
        Self {
            cfg,
            velocity: tensors.iter().map(|t| vec![0.0; t.len()]).collect(),
        }
    }

    pub fn step(&mut self, params: &mut MlpParams, grads: &MlpParams, lr: f64) -> Result<()> {
        self.step_tensors(params.tensors_mut(), grads.tensors(), lr)
    }

    pub fn step_tensors(&mut self, params: Vec<&mut [f64]>, grads: Vec<&[f64]>, lr: f64) -> Result<()> {
        if params.len() != self.velocity.len() || grads.len() != params.len() {
            return Err(Error::dim("optimizer state does not match the network"));
        }
        for ((p, g), v) in params.into_iter().zip(grads).zip(self.velocity.iter_mut()) {
            sgd_step(p, g, v, lr, self.cfg.momentum, self.cfg.weight_decay)?;
        }
        Ok(())
    }
}

/// Step-decay schedule for task training.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimConfig {
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub decay_factor: f64,
    pub decay_start_epoch: usize,
    /// Epochs between further decays after the first; 0 disables them.
    pub decay_every: usize,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr0: 0.001,
            momentum: 0.9,
            weight_decay: 5e-4,
            decay_factor: 0.1,
            decay_start_epoch: 150,
            decay_every: 30,
            epochs: 240,
            batch_size: 64,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0) {
            return Err(Error::config("optim.lr0", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("optim.momentum", "must lie in [0, 1)"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::config("optim.weight_decay", "must be non-negative"));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(Error::config("optim.decay_factor", "must lie in (0, 1]"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("optim.batch_size", "must be positive"));
        }
        Ok(())
    }

    pub fn sgd(&self) -> SgdConfig {
        SgdConfig {
            momentum: self.momentum,
            weight_decay: self.weight_decay,
        }
    }
}

/// `lr0` before `decay_start_epoch`, then one extra factor of `decay_factor`
/// at the start epoch and at every `decay_every` epochs after it.
pub fn step_lr(epoch: usize, cfg: &OptimConfig) -> f64 {
    if epoch < cfg.decay_start_epoch {
        return cfg.lr0;
    }
    let extra = (epoch - cfg.decay_start_epoch)
        .checked_div(cfg.decay_every)
        .unwrap_or(0);
    cfg.lr0 * cfg.decay_factor.powi(1 + extra as i32)
}

/// `lr0 · ½(1 + cos(π t / T))` for step `t` of `T`.
pub fn cosine_lr(lr0: f64, step: usize, total_steps: usize) -> f64 {
    if total_steps == 0 {
        return lr0;
    }
    let t = step.min(total_steps) as f64 / total_steps as f64;
    lr0 * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_grad_without_decay_is_a_no_op() {
        let mut p = vec![1.0, -2.0];
        let mut v = vec![0.0; 2];
        sgd_step(&mut p, &[0.0, 0.0], &mut v, 0.1, 0.9, 0.0).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);
    }

    #[test]
    fn plain_gradient_descent() {
        let mut p = vec![1.0, -2.0];
        let mut v = vec![0.0; 2];
        sgd_step(&mut p, &[0.5, -1.0], &mut v, 0.1, 0.0, 0.0).unwrap();
        assert_eq!(p, vec![1.0 - 0.05, -2.0 + 0.1]);
    }

    #[test]
    fn two_momentum_steps_unroll() {
        let (lr, g) = (0.1, 0.7);
        let mut p = vec![0.0];
        let mut v = vec![0.0];
        sgd_step(&mut p, &[g], &mut v, lr, 0.9, 0.0).unwrap();
        sgd_step(&mut p, &[g], &mut v, lr, 0.9, 0.0).unwrap();
        assert!((p[0] + lr * g * (1.0 + 1.9)).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch() {
        let mut p = vec![0.0; 2];
        let mut v = vec![0.0; 1];
        assert!(sgd_step(&mut p, &[0.0, 0.0], &mut v, 0.1, 0.9, 0.0).is_err());
    }

    #[test]
    fn step_schedule() {
        let cfg = OptimConfig {
            lr0: 0.01,
            ..OptimConfig::default()
        };
        assert_eq!(step_lr(0, &cfg), 0.01);
        assert_eq!(step_lr(149, &cfg), 0.01);
        assert!((step_lr(150, &cfg) - 0.001).abs() < 1e-18);
        assert!((step_lr(179, &cfg) - 0.001).abs() < 1e-18);
        assert!((step_lr(180, &cfg) - 0.0001).abs() < 1e-18);
    }

    #[test]
    fn cosine_endpoints() {
        assert_eq!(cosine_lr(0.03, 0, 100), 0.03);
        assert!((cosine_lr(0.03, 50, 100) - 0.015).abs() < 1e-15);
        assert!(cosine_lr(0.03, 100, 100).abs() < 1e-15);
    }
}
