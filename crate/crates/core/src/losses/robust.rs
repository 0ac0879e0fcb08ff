use super::{ClassificationLoss, CrossEntropy, LossOut, PROB_FLOOR};
use crate::error::{Error, Result};
use crate::numerics::Mat;

/// `(1 − p_y^q) / q`.
#[derive(Debug, Clone, Copy)]
pub struct Gce {
    q: f64,
}

impl Gce {
    pub fn new(q: f64) -> Result<Self> {
        if !(q > 0.0 && q <= 1.0) {
            return Err(Error::config("loss.gce_q", format!("{q} is outside (0, 1]")));
        }
        Ok(Self { q })
    }
}

impl ClassificationLoss for Gce {
    fn name(&self) -> String {
        "gce".into()
    }

    fn sample(&self, _log_probs: &[f64], probs: &[f64], label: usize, grad_logp: &mut [f64]) -> f64 {
        let p = probs[label];
        let pc = p.max(PROB_FLOOR);
        let pq = pc.powf(self.q);
        if p >= PROB_FLOOR {
            grad_logp[label] = -pq;
        }
        (1.0 - pq) / self.q
    }
}

pub fn gce(logits: &Mat, labels: &[usize], q: f64) -> Result<LossOut> {
    Gce::new(q)?.evaluate(logits, labels)
}

/// Reverse cross entropy `−Σ_c p_c log onehot_c` with `log 0 := log_zero`,
/// which reduces to `−log_zero · (1 − p_y)`.
#[derive(Debug, Clone, Copy)]
pub struct Rce {
    log_zero: f64,
}

impl Rce {
    pub fn new(log_zero: f64) -> Result<Self> {
        if !(log_zero < 0.0) {
            return Err(Error::config("loss.sce_log_zero", "must be negative"));
        }
        Ok(Self { log_zero })
    }
}

impl ClassificationLoss for Rce {
    fn name(&self) -> String {
        "rce".into()
    }

    fn sample(&self, _log_probs: &[f64], probs: &[f64], label: usize, grad_logp: &mut [f64]) -> f64 {
        let p = probs[label];
        grad_logp[label] = self.log_zero * p;
        -self.log_zero * (1.0 - p)
    }
}

/// `a·CE + b·RCE`.
#[derive(Debug, Clone, Copy)]
pub struct Sce {
    a: f64,
    b: f64,
    rce: Rce,
}

impl Sce {
    pub fn new(a: f64, b: f64, log_zero: f64) -> Result<Self> {
        if !(a > 0.0 && b > 0.0) {
            return Err(Error::config("loss.sce_a", "sce weights must be positive"));
        }
        Ok(Self {
            a,
            b,
            rce: Rce::new(log_zero)?,
        })
    }
}

impl ClassificationLoss for Sce {
    fn name(&self) -> String {
        "sce".into()
    }

    fn sample(&self, log_probs: &[f64], probs: &[f64], label: usize, grad_logp: &mut [f64]) -> f64 {
        let mut tmp = vec![0.0; grad_logp.len()];
        let ce = CrossEntropy.sample(log_probs, probs, label, grad_logp);
        let rce = self.rce.sample(log_probs, probs, label, &mut tmp);
        for (g, t) in grad_logp.iter_mut().zip(&tmp) {
            *g = self.a * *g + self.b * t;
        }
        self.a * ce + self.b * rce
    }
}

pub fn sce(logits: &Mat, labels: &[usize], a: f64, b: f64, log_zero: f64) -> Result<LossOut> {
    Sce::new(a, b, log_zero)?.evaluate(logits, labels)
}

/// Mean absolute error between probabilities and the one-hot target,
/// `Σ_c |p_c − onehot_c| = 2(1 − p_y)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Mae;

impl ClassificationLoss for Mae {
    fn name(&self) -> String {
        "mae".into()
    }

    fn sample(&self, _log_probs: &[f64], probs: &[f64], label: usize, grad_logp: &mut [f64]) -> f64 {
        let p = probs[label];
        grad_logp[label] = -2.0 * p;
        2.0 * (1.0 - p)
    }
}

/// Asymmetric generalized cross entropy `((a + 1)^q − (a + p_y)^q) / q`.
#[derive(Debug, Clone, Copy)]
pub struct Agce {
    a: f64,
    q: f64,
}

impl Agce {
    pub fn new(a: f64, q: f64) -> Result<Self> {
        if !(a > 0.0 && q > 0.0) {
            return Err(Error::config("loss.agce_a", "agce_a and agce_q must be positive"));
        }
        Ok(Self { a, q })
    }
}

impl ClassificationLoss for Agce {
    fn name(&self) -> String {
        "agce".into()
    }

    fn sample(&self, _log_probs: &[f64], probs: &[f64], label: usize, grad_logp: &mut [f64]) -> f64 {
        let p = probs[label];
        let base = self.a + p;
        grad_logp[label] = -base.powf(self.q - 1.0) * p;
        ((self.a + 1.0).powf(self.q) - base.powf(self.q)) / self.q
    }
}

/// Asymmetric exponential loss `exp(−p_y / a)`.
#[derive(Debug, Clone, Copy)]
pub struct Ael {
    a: f64,
}

impl Ael {
    pub fn new(a: f64) -> Result<Self> {
        if !(a > 0.0) {
            return Err(Error::config("loss.ael_a", "must be positive"));
        }
        Ok(Self { a })
    }
}

impl ClassificationLoss for Ael {
    fn name(&self) -> String {
        "ael".into()
    }

    fn sample(&self, _log_probs: &[f64], probs: &[f64], label: usize, grad_logp: &mut [f64]) -> f64 {
        let p = probs[label];
        let v = (-p / self.a).exp();
        grad_logp[label] = -v / self.a * p;
        v
    }
}
