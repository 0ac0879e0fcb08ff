use super::{Ael, Agce, ClassificationLoss, LossOut, Mae, RobustParams};
use crate::error::{Error, Result};
use crate::numerics::Mat;

/// Normalized cross entropy `log p_y / Σ_c log p_c`.
#[derive(Debug, Clone, Copy, Default)]
pub struct NormalizedCe;

impl ClassificationLoss for NormalizedCe {
    fn name(&self) -> String {
        "nce".into()
    }

    fn sample(&self, log_probs: &[f64], _probs: &[f64], label: usize, grad_logp: &mut [f64]) -> f64 {
        let num = -log_probs[label];
        let den: f64 = -log_probs.iter().sum::<f64>();
        let den2 = den * den;
        for (c, g) in grad_logp.iter_mut().enumerate() {
            let own = if c == label { den } else { 0.0 };
            *g = (num - own) / den2;
        }
        num / den
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ApKind {
    Mae,
    Nce,
    Agce,
    Ael,
}

impl ApKind {
    pub fn build(self, params: &RobustParams) -> Result<Box<dyn ClassificationLoss>> {
        Ok(match self {
            ApKind::Mae => Box::new(Mae),
            ApKind::Nce => Box::new(NormalizedCe),
            ApKind::Agce => Box::new(Agce::new(params.agce_a, params.agce_q)?),
            ApKind::Ael => Box::new(Ael::new(params.ael_a)?),
        })
    }
}

pub fn active_passive(kind: ApKind, logits: &Mat, labels: &[usize], params: &RobustParams) -> Result<LossOut> {
    kind.build(params)?.evaluate(logits, labels)
}

/// `wa · active + wp · passive`.
#[derive(Debug)]
pub struct Combo {
    active: Box<dyn ClassificationLoss>,
    passive: Box<dyn ClassificationLoss>,
    wa: f64,
    wp: f64,
}

impl Combo {
    pub fn new(
        active: Box<dyn ClassificationLoss>,
        passive: Box<dyn ClassificationLoss>,
        wa: f64,
        wp: f64,
    ) -> Result<Self> {
        if !(wa >= 0.0 && wp >= 0.0) {
            return Err(Error::config(
                "loss.active_weight",
                "combination weights must be non-negative",
            ));
        }
        Ok(Self {
            active,
            passive,
            wa,
            wp,
        })
    }
}

impl ClassificationLoss for Combo {
    fn name(&self) -> String {
        format!("{}_{}", self.active.name(), self.passive.name())
    }

    fn sample(&self, log_probs: &[f64], probs: &[f64], label: usize, grad_logp: &mut [f64]) -> f64 {
        let mut tmp = vec![0.0; grad_logp.len()];
        let a = self.active.sample(log_probs, probs, label, grad_logp);
        let p = self.passive.sample(log_probs, probs, label, &mut tmp);
        for (g, t) in grad_logp.iter_mut().zip(&tmp) {
            *g = self.wa * *g + self.wp * t;
        }
        self.wa * a + self.wp * p
    }
}

/// Linear combination of two already evaluated losses.
pub fn combo(active: &LossOut, passive: &LossOut, wa: f64, wp: f64) -> Result<LossOut> {
    if !(wa >= 0.0 && wp >= 0.0) {
        return Err(Error::config(
            "loss.active_weight",
            "combination weights must be non-negative",
        ));
    }
    let mut grad = active.grad_logits.scale(wa);
    grad.add_scaled(&passive.grad_logits, wp)?;
    Ok(LossOut {
        value: wa * active.value + wp * passive.value,
        grad_logits: grad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nce_uniform_is_one_over_c() {
        for c in [2usize, 4, 10] {
            let out = active_passive(ApKind::Nce, &Mat::zeros(1, c), &[0], &RobustParams::default()).unwrap();
            assert!((out.value - 1.0 / c as f64).abs() < 1e-15);
        }
    }

    #[test]
    fn combo_weights() {
        let logits = Mat::from_rows(&[[0.3, -0.2, 1.1]]).unwrap();
        let p = RobustParams::default();
        let a = active_passive(ApKind::Nce, &logits, &[1], &p).unwrap();
        let b = active_passive(ApKind::Agce, &logits, &[1], &p).unwrap();
        assert_eq!(combo(&a, &b, 1.0, 0.0).unwrap(), a);
        let z = combo(&a, &b, 0.0, 0.0).unwrap();
        assert_eq!(z.value, 0.0);
        assert!(z.grad_logits.as_slice().iter().all(|&g| g == 0.0));

        let fused = Combo::new(Box::new(NormalizedCe), Box::new(Agce::new(0.6, 0.6).unwrap()), 1.0, 1.0)
            .unwrap()
            .evaluate(&logits, &[1])
            .unwrap();
        let linear = combo(&a, &b, 1.0, 1.0).unwrap();
        assert!((fused.value - linear.value).abs() < 1e-15);
        assert!(fused.grad_logits.max_abs_diff(&linear.grad_logits) < 1e-15);
        assert!(combo(&a, &b, -1.0, 0.0).is_err());
    }
}
