//! Classification losses over softmax probabilities: cross entropy and the
//! noise-robust family (GCE, SCE, MAE, NCE, AGCE, AEL and active/passive
//! combinations), each with an exact gradient with respect to the logits.
//!
//! Every loss is written per sample as a function of the log-probabilities.
//! If `w = ∂ℓ/∂log p` then the logit gradient is `w − p·Σw`, which is what
//! [`ClassificationLoss::evaluate`] applies. Batch reduction is the mean.

mod active_passive;
mod robust;

pub use active_passive::{active_passive, combo, ApKind, Combo, NormalizedCe};
pub use robust::{gce, sce, Ael, Agce, Gce, Mae, Rce, Sce};

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::numerics::{log_softmax_rows, Mat};

/// Lower clamp for probabilities fed to powers.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct LossOut {
    pub value: f64,
    pub grad_logits: Mat,
}

impl LossOut {
    pub fn zeros_like(logits: &Mat) -> Self {
        Self {
            value: 0.0,
            grad_logits: Mat::zeros(logits.rows(), logits.cols()),
        }
    }
}

pub trait ClassificationLoss: Send + Sync + fmt::Debug {
    fn name(&self) -> String;

    /// Loss of one sample; writes `∂ℓ/∂log p` into `grad_logp` (zeroed on entry).
    fn sample(&self, log_probs: &[f64], probs: &[f64], label: usize, grad_logp: &mut [f64]) -> f64;

    /// Mean loss over the batch and its gradient with respect to the logits.
    fn evaluate(&self, logits: &Mat, labels: &[usize]) -> Result<LossOut> {
        validate_batch(logits, labels)?;
        let (b, c) = logits.shape();
        let log_probs = log_softmax_rows(logits);
        let probs = log_probs.map(f64::exp);
        let mut grad = Mat::zeros(b, c);
        let mut w = vec![0.0; c];
        let mut total = 0.0;
        let inv_b = 1.0 / b as f64;
        for (i, &y) in labels.iter().enumerate() {
            w.iter_mut().for_each(|v| *v = 0.0);
            total += self.sample(log_probs.row(i), probs.row(i), y, &mut w);
            let wsum: f64 = w.iter().sum();
            for ((g, &wj), &pj) in grad.row_mut(i).iter_mut().zip(&w).zip(probs.row(i)) {
                *g = (wj - pj * wsum) * inv_b;
            }
        }
        Ok(LossOut {
            value: total * inv_b,
            grad_logits: grad,
        })
    }
}

pub(crate) fn validate_batch(logits: &Mat, labels: &[usize]) -> Result<()> {
    if logits.rows() != labels.len() {
        return Err(Error::dim(format!(
            "{} logit rows but {} labels",
            logits.rows(),
            labels.len()
        )));
    }
    if logits.rows() == 0 || logits.cols() == 0 {
        return Err(Error::dim("empty logit batch"));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= logits.cols()) {
        return Err(Error::InvalidArgument(format!(
            "label {bad} out of range for {} classes",
            logits.cols()
        )));
    }
    Ok(())
}

/// Plain cross entropy `−log p_y`.
#[derive(Debug, Clone, Copy, Default)]
pub struct CrossEntropy;

impl ClassificationLoss for CrossEntropy {
    fn name(&self) -> String {
        "ce".into()
    }

    fn sample(&self, log_probs: &[f64], _probs: &[f64], label: usize, grad_logp: &mut [f64]) -> f64 {
        grad_logp[label] = -1.0;
        -log_probs[label]
    }
}

pub fn ce(logits: &Mat, labels: &[usize]) -> Result<LossOut> {
    CrossEntropy.evaluate(logits, labels)
}

/// Hyperparameters of the robust losses. Defaults follow the usual settings of
/// the works that introduced each loss; all are overridable from config.
#[derive(Debug, Clone, PartialEq)]
pub struct RobustParams {
    pub gce_q: f64,
    pub sce_a: f64,
    pub sce_b: f64,
    /// Value substituted for `log 0` in reverse cross entropy.
    pub sce_log_zero: f64,
    pub agce_a: f64,
    pub agce_q: f64,
    pub ael_a: f64,
    /// Weight of the active term in a combination.
    pub active_weight: f64,
    /// Weight of the passive term in a combination.
    pub passive_weight: f64,
}

impl Default for RobustParams {
    fn default() -> Self {
        Self {
            gce_q: 0.7,
            sce_a: 0.1,
            sce_b: 1.0,
            sce_log_zero: -4.0,
            agce_a: 0.6,
            agce_q: 0.6,
            ael_a: 2.5,
            active_weight: 1.0,
            passive_weight: 1.0,
        }
    }
}

impl RobustParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, why: &str| Err(Error::config(format!("loss.{key}"), why.to_string()));
        if !(self.gce_q > 0.0 && self.gce_q <= 1.0) {
            return bad("gce_q", "must lie in (0, 1]");
        }
        if !(self.sce_a > 0.0 && self.sce_b > 0.0) {
            return bad("sce_a", "sce_a and sce_b must be positive");
        }
        if !(self.sce_log_zero < 0.0) {
            return bad("sce_log_zero", "must be negative");
        }
        if !(self.agce_a > 0.0 && self.agce_q > 0.0) {
            return bad("agce_a", "agce_a and agce_q must be positive");
        }
        if !(self.ael_a > 0.0) {
            return bad("ael_a", "must be positive");
        }
        if !(self.active_weight >= 0.0 && self.passive_weight >= 0.0) {
            return bad("active_weight", "combination weights must be non-negative");
        }
        Ok(())
    }
}

type LossFactory = fn(&RobustParams) -> Result<Box<dyn ClassificationLoss>>;

/// Losses selectable by name (`ce`, `gce`, `sce`, `mae`, `nce`, `agce`, `ael`,
/// `nce_agce`, `nce_ael`, `nce_mae`).
pub struct LossRegistry {
    factories: BTreeMap<String, LossFactory>,
}

impl Default for LossRegistry {
    fn default() -> Self {
        let mut r = Self {
            factories: BTreeMap::new(),
        };
        r.register("ce", |_| Ok(Box::new(CrossEntropy)));
        r.register("gce", |p| Ok(Box::new(Gce::new(p.gce_q)?)));
        r.register("sce", |p| Ok(Box::new(Sce::new(p.sce_a, p.sce_b, p.sce_log_zero)?)));
        r.register("mae", |_| Ok(Box::new(Mae)));
        r.register("nce", |_| Ok(Box::new(NormalizedCe)));
        r.register("agce", |p| Ok(Box::new(Agce::new(p.agce_a, p.agce_q)?)));
        r.register("ael", |p| Ok(Box::new(Ael::new(p.ael_a)?)));
        r.register("nce_agce", |p| {
            Ok(Box::new(Combo::new(
                Box::new(NormalizedCe),
                Box::new(Agce::new(p.agce_a, p.agce_q)?),
                p.active_weight,
                p.passive_weight,
            )?))
        });
        r.register("nce_ael", |p| {
            Ok(Box::new(Combo::new(
                Box::new(NormalizedCe),
                Box::new(Ael::new(p.ael_a)?),
                p.active_weight,
                p.passive_weight,
            )?))
        });
        r.register("nce_mae", |p| {
            Ok(Box::new(Combo::new(
                Box::new(NormalizedCe),
                Box::new(Mae),
                p.active_weight,
                p.passive_weight,
            )?))
        });
        r
    }
}

impl LossRegistry {
    pub fn register(&mut self, name: &str, factory: LossFactory) {
        self.factories.insert(name.to_string(), factory);
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.factories.keys().map(String::as_str)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.factories.contains_key(name)
    }

    pub fn build(&self, name: &str, params: &RobustParams) -> Result<Box<dyn ClassificationLoss>> {
        params.validate()?;
        let f = self.factories.get(name).ok_or_else(|| {
            Error::config(
                "loss.name",
                format!(
                    "unknown loss `{name}` (known: {})",
                    self.names().collect::<Vec<_>>().join(", ")
                ),
            )
        })?;
        f(params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ce_on_extreme_correct_logits_is_zero() {
        let logits = Mat::from_rows(&[[60.0, -60.0, -60.0]]).unwrap();
        assert!(ce(&logits, &[0]).unwrap().value < 1e-25);
    }

    #[test]
    fn ce_uniform_is_log_c() {
        let out = ce(&Mat::zeros(4, 10), &[0, 3, 9, 2]).unwrap();
        assert!((out.value - 10f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn ce_gradient_is_softmax_minus_onehot_over_b() {
        let logits = Mat::from_rows(&[[1.0, 0.0], [0.5, -0.5]]).unwrap();
        let out = ce(&logits, &[0, 1]).unwrap();
        let p = crate::numerics::softmax_rows(&logits);
        assert!((out.grad_logits[(0, 0)] - (p[(0, 0)] - 1.0) / 2.0).abs() < 1e-15);
        assert!((out.grad_logits[(1, 0)] - p[(1, 0)] / 2.0).abs() < 1e-15);
    }

    #[test]
    fn bad_labels_and_shapes() {
        assert!(matches!(ce(&Mat::zeros(2, 3), &[0, 3]), Err(Error::InvalidArgument(_))));
        assert!(matches!(ce(&Mat::zeros(2, 3), &[0]), Err(Error::Dimension(_))));
    }

    #[test]
    fn registry_builds_every_name() {
        let reg = LossRegistry::default();
        let logits = Mat::from_rows(&[[0.2, -0.1, 0.4], [1.0, 0.0, -1.0]]).unwrap();
        for name in reg.names() {
            let loss = reg.build(name, &RobustParams::default()).unwrap();
            let out = loss.evaluate(&logits, &[2, 0]).unwrap();
            assert!(out.value.is_finite(), "{name}");
        }
        assert!(matches!(
            reg.build("focal", &RobustParams::default()),
            Err(Error::Config { .. })
        ));
        let bad = RobustParams {
            gce_q: 0.0,
            ..RobustParams::default()
        };
        assert!(reg.build("gce", &bad).is_err());
    }
}
