use std::fmt;

use crate::error::{Error, Result};

/// Central-difference gradient `(f(x + h eᵢ) - f(x - h eᵢ)) / 2h`.
pub fn fd_grad<F>(f: F, x: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Oracle(format!("step must be positive, got {h}")));
    }
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let up = f(&probe);
        probe[i] = orig - h;
        let down = f(&probe);
        probe[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::Oracle(format!(
                "non-finite evaluation at coordinate {i}: f(+h)={up}, f(-h)={down}"
            )));
        }
        grad.push((up - down) / (2.0 * h));
    }
    Ok(grad)
}

/// Elementwise comparison `|a - n| <= max(abs_floor, rel_tol * max(|a|, |n|))`.
#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub rel_tol: f64,
    pub abs_floor: f64,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self {
            rel_tol: 1e-4,
            abs_floor: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradMismatch {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl fmt::Display for GradMismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "gradient mismatch at {}: analytic {:e} vs numeric {:e}",
            self.index, self.analytic, self.numeric
        )
    }
}

impl std::error::Error for GradMismatch {}

impl GradCheck {
    pub fn within(&self, analytic: f64, numeric: f64) -> bool {
        let diff = (analytic - numeric).abs();
        diff <= self.abs_floor.max(self.rel_tol * analytic.abs().max(numeric.abs()))
    }

    pub fn assert_close(&self, analytic: &[f64], numeric: &[f64]) -> Result<(), GradMismatch> {
        assert_eq!(analytic.len(), numeric.len(), "gradient lengths differ");
        for (index, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
            if !self.within(a, n) {
                return Err(GradMismatch {
                    index,
                    analytic: a,
                    numeric: n,
                });
            }
        }
        Ok(())
    }
}
