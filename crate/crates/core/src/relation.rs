//! Relation graphs over a batch of representations and the losses that align a
//! student graph with a frozen teacher graph.
//!
//! Each representation row is centered over its feature dimension and scaled to
//! unit length; Pearson correlation between two rows is then a dot product. The
//! edge matrix holds within-network correlations (`U Uᵀ`, diagonal forced to 1)
//! and the node matrix holds teacher-to-student correlations (`U_t U_sᵀ`).
//! Gradients flow to the student representations only.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numerics::{dot, matmul, matmul_nt, matmul_tn, Mat, EPS};

/// One representation row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct RepBatch(pub Mat);

/// `B x B` Pearson correlations within one network; symmetric, unit diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeMatrix(pub Mat);

/// `B x B` correlations between teacher row `i` and student row `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeMatrix(pub Mat);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RmdWeights {
    /// Weight of node matching.
    pub alpha: f64,
    /// Weight of edge matching.
    pub beta: f64,
}

impl Default for RmdWeights {
    fn default() -> Self {
        Self { alpha: 0.8, beta: 0.35 }
    }
}

/// How a residual matrix is reduced to a scalar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MatchNorm {
    /// Entrywise L2 norm.
    #[default]
    Frobenius,
    /// Mean of squared entries.
    MeanSquared,
}

impl MatchNorm {
    pub fn name(self) -> &'static str {
        match self {
            MatchNorm::Frobenius => "frobenius",
            MatchNorm::MeanSquared => "mse",
        }
    }

    /// Reduced value and its gradient with respect to the residual.
    fn reduce(self, residual: &Mat) -> (f64, Mat) {
        match self {
            MatchNorm::Frobenius => {
                let v = residual.frobenius_norm();
                if v == 0.0 {
                    (0.0, Mat::zeros(residual.rows(), residual.cols()))
                } else {
                    (v, residual.scale(1.0 / v))
                }
            }
            MatchNorm::MeanSquared => {
                let n = residual.as_slice().len().max(1) as f64;
                let v = residual.as_slice().iter().map(|r| r * r).sum::<f64>() / n;
                (v, residual.scale(2.0 / n))
            }
        }
    }
}

impl fmt::Display for MatchNorm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MatchNorm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "frobenius" | "fro" | "l2" => Ok(MatchNorm::Frobenius),
            "mse" | "mean_squared" => Ok(MatchNorm::MeanSquared),
            other => Err(Error::config("rmd.norm", format!("unknown norm `{other}`"))),
        }
    }
}

/// Pearson correlation of two vectors over their coordinates; 0 when either
/// vector is (numerically) constant.
pub fn pearson_edge(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::dim(format!("pearson_edge: lengths {} and {}", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(Error::dim("pearson_edge needs at least two coordinates"));
    }
    let mx = x.iter().sum::<f64>() / x.len() as f64;
    let my = y.iter().sum::<f64>() / y.len() as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    let (nx, ny) = (sxx.sqrt(), syy.sqrt());
    if nx < EPS || ny < EPS {
        return Ok(0.0);
    }
    Ok(sxy / (nx * ny))
}

/// Rows centered and scaled to unit length, with the centered norms kept for
/// the backward pass. Degenerate rows become zero.
struct UnitRows {
    u: Mat,
    norms: Vec<f64>,
}

impl UnitRows {
    fn new(x: &Mat) -> Result<Self> {
        if x.cols() < 2 {
            return Err(Error::dim(
                "correlations need representations with at least two features",
            ));
        }
        let mut u = x.clone();
        let mut norms = Vec::with_capacity(x.rows());
        for r in 0..u.rows() {
            let row = u.row_mut(r);
            let mean = row.iter().sum::<f64>() / row.len() as f64;
            row.iter_mut().for_each(|v| *v -= mean);
            let n = dot(row, row).sqrt();
            if n < EPS {
                row.iter_mut().for_each(|v| *v = 0.0);
            } else {
                row.iter_mut().for_each(|v| *v /= n);
            }
            norms.push(n);
        }
        Ok(Self { u, norms })
    }

    /// Pulls a gradient with respect to the unit rows back to the raw rows.
    fn backward(&self, grad_u: &Mat) -> Mat {
        let mut out = Mat::zeros(grad_u.rows(), grad_u.cols());
        for r in 0..grad_u.rows() {
            let n = self.norms[r];
            if n < EPS {
                continue;
            }
            let g = grad_u.row(r);
            let u = self.u.row(r);
            let gmean = g.iter().sum::<f64>() / g.len() as f64;
            let ug = dot(u, g);
            for ((o, &gj), &uj) in out.row_mut(r).iter_mut().zip(g).zip(u) {
                *o = (gj - gmean - ug * uj) / n;
            }
        }
        out
    }
}

fn edge_from_units(units: &UnitRows) -> Result<EdgeMatrix> {
    let mut e = matmul_nt(&units.u, &units.u)?;
    for i in 0..e.rows() {
        e[(i, i)] = 1.0;
    }
    Ok(EdgeMatrix(e))
}

pub fn edge_matrix(n: &RepBatch) -> Result<EdgeMatrix> {
    edge_from_units(&UnitRows::new(&n.0)?)
}

pub fn node_matrix(nt: &RepBatch, ns: &RepBatch) -> Result<NodeMatrix> {
    if nt.0.shape() != ns.0.shape() {
        return Err(Error::dim(format!(
            "node matrix: teacher {:?} vs student {:?}",
            nt.0.shape(),
            ns.0.shape()
        )));
    }
    let ut = UnitRows::new(&nt.0)?;
    let us = UnitRows::new(&ns.0)?;
    Ok(NodeMatrix(matmul_nt(&ut.u, &us.u)?))
}

/// `‖E_t − E_s‖` and its gradient with respect to the entries of `E_s`.
pub fn edge_loss(et: &EdgeMatrix, es: &EdgeMatrix) -> Result<(f64, Mat)> {
    edge_loss_with(et, es, MatchNorm::Frobenius)
}

pub fn edge_loss_with(et: &EdgeMatrix, es: &EdgeMatrix, norm: MatchNorm) -> Result<(f64, Mat)> {
    let residual = es.0.sub(&et.0)?;
    Ok(norm.reduce(&residual))
}

/// `‖M_st − I‖` and its gradient with respect to the entries of `M_st`.
pub fn node_loss(m: &NodeMatrix) -> Result<(f64, Mat)> {
    node_loss_with(m, MatchNorm::Frobenius)
}

pub fn node_loss_with(m: &NodeMatrix, norm: MatchNorm) -> Result<(f64, Mat)> {
    if m.0.rows() != m.0.cols() {
        return Err(Error::dim(format!("node matrix must be square, got {:?}", m.0.shape())));
    }
    let residual = m.0.sub(&Mat::identity(m.0.rows()))?;
    Ok(norm.reduce(&residual))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RmdOut {
    pub value: f64,
    pub node: f64,
    pub edge: f64,
    /// Gradient with respect to the student representations.
    pub grad_student: Mat,
    /// Gradient reaching the teacher representations; always zero because
    /// the teacher channel is detached.
    pub grad_teacher: Mat,
}

/// `α·L_node + β·L_edge` with the Frobenius reading of both norms.
pub fn rmdnet_loss(nt: &RepBatch, ns: &RepBatch, w: RmdWeights) -> Result<RmdOut> {
    rmdnet_loss_with(nt, ns, w, MatchNorm::Frobenius)
}

pub fn rmdnet_loss_with(nt: &RepBatch, ns: &RepBatch, w: RmdWeights, norm: MatchNorm) -> Result<RmdOut> {
    let (b, d) = ns.0.shape();
    if nt.0.shape() != (b, d) {
        return Err(Error::dim(format!(
            "teacher reps {:?} vs student reps {:?}",
            nt.0.shape(),
            ns.0.shape()
        )));
    }
    if b < 2 {
        return Err(Error::dim("relation losses need a batch of at least two samples"));
    }
    if !(w.alpha >= 0.0 && w.beta >= 0.0) {
        return Err(Error::config("rmd.alpha", "alpha and beta must be non-negative"));
    }
    let ut = UnitRows::new(&nt.0)?;
    let us = UnitRows::new(&ns.0)?;

    let et = edge_from_units(&ut)?;
    let es = edge_from_units(&us)?;
    let (edge, mut g_edge) = edge_loss_with(&et, &es, norm)?;
    // The forced diagonal of E_s is constant.
    for i in 0..b {
        g_edge[(i, i)] = 0.0;
    }

    let m = NodeMatrix(matmul_nt(&ut.u, &us.u)?);
    let (node, g_node) = node_loss_with(&m, norm)?;

    // ∂/∂U_s of β·L_edge is β (G + Gᵀ) U_s; of α·L_node it is α Gᵀ U_t.
    let g_sym = g_edge.add(&g_edge.transpose())?;
    let mut grad_u = matmul(&g_sym, &us.u)?.scale(w.beta);
    grad_u.add_scaled(&matmul_tn(&g_node, &ut.u)?, w.alpha)?;

    Ok(RmdOut {
        value: w.alpha * node + w.beta * edge,
        node,
        edge,
        grad_student: us.backward(&grad_u),
        grad_teacher: Mat::zeros(b, d),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rb(rows: &[&[f64]]) -> RepBatch {
        RepBatch(Mat::from_rows(rows).unwrap())
    }

    #[test]
    fn pearson_examples() {
        assert!((pearson_edge(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson_edge(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
        let r = pearson_edge(&[1.0, 2.0, 3.0, 4.0], &[2.0, 1.0, 4.0, 3.0]).unwrap();
        assert!((r - 0.6).abs() < 1e-15);
        assert!(pearson_edge(&[1.0], &[1.0]).is_err());
        assert_eq!(pearson_edge(&[2.0, 2.0, 2.0], &[1.0, 5.0, 3.0]).unwrap(), 0.0);
    }

    #[test]
    fn edge_matrix_examples() {
        let e = edge_matrix(&rb(&[&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]])).unwrap();
        for &v in e.0.as_slice() {
            assert!((v - 1.0).abs() < 1e-15);
        }
        let e = edge_matrix(&rb(&[&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]])).unwrap();
        assert_eq!(e.0[(0, 0)], 1.0);
        assert!((e.0[(0, 1)] + 1.0).abs() < 1e-15 && (e.0[(1, 0)] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_rows_get_forced_diagonal() {
        let e = edge_matrix(&rb(&[&[4.0, 4.0, 4.0], &[1.0, 0.0, 2.0]])).unwrap();
        assert_eq!(e.0.as_slice(), &[1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn node_matrix_examples() {
        let t = rb(&[&[1.0, 2.0, 3.0, 5.0], &[0.0, 1.0, -1.0, 2.0]]);
        let m = node_matrix(&t, &t).unwrap();
        assert!((m.0[(0, 0)] - 1.0).abs() < 1e-15 && (m.0[(1, 1)] - 1.0).abs() < 1e-15);

        // Centered teacher rows live in span{(1,-1,0,0)}, student rows in span{(0,0,1,-1)}.
        let t = rb(&[&[1.0, -1.0, 0.0, 0.0], &[-2.0, 2.0, 0.0, 0.0]]);
        let s = rb(&[&[0.0, 0.0, 1.0, -1.0], &[0.0, 0.0, -3.0, 3.0]]);
        assert!(node_matrix(&t, &s)
            .unwrap()
            .0
            .as_slice()
            .iter()
            .all(|v| v.abs() < 1e-15));
        assert!(node_matrix(&t, &rb(&[&[1.0, 2.0, 3.0, 4.0]])).is_err());
    }

    #[test]
    fn matching_losses_by_hand() {
        let i2 = EdgeMatrix(Mat::identity(2));
        let ones = EdgeMatrix(Mat::filled(2, 2, 1.0));
        assert_eq!(edge_loss(&i2, &i2).unwrap().0, 0.0);
        assert!((edge_loss(&i2, &ones).unwrap().0 - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(node_loss(&NodeMatrix(Mat::identity(3))).unwrap().0, 0.0);
        assert!((node_loss(&NodeMatrix(Mat::filled(2, 2, 1.0))).unwrap().0 - 2f64.sqrt()).abs() < 1e-15);
        assert!(node_loss(&NodeMatrix(Mat::zeros(2, 3))).is_err());
    }

    #[test]
    fn mse_norm_reads_as_mean_square() {
        let i2 = EdgeMatrix(Mat::identity(2));
        let ones = EdgeMatrix(Mat::filled(2, 2, 1.0));
        let (v, g) = edge_loss_with(&i2, &ones, MatchNorm::MeanSquared).unwrap();
        assert!((v - 0.5).abs() < 1e-15);
        assert!((g[(0, 1)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn rmdnet_examples() {
        // Identical, mutually uncorrelated rows: both losses vanish.
        let n = rb(&[&[1.0, -1.0, 0.0, 0.0], &[0.0, 0.0, 1.0, -1.0]]);
        let out = rmdnet_loss(&n, &n, RmdWeights::default()).unwrap();
        assert!(out.node < 1e-12 && out.edge < 1e-12 && out.value < 1e-12);

        let t = rb(&[&[1.0, 2.0, 0.5, -1.0], &[0.3, -0.2, 0.9, 0.4], &[2.0, 1.0, 0.0, 1.0]]);
        let s = rb(&[&[0.1, 0.4, -0.5, 1.0], &[1.3, 0.2, 0.3, 0.0], &[0.0, 1.0, 2.0, 1.5]]);
        let w = RmdWeights { alpha: 0.0, beta: 0.35 };
        let out = rmdnet_loss(&t, &s, w).unwrap();
        let et = edge_matrix(&t).unwrap();
        let es = edge_matrix(&s).unwrap();
        assert_eq!(out.value, 0.35 * edge_loss(&et, &es).unwrap().0);

        let l = 2f64.sqrt();
        let combined = RmdWeights::default().alpha * l + RmdWeights::default().beta * l;
        assert!((combined - 1.626346).abs() < 1e-6);
    }

    #[test]
    fn rmdnet_rejects_bad_inputs() {
        let a = rb(&[&[1.0, 2.0, 3.0]]);
        assert!(rmdnet_loss(&a, &a, RmdWeights::default()).is_err());
        let b = rb(&[&[1.0, 2.0, 3.0], &[3.0, 1.0, 2.0]]);
        let c = rb(&[&[1.0, 2.0], &[3.0, 1.0]]);
        assert!(rmdnet_loss(&b, &c, RmdWeights::default()).is_err());
    }
}
