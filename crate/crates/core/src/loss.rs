//! Losses in output space and Gauss-Newton curvature assembly.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::linalg::{gram, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// `½‖ŷ − y‖²` per sample.
    Mse,
    /// Softmax over logits followed by `−log p_k`; targets are one-hot.
    SoftmaxCrossEntropy,
}

/// Which curvature matrix stands in for the cross-entropy Hessian.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CeCurvature {
    /// `(1/N) Σ ∇f_i ∇f_iᵀ` built from per-sample parameter gradients.
    #[default]
    OuterProduct,
    /// `(1/N) Σ J_iᵀ (diag(p_i) − p_i p_iᵀ) J_i`.
    Exact,
}

impl FromStr for CeCurvature {
    type Err = ();

    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        match s {
            "eq7" | "outer_product" => Ok(Self::OuterProduct),
            "exact" => Ok(Self::Exact),
            _ => Err(()),
        }
    }
}

impl fmt::Display for CeCurvature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::OuterProduct => "outer_product",
            Self::Exact => "exact",
        })
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let mut p: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= s);
    p
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let m = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln()
}

impl LossKind {
    /// Per-sample loss and its gradient with respect to the network output.
    pub fn value_and_output_grad(self, output: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
        if output.len() != target.len() {
            return Err(Error::ShapeMismatch(format!(
                "output of length {} vs target of length {}",
                output.len(),
                target.len()
            )));
        }
        if !output.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("network output"));
        }
        match self {
            LossKind::Mse => {
                let grad: Vec<f64> = output.iter().zip(target).map(|(o, t)| o - t).collect();
                let value = 0.5 * grad.iter().map(|r| r * r).sum::<f64>();
                Ok((value, grad))
            }
            LossKind::SoftmaxCrossEntropy => {
                let lse = log_sum_exp(output);
                let value = output
                    .iter()
                    .zip(target)
                    .map(|(z, t)| t * (lse - z))
                    .sum::<f64>();
                let grad = softmax(output)
                    .into_iter()
                    .zip(target)
                    .map(|(p, t)| p - t)
                    .collect();
                Ok((value, grad))
            }
        }
    }

    /// Applies the loss Hessian with respect to the output, `∂²ε/∂ŷ² · u`.
    pub fn output_hessian_vec(self, output: &[f64], u: &[f64]) -> Vec<f64> {
        match self {
            LossKind::Mse => u.to_vec(),
            LossKind::SoftmaxCrossEntropy => {
                let p = softmax(output);
                let pu: f64 = p.iter().zip(u).map(|(a, b)| a * b).sum();
                p.iter().zip(u).map(|(pi, ui)| pi * (ui - pu)).collect()
            }
        }
    }
}

/// Input from which a Gauss-Newton matrix is assembled.
#[derive(Debug, Clone, Copy)]
pub enum CurvatureSource<'a> {
    /// Stacked output Jacobian, `N·c × n`, row `i·c + j` holding `∂ŷ_ij/∂θ`.
    Jacobian(&'a Matrix),
    /// Per-sample parameter gradients, `N × n`.
    PerSampleGrads(&'a Matrix),
}

/// Assembles the Gauss-Newton curvature for `samples` data points.
///
/// MSE uses `(1/N) Σ J_iᵀ J_i`; cross-entropy uses the outer-product form
/// `(1/N) Σ ∇f_i ∇f_iᵀ`. The exact softmax variant is [`ggn_softmax_exact`].
pub fn ggn_assemble(loss: LossKind, source: CurvatureSource<'_>, samples: usize) -> Result<Matrix> {
    if samples == 0 {
        return Err(Error::DimensionMismatch("curvature from zero samples".into()));
    }
    let m = match (loss, source) {
        (LossKind::Mse, CurvatureSource::Jacobian(j)) => {
            if j.rows() % samples != 0 {
                return Err(Error::DimensionMismatch(format!(
                    "jacobian with {} rows for {samples} samples",
                    j.rows()
                )));
            }
            j
        }
        (LossKind::SoftmaxCrossEntropy, CurvatureSource::PerSampleGrads(g)) => {
            if g.rows() != samples {
                return Err(Error::DimensionMismatch(format!(
                    "{} per-sample gradients for {samples} samples",
                    g.rows()
                )));
            }
            g
        }
        (LossKind::Mse, _) => {
            return Err(Error::DimensionMismatch(
                "MSE curvature is assembled from the output jacobian".into(),
            ))
        }
        (LossKind::SoftmaxCrossEntropy, _) => {
            return Err(Error::DimensionMismatch(
                "outer-product curvature is assembled from per-sample gradients".into(),
            ))
        }
    };
    let mut h = gram(m);
    h.scale_in_place(1.0 / samples as f64);
    Ok(h)
}

/// Exact softmax cross-entropy GGN from the stacked Jacobian and the
/// per-sample class probabilities (`N × c`).
pub fn ggn_softmax_exact(jac: &Matrix, probs: &Matrix) -> Result<Matrix> {
    let samples = probs.rows();
    let classes = probs.cols();
    if samples == 0 || jac.rows() != samples * classes {
        return Err(Error::DimensionMismatch(format!(
            "jacobian with {} rows for {samples}x{classes} probabilities",
            jac.rows()
        )));
    }
    // diag(p) − ppᵀ = Σ_j p_j (e_j − p)(e_j − p)ᵀ, so each sample contributes
    // rows √p_j (J_j − Σ_k p_k J_k).
    let n = jac.cols();
    let mut rows = Matrix::zeros(samples * classes, n);
    let mut mean = vec![0.0; n];
    for i in 0..samples {
        let p = probs.row(i);
        mean.iter_mut().for_each(|v| *v = 0.0);
        for (k, &pk) in p.iter().enumerate() {
            crate::linalg::axpy(pk, jac.row(i * classes + k), &mut mean);
        }
        for (j, &pj) in p.iter().enumerate() {
            let w = pj.sqrt();
            let src = jac.row(i * classes + j);
            let dst = rows.row_mut(i * classes + j);
            for ((d, s), m) in dst.iter_mut().zip(src).zip(&mean) {
                *d = w * (s - m);
            }
        }
    }
    let mut h = gram(&rows);
    h.scale_in_place(1.0 / samples as f64);
    Ok(h)
}
