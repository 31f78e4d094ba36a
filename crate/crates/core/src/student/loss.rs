//! Distillation objectives with analytic gradients with respect to the
//! student embeddings.

use crate::error::{invalid, CoreError, Result};
use crate::label_guide::TextBank;
use crate::math::{dot, log_sum_exp, softmax_into};
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

/// Scalar loss and its gradient with respect to the row-major `N × D`
/// student embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub grad: Vec<f64>,
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(invalid("tau", format!("must be > 0, got {tau}")));
    }
    Ok(())
}

/// Contrastive loss between teacher targets `f2d` and student embeddings
/// `f3d` (both row-major `n × d`):
///
/// `L = (1/N) Σ_i [ −s_ii + log Σ_t exp(s_it) ]`, `s_it = f2d_i · f3d_t / τ`.
///
/// Rows are expected to be unit norm; the loss itself is defined for any
/// rows, which is what the gradient describes.
pub fn contrastive_loss(f2d: &[f64], f3d: &[f64], n: usize, d: usize, tau: f64) -> Result<LossGrad> {
    check_tau(tau)?;
    if n < 2 {
        return Err(invalid("N", "contrastive loss needs at least 2 instances"));
    }
    for (what, m) in [("f2d", f2d), ("f3d", f3d)] {
        if m.len() != n * d {
            return Err(CoreError::Shape {
                what: what.into(),
                expected: n * d,
                actual: m.len(),
            });
        }
    }
    let mut logits = vec![0.0; n];
    let mut probs = vec![0.0; n];
    let mut grad = vec![0.0; n * d];
    let mut loss = 0.0;
    let scale = 1.0 / (n as f64 * tau);
    for i in 0..n {
        let anchor = &f2d[i * d..(i + 1) * d];
        for (t, l) in logits.iter_mut().enumerate() {
            *l = dot(anchor, &f3d[t * d..(t + 1) * d]) / tau;
        }
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::NonFinite("similarity"));
        }
        loss += log_sum_exp(&logits) - logits[i];
        softmax_into(&logits, &mut probs);
        probs[i] -= 1.0;
        for (t, &p) in probs.iter().enumerate() {
            let g = &mut grad[t * d..(t + 1) * d];
            for (gk, &ak) in g.iter_mut().zip(anchor) {
                *gk += p * ak * scale;
            }
        }
    }
    Ok(LossGrad {
        loss: loss / n as f64,
        grad,
    })
}

/// Softmax cross-entropy of `f3d_i · T_c / τ` against `labels`, averaged
/// over the `n` rows. For unit rows the logits are cosines over `τ`.
pub fn ce_loss(f3d: &[f64], n: usize, bank: &TextBank, labels: &[usize], tau: f64) -> Result<LossGrad> {
    check_tau(tau)?;
    let d = bank.dim();
    let classes = bank.num_classes();
    if f3d.len() != n * d {
        return Err(CoreError::Shape {
            what: "f3d".into(),
            expected: n * d,
            actual: f3d.len(),
        });
    }
    if labels.len() != n {
        return Err(CoreError::Shape {
            what: "labels".into(),
            expected: n,
            actual: labels.len(),
        });
    }
    if n == 0 {
        return Err(CoreError::Empty("batch"));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(CoreError::LabelOutOfRange { label, classes });
    }
    let mut logits = vec![0.0; classes];
    let mut probs = vec![0.0; classes];
    let mut grad = vec![0.0; n * d];
    let mut loss = 0.0;
    let scale = 1.0 / (n as f64 * tau);
    for (i, &y) in labels.iter().enumerate() {
        let e = &f3d[i * d..(i + 1) * d];
        for (c, l) in logits.iter_mut().enumerate() {
            *l = dot(e, bank.row(c)) / tau;
        }
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::NonFinite("similarity"));
        }
        loss += log_sum_exp(&logits) - logits[y];
        softmax_into(&logits, &mut probs);
        probs[y] -= 1.0;
        let g = &mut grad[i * d..(i + 1) * d];
        for (c, &p) in probs.iter().enumerate() {
            for (gk, &tk) in g.iter_mut().zip(bank.row(c)) {
                *gk += p * tk * scale;
            }
        }
    }
    Ok(LossGrad {
        loss: loss / n as f64,
        grad,
    })
}

/// `α·L_contrastive + β·L_CE`.
pub fn total_loss(contrastive: f64, ce: f64, alpha: f64, beta: f64) -> f64 {
    alpha * contrastive + beta * ce
}

/// Combines the two gradients with the same weights as [`total_loss`].
pub fn total_grad(contrastive: &[f64], ce: &[f64], alpha: f64, beta: f64) -> Vec<f64> {
    contrastive
        .iter()
        .zip(ce)
        .map(|(c, e)| alpha * c + beta * e)
        .collect()
}
