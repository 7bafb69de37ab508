//! Losses, gradients and predictions for linear learners.
//!
//! Squared loss: `(y - x.theta)^2`, gradient `-2 x (y - x.theta)`.
//! Cross-entropy: `logsumexp(z) - <label, z>` with logits `z = W x`, gradient
//! rows `(softmax(z)_c - label_c) x`. Soft labels are accepted wherever hard
//! class labels are.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{invalid, Result};
use crate::math;
use crate::model::{Label, LossKind, Params, Sample};

#[derive(Debug, Clone, PartialEq)]
pub enum Prediction {
    Scalar(f64),
    Probs(Vec<f64>),
    Logits(Vec<f64>),
}

fn check_x(theta: &Params, x: &[f64]) -> Result<()> {
    if theta.dim() != x.len() {
        return Err(invalid(format!("parameter dim {} vs feature dim {}", theta.dim(), x.len())));
    }
    Ok(())
}

fn check_rows(kind: LossKind, theta: &Params) -> Result<()> {
    if theta.rows() != kind.param_rows() {
        return Err(invalid(format!("{kind:?} expects {} parameter rows, got {}", kind.param_rows(), theta.rows())));
    }
    Ok(())
}

/// Logits `W x`, one per parameter row.
pub fn logits(theta: &Params, x: &[f64]) -> Result<Vec<f64>> {
    check_x(theta, x)?;
    Ok((0..theta.rows()).map(|r| math::dot(theta.row(r), x)).collect())
}

pub fn predict(kind: LossKind, theta: &Params, x: &[f64]) -> Result<Prediction> {
    check_rows(kind, theta)?;
    match kind {
        LossKind::SquaredRegression => {
            check_x(theta, x)?;
            Ok(Prediction::Scalar(math::dot(theta.values(), x)))
        }
        LossKind::CrossEntropy { .. } => Ok(Prediction::Probs(math::softmax(&logits(theta, x)?))),
    }
}

pub fn loss(kind: LossKind, theta: &Params, sample: &Sample) -> Result<f64> {
    check_rows(kind, theta)?;
    check_x(theta, &sample.x)?;
    match (kind, &sample.label) {
        (LossKind::SquaredRegression, Label::Real(y)) => {
            let r = y - math::dot(theta.values(), &sample.x);
            Ok(r * r)
        }
        (LossKind::CrossEntropy { classes }, label) => {
            let z = logits(theta, &sample.x)?;
            Ok(ce_from_logits(&z, &label.class_weights(classes)?))
        }
        (kind, label) => Err(invalid(format!("label {label:?} does not match {kind:?}"))),
    }
}

/// `CE(label, softmax(z)) = logsumexp(z) - <label, z>` for a label on the simplex.
pub fn ce_from_logits(z: &[f64], label: &[f64]) -> f64 {
    math::logsumexp(z) - math::dot(label, z)
}

/// Adds `scale * grad_loss(theta, sample)` into `out` without allocating the
/// gradient for regression.
pub fn add_scaled_grad(kind: LossKind, theta: &Params, sample: &Sample, scale: f64, out: &mut Params) -> Result<()> {
    check_rows(kind, theta)?;
    check_x(theta, &sample.x)?;
    debug_assert!(theta.same_shape(out));
    let x = &sample.x;
    match (kind, &sample.label) {
        (LossKind::SquaredRegression, Label::Real(y)) => {
            let coef = -2.0 * (y - math::dot(theta.values(), x)) * scale;
            for (o, xi) in out.values_mut().iter_mut().zip(x) {
                *o += coef * xi;
            }
            Ok(())
        }
        (LossKind::CrossEntropy { classes }, label) => {
            let w = label.class_weights(classes)?;
            let q = math::softmax(&logits(theta, x)?);
            let d = theta.dim();
            let vals = out.values_mut();
            for c in 0..classes {
                let coef = (q[c] - w[c]) * scale;
                for (o, xi) in vals[c * d..(c + 1) * d].iter_mut().zip(x) {
                    *o += coef * xi;
                }
            }
            Ok(())
        }
        (kind, label) => Err(invalid(format!("label {label:?} does not match {kind:?}"))),
    }
}

pub fn grad_loss(kind: LossKind, theta: &Params, sample: &Sample) -> Result<Params> {
    let mut g = Params::zeros(theta.rows(), theta.dim());
    add_scaled_grad(kind, theta, sample, 1.0, &mut g)?;
    Ok(g)
}

/// Smoothness constant of either loss when `||x|| <= R`: `2 R^2`.
pub fn smoothness_constant(_kind: LossKind, radius: f64) -> f64 {
    2.0 * radius * radius
}
