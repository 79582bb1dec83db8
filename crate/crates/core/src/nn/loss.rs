//! Mean-reduced losses returning the value and the gradient with respect to
//! the prediction.

use super::layers::sigmoid;
use super::NnError;
use crate::Scalar;

/// Probabilities are clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]`.
pub const BCE_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct LossValue<T> {
    pub loss: T,
    pub grad: Vec<T>,
}

fn check<T>(pred: &[T], target: &[T]) -> Result<T, NnError>
where
    T: Scalar,
{
    if pred.len() != target.len() {
        return Err(NnError::Contract(format!(
            "loss over {} predictions and {} targets",
            pred.len(),
            target.len()
        )));
    }
    if pred.is_empty() {
        return Err(NnError::Contract("loss over zero elements".into()));
    }
    Ok(T::lit(pred.len() as f64))
}

/// Binary cross-entropy on probabilities.
pub fn bce<T: Scalar>(pred: &[T], target: &[T]) -> Result<LossValue<T>, NnError> {
    let n = check(pred, target)?;
    let lo = T::lit(BCE_CLAMP);
    let hi = T::one() - lo;
    let mut loss = T::zero();
    let mut grad = Vec::with_capacity(pred.len());
    for (&p, &t) in pred.iter().zip(target) {
        let p = p.max(lo).min(hi);
        loss -= t * p.ln() + (T::one() - t) * (T::one() - p).ln();
        grad.push((p - t) / (p * (T::one() - p)) / n);
    }
    Ok(LossValue {
        loss: loss / n,
        grad,
    })
}

/// Binary cross-entropy on logits (numerically stable form).
pub fn bce_with_logits<T: Scalar>(logits: &[T], target: &[T]) -> Result<LossValue<T>, NnError> {
    let n = check(logits, target)?;
    let mut loss = T::zero();
    let mut grad = Vec::with_capacity(logits.len());
    for (&z, &t) in logits.iter().zip(target) {
        loss += z.max(T::zero()) - z * t + (T::one() + (-z.abs()).exp()).ln();
        grad.push((sigmoid(z) - t) / n);
    }
    Ok(LossValue {
        loss: loss / n,
        grad,
    })
}

/// Mean squared error.
pub fn l2<T: Scalar>(pred: &[T], target: &[T]) -> Result<LossValue<T>, NnError> {
    let n = check(pred, target)?;
    let two = T::lit(2.0);
    let mut loss = T::zero();
    let grad = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let d = p - t;
            loss += d * d;
            two * d / n
        })
        .collect();
    Ok(LossValue {
        loss: loss / n,
        grad,
    })
}

/// Mean absolute error; the gradient at zero residual is zero.
pub fn l1<T: Scalar>(pred: &[T], target: &[T]) -> Result<LossValue<T>, NnError> {
    let n = check(pred, target)?;
    let mut loss = T::zero();
    let grad = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let d = p - t;
            loss += d.abs();
            if d > T::zero() {
                T::one() / n
            } else if d < T::zero() {
                -T::one() / n
            } else {
                T::zero()
            }
        })
        .collect();
    Ok(LossValue {
        loss: loss / n,
        grad,
    })
}
