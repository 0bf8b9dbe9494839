use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Numerically stable softmax of one logit row.
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
    let exps: Vec<T> = logits.iter().map(|&x| (x - max).exp()).collect();
    let sum = exps.iter().fold(T::zero(), |a, &e| a + e);
    exps.into_iter().map(|e| e / sum).collect()
}

/// Mean cross-entropy over a `[B, K]` logit batch and its gradient
/// `(softmax - onehot) / B`.
pub fn cross_entropy_loss<T: Scalar>(logits: &Tensor<T>, labels: &[u8]) -> Result<(T, Tensor<T>)> {
    let (b, k) = match *logits.shape() {
        [b, k] => (b, k),
        ref s => return Err(Error::InvalidShape(format!("logits must be B×K, got {s:?}"))),
    };
    if labels.is_empty() {
        return Err(Error::InvalidArgument("cross-entropy over an empty batch".into()));
    }
    if labels.len() != b {
        return Err(Error::InvalidShape(format!(
            "{} labels for a batch of {b}",
            labels.len()
        )));
    }
    let inv_b = T::one() / T::from_f64(b as f64);
    let mut total = T::zero();
    let mut grad = Vec::with_capacity(b * k);
    for (row, &y) in logits.data().chunks_exact(k).zip(labels) {
        let y = y as usize;
        if y >= k {
            return Err(Error::InvalidArgument(format!("label {y} outside 0..{k}")));
        }
        let max = row.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
        let sum = row.iter().fold(T::zero(), |a, &x| a + (x - max).exp());
        let lse = max + sum.ln();
        total = total + (lse - row[y]);
        for (j, &x) in row.iter().enumerate() {
            let p = (x - lse).exp();
            let onehot = if j == y { T::one() } else { T::zero() };
            grad.push((p - onehot) * inv_b);
        }
    }
    let loss = total * inv_b;
    if !loss.is_finite() {
        return Err(Error::Numeric { tensor: "loss".into() });
    }
    Ok((loss, Tensor::new(&[b, k], grad)?))
}
