use crate::error::{Error, Result};
use crate::tensor::Tensor4;

#[derive(Debug, Clone)]
pub struct LossOutput {
    /// Mean over the batch.
    pub loss: f64,
    /// `(softmax - onehot) / n`, shaped like the logits.
    pub grad: Tensor4,
}

/// Softmax cross-entropy over the channel axis of `(n, classes, 1, 1)` logits.
pub fn softmax_cross_entropy(logits: &Tensor4, labels: &[usize]) -> Result<LossOutput> {
    let n = logits.batch();
    let classes = logits.item_len();
    if labels.len() != n {
        return Err(Error::ShapeMismatch {
            context: "softmax_cross_entropy",
            dimension: "label count",
            expected: n,
            actual: labels.len(),
        });
    }
    if n == 0 {
        return Err(Error::InvalidArgument("cross-entropy over an empty batch".into()));
    }
    let mut grad = Tensor4::zeros(logits.dims());
    let mut total = 0.0;
    for (b, &label) in labels.iter().enumerate() {
        if label >= classes {
            return Err(Error::LabelOutOfRange { index: b, label });
        }
        let row = logits.item(b);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|&x| (x - max).exp()).sum();
        let log_sum = sum.ln() + max;
        total += log_sum - row[label];
        let g = &mut grad.data_mut()[b * classes..(b + 1) * classes];
        for (j, gj) in g.iter_mut().enumerate() {
            let p = (row[j] - log_sum).exp();
            *gj = (p - if j == label { 1.0 } else { 0.0 }) / n as f64;
        }
    }
    Ok(LossOutput {
        loss: total / n as f64,
        grad,
    })
}

/// Index of the largest logit per row (first on ties).
pub fn argmax_rows(logits: &Tensor4) -> Vec<usize> {
    (0..logits.batch())
        .map(|b| {
            let row = logits.item(b);
            let mut best = 0;
            for j in 1..row.len() {
                if row[j] > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn logits(rows: &[&[f64]]) -> Tensor4 {
        let c = rows[0].len();
        Tensor4::from_vec([rows.len(), c, 1, 1], rows.concat()).unwrap()
    }

    #[test]
    fn uniform_is_ln_ten() {
        let out = softmax_cross_entropy(&logits(&[&[0.3; 10]]), &[4]).unwrap();
        assert!((out.loss - 10f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn confident_correct_is_near_zero() {
        let mut row = [0.0; 10];
        row[2] = 800.0;
        let out = softmax_cross_entropy(&logits(&[&row]), &[2]).unwrap();
        assert!(out.loss.abs() < 1e-300 || out.loss == 0.0);
        assert!(out.grad.data().iter().all(|g| g.is_finite()));
    }

    #[test]
    fn two_class_closed_form() {
        let out = softmax_cross_entropy(&logits(&[&[0.0, 3f64.ln()]]), &[1]).unwrap();
        // p1 = 3/4, loss = ln(4/3)
        assert!((out.loss - (4.0f64 / 3.0).ln()).abs() < 1e-15);
        assert!((out.loss - 0.287_682_072_451_780_9).abs() < 1e-14);
        assert!((out.grad.data()[0] - 0.25).abs() < 1e-15);
        assert!((out.grad.data()[1] + 0.25).abs() < 1e-15);
    }

    #[test]
    fn bad_label() {
        let err = softmax_cross_entropy(&logits(&[&[0.0; 10]]), &[10]).unwrap_err();
        assert!(matches!(err, Error::LabelOutOfRange { index: 0, label: 10 }));
    }
}
