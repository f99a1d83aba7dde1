use crate::error::{Error, Result};

/// Max-shifted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Cross-entropy of `softmax(logits)` against `label`, with gradient
/// `softmax(logits) - onehot(label)`.
pub fn softmax_cross_entropy(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= logits.len() {
        return Err(Error::LabelOutOfRange {
            label,
            classes: logits.len(),
        });
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_total = logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    let loss = log_total - (logits[label] - max);
    let mut grad = softmax(logits);
    grad[label] -= 1.0;
    Ok((loss, grad))
}

/// Index of the largest logit; ties go to the lowest index.
pub fn argmax(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in logits.iter().enumerate() {
        if *v > logits[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits() {
        for scale in [0.0, 1.0, 1e3, -1e6] {
            let (loss, grad) = softmax_cross_entropy(&[scale; 10], 3).unwrap();
            assert!((loss - 10f64.ln()).abs() < 1e-12, "scale {scale}: {loss}");
            assert!(grad.iter().sum::<f64>().abs() < 1e-12);
        }
    }

    #[test]
    fn label_out_of_range() {
        assert!(matches!(
            softmax_cross_entropy(&[0.0, 1.0], 2),
            Err(Error::LabelOutOfRange {
                label: 2,
                classes: 2
            })
        ));
    }

    #[test]
    fn argmax_ties_lowest() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 0.0]), 1);
        assert_eq!(argmax(&[2.0, 2.0]), 0);
    }
}
