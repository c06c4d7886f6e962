use super::Tensor;
use crate::error::{Result, SimError};

fn log_softmax_row(logits: &[f64], label: usize, grad: &mut [f64], scale: f64) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|&z| (z - max).exp()).sum();
    let lse = max + sum.ln();
    for (g, &z) in grad.iter_mut().zip(logits) {
        *g = (z - lse).exp() * scale;
    }
    grad[label] -= scale;
    // lse >= logits[label] mathematically; clamp the rounding residue.
    (lse - logits[label]).max(0.0)
}

/// Loss and `softmax(logits) - onehot(label)` for one rank-1 logit vector.
pub fn softmax_cross_entropy(logits: &Tensor, label: usize) -> Result<(f64, Tensor)> {
    if logits.shape().len() != 1 {
        return Err(SimError::Shape {
            layer: "softmax_cross_entropy",
            expected: vec![logits.len()],
            got: logits.shape().to_vec(),
        });
    }
    if label >= logits.len() {
        return Err(SimError::LabelRange {
            label,
            classes: logits.len(),
        });
    }
    let mut grad = vec![0.0; logits.len()];
    let loss = log_softmax_row(logits.values(), label, &mut grad, 1.0);
    Ok((loss, Tensor::vector(grad).check_finite("softmax_cross_entropy")?))
}

/// Mean loss over a `[N, C]` batch; the gradient is that of the mean.
pub fn softmax_cross_entropy_batch(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let shape = logits.shape();
    if shape.len() != 2 || shape[0] != labels.len() {
        return Err(SimError::Shape {
            layer: "softmax_cross_entropy",
            expected: vec![labels.len(), 0],
            got: shape.to_vec(),
        });
    }
    let classes = shape[1];
    let n = labels.len();
    let scale = 1.0 / n as f64;
    let mut grad = vec![0.0; n * classes];
    let mut total = 0.0;
    for ((row, g), &label) in logits
        .values()
        .chunks_exact(classes)
        .zip(grad.chunks_exact_mut(classes))
        .zip(labels)
    {
        if label >= classes {
            return Err(SimError::LabelRange { label, classes });
        }
        total += log_softmax_row(row, label, g, scale);
    }
    let grad = Tensor::new(shape.to_vec(), grad)?.check_finite("softmax_cross_entropy")?;
    Ok((total * scale, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_logits() {
        let (loss, g) = softmax_cross_entropy(&Tensor::vector(vec![0.0, 0.0]), 0).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((g.values()[0] + 0.5).abs() < 1e-12);
        assert!((g.values()[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn dominant_logit_does_not_overflow() {
        let (loss, g) = softmax_cross_entropy(&Tensor::vector(vec![1000.0, 0.0]), 0).unwrap();
        assert!(loss.abs() < 1e-12);
        assert!(g.is_finite());
    }

    #[test]
    fn three_class_direct_evaluation() {
        let (loss, _) = softmax_cross_entropy(&Tensor::vector(vec![1.0, 2.0, 3.0]), 2).unwrap();
        let expected = (1f64.exp() + 2f64.exp() + 3f64.exp()).ln() - 3.0;
        assert!((loss - expected).abs() < 1e-12);
        assert!((loss - 0.4076).abs() < 1e-4);
    }

    #[test]
    fn label_out_of_range() {
        assert!(matches!(
            softmax_cross_entropy(&Tensor::vector(vec![0.0, 1.0]), 2),
            Err(SimError::LabelRange { label: 2, classes: 2 })
        ));
    }

    #[test]
    fn batch_is_mean_of_rows() {
        let logits = Tensor::matrix(&[&[0.0, 0.0], &[1.0, 3.0]]).unwrap();
        let (loss, g) = softmax_cross_entropy_batch(&logits, &[0, 1]).unwrap();
        let a = softmax_cross_entropy(&Tensor::vector(vec![0.0, 0.0]), 0).unwrap();
        let b = softmax_cross_entropy(&Tensor::vector(vec![1.0, 3.0]), 1).unwrap();
        assert!((loss - (a.0 + b.0) / 2.0).abs() < 1e-15);
        assert!((g.values()[3] - b.1.values()[1] / 2.0).abs() < 1e-15);
    }
}
