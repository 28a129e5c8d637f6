use super::{NnError, Tensor};

const PROB_FLOOR: f64 = 1e-12;
const SIMPLEX_TOL: f64 = 1e-9;

/// A scalar loss together with its gradient w.r.t. the prediction it was
/// computed from.
#[derive(Debug, Clone)]
pub struct Loss {
    value: f64,
    grad: Tensor,
}

impl Loss {
    pub fn new(value: f64, grad: Tensor) -> Self {
        Loss { value, grad }
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn grad(&self) -> &Tensor {
        &self.grad
    }
}

/// Mean over the batch of the squared l2 distance between samples:
/// `(1/n) Σᵢ ‖predᵢ − targetᵢ‖²`.
pub fn l2_recon_loss(pred: &Tensor, target: &Tensor) -> Result<Loss, NnError> {
    if pred.shape() != target.shape() {
        return Err(NnError::ShapeMismatch {
            context: "l2 reconstruction loss".into(),
            expected: target.shape().to_vec(),
            actual: pred.shape().to_vec(),
        });
    }
    let n = pred.batch_len() as f64;
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(pred.len());
    for (p, t) in pred.data().iter().zip(target.data()) {
        let d = p - t;
        value += d * d;
        grad.push(2.0 * d / n);
    }
    Ok(Loss { value: value / n, grad: Tensor::from_parts(pred.shape().to_vec(), grad) })
}

fn check_simplex(p: &[f64]) -> Result<(), NnError> {
    if p.iter().any(|&v| !(v >= 0.0)) {
        return Err(NnError::InvalidProbabilities("negative or NaN entry".into()));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(NnError::InvalidProbabilities(format!("entries sum to {sum}")));
    }
    Ok(())
}

/// `−ln p[class]` with the probability floored at 1e-12.
pub fn cross_entropy(probabilities: &[f64], class: usize) -> Result<f64, NnError> {
    if class >= probabilities.len() {
        return Err(NnError::ClassOutOfRange { class, classes: probabilities.len() });
    }
    check_simplex(probabilities)?;
    Ok(-probabilities[class].max(PROB_FLOOR).ln())
}

/// Batch-mean cross-entropy of a `(N, C)` probability tensor.
pub fn cross_entropy_batch(probs: &Tensor, labels: &[usize]) -> Result<Loss, NnError> {
    if probs.shape().len() != 2 || probs.batch_len() != labels.len() {
        return Err(NnError::ShapeMismatch {
            context: "cross-entropy".into(),
            expected: vec![labels.len(), probs.shape().last().copied().unwrap_or(0)],
            actual: probs.shape().to_vec(),
        });
    }
    let n = labels.len() as f64;
    let classes = probs.shape()[1];
    let mut value = 0.0;
    let mut grad = vec![0.0; probs.len()];
    for (i, &y) in labels.iter().enumerate() {
        let row = probs.sample(i);
        value += cross_entropy(row, y)?;
        let p = row[y];
        if p > PROB_FLOOR {
            grad[i * classes + y] = -1.0 / (p * n);
        }
    }
    Ok(Loss { value: value / n, grad: Tensor::from_parts(probs.shape().to_vec(), grad) })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor {
        Tensor::from_slice(shape, v).unwrap()
    }

    #[test]
    fn l2_loss_examples() {
        let a = t(&[1, 2], &[1., 1.]);
        assert_eq!(l2_recon_loss(&a, &a).unwrap().value(), 0.0);
        assert_eq!(l2_recon_loss(&a, &t(&[1, 2], &[0., 0.])).unwrap().value(), 2.0);
        let pred = t(&[2, 2], &[1., 0., 0., 0.]);
        let target = t(&[2, 2], &[0., 0., 0., 2.]);
        assert_eq!(l2_recon_loss(&pred, &target).unwrap().value(), 2.5);
        assert!(l2_recon_loss(&pred, &a).is_err());
    }

    #[test]
    fn cross_entropy_examples() {
        assert!((cross_entropy(&[0.5, 0.5], 0).unwrap() - 0.693147).abs() < 1e-6);
        assert_eq!(cross_entropy(&[1.0, 0.0], 0).unwrap(), 0.0);
        assert!((cross_entropy(&[0.2, 0.8], 0).unwrap() - 1.609438).abs() < 1e-6);
        assert!(matches!(cross_entropy(&[0.5, 0.5], 2), Err(NnError::ClassOutOfRange { .. })));
        assert!(cross_entropy(&[0.5, 0.6], 0).is_err());
    }

    #[test]
    fn saturated_probability_is_floored() {
        let v = cross_entropy(&[1.0, 0.0], 1).unwrap();
        assert!((v - 1e-12f64.ln().abs()).abs() < 1e-9);
    }
}
