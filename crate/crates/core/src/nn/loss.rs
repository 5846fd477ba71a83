use super::layers::softmax;
use super::Tensor;
use crate::error::{Error, Result};
use crate::Scalar;

/// Clamp for the argument of the logarithm in the cross-entropy.
pub const CE_EPS: f64 = 1e-12;

/// `-sum_i sum_j p_ij log max(q_ij, eps)`, summed (not averaged) over the
/// batch. `targets` must hold one-hot rows.
pub fn cross_entropy<T: Scalar>(pred: &Tensor<T>, targets: &Tensor<T>) -> Result<T> {
    if pred.shape() != targets.shape() || pred.shape().len() != 2 {
        return Err(Error::shape(format!("cross_entropy: {:?} vs {:?}", pred.shape(), targets.shape())));
    }
    let m = pred.shape()[1];
    let eps = T::lit(CE_EPS);
    let mut total = T::zero();
    for (q, p) in pred.data().chunks(m).zip(targets.data().chunks(m)) {
        let ones = p.iter().filter(|&&v| v == T::one()).count();
        let zeros = p.iter().filter(|&&v| v == T::zero()).count();
        if ones != 1 || zeros != m - 1 {
            return Err(Error::domain("cross_entropy target row is not one-hot"));
        }
        for (&qv, &pv) in q.iter().zip(p) {
            if pv > T::zero() {
                total -= pv * qv.max(eps).ln();
            }
        }
    }
    Ok(total)
}

/// Fused softmax + cross-entropy for integer labels. Returns the summed
/// loss and its gradient with respect to the logits, `softmax - onehot`.
pub fn softmax_cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>)> {
    let [n, m] = *logits.shape() else {
        return Err(Error::shape(format!("logits must be [N, M], got {:?}", logits.shape())));
    };
    if labels.len() != n {
        return Err(Error::shape(format!("{} labels for {n} rows", labels.len())));
    }
    let eps = T::lit(CE_EPS);
    let mut loss = T::zero();
    let mut grad = Vec::with_capacity(n * m);
    for (row, &label) in logits.data().chunks(m).zip(labels) {
        if label >= m {
            return Err(Error::domain(format!("label {label} out of range for {m} classes")));
        }
        let p = softmax(row)?;
        loss -= p[label].max(eps).ln();
        grad.extend(p.iter().enumerate().map(|(j, &v)| if j == label { v - T::one() } else { v }));
    }
    Ok((loss, Tensor::from_vec(vec![n, m], grad)?))
}

pub fn one_hot<T: Scalar>(labels: &[usize], m: usize) -> Tensor<T> {
    let mut t = Tensor::zeros(vec![labels.len(), m]);
    for (i, &l) in labels.iter().enumerate() {
        t.data_mut()[i * m + l] = T::one();
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_prediction_zero_loss() {
        let t = one_hot::<f64>(&[2], 4);
        assert_eq!(cross_entropy(&t, &t).unwrap(), 0.0);
    }

    #[test]
    fn uniform_over_39() {
        let pred = Tensor::filled(vec![1, 39], 1.0f64 / 39.0);
        let l = cross_entropy(&pred, &one_hot(&[5], 39)).unwrap();
        assert!((l - 39f64.ln()).abs() < 1e-12);
        assert!((l - 3.66356).abs() < 1e-5);
    }

    #[test]
    fn batch_sums() {
        let pred = Tensor::from_vec(vec![1, 3], vec![0.2, 0.5, 0.3f64]).unwrap();
        let single = cross_entropy(&pred, &one_hot(&[1], 3)).unwrap();
        let pred2 = Tensor::from_vec(vec![2, 3], vec![0.2, 0.5, 0.3, 0.2, 0.5, 0.3f64]).unwrap();
        let double = cross_entropy(&pred2, &one_hot(&[1, 1], 3)).unwrap();
        assert!((double - 2.0 * single).abs() < 1e-15);
    }

    #[test]
    fn zero_probability_clamped() {
        let pred = Tensor::from_vec(vec![1, 2], vec![1.0, 0.0f64]).unwrap();
        let l = cross_entropy(&pred, &one_hot(&[1], 2)).unwrap();
        assert!(l.is_finite());
        assert!((l + CE_EPS.ln()).abs() < 1e-9);
    }

    #[test]
    fn rejects_non_one_hot() {
        let pred = Tensor::filled(vec![1, 2], 0.5f64);
        let bad = Tensor::filled(vec![1, 2], 0.5f64);
        assert!(cross_entropy(&pred, &bad).is_err());
    }

    #[test]
    fn fused_gradient_is_p_minus_onehot() {
        let logits = Tensor::from_vec(vec![1, 3], vec![0.1, -0.4, 2.0f64]).unwrap();
        let (_, g) = softmax_cross_entropy(&logits, &[0]).unwrap();
        let p = softmax(logits.data()).unwrap();
        assert!((g.data()[0] - (p[0] - 1.0)).abs() < 1e-15);
        assert!((g.data()[2] - p[2]).abs() < 1e-15);
    }
}
